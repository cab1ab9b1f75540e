"""Loss, metrics, the training loop, and evaluation reports."""

from __future__ import annotations

import collections.abc as cabc
import json
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .data import Episode, MultiClassDataset, make_eval_episodes
from .errors import NumericsError, ValidationError
from .model import ExnetModel
from .optim import AdamW, clip_grad_norm
from .tensor import Tensor, add, clamp, mul, neg, no_grad, tlog, tmean
from .text import Vocab

_EPS = 1e-7


def bce_loss(p: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy. Probabilities are clamped to
    [1e-7, 1 - 1e-7] so a saturated sigmoid cannot produce infinities."""
    y = np.asarray(targets, dtype=p.data.dtype).reshape(p.data.shape)
    pc = clamp(p, _EPS, 1.0 - _EPS)
    term = add(mul(Tensor(y), tlog(pc)), mul(Tensor(1.0 - y), tlog(1.0 - pc)))
    return neg(tmean(term))


def confusion(pred: Sequence[int], gold: Sequence[int]) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) treating 1 as the positive class."""
    pred = np.asarray(pred)
    gold = np.asarray(gold)
    if pred.shape != gold.shape:
        raise ValidationError(f"length mismatch: {pred.shape} vs {gold.shape}")
    if pred.size == 0:
        raise ValidationError("empty prediction list")
    tp = int(np.sum((pred == 1) & (gold == 1)))
    fp = int(np.sum((pred == 1) & (gold == 0)))
    fn = int(np.sum((pred == 0) & (gold == 1)))
    tn = int(np.sum((pred == 0) & (gold == 0)))
    return tp, fp, fn, tn


def precision_recall_f1(pred: Sequence[int], gold: Sequence[int]) -> tuple[float, float, float]:
    """Positive-class scores; zero denominators score 0 by convention."""
    tp, fp, fn, _ = confusion(pred, gold)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return precision, recall, f1


def f1_score(pred: Sequence[int], gold: Sequence[int]) -> float:
    return precision_recall_f1(pred, gold)[2]


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    lr: float = 2e-5
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    k_min: int = 2
    k_max: int = 8
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    log_every: int = 0
    eval_every: int = 0  # 0: no mid-run evaluation
    warmup_steps: int = 0  # 0: constant lr from step one
    early_stop_patience: int = 0  # evals without F1 gain before halting; 0: off
    grad_clip: float = 0.0  # max global grad norm per step; 0: no clipping

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError(f"steps must be positive, got {self.steps}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr < 0:
            raise ValidationError(f"lr must be non-negative, got {self.lr}")
        if not 1 <= self.k_min <= self.k_max:
            raise ValidationError(f"bad K range [{self.k_min}, {self.k_max}]")
        for name in ("checkpoint_every", "log_every", "eval_every", "warmup_steps", "early_stop_patience"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.grad_clip < 0:
            raise ValidationError(f"grad_clip must be >= 0, got {self.grad_clip}")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainResult:
    trace: list[tuple[int, float, float]]  # (step, loss, lr)
    checkpoint_path: str | None
    final_step: int
    stopped_early: bool = False


def train(
    model: ExnetModel,
    episodes: Sequence[Episode] | Iterator[Episode],
    tc: TrainConfig,
    *,
    vocab: Vocab | None = None,
    out_dir: str | Path | None = None,
    start_step: int = 0,
    log=None,
    extra: dict | None = None,
    eval_episodes: Sequence[Episode] | None = None,
) -> TrainResult:
    """Consume an episode stream: per step take batch_size episodes, forward
    in train mode, mean BCE, one AdamW update.

    ``episodes`` is either a finite sequence, treated as a fixed set that
    batches are drawn from without replacement inside a step, or an
    iterator yielding fresh episodes (see data.sampled_episodes). Identical
    stream contents and seed give a bitwise-identical loss trace. On a
    non-finite loss or gradient the loop halts with the last scheduled
    checkpoint left on disk and raises NumericsError.

    With eval_every set and eval_episodes given, the model is scored
    mid-run at threshold 0.5; early_stop_patience then halts training after
    that many consecutive evaluations without an F1 improvement.
    """
    fixed: list[Episode] | None = None
    stream: Iterator[Episode] | None = None
    if isinstance(episodes, cabc.Sequence):
        fixed = list(episodes)
        if not fixed:
            raise ValidationError("empty episode stream")
    else:
        stream = iter(episodes)
    if out_dir is not None and vocab is None:
        raise ValidationError("checkpointing needs the vocabulary for its content hash")
    opt = AdamW(
        model.params,
        lr=tc.lr,
        betas=tc.betas,
        eps=tc.eps,
        weight_decay=tc.weight_decay,
    )
    pick_rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 1, start_step]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 2, start_step]))
    trace: list[tuple[int, float, float]] = []
    ckpt_path = Path(out_dir) / "checkpoint.exnet" if out_dir is not None else None

    def write_checkpoint(step: int) -> None:
        if ckpt_path is not None:
            meta = dict(extra) if extra else {}
            meta["step"] = step
            save_checkpoint(ckpt_path, model, vocab.content_hash(), extra=meta)

    best_f1 = -1.0
    flat_evals = 0
    stopped_early = False
    final_step = start_step
    for step in range(start_step + 1, start_step + tc.steps + 1):
        if fixed is not None:
            take = min(tc.batch_size, len(fixed))
            idx = pick_rng.choice(len(fixed), size=take, replace=False)
            batch = [fixed[int(i)] for i in idx]
        else:
            batch = list(islice(stream, tc.batch_size))
            if len(batch) < tc.batch_size:
                raise ValidationError(f"episode stream exhausted at step {step}")
        lr_t = tc.lr * min(1.0, step / tc.warmup_steps) if tc.warmup_steps else tc.lr
        opt.lr = lr_t
        targets = np.array([ep.target for ep in batch], dtype=model.dtype).reshape(-1, 1)
        p = model.forward_batch(batch, training=True, rng=dropout_rng)
        loss = bce_loss(p, targets)
        loss_val = float(loss.data.reshape(()))
        if not np.isfinite(loss_val):
            raise NumericsError(
                f"non-finite loss at step {step}; last checkpoint retained"
                + (f" at {ckpt_path}" if ckpt_path is not None else "")
            )
        opt.zero_grad()
        loss.backward()
        if tc.grad_clip:
            clip_grad_norm(model.params, tc.grad_clip)
        opt.step()
        loss.free_graph()  # reclaim the step's activations immediately
        trace.append((step, loss_val, lr_t))
        final_step = step
        if log is not None and tc.log_every and step % tc.log_every == 0:
            log(f"step {step} loss {loss_val:.4f}")
        if tc.checkpoint_every and step % tc.checkpoint_every == 0:
            write_checkpoint(step)
        if eval_episodes and tc.eval_every and step % tc.eval_every == 0:
            probs = predict_probs(model, eval_episodes)
            gold = np.array([int(ep.target) for ep in eval_episodes])
            _, _, f1 = precision_recall_f1((probs >= 0.5).astype(int), gold)
            if log is not None:
                log(f"step {step} eval_f1 {f1:.4f}")
            if tc.early_stop_patience:
                if f1 > best_f1:
                    best_f1 = f1
                    flat_evals = 0
                else:
                    flat_evals += 1
                    if flat_evals >= tc.early_stop_patience:
                        stopped_early = True
                        if log is not None:
                            log(f"stopping at step {step}: no F1 gain in {flat_evals} evals")
                        break
    write_checkpoint(final_step)
    return TrainResult(
        trace=trace,
        checkpoint_path=str(ckpt_path) if ckpt_path is not None else None,
        final_step=final_step,
        stopped_early=stopped_early,
    )


def write_trace(path: str | Path, trace: Sequence[tuple[int, float, float]]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("step,loss,lr\n")
        for step, loss, lr in trace:
            fh.write(f"{step},{loss:.8f},{lr:.8g}\n")


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalEntry:
    k: int
    n_episodes: int
    precision: float
    recall: float
    f1: float
    dropped_collisions: int = 0


@dataclass
class EvalReport:
    dataset: str
    model_id: str
    seed: int
    timestamp: str
    entries: list[EvalEntry] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "dataset": self.dataset,
            "model_id": self.model_id,
            "seed": self.seed,
            "timestamp": self.timestamp,
            "entries": [e.__dict__ for e in self.entries],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def render_table(reports: Sequence[EvalReport]) -> str:
    """Plain text, one row per dataset and K."""
    rows = [("Dataset", "K", "F1")]
    for rep in reports:
        for e in rep.entries:
            rows.append((rep.dataset, str(e.k), f"{e.f1:.4f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _check_fixed_supports(episodes: Sequence[Episode]) -> None:
    per_label: dict[str, tuple[str, ...]] = {}
    for ep in episodes:
        key = tuple(ep.support_texts)
        if per_label.setdefault(ep.label, key) != key:
            raise ValidationError(
                f"episodes for label {ep.label!r} carry differing support sets;"
                " evaluation expects one frozen set per label"
            )


def predict_probs(
    model: ExnetModel, episodes: Sequence[Episode], chunk: int = 16
) -> np.ndarray:
    """Eval-mode probabilities for a list of episodes."""
    probs = []
    with no_grad():
        for lo in range(0, len(episodes), chunk):
            p = model.forward_batch(episodes[lo : lo + chunk], training=False)
            probs.append(p.data.reshape(-1))
    return np.concatenate(probs)


def evaluate(
    model: ExnetModel,
    episodes: Sequence[Episode],
    threshold: float = 0.5,
    dropped_collisions: int = 0,
) -> EvalEntry:
    """Score one batch of fixed-support episodes that share a single K."""
    if not episodes:
        raise ValidationError("evaluate needs at least one episode")
    ks = {ep.k for ep in episodes}
    if len(ks) != 1:
        raise ValidationError(f"evaluate expects a single K, got {sorted(ks)}")
    _check_fixed_supports(episodes)
    probs = predict_probs(model, episodes)
    pred = (probs >= threshold).astype(int)
    gold = np.array([int(ep.target) for ep in episodes])
    precision, recall, f1 = precision_recall_f1(pred, gold)
    return EvalEntry(
        k=ks.pop(),
        n_episodes=len(episodes),
        precision=precision,
        recall=recall,
        f1=f1,
        dropped_collisions=dropped_collisions,
    )


def mean_bce(model: ExnetModel, episodes: Sequence[Episode]) -> float:
    """Eval-mode mean binary cross-entropy over episodes."""
    probs = predict_probs(model, episodes)
    y = np.array([ep.target for ep in episodes], dtype=np.float64)
    pc = np.clip(probs.astype(np.float64), _EPS, 1.0 - _EPS)
    return float(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).mean())


def evaluate_sweep(
    model: ExnetModel,
    query_ds: MultiClassDataset,
    pool_ds: MultiClassDataset,
    ks: Sequence[int],
    vocab: Vocab,
    seed: int,
    model_id: str,
    timestamp: str,
    threshold: float = 0.5,
) -> EvalReport:
    """Frozen-support evaluation across a K sweep, one entry per K."""
    report = EvalReport(
        dataset=query_ds.name, model_id=model_id, seed=seed, timestamp=timestamp
    )
    for k in sorted(set(int(k) for k in ks)):
        episodes, stats = make_eval_episodes(
            query_ds, pool_ds, k, vocab, model.cfg.max_len, seed
        )
        entry = evaluate(
            model, episodes, threshold, dropped_collisions=stats.dropped_collisions
        )
        report.entries.append(entry)
    return report
