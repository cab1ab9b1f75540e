"""Datasets and episode construction.

A multi-class corpus (text, label) is converted once into balanced binary
instances: every record yields one yes-instance under its gold label and one
no-instance under a uniformly drawn wrong label. Episodes pair one binary
instance (the query) with K support texts that are true positives of the
queried label; supports are rendered through the same template as the query,
with the query's label, whether the target is yes or no.

Training episodes draw fresh supports per episode. Evaluation episodes reuse
one frozen support set per label, a pure function of (label, seed, K), taken
from a pool split that never overlaps the query split; queries that collide
with their frozen supports are dropped and counted.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InsufficientSupportError, ValidationError
from .text import TokenSequence, Vocab, encode_prompt, render_template


@dataclass
class MultiClassDataset:
    name: str
    records: list[tuple[str, str]]  # (text, label)

    @property
    def label_set(self) -> list[str]:
        return sorted({label for _, label in self.records})


@dataclass
class BinaryInstance:
    text: str
    label: str  # the label the template asks about
    answer: str  # "yes" | "no"

    @property
    def target(self) -> float:
        return 1.0 if self.answer == "yes" else 0.0


@dataclass
class Episode:
    query: TokenSequence
    supports: list[TokenSequence]
    k: int
    target: float
    label: str
    query_text: str
    support_texts: list[str]


@dataclass
class EpisodeBuildStats:
    n_episodes: int = 0
    dropped_collisions: int = 0
    truncated_prompts: int = 0


# ---------------------------------------------------------------- ingestion


def load_jsonl(path: str | Path, name: str | None = None) -> MultiClassDataset:
    """One json object per line with string fields ``text`` and ``label``.
    Malformed lines are reported with their 1-based line number."""
    path = Path(path)
    records: list[tuple[str, str]] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path.name}:{lineno}: invalid json ({e.msg})") from None
            if not isinstance(obj, dict) or "text" not in obj or "label" not in obj:
                raise ValidationError(
                    f"{path.name}:{lineno}: record needs 'text' and 'label' fields"
                )
            text, label = obj["text"], obj["label"]
            if not isinstance(text, str) or not isinstance(label, str):
                raise ValidationError(
                    f"{path.name}:{lineno}: 'text' and 'label' must be strings"
                )
            if not text.strip() or not label.strip():
                raise ValidationError(
                    f"{path.name}:{lineno}: 'text' and 'label' must be non-empty"
                )
            records.append((text, label))
    if not records:
        raise ValidationError(f"{path.name}: no records")
    return MultiClassDataset(name=name or path.stem, records=records)


def save_jsonl(ds: MultiClassDataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for text, label in ds.records:
            fh.write(json.dumps({"text": text, "label": label}) + "\n")


# ---------------------------------------------------------------- binarize


def binarize(ds: MultiClassDataset, seed: int) -> list[BinaryInstance]:
    """Two instances per record, in record order: (gold, yes) then
    (wrong, no) with the wrong label uniform over the other labels. The
    negative draw is fixed by the seed, so a prepared dataset binarizes the
    same way every time."""
    labels = ds.label_set
    if len(labels) < 2:
        raise ValidationError(
            f"binarize needs at least 2 labels, dataset {ds.name!r} has {len(labels)}"
        )
    rng = np.random.default_rng(seed)
    out: list[BinaryInstance] = []
    for text, gold in ds.records:
        others = [l for l in labels if l != gold]
        wrong = others[int(rng.integers(len(others)))]
        out.append(BinaryInstance(text=text, label=gold, answer="yes"))
        out.append(BinaryInstance(text=text, label=wrong, answer="no"))
    return out


# ---------------------------------------------------------------- supports


@dataclass
class SupportPool:
    """Per-label positive texts, deduplicated, first occurrence kept."""

    by_label: dict[str, list[str]] = field(default_factory=dict)

    def candidates(self, label: str, exclude_text: str | None = None) -> list[str]:
        texts = self.by_label.get(label, [])
        if exclude_text is None:
            return list(texts)
        return [t for t in texts if t != exclude_text]

    def labels(self) -> list[str]:
        return sorted(self.by_label)


def build_support_pool(ds: MultiClassDataset) -> SupportPool:
    by_label: dict[str, list[str]] = {}
    seen: dict[str, set[str]] = {}
    for text, label in ds.records:
        if text not in seen.setdefault(label, set()):
            seen[label].add(text)
            by_label.setdefault(label, []).append(text)
    return SupportPool(by_label=by_label)


def sample_supports(
    pool: SupportPool,
    label: str,
    k: int,
    rng: np.random.Generator,
    exclude_text: str | None = None,
) -> list[str]:
    """k distinct support texts, uniform without replacement."""
    eligible = pool.candidates(label, exclude_text)
    if k < 1:
        raise ValidationError(f"k must be at least 1, got {k}")
    if len(eligible) < k:
        raise InsufficientSupportError(
            f"label {label!r} has {len(eligible)} eligible supports, need {k}"
        )
    idx = rng.choice(len(eligible), size=k, replace=False)
    return [eligible[int(i)] for i in idx]


def _encode_episode(
    instance: BinaryInstance,
    support_texts: list[str],
    vocab: Vocab,
    max_len: int,
) -> Episode:
    query = encode_prompt(vocab, render_template(instance.label, instance.text), max_len)
    supports = [
        encode_prompt(vocab, render_template(instance.label, s), max_len)
        for s in support_texts
    ]
    return Episode(
        query=query,
        supports=supports,
        k=len(supports),
        target=instance.target,
        label=instance.label,
        query_text=instance.text,
        support_texts=list(support_texts),
    )


def make_training_episode(
    pool: SupportPool,
    instance: BinaryInstance,
    k: int,
    vocab: Vocab,
    max_len: int,
    rng: np.random.Generator,
) -> Episode:
    """Fresh supports for one query; the query text itself is never eligible.
    Raises InsufficientSupportError when the pool cannot cover k."""
    texts = sample_supports(pool, instance.label, k, rng, exclude_text=instance.text)
    return _encode_episode(instance, texts, vocab, max_len)


def sample_training_batch(
    instances: Sequence[BinaryInstance],
    pool: SupportPool,
    k_range: tuple[int, int],
    vocab: Vocab,
    max_len: int,
    rng: np.random.Generator,
    batch_size: int,
    stats: EpisodeBuildStats | None = None,
) -> list[Episode]:
    """Draw a batch of training episodes. K is uniform over k_range per
    episode; when a pool runs short the episode falls back to the largest
    feasible K, and instances with no eligible support at all are skipped."""
    if not instances:
        raise ValidationError("cannot sample from an empty instance list")
    k_lo, k_hi = k_range
    if not (1 <= k_lo <= k_hi):
        raise ValidationError(f"invalid K range {k_range}")
    batch: list[Episode] = []
    guard = 0
    while len(batch) < batch_size:
        guard += 1
        if guard > batch_size * 20:
            raise InsufficientSupportError(
                "support pools too shallow to assemble a training batch"
            )
        instance = instances[int(rng.integers(len(instances)))]
        k = int(rng.integers(k_lo, k_hi + 1))
        eligible = len(pool.candidates(instance.label, exclude_text=instance.text))
        if eligible < 1:
            continue
        episode = make_training_episode(
            pool, instance, min(k, eligible), vocab, max_len, rng
        )
        if stats is not None:
            stats.n_episodes += 1
            stats.truncated_prompts += episode.query.truncated + sum(
                s.truncated for s in episode.supports
            )
        batch.append(episode)
    return batch


def sampled_episodes(
    instances: Sequence[BinaryInstance],
    pool: SupportPool,
    k_range: tuple[int, int],
    vocab: Vocab,
    max_len: int,
    rng: np.random.Generator,
    batch_size: int,
    stats: EpisodeBuildStats | None = None,
) -> Iterator[Episode]:
    """Endless stream of freshly sampled training episodes.

    Thin generator over sample_training_batch; the training loop consumes
    it in batch_size chunks, so chunking here keeps the fallback logic
    (largest feasible K) applied per batch exactly as in direct sampling.
    """
    while True:
        yield from sample_training_batch(
            instances, pool, k_range, vocab, max_len, rng, batch_size, stats=stats
        )


# ---------------------------------------------------------------- evaluation


def _label_seed(seed: int, label: str, k: int) -> np.random.Generator:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return np.random.default_rng(
        np.random.SeedSequence([seed, k, int.from_bytes(digest[:8], "big")])
    )


def frozen_support_sets(
    pool: SupportPool, labels: Iterable[str], k: int, seed: int
) -> dict[str, list[str]]:
    """One fixed support set per label. Depends on (label, seed, K) only,
    never on iteration order or on the other labels."""
    out: dict[str, list[str]] = {}
    for label in sorted(set(labels)):
        eligible = pool.candidates(label)
        if len(eligible) < k:
            raise ValidationError(
                f"label {label!r} has only {len(eligible)} pool texts, need K={k}"
            )
        rng = _label_seed(seed, label, k)
        idx = rng.choice(len(eligible), size=k, replace=False)
        out[label] = [eligible[int(i)] for i in idx]
    return out


def make_eval_episodes(
    ds: MultiClassDataset,
    pool_source: MultiClassDataset,
    k: int,
    vocab: Vocab,
    max_len: int,
    seed: int,
) -> tuple[list[Episode], EpisodeBuildStats]:
    """Binarize ``ds`` and attach the frozen support set of each queried
    label, drawn from ``pool_source``. Queries equal to one of their own
    supports are dropped and counted."""
    instances = binarize(ds, seed)
    pool = build_support_pool(pool_source)
    labels = {i.label for i in instances}
    fixed = frozen_support_sets(pool, labels, k, seed)
    episodes: list[Episode] = []
    stats = EpisodeBuildStats()
    for instance in instances:
        supports = fixed[instance.label]
        if instance.text in supports:
            stats.dropped_collisions += 1
            continue
        episode = _encode_episode(instance, supports, vocab, max_len)
        stats.n_episodes += 1
        stats.truncated_prompts += episode.query.truncated + sum(
            s.truncated for s in episode.supports
        )
        episodes.append(episode)
    return episodes, stats


# ---------------------------------------------------------------- dump/load


def episode_dump_dict(ep: Episode) -> dict:
    return {
        "query_text": ep.query_text,
        "label": ep.label,
        "support_texts": list(ep.support_texts),
        "target": ep.target,
        "k": ep.k,
    }


def dump_episodes(path: str | Path, episodes: Iterable[Episode]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(json.dumps(episode_dump_dict(ep)) + "\n")


def load_episodes(path: str | Path, vocab: Vocab, max_len: int) -> list[Episode]:
    out: list[Episode] = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                instance = BinaryInstance(
                    text=obj["query_text"],
                    label=obj["label"],
                    answer="yes" if obj["target"] >= 0.5 else "no",
                )
                texts = list(obj["support_texts"])
            except (KeyError, TypeError):
                raise ValidationError(
                    f"{Path(path).name}:{lineno}: malformed episode record"
                ) from None
            out.append(_encode_episode(instance, texts, vocab, max_len))
    return out


# ---------------------------------------------------------------- splitting


def subset_by_labels(ds: MultiClassDataset, labels: Iterable[str]) -> MultiClassDataset:
    keep = set(labels)
    records = [(t, l) for t, l in ds.records if l in keep]
    return MultiClassDataset(name=ds.name, records=records)


def split_pool(
    ds: MultiClassDataset, seed: int, pool_fraction: float = 0.5
) -> tuple[MultiClassDataset, MultiClassDataset]:
    """Per-label split into (query part, pool part). The pool part feeds
    frozen support sets; the query part supplies evaluation queries."""
    if not 0.0 < pool_fraction < 1.0:
        raise ValidationError(f"pool_fraction must be in (0, 1), got {pool_fraction}")
    per_label: dict[str, list[str]] = {}
    for text, label in ds.records:
        per_label.setdefault(label, []).append(text)
    query: list[tuple[str, str]] = []
    pool: list[tuple[str, str]] = []
    for label in sorted(per_label):
        texts = per_label[label]
        rng = _label_seed(seed, label, 0)
        order = rng.permutation(len(texts))
        n_pool = max(1, int(round(len(texts) * pool_fraction)))
        n_pool = min(n_pool, len(texts) - 1) if len(texts) > 1 else n_pool
        chosen = set(int(i) for i in order[:n_pool])
        for i, text in enumerate(texts):
            (pool if i in chosen else query).append((text, label))
    return (
        MultiClassDataset(name=f"{ds.name}-query", records=query),
        MultiClassDataset(name=f"{ds.name}-pool", records=pool),
    )


# ---------------------------------------------------------------- synthetic

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]


def _pseudoword(index: int) -> str:
    n = len(_SYLLABLES)
    if index < n * n:
        return _SYLLABLES[index // n] + _SYLLABLES[index % n]
    index -= n * n
    a, rest = divmod(index, n * n)
    return _SYLLABLES[a] + _SYLLABLES[rest // n] + _SYLLABLES[rest % n]


def gen_synthetic_task(
    n_labels: int,
    vocab_per_label: int,
    shared_vocab: int,
    texts_per_label: int,
    text_len: int,
    noise_rate: float,
    seed: int,
    name: str | None = None,
    modes_per_label: int = 2,
) -> MultiClassDataset:
    """Separable-by-construction classification task.

    Every label owns a disjoint set of ``vocab_per_label`` signature words;
    its name is one of them. Each text draws ``text_len`` words, taking a
    shared-pool word with probability ``noise_rate`` and a signature word
    otherwise, so at noise 0 texts contain signature words only.

    Signature draws concentrate: each text picks one of ``modes_per_label``
    interleaved slices of its label's signature set and stays inside it, so
    texts of one label cluster into sub-topics. A matching query then agrees
    strongly with same-slice supports rather than mildly with all of them,
    which is the contrast a support-matching model feeds on. Slices beyond
    ``vocab_per_label`` collapse; ``modes_per_label=1`` disables clustering.
    """
    if n_labels < 2:
        raise ValidationError(f"need at least 2 labels, got {n_labels}")
    if min(vocab_per_label, texts_per_label, text_len) < 1:
        raise ValidationError("vocab_per_label, texts_per_label and text_len must be >= 1")
    if not 0.0 <= noise_rate < 1.0:
        raise ValidationError(f"noise_rate must be in [0, 1), got {noise_rate}")
    if noise_rate > 0.0 and shared_vocab < 1:
        raise ValidationError("a positive noise_rate needs a shared vocabulary")
    rng = np.random.default_rng(seed)
    total_words = n_labels * vocab_per_label + shared_vocab
    if total_words > len(_SYLLABLES) ** 2:
        raise ValidationError(
            f"task wants {total_words} distinct words, generator caps at {len(_SYLLABLES) ** 2}"
        )
    indices = rng.permutation(len(_SYLLABLES) ** 2)[:total_words]
    words = [_pseudoword(int(i)) for i in indices]
    signatures = [
        words[i * vocab_per_label : (i + 1) * vocab_per_label] for i in range(n_labels)
    ]
    shared = words[n_labels * vocab_per_label :]
    if modes_per_label < 1:
        raise ValidationError(f"modes_per_label must be >= 1, got {modes_per_label}")
    n_modes = min(modes_per_label, vocab_per_label)
    records: list[tuple[str, str]] = []
    labels = [sig[int(rng.integers(len(sig)))] for sig in signatures]
    for sig, label in zip(signatures, labels):
        slices = [sig[m::n_modes] for m in range(n_modes)]
        for _ in range(texts_per_label):
            pick = slices[int(rng.integers(n_modes))]
            tokens = []
            for _ in range(text_len):
                if noise_rate > 0.0 and rng.random() < noise_rate:
                    tokens.append(shared[int(rng.integers(len(shared)))])
                else:
                    tokens.append(pick[int(rng.integers(len(pick)))])
            records.append((" ".join(tokens), label))
    return MultiClassDataset(name=name or f"synthetic-{seed}", records=records)
