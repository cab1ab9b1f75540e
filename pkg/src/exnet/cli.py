"""Command-line lifecycle for EXnet: prepare, train, eval, predict, serve.

One executable named ``exnet`` with five subcommands. Configuration merges
three layers, later wins: built-in defaults, a JSON config file given with
--config, explicit flags. The effective merged view is echoed to the run
directory as ``run_config.json`` so every artifact records how it was made.

Exit codes: 0 ok, 2 bad input or validation, 3 numeric failure during
training, 4 artifact incompatibility (corrupt or mismatched checkpoint).
No subcommand writes outside its --out directory.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as d
from .checkpoint import load_checkpoint
from .errors import ArtifactError, InsufficientSupportError, NumericsError, ValidationError
from .model import PRESETS, ModelConfig, init_model
from .service import InferenceService, load_service, make_server
from .text import Vocab, build_vocab
from .training import EvalReport, TrainConfig, evaluate, render_table, train, write_trace

# Keys a --config file may set, with built-in defaults. Model dims default
# from the preset at merge time, so they appear here as None.
_MODEL_KEYS = {
    "d_model": None,
    "n_layers": None,
    "n_heads": None,
    "max_len": None,
    "ff_mult": None,
    "head_hidden": None,
    "dropout": None,
    "proj_dropout": None,
    "pooling": None,
}
_TRAIN_KEYS = {
    "steps": 500,
    "batch_size": 8,
    "lr": 2e-5,
    "weight_decay": 0.01,
    "k_min": 2,
    "k_max": 8,
    "checkpoint_every": 0,
    "log_every": 50,
    "eval_every": 0,
    "warmup_steps": 0,
    "early_stop_patience": 0,
    "grad_clip": 0.0,
}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return cfg


def _merge(args: argparse.Namespace, file_cfg: dict, key: str, default):
    """Flag beats file beats default. Flags parse with default None so an
    unset flag is distinguishable from an explicit value."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_cfg:
        return file_cfg[key]
    return default


def _model_config(args, file_cfg, vocab_size: int) -> tuple[ModelConfig, str]:
    """Resolve preset plus overrides into a ModelConfig.

    Returns the config and the preset tag recorded in artifacts: the preset
    name when untouched, "custom" once any dimension was overridden.
    """
    preset = _merge(args, file_cfg, "preset", "s")
    if preset not in PRESETS:
        raise ValidationError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    base = dict(PRESETS[preset])
    fields = {}
    touched = False
    for key in _MODEL_KEYS:
        val = _merge(args, file_cfg, key, None)
        if val is not None:
            fields[key] = val
            if base.get(key) != val:
                touched = True
    merged = {**base, **fields}
    cfg = ModelConfig(vocab_size=vocab_size, **merged)
    return cfg, ("custom" if touched else preset)


def _train_config(args, file_cfg, seed: int) -> TrainConfig:
    kw = {key: _merge(args, file_cfg, key, dflt) for key, dflt in _TRAIN_KEYS.items()}
    return TrainConfig(seed=seed, **kw)


def _parse_k_list(spec) -> list[int]:
    """Accepts "2,4,8" from a flag or [2, 4, 8] from a config file."""
    try:
        if isinstance(spec, str):
            ks = sorted({int(part) for part in spec.split(",") if part.strip()})
        else:
            ks = sorted({int(k) for k in spec})
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad K list {spec!r}; expected comma-separated integers") from exc
    if not ks or any(k < 1 for k in ks):
        raise ValidationError(f"bad K list {spec!r}; every K must be >= 1")
    return ks


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_run_config(out: Path, args, payload: dict) -> None:
    doc = {"subcommand": args.cmd, **payload}
    (out / "run_config.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ------------------------------------------------------------- subcommands


def cmd_prepare(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = _merge(args, file_cfg, "seed", 0)
    ks = _parse_k_list(_merge(args, file_cfg, "k", "2,4,8"))
    max_len = _merge(args, file_cfg, "max_len", 64)

    # Validate the input fully before the first write so a bad path or a
    # malformed record leaves no partial artifacts behind.
    ds = d.load_jsonl(args.data)
    vocab = build_vocab([text for text, _ in ds.records] + ds.label_set)
    instances = d.binarize(ds, seed=seed)
    pool = d.build_support_pool(ds)
    frozen = {k: d.frozen_support_sets(pool, ds.label_set, k, seed) for k in ks}

    out = _out_dir(args)
    d.save_jsonl(ds, out / "records.jsonl")
    vocab.save(out / "vocab.txt")
    with (out / "instances.jsonl").open("w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(
                json.dumps(
                    {"text": inst.text, "label": inst.label, "answer": inst.answer},
                    sort_keys=True,
                )
                + "\n"
            )
    stats_by_k = {}
    for k in ks:
        (out / f"supports_k{k}.json").write_text(
            json.dumps({lb: list(txts) for lb, txts in frozen[k].items()}, indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
        episodes, stats = d.make_eval_episodes(ds, ds, k, vocab, max_len, seed)
        d.dump_episodes(out / f"episodes_k{k}.jsonl", episodes)
        stats_by_k[k] = stats
    counts = {}
    for _, label in ds.records:
        counts[label] = counts.get(label, 0) + 1
    (out / "dataset.json").write_text(
        json.dumps(
            {
                "name": ds.name,
                "n_records": len(ds.records),
                "labels": counts,
                "k": ks,
                "seed": seed,
                "max_len": max_len,
                "vocab_sha256": vocab.content_hash(),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    _echo_run_config(
        out,
        args,
        {"data": str(args.data), "seed": seed, "k": ks, "max_len": max_len, "out": str(out)},
    )
    yes = sum(1 for i in instances if i.answer == "yes")
    print(f"dataset {ds.name}: {len(ds.records)} records, {len(counts)} labels")
    for label in sorted(counts):
        print(f"  {label}: {counts[label]} texts")
    print(f"instances: {len(instances)} ({yes} yes / {len(instances) - yes} no)")
    for k in ks:
        st = stats_by_k[k]
        print(
            f"eval K={k}: {st.n_episodes} episodes, "
            f"{st.dropped_collisions} collision drops, {st.truncated_prompts} truncated"
        )
    return 0


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    seed = _merge(args, file_cfg, "seed", 0)
    art = Path(args.artifacts)
    for needed in ("records.jsonl", "instances.jsonl", "vocab.txt"):
        if not (art / needed).is_file():
            raise ValidationError(f"prepared artifact missing: {art / needed}")
    vocab = Vocab.load(art / "vocab.txt")
    ds = d.load_jsonl(art / "records.jsonl")
    pool = d.build_support_pool(ds)
    instances = _load_instances(art / "instances.jsonl")
    tc = _train_config(args, file_cfg, seed)

    start_step = 0
    if args.resume is not None:
        model, meta = load_checkpoint(args.resume, expected_vocab_hash=vocab.content_hash())
        start_step = int(meta["manifest"].get("extra", {}).get("step", 0))
        preset_tag = meta["manifest"].get("extra", {}).get("preset", "custom")
    else:
        cfg, preset_tag = _model_config(args, file_cfg, vocab.size)
        model = init_model(cfg, seed=seed)

    out = _out_dir(args)
    _echo_run_config(
        out,
        args,
        {
            "artifacts": str(art),
            "seed": seed,
            "preset": preset_tag,
            "model": model.cfg.to_dict(),
            "train": tc.to_dict(),
            "resume": args.resume,
            "out": str(out),
        },
    )
    eval_episodes = None
    if tc.eval_every:
        prepared = sorted(art.glob("episodes_k*.jsonl"))
        if not prepared:
            raise ValidationError(f"--eval-every needs prepared eval episodes in {art}")
        # largest prepared K, capped so mid-run scoring stays cheap
        chosen = max(prepared, key=lambda p: int(p.stem.split("_k")[1]))
        eval_episodes = d.load_episodes(chosen, vocab, model.cfg.max_len)[:256]

    episode_rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 1, start_step]))
    stream = d.sampled_episodes(
        instances,
        pool,
        (tc.k_min, tc.k_max),
        vocab,
        model.cfg.max_len,
        episode_rng,
        tc.batch_size,
    )
    result = train(
        model,
        stream,
        tc,
        vocab=vocab,
        out_dir=out,
        start_step=start_step,
        log=print,
        extra={"preset": preset_tag, "dataset": ds.name, "train_config": tc.to_dict()},
        eval_episodes=eval_episodes,
    )
    write_trace(out / "trace.csv", result.trace)
    print(f"trained {result.final_step - start_step} steps (final step {result.final_step})")
    print(f"final loss {result.trace[-1][1]:.4f}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _load_instances(path: Path) -> list[d.BinaryInstance]:
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if rec["answer"] not in ("yes", "no"):
                    raise ValueError(f"answer must be yes or no, got {rec['answer']!r}")
                out.append(
                    d.BinaryInstance(text=rec["text"], label=rec["label"], answer=rec["answer"])
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationError(f"{path} line {lineno}: bad instance record: {exc}") from exc
    if not out:
        raise ValidationError(f"{path} holds no instances")
    return out


def cmd_eval(args) -> int:
    file_cfg = _load_config_file(args.config)
    art = Path(args.artifacts)
    meta_path = art / "dataset.json"
    if not meta_path.is_file():
        raise ValidationError(f"prepared artifact missing: {meta_path}")
    ds_meta = json.loads(meta_path.read_text(encoding="utf-8"))
    ks = _parse_k_list(args.k) if args.k is not None else list(ds_meta["k"])
    vocab = Vocab.load(art / "vocab.txt")
    model, meta = load_checkpoint(args.checkpoint, expected_vocab_hash=vocab.content_hash())
    model_id = meta["model_id"]
    # Checkpoint mtime rather than wall clock: rerunning eval on the same
    # artifacts must produce byte-identical JSON.
    stamp = datetime.datetime.fromtimestamp(
        os.path.getmtime(args.checkpoint), tz=datetime.timezone.utc
    ).isoformat()
    report = EvalReport(
        dataset=ds_meta["name"], model_id=model_id, seed=int(ds_meta["seed"]), timestamp=stamp
    )
    for k in ks:
        ep_path = art / f"episodes_k{k}.jsonl"
        if not ep_path.is_file():
            raise ValidationError(f"no eval episodes for K={k}: {ep_path}")
        episodes = d.load_episodes(ep_path, vocab, model.cfg.max_len)
        report.entries.append(evaluate(model, episodes))
    out = _out_dir(args)
    (out / "eval_report.json").write_text(report.to_json(), encoding="utf-8")
    _echo_run_config(
        out,
        args,
        {
            "artifacts": str(art),
            "checkpoint": str(args.checkpoint),
            "k": ks,
            "out": str(out),
        },
    )
    print(render_table([report]))
    print(f"report: {out / 'eval_report.json'}")
    return 0


def cmd_predict(args) -> int:
    vocab = Vocab.load(args.vocab)
    model, meta = load_checkpoint(args.checkpoint, expected_vocab_hash=vocab.content_hash())
    preset = meta["manifest"].get("extra", {}).get("preset", "custom")
    svc = InferenceService(model=model, vocab=vocab, model_id=meta["model_id"], preset=preset)
    status, body = svc.handle_predict(
        {"label": args.label, "support": args.support, "text": args.text}
    )
    if status != 200:
        raise ValidationError(f"{body['error']['field']}: {body['error']['message']}")
    print(
        json.dumps(
            {"probability": body["probability"], "answer": body["answer"], "k": body["k"]}
        )
    )
    return 0


def cmd_serve(args) -> int:
    svc = load_service(args.checkpoint, args.vocab)
    server = make_server(svc, host=args.host, port=args.port)
    host, port = server.server_address[:2]
    print(f"serving exnet model {svc.model_id[:12]} on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# ------------------------------------------------------------------ parser


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    common.add_argument("--out", default="exnet_out", help="output directory (default exnet_out)")
    common.add_argument("--preset", choices=sorted(PRESETS), default=None, help="model preset")
    for key in _MODEL_KEYS:
        flag = "--" + key.replace("_", "-")
        if key == "pooling":
            common.add_argument(flag, choices=["cls", "mean"], default=None)
        elif key in ("dropout", "proj_dropout"):
            common.add_argument(flag, type=float, default=None)
        else:
            common.add_argument(flag, type=int, default=None)

    parser = argparse.ArgumentParser(
        prog="exnet",
        description="few-shot yes/no text classification over support sets",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("prepare", parents=[common], help="build training/eval artifacts")
    p.add_argument("--data", required=True, help="input JSONL with {text, label} records")
    p.add_argument("--k", default=None, help="comma-separated eval K list (default 2,4,8)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train a model on prepared artifacts")
    p.add_argument("--artifacts", required=True, help="directory written by prepare")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--k-min", type=int, default=None)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--log-every", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--warmup-steps", type=int, default=None)
    p.add_argument("--early-stop-patience", type=int, default=None)
    p.add_argument("--grad-clip", type=float, default=None, help="max global grad norm; 0 disables")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="frozen-support evaluation sweep")
    p.add_argument("--artifacts", required=True, help="directory written by prepare")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", default=None, help="subset of prepared K values")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="one prediction to stdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--label", required=True)
    p.add_argument(
        "--support",
        action="append",
        required=True,
        help="support text for the label; repeat for K > 1",
    )
    p.add_argument("--text", required=True, help="query text")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("serve", parents=[common], help="HTTP inference service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="0.0.0.0")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, InsufficientSupportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
