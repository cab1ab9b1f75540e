"""End-to-end lifecycle through the argparse entry point.

Every test calls main(argv) in process and inspects exit codes, stdout and
the files left behind. A micro model (d_model=8) keeps the train runs fast;
the shared pipeline fixture prepares and trains once per module.
"""

import json
import math

import numpy as np
import pytest

from exnet.checkpoint import load_checkpoint, save_checkpoint
from exnet.cli import main
from exnet.text import Vocab

LABELS = ("copper", "indigo", "sesame")


def write_dataset(path, texts_per_label=6):
    rows = []
    for label in LABELS:
        for i in range(texts_per_label):
            rows.append({"text": f"{label} thing number {i} speaks {label}", "label": label})
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


MICRO = [
    "--d-model", "8", "--n-layers", "1", "--n-heads", "1",
    "--max-len", "20", "--dropout", "0", "--proj-dropout", "0",
]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """data.jsonl -> prepared artifacts -> trained checkpoint, shared read-only."""
    root = tmp_path_factory.mktemp("cli")
    data = write_dataset(root / "data.jsonl")
    art = root / "prepared"
    rc = main(["prepare", "--data", str(data), "--out", str(art), "--k", "1,2"])
    assert rc == 0
    run = root / "run"
    rc = main(
        ["train", "--artifacts", str(art), "--out", str(run),
         "--steps", "3", "--batch-size", "4", "--lr", "1e-3",
         "--k-min", "1", "--k-max", "2", "--log-every", "0", *MICRO]
    )
    assert rc == 0
    return {"root": root, "data": data, "art": art, "run": run,
            "ckpt": run / "checkpoint.exnet"}


# ----------------------------------------------------------------- prepare


def test_prepare_writes_expected_artifacts(pipeline):
    art = pipeline["art"]
    for name in (
        "records.jsonl", "vocab.txt", "instances.jsonl", "dataset.json",
        "run_config.json", "supports_k1.json", "supports_k2.json",
        "episodes_k1.jsonl", "episodes_k2.jsonl",
    ):
        assert (art / name).is_file(), name


def test_prepare_prints_per_label_stats(pipeline, capsys):
    out2 = pipeline["root"] / "prepared_stats"
    rc = main(["prepare", "--data", str(pipeline["data"]), "--out", str(out2), "--k", "1,2"])
    captured = capsys.readouterr().out
    assert rc == 0
    for label in LABELS:
        assert f"{label}: 6 texts" in captured
    assert "18 yes / 18 no" in captured


def test_prepare_missing_input_exits_2_no_partial_outputs(tmp_path, capsys):
    out = tmp_path / "never"
    rc = main(["prepare", "--data", str(tmp_path / "absent.jsonl"), "--out", str(out)])
    assert rc == 2
    assert not out.exists()
    assert "error:" in capsys.readouterr().err


def test_prepare_k_beyond_pool_names_label(tmp_path, capsys):
    data = write_dataset(tmp_path / "d.jsonl", texts_per_label=5)
    out = tmp_path / "out"
    rc = main(["prepare", "--data", str(data), "--out", str(out), "--k", "8"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "'copper'" in err and "K=8" in err
    assert not out.exists()


def test_prepare_is_deterministic_per_seed(pipeline):
    a = pipeline["root"] / "det_a"
    b = pipeline["root"] / "det_b"
    for out in (a, b):
        assert main(["prepare", "--data", str(pipeline["data"]), "--out", str(out),
                     "--k", "1,2", "--seed", "3"]) == 0
    for name in ("records.jsonl", "vocab.txt", "instances.jsonl",
                 "supports_k2.json", "episodes_k2.jsonl", "dataset.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


# ------------------------------------------------------------------- train


def test_train_leaves_checkpoint_and_trace(pipeline):
    run = pipeline["run"]
    assert (run / "checkpoint.exnet").is_file()
    lines = (run / "trace.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "step,loss,lr"
    assert len(lines) == 1 + 3
    step, loss, lr = lines[1].split(",")
    assert step == "1" and float(lr) == 1e-3 and math.isfinite(float(loss))


def test_train_echoes_flag_over_config_file(pipeline, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lr": 5e-4, "steps": 3, "batch_size": 4,
                               "k_min": 1, "k_max": 2}), encoding="utf-8")
    run = tmp_path / "run"
    rc = main(["train", "--artifacts", str(pipeline["art"]), "--out", str(run),
               "--config", str(cfg), "--lr", "1e-3", *MICRO])
    assert rc == 0
    echoed = json.loads((run / "run_config.json").read_text(encoding="utf-8"))
    assert echoed["train"]["lr"] == 1e-3  # flag beat the file value


def test_train_is_deterministic(pipeline, tmp_path):
    runs = []
    for sub in ("r1", "r2"):
        run = tmp_path / sub
        rc = main(["train", "--artifacts", str(pipeline["art"]), "--out", str(run),
                   "--steps", "3", "--batch-size", "4", "--lr", "1e-3",
                   "--k-min", "1", "--k-max", "2", *MICRO])
        assert rc == 0
        runs.append(run)
    assert (runs[0] / "trace.csv").read_bytes() == (runs[1] / "trace.csv").read_bytes()
    assert (runs[0] / "checkpoint.exnet").read_bytes() == (runs[1] / "checkpoint.exnet").read_bytes()


def test_resume_continues_step_counter(pipeline, tmp_path, capsys):
    run = tmp_path / "resumed"
    rc = main(["train", "--artifacts", str(pipeline["art"]), "--out", str(run),
               "--resume", str(pipeline["ckpt"]),
               "--steps", "2", "--batch-size", "4", "--lr", "1e-3",
               "--k-min", "1", "--k-max", "2", *MICRO])
    assert rc == 0
    assert "final step 5" in capsys.readouterr().out
    rows = (run / "trace.csv").read_text(encoding="utf-8").splitlines()[1:]
    assert [r.split(",")[0] for r in rows] == ["4", "5"]
    _, meta = load_checkpoint(run / "checkpoint.exnet")
    assert meta["manifest"]["extra"]["step"] == 5


def test_train_nan_checkpoint_exits_3(pipeline, tmp_path, capsys):
    vocab = Vocab.load(pipeline["art"] / "vocab.txt")
    model, _ = load_checkpoint(pipeline["ckpt"])
    model.params["tok_emb"].data[:] = np.nan
    poisoned = tmp_path / "poisoned.exnet"
    save_checkpoint(poisoned, model, vocab.content_hash())
    rc = main(["train", "--artifacts", str(pipeline["art"]), "--out", str(tmp_path / "run"),
               "--resume", str(poisoned), "--steps", "2", "--batch-size", "4",
               "--k-min", "1", "--k-max", "2", *MICRO])
    assert rc == 3
    assert "non-finite loss" in capsys.readouterr().err


def test_train_missing_artifacts_exits_2(tmp_path, capsys):
    rc = main(["train", "--artifacts", str(tmp_path / "nowhere"),
               "--out", str(tmp_path / "run"), *MICRO])
    assert rc == 2
    assert "artifact missing" in capsys.readouterr().err


# -------------------------------------------------------------------- eval


def test_eval_writes_report_and_table(pipeline, tmp_path, capsys):
    out = tmp_path / "eval"
    rc = main(["eval", "--artifacts", str(pipeline["art"]),
               "--checkpoint", str(pipeline["ckpt"]), "--out", str(out)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "Dataset" in stdout and "F1" in stdout
    doc = json.loads((out / "eval_report.json").read_text(encoding="utf-8"))
    assert [e["k"] for e in doc["entries"]] == [1, 2]
    for entry in doc["entries"]:
        assert 0.0 <= entry["f1"] <= 1.0
        assert entry["n_episodes"] > 0


def test_eval_rerun_is_byte_identical(pipeline, tmp_path):
    outs = []
    for sub in ("e1", "e2"):
        out = tmp_path / sub
        assert main(["eval", "--artifacts", str(pipeline["art"]),
                     "--checkpoint", str(pipeline["ckpt"]), "--out", str(out)]) == 0
        outs.append(out / "eval_report.json")
    assert outs[0].read_bytes() == outs[1].read_bytes()


def test_eval_k_subset(pipeline, tmp_path):
    out = tmp_path / "eval"
    rc = main(["eval", "--artifacts", str(pipeline["art"]),
               "--checkpoint", str(pipeline["ckpt"]), "--out", str(out), "--k", "2"])
    assert rc == 0
    doc = json.loads((out / "eval_report.json").read_text(encoding="utf-8"))
    assert [e["k"] for e in doc["entries"]] == [2]


def test_eval_unprepared_k_exits_2(pipeline, tmp_path, capsys):
    rc = main(["eval", "--artifacts", str(pipeline["art"]),
               "--checkpoint", str(pipeline["ckpt"]),
               "--out", str(tmp_path / "eval"), "--k", "4"])
    assert rc == 2
    assert "no eval episodes for K=4" in capsys.readouterr().err


def test_eval_vocab_hash_mismatch_exits_4(pipeline, tmp_path, capsys):
    foreign = tmp_path / "foreign"
    rows = [{"text": f"zinc item {i}", "label": "zinc"} for i in range(4)]
    rows += [{"text": f"amber item {i}", "label": "amber"} for i in range(4)]
    data = tmp_path / "foreign.jsonl"
    with data.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    assert main(["prepare", "--data", str(data), "--out", str(foreign), "--k", "1"]) == 0
    rc = main(["eval", "--artifacts", str(foreign),
               "--checkpoint", str(pipeline["ckpt"]), "--out", str(tmp_path / "e")])
    assert rc == 4
    assert "different vocabulary" in capsys.readouterr().err


# ----------------------------------------------------------------- predict


def predict_stdout(pipeline, capsys, supports, text="copper thing number 0 speaks copper"):
    argv = ["predict", "--checkpoint", str(pipeline["ckpt"]),
            "--vocab", str(pipeline["art"] / "vocab.txt"), "--label", "copper",
            "--text", text]
    for s in supports:
        argv += ["--support", s]
    rc = main(argv)
    assert rc == 0
    return json.loads(capsys.readouterr().out.strip())


def test_predict_prints_exactly_contract_fields(pipeline, capsys):
    doc = predict_stdout(pipeline, capsys, ["copper thing number 1 speaks copper",
                                            "copper thing number 2 speaks copper"])
    assert set(doc) == {"probability", "answer", "k"}
    assert 0.0 < doc["probability"] < 1.0
    assert doc["answer"] == (doc["probability"] >= 0.5)
    assert doc["k"] == 2


def test_predict_support_order_does_not_matter(pipeline, capsys):
    sup = [f"copper thing number {i} speaks copper" for i in (1, 2, 3)]
    a = predict_stdout(pipeline, capsys, sup)
    b = predict_stdout(pipeline, capsys, list(reversed(sup)))
    assert abs(a["probability"] - b["probability"]) < 1e-6


def test_predict_accepts_k32(pipeline, capsys):
    sup = [f"copper sample {i} speaks copper" for i in range(32)]
    doc = predict_stdout(pipeline, capsys, sup)
    assert doc["k"] == 32
    assert 0.0 < doc["probability"] < 1.0


def test_predict_requires_support_flag(pipeline):
    with pytest.raises(SystemExit) as exc:
        main(["predict", "--checkpoint", str(pipeline["ckpt"]),
              "--vocab", str(pipeline["art"] / "vocab.txt"),
              "--label", "copper", "--text", "anything"])
    assert exc.value.code == 2


def test_predict_corrupt_checkpoint_exits_4(pipeline, tmp_path, capsys):
    bad = tmp_path / "bad.exnet"
    bad.write_bytes(b"junk")
    rc = main(["predict", "--checkpoint", str(bad),
               "--vocab", str(pipeline["art"] / "vocab.txt"),
               "--label", "copper", "--support", "x", "--text", "y"])
    assert rc == 4
    assert "not a checkpoint" in capsys.readouterr().err


# ------------------------------------------------------------------ config


def test_unknown_preset_value_rejected(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["prepare", "--data", str(tmp_path / "d.jsonl"), "--preset", "xl"])
    assert exc.value.code == 2


def test_config_file_must_be_json_object(pipeline, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]", encoding="utf-8")
    rc = main(["train", "--artifacts", str(pipeline["art"]),
               "--out", str(tmp_path / "run"), "--config", str(cfg), *MICRO])
    assert rc == 2
    assert "JSON object" in capsys.readouterr().err
