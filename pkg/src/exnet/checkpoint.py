"""Named-tensor checkpoint archive.

Layout: an 8-byte magic, a little-endian uint64 manifest length, a JSON
manifest, then the raw little-endian float32 tensor payloads back to back.
The manifest pins the model config, the vocabulary hash, a sha256 of the
payload, and per-tensor (name, shape, offset, nbytes). The model id is the
sha256 of the manifest bytes; because the manifest embeds the payload hash,
any weight change changes the id.

Round trip is bitwise: save then load yields identical tensor bytes, so a
reloaded model reproduces predictions exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ArtifactError, ValidationError
from .model import ExnetModel, ModelConfig, init_model

MAGIC = b"EXNCKPT1"
FORMAT_VERSION = 1


def _manifest_bytes(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def model_id_of(manifest: dict) -> str:
    return hashlib.sha256(_manifest_bytes(manifest)).hexdigest()


def save_checkpoint(
    path: str | Path,
    model: ExnetModel,
    vocab_hash: str,
    extra: dict | None = None,
) -> str:
    """Write the archive and return its model id."""
    if model.dtype != np.dtype(np.float32):
        raise ValidationError(
            f"checkpoints store float32 payloads, model is {model.dtype}"
        )
    names = sorted(model.params)
    blobs: list[bytes] = []
    tensors: list[dict] = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f4")
        raw = arr.tobytes()
        tensors.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "vocab_sha256": vocab_hash,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "tensors": tensors,
        "extra": extra or {},
    }
    mbytes = _manifest_bytes(manifest)
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(len(mbytes).to_bytes(8, "little"))
        fh.write(mbytes)
        fh.write(payload)
    return model_id_of(manifest)


def read_manifest(path: str | Path) -> dict:
    with Path(path).open("rb") as fh:
        head = fh.read(len(MAGIC))
        if head != MAGIC:
            raise ArtifactError(f"{Path(path).name}: not a checkpoint archive")
        mlen = int.from_bytes(fh.read(8), "little")
        mbytes = fh.read(mlen)
        if len(mbytes) != mlen:
            raise ArtifactError(f"{Path(path).name}: truncated manifest")
    try:
        manifest = json.loads(mbytes)
    except json.JSONDecodeError:
        raise ArtifactError(f"{Path(path).name}: manifest is not valid json") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ArtifactError(
            f"{Path(path).name}: unsupported format version"
            f" {manifest.get('format_version')!r}"
        )
    return manifest


def load_checkpoint(
    path: str | Path,
    expected_vocab_hash: str | None = None,
) -> tuple[ExnetModel, dict]:
    """Rebuild the model. Returns (model, meta) where meta carries the
    manifest and the model id. Shape, payload-hash and vocabulary-hash
    mismatches all refuse to load."""
    path = Path(path)
    manifest = read_manifest(path)
    if expected_vocab_hash is not None and manifest["vocab_sha256"] != expected_vocab_hash:
        raise ArtifactError(
            f"{path.name}: checkpoint was trained against a different vocabulary"
            f" (hash {manifest['vocab_sha256'][:12]}.., expected"
            f" {expected_vocab_hash[:12]}..)"
        )
    cfg = ModelConfig(**manifest["config"])
    model = init_model(cfg, seed=0, dtype=np.float32)
    expected = {name: t.data.shape for name, t in model.params.items()}
    with path.open("rb") as fh:
        fh.seek(len(MAGIC))
        mlen = int.from_bytes(fh.read(8), "little")
        fh.seek(len(MAGIC) + 8 + mlen)
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise ArtifactError(f"{path.name}: payload corrupt (sha256 mismatch)")
    seen = set()
    for entry in manifest["tensors"]:
        name = entry["name"]
        if name not in expected:
            raise ArtifactError(f"{path.name}: unknown tensor {name!r}")
        shape = tuple(entry["shape"])
        if shape != expected[name]:
            raise ArtifactError(
                f"{path.name}: tensor {name!r} has shape {shape},"
                f" config implies {expected[name]}"
            )
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ArtifactError(f"{path.name}: payload truncated at {name!r}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        model.params[name].data = arr
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise ArtifactError(f"{path.name}: tensors missing: {sorted(missing)[:3]}")
    meta = {"manifest": manifest, "model_id": model_id_of(manifest)}
    return model, meta
