"""The classifier: shared encoder, asymmetric projections, cross-attention
fusion, sigmoid head.

One episode holds a query prompt and K support prompts. All K+1 sequences
run through the same transformer encoder (pre-norm blocks, mask-aware
self-attention, position-0 pooling). The K pooled support vectors pass
through a three-layer gelu projector with dropout between its second and
third layers; the pooled query vector passes through a single gelu layer.
The asymmetry is intentional: supports and query play different roles, so
they get different capacity.

Fusion is multi-head cross-attention with the projected supports as key and
value and the projected query as the sole attention query. The support axis
carries no positional signal and the attention weights are a softmax over
supports, which is what makes the output independent of support order and
places no ceiling on K. A two-layer gelu head plus a sigmoid layer turns
the fused vector into P(yes).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .data import Episode
from .errors import ValidationError
from .tensor import (
    Tensor,
    add,
    concat0,
    dropout,
    embedding,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    narrow,
    reshape,
    scale,
    sigmoid,
    softmax,
    transpose,
    tsum,
)

INIT_STD = 0.02
_MASK_OFF = -1e9

# layers / width follow the published size ladder; heads keep 64-wide slots
PRESETS: dict[str, dict[str, int]] = {
    "s": {"n_layers": 6, "d_model": 256, "n_heads": 4},
    "m": {"n_layers": 12, "d_model": 768, "n_heads": 12},
    "l": {"n_layers": 24, "d_model": 1024, "n_heads": 16},
}


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int
    n_layers: int
    n_heads: int
    max_len: int = 64
    ff_mult: int = 4
    head_hidden: int | None = None
    dropout: float = 0.1
    proj_dropout: float = 0.3
    pooling: str = "cls"

    def __post_init__(self):
        if self.head_hidden is None:
            self.head_hidden = self.d_model
        if self.vocab_size < 5:
            raise ValidationError(f"vocab_size must cover the specials, got {self.vocab_size}")
        if self.d_model < 1 or self.n_layers < 1 or self.n_heads < 1:
            raise ValidationError("d_model, n_layers and n_heads must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValidationError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        if self.max_len < 3:
            raise ValidationError(f"max_len must be at least 3, got {self.max_len}")
        if self.pooling not in ("cls", "mean"):
            raise ValidationError(f"pooling must be 'cls' or 'mean', got {self.pooling!r}")
        for name in ("dropout", "proj_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValidationError(f"{name} must be in [0, 1), got {rate}")

    def to_dict(self) -> dict:
        return asdict(self)


def preset_config(name: str, vocab_size: int, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}, choose from {sorted(PRESETS)}")
    kwargs: dict = {**PRESETS[name], "vocab_size": vocab_size}
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def param_count(cfg: ModelConfig) -> int:
    """Closed form for the number of trainable scalars; kept in sync with
    the README formula and checked against enumeration in the tests."""
    d, f, h = cfg.d_model, cfg.ff_mult * cfg.d_model, cfg.head_hidden
    embeddings = cfg.vocab_size * d + cfg.max_len * d
    per_layer = 4 * d * d + 4 * d + 2 * d * f + f + d + 4 * d  # attn + ffn + two norms
    encoder = cfg.n_layers * per_layer + 2 * d
    projectors = 4 * (d * d + d)  # three support layers + one query layer
    fusion = 4 * (d * d + d)
    head = d * h + h + h * h + h + h + 1
    return embeddings + encoder + projectors + fusion + head


def _trunc_normal(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    """Normal(0, INIT_STD) redrawn until everything sits within two sigma."""
    x = rng.normal(0.0, INIT_STD, size=shape)
    bad = np.abs(x) > 2 * INIT_STD
    while bad.any():
        x[bad] = rng.normal(0.0, INIT_STD, size=int(bad.sum()))
        bad = np.abs(x) > 2 * INIT_STD
    return x.astype(dtype)


class ExnetModel:
    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor], dtype=np.float32):
        self.cfg = cfg
        self.params = params
        self.dtype = np.dtype(dtype)

    # -- encoder --------------------------------------------------------------

    def encode(
        self,
        ids: np.ndarray,
        mask: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Pooled representation (B, d_model) for a batch of sequences.

        In eval mode this is a pure function of (ids, mask, params): no
        randomness, no state. Padded positions are excluded from attention
        by driving their key logits to -1e9, which underflows to exactly
        zero weight after the softmax.
        """
        cfg = self.cfg
        p = self.params
        ids = np.asarray(ids)
        if ids.ndim != 2 or ids.shape[1] != cfg.max_len:
            raise ValidationError(
                f"encode expects (batch, {cfg.max_len}) ids, got {ids.shape}"
            )
        mask = np.asarray(mask, dtype=self.dtype)
        b, t = ids.shape
        heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
        inv_sqrt_dh = 1.0 / math.sqrt(dh)

        x = add(embedding(p["tok_emb"], ids), p["pos_emb"])
        x = dropout(x, cfg.dropout, rng, training)
        bias = Tensor(((1.0 - mask) * _MASK_OFF).reshape(b, 1, 1, t))

        def split_heads(h_):
            return transpose(reshape(h_, (b, t, heads, dh)), (0, 2, 1, 3))

        for i in range(cfg.n_layers):
            pre = f"enc.{i}."
            h = layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = split_heads(linear(h, p[pre + "attn.wq"], p[pre + "attn.bq"]))
            k = split_heads(linear(h, p[pre + "attn.wk"], p[pre + "attn.bk"]))
            v = split_heads(linear(h, p[pre + "attn.wv"], p[pre + "attn.bv"]))
            scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), inv_sqrt_dh)
            attn = softmax(add(scores, bias))
            attn = dropout(attn, cfg.dropout, rng, training)
            ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (b, t, cfg.d_model))
            ctx = linear(ctx, p[pre + "attn.wo"], p[pre + "attn.bo"])
            x = add(x, dropout(ctx, cfg.dropout, rng, training))
            h2 = layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            ff = gelu(linear(h2, p[pre + "ffn.w1"], p[pre + "ffn.b1"]))
            ff = linear(ff, p[pre + "ffn.w2"], p[pre + "ffn.b2"])
            x = add(x, dropout(ff, cfg.dropout, rng, training))

        x = layer_norm(x, p["out_ln.g"], p["out_ln.b"])
        if cfg.pooling == "cls":
            return reshape(narrow(x, 1, 0, 1), (b, cfg.d_model))
        summed = tsum(mul(x, Tensor(mask.reshape(b, t, 1))), axis=1)
        inv = (1.0 / mask.sum(axis=1, keepdims=True)).astype(self.dtype)
        return mul(summed, Tensor(inv))

    # -- projections and fusion -------------------------------------------------

    def project_supports(
        self,
        e: Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Three gelu layers; dropout sits between the second and third."""
        if e.shape[0] < 1:
            raise ValidationError("support projection needs at least one row")
        p = self.params
        h = gelu(linear(e, p["p1.w1"], p["p1.b1"]))
        h = gelu(linear(h, p["p1.w2"], p["p1.b2"]))
        h = dropout(h, self.cfg.proj_dropout, rng, training)
        return gelu(linear(h, p["p1.w3"], p["p1.b3"]))

    def project_query(self, e: Tensor) -> Tensor:
        """A single gelu layer; the projector asymmetry is deliberate."""
        p = self.params
        return gelu(linear(e, p["p2.w"], p["p2.b"]))

    def cross_attend(self, support_proj: Tensor, query_proj: Tensor) -> Tensor:
        """Multi-head attention with supports as key/value and the query as
        the one attention query. No positional signal on the support axis,
        so the result is invariant to support order up to float rounding."""
        cfg = self.cfg
        p = self.params
        k_count = support_proj.shape[0]
        heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads

        q = linear(query_proj, p["xattn.wq"], p["xattn.bq"])
        k = linear(support_proj, p["xattn.wk"], p["xattn.bk"])
        v = linear(support_proj, p["xattn.wv"], p["xattn.bv"])
        q = transpose(reshape(q, (1, heads, dh)), (1, 0, 2))
        k = transpose(reshape(k, (k_count, heads, dh)), (1, 0, 2))
        v = transpose(reshape(v, (k_count, heads, dh)), (1, 0, 2))
        scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
        fused = matmul(softmax(scores), v)
        fused = reshape(transpose(fused, (1, 0, 2)), (1, cfg.d_model))
        return linear(fused, p["xattn.wo"], p["xattn.bo"])

    def predict_head(self, fused: Tensor) -> Tensor:
        """Two gelu layers then a sigmoid layer: P(yes) in (0, 1)."""
        p = self.params
        h = gelu(linear(fused, p["head.w1"], p["head.b1"]))
        h = gelu(linear(h, p["head.w2"], p["head.b2"]))
        return sigmoid(linear(h, p["head.w3"], p["head.b3"]))

    # -- episode forward ----------------------------------------------------------

    def forward(
        self,
        episode: Episode,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """P(yes) for one episode, shape (1, 1)."""
        return self.forward_batch([episode], training=training, rng=rng)

    def forward_batch(
        self,
        episodes: Sequence[Episode],
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """P(yes) for a batch of episodes, shape (len(episodes), 1).

        All query and support sequences across the batch share one encoder
        pass; per-episode fusion then runs on row slices of the pooled
        output, so episodes may carry different K.
        """
        if not episodes:
            raise ValidationError("forward_batch needs at least one episode")
        rows_ids = []
        rows_mask = []
        for ep in episodes:
            if ep.k < 1 or len(ep.supports) != ep.k:
                raise ValidationError(
                    f"episode needs k >= 1 matching its support count, got k={ep.k}"
                )
            rows_ids.append(ep.query.ids)
            rows_mask.append(ep.query.attention_mask)
            for s in ep.supports:
                rows_ids.append(s.ids)
                rows_mask.append(s.attention_mask)
        pooled = self.encode(
            np.stack(rows_ids), np.stack(rows_mask), training=training, rng=rng
        )
        outputs = []
        offset = 0
        for ep in episodes:
            e_q = narrow(pooled, 0, offset, 1)
            e_s = narrow(pooled, 0, offset + 1, ep.k)
            offset += 1 + ep.k
            s_proj = self.project_supports(e_s, training=training, rng=rng)
            q_proj = self.project_query(e_q)
            fused = self.cross_attend(s_proj, q_proj)
            outputs.append(self.predict_head(fused))
        return concat0(outputs) if len(outputs) > 1 else outputs[0]


def init_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> ExnetModel:
    """Fresh parameters, truncated normal (std 0.02) for weights and
    embeddings, zeros for biases, ones/zeros for norm scales/shifts.
    Creation order is fixed, so a seed pins every value."""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValidationError(f"model dtype must be float32 or float64, got {dtype}")
    rng = np.random.default_rng(seed)
    d, f, h = cfg.d_model, cfg.ff_mult * cfg.d_model, cfg.head_hidden

    params: dict[str, Tensor] = {}

    def w(name: str, shape):
        params[name] = Tensor(_trunc_normal(rng, shape, dtype), requires_grad=True)

    def zeros(name: str, shape):
        params[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(name: str, shape):
        params[name] = Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    w("tok_emb", (cfg.vocab_size, d))
    w("pos_emb", (cfg.max_len, d))
    for i in range(cfg.n_layers):
        pre = f"enc.{i}."
        ones(pre + "ln1.g", (d,)); zeros(pre + "ln1.b", (d,))
        for nm in ("wq", "wk", "wv", "wo"):
            w(pre + f"attn.{nm}", (d, d))
        for nm in ("bq", "bk", "bv", "bo"):
            zeros(pre + f"attn.{nm}", (d,))
        ones(pre + "ln2.g", (d,)); zeros(pre + "ln2.b", (d,))
        w(pre + "ffn.w1", (d, f)); zeros(pre + "ffn.b1", (f,))
        w(pre + "ffn.w2", (f, d)); zeros(pre + "ffn.b2", (d,))
    ones("out_ln.g", (d,)); zeros("out_ln.b", (d,))
    for i in (1, 2, 3):
        w(f"p1.w{i}", (d, d)); zeros(f"p1.b{i}", (d,))
    w("p2.w", (d, d)); zeros("p2.b", (d,))
    for nm in ("wq", "wk", "wv", "wo"):
        w(f"xattn.{nm}", (d, d))
    for nm in ("bq", "bk", "bv", "bo"):
        zeros(f"xattn.{nm}", (d,))
    w("head.w1", (d, h)); zeros("head.b1", (h,))
    w("head.w2", (h, h)); zeros("head.b2", (h,))
    w("head.w3", (h, 1)); zeros("head.b3", (1,))
    return ExnetModel(cfg, params, dtype=dtype)
