"""Prompt construction and word-level vocabulary.

Every classification input is rendered through one fixed template,

    question: is the text about <label>? [SEP] text: <text>

then tokenized into lowercase words and single punctuation marks. The
``[SEP]`` marker (and the other three bracketed specials) survive
tokenization as single tokens. Encoded sequences open with ``[CLS]``, are
truncated to ``max_len`` and padded with ``[PAD]``; the attention mask is 1
exactly on real tokens.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ValidationError

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3

# words the template itself contributes; always present in a built vocabulary
TEMPLATE_TOKENS = ("question", "is", "the", "text", "about", "?", ":")

_TOKEN_RE = re.compile(r"\[(?:pad|unk|cls|sep)\]|\w+|[^\w\s]")
_CANON = {s.lower(): s for s in SPECIALS}


def render_template(label: str, text: str) -> str:
    """The single prompt shape the model ever sees. Inputs are lowercased;
    ``text`` may be empty, the label may not."""
    label = label.strip().lower()
    if not label:
        raise ValidationError("label must be non-empty after trimming")
    return f"question: is the text about {label}? [SEP] text: {text.strip().lower()}"


def tokenize(s: str) -> list[str]:
    """Lowercase word/punctuation split; bracketed specials stay whole."""
    return [_CANON.get(t, t) for t in _TOKEN_RE.findall(s.lower())]


@dataclass
class TokenSequence:
    """Fixed-length encoded prompt."""

    ids: np.ndarray
    attention_mask: np.ndarray
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Vocab:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:4]) != SPECIALS:
            raise ValidationError(
                f"vocabulary must open with {SPECIALS}, got {self.id_to_token[:4]}"
            )
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValidationError("vocabulary contains duplicate tokens")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    # -- persistence: one token per line, the line number is the id ----------

    def dumps(self) -> str:
        return "\n".join(self.id_to_token) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(lines)

    def content_hash(self) -> str:
        """sha256 of the serialized form; checkpoints pin this."""
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


def build_vocab(texts: Iterable[str], target_size: int | None = None) -> Vocab:
    """Count tokens over the corpus. Ids are dense and deterministic:
    specials first, then tokens by descending frequency, ties lexicographic.
    Template words are included even when the corpus never uses them.

    ``target_size`` caps the total vocabulary (specials included); None
    keeps every token seen."""
    floor = len(SPECIALS) + len(TEMPLATE_TOKENS)
    if target_size is not None and target_size < floor:
        raise ValidationError(
            f"target_size must be at least {floor} (specials + template words),"
            f" got {target_size}"
        )
    counts: Counter[str] = Counter({t: 0 for t in TEMPLATE_TOKENS})
    n_texts = 0
    for s in texts:
        n_texts += 1
        for tok in tokenize(s):
            if tok in _CANON.values():
                continue
            counts[tok] += 1
    if n_texts == 0:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if target_size is not None and len(ordered) > target_size - len(SPECIALS):
        budget = target_size - len(SPECIALS) - len(TEMPLATE_TOKENS)
        keep = set(TEMPLATE_TOKENS)
        for tok, _ in ordered:
            if budget == 0:
                break
            if tok not in keep:
                keep.add(tok)
                budget -= 1
        ordered = [kv for kv in ordered if kv[0] in keep]
    return Vocab(list(SPECIALS) + [t for t, _ in ordered])


def encode_prompt(vocab: Vocab, rendered: str, max_len: int) -> TokenSequence:
    """[CLS] + token ids, truncated to ``max_len`` and padded with [PAD].

    Truncation is silent here; the flag on the result lets callers count it.
    """
    if max_len < 3:
        raise ValidationError(f"max_len must be at least 3, got {max_len}")
    body = [vocab.lookup(t) for t in tokenize(rendered)]
    truncated = len(body) > max_len - 1
    ids = [CLS_ID] + body[: max_len - 1]
    n_real = len(ids)
    ids = ids + [PAD_ID] * (max_len - n_real)
    mask = [1.0] * n_real + [0.0] * (max_len - n_real)
    return TokenSequence(
        ids=np.asarray(ids, dtype=np.int64),
        attention_mask=np.asarray(mask, dtype=np.float32),
        truncated=truncated,
    )


def decode(vocab: Vocab, seq: TokenSequence) -> str:
    """Tokens joined by spaces, dropping [CLS] and [PAD]. Re-encoding the
    result reproduces the same ids."""
    keep = [
        vocab.id_to_token[i]
        for i in seq.ids.tolist()
        if i not in (PAD_ID, CLS_ID)
    ]
    return " ".join(keep)
