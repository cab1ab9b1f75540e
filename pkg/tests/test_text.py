"""Template rendering, tokenization, vocabulary and prompt encoding."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from exnet.errors import ValidationError
from exnet.text import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    SPECIALS,
    TEMPLATE_TOKENS,
    UNK_ID,
    Vocab,
    build_vocab,
    decode,
    encode_prompt,
    render_template,
    tokenize,
)


# -- template -----------------------------------------------------------------


def test_template_is_byte_exact():
    out = render_template("positive", "great shoes")
    assert out == "question: is the text about positive? [SEP] text: great shoes"


def test_template_empty_text():
    assert render_template("sports", "") == "question: is the text about sports? [SEP] text: "


def test_template_lowercases_both_fields():
    out = render_template("SPORTS", "Great Shoes")
    assert out == "question: is the text about sports? [SEP] text: great shoes"


def test_template_blank_label_rejected():
    with pytest.raises(ValidationError):
        render_template("  ", "text")


@given(
    st.text(alphabet="abcdefg ", min_size=1).filter(lambda s: s.strip()),
    st.text(alphabet="abcdefg ", max_size=30),
    st.text(alphabet="abcdefg ", min_size=1).filter(lambda s: s.strip()),
    st.text(alphabet="abcdefg ", max_size=30),
)
def test_template_injective_without_sep_literal(l1, x1, l2, x2):
    # distinct (label, text) pairs render to distinct strings
    key1 = (l1.strip().lower(), x1.strip().lower())
    key2 = (l2.strip().lower(), x2.strip().lower())
    if key1 != key2:
        assert render_template(l1, x1) != render_template(l2, x2)


# -- tokenizer ----------------------------------------------------------------


def test_tokenize_splits_words_and_punctuation():
    assert tokenize("great, shoes!") == ["great", ",", "shoes", "!"]


def test_tokenize_keeps_bracketed_specials_whole():
    assert tokenize("a [SEP] b") == ["a", "[SEP]", "b"]
    assert tokenize("a [sep] b") == ["a", "[SEP]", "b"]


def test_tokenize_template_round():
    toks = tokenize(render_template("sports", "go team"))
    assert toks == [
        "question", ":", "is", "the", "text", "about", "sports", "?",
        "[SEP]", "text", ":", "go", "team",
    ]


# -- vocabulary ---------------------------------------------------------------


def test_build_vocab_frequency_order():
    v = build_vocab(["a b", "a"])
    assert v.lookup("a") < v.lookup("b")


def test_build_vocab_deterministic():
    texts = ["c a b", "b a", "a"]
    assert build_vocab(texts).id_to_token == build_vocab(texts).id_to_token


def test_build_vocab_tie_breaks_lexicographically():
    v = build_vocab(["zeta alpha"])
    assert v.lookup("alpha") < v.lookup("zeta")


def test_build_vocab_includes_template_words():
    v = build_vocab(["completely unrelated words"])
    for t in TEMPLATE_TOKENS:
        assert v.lookup(t) != UNK_ID


def test_build_vocab_empty_corpus_rejected():
    with pytest.raises(ValidationError):
        build_vocab([])


def test_build_vocab_target_size_caps_and_keeps_frequent():
    floor = len(SPECIALS) + len(TEMPLATE_TOKENS)
    v = build_vocab(["w w w x x y"], target_size=floor + 2)
    assert v.size == floor + 2
    assert v.lookup("w") != UNK_ID
    assert v.lookup("x") != UNK_ID
    assert v.lookup("y") == UNK_ID  # least frequent loses the last slot


def test_build_vocab_target_size_below_floor_rejected():
    with pytest.raises(ValidationError):
        build_vocab(["a"], target_size=5)


def test_vocab_specials_pinned_to_low_ids():
    v = build_vocab(["a"])
    assert v.id_to_token[:4] == list(SPECIALS)
    assert (PAD_ID, UNK_ID, CLS_ID, SEP_ID) == (0, 1, 2, 3)


def test_vocab_rejects_wrong_special_prefix():
    with pytest.raises(ValidationError):
        Vocab(["[PAD]", "[UNK]", "a", "b"])


def test_vocab_rejects_duplicates():
    with pytest.raises(ValidationError):
        Vocab(list(SPECIALS) + ["a", "a"])


def test_vocab_round_trips_through_file(tmp_path):
    v = build_vocab(["some words here", "words again"])
    p = tmp_path / "vocab.txt"
    v.save(p)
    loaded = Vocab.load(p)
    assert loaded.id_to_token == v.id_to_token
    assert loaded.content_hash() == v.content_hash()


def test_vocab_file_is_one_token_per_line(tmp_path):
    v = build_vocab(["a b"])
    p = tmp_path / "vocab.txt"
    v.save(p)
    lines = p.read_text(encoding="utf-8").splitlines()
    assert lines == v.id_to_token  # line number = id


def test_content_hash_changes_with_content():
    a = build_vocab(["alpha"])
    b = build_vocab(["beta"])
    assert a.content_hash() != b.content_hash()


# -- encoding -----------------------------------------------------------------


@pytest.fixture()
def vocab():
    return build_vocab(["great shoes", "bad service", "go team go"])


def test_encode_structure(vocab):
    seq = encode_prompt(vocab, render_template("sports", "go team"), max_len=24)
    assert len(seq) == 24
    assert seq.ids[0] == CLS_ID
    assert seq.ids.dtype == np.int64
    n_real = int(seq.attention_mask.sum())
    assert list(seq.ids[n_real:]) == [PAD_ID] * (24 - n_real)
    assert not seq.truncated
    assert SEP_ID in seq.ids


def test_encode_mask_marks_exactly_non_pad(vocab):
    seq = encode_prompt(vocab, "go team", max_len=8)
    real = seq.ids != PAD_ID
    np.testing.assert_array_equal(seq.attention_mask.astype(bool), real)


def test_encode_unknown_words_become_unk(vocab):
    seq = encode_prompt(vocab, "zzz qqq", max_len=8)
    assert list(seq.ids[1:3]) == [UNK_ID, UNK_ID]


def test_encode_truncates_to_max_len(vocab):
    seq = encode_prompt(vocab, "go team " * 30, max_len=8)
    assert len(seq) == 8
    assert seq.truncated
    assert seq.attention_mask.sum() == 8


def test_encode_exact_fit_is_not_truncated(vocab):
    # 3 body tokens + CLS exactly fills max_len=4
    seq = encode_prompt(vocab, "go team go", max_len=4)
    assert not seq.truncated
    assert seq.attention_mask.sum() == 4


def test_encode_max_len_floor(vocab):
    with pytest.raises(ValidationError):
        encode_prompt(vocab, "go", max_len=2)


def test_decode_then_encode_is_stable(vocab):
    rendered = render_template("sports", "go team unknownword")
    seq = encode_prompt(vocab, rendered, max_len=24)
    again = encode_prompt(vocab, decode(vocab, seq), max_len=24)
    np.testing.assert_array_equal(seq.ids, again.ids)
    np.testing.assert_array_equal(seq.attention_mask, again.attention_mask)


@given(st.lists(st.sampled_from("great shoes bad service go team".split()), min_size=1, max_size=40))
def test_encode_invariants_hold_for_any_text(words):
    v = build_vocab(["great shoes", "bad service", "go team go"])
    seq = encode_prompt(v, " ".join(words), max_len=12)
    assert len(seq) == 12
    assert seq.ids[0] == CLS_ID
    assert seq.attention_mask.sum() == (seq.ids != PAD_ID).sum()
