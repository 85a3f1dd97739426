"""Byte-level BPE: training, greedy encoding, serialization, pair layout.

Merge arithmetic for the small corpora is worked out by hand in each test;
ids are NUM_SPECIALS + piece index, so the first learned merge always gets
id 261 (5 specials + 256 byte pieces).
"""

import pytest

from nanoalbert.bpe import (
    CLS_ID,
    MASK_ID,
    MIN_VOCAB_SIZE,
    NUM_SPECIALS,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    InputSequence,
    Vocab,
    build_input_pair,
    load_vocab,
    save_vocab,
    train_vocab,
)
from nanoalbert.rng import RngStream


def test_special_token_layout():
    assert (PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID) == (0, 1, 2, 3, 4)
    assert NUM_SPECIALS == 5
    assert MIN_VOCAB_SIZE == 261


def test_base_vocab_covers_every_byte():
    vocab = train_vocab("anything at all here", MIN_VOCAB_SIZE)
    assert vocab.size == 261
    data = bytes(range(256))
    assert vocab.decode_bytes(vocab.encode(data)) == data


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def test_first_merge_is_most_frequent_pair():
    # "abab" x2: pair (a,b) occurs 4 times, (b,a) twice
    vocab = train_vocab("abab abab", 262)
    assert vocab.merges == [(b"a", b"b")]
    assert vocab.encode("abab") == [261, 261]


def test_tied_pairs_break_lexicographically():
    # (a,a) and (b,b) both occur twice; (a,a) sorts first
    vocab = train_vocab("aa bb aa bb", 262)
    assert vocab.merges == [(b"a", b"a")]


def test_training_stops_when_no_pair_repeats():
    # every word unique, every pair count 1 -> no merges despite big target
    vocab = train_vocab("abc def ghi", 300)
    assert vocab.merges == []
    assert vocab.size == 261


def test_target_size_validation():
    with pytest.raises(ValueError, match="261"):
        train_vocab("some words here", 260)
    with pytest.raises(ValueError, match="empty"):
        train_vocab("   \n  ", 300)


def test_training_is_deterministic():
    corpus = "thermal theme the thesis there therefore "
    a = train_vocab(corpus * 3, 270)
    b = train_vocab(corpus * 3, 270)
    assert a.merges == b.merges
    assert a.encode("therefore") == b.encode("therefore")


def test_merges_compose_transitively():
    corpus = "abc abc abc"
    vocab = train_vocab(corpus, 263)
    # (a,b) wins round one (tie with (b,c), lexicographic), then (ab,c)
    assert vocab.merges == [(b"a", b"b"), (b"ab", b"c")]
    assert vocab.encode("abc") == [vocab.piece_id(b"abc")]


# ---------------------------------------------------------------------------
# encoding / decoding
# ---------------------------------------------------------------------------

def test_encode_applies_merges_by_rank():
    base = train_vocab("x", MIN_VOCAB_SIZE)
    vocab = Vocab(base._id_pieces + [b"bc", b"ab"], [(b"b", b"c"), (b"a", b"b")])
    # rank 0 fires first, leaving (a, bc) which is not a merge
    assert vocab.encode("abc") == [vocab.piece_id(b"a"), vocab.piece_id(b"bc")]


def test_encode_empty_and_decode_drop_specials():
    vocab = train_vocab("x y", MIN_VOCAB_SIZE)
    assert vocab.encode("") == []
    ids = [CLS_ID, *vocab.encode("xy"), SEP_ID, PAD_ID]
    assert vocab.decode(ids) == "xy"


def test_duplicate_pieces_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        Vocab([b"a", b"a"], [])


def test_byte_string_round_trip():
    vocab = train_vocab("the theme thermal there " * 4, 270)
    rng = RngStream(606)
    for _ in range(1000):
        data = bytes(rng.randint(256) for _ in range(rng.randint(24)))
        assert vocab.decode_bytes(vocab.encode(data)) == data


def test_utf8_round_trip():
    vocab = train_vocab("plain ascii training text", 265)
    for text in ["héllo", "α-β blocker", "naïve", ""]:
        assert vocab.decode(vocab.encode(text)) == text


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    vocab = train_vocab("receptor receptors reception " * 3, 268)
    assert vocab.merges  # the corpus must actually produce merges
    save_vocab(vocab, tmp_path / "vocab.txt", tmp_path / "merges.txt")
    loaded = load_vocab(tmp_path / "vocab.txt", tmp_path / "merges.txt")
    assert loaded.size == vocab.size
    assert loaded.merges == vocab.merges
    assert loaded.encode("receptors") == vocab.encode("receptors")
    data = bytes(range(256))  # non-printable pieces survive the text format
    assert loaded.decode_bytes(loaded.encode(data)) == data


def test_load_rejects_malformed_vocab(tmp_path):
    bad = tmp_path / "vocab.txt"
    merges = tmp_path / "merges.txt"
    merges.write_text("")
    bad.write_text("justonefield\n")
    with pytest.raises(ValueError, match="vocab.txt:1"):
        load_vocab(bad, merges)
    bad.write_text("[PAD]\t0\n[UNK]\t5\n")
    with pytest.raises(ValueError, match="dense"):
        load_vocab(bad, merges)
    bad.write_text("[PAD]\t0\n[WRONG]\t1\n")
    with pytest.raises(ValueError, match="special"):
        load_vocab(bad, merges)


def test_load_rejects_malformed_merges(tmp_path):
    vocab = train_vocab("x", MIN_VOCAB_SIZE)
    save_vocab(vocab, tmp_path / "vocab.txt", tmp_path / "merges.txt")
    (tmp_path / "merges.txt").write_text("a\tb\tc\n")
    with pytest.raises(ValueError, match="merges.txt:1"):
        load_vocab(tmp_path / "vocab.txt", tmp_path / "merges.txt")


# ---------------------------------------------------------------------------
# input-pair assembly
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def base_vocab():
    return train_vocab("base", MIN_VOCAB_SIZE)


def test_single_segment_layout(base_vocab):
    seq = build_input_pair(base_vocab, [7, 8], [], max_len=6)
    assert seq.token_ids == [CLS_ID, 7, 8, SEP_ID, PAD_ID, PAD_ID]
    assert seq.type_ids == [0, 0, 0, 0, 0, 0]
    assert seq.attention_mask == [1, 1, 1, 1, 0, 0]
    assert len(seq) == 6


def test_pair_layout_and_type_ids(base_vocab):
    seq = build_input_pair(base_vocab, [7], [8, 9], max_len=6)
    assert seq.token_ids == [CLS_ID, 7, SEP_ID, 8, 9, SEP_ID]
    assert seq.type_ids == [0, 0, 0, 1, 1, 1]
    assert seq.attention_mask == [1] * 6


def test_exact_fit_needs_no_padding(base_vocab):
    seq = build_input_pair(base_vocab, [5], [6], max_len=5)
    assert seq.token_ids == [CLS_ID, 5, SEP_ID, 6, SEP_ID]


def test_truncation_trims_longer_segment_ties_to_b(base_vocab):
    # 400 + 300 tokens into 512 slots: budget 509, longest-first popping
    # lands on 255 A tokens and 254 B tokens
    seq = build_input_pair(base_vocab, [10] * 400, [11] * 300, max_len=512)
    assert len(seq) == 512
    assert seq.token_ids.count(10) == 255
    assert seq.token_ids.count(11) == 254
    assert seq.token_ids.count(SEP_ID) == 2
    assert seq.attention_mask.count(1) == 512


def test_truncation_never_empties_a_segment(base_vocab):
    seq = build_input_pair(base_vocab, [5] * 10, [6], max_len=5)
    assert seq.token_ids == [CLS_ID, 5, SEP_ID, 6, SEP_ID]


def test_max_len_too_small_rejected(base_vocab):
    with pytest.raises(ValueError, match="too small"):
        build_input_pair(base_vocab, [5], [6], max_len=4)
    with pytest.raises(ValueError, match="too small"):
        build_input_pair(base_vocab, [5], [], max_len=2)


def test_input_sequence_is_plain_data():
    seq = InputSequence([1, 2], [0, 0], [1, 1])
    assert len(seq) == 2
