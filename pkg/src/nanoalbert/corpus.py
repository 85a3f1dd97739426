"""Raw-text cleanup and pretraining example construction.

Corpus format: UTF-8 text, one sentence per line, exactly one blank line
between documents, LF endings. Cleanup drops blank lines and lines shorter
than 20 characters (Unicode scalars, after trimming trailing whitespace);
documents left empty disappear entirely.

Pretraining examples pair adjacent sentences for sentence-order prediction
(half are emitted swapped) and mask tokens for masked-LM with the usual
80/10/10 replace/random/keep split.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .bpe import MASK_ID, NUM_SPECIALS, InputSequence, Vocab, build_input_pair
from .rng import RngStream

MIN_SENTENCE_CHARS = 20
SOP_IN_ORDER = 0
SOP_SWAPPED = 1

MASK_RATE = 0.15
MASK_PROB = 0.8
RANDOM_PROB = 0.1


class CorpusError(ValueError):
    pass


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def clean_document(text: str) -> list[str]:
    """Surviving sentences of one document, in order."""
    kept = []
    for line in text.split("\n"):
        line = line.rstrip()
        if len(line) >= MIN_SENTENCE_CHARS:
            kept.append(line)
    return kept


def preprocess_documents(docs) -> str:
    """Clean each document and join with single blank-line separators."""
    cleaned = [lines for lines in (clean_document(d) for d in docs) if lines]
    if not cleaned:
        return ""
    return "\n\n".join("\n".join(lines) for lines in cleaned) + "\n"


def preprocess_files(paths) -> str:
    """One document per input file; bad UTF-8 is an error naming the file."""
    docs = []
    for path in paths:
        with open(path, "rb") as f:
            raw = f.read()
        try:
            docs.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise CorpusError(
                f"{path}: invalid UTF-8 at byte offset {exc.start}"
            ) from None
    return preprocess_documents(docs)


def split_corpus(text: str) -> list[list[str]]:
    """Parse corpus text back into documents (lists of sentences)."""
    docs = []
    current: list[str] = []
    for line in text.split("\n"):
        if line:
            current.append(line)
        elif current:
            docs.append(current)
            current = []
    if current:
        docs.append(current)
    return docs


@dataclass
class CorpusStats:
    documents: int = 0
    sentences: int = 0
    words: int = 0


def corpus_stats(text: str) -> CorpusStats:
    docs = split_corpus(text)
    sentences = sum(len(d) for d in docs)
    words = sum(len(s.split()) for d in docs for s in d)
    return CorpusStats(documents=len(docs), sentences=sentences, words=words)


# ---------------------------------------------------------------------------
# example construction
# ---------------------------------------------------------------------------

@dataclass
class PretrainExample:
    input: InputSequence
    mlm_positions: list[int]
    mlm_labels: list[int]
    sop_label: int


def make_sop_pairs(docs, rng: RngStream, dup_factor: int):
    """(seg_a, seg_b, label) triples over adjacent sentence pairs.

    Each pass keeps corpus order for a pair with probability 1/2, otherwise
    swaps it; documents with fewer than two sentences are skipped. The whole
    corpus is visited dup_factor times with fresh randomness.
    """
    if dup_factor < 1:
        raise ValueError("dup_factor must be >= 1")
    pairs = []
    for _ in range(dup_factor):
        for doc in docs:
            for first, second in zip(doc, doc[1:]):
                if rng.coin():
                    pairs.append((first, second, SOP_IN_ORDER))
                else:
                    pairs.append((second, first, SOP_SWAPPED))
    return pairs


def apply_mlm_mask(
    seq: InputSequence,
    vocab: Vocab,
    rng: RngStream,
    mask_rate: float = MASK_RATE,
    max_predictions: int = 20,
):
    """Pick masked-LM targets and return (positions, labels, new token ids).

    Candidates are the non-special, non-pad positions. The draw count is
    min(max_predictions, max(1, floor(mask_rate * candidates))). Each chosen
    position becomes [MASK] with probability 0.8, a random non-special id
    with 0.1, or stays unchanged with 0.1; labels record the original ids.
    """
    if not 0.0 < mask_rate < 1.0:
        raise ValueError("mask_rate must be in (0, 1)")
    candidates = [
        i
        for i, (tok, m) in enumerate(zip(seq.token_ids, seq.attention_mask))
        if m == 1 and tok >= NUM_SPECIALS
    ]
    if not candidates:
        raise ValueError("no maskable positions")
    num = min(max_predictions, max(1, int(mask_rate * len(candidates))))
    positions = sorted(candidates[i] for i in rng.sample(len(candidates), num))

    new_ids = list(seq.token_ids)
    labels = []
    for pos in positions:
        labels.append(seq.token_ids[pos])
        u = rng.uniform()
        if u < MASK_PROB:
            new_ids[pos] = MASK_ID
        elif u < MASK_PROB + RANDOM_PROB:
            new_ids[pos] = NUM_SPECIALS + rng.randint(vocab.size - NUM_SPECIALS)
        # else: keep the original token, position still predicted
    return positions, labels, new_ids


def build_pretrain_examples(
    docs,
    vocab: Vocab,
    rng: RngStream,
    max_len: int,
    mask_rate: float = MASK_RATE,
    max_predictions: int = 20,
    dup_factor: int = 1,
    encode_fn=None,
) -> list[PretrainExample]:
    """Full pipeline: SOP pairing, packing, and MLM masking."""
    encode = encode_fn if encode_fn is not None else vocab.encode
    id_cache: dict[str, list[int]] = {}

    def ids_of(sentence: str) -> list[int]:
        if sentence not in id_cache:
            id_cache[sentence] = encode(sentence)
        return id_cache[sentence]

    examples = []
    for seg_a, seg_b, sop_label in make_sop_pairs(docs, rng, dup_factor):
        seq = build_input_pair(vocab, ids_of(seg_a), ids_of(seg_b), max_len)
        positions, labels, new_ids = apply_mlm_mask(
            seq, vocab, rng, mask_rate, max_predictions
        )
        packed = InputSequence(new_ids, seq.type_ids, seq.attention_mask)
        examples.append(PretrainExample(packed, positions, labels, sop_label))
    return examples


# ---------------------------------------------------------------------------
# example cache file
# ---------------------------------------------------------------------------

# Header: magic, then record count as little-endian u32. Each record is a
# u32 byte length followed by u32 fields: T, token_ids[T], type_ids[T],
# attention_mask[T], n_pred, positions[n_pred], labels[n_pred], sop_label.
CACHE_MAGIC = b"ABPT\x001"


def write_examples(path, examples) -> None:
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<I", len(examples)))
        for ex in examples:
            t = len(ex.input.token_ids)
            n = len(ex.mlm_positions)
            body = struct.pack(
                f"<I{t}I{t}I{t}II{n}I{n}II",
                t,
                *ex.input.token_ids,
                *ex.input.type_ids,
                *ex.input.attention_mask,
                n,
                *ex.mlm_positions,
                *ex.mlm_labels,
                ex.sop_label,
            )
            f.write(struct.pack("<I", len(body)))
            f.write(body)


def read_examples(path) -> list[PretrainExample]:
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise CorpusError(f"{path}: bad example-cache magic")
    off = len(CACHE_MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise CorpusError(f"{path}: truncated example cache")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    (count,) = take("<I")
    examples = []
    for _ in range(count):
        (body_len,) = take("<I")
        end = off + body_len
        (t,) = take("<I")
        token_ids = list(take(f"<{t}I"))
        type_ids = list(take(f"<{t}I"))
        mask = list(take(f"<{t}I"))
        (n,) = take("<I")
        positions = list(take(f"<{n}I"))
        labels = list(take(f"<{n}I"))
        (sop,) = take("<I")
        if off != end:
            raise CorpusError(f"{path}: record length mismatch")
        examples.append(
            PretrainExample(InputSequence(token_ids, type_ids, mask), positions, labels, sop)
        )
    return examples
