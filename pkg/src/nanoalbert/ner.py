"""Named-entity fine-tuning and entity-level evaluation.

Covers the full tagging path: CoNLL-style file ingestion, word-to-subword
label alignment (first piece carries the word's label, the rest are ignored
by the loss), AdamW fine-tuning with periodic dev evaluation and best-model
selection, BIO span decoding with lenient orphan-"I" repair, and exact-match
precision/recall/F1 micro-averaged over decoded spans.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .bpe import CLS_ID, PAD_ID, SEP_ID, InputSequence, Vocab
from .checkpoint import Checkpoint, save_checkpoint
from .model import (
    ModelConfig,
    ner_loss_and_grads,
    token_logits,
    truncated_normal,
)
from .optim import (
    DEFAULT_WEIGHT_DECAY,
    OptimizerState,
    Schedule,
    adamw_step,
    lr_at,
)
from .pretrain import batch_indices
from .rng import RngStream


class ConllError(ValueError):
    """Malformed CoNLL input; message carries file and line number."""


@dataclass
class NerExample:
    words: list[str]
    labels: list[str]

    def __post_init__(self):
        if len(self.words) != len(self.labels):
            raise ValueError("words and labels must have equal length")


@dataclass(frozen=True)
class EntitySpan:
    start: int  # word index, inclusive
    end: int    # word index, exclusive
    type: str = ""

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError("need 0 <= start < end")


def _parse_label(label: str) -> tuple[str, str]:
    """Split "B-Chem" -> ("B", "Chem"); bare "B"/"I" -> empty type."""
    if label == "O":
        return "O", ""
    head, dash, entity_type = label.partition("-")
    if head in ("B", "I") and (not dash or entity_type):
        return head, entity_type
    raise ValueError(f"unrecognized label {label!r}")


class LabelSet:
    """Contiguous label ids with "O" fixed at id 0, the rest sorted."""

    def __init__(self, labels):
        observed = set(labels) | {"O"}
        for label in observed:
            head, entity_type = _parse_label(label)
            if head == "I":
                required = f"B-{entity_type}" if entity_type else "B"
                if required not in observed:
                    raise ValueError(f"label {label!r} has no matching B label")
        self.labels = ("O",) + tuple(sorted(observed - {"O"}))
        self._ids = {label: i for i, label in enumerate(self.labels)}

    def id_of(self, label: str) -> int:
        return self._ids[label]

    def label_of(self, label_id: int) -> str:
        return self.labels[label_id]

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelSet) and self.labels == other.labels

    def __repr__(self) -> str:
        return f"LabelSet({list(self.labels)!r})"


def read_conll(path) -> tuple[list[NerExample], LabelSet]:
    """Parse token-per-line files: first column is the word, last the label,
    blank lines separate sentences, -DOCSTART- lines are skipped."""
    path = Path(path)
    examples: list[NerExample] = []
    words: list[str] = []
    labels: list[str] = []
    first_line_of: dict[str, int] = {}

    def flush():
        if words:
            examples.append(NerExample(words=list(words), labels=list(labels)))
            words.clear()
            labels.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped:
                flush()
                continue
            if stripped.startswith("-DOCSTART-"):
                continue
            columns = stripped.split()
            if len(columns) < 2:
                raise ConllError(f"{path}:{lineno}: missing label column")
            word, label = columns[0], columns[-1]
            try:
                _parse_label(label)
            except ValueError as exc:
                raise ConllError(f"{path}:{lineno}: {exc}")
            first_line_of.setdefault(label, lineno)
            words.append(word)
            labels.append(label)
    flush()

    try:
        label_set = LabelSet(first_line_of)
    except ValueError as exc:
        bad = next(
            (lab for lab in sorted(first_line_of) if str(exc).startswith(f"label {lab!r}")),
            None,
        )
        where = f":{first_line_of[bad]}" if bad else ""
        raise ConllError(f"{path}{where}: {exc}")
    return examples, label_set


# ---------------------------------------------------------------------------
# subword alignment
# ---------------------------------------------------------------------------

def align_subwords(
    example: NerExample,
    vocab: Vocab,
    label_set: LabelSet,
    max_len: int,
    lowercase: bool = False,
    encode_fn=None,
) -> tuple[InputSequence, list[int]]:
    """Encode words to pieces and label only each word's first piece.

    Returns the padded model input plus per-position label ids where
    continuation pieces, [CLS], [SEP] and [PAD] carry the ignored id.
    Over-length sentences keep whole leading words only.
    """
    if not example.words:
        raise ValueError("example has no words")
    encode = encode_fn if encode_fn is not None else vocab.encode
    budget = max_len - 2  # [CLS] ... [SEP]
    if budget < 1:
        raise ValueError("max_len leaves no room for content")

    token_ids = [CLS_ID]
    label_ids = [ops.IGNORE_INDEX]
    used = 0
    for index, (word, label) in enumerate(zip(example.words, example.labels)):
        text = word.lower() if lowercase else word
        pieces = encode(text)
        if not pieces:
            raise ValueError(f"word {word!r} produced no tokens")
        if used + len(pieces) > budget:
            if index == 0:
                raise ValueError(
                    f"first word {word!r} alone exceeds max_len {max_len}"
                )
            break
        token_ids.extend(pieces)
        label_ids.append(label_set.id_of(label))
        label_ids.extend([ops.IGNORE_INDEX] * (len(pieces) - 1))
        used += len(pieces)
    token_ids.append(SEP_ID)
    label_ids.append(ops.IGNORE_INDEX)

    length = len(token_ids)
    pad = max_len - length
    seq = InputSequence(
        token_ids=token_ids + [PAD_ID] * pad,
        type_ids=[0] * max_len,
        attention_mask=[1] * length + [0] * pad,
    )
    return seq, label_ids + [ops.IGNORE_INDEX] * pad


def pack_ner_examples(examples, vocab, label_set, max_len,
                      lowercase=False, encode_fn=None):
    """Align a whole split into model-ready arrays.

    kept_words[i] counts the words of sentence i that survived truncation;
    downstream prediction pads the dropped tail with "O"."""
    token_rows, type_rows, mask_rows, label_rows, kept = [], [], [], [], []
    for example in examples:
        seq, label_ids = align_subwords(
            example, vocab, label_set, max_len, lowercase, encode_fn
        )
        token_rows.append(seq.token_ids)
        type_rows.append(seq.type_ids)
        mask_rows.append(seq.attention_mask)
        label_rows.append(label_ids)
        kept.append(sum(1 for lid in label_ids if lid != ops.IGNORE_INDEX))
    return {
        "token_ids": np.array(token_rows, dtype=np.int32),
        "type_ids": np.array(type_rows, dtype=np.int32),
        "attention_mask": np.array(mask_rows, dtype=np.int32),
        "label_ids": np.array(label_rows, dtype=np.int64),
        "kept_words": kept,
    }


# ---------------------------------------------------------------------------
# spans and metrics
# ---------------------------------------------------------------------------

def decode_spans(labels) -> set[EntitySpan]:
    """Maximal B(,I..) runs of one type; an orphan "I" (after O, at the
    start, or after a different type) opens a new span."""
    labels = list(labels)
    spans: set[EntitySpan] = set()
    start = None
    current_type = ""
    for i, label in enumerate(labels):
        head, entity_type = _parse_label(label)
        if head == "O":
            if start is not None:
                spans.add(EntitySpan(start, i, current_type))
                start = None
        elif head == "B" or start is None or entity_type != current_type:
            if start is not None:
                spans.add(EntitySpan(start, i, current_type))
            start = i
            current_type = entity_type
    if start is not None:
        spans.add(EntitySpan(start, len(labels), current_type))
    return spans


def spans_to_bio(spans, length: int) -> list[str]:
    """Inverse of decode_spans for non-overlapping spans."""
    labels = ["O"] * length
    for span in sorted(spans, key=lambda s: s.start):
        if span.end > length:
            raise ValueError(f"span {span} exceeds sentence length {length}")
        for i in range(span.start, span.end):
            if labels[i] != "O":
                raise ValueError("overlapping spans")
        suffix = f"-{span.type}" if span.type else ""
        labels[span.start] = "B" + suffix
        for i in range(span.start + 1, span.end):
            labels[i] = "I" + suffix
    return labels


@dataclass
class MetricTriple:
    precision: float
    recall: float
    f1: float
    tp: int
    gold: int
    pred: int


@dataclass
class EntityMetrics:
    overall: MetricTriple
    per_type: dict[str, MetricTriple]


def _triple(tp: int, gold: int, pred: int) -> MetricTriple:
    precision = tp / pred if pred else 0.0
    recall = tp / gold if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricTriple(precision, recall, f1, tp, gold, pred)


def evaluate_entities(gold, pred) -> EntityMetrics:
    """Exact-match span scoring, micro-averaged; inputs are parallel lists of
    per-sentence label sequences."""
    if len(gold) != len(pred):
        raise ValueError(f"gold has {len(gold)} sentences, pred has {len(pred)}")
    counts: dict[str, list[int]] = {}  # type -> [tp, gold, pred]
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ValueError(
                f"sentence {i}: gold length {len(g)} != pred length {len(p)}"
            )
        gold_spans = decode_spans(g)
        pred_spans = decode_spans(p)
        matched = gold_spans & pred_spans
        for span in gold_spans:
            counts.setdefault(span.type, [0, 0, 0])[1] += 1
        for span in pred_spans:
            counts.setdefault(span.type, [0, 0, 0])[2] += 1
        for span in matched:
            counts[span.type][0] += 1
    tp = sum(c[0] for c in counts.values())
    gold_n = sum(c[1] for c in counts.values())
    pred_n = sum(c[2] for c in counts.values())
    per_type = {t: _triple(*counts[t]) for t in sorted(counts)}
    return EntityMetrics(overall=_triple(tp, gold_n, pred_n), per_type=per_type)


def metrics_report(metrics: EntityMetrics) -> str:
    """Human-readable table; all scores micro-averaged over spans."""
    lines = [
        "entity-level exact match (micro-averaged)",
        f"{'':12s} {'precision':>9s} {'recall':>9s} {'f1':>9s} {'gold':>6s} {'pred':>6s}",
    ]

    def row(name, t):
        return (f"{name:12s} {t.precision:9.4f} {t.recall:9.4f} {t.f1:9.4f} "
                f"{t.gold:6d} {t.pred:6d}")

    lines.append(row("overall", metrics.overall))
    for entity_type, triple in metrics.per_type.items():
        lines.append(row(entity_type or "(untyped)", triple))
    return "\n".join(lines) + "\n"


def metrics_keyvalues(metrics: EntityMetrics) -> str:
    """Machine-readable key=value lines with 4-decimal values."""
    lines = [
        f"precision={metrics.overall.precision:.4f}",
        f"recall={metrics.overall.recall:.4f}",
        f"f1={metrics.overall.f1:.4f}",
        "averaging=micro",
    ]
    for entity_type, triple in metrics.per_type.items():
        for field in ("precision", "recall", "f1"):
            lines.append(f"type.{entity_type}.{field}={getattr(triple, field):.4f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# prediction and fine-tuning
# ---------------------------------------------------------------------------

def predict_labels(params, config, label_set, packed, batch_size=16) -> list[list[str]]:
    """Argmax tags at word-initial positions, one list per sentence."""
    out = []
    n = packed["token_ids"].shape[0]
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        logits = token_logits(
            params, config,
            packed["token_ids"][lo:hi],
            packed["type_ids"][lo:hi],
            packed["attention_mask"][lo:hi],
        )
        for row in range(hi - lo):
            positions = np.nonzero(packed["label_ids"][lo + row] != ops.IGNORE_INDEX)[0]
            best = logits[row, positions].argmax(axis=1)
            out.append([label_set.label_of(int(b)) for b in best])
    return out


def evaluate_split(params, config, label_set, packed, examples,
                   batch_size=16) -> EntityMetrics:
    """Predictions vs gold; words truncated away during alignment count as
    unpredicted ("O")."""
    preds = predict_labels(params, config, label_set, packed, batch_size)
    padded = [
        pred + ["O"] * (len(example.words) - len(pred))
        for pred, example in zip(preds, examples)
    ]
    gold = [list(example.labels) for example in examples]
    return evaluate_entities(gold, padded)


@dataclass
class FinetuneResult:
    params: dict
    config: ModelConfig
    label_set: LabelSet
    best_step: int
    best_dev_f1: float
    history: list[tuple[int, float]]
    test_metrics: EntityMetrics | None


def finetune(
    pretrained: Checkpoint,
    vocab: Vocab,
    train_examples,
    dev_examples,
    test_examples=None,
    *,
    seed: int = 0,
    num_steps: int = 5336,
    batch_size: int = 32,
    eval_batch_size: int = 16,
    peak_lr: float = 1e-5,
    warmup_steps: int = 320,
    eval_every: int = 200,
    weight_decay: float = DEFAULT_WEIGHT_DECAY,
    max_len: int = 128,
    lowercase: bool = False,
    encode_fn=None,
    log=None,
    out_dir=None,
) -> FinetuneResult:
    """AdamW fine-tuning with dev F1 every eval_every steps; the best-dev
    parameter snapshot is kept, scored on test, and optionally written to
    out_dir/best.ckpt. The pretrained checkpoint is never modified."""
    if vocab.size != pretrained.config.vocab_size:
        raise ValueError(
            f"vocabulary size {vocab.size} does not match checkpoint "
            f"vocab_size {pretrained.config.vocab_size}"
        )
    if not train_examples or not dev_examples:
        raise ValueError("need nonempty train and dev example lists")
    config = pretrained.config
    label_set = LabelSet(
        label
        for split in (train_examples, dev_examples, test_examples or [])
        for example in split
        for label in example.labels
    )

    # fresh head on top of copied encoder weights; mlm/sop/pooler are dropped
    params = {
        name: arr.copy()
        for name, arr in pretrained.params.items()
        if not name.startswith(("mlm_", "sop_", "pooler_"))
    }
    head_rng = RngStream(seed).child("ner-init")
    dtype = params["token_embedding"].dtype
    params["ner_weight"] = truncated_normal(
        head_rng, (config.hidden_size, len(label_set)), 0.02, dtype=dtype
    )
    params["ner_bias"] = np.zeros(len(label_set), dtype=dtype)

    train_packed = pack_ner_examples(
        train_examples, vocab, label_set, max_len, lowercase, encode_fn
    )
    dev_packed = pack_ner_examples(
        dev_examples, vocab, label_set, max_len, lowercase, encode_fn
    )

    schedule = Schedule(peak_lr, warmup_steps, num_steps)
    state = OptimizerState.for_params(params)
    use_dropout = config.dropout_rate > 0
    n_train = len(train_examples)
    history: list[tuple[int, float]] = []
    best_f1 = -1.0
    best_step = 0
    best_params = {name: arr.copy() for name, arr in params.items()}

    for step in range(num_steps):
        idx = np.array(batch_indices(seed, step, n_train, batch_size))
        dropout_rng = (
            RngStream(seed).child("dropout").child(f"step{step}") if use_dropout else None
        )
        loss, grads = ner_loss_and_grads(
            params, config,
            train_packed["token_ids"][idx],
            train_packed["type_ids"][idx],
            train_packed["attention_mask"][idx],
            train_packed["label_ids"][idx],
            training=use_dropout,
            dropout_rng=dropout_rng,
        )
        adamw_step(state, params, grads, lr_at(schedule, step + 1), weight_decay)
        done = step + 1
        if log is not None:
            log(f"{done}\tner_loss\t{loss:.6f}")
        if done % eval_every == 0 or done == num_steps:
            dev_metrics = evaluate_split(
                params, config, label_set, dev_packed, dev_examples, eval_batch_size
            )
            f1 = dev_metrics.overall.f1
            history.append((done, f1))
            if log is not None:
                log(f"{done}\tdev_f1\t{f1:.4f}")
            if f1 > best_f1:
                best_f1 = f1
                best_step = done
                best_params = {name: arr.copy() for name, arr in params.items()}

    test_metrics = None
    if test_examples:
        test_packed = pack_ner_examples(
            test_examples, vocab, label_set, max_len, lowercase, encode_fn
        )
        test_metrics = evaluate_split(
            best_params, config, label_set, test_packed, test_examples, eval_batch_size
        )
    if out_dir is not None:
        save_checkpoint(
            Path(out_dir) / "best.ckpt", config, best_params,
            step=best_step, kind="ner", labels=list(label_set.labels),
        )
    return FinetuneResult(
        params=best_params,
        config=config,
        label_set=label_set,
        best_step=best_step,
        best_dev_f1=best_f1,
        history=history,
        test_metrics=test_metrics,
    )


@dataclass
class DatasetStats:
    sentences: int
    tokens: int
    annotations: int


def dataset_stats(path) -> DatasetStats:
    """Sentence/token counts plus gold span count (the annotation total)."""
    examples, _ = read_conll(path)
    return DatasetStats(
        sentences=len(examples),
        tokens=sum(len(example.words) for example in examples),
        annotations=sum(len(decode_spans(example.labels)) for example in examples),
    )
