"""Command-line pipeline driver.

Subcommands: prep-corpus, build-vocab, pretrain, finetune, evaluate,
predict, stats. Every command writes only under its --out directory, which
is guarded by a .lock file (one run at a time) and an INCOMPLETE marker
that is removed on success — if a run dies, the marker stays behind.

Heavy imports happen inside the command handlers so that --threads can pin
BLAS/OpenMP thread counts via environment variables before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from .config import ConfigError, effective_text, model_config_from, parse_config


class CliError(Exception):
    """User-facing one-line failure."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nanoalbert",
        description="Pretrain, fine-tune, and evaluate a small shared-block "
                    "transformer for masked-LM + sentence-order pretraining "
                    "and BIO-tag entity recognition.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", required=True, help="output directory (created)")
        p.add_argument("--seed", type=int, help="override the seed key")
        p.add_argument("--threads", type=int,
                       help="BLAS/OpenMP thread count (set before numpy loads)")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config overrides, highest precedence")
        return p

    p = add("prep-corpus", "clean raw text into sentence-per-line corpus form")
    p.add_argument("--inputs", nargs="+", required=True,
                   help="raw UTF-8 text files, one document per file")

    p = add("build-vocab", "train the byte-pair vocabulary")
    p.add_argument("--corpus", required=True, help="prepared corpus file")

    p = add("pretrain", "run masked-LM + sentence-order pretraining")
    p.add_argument("--corpus", required=True, help="prepared corpus file")
    p.add_argument("--vocab", required=True,
                   help="directory holding vocab.txt and merges.txt")

    p = add("finetune", "fine-tune a pretrained checkpoint for tagging")
    p.add_argument("--checkpoint", required=True, help="pretrained checkpoint")
    p.add_argument("--vocab", required=True,
                   help="directory holding vocab.txt and merges.txt")
    p.add_argument("--train", required=True, help="CoNLL training file")
    p.add_argument("--dev", required=True, help="CoNLL development file")
    p.add_argument("--test", help="CoNLL test file")

    p = add("evaluate", "entity-level P/R/F1 of predictions against gold")
    p.add_argument("--gold", required=True, help="CoNLL gold file")
    p.add_argument("--pred", required=True, help="CoNLL predictions file")

    p = add("predict", "tag plain text with a fine-tuned checkpoint")
    p.add_argument("--checkpoint", required=True, help="fine-tuned checkpoint")
    p.add_argument("--vocab", required=True,
                   help="directory holding vocab.txt and merges.txt")
    p.add_argument("--input", required=True,
                   help="text file, one sentence per line, words space-separated")

    p = add("stats", "corpus or dataset statistics")
    p.add_argument("--corpus", help="prepared corpus file")
    p.add_argument("--conll", help="CoNLL dataset file")
    return parser


@contextmanager
def _run_dir(out, config_text: str):
    """Lock the output directory, drop effective.cfg, manage INCOMPLETE."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError(
            f"output directory {out} is in use by another run "
            f"(remove {lock} if that run is dead)"
        ) from None
    os.write(fd, f"{os.getpid()}\n".encode())
    os.close(fd)
    marker = out / "INCOMPLETE"
    try:
        marker.write_text("run started; this marker is removed on success\n")
        (out / "effective.cfg").write_text(config_text)
        yield out
        marker.unlink()
    finally:
        lock.unlink(missing_ok=True)


def _load_vocab_dir(vocab_dir):
    from .bpe import load_vocab

    vocab_dir = Path(vocab_dir)
    return load_vocab(vocab_dir / "vocab.txt", vocab_dir / "merges.txt")


def _cmd_prep_corpus(args, cfg, out: Path) -> None:
    from .corpus import corpus_stats, preprocess_files

    text = preprocess_files(args.inputs)
    (out / "corpus.txt").write_text(text, encoding="utf-8")
    stats = corpus_stats(text)
    print(f"documents={stats.documents} sentences={stats.sentences} words={stats.words}")


def _cmd_build_vocab(args, cfg, out: Path) -> None:
    from .bpe import save_vocab, train_vocab

    text = Path(args.corpus).read_text(encoding="utf-8")
    vocab = train_vocab(text, cfg.vocab_size)
    save_vocab(vocab, out / "vocab.txt", out / "merges.txt")
    print(f"vocab_size={vocab.size} merges={len(vocab.merges)}")


def _pretrain_examples(args, cfg, out: Path, vocab):
    from .corpus import build_pretrain_examples, read_examples, split_corpus, write_examples
    from .rng import RngStream

    cache = out / "examples.bin"
    if cache.exists():
        return read_examples(cache)
    text = Path(args.corpus).read_text(encoding="utf-8")
    docs = split_corpus(text)
    examples = build_pretrain_examples(
        docs, vocab, RngStream(cfg.seed).child("examples"),
        max_len=cfg.max_seq_length,
        mask_rate=cfg.mask_rate,
        max_predictions=cfg.max_predictions_per_seq,
        dup_factor=cfg.dup_factor,
    )
    write_examples(cache, examples)
    return examples


def _cmd_pretrain(args, cfg, out: Path) -> None:
    from .checkpoint import load_checkpoint
    from .optim import Schedule, rescaled_peak
    from .pretrain import latest_checkpoint, train

    model_config = model_config_from(cfg)
    if cfg.max_seq_length > model_config.max_positions:
        raise CliError("max_seq_length exceeds max_positions")
    vocab = _load_vocab_dir(args.vocab)
    if vocab.size != model_config.vocab_size:
        raise CliError(
            f"vocabulary has {vocab.size} pieces but config says "
            f"vocab_size={model_config.vocab_size}"
        )
    examples = _pretrain_examples(args, cfg, out, vocab)

    peak = cfg.learning_rate
    if cfg.rescale_learning_rate:
        peak = rescaled_peak(peak)
    schedule = Schedule(peak, cfg.warmup_steps, cfg.training_steps)

    start = None
    resume_from = latest_checkpoint(out)
    if resume_from is not None:
        snapshot = load_checkpoint(resume_from)
        if snapshot.step >= cfg.training_steps:
            print(f"already trained to step {snapshot.step}; nothing to do")
            return
        if snapshot.optim is None:
            raise CliError(f"{resume_from} has no optimizer state; cannot resume")
        start = (snapshot.params, snapshot.optim, snapshot.step)
        print(f"resuming from step {snapshot.step}")

    with open(out / "train.log", "a", encoding="utf-8") as log_file:
        result = train(
            examples, model_config,
            seed=cfg.seed,
            num_steps=cfg.training_steps,
            batch_size=cfg.train_batch_size,
            schedule=schedule,
            optimizer=cfg.optimizer,
            weight_decay=cfg.weight_decay,
            start=start,
            log=lambda line: print(line, file=log_file),
            checkpoint_every=cfg.save_checkpoint,
            checkpoint_dir=out,
        )
    last = result.last
    print(f"steps={result.step} mlm_loss={last.mlm_loss:.6f} sop_loss={last.sop_loss:.6f}")


def _cmd_finetune(args, cfg, out: Path) -> None:
    from .checkpoint import load_checkpoint
    from .ner import finetune, metrics_keyvalues, metrics_report, read_conll

    snapshot = load_checkpoint(args.checkpoint)
    if cfg.finetune_max_seq_length > snapshot.config.max_positions:
        raise CliError("finetune_max_seq_length exceeds checkpoint max_positions")
    vocab = _load_vocab_dir(args.vocab)
    train_examples, _ = read_conll(args.train)
    dev_examples, _ = read_conll(args.dev)
    test_examples = None
    if args.test:
        test_examples, _ = read_conll(args.test)

    with open(out / "train.log", "a", encoding="utf-8") as log_file:
        result = finetune(
            snapshot, vocab, train_examples, dev_examples, test_examples,
            seed=cfg.seed,
            num_steps=cfg.finetune_steps,
            batch_size=cfg.finetune_batch_size,
            eval_batch_size=cfg.finetune_eval_batch_size,
            peak_lr=cfg.finetune_learning_rate,
            warmup_steps=cfg.finetune_warmup_steps,
            eval_every=cfg.save_checkpoint,
            weight_decay=cfg.weight_decay,
            max_len=cfg.finetune_max_seq_length,
            lowercase=cfg.lowercase,
            log=lambda line: print(line, file=log_file),
            out_dir=out,
        )
    print(f"best_step={result.best_step} dev_f1={result.best_dev_f1:.4f}")
    if result.test_metrics is not None:
        (out / "metrics.txt").write_text(metrics_report(result.test_metrics))
        (out / "metrics.kv").write_text(metrics_keyvalues(result.test_metrics))
        print(f"test_f1={result.test_metrics.overall.f1:.4f}")


def _cmd_evaluate(args, cfg, out: Path) -> None:
    from .ner import evaluate_entities, metrics_keyvalues, metrics_report, read_conll

    gold_examples, _ = read_conll(args.gold)
    pred_examples, _ = read_conll(args.pred)
    metrics = evaluate_entities(
        [example.labels for example in gold_examples],
        [example.labels for example in pred_examples],
    )
    (out / "metrics.txt").write_text(metrics_report(metrics))
    (out / "metrics.kv").write_text(metrics_keyvalues(metrics))
    overall = metrics.overall
    print(f"precision={overall.precision:.4f} recall={overall.recall:.4f} "
          f"f1={overall.f1:.4f}")


def _cmd_predict(args, cfg, out: Path) -> None:
    from .checkpoint import load_checkpoint
    from .ner import LabelSet, NerExample, pack_ner_examples, predict_labels

    snapshot = load_checkpoint(args.checkpoint)
    if snapshot.labels is None or "ner_weight" not in snapshot.params:
        raise CliError("checkpoint has no tagging head; fine-tune first")
    label_set = LabelSet(snapshot.labels)
    vocab = _load_vocab_dir(args.vocab)

    examples = []
    with open(args.input, encoding="utf-8") as fh:
        for line in fh:
            words = line.split()
            if words:
                examples.append(NerExample(words=words, labels=["O"] * len(words)))
    if not examples:
        raise CliError(f"{args.input} contains no sentences")

    packed = pack_ner_examples(
        examples, vocab, label_set, cfg.finetune_max_seq_length,
        lowercase=cfg.lowercase,
    )
    predictions = predict_labels(
        snapshot.params, snapshot.config, label_set, packed,
        cfg.finetune_eval_batch_size,
    )
    blocks = []
    for example, labels in zip(examples, predictions):
        labels = labels + ["O"] * (len(example.words) - len(labels))
        blocks.append("\n".join(
            f"{word}\t{label}" for word, label in zip(example.words, labels)
        ))
    (out / "predictions.conll").write_text("\n\n".join(blocks) + "\n", encoding="utf-8")
    print(f"sentences={len(examples)}")


def _cmd_stats(args, cfg, out: Path) -> None:
    if bool(args.corpus) == bool(args.conll):
        raise CliError("pass exactly one of --corpus or --conll")
    if args.corpus:
        from .corpus import corpus_stats

        stats = corpus_stats(Path(args.corpus).read_text(encoding="utf-8"))
        lines = [
            f"documents={stats.documents}",
            f"sentences={stats.sentences}",
            f"words={stats.words}",
        ]
    else:
        from .ner import dataset_stats

        stats = dataset_stats(args.conll)
        lines = [
            f"sentences={stats.sentences}",
            f"tokens={stats.tokens}",
            f"annotations={stats.annotations}",
        ]
    (out / "stats.txt").write_text("\n".join(lines) + "\n")
    print(" ".join(lines))


_HANDLERS = {
    "prep-corpus": _cmd_prep_corpus,
    "build-vocab": _cmd_build_vocab,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "stats": _cmd_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 1
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = parse_config(args.config, overrides)
        with _run_dir(args.out, effective_text(cfg)) as out:
            _HANDLERS[args.command](args, cfg, out)
        return 0
    except (CliError, ConfigError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
