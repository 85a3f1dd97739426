"""Deterministic pretraining loop over packed MLM+SOP examples.

Batch composition at every step is a pure function of (seed, step), so a run
resumed from a step-N checkpoint replays exactly the batches an uninterrupted
run would have seen. Loss logs are line-oriented "step<TAB>metric<TAB>value".
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .checkpoint import save_checkpoint
from .model import (
    ModelConfig,
    PretrainLosses,
    init_parameters,
    pack_inputs,
    pack_pretrain_batch,
    pretrain_loss,
    pretrain_loss_and_grads,
    sop_logits,
)
from .optim import (
    DEFAULT_WEIGHT_DECAY,
    OptimizerState,
    Schedule,
    adamw_step,
    lamb_step,
    lr_at,
)
from .rng import RngStream

_CHECKPOINT_RE = re.compile(r"^checkpoint-(\d+)\.ckpt$")


@dataclass
class TrainResult:
    params: dict
    optim: OptimizerState
    step: int
    last: PretrainLosses | None


def batch_indices(seed: int, step: int, num_examples: int, batch_size: int) -> list[int]:
    """Example indices for one step; samples without replacement when the pool
    is large enough, otherwise draws with replacement."""
    r = RngStream(seed).child("batches").child(f"step{step}")
    if batch_size <= num_examples:
        return r.sample(num_examples, batch_size)
    return [r.randint(num_examples) for _ in range(batch_size)]


def checkpoint_path(directory, step: int) -> Path:
    return Path(directory) / f"checkpoint-{step:06d}.ckpt"


def latest_checkpoint(directory) -> Path | None:
    best = None
    best_step = -1
    for entry in Path(directory).iterdir():
        match = _CHECKPOINT_RE.match(entry.name)
        if match and int(match.group(1)) > best_step:
            best_step = int(match.group(1))
            best = entry
    return best


def train(
    examples,
    config: ModelConfig,
    *,
    seed: int,
    num_steps: int,
    batch_size: int,
    schedule: Schedule,
    optimizer: str = "lamb",
    weight_decay: float = DEFAULT_WEIGHT_DECAY,
    start: tuple | None = None,
    log=None,
    checkpoint_every: int = 0,
    checkpoint_dir=None,
) -> TrainResult:
    """Run (or resume, via start=(params, optim, step)) the pretraining loop."""
    if not examples:
        raise ValueError("no pretraining examples")
    if num_steps > schedule.total_steps:
        raise ValueError("num_steps exceeds schedule.total_steps")
    if optimizer == "lamb":
        step_fn = lamb_step
    elif optimizer == "adamw":
        step_fn = adamw_step
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")

    if start is None:
        params = init_parameters(config, RngStream(seed).child("init"))
        state = OptimizerState.for_params(params)
        first = 0
    else:
        params, state, first = start

    use_dropout = config.dropout_rate > 0
    last = None
    for step in range(first, num_steps):
        idx = batch_indices(seed, step, len(examples), batch_size)
        batch = pack_pretrain_batch([examples[i] for i in idx])
        lr = lr_at(schedule, step + 1)
        dropout_rng = (
            RngStream(seed).child("dropout").child(f"step{step}") if use_dropout else None
        )
        losses, grads = pretrain_loss_and_grads(
            params, config, batch, training=use_dropout, dropout_rng=dropout_rng
        )
        step_fn(state, params, grads, lr, weight_decay)
        last = losses
        done = step + 1
        if log is not None:
            log(f"{done}\tlr\t{lr:.8f}")
            log(f"{done}\tmlm_loss\t{losses.mlm_loss:.6f}")
            log(f"{done}\tsop_loss\t{losses.sop_loss:.6f}")
            log(f"{done}\ttotal_loss\t{losses.total:.6f}")
        if checkpoint_dir is not None and checkpoint_every and done % checkpoint_every == 0:
            save_checkpoint(checkpoint_path(checkpoint_dir, done), config, params,
                            step=done, kind="pretrain", optim=state)

    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_path(checkpoint_dir, num_steps), config, params,
                        step=num_steps, kind="pretrain", optim=state)
    return TrainResult(params=params, optim=state, step=num_steps, last=last)


def _chunks(items, size):
    for lo in range(0, len(items), size):
        yield items[lo:lo + size]


def evaluate_pretrain(params, config, examples, batch_size: int = 32) -> PretrainLosses:
    """Per-prediction MLM loss and per-example SOP loss over a fixed set."""
    if not examples:
        raise ValueError("no examples to evaluate")
    mlm_sum = sop_sum = 0.0
    mlm_n = sop_n = 0
    for chunk in _chunks(examples, batch_size):
        batch = pack_pretrain_batch(chunk)
        losses = pretrain_loss(params, config, batch)
        rows = batch["mlm_rows"].size
        mlm_sum += losses.mlm_loss * rows
        mlm_n += rows
        sop_sum += losses.sop_loss * len(chunk)
        sop_n += len(chunk)
    return PretrainLosses(mlm_loss=mlm_sum / mlm_n, sop_loss=sop_sum / sop_n)


def sop_accuracy(params, config, examples, batch_size: int = 32) -> float:
    """Fraction of examples whose order/swapped call matches the label."""
    if not examples:
        raise ValueError("no examples to evaluate")
    correct = 0
    for chunk in _chunks(examples, batch_size):
        token_ids, type_ids, mask = pack_inputs([ex.input for ex in chunk])
        logits = sop_logits(params, config, token_ids, type_ids, mask)
        preds = logits.argmax(axis=1)
        correct += sum(int(p == ex.sop_label) for p, ex in zip(preds, chunk))
    return correct / len(examples)
