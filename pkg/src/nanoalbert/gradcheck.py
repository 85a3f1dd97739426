"""Finite-difference verification of analytic gradients.

``grad_check`` compares hand-written backward passes against central
differences. The loss function under test must be deterministic and evaluated
in float64; the numeric side never touches the analytic code path.
"""

from __future__ import annotations

import numpy as np

DEFAULT_STEP = 1e-5


def grad_check(fn, inputs, tolerance, step=DEFAULT_STEP, floor=1e-3):
    """True iff analytic and central-difference gradients agree elementwise.

    fn: callable taking a list of float64 arrays, returning
        (scalar loss, list of gradient arrays in input order).
    Relative error per element is |a - n| / max(|a|, |n|, floor); the floor
    turns the test absolute for near-zero gradients, where central
    differences bottom out around 1e-10.
    """
    return _max_rel_error(fn, inputs, step, floor) < tolerance


def _max_rel_error(fn, inputs, step, floor):
    inputs = [np.asarray(x) for x in inputs]
    for x in inputs:
        if x.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
    _, analytic = fn(inputs)
    worst = 0.0
    for i, x in enumerate(inputs):
        a = np.asarray(analytic[i])
        if a.shape != x.shape:
            raise ValueError(f"gradient {i} shape {a.shape} != input shape {x.shape}")
        flat = x.reshape(-1)
        a_flat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up, _ = fn(inputs)
            flat[j] = orig - step
            down, _ = fn(inputs)
            flat[j] = orig
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(a_flat[j]), abs(numeric), floor)
            worst = max(worst, abs(a_flat[j] - numeric) / denom)
    return worst


def max_grad_error(fn, inputs, step=DEFAULT_STEP, floor=1e-3):
    """Worst relative error across all elements; handy when a check fails."""
    return _max_rel_error(fn, inputs, step, floor)
