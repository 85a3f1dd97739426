"""Dense kernels with hand-written backward passes.

Every primitive the encoder needs lives here as a ``*_forward`` /
``*_backward`` pair. Forward returns ``(out, cache)``; backward consumes the
cache plus the upstream gradient and returns gradients in input order. There
is no autodiff graph: callers compose backward passes by hand, in reverse.

Precision follows the inputs (float32 for training, float64 for gradient
checks); no kernel upcasts.
"""

from __future__ import annotations

import numpy as np
from scipy import special

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def assert_all_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {name}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def gelu(x: np.ndarray) -> np.ndarray:
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    return 0.5 * x * (1.0 + special.erf(x * _INV_SQRT2))


def gelu_forward(x):
    return gelu(x), x


def gelu_backward(cache, d_out):
    x = cache
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return d_out * (cdf + x * pdf)


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(cache, d_out):
    y = cache
    return d_out * (1.0 - y * y)


# ---------------------------------------------------------------------------
# linear / embedding
# ---------------------------------------------------------------------------

def linear_forward(x, w, b=None):
    """x (..., n_in) @ w (n_in, n_out) + b."""
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w, b is not None)


def linear_backward(cache, d_out):
    x, w, has_bias = cache
    d_x = d_out @ w.T
    d_w = x.reshape(-1, x.shape[-1]).T @ d_out.reshape(-1, d_out.shape[-1])
    d_b = d_out.reshape(-1, d_out.shape[-1]).sum(axis=0) if has_bias else None
    return d_x, d_w, d_b


def embedding_forward(table, ids):
    """Row lookup: table (n, dim), ids any integer shape."""
    ids = np.asarray(ids)
    return table[ids], (table.shape, table.dtype, ids)


def embedding_backward(cache, d_out):
    shape, dtype, ids = cache
    d_table = np.zeros(shape, dtype=dtype)
    np.add.at(d_table, ids.reshape(-1), d_out.reshape(-1, shape[1]))
    return d_table


# ---------------------------------------------------------------------------
# layer norm
# ---------------------------------------------------------------------------

def layer_norm_forward(x, gain, bias, eps=1e-12):
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    if x.shape[-1] == 0:
        raise ValueError("layer_norm over zero-length last axis")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    y = x_hat * gain + bias
    return y, (x_hat, inv_std, gain)


def layer_norm(x, gain, bias, eps=1e-12):
    return layer_norm_forward(x, gain, bias, eps)[0]


def layer_norm_backward(cache, d_out):
    x_hat, inv_std, gain = cache
    n = x_hat.shape[-1]
    d_gain = (d_out * x_hat).reshape(-1, n).sum(axis=0)
    d_bias = d_out.reshape(-1, n).sum(axis=0)
    d_xhat = d_out * gain
    # dx = inv_std * (d_xhat - mean(d_xhat) - x_hat * mean(d_xhat * x_hat))
    d_x = inv_std * (
        d_xhat
        - d_xhat.mean(axis=-1, keepdims=True)
        - x_hat * (d_xhat * x_hat).mean(axis=-1, keepdims=True)
    )
    return d_x, d_gain, d_bias


# ---------------------------------------------------------------------------
# softmax / cross-entropy
# ---------------------------------------------------------------------------

def softmax_forward(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    return p, (p, axis)


def softmax(x, axis=-1):
    return softmax_forward(x, axis)[0]


def softmax_backward(cache, d_out):
    p, axis = cache
    return p * (d_out - (p * d_out).sum(axis=axis, keepdims=True))


IGNORE_INDEX = -100


def softmax_cross_entropy(logits, target_ids, ignore_index=IGNORE_INDEX):
    """Mean negative log-probability over rows whose target != ignore_index."""
    return softmax_cross_entropy_with_grad(logits, target_ids, ignore_index)[0]


def softmax_cross_entropy_with_grad(logits, target_ids, ignore_index=IGNORE_INDEX):
    """Returns (loss, d_loss/d_logits). Stabilized by max-subtraction."""
    targets = np.asarray(target_ids)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError("logits must be (rows, classes) with one target per row")
    keep = targets != ignore_index
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise ValueError("all rows ignored: mean loss undefined")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z

    rows = np.nonzero(keep)[0]
    picked = log_probs[rows, targets[rows]]
    loss = float(-picked.sum() / n_keep)

    d_logits = np.exp(log_probs)
    d_logits[rows, targets[rows]] -= 1.0
    d_logits[~keep] = 0.0
    d_logits /= n_keep
    return loss, d_logits.astype(logits.dtype, copy=False)
