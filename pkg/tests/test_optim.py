"""Optimizer math against hand-computed single-step values.

First-step algebra used below (beta1 0.9, beta2 0.999, eps 1e-6): after bias
correction m_hat = g and v_hat = g^2, so the Adam direction is
g / (|g| + eps) ~ sign(g).

  adamw: p=1, g=0.5, lr=0.01, wd=0.01
         -> 1 - 0.01*(0.999998 + 0.01) = 0.98990002
  lamb:  p=2, g=1, lr=0.1, wd=0
         -> trust ratio 2/0.999999, p' = 2 - 0.1*ratio*u = 1.8000000
"""

import numpy as np
import pytest

from nanoalbert.optim import (
    OptimizerState,
    Schedule,
    adamw_step,
    decays,
    lamb_step,
    lr_at,
    rescaled_peak,
)


def one_param(value, name="w_weight"):
    params = {name: np.array([float(value)])}
    return params, OptimizerState.for_params(params)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule(peak_lr=0.0, warmup_steps=10, total_steps=100)
    with pytest.raises(ValueError):
        Schedule(peak_lr=0.1, warmup_steps=0, total_steps=100)
    with pytest.raises(ValueError):
        Schedule(peak_lr=0.1, warmup_steps=100, total_steps=100)


def test_lr_ramp_peak_and_decay():
    sched = Schedule(peak_lr=0.1, warmup_steps=10, total_steps=100)
    assert lr_at(sched, 0) == 0.0
    assert abs(lr_at(sched, 5) - 0.05) < 1e-15
    assert lr_at(sched, 10) == 0.1  # peak lands exactly on the warmup step
    assert abs(lr_at(sched, 55) - 0.05) < 1e-15  # halfway down
    assert lr_at(sched, 100) == 0.0


def test_lr_at_production_schedule():
    sched = Schedule(peak_lr=0.00176, warmup_steps=3125, total_steps=200_000)
    # 0.00176 * 98438 / 196875 = 0.000880004...
    assert abs(lr_at(sched, 101_562) - 0.00088) < 1e-6
    assert lr_at(sched, 3125) == 0.00176


def test_lr_out_of_range_rejected():
    sched = Schedule(peak_lr=0.1, warmup_steps=10, total_steps=100)
    with pytest.raises(ValueError):
        lr_at(sched, -1)
    with pytest.raises(ValueError):
        lr_at(sched, 101)


def test_lr_is_maximal_at_warmup():
    sched = Schedule(peak_lr=0.3, warmup_steps=7, total_steps=50)
    values = [lr_at(sched, s) for s in range(51)]
    assert max(values) == values[7] == 0.3


def test_rescaled_peak_values():
    # 2^-1.5 = 0.35355339
    assert abs(rescaled_peak(1.0) - 0.353553) < 1e-6
    assert round(rescaled_peak(0.00176), 5) == 0.00062
    with pytest.raises(ValueError):
        rescaled_peak(0.0)


# ---------------------------------------------------------------------------
# single-step worked examples
# ---------------------------------------------------------------------------

def test_adamw_first_step_worked_example():
    params, state = one_param(1.0)
    adamw_step(state, params, {"w_weight": np.array([0.5])}, lr=0.01, weight_decay=0.01)
    assert abs(params["w_weight"][0] - 0.98990002) < 1e-7
    assert state.t == 1


def test_adamw_pure_decay():
    params, state = one_param(1.0)
    adamw_step(state, params, {"w_weight": np.array([0.0])}, lr=0.01, weight_decay=0.01)
    assert abs(params["w_weight"][0] - 0.9999) < 1e-12


def test_adamw_skips_decay_for_bias_and_gain():
    for name in ("x_bias", "ln_gain"):
        params, state = one_param(1.0, name)
        assert not decays(name)
        adamw_step(state, params, {name: np.array([0.0])}, lr=0.01, weight_decay=0.5)
        assert params[name][0] == 1.0  # zero grad, no decay: untouched
    assert decays("x_weight") and decays("token_embedding")


def test_adamw_constant_gradient_two_steps():
    # with constant g the bias-corrected direction is g/(|g|+eps) every step
    params, state = one_param(1.0)
    for _ in range(2):
        adamw_step(state, params, {"w_weight": np.array([0.5])}, lr=0.01, weight_decay=0.0)
    assert abs(params["w_weight"][0] - 0.98000004) < 1e-7
    assert state.t == 2


def test_lamb_first_step_worked_example():
    params, state = one_param(2.0)
    lamb_step(state, params, {"w_weight": np.array([1.0])}, lr=0.1, weight_decay=0.0)
    assert abs(params["w_weight"][0] - 1.8) < 1e-3


def test_lamb_trust_ratio_is_capped_at_ten():
    params, state = one_param(100.0)
    lamb_step(state, params, {"w_weight": np.array([1.0])}, lr=0.1, weight_decay=0.0)
    # uncapped ratio would be ~100; cap 10 gives 100 - 0.1*10*0.999999
    assert abs(params["w_weight"][0] - 99.000001) < 1e-6


def test_lamb_zero_norms_fall_back_to_ratio_one():
    params, state = one_param(0.0)
    lamb_step(state, params, {"w_weight": np.array([1.0])}, lr=0.1, weight_decay=0.0)
    # p_norm 0 -> ratio 1 -> plain Adam step of ~lr
    assert abs(params["w_weight"][0] + 0.0999999) < 1e-6

    params, state = one_param(3.0)
    lamb_step(state, params, {"w_weight": np.array([0.0])}, lr=0.1, weight_decay=0.0)
    assert params["w_weight"][0] == 3.0  # zero update, ratio 1, no move


# ---------------------------------------------------------------------------
# validation and atomicity
# ---------------------------------------------------------------------------

def test_nan_gradient_rejected_without_mutation():
    params = {"a_weight": np.ones(2), "b_weight": np.full(2, 5.0)}
    state = OptimizerState.for_params(params)
    grads = {"a_weight": np.ones(2), "b_weight": np.array([1.0, np.nan])}
    for step_fn in (adamw_step, lamb_step):
        with pytest.raises(FloatingPointError, match="b_weight"):
            step_fn(state, params, grads, lr=0.1)
        assert np.array_equal(params["a_weight"], np.ones(2))  # untouched
        assert state.t == 0
        assert np.all(state.m["a_weight"] == 0.0)


def test_missing_gradient_rejected():
    params = {"a_weight": np.ones(2), "b_weight": np.ones(2)}
    state = OptimizerState.for_params(params)
    with pytest.raises(ValueError, match="missing gradient for b_weight"):
        adamw_step(state, params, {"a_weight": np.ones(2)}, lr=0.1)


def test_shape_mismatch_rejected():
    params, state = one_param(1.0)
    with pytest.raises(ValueError, match="shape"):
        adamw_step(state, params, {"w_weight": np.ones(3)}, lr=0.1)


def test_update_order_does_not_matter():
    names = ["a_weight", "b_weight", "c_weight"]
    grads = {n: np.full(3, 0.1 * (i + 1)) for i, n in enumerate(names)}

    def run(order):
        params = {n: np.full(3, float(i + 1)) for i, n in enumerate(names)}
        params = {n: params[n] for n in order}
        state = OptimizerState.for_params(params)
        for _ in range(3):
            lamb_step(state, params, grads, lr=0.05)
        return params

    fwd = run(names)
    rev = run(list(reversed(names)))
    for n in names:
        assert np.array_equal(fwd[n], rev[n])


# ---------------------------------------------------------------------------
# optimization actually optimizes
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("step_fn", [adamw_step, lamb_step])
def test_quadratic_loss_decreases(step_fn):
    # loss 0.5*||p||^2, gradient p
    params = {"w_weight": np.array([3.0, -2.0, 1.0, 0.5, -0.25])}
    state = OptimizerState.for_params(params)
    start = float(np.linalg.norm(params["w_weight"]))
    norms = [start]
    # Adam moves ~lr per coordinate per step, so give it room to travel
    for _ in range(300):
        grads = {"w_weight": params["w_weight"].copy()}
        step_fn(state, params, grads, lr=0.01, weight_decay=0.0)
        norms.append(float(np.linalg.norm(params["w_weight"])))
    assert norms[-1] < 0.5 * start
    assert norms[100] < norms[0]
    assert state.t == 300
