import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clmex.tensor import (
    Adam,
    AdamState,
    ConstantSchedule,
    CosineSchedule,
    NonFiniteGradientError,
    PlateauSchedule,
    Tensor,
    adam_step,
    schedule_lr,
)


def test_zero_lr_leaves_params_but_updates_moments():
    p = [np.array([1.0, -2.0]), np.array([[3.0]])]
    g = [np.array([0.5, 0.25]), np.array([[-1.0]])]
    state = AdamState.for_params(p, weight_decay=1e-4)
    new, state = adam_step(p, g, state, lr=0.0)
    for a, b in zip(new, p):
        np.testing.assert_array_equal(a, b)
    assert state.step_count == 1
    np.testing.assert_allclose(state.first_moment[0], 0.1 * g[0])
    np.testing.assert_allclose(state.second_moment[1], 0.001 * g[1] ** 2)


def test_first_step_moves_by_lr():
    state = AdamState.for_params([np.zeros(1)])
    new, _ = adam_step([np.array([1.0])], [np.array([1.0])], state, lr=0.1)
    # bias-corrected first step is lr * g / (|g| + eps)
    assert 1.0 - new[0][0] == pytest.approx(0.1 / (1.0 + 1e-8), abs=1e-15)


def test_identical_params_get_identical_updates():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 2))
    g = rng.normal(size=(3, 2))
    state = AdamState.for_params([x, x])
    for _ in range(5):
        (x1, x2), state = adam_step([x, x.copy()], [g, g.copy()], state, lr=0.01)
        np.testing.assert_array_equal(x1, x2)
        x = x1


@settings(max_examples=30, deadline=None)
@given(wd=st.floats(0, 0.1), lr=st.floats(0, 1), steps=st.integers(1, 5))
def test_zero_grad_only_applies_decay(wd, lr, steps):
    p = np.array([1.5, -0.5])
    state = AdamState.for_params([p], weight_decay=wd)
    for _ in range(steps):
        (p_new,), state = adam_step([p], [np.zeros(2)], state, lr)
        np.testing.assert_allclose(p_new, p * (1 - lr * wd), rtol=1e-14, atol=0)
        p = p_new


def test_step_count_increments():
    state = AdamState.for_params([np.zeros(2)])
    for t in range(1, 4):
        adam_step([np.zeros(2)], [np.ones(2)], state, 0.1)
        assert state.step_count == t


def test_nan_gradient_aborts_without_changes():
    p = np.array([1.0, 2.0])
    state = AdamState.for_params([p])
    with pytest.raises(NonFiniteGradientError, match="non-finite"):
        adam_step([p], [np.array([np.nan, 0.0])], state, 0.1)
    assert state.step_count == 0
    np.testing.assert_array_equal(state.first_moment[0], 0.0)


def test_negative_lr_rejected():
    with pytest.raises(ValueError):
        adam_step([np.zeros(1)], [np.zeros(1)], AdamState.for_params([np.zeros(1)]), -1.0)


def test_adam_class_minimizes_quadratic():
    w = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        ((w * w).sum()).backward()
        opt.step()
    assert np.abs(w.data).max() < 0.05


# -- schedules --------------------------------------------------------------------


def test_cosine_endpoints_exact():
    s = CosineSchedule(1e-4, 1000)
    assert s.lr_at(0) == 1e-4
    assert s.lr_at(1000) == 0.0
    assert s.lr_at(500) == 0.5e-4
    assert s.lr_at(-5) == 1e-4 and s.lr_at(5000) == 0.0


def test_cosine_is_monotone():
    s = CosineSchedule(0.3, 57)
    lrs = [schedule_lr(s, k) for k in range(58)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert lrs[10] == pytest.approx(0.3 * 0.5 * (1 + math.cos(math.pi * 10 / 57)))


def test_plateau_constant_history_halves_once():
    s = PlateauSchedule(1e-4, decay_factor=0.5, patience=3)
    lrs = [schedule_lr(s, 1.0) for _ in range(4)]
    assert lrs == [1e-4, 1e-4, 1e-4, 0.5e-4]
    assert s.history == [1.0] * 4


def test_plateau_improvement_resets_counter():
    s = PlateauSchedule(1.0, patience=3)
    for m in [5.0, 6.0, 6.0, 4.0, 6.0, 6.0]:
        s.observe(m)
    assert s.lr == 1.0
    s.observe(6.0)
    assert s.lr == 0.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=40))
def test_plateau_never_increases(metrics):
    s = PlateauSchedule(1.0, patience=2)
    lrs = [s.observe(m) for m in metrics]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert all(math.log2(1.0 / lr) == int(math.log2(1.0 / lr)) for lr in lrs)


def test_constant_schedule():
    assert schedule_lr(ConstantSchedule(0.2), 123) == 0.2
