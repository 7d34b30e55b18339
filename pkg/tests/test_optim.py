import numpy as np
import pytest

from core.optim import AdamState, adam_update


def test_zero_gradient_leaves_weights_unchanged(rng):
    w = {"w": rng.normal(size=(3, 3))}
    before = w["w"].copy()
    adam_update(w, {"w": np.zeros((3, 3))}, AdamState.zeros_like(w), 1)
    np.testing.assert_array_equal(w["w"], before)


def test_first_step_is_lr_times_sign():
    w = {"w": np.array(0.0)}
    adam_update(w, {"w": np.array(1.0)}, AdamState.zeros_like(w), 1, lr=0.1)
    assert float(w["w"]) == pytest.approx(-0.1, rel=1e-6)


def test_minimizes_square():
    w = {"w": np.array(1.0)}
    state = AdamState.zeros_like(w)
    for step in range(1, 101):
        adam_update(w, {"w": 2.0 * w["w"]}, state, step, lr=0.01)
    assert abs(float(w["w"])) < 0.5
    assert state.step == 100


def test_matches_scalar_recurrence(rng):
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    w = {"w": np.array([0.3])}
    state = AdamState.zeros_like(w)
    ref, m, v = 0.3, 0.0, 0.0
    for step in range(1, 21):
        g = float(rng.normal())
        adam_update(w, {"w": np.array([g])}, state, step, lr=lr)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref -= lr * (m / (1 - b1 ** step)) / (np.sqrt(v / (1 - b2 ** step)) + eps)
    assert float(w["w"][0]) == pytest.approx(ref, rel=1e-12)


def test_step_count_must_be_positive():
    w = {"w": np.zeros(2)}
    with pytest.raises(ValueError):
        adam_update(w, {"w": np.ones(2)}, AdamState.zeros_like(w), 0)


def test_deterministic(rng):
    grads = [rng.normal(size=4) for _ in range(5)]
    results = []
    for _ in range(2):
        w = {"w": np.ones(4)}
        state = AdamState.zeros_like(w)
        for step, g in enumerate(grads, start=1):
            adam_update(w, {"w": g}, state, step)
        results.append(w["w"])
    np.testing.assert_array_equal(results[0], results[1])
