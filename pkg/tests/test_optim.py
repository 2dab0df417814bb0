import numpy as np
import pytest

import oracles
from pacrf.optim import AdamW


def test_matches_scalar_reference_trajectory(rng):
    grads = rng.normal(size=25)
    expected = oracles.adamw_trajectory(0.8, grads, lr=0.05, wd=0.1)
    opt = AdamW(lr=0.05, weight_decay=0.1)
    p = {"x": np.array([0.8])}
    for g, want in zip(grads, expected):
        opt.step(p, {"x": np.array([g])})
        assert p["x"][0] == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_zero_gradient_without_decay_leaves_parameters_exactly(rng):
    x = rng.normal(size=(3, 2))
    p = {"x": x.copy()}
    opt = AdamW(lr=0.1, weight_decay=0.0)
    for _ in range(5):
        opt.step(p, {"x": np.zeros_like(x)})
    assert p["x"].tobytes() == x.tobytes()


def test_zero_gradient_with_decay_only_shrinks(rng):
    x = rng.normal(size=4)
    p = {"x": x.copy()}
    AdamW(lr=0.1, weight_decay=0.01).step(p, {"x": np.zeros(4)})
    np.testing.assert_allclose(p["x"], x * (1 - 0.1 * 0.01), rtol=1e-15)


def test_learning_rate_zero_is_a_no_op(rng):
    x = rng.normal(size=4)
    p = {"x": x.copy()}
    AdamW(lr=0.0).step(p, {"x": rng.normal(size=4)})
    assert p["x"].tobytes() == x.tobytes()


def test_missing_gradient_counts_as_zero(rng):
    p = {"a": np.ones(2), "b": np.ones(2)}
    AdamW(lr=0.1, weight_decay=0.0).step(p, {"a": np.ones(2)})
    np.testing.assert_array_equal(p["b"], np.ones(2))
    assert np.all(p["a"] < 1)
