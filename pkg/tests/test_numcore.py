import numpy as np
import pytest

from flamkit.numcore import (
    AdamState,
    Rng,
    adam_step,
    finite_diff_grad,
    l2_normalize,
    log_sigmoid,
    sigmoid,
    softplus,
)


def test_log_sigmoid_frozen_values():
    assert log_sigmoid(0.0) == pytest.approx(-0.6931471805599453, abs=1e-15)
    assert log_sigmoid(10.0) == pytest.approx(-4.539889921682063e-05, rel=1e-9)
    assert abs(log_sigmoid(-100.0) - (-100.0)) < 1e-12


def test_sigmoid_partition_of_unity():
    xs = np.linspace(-700.0, 700.0, 20001)
    total = sigmoid(xs) + sigmoid(-xs)
    assert np.max(np.abs(total - 1.0)) < 1e-12


def test_sigmoid_extremes_do_not_overflow():
    assert sigmoid(750.0) == 1.0
    assert sigmoid(-750.0) == 0.0
    assert softplus(-750.0) == 0.0
    assert softplus(750.0) == 750.0


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        log_sigmoid(np.nan)
    with pytest.raises(ValueError):
        sigmoid(np.inf)
    with pytest.raises(ValueError):
        l2_normalize(np.array([1.0, np.nan]))


def test_l2_normalize_unit_norm_and_scale_invariance():
    rng = np.random.default_rng(7)
    for _ in range(50):
        v = rng.normal(size=(4, 9))
        n = l2_normalize(v)
        assert np.allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-12)
        for c in (1e-6, 3.7, 1e6):
            assert np.allclose(l2_normalize(c * v), n, atol=1e-9)


def test_l2_normalize_zero_vector_raises():
    with pytest.raises(ValueError):
        l2_normalize(np.zeros(3))


def test_adam_first_step_delta():
    # bias correction makes m_hat = v_hat = 1 on the first step
    params = np.array([0.0])
    grads = np.array([1.0])
    new, state = adam_step(params, grads, AdamState(lr=1e-3, eps=1e-8))
    assert new[0] == pytest.approx(-1e-3, rel=1e-7)
    assert state.step == 1


def test_adam_descends_quadratic():
    params = np.array([5.0, -3.0])
    state = AdamState(lr=0.05)
    for _ in range(800):
        grads = 2.0 * params
        params, state = adam_step(params, grads, state)
    assert np.all(np.abs(params) < 1e-3)


def test_adam_is_pure_and_deterministic():
    params = np.array([1.0, 2.0])
    grads = np.array([0.3, -0.7])
    s0 = AdamState(lr=1e-2)
    p1, s1 = adam_step(params, grads, s0)
    p2, s2 = adam_step(params, grads, s0)
    assert np.array_equal(p1, p2)
    assert np.array_equal(s1.m, s2.m)
    assert s0.step == 0 and s1.step == 1
    # inputs untouched
    assert np.array_equal(params, np.array([1.0, 2.0]))


def test_adam_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        adam_step(np.zeros(3), np.zeros(4), AdamState())
    with pytest.raises(ValueError):
        adam_step(np.zeros(3), np.array([np.nan, 0.0, 0.0]), AdamState())


def test_rng_identical_seed_identical_stream():
    a = Rng(1234).stream("mixture", 5).random(8)
    b = Rng(1234).stream("mixture", 5).random(8)
    assert np.array_equal(a, b)


def test_rng_substreams_differ():
    base = Rng(1234)
    s0 = base.stream("mixture", 0).random(8)
    s1 = base.stream("mixture", 1).random(8)
    other = base.stream("batch", 0).random(8)
    assert not np.array_equal(s0, s1)
    assert not np.array_equal(s0, other)
    seed2 = Rng(1235).stream("mixture", 0).random(8)
    assert not np.array_equal(s0, seed2)


def test_rng_rejects_non_integer_seed():
    with pytest.raises(ValueError):
        Rng(1.5)  # type: ignore[arg-type]


def test_finite_diff_of_sigmoid_at_zero():
    # sigma'(0) = sigma(0) * (1 - sigma(0)) = 0.25
    g = finite_diff_grad(lambda v: sigmoid(v[0]), np.array([0.0]))
    assert g[0] == pytest.approx(0.25, abs=1e-9)
    # and the log-sigmoid slope at zero is sigma(-0) = 0.5
    g2 = finite_diff_grad(lambda v: log_sigmoid(v[0]), np.array([0.0]))
    assert g2[0] == pytest.approx(0.5, abs=1e-9)


def test_finite_diff_matches_analytic_on_quadratic():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(5, 5))
    A = A @ A.T + np.eye(5)
    x0 = rng.normal(size=5)
    g = finite_diff_grad(lambda v: 0.5 * v @ A @ v, x0)
    assert np.allclose(g, A @ x0, rtol=1e-6, atol=1e-8)


def test_finite_diff_step_bounds():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda v: float(v[0]), np.zeros(1), h=1e-8)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda v: float(v[0]), np.zeros(1), h=1e-2)


def test_finite_diff_rejects_non_finite_objective():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda v: float("nan"), np.zeros(2))
