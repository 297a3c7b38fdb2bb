import numpy as np
import pytest

from zobil.metric import RieszMap, dual_norm
from zobil.rng import NoiseSample
from zobil.smoothing import (GradEstimate, SmoothingParams, gaussian_moment_bound,
                             grad_estimate, grad_estimate_inexact, lip1_of_smoothed,
                             probe_lip0, smoothed_value, variance_bound)


def quad_oracle(y, token):
    y = np.asarray(y)
    return 0.5 * float(np.dot(y, y))


def const_oracle(y, token):
    return 4.25


def test_smoothed_value_constant_exact():
    params = SmoothingParams(eta=0.7, dim=3)
    val = smoothed_value(const_oracle, np.ones(3), params, m=25, seed=0)
    assert val == 4.25


def test_smoothed_value_quadratic_offset():
    # Gaussian convolution of y -> |y|^2/2 adds eta^2 n / 2 at the origin
    params = SmoothingParams(eta=0.5, dim=2)
    val = smoothed_value(quad_oracle, np.zeros(2), params, m=200_000, seed=5)
    assert val == pytest.approx(0.25, abs=0.01)


def test_smoothed_value_linear_within_mc_error():
    a = np.array([1.5, -2.0, 0.0, 3.0])
    oracle = lambda y, token: float(np.dot(a, y))
    params = SmoothingParams(eta=0.3, dim=4)
    y = np.array([0.2, 0.1, -1.0, 0.5])
    m = 50_000
    val = smoothed_value(oracle, y, params, m, seed=9)
    stderr = params.eta * np.linalg.norm(a) / np.sqrt(m)
    assert abs(val - float(np.dot(a, y))) < 4 * stderr


def test_smoothed_value_rejects_zero_batch():
    with pytest.raises(ValueError):
        smoothed_value(const_oracle, np.zeros(2), SmoothingParams(0.1, 2), m=0, seed=0)


def test_grad_estimate_constant_is_zero():
    params = SmoothingParams(eta=0.05, dim=4)
    est = grad_estimate(const_oracle, np.zeros(4), params, m=7, seed=3)
    assert np.all(est.value == 0.0)
    assert est.batch == 7


def test_grad_estimate_linear_unbiased():
    # every summand is <a, U> U; the mean over many samples approaches a
    a = np.array([2.0, -1.0, 0.5])
    oracle = lambda y, token: float(np.dot(a, y))
    params = SmoothingParams(eta=0.1, dim=3)
    m = 100_000
    est = grad_estimate(oracle, np.zeros(3), params, m, seed=101)
    # per-coordinate variance of <a,U>U_i is |a|^2 + 2 a_i^2
    stderr = np.sqrt(np.dot(a, a) + 2 * a ** 2) / np.sqrt(m)
    assert np.all(np.abs(est.value - a) < 4 * stderr)


def test_grad_estimate_quadratic_unbiased():
    params = SmoothingParams(eta=0.1, dim=3)
    y = np.ones(3)
    m = 200_000
    est = grad_estimate(quad_oracle, y, params, m, seed=77)
    # grad h_eta(y) = y for the quadratic; conservative stderr bound
    stderr = 3.0 / np.sqrt(m)
    assert np.all(np.abs(est.value - y) < 4 * stderr)


def test_grad_estimate_determinism():
    params = SmoothingParams(eta=0.2, dim=5)
    y = np.linspace(-1, 1, 5)
    a = grad_estimate(quad_oracle, y, params, m=64, seed=12345)
    b = grad_estimate(quad_oracle, y, params, m=64, seed=12345)
    assert np.array_equal(a.value, b.value)
    c = grad_estimate(quad_oracle, y, params, m=64, seed=12346)
    assert not np.array_equal(a.value, c.value)


def test_grad_estimate_batch_average_linearity():
    # the m-fold estimate equals the average of m single-sample estimates
    # taken at shifted offsets (identical sample streams)
    params = SmoothingParams(eta=0.3, dim=4)
    y = np.array([0.5, -0.25, 1.0, 0.0])
    k = 8
    whole = grad_estimate(quad_oracle, y, params, m=k, seed=9)
    singles = np.stack([
        grad_estimate(quad_oracle, y, params, m=1, seed=9, sample_offset=i).value
        for i in range(k)])
    assert np.array_equal(singles.mean(axis=0), whole.value)


def test_grad_estimate_nonidentity_metric_unbiased():
    # with B != I the estimator still targets the dual-vector gradient a
    a = np.array([1.0, -3.0])
    oracle = lambda y, token: float(np.dot(a, y))
    B = RieszMap(np.array([4.0, 0.25]))
    params = SmoothingParams(eta=0.2, dim=2)
    m = 150_000
    est = grad_estimate(oracle, np.zeros(2), params, m, seed=8, B=B)
    assert np.all(np.abs(est.value - a) < 0.1 * np.abs(a) + 0.02)


def test_inexact_beta_zero_matches_exact_bitwise():
    def inexact(y, token, beta):
        return quad_oracle(y, token) + beta * 0.37

    params = SmoothingParams(eta=0.15, dim=3)
    y = np.array([1.0, 2.0, -0.5])
    exact = grad_estimate(quad_oracle, y, params, m=33, seed=55)
    inex = grad_estimate_inexact(inexact, y, params, m=33, beta=0.0, seed=55)
    assert np.array_equal(exact.value, inex.value)


def test_inexact_bias_bound():
    # H^beta = H + beta * s(xi, y) with |s| <= 1 instantiates the bias bound
    # ||mean bias||_* <= sqrt(n) * lip0(F) * beta / eta
    rng = np.random.default_rng(0)
    n, beta, eta = 4, 0.05, 0.25
    w_fixed = rng.normal(size=n)

    def s(y, token):
        return float(np.sin(np.dot(w_fixed / np.linalg.norm(w_fixed), y)))

    def inexact(y, token, b):
        return quad_oracle(y, token) + b * s(y, token)

    params = SmoothingParams(eta=eta, dim=n)
    y = np.zeros(n)
    m = 100_000
    est_b = grad_estimate_inexact(inexact, y, params, m, beta, seed=2)
    est_0 = grad_estimate_inexact(inexact, y, params, m, 0.0, seed=2)
    bias = est_b.value - est_0.value
    B = RieszMap.identity(n)
    bound = np.sqrt(n) * 1.0 * beta / eta
    mc_slack = 4 * beta / eta * np.sqrt(2 * n / m)  # generous
    assert dual_norm(B, bias) <= bound * 1.05 + mc_slack


def test_gaussian_moment_bound_values():
    assert gaussian_moment_bound(2, 7) == 7
    assert gaussian_moment_bound(0, 123) == 1
    assert gaussian_moment_bound(4, 3) == 49
    with pytest.raises(ValueError):
        gaussian_moment_bound(-1, 3)


def test_gaussian_moment_bound_holds_empirically():
    rng = np.random.default_rng(11)
    n = 5
    u = rng.standard_normal((200_000, n))
    norms = np.linalg.norm(u, axis=1)
    for p in (1.0, 2.0, 3.0, 4.0):
        assert np.mean(norms ** p) <= gaussian_moment_bound(p, n) * 1.01


def test_lip1_of_smoothed_values():
    assert lip1_of_smoothed(1.0, 1.0, 4) == pytest.approx(2.0)
    assert lip1_of_smoothed(2.0, 0.5, 9) == pytest.approx(12.0)
    assert lip1_of_smoothed(1.0, 0.01, 3) == pytest.approx(100 * np.sqrt(3))


def test_variance_bound_values():
    assert variance_bound(1.0, 1, 1) == pytest.approx(25.0)
    assert variance_bound(1.0, 3, 10) == pytest.approx(variance_bound(1.0, 3, 5) / 2)
    assert variance_bound(2.0, 6, 4) == pytest.approx(100.0)


def test_value_gap_bound_for_norm_function():
    # |h_eta(y) - h(y)| <= eta sqrt(n) for h(y) = |y| (lip0 = 1)
    oracle = lambda y, token: float(np.linalg.norm(y))
    n, eta = 6, 0.2
    params = SmoothingParams(eta=eta, dim=n)
    rng = np.random.default_rng(21)
    m = 20_000
    for _ in range(20):
        y = rng.normal(size=n) * 2
        val = smoothed_value(oracle, y, params, m, seed=int(rng.integers(1e6)))
        stderr = eta * np.sqrt(n) / np.sqrt(m) * 3
        assert abs(val - np.linalg.norm(y)) <= eta * np.sqrt(n) + 4 * stderr


def test_lipschitz_preserved_under_smoothing():
    # common-random-number estimates of h_eta inherit lip0(h)
    oracle = lambda y, token: float(np.linalg.norm(y))
    params = SmoothingParams(eta=0.3, dim=4)
    rng = np.random.default_rng(2)
    for trial in range(20):
        y1 = rng.normal(size=4)
        y2 = rng.normal(size=4)
        seed = int(rng.integers(1e6))
        v1 = smoothed_value(oracle, y1, params, 2000, seed=seed)
        v2 = smoothed_value(oracle, y2, params, 2000, seed=seed)
        assert abs(v1 - v2) <= np.linalg.norm(y1 - y2) * (1 + 1e-6)


def test_second_moment_bound():
    # E ||V||_*^2 - ||grad h_eta||_*^2 <= (4+n)^2 lip0^2 / m for h = 0.5|y|^2
    n, eta, m_draws = 3, 0.1, 200_000
    params = SmoothingParams(eta=eta, dim=n)
    y = np.ones(n)
    singles = np.stack([
        grad_estimate(quad_oracle, y, params, m=1, seed=31, sample_offset=i).value
        for i in range(m_draws)])
    second_moment = float(np.mean(np.sum(singles ** 2, axis=1)))
    grad_sq = float(np.dot(y, y))  # grad h_eta(y) = y
    lip0_local = np.linalg.norm(y) + 2.0  # local Lipschitz bound near y
    assert second_moment - grad_sq <= variance_bound(lip0_local, n, 1) * 1.05


def test_probe_lip0_quadratic_box():
    # sup |grad| over [-1, 1]^3 is sqrt(3); probe is a lower estimate
    lip = probe_lip0(quad_oracle, -np.ones(3), np.ones(3), n_pairs=256, seed=0)
    assert 0.5 <= lip <= np.sqrt(3) + 1e-9


def test_grad_estimate_type():
    est = grad_estimate(quad_oracle, np.zeros(2), SmoothingParams(0.1, 2), 3, seed=1)
    assert isinstance(est, GradEstimate)
    assert est.seed == 1


def test_noise_token_consistency():
    tok = NoiseSample(42, (3, 1, 1))
    assert np.array_equal(tok.rng().standard_normal(4), tok.rng().standard_normal(4))
