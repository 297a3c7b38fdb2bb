import numpy as np
import pytest

from zobil.metric import RieszMap, dual_norm, norm, pythagoras_residual


def test_norm_zero_vector():
    B = RieszMap.identity(3)
    assert norm(B, np.zeros(3)) == 0.0


def test_norm_euclidean_345():
    B = RieszMap.identity(3)
    assert norm(B, np.array([3.0, 4.0, 0.0])) == pytest.approx(5.0)


def test_norm_weighted():
    # sum b_i y_i^2 = 4*1 + 1*4 = 8
    B = RieszMap(np.array([4.0, 1.0]))
    assert norm(B, np.array([1.0, 2.0])) == pytest.approx(np.sqrt(8.0))


def test_dual_norm_identity():
    B = RieszMap.identity(2)
    assert dual_norm(B, np.array([3.0, 4.0])) == pytest.approx(5.0)


def test_dual_norm_weighted():
    # v_1^2 / b_1 = 4/4 = 1
    B = RieszMap(np.array([4.0, 1.0]))
    assert dual_norm(B, np.array([2.0, 0.0])) == pytest.approx(1.0)


def test_dual_norm_zero():
    B = RieszMap(np.array([0.3, 7.0, 2.0]))
    assert dual_norm(B, np.zeros(3)) == 0.0


def test_dimension_mismatch_raises():
    B = RieszMap.identity(3)
    with pytest.raises(ValueError):
        norm(B, np.zeros(4))
    with pytest.raises(ValueError):
        dual_norm(B, np.zeros(2))


def test_riesz_map_validation():
    with pytest.raises(ValueError):
        RieszMap(np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        RieszMap(np.array([1.0, -2.0]))
    with pytest.raises(ValueError):
        RieszMap(np.array([1.0, np.inf]))


def test_pythagoras_trivial():
    B = RieszMap.identity(4)
    z = np.zeros(4)
    assert pythagoras_residual(B, z, z, z) == 0.0


def test_pythagoras_random_identity_and_weighted():
    rng = np.random.default_rng(42)
    for B in (RieszMap.identity(2), RieszMap(np.array([2.0, 3.0]))):
        for _ in range(100):
            x, y, u = rng.normal(size=(3, 2))
            assert abs(pythagoras_residual(B, x, y, u)) < 1e-12


def test_pythagoras_many_random_instances():
    # identity holds for any SPD diagonal B, up to round-off at the data scale
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 8))
        B = RieszMap(rng.uniform(0.1, 10.0, n))
        x, y, u = rng.normal(size=(3, n)) * 10.0
        scale = max(1.0, norm(B, x - u) ** 2)
        worst = max(worst, abs(pythagoras_residual(B, x, y, u)) / scale)
    assert worst < 1e-10


def test_riesz_isometry():
    # ||B y||_* = ||y|| for random y and B
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(1, 10))
        B = RieszMap(rng.uniform(0.05, 20.0, n))
        y = rng.normal(size=n)
        assert dual_norm(B, B.apply(y)) == pytest.approx(norm(B, y), rel=1e-12)
