import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from anisoperc import kernel as K


def brute_moment(N, power):
    return Fraction(sum(j**power for j in range(1, N + 1)), N)


@pytest.mark.parametrize("N", [1, 2, 8, 64])
def test_step_constants_brute_force(N):
    s = K.StepDistribution(N)
    assert math.isclose(s.c3, float(3 * brute_moment(N, 2) / N**2), rel_tol=1e-14)
    assert math.isclose(s.c4, float(5 * brute_moment(N, 4) / N**4), rel_tol=1e-14)


def test_c3_at_unit_range():
    assert K.StepDistribution(1).c3 == 3.0


def test_bad_range_rejected():
    with pytest.raises(ValueError):
        K.StepDistribution(0)
    with pytest.raises(ValueError):
        K.exact_pmf(K.StepDistribution(2), -1)


@pytest.mark.parametrize("N", [1, 3, 10])
def test_one_step_uniform(N):
    pm = K.exact_pmf(K.StepDistribution(N), 1)
    expect = np.full(2 * N + 1, 1 / (2 * N))
    expect[N] = 0
    assert np.allclose(pm.probs, expect)


@pytest.mark.parametrize("N", [1, 4, 25])
def test_two_steps_return_probability(N):
    pm = K.exact_pmf(K.StepDistribution(N), 2)
    assert math.isclose(pm.at([0])[0], 1 / (2 * N), rel_tol=1e-12)


@given(st.integers(1, 12), st.integers(0, 30))
def test_pmf_symmetric_and_normalized(N, n):
    pm = K.exact_pmf(K.StepDistribution(N), n)
    assert abs(pm.probs.sum() - 1) < 1e-12
    assert np.allclose(pm.probs, pm.probs[::-1], atol=1e-15)
    assert pm.drift < 1e-12


def test_fft_path_agrees_with_direct():
    s = K.StepDistribution(300)
    big = K.exact_pmf(s, 120)  # support 72001 > FFT threshold
    assert big.probs.size > K.FFT_THRESHOLD
    direct = np.ones(1)
    for _ in range(120):
        direct = np.convolve(direct, s.pmf())
    assert np.max(np.abs(big.probs - direct)) < 1e-12


def test_support_cap():
    with pytest.raises(ValueError):
        K.exact_pmf(K.StepDistribution(1 << 20), 1 << 5)


@pytest.mark.parametrize("N", [4, 16])
def test_psi_has_unit_mass(N):
    s = K.StepDistribution(N)
    for n in range(0, 51, 7):
        _, vals = K.psi_profile(s, n)
        assert abs(K.pair(s, vals) - 1) < 1e-12


@pytest.mark.parametrize("N", [2, 16, 100])
def test_psi_zero_value(N):
    s = K.StepDistribution(N)
    v = K.psi(s, 0, 0, np.array([1, N, -N, 0, N + 1]))
    assert np.allclose(v[:3], N**0.2 / 2)
    assert v[3] == 0 and v[4] == 0


def test_psi_translation():
    s = K.StepDistribution(5)
    x = np.arange(-20, 21)
    assert np.allclose(K.psi(s, 3, 7, x + 7), K.psi(s, 3, 0, x))


@pytest.mark.parametrize("N", [1, 4, 16])
def test_recursion_residual_small(N):
    s = K.StepDistribution(N)
    for i in (1, 2, 5, 20):
        assert K.recursion_residual(s, i) < 1e-10
    with pytest.raises(ValueError):
        K.recursion_residual(s, 0)


@pytest.mark.parametrize("N,n", [(1, 10), (8, 5), (32, 17)])
def test_walk_variance_is_linear(N, n):
    s = K.StepDistribution(N)
    assert math.isclose(K.walk_variance(s, n), n * s.variance, rel_tol=1e-10)


def test_clt_error_decreases_and_ratio_bounded():
    s = K.StepDistribution(16)
    errs = [K.clt_error(s, t) for t in (1, 4, 16, 64)]
    sup = [e.sup_error for e in errs]
    assert all(a > b for a, b in zip(sup, sup[1:]))
    assert max(e.bound_ratio for e in errs) < 1.0
    with pytest.raises(ValueError):
        K.clt_error(s, 0)


def test_unit_range_parity():
    pm = K.exact_pmf(K.StepDistribution(1), 6)
    odd = pm.sites % 2 != 0
    assert not pm.probs[odd].any()
    assert math.isclose(pm.at([0])[0], math.comb(6, 3) / 64)


def test_laplacian_of_constant_vanishes_inside():
    s = K.StepDistribution(3)
    lap = K.discrete_laplacian(np.ones(20), s)
    assert np.allclose(lap[6:-6], 0)


def test_pmf_csv(tmp_path):
    pm = K.exact_pmf(K.StepDistribution(2), 1)
    p = tmp_path / "w.csv"
    pm.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "j,p" and len(rows) == 6
