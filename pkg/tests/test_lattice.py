import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluctlab.lattice import (FFT_THRESHOLD, ToleranceError, a_n, build_lattice, chi_alpha,
                              chi_truncation, circle_distance, circular_convolve, convolve_lattice,
                              integral_psi, mean_weight, psi_fourier, richardson_chi,
                              riemann_residual, singular_rule, weight_sum_growth)

alphas = st.floats(0.0, 0.95, allow_nan=False)
unit = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)


def brute_mean_weight(n, alpha):
    x = (np.arange(2 * n) - n) / (2 * n)
    d = circle_distance(x[0], x[1:])
    return math.fsum(d ** (-alpha)) / (2 * n)


def singular_oracle(alpha, g):
    # int_0^{1/2} z^-alpha g(z) dz after u = z^(1-alpha), which removes the singularity
    b = 1 - mpmath.mpf(alpha)
    return mpmath.quad(lambda u: g(u ** (1 / b)) / b, mpmath.linspace(0, mpmath.mpf(0.5) ** b, 9))


# circle distance

@pytest.mark.parametrize("x, y, d", [(0.25, 0.75, 0.5), (0.9, 0.1, 0.2), (0.3, 0.3, 0.0)])
def test_circle_distance_examples(x, y, d):
    assert circle_distance(x, y) == pytest.approx(d, abs=1e-15)


@given(unit, unit, unit)
def test_circle_distance_is_a_metric(x, y, z):
    dxy, dyx = circle_distance(x, y), circle_distance(y, x)
    assert dxy == dyx
    assert 0.0 <= dxy <= 0.5
    assert dxy <= circle_distance(x, z) + circle_distance(z, y) + 1e-15


# lattice construction

def test_kernel_examples():
    np.testing.assert_allclose(build_lattice(2, 0.0).kernel, [0, 1, 1, 1])
    np.testing.assert_allclose(build_lattice(2, 0.5).kernel, [0, 2, math.sqrt(2), 2])
    np.testing.assert_allclose(build_lattice(1, 0.5).kernel, [0, math.sqrt(2)])


def test_positions_cover_half_open_range():
    lat = build_lattice(4, 0.3)
    np.testing.assert_allclose(lat.positions, np.arange(-4, 4) / 8)
    assert lat.size == 8


@pytest.mark.parametrize("n, alpha", [(0, 0.5), (2, 1.0), (2, -0.1), (1.5, 0.2)])
def test_build_lattice_rejects(n, alpha):
    with pytest.raises(ValueError):
        build_lattice(n, alpha)


@given(st.integers(1, 300), alphas)
def test_kernel_symmetry_and_self_weight(n, alpha):
    k = build_lattice(n, alpha).kernel
    assert k[0] == 0.0
    np.testing.assert_array_equal(k[1:], k[1:][::-1])


def test_lattice_is_read_only():
    lat = build_lattice(4, 0.5)
    with pytest.raises(ValueError):
        lat.kernel[1] = 3.0


# Riemann sums

def test_mean_weight_examples():
    assert mean_weight(build_lattice(2, 0.0)) == pytest.approx(0.75, abs=1e-15)
    assert mean_weight(build_lattice(2, 0.5)) == pytest.approx(1.353553, abs=1e-6)
    for n in (1, 3, 17, 1000):
        assert mean_weight(build_lattice(n, 0.0)) == pytest.approx(1 - 1 / (2 * n), abs=1e-14)


@given(st.integers(1, 400), alphas)
def test_mean_weight_matches_every_row(n, alpha):
    lat = build_lattice(n, alpha)
    rows = lat.weight_matrix().sum(axis=1) / lat.size if n <= 100 else None
    closed = mean_weight(lat)
    assert closed == pytest.approx(brute_mean_weight(n, alpha), rel=1e-12)
    if rows is not None:
        np.testing.assert_allclose(rows, closed, rtol=1e-12)


def test_integral_psi_examples():
    assert integral_psi(0.0) == 1.0
    assert integral_psi(0.5) == pytest.approx(2.828427, abs=1e-6)
    assert integral_psi(0.75) == pytest.approx(6.727171, abs=1e-6)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.8])
def test_integral_psi_against_quadrature(alpha):
    val = float(singular_oracle(alpha, lambda z: 2))
    assert val == pytest.approx(integral_psi(alpha), rel=1e-12)


def test_riemann_residual_examples():
    assert riemann_residual(build_lattice(2, 0.5)) == pytest.approx(-2.085786, abs=1e-6)
    for n in (1, 2, 1 << 10, 1 << 20):
        assert abs(riemann_residual(n_half=n, alpha=0.0) + 0.5) <= 1e-12


@given(st.integers(1, 2000), alphas)
def test_residual_definition(n, alpha):
    lat = build_lattice(n, alpha)
    direct = n ** (1 - alpha) * (mean_weight(lat) - integral_psi(alpha))
    assert riemann_residual(lat) == pytest.approx(direct, rel=1e-9, abs=1e-9)


def test_residual_needs_arguments():
    with pytest.raises(TypeError):
        riemann_residual(n_half=3)


def test_residual_converges_to_chi():
    assert abs(riemann_residual(n_half=1 << 20, alpha=0.75) - chi_alpha(0.75)) <= 1e-2


@pytest.mark.parametrize("n", [1 << 6, 1 << 10, 1 << 14])
@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.75])
def test_boundedness(n, alpha):
    bound = integral_psi(alpha) + abs(chi_alpha(alpha, 1e-8)) * n ** (alpha - 1) + 1 / n
    assert mean_weight(build_lattice(n, alpha)) <= bound


# chi

@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.5, 0.75, 0.9])
def test_chi_matches_zeta(alpha):
    # 2^a C(a) equals 2^a zeta(a); mpmath gives an independent oracle
    oracle = float(2**alpha * mpmath.zeta(alpha))
    assert chi_alpha(alpha, 1e-9) == pytest.approx(oracle, abs=2e-9)


def test_chi_at_zero():
    assert chi_alpha(0.0, 1.0) == -0.5


@given(st.floats(0.05, 0.95), st.sampled_from([1e-4, 1e-6, 1e-8]))
def test_chi_meets_tolerance_and_is_nonzero(alpha, tol):
    val = chi_alpha(alpha, tol)
    assert abs(val - float(2**alpha * mpmath.zeta(alpha))) <= tol
    assert val < 0


def test_chi_tolerance_failure():
    with pytest.raises(ToleranceError):
        chi_alpha(0.05, 1e-14)
    with pytest.raises(ValueError):
        chi_alpha(1.2)
    with pytest.raises(ValueError):
        chi_alpha(0.5, 0.0)


def test_chi_truncation_monotone():
    assert chi_truncation(0.5, 1e-8) > chi_truncation(0.5, 1e-4)


def test_richardson_agrees_with_chi():
    val = richardson_chi(0.5, (1 << 12, 1 << 14, 1 << 16))
    assert val == pytest.approx(chi_alpha(0.5, 1e-10), abs=1e-7)
    with pytest.raises(ValueError):
        richardson_chi(0.5, (4, 16, 32))


# Fourier transform of the kernel

@pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("ell", [1, 2, 5])
def test_psi_fourier_against_mpmath(alpha, ell):
    oracle = singular_oracle(alpha, lambda z: 2 * mpmath.cos(2 * mpmath.pi * ell * z))
    assert psi_fourier(alpha, ell) == pytest.approx(float(oracle), abs=1e-10)
    assert psi_fourier(alpha, 0) == integral_psi(alpha)


@given(st.floats(0.05, 0.9), st.integers(0, 8))
def test_singular_rule_integrates_polynomials(alpha, deg):
    z, w = singular_rule(alpha)
    exact = 0.5 ** (deg + 1 - alpha) / (deg + 1 - alpha)
    assert np.dot(w, z**deg) == pytest.approx(exact, rel=1e-10)


# convolution

def test_convolve_examples():
    np.testing.assert_allclose(circular_convolve([0, 1, 1, 1], [1, 1, 1, 1]), [3, 3, 3, 3])
    k = np.random.default_rng(0).normal(size=100)
    imp = np.zeros(100)
    imp[0] = 1
    np.testing.assert_allclose(circular_convolve(k, imp, "fast"), k, atol=1e-14)
    np.testing.assert_allclose(circular_convolve(k, imp, "direct"), k, atol=1e-14)


def test_convolve_errors():
    with pytest.raises(ValueError):
        circular_convolve([1, 2, 3], [1, 2])
    with pytest.raises(ValueError):
        circular_convolve([1.0] * 80, [1.0] * 80, "magic")


@given(st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_fast_equals_direct(length, seed):
    rng = np.random.default_rng(seed)
    k, s = rng.normal(size=(2, length))
    fast = circular_convolve(k, s, "fast")
    direct = circular_convolve(k, s, "direct")
    assert np.max(np.abs(fast - direct)) <= 1e-10 * max(1.0, np.max(np.abs(direct)))


def test_fast_equals_direct_large():
    rng = np.random.default_rng(1)
    lat = build_lattice(1 << 9, 0.6)
    s = rng.normal(size=(3, lat.size))
    diff = convolve_lattice(lat, s, "fast") - convolve_lattice(lat, s, "direct")
    assert np.max(np.abs(diff)) <= 1e-10
    assert lat.size >= FFT_THRESHOLD


def test_convolve_lattice_matches_weight_matrix():
    lat = build_lattice(8, 0.4)
    s = np.arange(16.0)
    np.testing.assert_allclose(convolve_lattice(lat, s), lat.weight_matrix() @ s, atol=1e-12)
    with pytest.raises(ValueError):
        convolve_lattice(lat, np.ones(5))


# growth regimes

def test_weight_sum_growth_enumeration():
    # distances 1/4, 1/2, 1/4 -> 4 + 2 + 4
    assert weight_sum_growth(2, 1.0) == pytest.approx(10.0)
    lat = build_lattice(5, 0.7)
    assert weight_sum_growth(5, 0.7) == pytest.approx(lat.kernel.sum(), rel=1e-13)


def test_weight_sum_growth_regimes():
    ns = [1 << k for k in range(8, 17, 2)]
    r_half = [weight_sum_growth(n, 0.5) / n for n in ns]
    r_one = [weight_sum_growth(n, 1.0) / (n * math.log(n)) for n in ns]
    r_two = [weight_sum_growth(n, 2.0) / n**2 for n in ns]
    for ratios in (r_half, r_one, r_two):
        assert max(ratios) / min(ratios) < 2.0
    assert r_half[-1] == pytest.approx(2 * integral_psi(0.5), rel=1e-2)


@given(st.floats(0.0, 0.95), unit, unit, unit)
def test_holder_kernel_bound(alpha, x, y, z):
    dxy, dxz = circle_distance(x, y), circle_distance(x, z)
    if min(dxy, dxz) < 1e-6:
        return
    lhs = abs(dxy ** (-alpha) - dxz ** (-alpha))
    rhs = 1.0 * circle_distance(y, z) * (dxy ** (-alpha - 1) + dxz ** (-alpha - 1))
    assert lhs <= rhs * (1 + 1e-12) + 1e-12


def test_a_n_regimes():
    assert a_n(16, 0.25) == 4.0
    assert a_n(16, 0.5) == 4.0
    assert a_n(16, 0.75) == pytest.approx(2.0)
