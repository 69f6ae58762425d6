import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import i0, i1

from fluctlab.fluctuation import (CriticalAlphaWarning, duality_gap, eta_pair, h_pair,
                                  limit_init_stats, martingale_cov, martingale_variance,
                                  normalization, run_semimartingale, sample_records,
                                  semimartingale_residual)
from fluctlab.lattice import a_n, build_lattice, chi_alpha, integral_psi, mean_weight
from fluctlab.meanfield import DensityPath, initial_grid, uniform_grid
from fluctlab.model import DisorderLaw, build_free, build_kuramoto, build_probe, von_mises
from fluctlab.simulator import ParticleState, SimConfig, initial_state, replica_rngs, simulate
from fluctlab.testfns import (CustomFn1, TestFn1, TestFn2, as_general, constant, cos_theta,
                              one2, separable, sin_theta)

pair = DisorderLaw.symmetric_pair(0.5)
fn_pool = [sin_theta(), cos_theta(2), TestFn1("cos", k=1, x_part="sin", ell=1),
           TestFn1("sin", k=3, omega_coeffs=(0.5, 1.0), x_part="cos", ell=2), constant(0.7)]
fns = st.sampled_from(fn_pool)


def state_and_grid(n, alpha, seed=0, replicas=2, model=None):
    model = model or build_kuramoto(1.0, 1.0, pair, von_mises(1.0))
    lat = build_lattice(n, alpha)
    state = initial_state(model, lat, replica_rngs(seed, replicas))
    return state, initial_grid(model, 64)


# eta

def test_eta_mass_cancellation():
    state, grid = state_and_grid(64, 0.3)
    assert np.max(np.abs(eta_pair(state, grid, constant()))) <= 1e-13


def test_eta_hand_case():
    lat = build_lattice(1, 0.2)
    state = ParticleState(0.0, lat, [0.3, 1.2], [0.0, 0.0])
    got = eta_pair(state, uniform_grid(64, DisorderLaw.dirac()), sin_theta())
    assert got[0] == pytest.approx((math.sin(0.3) + math.sin(1.2)) / 2, abs=1e-14)


def test_eta_time_mismatch():
    state, grid = state_and_grid(4, 0.3)
    with pytest.raises(ValueError):
        eta_pair(state, grid.copy(0.5), sin_theta())


def test_eta_critical_flag():
    state, grid = state_and_grid(4, 0.5)
    with pytest.warns(CriticalAlphaWarning):
        eta_pair(state, grid, sin_theta())
    assert normalization(16, 0.5) == (4.0, True)
    recs = list(sample_records(0.5, 16, 0.0, "sin1t", [1.0, 2.0]))
    assert recs[1]["replica"] == 1 and recs[0]["critical"] and recs[0]["a_N"] == 4.0


def test_eta_initial_variance_monte_carlo():
    m = build_kuramoto(1.0, 1.0)
    lat = build_lattice(1 << 12, 0.25)
    state = initial_state(m, lat, replica_rngs(3, 2000))
    vals = eta_pair(state, uniform_grid(64, DisorderLaw.dirac()), sin_theta())
    var = np.var(vals, ddof=1)
    assert abs(var - 0.25) <= 3 * 0.25 * math.sqrt(2 / (vals.size - 1))


@given(fns, fns, st.floats(-3, 3), st.floats(-3, 3))
def test_eta_bilinear(f1, f2, a, b):
    state, grid = state_and_grid(16, 0.3)
    combo = CustomFn1(lambda th, om, x: a * f1(th, om, x) + b * f2(th, om, x))
    lhs = eta_pair(state, grid, combo)
    rhs = a * eta_pair(state, grid, f1) + b * eta_pair(state, grid, f2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# H

@pytest.mark.parametrize("alpha", [0.0, 0.3, 0.75])
def test_h_constant_is_state_independent(alpha):
    state, grid = state_and_grid(32, alpha, replicas=3)
    expected = a_n(32, alpha) * (mean_weight(state.lattice) - integral_psi(alpha))
    for method in ("fast", "direct"):
        np.testing.assert_allclose(h_pair(state, grid, one2(), method=method), expected, atol=1e-12)


def test_h_constant_small_case():
    state, grid = state_and_grid(4, 0.0)
    np.testing.assert_allclose(h_pair(state, grid, one2()), -0.25, atol=1e-14)


def test_h_hand_case():
    lat = build_lattice(1, 0.0)
    th = np.array([0.3, 1.2])
    state = ParticleState(0.0, lat, th, [0.0, 0.0])
    g = separable(sin_theta(), cos_theta())
    got = h_pair(state, uniform_grid(256, DisorderLaw.dirac()), g)
    assert got[0] == pytest.approx(math.sin(1.5) / 4, abs=1e-12)


def test_h_fast_matches_direct():
    state, grid = state_and_grid(1 << 9, 0.6, seed=5)
    g = separable(fn_pool[3], fn_pool[2])
    fast = h_pair(state, grid, g, method="fast")
    direct = h_pair(state, grid, g, method="direct")
    np.testing.assert_allclose(fast, direct, atol=1e-10)


def test_h_fast_needs_separable():
    state, grid = state_and_grid(4, 0.3)
    with pytest.raises(ValueError):
        h_pair(state, grid, as_general(one2()), method="fast")


@given(fns, fns, fns, st.floats(-2, 2))
def test_h_bilinear(f1, f2, f3, a):
    state, grid = state_and_grid(16, 0.4)
    g1, g2 = separable(f1, f2), separable(f1, f3)
    combo = TestFn2(fn=lambda *t: g1(*t) + a * g2(*t))
    lhs = h_pair(state, grid, combo, method="direct")
    rhs = h_pair(state, grid, g1) + a * h_pair(state, grid, g2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# duality identity

def test_duality_constant():
    state, grid = state_and_grid(64, 0.4)
    assert np.max(duality_gap(state, grid, one2())) <= 1e-12


def test_duality_right_factor_only():
    state, grid = state_and_grid(64, 0.7)
    g = separable(constant(), sin_theta())
    assert np.max(duality_gap(state, grid, g)) <= 1e-12


@given(fns, fns, st.floats(0.0, 0.95), st.integers(0, 10_000))
def test_duality_random_separable(f1, f2, alpha, seed):
    state, grid = state_and_grid(32, alpha, seed=seed, replicas=1)
    g = separable(f1, f2)
    assert np.max(duality_gap(state, grid, g, relative=True)) <= 1e-10


def test_duality_general_callable():
    state, grid = state_and_grid(16, 0.3)
    g = TestFn2(fn=lambda th, om, x, th2, om2, x2: np.sin(th - th2) * np.cos(2 * np.pi * (x - x2)))
    assert np.max(duality_gap(state, grid, g, relative=True)) <= 1e-10


# limits at t = 0

def test_limit_stats_examples():
    grid = uniform_grid(128, DisorderLaw.dirac())
    out = limit_init_stats([constant(), sin_theta()], [separable(constant(), sin_theta())], grid, 0.3)
    assert out.regime == "gaussian"
    assert abs(out.c_eta[0, 0]) <= 1e-14
    assert out.c_eta[1, 1] == pytest.approx(0.25, abs=1e-12)
    assert out.c_eta_h[1, 0] == pytest.approx(integral_psi(0.3) / 4, rel=1e-10)
    assert out.as_dict()["f_ids"] == ["one", "sin1t"]


def test_limit_stats_deterministic_regime():
    grid = uniform_grid(64, DisorderLaw.dirac())
    out = limit_init_stats([sin_theta()], [one2()], grid, 0.75)
    assert out.h_limit[0] == pytest.approx(chi_alpha(0.75, 1e-10), rel=1e-10)
    assert np.all(out.c_eta == 0)
    with pytest.raises(ValueError):
        limit_init_stats([sin_theta()], [one2()], grid, 0.5)


def test_limit_stats_general_matches_separable():
    grid = initial_grid(build_kuramoto(1.0, 1.0, pair, von_mises(1.0)), 32)
    g = separable(fn_pool[2], fn_pool[1])
    a = limit_init_stats([sin_theta()], [g], grid, 0.3)
    b = limit_init_stats([sin_theta()], [as_general(g)], grid, 0.3)
    np.testing.assert_allclose(a.c_eta_h, b.c_eta_h, atol=1e-9)
    np.testing.assert_allclose(a.c_h, b.c_h, atol=1e-9)
    hi_a = limit_init_stats([], [g], grid, 0.8).h_limit
    hi_b = limit_init_stats([], [as_general(g)], grid, 0.8).h_limit
    np.testing.assert_allclose(hi_a, hi_b, atol=1e-12)


@given(st.lists(fns, min_size=1, max_size=3), st.lists(fns, min_size=2, max_size=4),
       st.floats(0.0, 0.45))
def test_limit_stats_symmetric_psd_diagonal(fs, gs, alpha):
    grid = initial_grid(build_kuramoto(1.0, 1.0, pair, von_mises(0.7)), 32)
    gl = [separable(gs[i], gs[i + 1]) for i in range(len(gs) - 1)]
    out = limit_init_stats(fs, gl, grid, alpha)
    np.testing.assert_allclose(out.c_eta, out.c_eta.T, atol=1e-14)
    np.testing.assert_allclose(out.c_h, out.c_h.T, atol=1e-14)
    assert np.all(np.diag(out.c_eta) >= 0) and np.all(np.diag(out.c_h) >= 0)


def test_h0_converges_in_deterministic_regime():
    kappa = 1.5
    m = build_kuramoto(1.0, 1.0, initial_law=von_mises(kappa))
    grid = initial_grid(m, 128)
    g = separable(cos_theta(), cos_theta())
    limit = chi_alpha(0.75) * (i1(kappa) / i0(kappa)) ** 2
    # midpoint rule on cell averages is second order in the cell width
    assert limit_init_stats([], [g], grid, 0.75).h_limit[0] == pytest.approx(limit, rel=1e-3)
    stats = []
    for n in (1 << 6, 1 << 9, 1 << 12):
        state = initial_state(m, build_lattice(n, 0.75), replica_rngs(n, 200))
        vals = h_pair(state, grid, g)
        stats.append((abs(np.mean(vals) - limit), np.var(vals)))
    assert stats[-1][1] < stats[0][1] / 2
    assert stats[-1][0] < stats[0][0]


# martingale brackets

def stationary_free(sigma=1.0, alpha=0.3, t_end=1.0):
    m = build_free(sigma, "circle")
    return m, DensityPath.stationary(uniform_grid(64, m.disorder_law), m, alpha, t_end)


def test_martingale_cov_examples():
    _, path = stationary_free()
    assert martingale_cov(constant(), constant(), 1.0, path).eta == 0.0
    assert martingale_cov(sin_theta(), sin_theta(), 1.0, path).eta == pytest.approx(0.25, abs=1e-12)
    _, path2 = stationary_free(sigma=2.0)
    assert martingale_cov(sin_theta(), sin_theta(), 1.0, path2).eta == pytest.approx(1.0, abs=1e-12)


def test_martingale_cov_h_terms():
    _, path = stationary_free(alpha=0.2)
    g = separable(constant(), sin_theta())
    out = martingale_cov(sin_theta(), sin_theta(), 1.0, path, g=g)
    # [d2 g Psi, nu]_2 = integral_psi * cos
    assert out.eta_h == pytest.approx(0.25 * integral_psi(0.2), rel=1e-12)
    assert out.h == pytest.approx(0.25 * integral_psi(0.2) ** 2, rel=1e-12)
    with pytest.raises(ValueError):
        martingale_cov(sin_theta(), sin_theta(), 2.0, path)


def test_martingale_variance_monte_carlo():
    m, path = stationary_free()
    n, reps = 64, 2000
    tr = simulate(m, build_lattice(n, 0.3), SimConfig(dt=0.02, t_end=1.0, record_stride=50),
                  martingales=(sin_theta(),), replicas=reps)
    mc = tr.values("M:sin1t")[-1]
    pred = martingale_variance(martingale_cov(sin_theta(), sin_theta(), 1.0, path).eta, n, 0.3)
    assert pred == pytest.approx(0.25)
    var = np.var(mc, ddof=1)
    # stderr of a sample variance uses the fourth moment
    se = math.sqrt(np.var((mc - mc.mean()) ** 2, ddof=1) / reps)
    assert abs(var - pred) <= 3 * se


# semimartingale residual

def test_residual_trivial_case():
    m = build_probe(0.0, sigma=1.0)
    path = DensityPath.stationary(uniform_grid(32, m.disorder_law), m, 0.3, 1.0)
    res = run_semimartingale(m, build_lattice(8, 0.3), SimConfig(dt=0.05, t_end=1.0), constant(),
                             path, replicas=2)
    assert np.all(res.values == 0.0)


def test_residual_probe_closed_form():
    alpha, n, dt = 0.3, 32, 0.01
    m = build_probe(1.0, sigma=0.0)
    lat = build_lattice(n, alpha)
    path = DensityPath.stationary(uniform_grid(64, m.disorder_law), m, alpha, 1.0)
    res = run_semimartingale(m, lat, SimConfig(dt=dt, t_end=1.0, seed=2), sin_theta(), path,
                             replicas=2)
    th0 = initial_state(m, lat, replica_rngs(2, 2)).theta
    mw, an = mean_weight(lat), a_n(n, alpha)
    ks = np.arange(100)
    times = ks * dt
    eta = lambda t: an * np.mean(np.sin(th0 + mw * t), axis=-1)
    left_sum = an * mw * dt * np.sum(np.mean(np.cos(th0[:, None, :] + mw * times[None, :, None]), axis=-1), axis=1)
    closed = eta(1.0) - eta(0.0) - left_sum
    np.testing.assert_allclose(res.at_end(), closed, atol=1e-8)


def test_residual_missing_accumulators():
    m = build_probe(1.0)
    path = DensityPath.stationary(uniform_grid(32, m.disorder_law), m, 0.3, 1.0)
    tr = simulate(m, build_lattice(4, 0.3), SimConfig(dt=0.1, t_end=0.2), (sin_theta(),))
    with pytest.raises(ValueError):
        semimartingale_residual(tr, sin_theta(), path)
