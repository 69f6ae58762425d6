"""Fluctuation fields eta_N and H_N evaluated against test functions.

eta_N f = a_N (<nu_N, f> - <nu_t, f>)
H_N g   = a_N ( |L|^-2 sum_ij Psi_ij g(tau_i, tau_j)
                - |L|^-1 sum_i int Psi(x_i, x~) g(tau_i, tau~) nu_t(dtau~) )

Every evaluator returns one value per replica (shape (R,)).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lattice import a_n, chi_alpha, convolve_lattice, singular_rule
from .meanfield import DensityGrid, expect_nu, psi_average
from .simulator import SimConfig, Trajectory, interaction_field, simulate
from .testfns import CustomFn1, TestFn2

_TIME_TOL = 1e-9
_BLOCK = 1 << 21


class CriticalAlphaWarning(UserWarning):
    pass


def is_critical(alpha: float) -> bool:
    return math.isclose(alpha, 0.5, abs_tol=1e-15)


def normalization(n_half: int, alpha: float) -> tuple[float, bool]:
    """(a_N, critical flag). At alpha = 1/2 sqrt(N) is used and flagged."""
    return a_n(n_half, alpha), is_critical(alpha)


def _check_time(state, grid: DensityGrid):
    if abs(state.time - grid.time) > _TIME_TOL * max(1.0, abs(state.time)):
        raise ValueError(f"grid time {grid.time} does not match state time {state.time}")


def _alpha(state, alpha):
    return state.lattice.alpha if alpha is None else float(alpha)


def eta_pair(state, grid: DensityGrid, f, alpha: float | None = None) -> np.ndarray:
    """<eta_N, f> for every replica."""
    _check_time(state, grid)
    alpha = _alpha(state, alpha)
    an, critical = normalization(state.lattice.n_half, alpha)
    if critical:
        warnings.warn("alpha = 1/2: sqrt(N) scaling used, no limit theory", CriticalAlphaWarning)
    emp = np.mean(f(state.theta, state.omega, state.positions), axis=-1)
    return an * (emp - expect_nu(grid, f))


# -- H_N ---------------------------------------------------------------------

def _pair_sum_rows(g: TestFn2, th, om, x, kernel, size, absolute=False):
    """sum_ij Psi_ij g(tau_i, tau_j), blocked over rows i."""
    idx = np.arange(size)
    block = max(1, _BLOCK // size)
    total = 0.0
    for start in range(0, size, block):
        rows = idx[start:start + block]
        psi = kernel[(rows[:, None] - idx[None, :]) % size]
        vals = g(th[rows, None], om[rows, None], x[rows, None], th[None, :], om[None, :], x[None, :])
        total += np.sum(np.abs(vals) * psi if absolute else vals * psi)
    return total


def _pair_sum_cols(g: TestFn2, th, om, x, kernel, size):
    """Same double sum, organised as sum_j phi(tau_j) with phi built column by column.

    Also returns sum_ij Psi_ij |g| as a magnitude scale.
    """
    idx = np.arange(size)
    block = max(1, _BLOCK // size)
    total, scale = 0.0, 0.0
    for start in range(0, size, block):
        cols = idx[start:start + block]
        psi = kernel[(idx[:, None] - cols[None, :]) % size]
        vals = g(th[:, None], om[:, None], x[:, None], th[None, cols], om[None, cols], x[None, cols])
        phi = np.sum(vals * psi, axis=0)
        total += math.fsum(phi)
        scale += np.sum(np.abs(vals) * psi)
    return total, scale


def _second_mean_general(g: TestFn2, grid: DensityGrid, th, om, x, alpha, chunk=32):
    """For each i: int Psi(x_i, x~) <g(tau_i, ., ., x~), xi> dx~ via Gauss-Jacobi in x~ - x_i."""
    z, w = singular_rule(alpha)
    zz = np.concatenate([z, -z])
    ww = np.concatenate([w, w])
    thc = grid.centers[:, None, None]
    omc = grid.omega_values[None, :, None]
    weights = (grid.values * grid.omega_probs[None, :] * grid.width)[:, :, None]
    out = np.empty(th.shape)
    for start in range(0, th.size, chunk):
        sl = slice(start, start + chunk)
        ti, oi, xi = (a[sl, None, None, None] for a in (th, om, x))
        vals = g(ti, oi, xi, thc[None], omc[None], xi + zz[None, None, None, :])
        out[sl] = np.sum(vals * weights[None] * ww, axis=(1, 2, 3))
    return out


def _second_mean(g: TestFn2, grid, th, om, x, alpha):
    if g.separable:
        return g.left(th, om, x) * psi_average(g.right, grid, x, alpha)
    return _second_mean_general(g, grid, th, om, x, alpha)


def h_pair(state, grid: DensityGrid, g: TestFn2, alpha: float | None = None,
           method: str = "fast") -> np.ndarray:
    """<H_N, g> for every replica.

    method "fast" convolves the right factor of a separable g with the
    kernel; "direct" forms the O(N^2) double sum explicitly.
    """
    _check_time(state, grid)
    if method not in ("fast", "direct"):
        raise ValueError(f"unknown method {method!r}")
    if method == "fast" and not g.separable:
        raise ValueError("fast h_pair needs a separable g")
    alpha = _alpha(state, alpha)
    lat = state.lattice
    size = lat.size
    an, critical = normalization(lat.n_half, alpha)
    if critical:
        warnings.warn("alpha = 1/2: sqrt(N) scaling used, no limit theory", CriticalAlphaWarning)
    x = state.positions
    out = np.empty(state.replicas)
    for r in range(state.replicas):
        th, om = state.theta[r], state.omega[r]
        if method == "fast":
            f1 = g.left(th, om, x)
            f2 = g.right(th, om, x)
            first = np.dot(f1, convolve_lattice(lat, f2, "fast")) / size**2
        else:
            first = _pair_sum_rows(g, th, om, x, lat.kernel, size) / size**2
        second = np.mean(_second_mean(g, grid, th, om, x, alpha))
        out[r] = an * (first - second)
    return out


def duality_terms(state, grid: DensityGrid, g: TestFn2, alpha: float | None = None):
    """(lhs, rhs, scale) per replica for <H_N, g> = <eta_N, phi>.

    phi(tau~) = |L|^-1 sum_i Psi(x_i, x~) g(tau_i, tau~). The right side is
    assembled column-wise and always uses quadrature for the nu_t part, so
    it shares no arithmetic with h_pair. scale = a_N |L|^-2 sum Psi |g|.
    """
    _check_time(state, grid)
    alpha = _alpha(state, alpha)
    lat = state.lattice
    size = lat.size
    an = a_n(lat.n_half, alpha)
    lhs = h_pair(state, grid, g, alpha, "fast" if g.separable else "direct")
    rhs = np.empty(state.replicas)
    scale = np.empty(state.replicas)
    x = state.positions
    for r in range(state.replicas):
        th, om = state.theta[r], state.omega[r]
        emp, mag = _pair_sum_cols(g, th, om, x, lat.kernel, size)
        limit = np.mean(_second_mean_general(g, grid, th, om, x, alpha))
        rhs[r] = an * (emp / size**2 - limit)
        scale[r] = an * mag / size**2
    return lhs, rhs, scale


def duality_gap(state, grid: DensityGrid, g: TestFn2, alpha: float | None = None,
                relative: bool = False) -> np.ndarray:
    """|<H_N, g> - <eta_N, <nu_N, Psi g>>| per replica (optionally divided by scale)."""
    lhs, rhs, scale = duality_terms(state, grid, g, alpha)
    gap = np.abs(lhs - rhs)
    if relative:
        return gap / np.maximum(scale, np.finfo(float).tiny)
    return gap


# -- t = 0 limits ------------------------------------------------------------

@dataclass
class InitLimits:
    alpha: float
    regime: str  # "gaussian" or "deterministic"
    f_ids: list
    g_ids: list
    c_eta: np.ndarray | None = None
    c_eta_h: np.ndarray | None = None
    c_h: np.ndarray | None = None
    h_limit: np.ndarray | None = None

    def as_dict(self) -> dict:
        out = {"alpha": self.alpha, "regime": self.regime, "f_ids": self.f_ids, "g_ids": self.g_ids}
        for key in ("c_eta", "c_eta_h", "c_h", "h_limit"):
            val = getattr(self, key)
            out[key] = None if val is None else np.asarray(val).tolist()
        return out


def _x_nodes(n_x):
    return (np.arange(n_x) - n_x // 2) / n_x


def _xi_mean(grid, vals):
    # vals shaped (cells, atoms, ...) -> integral against xi over the first two axes
    w = grid.values * grid.omega_probs[None, :] * grid.width
    return np.tensordot(w, vals, axes=([0, 1], [0, 1]))


def _bracket2(g: TestFn2, grid: DensityGrid, xs, alpha):
    """[g Psi, nu]_2 on (cells, atoms, x~) nodes: integrate g's first argument."""
    thc = grid.centers[:, None, None]
    omc = grid.omega_values[None, :, None]
    if g.separable:
        return g.right(thc, omc, xs[None, None, :]) * psi_average(g.left, grid, xs, alpha)[None, None, :]
    z, w = singular_rule(alpha)
    zz = np.concatenate([z, -z])
    ww = np.concatenate([w, w])
    weights = grid.values * grid.omega_probs[None, :] * grid.width
    out = np.empty((grid.n_cells, len(grid.omega_values), len(xs)))
    t1 = grid.centers[:, None, None, None, None]
    o1 = grid.omega_values[None, :, None, None, None]
    t2 = grid.centers[None, None, None, :, None]
    o2 = grid.omega_values[None, None, None, None, :]
    for k, xk in enumerate(xs):
        x1 = (xk + zz)[None, None, :, None, None]
        vals = g(t1, o1, x1, t2, o2, xk)
        vals = np.broadcast_to(vals, (grid.n_cells, len(grid.omega_values), len(zz),
                                      grid.n_cells, len(grid.omega_values)))
        inner = np.tensordot(vals, ww, axes=([2], [0]))  # (c1, a1, c2, a2)
        out[:, :, k] = np.tensordot(weights, inner, axes=([0, 1], [0, 1]))
    return out


def limit_init_stats(f_list, g_list, grid0: DensityGrid, alpha: float, n_x: int = 64,
                     chi_tol: float = 1e-10) -> InitLimits:
    """Limit law of (eta_{N,0}, H_{N,0}).

    alpha < 1/2: Gaussian covariances C_eta, C_{eta,H}, C_H (x-integrals on
    n_x uniform nodes, exact for low-order trigonometric x-dependence).
    alpha > 1/2: eta_0 = 0 and <H_0, g> = chi(alpha) int g(., x, ., x) xi_0 xi_0 dx.
    """
    if is_critical(alpha):
        raise ValueError("no limit law available at alpha = 1/2")
    f_list, g_list = list(f_list), list(g_list)
    xs = _x_nodes(n_x)
    thc = grid0.centers[:, None, None]
    omc = grid0.omega_values[None, :, None]
    f_ids = [f.id for f in f_list]
    g_ids = [g.id for g in g_list]
    if alpha > 0.5:
        chi = chi_alpha(alpha, chi_tol)
        h = []
        t1 = grid0.centers[:, None, None, None, None]
        o1 = grid0.omega_values[None, :, None, None, None]
        t2 = grid0.centers[None, None, :, None, None]
        o2 = grid0.omega_values[None, None, None, :, None]
        w = grid0.values * grid0.omega_probs[None, :] * grid0.width
        for g in g_list:
            if g.separable:
                a = _xi_mean(grid0, g.left(thc, omc, xs[None, None, :]))
                b = _xi_mean(grid0, g.right(thc, omc, xs[None, None, :]))
                val = np.mean(a * b)
            else:
                vals = g(t1, o1, xs, t2, o2, xs)
                vals = np.broadcast_to(vals, w.shape + w.shape + xs.shape)
                inner = np.tensordot(w, vals, axes=([0, 1], [0, 1]))
                val = np.mean(np.tensordot(w, inner, axes=([0, 1], [0, 1])))
            h.append(chi * val)
        zeros = np.zeros((len(f_list), len(f_list)))
        return InitLimits(alpha, "deterministic", f_ids, g_ids, c_eta=zeros,
                          h_limit=np.array(h))
    fv = [np.broadcast_to(f(thc, omc, xs[None, None, :]),
                          grid0.values.shape + xs.shape) for f in f_list]
    gv = [_bracket2(g, grid0, xs, alpha) for g in g_list]

    def cov(u, v):
        # centred form keeps diagonal entries >= 0 in floating point
        du = u - _xi_mean(grid0, u)[None, None, :]
        dv = v - _xi_mean(grid0, v)[None, None, :]
        return 0.5 * np.mean(_xi_mean(grid0, du * dv))

    c_eta = np.array([[cov(a, b) for b in fv] for a in fv]).reshape(len(fv), len(fv))
    c_eta_h = np.array([[cov(a, b) for b in gv] for a in fv]).reshape(len(fv), len(gv))
    c_h = np.array([[cov(a, b) for b in gv] for a in gv]).reshape(len(gv), len(gv))
    return InitLimits(alpha, "gaussian", f_ids, g_ids, c_eta, c_eta_h, c_h)


# -- martingale covariances ----------------------------------------------------

@dataclass
class MartingaleCov:
    t: float
    eta: float
    eta_h: float | None = None
    h: float | None = None


def _time_nodes(path, t):
    times = np.asarray(path.times, float)
    inner = times[(times > 0) & (times < t - 1e-12)]
    return np.concatenate([[0.0], inner, [t]])


def _dright(g: TestFn2):
    """Separable g -> (left, right.grad) so that d/dtheta~ g = left (x) right'."""
    if not g.separable:
        raise ValueError("martingale covariances with H need a separable g")
    right = g.right
    return g.left, CustomFn1(right.grad, x_free=right.x_free, name=right.id + "'")


def martingale_cov(f1, f2, t: float, density_path, g=None, g2=None, alpha: float | None = None,
                   n_x: int = 64) -> MartingaleCov:
    """Limit bracket K_{t,t} of the martingale parts.

    With noise sigma dB the brackets pick up a factor sigma^2 (sigma = 1
    reproduces the unit-noise formulas). Time integrals use the trapezoid
    rule on the solver's recorded times.
    """
    if not density_path.covers(t):
        raise ValueError("density path does not cover [0, t]")
    model = density_path.model
    alpha = density_path.alpha if alpha is None else alpha
    s2 = model.noise_sigma**2
    nodes = _time_nodes(density_path, t)
    xs = _x_nodes(n_x)
    g2 = g if g2 is None else g2

    def prod_fn(u, v):
        return CustomFn1(lambda th, om, x: u(th, om, x) * v(th, om, x),
                         x_free=getattr(u, "x_free", False) and getattr(v, "x_free", False))

    d1 = CustomFn1(f1.grad, x_free=f1.x_free)
    d2 = CustomFn1(f2.grad, x_free=f2.x_free)
    eta_vals = [expect_nu(density_path.grid_at(s), prod_fn(d1, d2), n_x) for s in nodes]
    out = MartingaleCov(t, 0.5 * s2 * float(np.trapezoid(eta_vals, nodes)))
    if g is None:
        return out

    def bracket(gg, grid):
        left, dright = _dright(gg)
        thc = grid.centers[:, None, None]
        omc = grid.omega_values[None, :, None]
        return dright(thc, omc, xs[None, None, :]) * psi_average(left, grid, xs, alpha)[None, None, :]

    def nu_mean(grid, vals):
        return float(np.mean(_xi_mean(grid, vals)))

    eh, hh = [], []
    for s in nodes:
        grid = density_path.grid_at(s)
        thc = grid.centers[:, None, None]
        omc = grid.omega_values[None, :, None]
        df = np.broadcast_to(f1.grad(thc, omc, xs[None, None, :]), grid.values.shape + xs.shape)
        b1 = bracket(g, grid)
        b2 = bracket(g2, grid)
        eh.append(nu_mean(grid, df * b1))
        hh.append(nu_mean(grid, b1 * b2))
    out.eta_h = 0.5 * s2 * float(np.trapezoid(eh, nodes))
    out.h = 0.5 * s2 * float(np.trapezoid(hh, nodes))
    return out


def martingale_variance(kappa_eta: float, n_half: int, alpha: float) -> float:
    """Finite-N E[(M_N^eta f)^2] implied by the bracket: K * a_N^2 / N."""
    return kappa_eta * a_n(n_half, alpha) ** 2 / n_half


# -- semimartingale decomposition -------------------------------------------

def _generator_fn(model, f, couple):
    s2 = 0.5 * model.noise_sigma**2

    def lf(th, om, x):
        return s2 * f.lap(th, om, x) + f.grad(th, om, x) * (model.drift_c(th, om) + couple(th, om))

    return CustomFn1(lf, x_free=f.x_free, name=f"L[{f.id}]")


def semimart_integrands(model, f, density_path, alpha: float | None = None,
                        method: str = "auto", n_x: int = 64) -> dict:
    """Integrands (state, t) -> per-replica values for the two drift terms.

    "gen": <eta_N, L[nu_s] f> with L[nu] f = sigma^2/2 f'' + f' (c + [Gamma Psi, nu]).
    "phi": <H_N, f' Gamma> = a_N |L|^-1 sum_i f'(tau_i) (F_i - [Gamma Psi, nu](tau_i)),
    F_i the particle interaction field.
    """
    def an_of(state):
        return a_n(state.lattice.n_half, state.lattice.alpha if alpha is None else alpha)

    def gen(state, t):
        grid = density_path.grid_at(t)
        lf = _generator_fn(model, f, density_path.coupling_at(t))
        emp = np.mean(lf(state.theta, state.omega, state.positions), axis=-1)
        return an_of(state) * (emp - expect_nu(grid, lf, n_x))

    def phi(state, t):
        couple = density_path.coupling_at(t)
        field_n = interaction_field(state, model, method)
        grad = f.grad(state.theta, state.omega, state.positions)
        return an_of(state) * np.mean(grad * (field_n - couple(state.theta, state.omega)), axis=-1)

    return {"gen": gen, "phi": phi}


@dataclass
class Residual:
    times: np.ndarray
    values: np.ndarray  # (n_records, R)
    eta: np.ndarray = field(repr=False, default=None)

    def at_end(self) -> np.ndarray:
        return self.values[-1]

    def rms_end(self) -> float:
        return float(np.sqrt(np.mean(self.values[-1] ** 2)))


def semimartingale_residual(traj: Trajectory, f, density_path, alpha: float | None = None,
                            n_x: int = 64) -> Residual:
    """r(t) = eta_t - eta_0 - int <eta, L f> - int <H, Phi[f]> - M_t f from recorded series."""
    keys = [f"nu:{f.id}", "int:gen", "int:phi", f"M:{f.id}"]
    missing = [k for k in keys if k not in traj.series]
    if missing:
        raise ValueError(f"trajectory lacks accumulators {missing}")
    lat = traj.final.lattice
    an = a_n(lat.n_half, lat.alpha if alpha is None else alpha)
    times = np.asarray(traj.times)
    limit = np.array([expect_nu(density_path.grid_at(t), f, n_x) for t in times])
    eta = an * (traj.values(keys[0]) - limit[:, None])
    r = eta - eta[0] - traj.values("int:gen") - traj.values("int:phi") - traj.values(keys[3])
    return Residual(times, r, eta)


def run_semimartingale(model, lattice, config: SimConfig, f, density_path, replicas=1,
                       method: str = "auto") -> Residual:
    """Simulate with the accumulators needed by semimartingale_residual."""
    integrands = semimart_integrands(model, f, density_path, method=method)
    cfg = SimConfig(config.dt, config.t_end, config.seed, config.record_stride, method)
    traj = simulate(model, lattice, cfg, observables=(f,), replicas=replicas,
                    integrands=integrands, martingales=(f,))
    return semimartingale_residual(traj, f, density_path)


def sample_records(alpha, n_half, time, fn_id, values, replica_offset=0):
    """JSONL-ready dicts {alpha, N, replica, time, fn_id, value, a_N}."""
    an, critical = normalization(n_half, alpha)
    for r, v in enumerate(np.atleast_1d(values)):
        rec = {"alpha": alpha, "N": n_half, "replica": replica_offset + r, "time": time,
               "fn_id": fn_id, "value": float(v), "a_N": an}
        if critical:
            rec["critical"] = True
        yield rec
