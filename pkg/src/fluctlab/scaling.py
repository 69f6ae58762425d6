"""N-ladder experiments, log-log exponent fits and regime labels."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .lattice import build_lattice
from .meanfield import DensityPath, admissible_dt, coupling_field, expect_nu, initial_grid, solve_density
from .model import ModelSpec
from .simulator import SimConfig, replica_seed, simulate
from .testfns import sin_theta

STATISTICS = ("sd", "bias", "coupling", "coupling_sup")
# relative stderr floor used when turning stderrs into regression weights
WEIGHT_FLOOR = 1e-6


class LadderError(RuntimeError):
    def __init__(self, alpha, n_half, replicas, cause):
        super().__init__(f"alpha={alpha} N={n_half} replicas={replicas}: {cause!r}")
        self.alpha, self.n_half, self.replicas = alpha, n_half, replicas


@dataclass
class LadderConfig:
    alphas: Sequence[float]
    n_halves: Sequence[int] = (1 << 8, 1 << 9, 1 << 10, 1 << 11, 1 << 12, 1 << 13)
    replicas: int = 200
    base_seed: int = 0
    observables: Sequence[str] = ("sin1t",)
    sim: SimConfig = field(default_factory=lambda: SimConfig(dt=1e-2, t_end=1.0))
    batch: int = 50
    workers: int | None = None
    n_cells: int = 128

    def __post_init__(self):
        ns = list(self.n_halves)
        if len(ns) < 1 or any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("n_halves must be strictly increasing")
        if any(int(n) != n or n < 1 for n in ns):
            raise ValueError("n_halves must be positive integers")
        if self.replicas < 2:
            raise ValueError("replicas must be >= 2 for variance estimates")
        if any(not 0.0 <= a < 1.0 for a in self.alphas) or not len(self.alphas):
            raise ValueError("alphas must be non-empty and lie in [0, 1)")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


@dataclass
class LadderRow:
    alpha: float
    n_half: int
    replicas: int
    statistic: str
    value: float
    stderr: float


@dataclass
class ScalingEstimate:
    slope: float
    intercept: float
    stderr: float
    r_squared: float
    regime_predicted: float | None = None
    regime_match: bool | None = None


def predicted_slope(alpha: float) -> float:
    return -0.5 if alpha <= 0.5 else -(1.0 - alpha)


def fit_exponent(points, alpha: float | None = None, tolerance: float = 0.1) -> ScalingEstimate:
    """Weighted least squares of log(value) on log(N).

    points: iterable of (N, value, weight). stderr of the slope comes from
    the weighted residual variance (zero for an exact power law).
    """
    pts = [(float(n), float(v), float(w)) for n, v, w in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    if any(v <= 0 for _, v, _ in pts):
        raise ValueError("values must be positive to take logs")
    if any(n <= 0 or w <= 0 or not math.isfinite(w) for n, _, w in pts):
        raise ValueError("N and weights must be positive and finite")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    w = np.array([p[2] for p in pts])
    w = w / w.max()
    xm = np.sum(w * x) / w.sum()
    ym = np.sum(w * y) / w.sum()
    sxx = np.sum(w * (x - xm) ** 2)
    if sxx == 0:
        raise ValueError("all N identical")
    slope = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    ss_res = float(np.sum(w * resid**2))
    ss_tot = float(np.sum(w * (y - ym) ** 2))
    dof = len(pts) - 2
    stderr = math.sqrt(ss_res / dof / sxx) if dof > 0 else 0.0
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    est = ScalingEstimate(slope, intercept, stderr, r2)
    if alpha is not None:
        est.regime_predicted = predicted_slope(alpha)
        est.regime_match = classify_regime(alpha, est, tolerance) in ("gaussian", "deterministic")
    return est


def classify_regime(alpha: float, estimate: ScalingEstimate, tolerance: float) -> str:
    """gaussian / deterministic when the slope matches its regime, critical at 1/2."""
    if math.isclose(alpha, 0.5, abs_tol=1e-15):
        return "critical"
    target = predicted_slope(alpha)
    if abs(estimate.slope - target) <= tolerance:
        return "gaussian" if alpha < 0.5 else "deterministic"
    return "mismatch"


def _uniform_is_stationary(model: ModelSpec, alpha: float, n_cells: int) -> bool:
    # uniform density stays put when the total drift does not depend on theta
    if not model.is_circle or model.initial_law.name != "uniform":
        return False
    grid = initial_grid(model, n_cells)
    couple = coupling_field(grid, model, alpha)
    th = grid.faces[:, None]
    om = grid.omega_values[None, :]
    v = np.broadcast_to(model.drift_c(th, om) + couple(th, om), (n_cells, len(grid.omega_values)))
    return bool(np.all(np.ptp(v, axis=0) <= 1e-12 * (1.0 + np.max(np.abs(v)))))


def meanfield_path(model: ModelSpec, alpha: float, t_end: float, n_cells: int = 128) -> DensityPath:
    """Analytic incoherent state when available, otherwise a finite-volume solve."""
    grid0 = initial_grid(model, n_cells)
    if _uniform_is_stationary(model, alpha, n_cells):
        return DensityPath.stationary(grid0, model, alpha, t_end)
    limit = admissible_dt(model, alpha, n_cells, grid0.omega_values)
    steps = max(1, math.ceil(t_end / limit))
    return solve_density(model, alpha, grid0, t_end / steps, t_end)


def _cell_seed(base_seed: int, ia: int, iN: int) -> int:
    return replica_seed(base_seed, (ia << 24) | iN)


def _observable(name):
    from .testfns import TestFn1

    if name == "sin1t":
        return sin_theta()
    if name.startswith(("sin", "cos")) and name.endswith("t"):
        return TestFn1(name[:3], k=int(name[3:-1]))
    raise ValueError(f"unknown observable {name!r}")


def run_ladder(config: LadderConfig, model: ModelSpec, statistic: str, f=None,
               nu_mean: Callable[[float, float], float] | None = None) -> list[LadderRow]:
    """One row per (alpha, N) aggregating config.replicas replicas at t_end.

    sd / bias use the samples <nu_N - nu, f>(T); coupling uses
    coupling_error(T) and coupling_sup its running supremum on [0, T].
    nu_mean(alpha, t) overrides <nu_t, f> (needed for line models).
    """
    if statistic not in STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    f = f if f is not None else _observable(config.observables[0])
    coupled = statistic.startswith("coupling")
    t_end = config.sim.t_end
    workers = config.workers or os.cpu_count() or 1
    rows = []
    for ia, alpha in enumerate(config.alphas):
        path = None
        if nu_mean is None or coupled:
            path = meanfield_path(model, alpha, t_end, config.n_cells)
        limit = nu_mean(alpha, t_end) if nu_mean is not None else expect_nu(path.grid_at(t_end), f)
        for iN, n in enumerate(config.n_halves):
            lat = build_lattice(n, alpha)
            sim = replace(config.sim, seed=_cell_seed(config.base_seed, ia, iN))
            batches = [list(range(s, min(s + config.batch, config.replicas)))
                       for s in range(0, config.replicas, config.batch)]

            def work(reps, lat=lat, sim=sim, path=path, alpha=alpha, n=n):
                try:
                    tr = simulate(model, lat, sim, (f,), replicas=reps, meanfield=path,
                                  coupled=coupled)
                except Exception as exc:  # context for the failing cell
                    raise LadderError(alpha, n, (reps[0], reps[-1]), exc) from exc
                if statistic == "coupling":
                    return tr.values("coupling_error")[-1]
                if statistic == "coupling_sup":
                    return tr.values("coupling_sup")[-1]
                return tr.values(f"nu:{f.id}")[-1] - limit

            if workers > 1 and len(batches) > 1:
                with ThreadPoolExecutor(min(workers, len(batches))) as pool:
                    parts = list(pool.map(work, batches))
            else:
                parts = [work(b) for b in batches]
            samples = np.concatenate(parts)
            rows.append(_aggregate(alpha, n, statistic, samples))
    return rows


def _aggregate(alpha, n, statistic, samples) -> LadderRow:
    r = samples.size
    if r == 0:
        raise ValueError("no replicas")
    sd = float(np.std(samples, ddof=1)) if r > 1 else 0.0
    if statistic == "sd":
        value, err = sd, sd / math.sqrt(2.0 * (r - 1))
    elif statistic == "bias":
        value, err = abs(float(np.mean(samples))), sd / math.sqrt(r)
    else:
        value, err = float(np.mean(samples)), sd / math.sqrt(r)
    return LadderRow(float(alpha), int(n), r, statistic, value, err)


def regression_weight(value: float, stderr: float, floor: float = WEIGHT_FLOOR) -> float:
    """1/stderr^2 in log space (stderr/value), floored so exact rows stay finite."""
    rel = stderr / value if value > 0 else math.inf
    return 1.0 / max(rel, floor) ** 2


def fit_rows(rows: Sequence[LadderRow], alpha: float, tolerance: float = 0.1) -> ScalingEstimate:
    pts = [(r.n_half, r.value, regression_weight(r.value, r.stderr)) for r in rows
           if r.alpha == alpha]
    return fit_exponent(pts, alpha, tolerance)


CSV_COLUMNS = ("alpha", "N", "replicas", "statistic", "value", "stderr", "slope",
               "slope_stderr", "regime")


def scaling_table(rows: Sequence[LadderRow], tolerance: float = 0.1):
    """Rows for the scaling CSV plus the per-alpha estimates and labels."""
    out, fits = [], {}
    for alpha in sorted({r.alpha for r in rows}):
        sel = [r for r in rows if r.alpha == alpha]
        if len(sel) >= 3:
            est = fit_rows(sel, alpha, tolerance)
            label = classify_regime(alpha, est, tolerance)
        else:
            est, label = None, "insufficient"
        fits[alpha] = (est, label)
        for r in sel:
            out.append((r.alpha, r.n_half, r.replicas, r.statistic, r.value, r.stderr,
                        est.slope if est else math.nan, est.stderr if est else math.nan, label))
    return out, fits
