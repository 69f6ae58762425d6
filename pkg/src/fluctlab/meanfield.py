"""Reduced McKean-Vlasov dynamics for the angle law xi_t on a theta-grid.

The spatial variable integrates out exactly: the limit interaction felt at
any site is integral_psi(alpha) * [Gamma, xi_t], so the solver only
discretises theta (finite volumes on the circle) and keeps one density per
disorder atom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import integral_psi
from .model import TWO_PI, DisorderLaw, ModelSpec


class CFLError(ValueError):
    def __init__(self, dt, admissible):
        super().__init__(f"dt={dt:g} violates CFL; admissible dt <= {admissible:g}")
        self.dt = dt
        self.admissible = admissible


@dataclass
class DensityGrid:
    """Cell averages p(theta, omega) of xi_t = p dtheta mu(domega)."""
    n_cells: int
    omega_values: np.ndarray
    omega_probs: np.ndarray
    values: np.ndarray  # (n_cells, n_atoms)
    time: float = 0.0

    @property
    def width(self) -> float:
        return TWO_PI / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.width

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.n_cells) * self.width

    def masses(self) -> np.ndarray:
        """Conditional mass for every disorder atom (should be 1)."""
        return self.values.sum(axis=0) * self.width

    def copy(self, time: float | None = None) -> "DensityGrid":
        return DensityGrid(self.n_cells, self.omega_values, self.omega_probs,
                           self.values.copy(), self.time if time is None else time)


def initial_grid(model: ModelSpec, n_cells: int, time: float = 0.0,
                 disorder: DisorderLaw | None = None) -> DensityGrid:
    """Cell averages of the initial density (5-point Gauss per cell), renormalised."""
    if not model.is_circle:
        raise ValueError("the density solver only handles circle state spaces")
    law = disorder or model.disorder_law
    width = TWO_PI / n_cells
    nodes, weights = np.polynomial.legendre.leggauss(5)
    left = np.arange(n_cells) * width
    pts = left[:, None] + 0.5 * width * (nodes[None, :] + 1.0)
    avg = (model.initial_law.density(pts) * weights).sum(axis=1) * 0.5
    avg = avg / (avg.sum() * width)
    atoms = len(law.values)
    values = np.repeat(avg[:, None], atoms, axis=1)
    return DensityGrid(n_cells, np.asarray(law.values, float), np.asarray(law.probs, float),
                       values, time)


def uniform_grid(n_cells: int, disorder: DisorderLaw, time: float = 0.0) -> DensityGrid:
    atoms = len(disorder.values)
    return DensityGrid(n_cells, np.asarray(disorder.values, float),
                       np.asarray(disorder.probs, float),
                       np.full((n_cells, atoms), 1.0 / TWO_PI), time)


def expect_xi(grid: DensityGrid, h) -> float:
    """<xi, h> by midpoint quadrature; h takes (theta, omega) arrays."""
    th = grid.centers[:, None]
    om = grid.omega_values[None, :]
    vals = np.broadcast_to(np.asarray(h(th, om), dtype=np.float64), grid.values.shape)
    return float(np.sum(vals * grid.values * grid.omega_probs[None, :]) * grid.width)


def expect_nu(grid: DensityGrid, f, n_x: int = 64) -> float:
    """<nu_t, f> = int_S <xi_t, f(., ., x)> dx with n_x uniform x-nodes.

    Exact for trigonometric x-dependence below order n_x/2.
    """
    if getattr(f, "x_free", False):
        return expect_xi(grid, lambda th, om: f(th, om, 0.0))
    x = (np.arange(n_x) - n_x // 2) / n_x
    th = grid.centers[:, None, None]
    om = grid.omega_values[None, :, None]
    vals = f(th, om, x[None, None, :])
    inner = np.sum(vals * (grid.values * grid.omega_probs[None, :])[:, :, None], axis=(0, 1))
    return float(inner.mean() * grid.width)


def gamma_moments(grid: DensityGrid, model: ModelSpec) -> np.ndarray | None:
    """<b_r, xi> for every rank of a separable Gamma."""
    if model.gamma_separable is None:
        return None
    th = grid.centers[:, None]
    om = grid.omega_values[None, :]
    weights = grid.values * grid.omega_probs[None, :] * grid.width
    return np.array([np.sum(np.broadcast_to(b(th, om), weights.shape) * weights)
                     for _, b in model.gamma_separable])


def coupling_field(grid: DensityGrid, model: ModelSpec, alpha: float):
    """(theta, omega) -> integral_psi(alpha) * int Gamma(theta, omega, .) dxi.

    This is the x-independent limit interaction felt by any particle.
    """
    scale = integral_psi(alpha)
    moments = gamma_moments(grid, model)
    if moments is not None:
        pairs = [(a, m) for (a, _), m in zip(model.gamma_separable, moments)]

        def field(th, om):
            out = 0.0
            for a, m in pairs:
                out = out + a(th, om) * m
            return scale * np.asarray(out, dtype=np.float64)

        return field
    th2 = grid.centers
    om2 = grid.omega_values
    weights = (grid.values * grid.omega_probs[None, :] * grid.width).ravel()
    th2g, om2g = np.meshgrid(th2, om2, indexing="ij")
    th2g, om2g = th2g.ravel(), om2g.ravel()

    def field(th, om):
        th = np.asarray(th, dtype=np.float64)
        om = np.broadcast_to(np.asarray(om, dtype=np.float64), th.shape)
        vals = model.gamma(th[..., None], om[..., None], th2g, om2g)
        return scale * (vals @ weights)

    return field


def admissible_dt(model: ModelSpec, alpha: float, n_cells: int,
                  omega_values=None) -> float:
    """Largest dt with dt <= min(dth^2/sigma^2, dth/max_drift)/2."""
    width = TWO_PI / n_cells
    faces = np.arange(n_cells) * width
    oms = np.asarray(omega_values if omega_values is not None else model.disorder_law.values, float)
    c_max = max(float(np.max(np.abs(model.drift_c(faces, w)))) for w in oms)
    v_max = c_max + integral_psi(alpha) * model.gamma_bound
    bounds = []
    if model.noise_sigma > 0:
        bounds.append(width**2 / model.noise_sigma**2)
    if v_max > 0:
        bounds.append(width / v_max)
    return 0.5 * min(bounds) if bounds else math.inf


def fv_step(grid: DensityGrid, model: ModelSpec, alpha: float, dt: float,
            field=None) -> DensityGrid:
    """One explicit upwind + central-diffusion finite-volume step."""
    if field is None:
        field = coupling_field(grid, model, alpha)
    p = grid.values
    width = grid.width
    faces = grid.faces[:, None]
    om = grid.omega_values[None, :]
    # face j sits between cell j-1 and cell j
    v = model.drift_c(faces, om) + field(faces, om)
    v = np.broadcast_to(v, p.shape)
    p_left = np.roll(p, 1, axis=0)
    flux = np.where(v > 0, v * p_left, v * p)
    flux = flux - 0.5 * model.noise_sigma**2 * (p - p_left) / width
    new = p - dt / width * (np.roll(flux, -1, axis=0) - flux)
    return DensityGrid(grid.n_cells, grid.omega_values, grid.omega_probs, new, grid.time + dt)


@dataclass
class DensityPath:
    """Time-indexed density snapshots with piecewise-constant lookup."""
    times: np.ndarray
    grids: list
    model: ModelSpec = field(repr=False)
    alpha: float = 0.0
    is_stationary: bool = False
    _fields: dict = field(default_factory=dict, repr=False)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def index(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t + 1e-12 * max(1.0, abs(t)), side="right")) - 1
        return min(max(i, 0), len(self.times) - 1)

    def grid_at(self, t: float) -> DensityGrid:
        if self.is_stationary:
            return self.grids[0].copy(t)
        return self.grids[self.index(t)]

    def coupling_at(self, t: float):
        i = self.index(t)
        if i not in self._fields:
            self._fields[i] = coupling_field(self.grids[i], self.model, self.alpha)
        return self._fields[i]

    def covers(self, t_end: float) -> bool:
        return self.t_end >= t_end - 1e-12

    @classmethod
    def stationary(cls, grid: DensityGrid, model: ModelSpec, alpha: float,
                   t_end: float = math.inf) -> "DensityPath":
        g0 = grid.copy(0.0)
        return cls(np.array([0.0, t_end]), [g0, g0], model, alpha, is_stationary=True)


def solve_density(model: ModelSpec, alpha: float, grid0: DensityGrid, dt: float,
                  t_end: float, record_every: int = 1) -> DensityPath:
    """Integrate the reduced McKean-Vlasov equation up to t_end."""
    if not model.is_circle:
        raise ValueError("solve_density needs a circle state space")
    limit = admissible_dt(model, alpha, grid0.n_cells, grid0.omega_values)
    if dt > limit * (1 + 1e-12):
        raise CFLError(dt, limit)
    steps = int(round(t_end / dt))
    if not math.isclose(steps * dt, t_end, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("t_end must be a multiple of dt")
    grid = grid0.copy(0.0)
    times, grids = [0.0], [grid]
    for n in range(1, steps + 1):
        grid = fv_step(grid, model, alpha, dt)
        grid.time = n * dt
        if n % record_every == 0 or n == steps:
            times.append(grid.time)
            grids.append(grid)
    return DensityPath(np.array(times), grids, model, alpha)


def density_rows(grid: DensityGrid):
    """CSV rows (theta_cell_center, omega_value, density)."""
    for j, th in enumerate(grid.centers):
        for a, om in enumerate(grid.omega_values):
            yield th, om, grid.values[j, a]


def fourier_amplitude(grid: DensityGrid, mode: int = 1) -> float:
    """|<xi, e^{i k theta}>| averaged over disorder."""
    re = expect_xi(grid, lambda th, om: np.cos(mode * th))
    im = expect_xi(grid, lambda th, om: np.sin(mode * th))
    return math.hypot(re, im)


def psi_average(f, grid: DensityGrid, x, alpha: float) -> np.ndarray:
    """int Psi(x, x~) f(theta~, omega~, x~) xi(dtheta~, domega~) dx~ at each x.

    Closed form for product test functions and x-free functions; otherwise
    Gauss-Jacobi quadrature in the offset z = x~ - x.
    """
    from .lattice import psi_fourier, singular_rule
    from .testfns import TestFn1

    x = np.asarray(x, dtype=np.float64)
    if isinstance(f, TestFn1):
        mean = expect_xi(grid, lambda th, om: f.scale * f.t(th) * f.w(om))
        return mean * f.psi_x(x, alpha)
    if getattr(f, "x_free", False):
        return expect_xi(grid, lambda th, om: f(th, om, 0.0)) * np.full(x.shape, psi_fourier(alpha, 0))
    z, w = singular_rule(alpha)
    xs = np.concatenate([x[..., None] + z, x[..., None] - z], axis=-1)
    th = grid.centers[:, None, None]
    om = grid.omega_values[None, :, None]
    weights = (grid.values * grid.omega_probs[None, :] * grid.width)[:, :, None]
    flat = xs.reshape(-1)
    inner = np.sum(f(th, om, flat[None, None, :]) * weights, axis=(0, 1)).reshape(xs.shape)
    return inner @ np.concatenate([w, w])
