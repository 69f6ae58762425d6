"""Euler-Maruyama integration of the particle system on the lattice.

State arrays carry a leading replica axis, shape (R, size). Every replica
owns its generator, so a replica's path does not depend on which batch it
ran in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lattice import Lattice, a_n, circle_distance, convolve_lattice
from .model import TWO_PI, ModelSpec, sample_populations

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 output for state x (Steele, Lea & Flood)."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def replica_seed(seed: int, replica: int) -> int:
    """Seed of replica r: splitmix64(seed XOR r)."""
    return splitmix64((int(seed) & _MASK64) ^ int(replica))


def replica_rngs(seed: int, replicas: Sequence[int] | int) -> list[np.random.Generator]:
    if isinstance(replicas, int):
        replicas = range(replicas)
    return [np.random.default_rng(replica_seed(seed, r)) for r in replicas]


@dataclass
class SimConfig:
    dt: float = 1e-3
    t_end: float = 1.0
    seed: int = 0
    record_stride: int = 1
    method_interaction: str = "auto"

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.dt > self.t_end * (1 + 1e-12):
            raise ValueError("dt must not exceed t_end")
        if self.record_stride < 1 or self.record_stride * self.dt > self.t_end * (1 + 1e-12):
            raise ValueError("record_stride must be >= 1 and stride*dt <= t_end")
        if self.method_interaction not in ("direct", "fast", "auto"):
            raise ValueError(f"unknown interaction method {self.method_interaction!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class ParticleState:
    time: float
    lattice: Lattice
    theta: np.ndarray
    omega: np.ndarray
    theta_bar: np.ndarray | None = None
    mart_eta: dict = field(default_factory=dict)
    mart_h: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=np.float64))
        self.omega = np.broadcast_to(np.atleast_2d(np.asarray(self.omega, dtype=np.float64)),
                                     self.theta.shape).copy()
        if self.theta.shape[-1] != self.lattice.size:
            raise ValueError("state arrays must have lattice.size entries")
        if self.theta_bar is not None:
            self.theta_bar = np.atleast_2d(np.asarray(self.theta_bar, dtype=np.float64))

    @property
    def replicas(self) -> int:
        return self.theta.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.lattice.positions

    def copy(self) -> "ParticleState":
        return ParticleState(
            self.time, self.lattice, self.theta.copy(), self.omega.copy(),
            None if self.theta_bar is None else self.theta_bar.copy(),
            {k: v.copy() for k, v in self.mart_eta.items()},
            {k: v.copy() for k, v in self.mart_h.items()})


def initial_state(model: ModelSpec, lattice: Lattice, rngs, coupled: bool = False) -> ParticleState:
    """Draw theta_0 and omega for every replica from its own generator."""
    thetas, omegas = [], []
    for rng in rngs:
        th, om = sample_populations(model, lattice.size, rng)
        thetas.append(th)
        omegas.append(om)
    theta = np.array(thetas)
    return ParticleState(0.0, lattice, theta, np.array(omegas),
                         theta.copy() if coupled else None)


def interaction_field(state: ParticleState, model: ModelSpec, method: str = "auto",
                      theta: np.ndarray | None = None) -> np.ndarray:
    """(1/|Lambda_N|) sum_j Gamma(theta_i, omega_i, theta_j, omega_j) Psi(x_i, x_j)."""
    theta = state.theta if theta is None else theta
    lat = state.lattice
    if method == "auto":
        method = "fast" if model.gamma_separable is not None else "direct"
    if method == "fast":
        if model.gamma_separable is None:
            raise ValueError("fast interaction needs a separable Gamma")
        out = np.zeros(theta.shape)
        for a, b in model.gamma_separable:
            out += a(theta, state.omega) * convolve_lattice(lat, b(theta, state.omega))
        return out / lat.size
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    return _direct_field(theta, state.omega, lat, model)


def _direct_field(theta, omega, lat: Lattice, model: ModelSpec) -> np.ndarray:
    size = lat.size
    out = np.empty(theta.shape)
    idx = np.arange(size)
    block = max(1, (1 << 21) // size)
    for r in range(theta.shape[0]):
        th, om = theta[r], omega[r]
        for start in range(0, size, block):
            rows = idx[start:start + block]
            psi = lat.kernel[(rows[:, None] - idx[None, :]) % size]
            g = model.gamma(th[rows, None], om[rows, None], th[None, :], om[None, :])
            out[r, rows] = np.sum(g * psi, axis=1)
    return out / size


def _mart_eta_increment(state, fn, dB, an):
    grad = fn.grad(state.theta, state.omega, state.positions)
    return an / state.lattice.size * np.sum(grad * dB, axis=-1)


def _mart_h_increment(state, g, dB, an, alpha, grid):
    # separable g = f1 (x) f2 only; grid is xi at the left endpoint
    from .meanfield import psi_average

    lat, th, om, x = state.lattice, state.theta, state.omega, state.positions
    size = lat.size
    f1 = g.left(th, om, x)
    f2 = g.right(th, om, x)
    d1 = g.left.grad(th, om, x)
    d2 = g.right.grad(th, om, x)
    term_j = np.sum(d2 * dB * convolve_lattice(lat, f1), axis=-1) / size**2
    bracket = convolve_lattice(lat, f2) / size - psi_average(g.right, grid, x, alpha)
    term_i = np.sum(d1 * bracket * dB, axis=-1) / size
    return an * (term_j + term_i)


@dataclass
class StepContext:
    """Everything em_step needs beyond the state itself."""
    model: ModelSpec
    dt: float
    method: str = "auto"
    mart_fns: Sequence = ()
    mart_h_fns: Sequence = ()
    meanfield: object | None = None  # DensityPath-like
    an: float = 1.0


def em_step(state: ParticleState, model: ModelSpec, dt: float, rngs=None, *,
            noise: np.ndarray | None = None, ctx: StepContext | None = None) -> ParticleState:
    """Advance every replica by one Euler-Maruyama step (in place; returns state).

    ``noise`` overrides the generators with given standard normals.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ctx = ctx or StepContext(model, dt)
    if noise is None:
        noise = np.stack([rng.standard_normal(state.lattice.size) for rng in rngs])
    noise = np.broadcast_to(noise, state.theta.shape)
    sig = model.noise_sigma
    dB = sig * math.sqrt(dt) * noise

    field = interaction_field(state, model, ctx.method)
    drift = model.drift_c(state.theta, state.omega) + field

    for fn in ctx.mart_fns:
        state.mart_eta[fn.id] = state.mart_eta.get(fn.id, 0.0) + \
            _mart_eta_increment(state, fn, dB, ctx.an)
    if ctx.mart_h_fns:
        grid = ctx.meanfield.grid_at(state.time)
        for g in ctx.mart_h_fns:
            state.mart_h[g.id] = state.mart_h.get(g.id, 0.0) + \
                _mart_h_increment(state, g, dB, ctx.an, state.lattice.alpha, grid)

    if state.theta_bar is not None:
        if ctx.meanfield is None:
            raise ValueError("coupled state needs a mean-field solution")
        couple = ctx.meanfield.coupling_at(state.time)
        bar_drift = model.drift_c(state.theta_bar, state.omega) + couple(state.theta_bar, state.omega)
        state.theta_bar = model.wrap(state.theta_bar + bar_drift * dt + dB)
    state.theta = model.wrap(state.theta + drift * dt + dB)
    state.time = state.time + dt
    return state


def order_parameter(theta: np.ndarray) -> np.ndarray:
    return np.abs(np.mean(np.exp(1j * theta), axis=-1))


def coupling_error(state: ParticleState, model: ModelSpec) -> np.ndarray:
    """max_i |theta_i - theta_bar_i| per replica (circle distance on the circle)."""
    if state.theta_bar is None:
        raise ValueError("state carries no nonlinear copies")
    if model.is_circle:
        diff = TWO_PI * circle_distance(state.theta / TWO_PI, state.theta_bar / TWO_PI)
    else:
        diff = np.abs(state.theta - state.theta_bar)
    return np.max(diff, axis=-1)


@dataclass
class Trajectory:
    times: list
    series: dict  # observable id -> list of arrays shaped (R,)
    final: ParticleState
    config: SimConfig
    meta: dict = field(default_factory=dict)

    def values(self, obs_id: str) -> np.ndarray:
        """(n_records, R) array for one observable."""
        return np.array(self.series[obs_id])

    def rows(self, replica: int | None = None):
        """(time, observable_id, value) rows; all replicas get an index column."""
        for k, t in enumerate(self.times):
            for key, vals in self.series.items():
                v = np.asarray(vals[k])
                if replica is not None:
                    yield t, key, float(v[replica])
                else:
                    for r, val in enumerate(v):
                        yield r, t, key, float(val)


def simulate(model: ModelSpec, lattice: Lattice, config: SimConfig, observables=(), *,
             replicas: Sequence[int] | int = 1, integrands: dict | None = None,
             martingales=(), martingales_h=(), meanfield=None, coupled: bool = False,
             state: ParticleState | None = None, noise_fn: Callable | None = None,
             alpha_scaling: float | None = None) -> Trajectory:
    """Run replicas to t_end, recording every ``record_stride`` steps.

    observables: test functions f whose empirical average <nu_N, f> is
    recorded as "nu:<id>". martingales: test functions whose accumulator is
    recorded as "M:<id>". integrands: name -> callable(state, time) giving
    per-replica values, integrated with the left-endpoint rule and recorded
    as "int:<name>". The order parameter is always recorded as "R".
    """
    rngs = replica_rngs(config.seed, replicas)
    if state is None:
        state = initial_state(model, lattice, rngs, coupled=coupled)
    if coupled and (meanfield is None or not meanfield.covers(config.t_end)):
        raise ValueError("mean-field solution does not cover [0, t_end]")
    alpha = lattice.alpha if alpha_scaling is None else alpha_scaling
    ctx = StepContext(model, config.dt, config.method_interaction, tuple(martingales),
                      tuple(martingales_h), meanfield, a_n(lattice.n_half, alpha))
    integrands = integrands or {}
    acc = {name: np.zeros(state.replicas) for name in integrands}
    for fn in martingales:
        state.mart_eta.setdefault(fn.id, np.zeros(state.replicas))
    for g in martingales_h:
        state.mart_h.setdefault(g.id, np.zeros(state.replicas))
    times, series = [], {}
    running_sup = np.zeros(state.replicas)

    def record():
        times.append(state.time)
        series.setdefault("R", []).append(order_parameter(state.theta))
        for fn in observables:
            vals = fn(state.theta, state.omega, lattice.positions)
            series.setdefault(f"nu:{fn.id}", []).append(np.mean(vals, axis=-1))
        for fn in martingales:
            series.setdefault(f"M:{fn.id}", []).append(state.mart_eta[fn.id].copy())
        for g in martingales_h:
            series.setdefault(f"MH:{g.id}", []).append(state.mart_h[g.id].copy())
        for name in integrands:
            series.setdefault(f"int:{name}", []).append(acc[name].copy())
        if state.theta_bar is not None:
            err = coupling_error(state, model)
            np.maximum(running_sup, err, out=running_sup)
            series.setdefault("coupling_error", []).append(err)
            series.setdefault("coupling_sup", []).append(running_sup.copy())

    record()
    for n in range(1, config.n_steps + 1):
        for name, fn in integrands.items():
            acc[name] += np.asarray(fn(state, state.time)) * config.dt
        noise = noise_fn(state) if noise_fn is not None else None
        em_step(state, model, config.dt, rngs, noise=noise, ctx=ctx)
        state.time = n * config.dt
        if state.theta_bar is not None and n % config.record_stride != 0:
            np.maximum(running_sup, coupling_error(state, model), out=running_sup)
        if n % config.record_stride == 0 or n == config.n_steps:
            record()
    meta = {"seed": config.seed, "model": model.name, "params": model.params,
            "n_half": lattice.n_half, "alpha": lattice.alpha}
    return Trajectory(times, series, state, config, meta)


def simulate_coupled(model: ModelSpec, lattice: Lattice, config: SimConfig, meanfield_solution,
                     observables=(), replicas: Sequence[int] | int = 1) -> Trajectory:
    """Particles and their nonlinear copies under common noise.

    Records "coupling_error" (max_i distance) and its running supremum
    "coupling_sup" (supremum over every step, not only recorded ones).
    """
    if not meanfield_solution.covers(config.t_end):
        raise ValueError("mean-field solution ends before t_end")
    return simulate(model, lattice, config, observables, replicas=replicas,
                    meanfield=meanfield_solution, coupled=True)
