"""Dynamics ingredients: local drift c, interaction Gamma, disorder and initial laws.

Everything is scalar (one angle / one disorder value per particle) and
vectorised: callables receive numpy arrays and broadcast.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

Drift = Callable[[np.ndarray, np.ndarray], np.ndarray]
Interaction = Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
SidePart = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DisorderLaw:
    """Finite-support law for omega; the mean-field solver needs the atoms."""
    values: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("values and probs must be non-empty and equal length")
        if any(p < 0 for p in self.probs) or not math.isclose(sum(self.probs), 1.0, abs_tol=1e-12):
            raise ValueError("disorder probabilities must be >= 0 and sum to 1")

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if len(self.values) == 1:
            return np.full(count, float(self.values[0]))
        return rng.choice(np.asarray(self.values, float), size=count, p=np.asarray(self.probs))

    @classmethod
    def dirac(cls, value: float = 0.0) -> "DisorderLaw":
        return cls((float(value),), (1.0,))

    @classmethod
    def symmetric_pair(cls, spread: float) -> "DisorderLaw":
        return cls((-float(spread), float(spread)), (0.5, 0.5))


@dataclass(frozen=True)
class InitialLaw:
    """Law of theta_0: a sampler plus its density on the state space."""
    name: str
    sampler: Callable[[int, np.random.Generator], np.ndarray] = field(repr=False)
    density: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(self.sampler(count, rng), dtype=np.float64)


def uniform_circle() -> InitialLaw:
    return InitialLaw(
        "uniform",
        lambda n, rng: rng.uniform(0.0, TWO_PI, size=n),
        lambda th: np.full(np.shape(th), 1.0 / TWO_PI),
    )


def von_mises(kappa: float, loc: float = 0.0) -> InitialLaw:
    from scipy.special import i0

    norm = TWO_PI * i0(kappa)
    return InitialLaw(
        f"vonmises({kappa:g})",
        lambda n, rng: np.mod(rng.vonmises(loc, kappa, size=n), TWO_PI),
        lambda th: np.exp(kappa * np.cos(np.asarray(th) - loc)) / norm,
    )


def cosine_bump(amplitude: float = 1.0) -> InitialLaw:
    """Density (1 + a cos theta)/(2 pi), |a| <= 1; sampled by rejection."""
    if abs(amplitude) > 1.0:
        raise ValueError("|amplitude| must be <= 1")

    def sampler(n, rng):
        out = np.empty(0)
        while out.size < n:
            th = rng.uniform(0.0, TWO_PI, size=2 * (n - out.size) + 16)
            keep = rng.uniform(0.0, 1.0 + abs(amplitude), size=th.size) < 1.0 + amplitude * np.cos(th)
            out = np.concatenate([out, th[keep]])
        return out[:n]

    return InitialLaw(f"cosine({amplitude:g})", sampler,
                      lambda th: (1.0 + amplitude * np.cos(th)) / TWO_PI)


def gaussian_line(scale: float = 1.0) -> InitialLaw:
    return InitialLaw(
        f"normal({scale:g})",
        lambda n, rng: rng.normal(0.0, scale, size=n),
        lambda th: np.exp(-0.5 * (np.asarray(th) / scale) ** 2) / (scale * math.sqrt(TWO_PI)),
    )


def dirac_initial(value: float = 0.0) -> InitialLaw:
    """Deterministic start; no density (not usable by the density solver)."""
    def density(th):
        raise NotImplementedError("Dirac initial law has no density")
    return InitialLaw(f"dirac({value:g})", lambda n, rng: np.full(n, float(value)), density)


@dataclass(frozen=True)
class ModelSpec:
    state_space: str  # "circle" (period 2 pi) or "line"
    drift_c: Drift = field(repr=False)
    gamma: Interaction = field(repr=False)
    noise_sigma: float
    disorder_law: DisorderLaw
    initial_law: InitialLaw
    gamma_bound: float
    gamma_separable: tuple[tuple[SidePart, SidePart], ...] | None = field(default=None, repr=False)
    # closed-form derivatives, used by the semimartingale bookkeeping
    drift_c_dtheta: Drift | None = field(default=None, repr=False)
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.state_space not in ("circle", "line"):
            raise ValueError(f"unknown state space {self.state_space!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def is_circle(self) -> bool:
        return self.state_space == "circle"

    def wrap(self, theta: np.ndarray) -> np.ndarray:
        if self.is_circle:
            return np.mod(theta, TWO_PI)
        return theta

    def scaled(self, factor: float) -> "ModelSpec":
        """Same model with Gamma multiplied by ``factor``."""
        g = self.gamma
        sep = None
        if self.gamma_separable is not None:
            sep = tuple((_scale(a, factor), b) for a, b in self.gamma_separable)
        return ModelSpec(
            self.state_space, self.drift_c,
            lambda th, om, th2, om2: factor * g(th, om, th2, om2),
            self.noise_sigma, self.disorder_law, self.initial_law,
            abs(factor) * self.gamma_bound, sep, self.drift_c_dtheta,
            self.name, {**self.params, "gamma_scale": factor})


def _scale(fn, factor):
    return lambda th, om: factor * fn(th, om)


def _zero(th, om):
    return np.zeros(np.broadcast(th, om).shape)


def build_kuramoto(K: float = 1.0, sigma: float = 1.0,
                   disorder_law: DisorderLaw | None = None,
                   initial_law: InitialLaw | None = None) -> ModelSpec:
    """Spatial Kuramoto: c = omega, Gamma = K sin(theta~ - theta)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    K = float(K)
    disorder_law = disorder_law or DisorderLaw.dirac(0.0)
    initial_law = initial_law or uniform_circle()
    sep = (
        (lambda th, om: K * np.cos(th), lambda th, om: np.sin(th)),
        (lambda th, om: -K * np.sin(th), lambda th, om: np.cos(th)),
    )
    return ModelSpec(
        "circle",
        lambda th, om: np.broadcast_to(np.asarray(om, float), np.broadcast(th, om).shape).copy(),
        lambda th, om, th2, om2: K * np.sin(th2 - th),
        float(sigma), disorder_law, initial_law, abs(K), sep,
        drift_c_dtheta=_zero, name="kuramoto", params={"K": K, "sigma": float(sigma)},
    )


def build_probe(gamma_const: float = 1.0, sigma: float = 1.0, state_space: str = "circle",
                initial_law: InitialLaw | None = None,
                disorder_law: DisorderLaw | None = None) -> ModelSpec:
    """c = 0 and constant Gamma: the interaction reduces to a weighted count."""
    g = float(gamma_const)
    if initial_law is None:
        initial_law = uniform_circle() if state_space == "circle" else gaussian_line()
    return ModelSpec(
        state_space, _zero,
        lambda th, om, th2, om2: np.full(np.broadcast(th, om, th2, om2).shape, g),
        float(sigma), disorder_law or DisorderLaw.dirac(0.0), initial_law, abs(g),
        ((lambda th, om: np.full(np.broadcast(th, om).shape, g),
          lambda th, om: np.ones(np.broadcast(th, om).shape)),),
        drift_c_dtheta=_zero, name="probe", params={"gamma_const": g, "sigma": float(sigma)},
    )


def build_free(sigma: float = 1.0, state_space: str = "line", drift: float = 0.0,
               initial_law: InitialLaw | None = None) -> ModelSpec:
    """No interaction; constant drift. Brownian motion when drift = 0."""
    if initial_law is None:
        initial_law = uniform_circle() if state_space == "circle" else dirac_initial(0.0)
    d = float(drift)
    return ModelSpec(
        state_space,
        lambda th, om: np.full(np.broadcast(th, om).shape, d),
        lambda th, om, th2, om2: np.zeros(np.broadcast(th, om, th2, om2).shape),
        float(sigma), DisorderLaw.dirac(0.0), initial_law, 0.0,
        ((_zero, lambda th, om: np.ones(np.broadcast(th, om).shape)),),
        drift_c_dtheta=_zero, name="free", params={"sigma": float(sigma), "drift": d},
    )


def sample_populations(model: ModelSpec, count: int, rng: np.random.Generator):
    """i.i.d. initial angles and disorder, in that order from ``rng``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    thetas = model.wrap(model.initial_law.sample(count, rng))
    omegas = model.disorder_law.sample(count, rng)
    return thetas, omegas


def separable_error(model: ModelSpec, samples: int, rng: np.random.Generator) -> float:
    """Max |Gamma - sum_r a_r b_r| over random tuples."""
    if model.gamma_separable is None:
        raise ValueError("model has no separable form")
    th, th2 = rng.uniform(-10, 10, size=(2, samples))
    om, om2 = rng.normal(size=(2, samples))
    full = model.gamma(th, om, th2, om2)
    recon = sum(a(th, om) * b(th2, om2) for a, b in model.gamma_separable)
    return float(np.max(np.abs(full - recon)))


MODELS: dict[str, Callable[..., ModelSpec]] = {
    "kuramoto": build_kuramoto,
    "probe": build_probe,
    "free": build_free,
}


def model_from_config(name: str, **params) -> ModelSpec:
    """Build a named model from flat parameters (as they appear in run configs)."""
    if name not in MODELS:
        raise KeyError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
    params = dict(params)
    disorder = params.pop("disorder", None)
    initial = params.pop("initial", None)
    kw = {}
    if disorder is not None and name != "free":
        kw["disorder_law"] = _disorder_from_spec(disorder)
    if initial is not None:
        kw["initial_law"] = _initial_from_spec(initial)
    return MODELS[name](**params, **kw)


def _disorder_from_spec(spec) -> DisorderLaw:
    if isinstance(spec, (int, float)):
        return DisorderLaw.dirac(float(spec))
    if isinstance(spec, dict):
        return DisorderLaw(tuple(spec["values"]), tuple(spec["probs"]))
    if isinstance(spec, str) and spec.startswith("pair:"):
        return DisorderLaw.symmetric_pair(float(spec.split(":", 1)[1]))
    if spec in ("dirac", "delta0"):
        return DisorderLaw.dirac(0.0)
    raise ValueError(f"cannot parse disorder law {spec!r}")


def _initial_from_spec(spec) -> InitialLaw:
    if spec == "uniform":
        return uniform_circle()
    if isinstance(spec, str) and ":" in spec:
        kind, arg = spec.split(":", 1)
        if kind == "vonmises":
            return von_mises(float(arg))
        if kind == "cosine":
            return cosine_bump(float(arg))
        if kind == "normal":
            return gaussian_line(float(arg))
        if kind == "dirac":
            return dirac_initial(float(arg))
    raise ValueError(f"cannot parse initial law {spec!r}")


def sup_gamma_sample(model: ModelSpec, samples: int, rng: np.random.Generator,
                     omega_values: Sequence[float] | None = None) -> float:
    th, th2 = rng.uniform(0, TWO_PI, size=(2, samples))
    vals = np.asarray(omega_values if omega_values is not None else model.disorder_law.values)
    om, om2 = rng.choice(vals, size=(2, samples))
    return float(np.max(np.abs(model.gamma(th, om, th2, om2))))
