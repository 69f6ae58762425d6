"""Test functions f(theta, omega, x) and g(tau, tau~) with closed-form theta-derivatives."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice import psi_fourier

TWO_PI = 2.0 * math.pi


def _poly(coeffs, w):
    # coeffs[p] multiplies w**p
    out = np.zeros(np.shape(w)) + coeffs[-1]
    for c in reversed(coeffs[:-1]):
        out = out * w + c
    return out


@dataclass(frozen=True)
class TestFn1:
    """Product f = T(theta) W(omega) X(x).

    theta_part: "one", "sin", "cos" (with frequency ``k``) or "poly" (with
    ``theta_coeffs``, line models only). omega_coeffs are polynomial
    coefficients in increasing degree. x_part: "one", "cos", "sin" with
    spatial frequency ``ell``.
    """
    __test__ = False

    theta_part: str = "one"
    k: int = 1
    omega_coeffs: tuple = (1.0,)
    x_part: str = "one"
    ell: int = 1
    theta_coeffs: tuple = (0.0,)
    scale: float = 1.0

    def __post_init__(self):
        if self.theta_part not in ("one", "sin", "cos", "poly"):
            raise ValueError(f"bad theta_part {self.theta_part!r}")
        if self.x_part not in ("one", "cos", "sin"):
            raise ValueError(f"bad x_part {self.x_part!r}")

    @property
    def id(self) -> str:
        parts = []
        if self.scale != 1.0:
            parts.append(f"{self.scale:g}")
        if self.theta_part in ("sin", "cos"):
            parts.append(f"{self.theta_part}{self.k}t")
        elif self.theta_part == "poly":
            parts.append("P(" + ",".join(f"{c:g}" for c in self.theta_coeffs) + ")t")
        if tuple(self.omega_coeffs) != (1.0,):
            parts.append("W(" + ",".join(f"{c:g}" for c in self.omega_coeffs) + ")")
        if self.x_part != "one":
            parts.append(f"{self.x_part}{self.ell}x")
        return "*".join(parts) or "one"

    @property
    def periodic(self) -> bool:
        return self.theta_part != "poly"

    @property
    def x_free(self) -> bool:
        return self.x_part == "one"

    @property
    def theta_free(self) -> bool:
        return self.theta_part == "one"

    # theta factor and derivatives
    def t(self, th, order: int = 0):
        th = np.asarray(th, dtype=np.float64)
        if self.theta_part == "one":
            return np.ones(th.shape) if order == 0 else np.zeros(th.shape)
        if self.theta_part == "poly":
            c = np.asarray(self.theta_coeffs, float)
            for _ in range(order):
                c = c[1:] * np.arange(1, len(c)) if len(c) > 1 else np.zeros(1)
            return _poly(tuple(c), th)
        k = self.k
        if self.theta_part == "sin":
            table = [(np.sin, 1.0), (np.cos, 1.0), (np.sin, -1.0), (np.cos, -1.0)]
        else:
            table = [(np.cos, 1.0), (np.sin, -1.0), (np.cos, -1.0), (np.sin, 1.0)]
        fn, sign = table[order % 4]
        return sign * k**order * fn(k * th)

    def w(self, om):
        return _poly(tuple(self.omega_coeffs), np.asarray(om, dtype=np.float64))

    def xfac(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.x_part == "one":
            return np.ones(x.shape)
        fn = np.cos if self.x_part == "cos" else np.sin
        return fn(TWO_PI * self.ell * x)

    def __call__(self, th, om, x):
        return self.scale * self.t(th) * self.w(om) * self.xfac(x)

    def grad(self, th, om, x):
        return self.scale * self.t(th, 1) * self.w(om) * self.xfac(x)

    def lap(self, th, om, x):
        return self.scale * self.t(th, 2) * self.w(om) * self.xfac(x)

    def psi_x(self, x, alpha):
        """int_S Psi(x, x~) X(x~) dx~ in closed form."""
        x = np.asarray(x, dtype=np.float64)
        if self.x_part == "one":
            return np.full(x.shape, psi_fourier(alpha, 0))
        return psi_fourier(alpha, self.ell) * self.xfac(x)

    def x_mean(self) -> float:
        return 1.0 if self.x_part == "one" else 0.0


def constant(value: float = 1.0) -> TestFn1:
    return TestFn1(scale=float(value))


def sin_theta(k: int = 1) -> TestFn1:
    return TestFn1("sin", k=k)


def cos_theta(k: int = 1) -> TestFn1:
    return TestFn1("cos", k=k)


@dataclass(frozen=True)
class CustomFn1:
    """Arbitrary vectorised f(theta, omega, x) with optional derivatives.

    ``x_free`` must be truthful: it lets integrals against Psi in x reduce
    to integral_psi.
    """
    __test__ = False

    fn: Callable = field(repr=False)
    grad_fn: Callable | None = field(default=None, repr=False)
    lap_fn: Callable | None = field(default=None, repr=False)
    x_free: bool = False
    name: str = "custom"
    periodic: bool = True
    theta_free: bool = False

    @property
    def id(self) -> str:
        return self.name

    def __call__(self, th, om, x):
        return np.asarray(self.fn(th, om, x), dtype=np.float64)

    def grad(self, th, om, x):
        if self.grad_fn is None:
            raise ValueError(f"{self.name}: no theta-gradient available")
        return np.asarray(self.grad_fn(th, om, x), dtype=np.float64)

    def lap(self, th, om, x):
        if self.lap_fn is None:
            raise ValueError(f"{self.name}: no theta-laplacian available")
        return np.asarray(self.lap_fn(th, om, x), dtype=np.float64)


@dataclass(frozen=True)
class TestFn2:
    """g(tau, tau~): either f1(tau) f2(tau~) or a general vectorised callable.

    A general callable takes (th, om, x, th2, om2, x2); its gradients in
    theta and theta~ are optional.
    """
    __test__ = False

    left: object | None = None
    right: object | None = None
    fn: Callable | None = field(default=None, repr=False)
    grad1_fn: Callable | None = field(default=None, repr=False)
    grad2_fn: Callable | None = field(default=None, repr=False)
    name: str | None = None

    def __post_init__(self):
        if (self.left is None) != (self.right is None):
            raise ValueError("separable form needs both factors")
        if self.left is None and self.fn is None:
            raise ValueError("need either factors or a callable")

    @property
    def separable(self) -> bool:
        return self.left is not None

    @property
    def id(self) -> str:
        if self.name:
            return self.name
        if self.separable:
            return f"[{self.left.id}]x[{self.right.id}]"
        return "g"

    def __call__(self, th, om, x, th2, om2, x2):
        if self.separable:
            return self.left(th, om, x) * self.right(th2, om2, x2)
        return np.asarray(self.fn(th, om, x, th2, om2, x2), dtype=np.float64)

    def grad1(self, th, om, x, th2, om2, x2):
        if self.separable:
            return self.left.grad(th, om, x) * self.right(th2, om2, x2)
        if self.grad1_fn is None:
            raise ValueError("no theta-gradient for g")
        return self.grad1_fn(th, om, x, th2, om2, x2)

    def grad2(self, th, om, x, th2, om2, x2):
        if self.separable:
            return self.left(th, om, x) * self.right.grad(th2, om2, x2)
        if self.grad2_fn is None:
            raise ValueError("no theta~-gradient for g")
        return self.grad2_fn(th, om, x, th2, om2, x2)


def separable(f1, f2, name: str | None = None) -> TestFn2:
    return TestFn2(left=f1, right=f2, name=name)


def one2() -> TestFn2:
    return TestFn2(left=constant(), right=constant(), name="one")


def as_general(g: TestFn2) -> TestFn2:
    """Forget the product structure of a separable g (for cross-checks)."""
    return TestFn2(fn=lambda *a: g(*a), grad1_fn=lambda *a: g.grad1(*a),
                   grad2_fn=lambda *a: g.grad2(*a), name=g.id + "#general")
