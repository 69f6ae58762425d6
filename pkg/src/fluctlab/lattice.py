"""Periodic lattice geometry and the singular power-law weight.

Sites sit at x_i = i/(2N) for i in {-N, ..., N-1}; array index a = i + N.
The weight between two sites only depends on their offset, so the whole
interaction matrix is the circulant generated by ``Lattice.kernel``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

# below this length the O(L^2) sum beats the FFT round trip
FFT_THRESHOLD = 64
_CHUNK = 1 << 22


def circle_distance(x, y):
    """Distance on the unit circle R/Z; works elementwise on arrays."""
    diff = np.abs(np.mod(x, 1.0) - np.mod(y, 1.0))
    return np.minimum(diff, 1.0 - diff)


@dataclass(frozen=True)
class Lattice:
    n_half: int
    alpha: float
    positions: np.ndarray = field(repr=False)
    kernel: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return 2 * self.n_half

    @property
    def kernel_hat(self) -> np.ndarray:
        # real spectrum of the symmetric circulant, computed once
        cached = self.__dict__.get("_kernel_hat")
        if cached is None:
            cached = np.fft.rfft(self.kernel)
            object.__setattr__(self, "_kernel_hat", cached)
        return cached

    def weight_matrix(self) -> np.ndarray:
        """Dense Psi(x_a, x_b); only for small lattices and tests."""
        idx = np.arange(self.size)
        return self.kernel[(idx[:, None] - idx[None, :]) % self.size]


def build_lattice(n_half: int, alpha: float) -> Lattice:
    if int(n_half) != n_half or n_half < 1:
        raise ValueError(f"n_half must be a positive integer, got {n_half!r}")
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha!r}")
    n_half = int(n_half)
    size = 2 * n_half
    positions = (np.arange(size) - n_half) / size
    offsets = np.arange(size)
    if alpha == 0.0:
        kernel = np.ones(size)
    else:
        dist = np.minimum(offsets, size - offsets) / size
        kernel = np.empty(size)
        kernel[1:] = dist[1:] ** (-alpha)
    kernel[0] = 0.0
    positions.setflags(write=False)
    kernel.setflags(write=False)
    return Lattice(n_half, float(alpha), positions, kernel)


def _power_sum(n: int, alpha: float) -> float:
    """sum_{k=1}^n k^-alpha, chunked so huge n stays within memory."""
    if alpha == 0.0:
        return float(n)
    parts = []
    for start in range(1, n + 1, _CHUNK):
        k = np.arange(start, min(start + _CHUNK, n + 1), dtype=np.float64)
        parts.append(np.sum(k ** (-alpha)))
    return math.fsum(parts)


@lru_cache(maxsize=256)
def _power_sum_cached(n: int, alpha: float) -> float:
    return _power_sum(n, alpha)


def integral_psi(alpha: float) -> float:
    """Exact integral of Psi(x, .) over the circle."""
    return 2.0**alpha / (1.0 - alpha)


def mean_weight(lattice: Lattice) -> float:
    """Per-site average (1/|Lambda_N|) sum_j Psi(x_i, x_j), closed form."""
    n, a = lattice.n_half, lattice.alpha
    return 2.0**a / n ** (1.0 - a) * _power_sum_cached(n, a) - 2.0 ** (a - 1.0) / n


def _residual(n: int, alpha: float) -> float:
    # algebraically N^{1-a}(mean_weight - integral_psi), rearranged to
    # avoid subtracting two O(1) numbers and rescaling the difference
    s = _power_sum_cached(n, alpha)
    lead = n ** (1.0 - alpha) / (1.0 - alpha)
    return 2.0**alpha * (s - lead) - 2.0 ** (alpha - 1.0) * n ** (-alpha)


def riemann_residual(lattice: Lattice | None = None, *, n_half: int | None = None,
                     alpha: float | None = None) -> float:
    """N^{1-alpha} (mean_weight - integral_psi).

    Accepts either a built lattice or ``n_half``/``alpha`` directly; the
    latter never materialises the kernel, so N = 2**26 is cheap.
    """
    if lattice is not None:
        n_half, alpha = lattice.n_half, lattice.alpha
    if n_half is None or alpha is None:
        raise TypeError("need a lattice or both n_half and alpha")
    if n_half < 1 or not 0.0 <= alpha < 1.0:
        raise ValueError("n_half >= 1 and 0 <= alpha < 1 required")
    return _residual(int(n_half), float(alpha))


def richardson_chi(alpha: float, n_halves=(1 << 22, 1 << 24, 1 << 26)) -> float:
    """Extrapolate riemann_residual to N -> infinity.

    The residual error expands as c1 N^{-(1+alpha)} + c3 N^{-(3+alpha)} + ...
    (Euler-Maclaurin); two Richardson levels remove both terms given a
    geometric ladder with constant ratio.
    """
    n0, n1, n2 = n_halves
    ratio = n1 / n0
    if not math.isclose(n2 / n1, ratio):
        raise ValueError("ladder must be geometric")
    r = [riemann_residual(n_half=n, alpha=alpha) for n in n_halves]
    f1 = ratio ** (1.0 + alpha)
    level1 = [(f1 * r[i + 1] - r[i]) / (f1 - 1.0) for i in range(2)]
    f2 = ratio ** (3.0 + alpha)
    return (f2 * level1[1] - level1[0]) / (f2 - 1.0)


class ToleranceError(RuntimeError):
    pass


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_K_CAP = 10**7


def chi_truncation(alpha: float, tolerance: float) -> int:
    """Number of k-terms needed so the neglected tail is below tolerance.

    Each term of the series integrates to minus the trapezoid error of
    t^-alpha on [k, k+1], bounded by alpha(alpha+1) k^{-alpha-2}/12, so the
    tail past K is at most alpha (K-1)^{-alpha-1}/12 before the 2^alpha
    prefactor.
    """
    if alpha == 0.0:
        return 0
    bound = 2.0**alpha * alpha / (12.0 * tolerance)
    k = 1 + math.ceil(bound ** (1.0 / (alpha + 1.0)))
    return k


def chi_alpha(alpha: float, tolerance: float = 1e-8) -> float:
    """Limit constant of riemann_residual, 2^a C(a), by quadrature.

    C(a) = -1/(1-a) + 1/2 - int_0^1 (u - 1/2) sum_k a/(u+k)^{a+1} du, with
    the k-series truncated (see ``chi_truncation``) and the u-integral done
    by 64-point Gauss-Legendre, whose error is negligible because every
    summand is analytic on a neighbourhood of [0, 1].
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha!r}")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    k_max = chi_truncation(alpha, tolerance)
    if k_max > _K_CAP:
        raise ToleranceError(
            f"tolerance {tolerance:g} needs {k_max} series terms (cap {_K_CAP})")
    u = 0.5 * (_GL_NODES + 1.0)
    w = 0.5 * _GL_WEIGHTS
    series = np.zeros_like(u)
    for start in range(1, k_max + 1, 1 << 16):
        k = np.arange(start, min(start + (1 << 16), k_max + 1), dtype=np.float64)
        series += np.sum(alpha * (u[:, None] + k[None, :]) ** (-alpha - 1.0), axis=1)
    integral = np.dot(w, (u - 0.5) * series)
    c = -1.0 / (1.0 - alpha) + 0.5 - integral
    return 2.0**alpha * c


@lru_cache(maxsize=512)
def psi_fourier(alpha: float, ell: int) -> float:
    """int_S rho(z) cos(2 pi ell z) dz with rho(z) = d(0, z)^-alpha.

    ell = 0 gives integral_psi. Uses QUADPACK's algebraic-weight rule to
    absorb the z^-alpha endpoint singularity.
    """
    ell = abs(int(ell))
    if ell == 0:
        return integral_psi(alpha)
    if alpha == 0.0:
        return 0.0
    val, _ = integrate.quad(lambda z: np.cos(2.0 * np.pi * ell * z), 0.0, 0.5,
                            weight="alg", wvar=(-alpha, 0.0), limit=400,
                            epsabs=1e-14, epsrel=1e-13)
    return 2.0 * val


@lru_cache(maxsize=64)
def singular_rule(alpha: float, order: int = 48):
    """Nodes z in (0, 1/2) and weights so that sum w G(z) ~ int_0^{1/2} z^-a G(z) dz.

    Gauss-Jacobi, exact for polynomial G of degree < 2*order.
    """
    t, w = special.roots_jacobi(order, 0.0, -alpha)
    # t in (-1,1), weight (1+t)^-alpha; z = (1+t)/4
    z = 0.25 * (1.0 + t)
    return z, w * 0.25 ** (1.0 - alpha)


def circular_convolve(kernel, signal, method: str = "fast") -> np.ndarray:
    """out_i = sum_k kernel[(i-k) mod L] signal[k], along the last axis.

    ``signal`` may carry leading batch axes; ``kernel`` is one-dimensional.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    length = kernel.shape[-1]
    if kernel.ndim != 1 or signal.shape[-1] != length:
        raise ValueError(
            f"length mismatch: kernel {kernel.shape}, signal {signal.shape}")
    if length < 1:
        raise ValueError("empty input")
    if method == "fast" and length >= FFT_THRESHOLD:
        return np.fft.irfft(np.fft.rfft(kernel) * np.fft.rfft(signal, axis=-1),
                            n=length, axis=-1)
    if method not in ("fast", "direct"):
        raise ValueError(f"unknown method {method!r}")
    idx = np.arange(length)
    circ = kernel[(idx[:, None] - idx[None, :]) % length]
    return signal @ circ.T


def convolve_lattice(lattice: Lattice, signal, method: str = "fast") -> np.ndarray:
    """circular_convolve against the lattice kernel, reusing its spectrum."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[-1] != lattice.size:
        raise ValueError("signal length does not match lattice size")
    if method == "fast" and lattice.size >= FFT_THRESHOLD:
        return np.fft.irfft(lattice.kernel_hat * np.fft.rfft(signal, axis=-1),
                            n=lattice.size, axis=-1)
    if method == "direct":
        return _direct_rows(lattice, signal)
    return circular_convolve(lattice.kernel, signal, "direct")


def _direct_rows(lattice: Lattice, signal: np.ndarray) -> np.ndarray:
    # row blocks keep the dense circulant out of memory for big lattices
    size = lattice.size
    out = np.empty(signal.shape)
    idx = np.arange(size)
    block = max(1, (1 << 22) // size)
    for start in range(0, size, block):
        rows = idx[start:start + block]
        circ = lattice.kernel[(rows[:, None] - idx[None, :]) % size]
        out[..., start:start + block] = signal @ circ.T
    return out


def weight_sum_growth(n_half: int, beta: float) -> float:
    """sum_{j != i} d(x_j, x_i)^-beta, identical for every site i."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    size = 2 * n_half
    k = np.arange(1, size, dtype=np.float64)
    dist = np.minimum(k, size - k) / size
    return math.fsum(dist ** (-beta))


def a_n(n_half: int, alpha: float) -> float:
    """Fluctuation renormalisation: sqrt(N) for alpha <= 1/2, N^{1-alpha} above."""
    if alpha > 0.5:
        return n_half ** (1.0 - alpha)
    return math.sqrt(n_half)
