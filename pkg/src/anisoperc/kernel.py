"""Exact law of the uniform-step random walk and the Green kernel psi.

One step is uniform on ``{j : 1 <= |j| <= N}`` (unscaled); the scaled walk
divides by ``N^(1+a)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

MAX_SUPPORT = 1 << 24
FFT_THRESHOLD = 1 << 16


@dataclass(frozen=True)
class StepDistribution:
    N: int
    alpha: float = 0.2

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be positive")

    @property
    def c3(self) -> float:
        N = self.N
        return (N + 1) * (2 * N + 1) / (2.0 * N * N)

    @property
    def c4(self) -> float:
        N = self.N
        return (N + 1) * (2 * N + 1) * (3 * N * N + 3 * N - 1) / (6.0 * N**4)

    @property
    def scale(self) -> float:
        return float(self.N) ** (1.0 + self.alpha)

    def pmf(self) -> np.ndarray:
        """Step pmf on ``j = -N .. N``."""
        p = np.full(2 * self.N + 1, 1.0 / (2 * self.N))
        p[self.N] = 0.0
        return p

    @property
    def variance(self) -> float:
        """Scaled step variance ``c3 / (3 N^(2a))``."""
        return self.c3 / (3.0 * self.N ** (2 * self.alpha))

    @property
    def fourth_moment(self) -> float:
        return self.c4 / (5.0 * self.N ** (4 * self.alpha))


@dataclass
class WalkPmf:
    """``P(S_n = j)`` for ``j = -nN .. nN``."""

    n: int
    N: int
    probs: np.ndarray
    drift: float  # |sum - 1| before renormalization

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.n * self.N, self.n * self.N + 1)

    def at(self, j) -> np.ndarray:
        j = np.asarray(j, dtype=np.int64) + self.n * self.N
        ok = (j >= 0) & (j < self.probs.size)
        out = np.zeros(j.shape)
        out[ok] = self.probs[j[ok]]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "p"])
            for j, p in zip(self.sites.tolist(), self.probs.tolist()):
                w.writerow([j, repr(p)])


def exact_pmf(step: StepDistribution, n: int) -> WalkPmf:
    """n-fold convolution of the step law, renormalized to total mass 1."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    size = 2 * n * step.N + 1
    if size > MAX_SUPPORT:
        raise ValueError(f"support {size} exceeds cap {MAX_SUPPORT}")
    if n == 0:
        return WalkPmf(0, step.N, np.ones(1), 0.0)
    s = step.pmf()
    if size <= FFT_THRESHOLD:
        p = s
        for _ in range(n - 1):
            p = np.convolve(p, s)
    else:
        # binary powering keeps the FFT count logarithmic in n
        p, base, k = np.ones(1), s, n
        while k:
            if k & 1:
                p = fftconvolve(p, base)
            k >>= 1
            if k:
                base = fftconvolve(base, base)
        p = np.clip(p, 0.0, None)
    total = p.sum()
    drift = abs(total - 1.0)
    p = p / total
    p = 0.5 * (p + p[::-1])
    return WalkPmf(n, step.N, p, float(drift))


def psi(step: StepDistribution, n: int, z, x) -> np.ndarray:
    """``psi_n^z(x) = N^(1+a) P(S_{n+1} = x - z)`` at unscaled sites."""
    pm = exact_pmf(step, n + 1)
    return step.scale * pm.at(np.asarray(x, dtype=np.int64) - np.asarray(z, dtype=np.int64))


def psi_profile(step: StepDistribution, n: int) -> tuple:
    """``(sites, psi_n^0(sites))`` over the full support of ``S_{n+1}``."""
    pm = exact_pmf(step, n + 1)
    return pm.sites, step.scale * pm.probs


def pair(step: StepDistribution, values: np.ndarray) -> float:
    """``(f, 1) = N^-(1+a) sum_x f(x)``."""
    return float(np.sum(values) / step.scale)


def discrete_laplacian(values: np.ndarray, step: StepDistribution) -> np.ndarray:
    """``Delta_D f(x) = N^(2a)/(2N) sum_{y~x} (f(y) - f(x))`` on a zero-padded grid.

    The returned array is ``N`` cells longer at each end than ``values``.
    """
    N = step.N
    f = np.pad(np.asarray(values, dtype=float), N)
    neigh = np.convolve(f, step.pmf() * 2 * N, mode="same")
    return step.N ** (2 * step.alpha) / (2 * N) * (neigh - 2 * N * f)


def recursion_residual(step: StepDistribution, i: int) -> float:
    """``max |psi_i - psi_{i-1} - N^(-2a) Delta_D psi_{i-1}|``."""
    if i < 1:
        raise ValueError("i must be at least 1")
    _, prev = psi_profile(step, i - 1)
    _, cur = psi_profile(step, i)
    lap = discrete_laplacian(prev, step)
    prev_p = np.pad(prev, step.N)
    return float(np.max(np.abs(cur - prev_p - step.N ** (-2 * step.alpha) * lap)))


def walk_variance(step: StepDistribution, n: int) -> float:
    """Scaled variance of ``S_n`` summed directly from the exact pmf."""
    pm = exact_pmf(step, n)
    x = pm.sites / step.scale
    return float(np.sum(pm.probs * x * x))


@dataclass
class CltError:
    t: int
    sup_error: float
    bound_ratio: float


def clt_error(step: StepDistribution, t: int) -> CltError:
    """Sup distance between ``N^(1+a) P(S_t = y)`` and the matching Gaussian density."""
    if t < 1:
        raise ValueError("t must be at least 1")
    pm = exact_pmf(step, t)
    var = step.c3 * t / (3.0 * step.N ** (2 * step.alpha))
    x = pm.sites / step.scale
    gauss = np.exp(-x * x / (2 * var)) / math.sqrt(2 * math.pi * var)
    err = float(np.max(np.abs(step.scale * pm.probs - gauss)))
    return CltError(t, err, err / (step.N**step.alpha * t**-1.5))
