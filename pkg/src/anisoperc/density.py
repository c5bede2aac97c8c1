"""Approximate density, weighted sup-norms and the amplitude modulus.

Sites are unscaled integers ``j``; the scaled position is ``j / N^(1+a)``.
The approximate density at ``x`` averages the ``2N`` range-neighbours of
``x`` (``1 <= |y - x| <= N``, self excluded) with weight ``1 / (2 N^a)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .config import LatticeConfig


def _field_arrays(fld):
    """(sites, counts) for a ParticleField, OccupancyField or a pair of arrays."""
    if hasattr(fld, "counts") and hasattr(fld, "sites"):
        return np.asarray(fld.sites, dtype=np.int64), np.asarray(fld.counts, dtype=np.int64)
    if hasattr(fld, "occupied"):
        occ = np.asarray(fld.occupied, dtype=np.int64)
        return occ, np.ones_like(occ)
    sites, counts = fld
    return np.asarray(sites, dtype=np.int64), np.asarray(counts, dtype=np.int64)


@dataclass
class DensityProfile:
    """Values on consecutive unscaled sites ``start, start + 1, ...``."""

    start: int
    values: np.ndarray
    N: int
    alpha: float

    @property
    def scale(self) -> float:
        return float(self.N) ** (1.0 + self.alpha)

    @property
    def sites(self) -> np.ndarray:
        return self.start + np.arange(self.values.size, dtype=np.int64)

    @property
    def x(self) -> np.ndarray:
        """Scaled positions of the grid nodes."""
        return self.sites / self.scale

    def at_sites(self, j) -> np.ndarray:
        j = np.asarray(j, dtype=np.int64) - self.start
        inside = (j >= 0) & (j < self.values.size)
        out = np.zeros(j.shape, dtype=float)
        out[inside] = self.values[j[inside]]
        return out

    def __call__(self, x) -> np.ndarray:
        """Linear interpolation in scaled space, zero off the grid."""
        return np.interp(np.asarray(x, dtype=float), self.x, self.values, left=0.0, right=0.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "value"])
            for a, v in zip(self.x.tolist(), self.values.tolist()):
                w.writerow([repr(a), repr(v)])


def counts_on_window(fld, lo: int, hi: int) -> np.ndarray:
    """Dense counts on ``lo..hi`` inclusive."""
    sites, counts = _field_arrays(fld)
    keep = (sites >= lo) & (sites <= hi)
    dense = np.zeros(hi - lo + 1, dtype=np.int64)
    np.add.at(dense, sites[keep] - lo, counts[keep])
    return dense


def approximate_density(fld, window, cfg: LatticeConfig) -> DensityProfile:
    """``A(fld)`` on the inclusive site range ``window = (lo, hi)`` via prefix sums."""
    lo, hi = int(window[0]), int(window[1])
    if hi < lo:
        raise ValueError("empty window")
    N = cfg.N
    dense = counts_on_window(fld, lo - N, hi + N)
    pref = np.concatenate([[0], np.cumsum(dense)])
    i = np.arange(hi - lo + 1) + N  # index of x inside dense
    window_sum = pref[i + N + 1] - pref[i - N] - dense[i]
    return DensityProfile(lo, window_sum / (2.0 * N**cfg.alpha), N, cfg.alpha)


def _segments(x, f):
    return x[:-1], x[1:], f[:-1], f[1:]


def lambda_norm(obj, lam: float, values=None) -> float:
    """``sup_x |f(x)| e^(lam |x|)`` of a piecewise-linear, finitely supported ``f``.

    ``obj`` is a :class:`DensityProfile` or an array of scaled nodes (with
    ``values``).  Besides the nodes, the candidates are ``x = 0``, the zeros
    of ``f`` and the stationary points of ``f e_lam`` inside each segment.
    """
    if isinstance(obj, DensityProfile):
        x, f = obj.x, obj.values
    else:
        x, f = np.asarray(obj, dtype=float), np.asarray(values, dtype=float)
    if x.size == 0:
        return 0.0
    cand = [x]
    if x.size > 1:
        x0, x1, f0, f1 = _segments(x, f)
        b = (f1 - f0) / (x1 - x0)
        a = f0 - b * x0  # f = a + b x on the segment
        with np.errstate(divide="ignore", invalid="ignore"):
            zero = np.where(b != 0, -a / b, np.nan)
            if lam != 0:
                right = np.where(b != 0, -1.0 / lam - a / b, np.nan)
                left = np.where(b != 0, 1.0 / lam - a / b, np.nan)
            else:
                right = left = np.full_like(a, np.nan)
        for c in (zero, np.where(right > 0, right, np.nan), np.where(left < 0, left, np.nan)):
            ok = np.isfinite(c) & (c > x0) & (c < x1)
            cand.append(c[ok])
        if x[0] < 0 < x[-1]:
            cand.append(np.array([0.0]))
    pts = np.concatenate(cand)
    fv = np.interp(pts, x, f)
    return float(np.max(np.abs(fv) * np.exp(lam * np.abs(pts))))


def amplitude(profile: DensityProfile, delta: float, outside: str = "zero") -> DensityProfile:
    """``D(f, delta)(x) = sup{|f(y) - f(x)| : |y - x| <= delta}`` on the grid.

    ``delta`` is in scaled units.  ``outside="zero"`` treats ``f`` as zero off
    the grid (a finitely supported field); ``"exclude"`` only compares nodes
    on the grid.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    w = int(np.floor(delta * profile.scale + 1e-9))
    f = profile.values.astype(float)
    size = 2 * w + 1
    if outside == "zero":
        hi = maximum_filter1d(f, size, mode="constant", cval=0.0)
        lo = minimum_filter1d(f, size, mode="constant", cval=0.0)
    elif outside == "exclude":
        hi = maximum_filter1d(f, size, mode="nearest")
        lo = minimum_filter1d(f, size, mode="nearest")
        # nearest padding repeats the edge value, which is itself on the grid
    else:
        raise ValueError(f"unknown outside mode {outside!r}")
    return DensityProfile(profile.start, np.maximum(hi - f, f - lo), profile.N, profile.alpha)


def grid_function(fn, lo: int, hi: int, cfg: LatticeConfig) -> DensityProfile:
    """Sample a function of the scaled position on sites ``lo..hi``."""
    j = np.arange(lo, hi + 1, dtype=np.int64)
    return DensityProfile(lo, np.asarray(fn(j / cfg.space_scale), dtype=float), cfg.N, cfg.alpha)


def pair(f: DensityProfile, g: DensityProfile) -> float:
    """``(f, g) = N^-(1+a) sum_x f(x) g(x)`` over the common grid."""
    lo = max(f.start, g.start)
    hi = min(f.start + f.values.size, g.start + g.values.size)
    if hi <= lo:
        return 0.0
    return float(np.dot(f.values[lo - f.start:hi - f.start], g.values[lo - g.start:hi - g.start]) / f.scale)


def pair_measure(fld, phi: DensityProfile) -> float:
    """``(nu, phi) = N^-(2a) sum_x xi(x) phi(x)``."""
    sites, counts = _field_arrays(fld)
    return float(np.dot(counts, phi.at_sites(sites)) / float(phi.N) ** (2 * phi.alpha))


def measure_density_sides(fld, phi: DensityProfile, lam: float, cfg: LatticeConfig):
    """Both sides of ``|(nu, phi) - (A xi, phi)| <= ||D(phi, N^-a)||_lam (nu, e_-lam)``.

    ``phi`` must vanish within ``N`` sites of its grid ends so every window
    sum is seen.
    """
    A = approximate_density(fld, (phi.start, phi.start + phi.values.size - 1), cfg)
    lhs = abs(pair_measure(fld, phi) - pair(A, phi))
    D = amplitude(phi, float(cfg.N) ** (-cfg.alpha))
    sites, counts = _field_arrays(fld)
    weight = np.exp(-lam * np.abs(sites / cfg.space_scale))
    nu_e = float(np.dot(counts, weight) / float(cfg.N) ** (2 * cfg.alpha))
    return lhs, lambda_norm(D, lam) * nu_e
