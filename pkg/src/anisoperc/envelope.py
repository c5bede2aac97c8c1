"""Critical branching random walk (the envelope) on unscaled integer sites.

Each particle at ``y`` has Binomial(2N, 1/(2N)) children placed on distinct
sites among ``y +- 1, ..., y +- N``.  The total mass is then a Galton-Watson
chain ``X' ~ Binomial(2N X, 1/(2N))``, which the mass-only helpers use
directly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import LatticeConfig
from .sampling import branch

_REP_SHIFT = 1 << 40
_HALF = 1 << 39

INFINITE = -1  # hitting-time sentinel


class TruncatedRun(RuntimeError):
    """Raised when the total mass exceeds the configured cap."""


@dataclass
class ParticleField:
    """Sparse particle counts; ``sites`` is sorted and ``counts >= 1``."""

    sites: np.ndarray
    counts: np.ndarray
    n: int = 0
    cum_mass: int = 0
    max_abs_site: int = 0

    @classmethod
    def from_sites(cls, sites, counts=None) -> "ParticleField":
        sites = np.asarray(sites, dtype=np.int64)
        counts = np.ones_like(sites) if counts is None else np.asarray(counts, dtype=np.int64)
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        keep = counts > 0
        u, inv = np.unique(sites[keep], return_inverse=True)
        c = np.bincount(inv, weights=counts[keep], minlength=u.size).astype(np.int64)
        mass = int(c.sum())
        reach = int(np.abs(u).max()) if u.size else 0
        return cls(sites=u, counts=c, n=0, cum_mass=mass, max_abs_site=reach)

    @classmethod
    def single(cls, site: int = 0) -> "ParticleField":
        return cls.from_sites([site])

    @property
    def total_mass(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict:
        return dict(zip(self.sites.tolist(), self.counts.tolist()))

    def count_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        i = np.clip(np.searchsorted(self.sites, x), 0, max(self.sites.size - 1, 0))
        if self.sites.size == 0:
            return np.zeros(x.shape, dtype=np.int64)
        return np.where(self.sites[i] == x, self.counts[i], 0)


def step_envelope(fld: ParticleField, cfg: LatticeConfig, rng: np.random.Generator,
                  max_mass: Optional[int] = None) -> ParticleField:
    """Advance the envelope by one generation."""
    parents = np.repeat(fld.sites, fld.counts)
    children, _ = branch(parents, cfg.N, cfg.p_h, rng)
    if max_mass is not None and children.size > max_mass:
        raise TruncatedRun(f"total mass {children.size} exceeds cap {max_mass} at step {fld.n + 1}")
    sites, counts = np.unique(children, return_counts=True)
    reach = fld.max_abs_site
    if sites.size:
        reach = max(reach, int(max(-sites[0], sites[-1])))
    return ParticleField(sites=sites, counts=counts.astype(np.int64), n=fld.n + 1,
                         cum_mass=fld.cum_mass + int(children.size), max_abs_site=reach)


@dataclass
class HittingRecord:
    """Outcome of a hitting-time run.

    ``T`` is the step at which a trigger fired, or :data:`INFINITE` when the
    process died first or the cap was reached (``capped`` tells which).
    """

    k: int
    T: int
    trigger: Optional[str]
    cap: int
    capped: bool = False

    @property
    def finite(self) -> bool:
        return self.T != INFINITE


def _trigger(mass: int, cum: int, k: int) -> Optional[str]:
    if mass >= 2**k:
        return "mass"
    if cum >= 4**k:
        return "cumulative"
    return None


def run_hitting_time(cfg: LatticeConfig, k: int, cap: int, rng: np.random.Generator,
                     max_mass: Optional[int] = None) -> HittingRecord:
    """First step with mass ``>= 2**k`` or cumulative mass ``>= 4**k``, from one particle at 0."""
    if k < 0 or cap < 1:
        raise ValueError("need k >= 0 and cap >= 1")
    fld = ParticleField.single(0)
    while True:
        trig = _trigger(fld.total_mass, fld.cum_mass, k)
        if trig is not None:
            return HittingRecord(k, fld.n, trig, cap)
        if fld.total_mass == 0:
            return HittingRecord(k, INFINITE, None, cap)
        if fld.n >= cap:
            return HittingRecord(k, INFINITE, None, cap, capped=True)
        fld = step_envelope(fld, cfg, rng, max_mass)


def mass_chain_step(mass: np.ndarray, N: int, rng: np.random.Generator, p: Optional[float] = None) -> np.ndarray:
    """One Galton-Watson step for a batch of total masses."""
    p = 1.0 / (2 * N) if p is None else p
    return rng.binomial(2 * N * mass, p)


@dataclass
class HittingTable:
    ks: np.ndarray
    prob: np.ndarray
    stderr: np.ndarray
    reps: int
    capped: int

    def slope(self) -> float:
        """Least-squares slope of ``log2 P`` against ``k``."""
        return float(np.polyfit(self.ks, np.log2(self.prob), 1)[0])


def hitting_probabilities(N: int, ks, reps: int, rng: np.random.Generator,
                          cap: int = 10**6) -> HittingTable:
    """``P(T_k < inf)`` for each ``k`` from one batch of mass chains started at 1.

    Both trigger quantities are monotone along a path (running max of the
    mass, cumulative mass), so one pass decides every ``k``.
    """
    ks = np.asarray(sorted(ks), dtype=np.int64)
    kmax = int(ks[-1])
    mass = np.ones(reps, dtype=np.int64)
    peak = mass.copy()
    cum = mass.copy()
    active = np.ones(reps, dtype=bool)
    steps = 0
    while active.any() and steps < cap:
        idx = np.nonzero(active)[0]
        m = mass_chain_step(mass[idx], N, rng)
        mass[idx] = m
        peak[idx] = np.maximum(peak[idx], m)
        cum[idx] += m
        active[idx] = (m > 0) & (peak[idx] < 2**kmax) & (cum[idx] < 4**kmax)
        steps += 1
    hit = (peak[:, None] >= 2**ks[None, :]) | (cum[:, None] >= 4**ks[None, :])
    prob = hit.mean(axis=0)
    return HittingTable(ks, prob, np.sqrt(prob * (1 - prob) / reps), reps, int(active.sum()))


def survival_probability(N: int, n: int, reps: int, rng: np.random.Generator, x0: int = 1):
    """Estimate ``P(X_n > 0)`` with its standard error."""
    mass = np.full(reps, x0, dtype=np.int64)
    for _ in range(n):
        alive = mass > 0
        if not alive.any():
            break
        mass[alive] = mass_chain_step(mass[alive], N, rng)
    p = float((mass > 0).mean())
    return p, math.sqrt(p * (1 - p) / reps)


def _batched_step(keys, counts, N, p, rng):
    parents = np.repeat(keys, counts)
    children, _ = branch(parents, N, p, rng)
    k, c = np.unique(children, return_counts=True)
    return k, c


@dataclass
class DisplacementTail:
    z: np.ndarray
    tail: np.ndarray
    stderr: np.ndarray
    conditioned: int
    reps: int

    @property
    def defined(self) -> bool:
        return self.conditioned > 0


def max_displacement_tail(cfg: LatticeConfig, n: int, z_grid, reps: int,
                          rng: np.random.Generator, max_mass: int = 10**7) -> DisplacementTail:
    """``P(R_n / N^(1+a) >= z | X_{floor(n/2)} > 0)`` for each ``z``.

    ``R_n`` is the largest ``|x|`` occupied at any step ``m <= n``.
    """
    if n < 1 or reps < 1:
        raise ValueError("need n >= 1 and reps >= 1")
    keys = np.arange(reps, dtype=np.int64) * _REP_SHIFT
    counts = np.ones(reps, dtype=np.int64)
    reach = np.zeros(reps, dtype=np.int64)
    alive_half = None
    for m in range(1, n + 1):
        keys, counts = _batched_step(keys, counts, cfg.N, cfg.p_h, rng)
        if counts.sum() > max_mass:
            raise TruncatedRun(f"batched mass exceeds {max_mass}")
        rep = (keys + _HALF) // _REP_SHIFT
        x = keys - rep * _REP_SHIFT
        np.maximum.at(reach, rep, np.abs(x))
        if m == n // 2:
            alive_half = np.zeros(reps, dtype=bool)
            alive_half[rep] = True
    if alive_half is None:  # n == 1: conditioning at step 0 is trivial
        alive_half = np.ones(reps, dtype=bool)
    z = np.asarray(z_grid, dtype=float)
    scaled = reach[alive_half] / cfg.space_scale
    c = int(alive_half.sum())
    if c == 0:
        nan = np.full(z.shape, np.nan)
        return DisplacementTail(z, nan, nan, 0, reps)
    tail = (scaled[:, None] >= z[None, :]).mean(axis=0)
    return DisplacementTail(z, tail, np.sqrt(tail * (1 - tail) / c), c, reps)


def one_step_masses(fld: ParticleField, cfg: LatticeConfig, reps: int, rng: np.random.Generator) -> np.ndarray:
    """Total mass after one spatial step, for ``reps`` independent replicas of ``fld``."""
    parents = np.repeat(fld.sites, fld.counts)
    out = np.empty(reps, dtype=np.int64)
    for r in range(reps):
        children, _ = branch(parents, cfg.N, cfg.p_h, rng)
        out[r] = children.size
    return out


def multiple_occupancy(fld: ParticleField, cfg: LatticeConfig, x) -> tuple:
    """Exact ``P(xi'(x) > 1 | fld)`` and the bound ``N^(2a-2) (A fld(x))^2``.

    ``xi'(x)`` is a sum of independent Bernoulli(1/(2N)) coins, one per
    particle within range of ``x``, so it is Binomial(m, 1/(2N)).
    """
    from .density import approximate_density

    x = np.asarray(x, dtype=np.int64)
    p = cfg.p_h
    prof = approximate_density(fld, (int(x.min()), int(x.max())), cfg)
    A = prof.at_sites(x)
    m = np.rint(A * 2 * cfg.N**cfg.alpha).astype(np.int64)
    exact = 1.0 - (1 - p) ** m - m * p * (1 - p) ** np.maximum(m - 1, 0)
    bound = cfg.N ** (2 * cfg.alpha - 2) * A**2
    return exact, bound


@dataclass
class Trajectory:
    rows: list = field(default_factory=list)

    def record(self, fld: ParticleField) -> None:
        self.rows.append((fld.n, fld.total_mass, fld.cum_mass, fld.max_abs_site))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "total_mass", "cum_mass", "max_abs_site"])
            w.writerows(self.rows)


def run_trajectory(cfg: LatticeConfig, steps: int, rng: np.random.Generator,
                   start: Optional[ParticleField] = None, max_mass: Optional[int] = None) -> Trajectory:
    fld = start or ParticleField.single(0)
    traj = Trajectory()
    traj.record(fld)
    for _ in range(steps):
        if fld.total_mass == 0:
            break
        fld = step_envelope(fld, cfg, rng, max_mass)
        traj.record(fld)
    return traj


def large_deviation_tail(N: int, n: int, a: float) -> float:
    """Exact ``P(sum_{i<=n} (Y_i - 1) >= n^a)`` for i.i.d. ``Y_i ~ Binomial(2N, 1/(2N))``.

    The sum of the ``Y_i`` is Binomial(2Nn, 1/(2N)).
    """
    from scipy.stats import binom

    return float(binom.sf(math.ceil(n + n**a) - 1, 2 * N * n, 1.0 / (2 * N)))
