"""Horizontal process with attrition, its coupling under the envelope, the
killed (subordinated) variant and good configurations.

A site becomes occupied at step ``n + 1`` when it was never occupied before
and at least one of the Bernoulli(1/(2N)) coins from currently occupied
range-neighbours succeeds.  Initial sites count as visited.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import LatticeConfig
from .envelope import INFINITE, HittingRecord, ParticleField
from .sampling import branch

_REP_SHIFT = 1 << 40
_HALF = 1 << 39

CLUSTER_EXPONENT = 0.4  # E|C| grows like N^(2/5)


def _in_sorted(sorted_arr: np.ndarray, x: np.ndarray) -> np.ndarray:
    if sorted_arr.size == 0:
        return np.zeros(x.shape, dtype=bool)
    i = np.searchsorted(sorted_arr, x)
    i = np.minimum(i, sorted_arr.size - 1)
    return sorted_arr[i] == x


@dataclass
class OccupancyField:
    """Occupied and visited sites (sorted int64 arrays) at step ``n``.

    ``kill_window`` is an inclusive unscaled ``(lo, hi)``; no site outside it
    is ever newly occupied.
    """

    occupied: np.ndarray
    visited: np.ndarray
    n: int = 0
    kill_window: Optional[tuple] = None

    @classmethod
    def from_sites(cls, sites, kill_window=None) -> "OccupancyField":
        s = np.unique(np.asarray(sites, dtype=np.int64))
        return cls(occupied=s, visited=s.copy(), n=0, kill_window=kill_window)

    @property
    def mass(self) -> int:
        return int(self.occupied.size)

    def copy(self) -> "OccupancyField":
        return OccupancyField(self.occupied.copy(), self.visited.copy(), self.n, self.kill_window)

    def to_csv(self, path) -> None:
        """Run-length encoded snapshot: one row per maximal run of consecutive sites."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["set", "start", "length"])
            for name, arr in (("occupied", self.occupied), ("visited", self.visited)):
                for s, ln in run_lengths(arr):
                    w.writerow([name, s, ln])


def run_lengths(sorted_sites: np.ndarray) -> list:
    if sorted_sites.size == 0:
        return []
    breaks = np.nonzero(np.diff(sorted_sites) != 1)[0] + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [sorted_sites.size]])
    return [(int(sorted_sites[a]), int(b - a)) for a, b in zip(starts, ends)]


def _admit(children: np.ndarray, visited: np.ndarray, kill_window) -> np.ndarray:
    cand = np.unique(children)
    if kill_window is not None:
        cand = cand[(cand >= kill_window[0]) & (cand <= kill_window[1])]
    return cand[~_in_sorted(visited, cand)]


def step_true(fld: OccupancyField, cfg: LatticeConfig, rng: np.random.Generator,
              coupled_envelope: Optional[ParticleField] = None):
    """One synchronous step.

    Returns the new :class:`OccupancyField`, or ``(field, envelope)`` when a
    coupled envelope is supplied.  In the coupled step each occupied site's
    first envelope particle reuses the true process's coins, taken before
    the attrition and killing filters, so the true field stays pointwise
    below the envelope.
    """
    children, _ = branch(fld.occupied, cfg.N, cfg.p_h, rng)
    new = _admit(children, fld.visited, fld.kill_window)
    out = OccupancyField(new, np.union1d(fld.visited, new), fld.n + 1, fld.kill_window)
    if coupled_envelope is None:
        return out
    env = coupled_envelope
    on_env = _in_sorted(env.sites, fld.occupied)
    if not on_env.all():
        raise ValueError("coupling requires the occupied set to lie inside the envelope support")
    shared = _in_sorted(fld.occupied, env.sites).astype(np.int64)
    extra_parents = np.repeat(env.sites, env.counts - shared)
    extra, _ = branch(extra_parents, cfg.N, cfg.p_h, rng)
    all_children = np.concatenate([children, extra])
    sites, counts = np.unique(all_children, return_counts=True)
    reach = env.max_abs_site
    if sites.size:
        reach = max(reach, int(max(-sites[0], sites[-1])))
    env2 = ParticleField(sites, counts.astype(np.int64), env.n + 1, env.cum_mass + int(all_children.size), reach)
    return out, env2


def coupled_violations(cfg: LatticeConfig, steps: int, rng: np.random.Generator, start=(0,)) -> int:
    """Run a coupled pair and count (step, site) pairs where true > envelope."""
    fld = OccupancyField.from_sites(start)
    env = ParticleField.from_sites(start)
    bad = 0
    for _ in range(steps):
        if fld.mass == 0:
            break
        fld, env = step_true(fld, cfg, rng, env)
        bad += int(np.sum(env.count_at(fld.occupied) < 1))
    return bad


# ---- batched replicas -------------------------------------------------------

def _rep_of(keys: np.ndarray) -> np.ndarray:
    return (keys + _HALF) // _REP_SHIFT


def _site_of(keys: np.ndarray) -> np.ndarray:
    return keys - _rep_of(keys) * _REP_SHIFT


@dataclass
class Batch:
    """Many independent replicas packed into one key space ``rep * 2**40 + site``."""

    occupied: np.ndarray
    visited: np.ndarray
    reps: int
    kill_window: Optional[tuple] = None
    n: int = 0

    @classmethod
    def start(cls, reps: int, sites=(0,), kill_window=None) -> "Batch":
        s = np.unique(np.asarray(sites, dtype=np.int64))
        keys = (np.arange(reps, dtype=np.int64)[:, None] * _REP_SHIFT + s[None, :]).ravel()
        return cls(keys, keys.copy(), reps, kill_window)

    def masses(self) -> np.ndarray:
        return np.bincount(_rep_of(self.occupied), minlength=self.reps)

    def visited_counts(self) -> np.ndarray:
        return np.bincount(_rep_of(self.visited), minlength=self.reps)

    def step(self, cfg: LatticeConfig, rng: np.random.Generator) -> None:
        children, _ = branch(self.occupied, cfg.N, cfg.p_h, rng)
        cand = np.unique(children)
        if self.kill_window is not None:
            x = _site_of(cand)
            cand = cand[(x >= self.kill_window[0]) & (x <= self.kill_window[1])]
        new = cand[~_in_sorted(self.visited, cand)]
        self.occupied = new
        self.visited = np.union1d(self.visited, new)
        self.n += 1

    def drop(self, reps_mask: np.ndarray) -> None:
        """Forget the visited sets of replicas flagged in ``reps_mask`` (to save memory)."""
        keep = ~reps_mask[_rep_of(self.visited)]
        self.visited = self.visited[keep]
        keep = ~reps_mask[_rep_of(self.occupied)]
        self.occupied = self.occupied[keep]


@dataclass
class ClusterSizeResult:
    N: int
    mean: float
    stderr: float
    normalized: float
    reps: int
    capped: int
    sizes: np.ndarray = field(repr=False)

    @property
    def unreliable(self) -> bool:
        return self.capped > 0.01 * self.reps


def cumulative_cluster_size(cfg: LatticeConfig, cap: int, reps: int, rng: np.random.Generator,
                            max_sites: int = 10**7) -> ClusterSizeResult:
    """``|C|`` = number of sites ever visited, from a single occupied site.

    ``cap`` bounds the number of steps; replicas still alive at the cap, or
    alive when the batch exceeds ``max_sites`` visited sites, are counted as
    capped with their size so far.
    """
    if reps < 1 or cap < 1:
        raise ValueError("need reps >= 1 and cap >= 1")
    b = Batch.start(reps)
    sizes = np.zeros(reps, dtype=np.int64)
    done = np.zeros(reps, dtype=bool)
    capped = np.zeros(reps, dtype=bool)
    while True:
        mass = b.masses()
        vis = b.visited_counts()
        died = (mass == 0) & ~done
        sizes[died] = vis[died]
        done |= died
        if done.all():
            break
        if b.n >= cap or b.visited.size > max_sites:
            live = ~done
            sizes[live] = vis[live]
            capped[live] = True
            break
        if died.any():
            b.drop(died)
        b.step(cfg, rng)
    mean = float(sizes.mean())
    se = float(sizes.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
    return ClusterSizeResult(cfg.N, mean, se, mean / cfg.N**CLUSTER_EXPONENT, reps, int(capped.sum()), sizes)


def mean_mass_at(cfg: LatticeConfig, multipliers, reps: int, rng: np.random.Generator):
    """Mean and standard error of the mass at step ``ceil(m N^(2/5))`` for each multiplier ``m``."""
    steps = [math.ceil(m * cfg.N**CLUSTER_EXPONENT) for m in multipliers]
    b = Batch.start(reps)
    out = {}
    for target in sorted(set(steps)):
        while b.n < target and b.occupied.size:
            b.step(cfg, rng)
        if b.n < target:
            b.n = target  # everything died
        m = b.masses().astype(float)
        out[target] = (float(m.mean()), float(m.std(ddof=1) / math.sqrt(reps)))
    return [out[s] for s in steps]


def run_hitting_time_hat(cfg: LatticeConfig, k: int, cap: int, rng: np.random.Generator) -> HittingRecord:
    """First step with mass ``>= 2**k`` or cumulative mass ``>= 4**k`` (initial step included)."""
    if k < 0 or cap < 1:
        raise ValueError("need k >= 0 and cap >= 1")
    fld = OccupancyField.from_sites([0])
    cum = fld.mass
    while True:
        if fld.mass >= 2**k:
            return HittingRecord(k, fld.n, "mass", cap)
        if cum >= 4**k:
            return HittingRecord(k, fld.n, "cumulative", cap)
        if fld.mass == 0:
            return HittingRecord(k, INFINITE, None, cap)
        if fld.n >= cap:
            return HittingRecord(k, INFINITE, None, cap, capped=True)
        fld = step_true(fld, cfg, rng)
        cum += fld.mass


@dataclass
class SplittingResult:
    ks: np.ndarray
    ratios: np.ndarray
    stderr: np.ndarray
    entered: np.ndarray
    capped: int


def conditional_hitting_ratios(cfg: LatticeConfig, ks, reps: int, rng: np.random.Generator,
                               cap: int = 10**5) -> SplittingResult:
    """Estimate ``P(T_{k+1} < inf | T_k < inf)`` by fixed-effort splitting.

    At each level, ``reps`` runs restart from states drawn uniformly from
    those that reached the level (their full visited sets and cumulative
    masses are carried along), so rare high levels are still sampled.
    """
    ks = sorted(int(k) for k in ks)
    states = [(OccupancyField.from_sites([0]), 1)]
    # advance from the start to level ks[0]
    states = _advance(states, ks[0], cfg, reps, rng, cap)[0]
    ratios, ses, entered = [], [], []
    capped_total = 0
    for k in ks:
        if not states:
            ratios.append(0.0)
            ses.append(0.0)
            entered.append(0)
            continue
        nxt, hits, capped = _advance(states, k + 1, cfg, reps, rng, cap)
        capped_total += capped
        p = hits / reps
        ratios.append(p)
        ses.append(math.sqrt(p * (1 - p) / reps))
        entered.append(len(states))
        states = nxt
    return SplittingResult(np.array(ks), np.array(ratios), np.array(ses), np.array(entered), capped_total)


def _advance(states, level, cfg, reps, rng, cap):
    """Run ``reps`` restarts from ``states`` until level ``level`` is hit or the run dies."""
    reached = []
    capped = 0
    for r in range(reps):
        fld0, cum0 = states[int(rng.integers(len(states)))] if len(states) > 1 else states[0]
        fld, cum = fld0.copy(), cum0
        while True:
            if fld.mass >= 2**level or cum >= 4**level:
                reached.append((fld, cum))
                break
            if fld.mass == 0:
                break
            if fld.n - fld0.n >= cap:
                capped += 1
                break
            fld = step_true(fld, cfg, rng)
            cum += fld.mass
    return reached, len(reached), capped


# ---- good configurations -----------------------------------------------------

SUB_EXPONENT = 0.3    # sub-interval width N^(-3/10) in scaled units
COUNT_EXPONENT = 0.1  # target counts scale with N^(1/10)
_EPS = 1e-9


@dataclass(frozen=True)
class GoodSpec:
    """Goodness target for interval ``[a, b]`` (scaled) with ramp width ``delta``.

    The exponents of the bookkeeping grid belong to the ``alpha = 1/5``
    scaling, so ``N`` is the only scale parameter.  ``coarsen > 1`` merges
    that many sub-intervals into one (width and target both scale up); it
    is a desk-scale relaxation, ``coarsen = 1`` is the exact definition.
    """

    a: float
    b: float
    delta: float
    N: int
    coarsen: int = 1

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("need a < b")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.N ** COUNT_EXPONENT < 1:
            raise ValueError("N too small")
        if int(self.coarsen) != self.coarsen or self.coarsen < 1:
            raise ValueError("coarsen must be a positive integer")

    @property
    def space_scale(self) -> float:
        return float(self.N) ** 1.2

    @property
    def width(self) -> float:
        """Sub-interval width in unscaled sites."""
        return self.coarsen * float(self.N) ** (1.2 - SUB_EXPONENT)

    def profile(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        up = (x - (self.a - self.delta)) / self.delta
        down = ((self.b + self.delta) - x) / self.delta
        return np.clip(np.minimum(up, down), 0.0, 1.0)

    def sub_index(self, sites) -> np.ndarray:
        """Sub-interval index of unscaled sites (half-open ``[i W, (i+1) W)``)."""
        return np.floor(np.asarray(sites, dtype=float) / self.width + _EPS).astype(np.int64)

    def index_range(self) -> tuple:
        """Indices ``i`` of sub-intervals contained in ``I``."""
        s = self.N ** SUB_EXPONENT / self.coarsen
        lo = math.ceil(self.a * s - _EPS)
        hi = math.floor(self.b * s + _EPS) - 1
        return lo, hi

    def targets(self) -> dict:
        """``{i: target count}`` for sub-intervals inside ``I``; all others must be empty."""
        lo, hi = self.index_range()
        w = self.coarsen * float(self.N) ** (-SUB_EXPONENT)
        c = self.coarsen * float(self.N) ** COUNT_EXPONENT
        return {i: int(math.floor(float(self.profile(i * w)) * c + _EPS)) for i in range(lo, hi + 1)}

    def bounds(self, i: int) -> tuple:
        """Inclusive unscaled site range of sub-interval ``i``."""
        lo = math.ceil(i * self.width - _EPS)
        hi = math.ceil((i + 1) * self.width - _EPS) - 1
        return lo, hi

    def window(self, margin: float = 0.5) -> tuple:
        """Unscaled kill window ``[a - margin, b + margin]``."""
        s = self.space_scale
        return math.ceil((self.a - margin) * s - _EPS), math.floor((self.b + margin) * s + _EPS)


def make_good(spec: GoodSpec, kill_window=None) -> OccupancyField:
    """Equally spaced, leftmost-anchored sites with exactly the target count per sub-interval."""
    sites = []
    for i, c in spec.targets().items():
        if c == 0:
            continue
        lo, hi = spec.bounds(i)
        L = hi - lo + 1
        if c > L:
            raise ValueError("sub-interval too short for its target count")
        sites.append(lo + (np.arange(c) * L) // c)
    s = np.concatenate(sites) if sites else np.empty(0, dtype=np.int64)
    return OccupancyField.from_sites(s, kill_window=kill_window)


def good_counts(sites, spec: GoodSpec) -> tuple:
    """Per-sub-interval counts and targets, as aligned dicts over every touched index."""
    idx = spec.sub_index(np.asarray(sites, dtype=np.int64))
    u, c = np.unique(idx, return_counts=True)
    counts = dict(zip(u.tolist(), c.tolist()))
    targets = spec.targets()
    keys = set(counts) | set(targets)
    return {i: counts.get(i, 0) for i in keys}, {i: targets.get(i, 0) for i in keys}


def is_good(fld, spec: GoodSpec, tau: float = 0) -> bool:
    """Exact goodness for ``tau = 0``; otherwise every count within ``tau`` of its target.

    The relaxed form (``tau > 0``) is a simulation convenience, not the
    exact-count definition.
    """
    sites = fld.occupied if hasattr(fld, "occupied") else np.asarray(fld, dtype=np.int64)
    if tau == math.inf:
        return True
    counts, targets = good_counts(sites, spec)
    return all(abs(counts[i] - targets[i]) <= tau for i in counts)


def thin_to_good(sites, spec: GoodSpec):
    """Keep the leftmost ``target`` sites per sub-interval.

    Returns ``(kept_sites, deficits)`` where ``deficits`` maps sub-interval
    index to the shortfall (empty when the result is exactly good).
    """
    sites = np.unique(np.asarray(sites, dtype=np.int64))
    idx = spec.sub_index(sites)
    kept, deficits = [], {}
    for i, t in spec.targets().items():
        s = sites[idx == i]
        if s.size < t:
            deficits[i] = t - int(s.size)
        kept.append(s[:t])
    out = np.concatenate(kept) if kept else np.empty(0, dtype=np.int64)
    return out, deficits


def error_term_check(fld: OccupancyField, cfg: LatticeConfig, x) -> tuple:
    """Exact ``E|1{S >= 1} - S|`` with ``S ~ Binomial(m, 1/(2N))`` next to ``m^2 / (4 N^2)``.

    ``m`` is the number of occupied range-neighbours of each site in ``x``.
    """
    x = np.asarray(x, dtype=np.int64)
    occ = fld.occupied
    m = (np.searchsorted(occ, x + cfg.N, side="right") - np.searchsorted(occ, x - cfg.N, side="left")
         - _in_sorted(occ, x).astype(np.int64))
    p = cfg.p_h
    # E|1{S>=1} - S| = E[S] - P(S >= 1)
    exact = m * p - (1.0 - (1.0 - p) ** m)
    return exact, m.astype(float) ** 2 / (4.0 * cfg.N**2)
