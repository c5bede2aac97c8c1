"""The anisotropic lattice: quenched edge states, cluster exploration with
generation tracking, and the finite-box crossing proxy for percolation.

Sites are ``(x, layer)`` integer pairs.  Horizontal edges join ``(x, i)`` and
``(y, i)`` for ``1 <= |x - y| <= N``; vertical edges join ``(x, i)`` and
``(x, i + 1)``.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import coins
from .config import Caps, LatticeConfig

_LAYER_SHIFT = 1 << 40
_HALF = 1 << 39


def site_key(x, layer):
    """Pack ``(x, layer)`` into one int64 (needs ``|x| < 2**39``)."""
    return np.asarray(layer, dtype=np.int64) * _LAYER_SHIFT + np.asarray(x, dtype=np.int64)


def split_key(key):
    key = np.asarray(key, dtype=np.int64)
    layer = (key + _HALF) // _LAYER_SHIFT
    return key - layer * _LAYER_SHIFT, layer


@dataclass(frozen=True)
class EdgeId:
    """An edge with endpoints stored in lexicographic ``(x, layer)`` order."""

    kind: str
    a: tuple
    b: tuple

    @classmethod
    def between(cls, u, v, N: int) -> "EdgeId":
        (x1, i1), (x2, i2) = (int(u[0]), int(u[1])), (int(v[0]), int(v[1]))
        if i1 == i2 and 1 <= abs(x1 - x2) <= N:
            kind = "horizontal"
        elif x1 == x2 and abs(i1 - i2) == 1:
            kind = "vertical"
        else:
            raise ValueError(f"({x1}, {i1}) and ({x2}, {i2}) are not joined by an edge at N={N}")
        a, b = sorted([(x1, i1), (x2, i2)])
        return cls(kind, a, b)


def horizontal_uniform(seed: int, layer, x_lo, x_hi) -> np.ndarray:
    """Coin uniforms of horizontal edges ``{(x_lo, layer), (x_hi, layer)}``, ``x_lo < x_hi``."""
    return coins.uniform(seed, coins.HORIZONTAL, layer, x_lo, x_hi)


def vertical_uniform(seed: int, x, layer_lo) -> np.ndarray:
    """Coin uniforms of vertical edges ``{(x, layer_lo), (x, layer_lo + 1)}``."""
    return coins.uniform(seed, coins.VERTICAL, x, layer_lo)


def edge_is_open(cfg: LatticeConfig, e: EdgeId) -> bool:
    """Quenched state of one edge: its keyed uniform falls below the edge probability."""
    if e.kind == "horizontal":
        if not (e.a[1] == e.b[1] and 1 <= e.b[0] - e.a[0] <= cfg.N):
            raise ValueError(f"invalid horizontal edge {e} at N={cfg.N}")
        return bool(horizontal_uniform(cfg.seed, e.a[1], e.a[0], e.b[0]) < cfg.p_h)
    if e.kind == "vertical":
        if not (e.a[0] == e.b[0] and e.b[1] - e.a[1] == 1):
            raise ValueError(f"invalid vertical edge {e}")
        return bool(vertical_uniform(cfg.seed, e.a[0], e.a[1]) < cfg.p_v)
    raise ValueError(f"unknown edge kind {e.kind!r}")


def open_horizontal_degree(cfg: LatticeConfig, x, layer=0, seed=None) -> np.ndarray:
    """Number of open horizontal edges at each site ``(x, layer)``.

    ``seed`` may be an array (one seed per site) to sample a fixed site across
    independent realisations.
    """
    x = np.asarray(x, dtype=np.int64)[..., None]
    d = np.concatenate([np.arange(-cfg.N, 0), np.arange(1, cfg.N + 1)])
    y = x + d
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    s = cfg.seed if seed is None else np.asarray(seed)[..., None]
    u = coins.uniform(s, coins.HORIZONTAL, layer, lo, hi)
    return (u < cfg.p_h).sum(axis=-1)


@dataclass
class Cluster:
    """Sites reached from the origin(s) with their BFS generation."""

    x: np.ndarray
    layer: np.ndarray
    generation: np.ndarray
    truncated: bool = False

    @property
    def size(self) -> int:
        return int(self.x.size)

    @property
    def sites(self) -> set:
        return set(zip(self.x.tolist(), self.layer.tolist()))

    def generation_map(self) -> dict:
        return dict(zip(zip(self.x.tolist(), self.layer.tolist()), self.generation.tolist()))

    def layers(self) -> np.ndarray:
        return np.unique(self.layer)

    def to_csv(self, path) -> None:
        order = np.lexsort((self.x, self.layer, self.generation))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "layer", "generation"])
            for i in order:
                w.writerow([int(self.x[i]), int(self.layer[i]), int(self.generation[i])])


def _neighbours(cfg, xs, ls, caps: Caps, x_bounds):
    """Open-edge neighbours of the frontier, as packed keys (may repeat)."""
    out = []
    N = cfg.N
    if cfg.p_h > 0.0:
        d = np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])
        # chunk to bound memory at large N
        step = max(1, 4_000_000 // (2 * N))
        for s in range(0, xs.size, step):
            cx, cl = xs[s:s + step, None], ls[s:s + step, None]
            y = cx + d
            lo, hi = np.minimum(cx, y), np.maximum(cx, y)
            ok = horizontal_uniform(cfg.seed, cl, lo, hi) < cfg.p_h
            if x_bounds is not None:
                ok &= (y >= x_bounds[0]) & (y <= x_bounds[1])
            out.append(site_key(y[ok], np.broadcast_to(cl, y.shape)[ok]))
    if cfg.p_v > 0.0:
        for dl in (-1, 1):
            nl = ls + dl
            ok = vertical_uniform(cfg.seed, xs, np.minimum(ls, nl)) < cfg.p_v
            if caps.layer_window is not None:
                ok &= (nl >= caps.layer_window[0]) & (nl <= caps.layer_window[1])
            out.append(site_key(xs[ok], nl[ok]))
    if not out:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(out)


def _explore(cfg, origins, caps: Caps, x_bounds=None, stop_layer=None):
    start = np.unique(site_key(*np.asarray(origins, dtype=np.int64).T))
    keys, gens = [start], [np.zeros(start.size, dtype=np.int64)]
    seen = start
    frontier = start
    gen = 0
    truncated = False
    reached_stop = False
    while frontier.size:
        fx, fl = split_key(frontier)
        if stop_layer is not None and np.any(fl == stop_layer):
            reached_stop = True
            break
        if gen >= caps.max_generation:
            truncated = True
            break
        nb = np.unique(_neighbours(cfg, fx, fl, caps, x_bounds))
        new = nb[~np.isin(nb, seen, assume_unique=True)]
        gen += 1
        if seen.size + new.size > caps.max_sites:
            new = new[: caps.max_sites - seen.size]
            truncated = True
        keys.append(new)
        gens.append(np.full(new.size, gen, dtype=np.int64))
        seen = np.union1d(seen, new)
        frontier = new
        if truncated:
            break
    k = np.concatenate(keys)
    x, layer = split_key(k)
    return Cluster(x=x, layer=layer, generation=np.concatenate(gens), truncated=truncated), reached_stop


def explore_cluster(cfg: LatticeConfig, origin=(0, 0), caps: Optional[Caps] = None) -> Cluster:
    """Breadth-first open cluster of ``origin``; generation = graph distance.

    ``caps.layer_window = (0, 0)`` restricts the search to the origin's layer,
    giving the horizontal cluster.  Binding caps set ``truncated``.
    """
    caps = caps or Caps()
    if caps.layer_window is not None and not caps.layer_window[0] <= origin[1] <= caps.layer_window[1]:
        raise ValueError("origin lies outside the layer window")
    cluster, _ = _explore(cfg, [origin], caps)
    return cluster


def default_initial_sites(cfg: LatticeConfig) -> np.ndarray:
    """``2 floor(N^(2a))`` equally spaced sites in ``[-floor(N^(1+a)), floor(N^(1+a))]``."""
    R = math.floor(cfg.space_scale + 1e-9)
    K = 2 * math.floor(cfg.time_scale + 1e-9)
    pos = np.floor(-R + 2 * R * (np.arange(K) + 0.5) / K).astype(np.int64)
    return np.unique(pos)


@dataclass
class CrossingEstimate:
    estimate: float
    stderr: float
    reps: int
    thresholds: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_hits(cls, hits: np.ndarray, thresholds=None) -> "CrossingEstimate":
        hits = np.asarray(hits, dtype=float)
        p = float(hits.mean())
        se = math.sqrt(p * (1 - p) / hits.size) if hits.size > 1 else float("nan")
        return cls(p, se, int(hits.size), thresholds)


def _check_box(cfg, W, M, reps):
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if W < 2 * cfg.N:
        raise ValueError(f"box half-width W={W} must be at least 2N={2 * cfg.N}")
    if M < 1:
        raise ValueError("box height M must be at least 1")


def _binomial_cdf(n: int, p: float) -> list:
    from scipy.stats import binom
    cdf = binom.cdf(np.arange(n + 1), n, p)
    cdf[-1] = 1.0
    return cdf.tolist()


def crossing_threshold(cfg: LatticeConfig, W: int, M: int, rep: int, initial=None) -> float:
    """Smallest vertical edge probability at which replica ``rep`` crosses the box.

    The box is ``[-W, W] x [0, M]`` and the start set sits on layer 0.  With
    horizontal edge probability ``cfg.p_h`` fixed, the replica crosses at
    vertical probability ``p`` exactly when the returned value is ``< p``, so
    one search serves every ``p`` (and every ``kappa``, ``b``) on shared coins.

    Vertical coins are keyed uniforms.  Horizontal edges are revealed the
    first time one of their endpoints is expanded, which yields the same
    cluster law as a fixed coin table: an edge is only ever consulted again
    from an endpoint that is already in the cluster.
    """
    N = cfg.N
    two_n = 2 * N
    vseed = coins.derive_seed(cfg.seed, 0x5EED, rep)
    rng = random.Random(coins.derive_seed(cfg.seed, 0xC805, rep))
    cdf = _binomial_cdf(two_n, cfg.p_h)
    start = default_initial_sites(cfg) if initial is None else np.unique(np.asarray(initial, dtype=np.int64))
    if start.size == 0:
        return math.inf
    if M == 0:
        return 0.0
    done = [set() for _ in range(M + 1)]
    heap: list = []
    vu = coins.uniform_scalar
    rand, sample, push = rng.random, rng.sample, heapq.heappush
    choices = range(two_n)

    def flood(sites, layer, level):
        seen = done[layer]
        up = done[layer + 1] if layer < M else None
        down = done[layer - 1] if layer > 0 else None
        stack = [x for x in sites if x not in seen]
        seen.update(stack)
        while stack:
            x = stack.pop()
            if up is not None and x not in up:
                u = vu(vseed, coins.VERTICAL, x, layer)
                push(heap, (u if u > level else level, layer + 1, x))
            if down is not None and x not in down:
                u = vu(vseed, coins.VERTICAL, x, layer - 1)
                push(heap, (u if u > level else level, layer - 1, x))
            k = bisect.bisect_right(cdf, rand())
            if k:
                for d in sample(choices, k):
                    y = x + (d - N if d < N else d - N + 1)
                    if -W <= y <= W and y not in seen:
                        seen.add(y)
                        stack.append(y)

    flood(start.tolist(), 0, 0.0)
    while heap:
        level, layer, x = heapq.heappop(heap)
        if x in done[layer]:
            continue
        if layer == M:
            return level
        flood([x], layer, level)
    return math.inf


def crossing_thresholds(cfg: LatticeConfig, W: int, M: int, reps: int, initial=None) -> np.ndarray:
    """Per-replica crossing thresholds (see :func:`crossing_threshold`)."""
    _check_box(cfg, W, M, reps)
    return np.array([crossing_threshold(cfg, W, M, r, initial) for r in range(reps)])


def crosses_quenched(cfg: LatticeConfig, W: int, M: int, rep: int, initial=None) -> bool:
    """Crossing event for one replica on a fully keyed coin table."""
    start = default_initial_sites(cfg) if initial is None else np.asarray(initial, dtype=np.int64)
    if start.size == 0:
        return False
    rcfg = cfg.with_(seed=coins.derive_seed(cfg.seed, 0x0B0C, rep))
    caps = Caps(layer_window=(0, M))
    origins = np.stack([start, np.zeros_like(start)], axis=1)
    _, reached = _explore(rcfg, origins, caps, x_bounds=(-W, W), stop_layer=M)
    return reached


def crossing_probability(cfg: LatticeConfig, W: int, M: int, reps: int, initial=None,
                         method: str = "threshold") -> CrossingEstimate:
    """Monte Carlo probability that the start set on layer 0 connects to
    layer ``M`` inside ``[-W, W] x [0, M]``.

    ``method="threshold"`` runs :func:`crossing_threshold` per replica and
    keeps the thresholds on the result for reuse at other ``p_v``;
    ``method="quenched"`` explores a keyed coin table at the configured
    ``p_v`` and serves as an independent check.
    """
    _check_box(cfg, W, M, reps)
    if method == "threshold":
        thr = crossing_thresholds(cfg, W, M, reps, initial)
        return CrossingEstimate.from_hits(thr < cfg.p_v, thr)
    if method == "quenched":
        hits = np.array([crosses_quenched(cfg, W, M, r, initial) for r in range(reps)])
        return CrossingEstimate.from_hits(hits)
    raise ValueError(f"unknown method {method!r}")


def write_cluster_csv(cluster: Cluster, path) -> Path:
    path = Path(path)
    cluster.to_csv(path)
    return path
