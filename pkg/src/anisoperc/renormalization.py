"""Block construction on stacked layers and oriented percolation on L0.

A renormalized site ``(m, n)`` (``m + n`` even) owns the block
``[-4, 4] x [0, 2K] + (2m, 2nK)`` with ``K = delta^(-5/2)`` layers per
half-block.  Starting from a good configuration on ``I_m = 2m + [-1, 1]``,
each layer runs the killed attrition process for ``T = delta^5 N^(2/5)``
steps; sites occupied during ``[T/2, T]`` that own an open vertical edge
seed the next layer, which must again be good on an interval wider by
``delta^(5/2)``.  After ``2K`` layers the configuration covers
``2m + [-3, 3]`` and is split into good configurations on ``I_{m-1}`` and
``I_{m+1}``, the inputs of the two blocks above.

Two knobs make the construction runnable at small ``N``.  ``layer_factor``
splits each layer into ``c`` thinner ones (growth ``1/(cK)``, ``2cK``
layers), and ``coarsen`` merges adjacent sub-intervals so that each count
target is larger.  Both default to 1, which is the literal construction.

Every coin used inside a block is keyed by the block coordinates, so
``omega(m, n)`` is a function of the block's own coins and its input.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import coins
from .config import LatticeConfig
from .true_process import GoodSpec, OccupancyField, is_good, make_good, step_true, thin_to_good

_EPS = 1e-9


@dataclass(frozen=True)
class BlockSpec:
    """Block geometry; ``delta^(-5/2)`` must be a whole number."""

    delta: float
    N: int
    delta0: float = 1.0
    layer_factor: int = 1
    coarsen: int = 1

    def __post_init__(self):
        k = self.delta ** -2.5
        if abs(k - round(k)) > 1e-6 or round(k) < 1:
            raise ValueError(f"delta^(-5/2) = {k} is not a positive integer")
        if not self.delta <= self.delta0:
            raise ValueError(f"delta={self.delta} exceeds delta0={self.delta0}")
        if int(self.layer_factor) != self.layer_factor or self.layer_factor < 1:
            raise ValueError("layer_factor must be a positive integer")
        if self.steps < 2:
            raise ValueError(f"delta^5 N^(2/5) = {self.delta**5 * self.N**0.4:.3g} is below 2")

    @classmethod
    def from_k(cls, k: int, N: int, **kw) -> "BlockSpec":
        """Spec with ``delta = k^(-2/5)``, i.e. ``k`` layers per half-block."""
        return cls(delta=float(k) ** -0.4, N=N, **kw)

    @property
    def K(self) -> int:
        return int(round(self.delta ** -2.5))

    @property
    def growth(self) -> float:
        """Interval growth per layer: ``delta^(5/2) = 1/K`` divided by ``layer_factor``."""
        return 1.0 / (self.K * self.layer_factor)

    @property
    def steps(self) -> int:
        """Horizontal steps per layer: ``delta^5 N^(2/5)`` rounded to an even number."""
        return 2 * int(round(self.delta**5 * self.N**0.4 / 2.0))

    @property
    def layers(self) -> int:
        """Layers per block; the interval grows by 2 over a block."""
        return 2 * self.K * self.layer_factor

    def block(self, m: int, n: int) -> tuple:
        """``((x_lo, x_hi), (layer_lo, layer_hi))`` of ``R_{m,n}`` in scaled x and layers."""
        return (2 * m - 4.0, 2 * m + 4.0), (n * self.layers, (n + 1) * self.layers)

    def interval(self, m: int) -> tuple:
        return (2.0 * m - 1.0, 2.0 * m + 1.0)

    def good(self, a: float, b: float) -> GoodSpec:
        return GoodSpec(a, b, self.delta**2.5, self.N, self.coarsen)


@dataclass
class BlockResult:
    success: bool
    field: OccupancyField
    interval: tuple
    failure_layer: Optional[int] = None
    deficits: dict = field(default_factory=dict)

    @property
    def failure_mode(self) -> Optional[str]:
        if self.success:
            return None
        worst = sorted(self.deficits.items())[:3]
        return f"layer {self.failure_layer}: short sub-intervals {worst}"


def layer_step(fld: OccupancyField, interval: tuple, cfg: LatticeConfig, spec: BlockSpec,
               seed: int, tau: float = 0):
    """Run one layer from a good field on ``interval`` and build the next layer's field.

    Returns ``(success, next_field, next_interval, deficits)``.
    """
    a, b = interval
    gs = spec.good(a, b)
    if not is_good(fld, gs, tau):
        raise ValueError("layer input is not good")
    win = gs.window(0.5)
    cur = OccupancyField(fld.occupied.copy(), fld.occupied.copy(), 0, win)
    rng = coins.generator(seed, coins.BLOCK)
    T = spec.steps
    seen = [cur.occupied] if T // 2 == 0 else []
    for k in range(1, T + 1):
        cur = step_true(cur, cfg, rng)
        if k >= T // 2:
            seen.append(cur.occupied)
    touched = np.unique(np.concatenate(seen)) if seen else np.empty(0, dtype=np.int64)
    u = coins.uniform(seed, coins.VERTICAL, touched)
    connected = touched[u < cfg.p_v]
    nxt_int = (a - spec.growth, b + spec.growth)
    target = spec.good(*nxt_int)
    kept, deficits = thin_to_good(connected, target)
    ok = all(v <= tau for v in deficits.values())
    return ok, OccupancyField.from_sites(kept), nxt_int, deficits


def block_seed(cfg: LatticeConfig, m: int, n: int, layer: int) -> int:
    return coins.derive_seed(cfg.seed, coins.BLOCK, m, n, layer)


def block_step(initial: OccupancyField, cfg: LatticeConfig, spec: BlockSpec, m: int = 0, n: int = 0,
               tau: float = 0) -> BlockResult:
    """Run all ``2K`` layers of block ``(m, n)`` from a good field on ``I_m``."""
    interval = spec.interval(m)
    fld = initial
    if not is_good(fld, spec.good(*interval), tau):
        return BlockResult(False, fld, interval, failure_layer=0, deficits={"input": "not good"})
    for layer in range(spec.layers):
        ok, fld, interval, deficits = layer_step(fld, interval, cfg, spec, block_seed(cfg, m, n, layer), tau)
        if not ok:
            return BlockResult(False, fld, interval, failure_layer=layer, deficits=deficits)
    return BlockResult(True, fld, interval)


def split(result: BlockResult, spec: BlockSpec, m: int) -> tuple:
    """Good fields on ``I_{m-1}`` and ``I_{m+1}`` cut from a successful block."""
    out = []
    for mm in (m - 1, m + 1):
        kept, deficits = thin_to_good(result.field.occupied, spec.good(*spec.interval(mm)))
        out.append(OccupancyField.from_sites(kept) if not deficits else None)
    return tuple(out)


@dataclass
class OrientedField:
    """``omega`` on ``L0`` stored densely: ``omega[n, m + offset]`` (entries with odd ``m + n`` unused)."""

    omega: np.ndarray
    offset: int
    p: Optional[float] = None
    d: int = 0

    @property
    def rows(self) -> int:
        return self.omega.shape[-2]

    def get(self, m: int, n: int) -> int:
        if (m + n) % 2 or n < 0:
            raise KeyError(f"({m}, {n}) is not in L0")
        return int(self.omega[..., n, m + self.offset])

    def items(self):
        R, W = self.omega.shape[-2:]
        for n in range(R):
            for j in range(W):
                m = j - self.offset
                if (m + n) % 2 == 0:
                    yield (m, n), int(self.omega[n, j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "n", "bit"])
            for (m, n), bit in self.items():
                w.writerow([m, n, bit])


@dataclass
class StackedRun:
    omega: dict                      # (m, n) -> 0/1 for every evaluated block
    reached: dict                    # (m, n) -> whether the input was inherited
    rows: int

    def field(self) -> OrientedField:
        W = max([self.rows] + [abs(m) for m, _ in self.omega])
        arr = np.zeros((self.rows, 2 * W + 1), dtype=np.int8)
        for (m, n), bit in self.omega.items():
            arr[n, m + W] = bit
        return OrientedField(arr, W)


@dataclass
class KappaMonotonicity:
    kappas: list
    successes: np.ndarray        # (kappa, rep) block success
    layer0_deficit: np.ndarray   # (kappa, rep) total first-layer shortfall

    @property
    def rates(self) -> np.ndarray:
        return self.successes.mean(axis=1)

    @property
    def pathwise(self) -> bool:
        """First-layer shortfall never increases with ``kappa`` for any seed."""
        return bool(np.all(np.diff(self.layer0_deficit, axis=0) <= 0))

    @property
    def rate_monotone(self) -> bool:
        """Success rate nondecreasing up to two standard errors of each difference."""
        r, n = self.rates, self.successes.shape[1]
        se = np.sqrt((r[1:] * (1 - r[1:]) + r[:-1] * (1 - r[:-1])) / n)
        return bool(np.all(np.diff(r) >= -2 * se - 1e-12))

    @property
    def passed(self) -> bool:
        return self.pathwise and self.rate_monotone


def kappa_monotonicity(cfg: LatticeConfig, spec: BlockSpec, kappas, reps: int) -> KappaMonotonicity:
    """Run block ``(0, 0)`` with the same block seeds at every ``kappa``.

    Horizontal dynamics do not depend on ``kappa``; the vertical coins are
    compared against a larger ``p_v``, so the first layer's connected set can
    only grow.
    """
    kappas = sorted(kappas)
    succ = np.zeros((len(kappas), reps), dtype=bool)
    d0 = np.zeros((len(kappas), reps), dtype=np.int64)
    start = make_good(spec.good(*spec.interval(0)))
    for r in range(reps):
        for i, kap in enumerate(kappas):
            c = cfg.with_(kappa=kap, seed=coins.derive_seed(cfg.seed, coins.BLOCK, r))
            _, _, _, dd = layer_step(start, spec.interval(0), c, spec, block_seed(c, 0, 0, 0))
            d0[i, r] = sum(dd.values())
            succ[i, r] = block_step(start, c, spec).success
    return KappaMonotonicity(list(kappas), succ, d0)


def stacked_run(cfg: LatticeConfig, spec: BlockSpec, rows: int,
                origin: Optional[OccupancyField] = None, width: Optional[int] = None) -> StackedRun:
    """Evaluate ``omega(m, n)`` for ``0 <= n < rows``.

    Without ``width`` the sites form the forward cone ``|m| <= n``; with it
    every ``|m| <= width`` is evaluated on every row.

    A block whose lower neighbours produced a good field on ``I_m`` inherits
    it, preferring the lower-``m`` parent; otherwise it starts from the
    canonical good field on ``I_m``.  The origin block uses ``origin`` when
    given.
    """
    omega, reached = {}, {}
    outputs = {}
    for n in range(rows):
        half = n if width is None else width
        for m in range(-half, half + 1):
            if (m + n) % 2:
                continue
            inp = None
            if n == 0 and m == 0 and origin is not None:
                inp = origin
            else:
                left = outputs.get((m - 1, n - 1))
                right = outputs.get((m + 1, n - 1))
                if left is not None and left[1] is not None:
                    inp = left[1]
                elif right is not None and right[0] is not None:
                    inp = right[0]
            reached[(m, n)] = inp is not None and not (n == 0 and m == 0)
            if inp is None:
                inp = make_good(spec.good(*spec.interval(m)))
            res = block_step(inp, cfg, spec, m, n)
            omega[(m, n)] = int(res.success)
            outputs[(m, n)] = split(res, spec, m) if res.success else (None, None)
    return StackedRun(omega, reached, rows)


def extract_omega(run: StackedRun) -> OrientedField:
    return run.field()


# ---- oriented percolation ------------------------------------------------------

def iid_field(p: float, rows: int, reps: int, rng: np.random.Generator, U=None) -> OrientedField:
    """i.i.d. Bernoulli(p) sites; pass ``U`` to share uniforms across densities."""
    W = rows
    U = rng.random((reps, rows + 1, 2 * W + 3)) if U is None else U
    return OrientedField((U < p).astype(np.int8), W + 1, p, 0)


def one_dependent_field(p: float, rows: int, reps: int, rng: np.random.Generator, U=None) -> OrientedField:
    """``omega(a) = 1{max(U_a, U_{a + (1, 1)}) < sqrt(p)}``.

    Each site reads its own uniform and its upper-right neighbour's, so
    sites at sup-distance 2 or more share nothing and the density is ``p``.
    """
    W = rows
    U = rng.random((reps, rows + 2, 2 * W + 4)) if U is None else U
    s = math.sqrt(p)
    mx = np.maximum(U[:, :-1, :-1], U[:, 1:, 1:])
    return OrientedField((mx < s).astype(np.int8), W + 1, p, 1)


def oriented_survival(src: OrientedField, rows: int) -> tuple:
    """Fraction of replicas in which ``(0, 0)`` reaches row ``rows``, with its standard error."""
    om = src.omega
    if om.ndim == 2:
        om = om[None]
    if rows < 0 or om.shape[1] <= rows:
        raise ValueError("field has too few rows")
    W = om.shape[2]
    wet = np.zeros((om.shape[0], W), dtype=bool)
    wet[:, src.offset] = om[:, 0, src.offset] == 1
    for n in range(1, rows + 1):
        nb = np.zeros_like(wet)
        nb[:, 1:] |= wet[:, :-1]
        nb[:, :-1] |= wet[:, 1:]
        wet = nb & (om[:, n, :] == 1)
    alive = wet.any(axis=1)
    p = float(alive.mean())
    return p, math.sqrt(p * (1 - p) / alive.size)


@dataclass
class IndependenceAudit:
    offset: tuple
    corr: float
    stderr: float
    pairs: int

    @property
    def degenerate(self) -> bool:
        """No variation in one of the members, so the test has no power."""
        return not self.stderr > 0

    @property
    def passed(self) -> bool:
        return not self.degenerate and abs(self.corr) <= 3 * self.stderr


def independence_audit(fields: list, offsets=((2, 0), (0, 2), (2, 2)), perms: int = 200,
                       rng: Optional[np.random.Generator] = None) -> list:
    """Correlation of ``omega`` across replicas for site pairs at the given offsets.

    Pairs ``(a, a + offset)`` are pooled over all positions present in
    every field; the standard error is the spread of the same statistic
    after permuting the second member across replicas.
    """
    rng = rng or np.random.default_rng(0)
    keys = set(fields[0].keys())
    for f in fields[1:]:
        keys &= set(f.keys())
    out = []
    for off in offsets:
        pairs = [(a, (a[0] + off[0], a[1] + off[1])) for a in sorted(keys)
                 if (a[0] + off[0], a[1] + off[1]) in keys]
        if not pairs:
            out.append(IndependenceAudit(off, float("nan"), float("nan"), 0))
            continue
        X = np.array([[f[a] for a, _ in pairs] for f in fields], dtype=float)
        Y = np.array([[f[b] for _, b in pairs] for f in fields], dtype=float)

        def stat(Xa, Ya):
            xc = Xa - Xa.mean(axis=0)
            yc = Ya - Ya.mean(axis=0)
            den = np.sqrt((xc**2).sum() * (yc**2).sum())
            return float((xc * yc).sum() / den) if den > 0 else 0.0

        c = stat(X, Y)
        null = [stat(X, Y[rng.permutation(len(fields))]) for _ in range(perms)]
        out.append(IndependenceAudit(off, c, float(np.std(null)), len(pairs)))
    return out
