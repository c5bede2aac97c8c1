"""Experiment plans, the gate suites behind the CLI, and report emission.

Each suite is a pure function of its plan: every random stream is derived
from the plan's master seed and fixed labels, so rerunning a plan rewrites
byte-identical CSV files.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import __version__, coins
from . import envelope as env
from . import kernel, percolation, renormalization as ren, spde
from .config import LatticeConfig
from .sampling import branch
from .true_process import coupled_violations, cumulative_cluster_size

log = logging.getLogger(__name__)

KINDS = ("kappa_scan", "exponent_fit", "cluster_scaling", "dominating_branching",
         "spde_suite", "renorm_suite", "branching_suite")


# ---- plans and results -------------------------------------------------------

@dataclass
class ExperimentPlan:
    """A replayable description of one experiment.

    ``grid`` may hold the lists ``N``, ``kappa``, ``b`` and ``delta``;
    ``params`` carries kind-specific knobs.  ``scale`` multiplies every
    replicate count (1.0 is the full-size run).
    """

    kind: str
    grid: dict = field(default_factory=dict)
    reps: int = 0
    out: str = "out"
    seed: int = 0
    params: dict = field(default_factory=dict)
    scale: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.reps < 0 or not self.scale > 0:
            raise ValueError("reps must be nonnegative and scale positive")
        for n in self.grid.get("N", []):
            if int(n) != n or n < 1:
                raise ValueError(f"N must be a positive integer, got {n!r}")
        if any(k < 0 for k in self.grid.get("kappa", [])):
            raise ValueError("kappa must be nonnegative")
        if any(b <= 0 for b in self.grid.get("b", [])):
            raise ValueError("b must be positive")
        for d in self.grid.get("delta", []):
            k = d ** -2.5
            if not 0 < d <= 1 or abs(k - round(k)) > 1e-6:
                raise ValueError(f"delta={d} must lie in (0, 1] with delta^(-5/2) an integer")

    def n_reps(self, full: int, floor: int = 2) -> int:
        base = self.reps if self.reps else full
        return max(floor, int(round(base * self.scale)))

    def rng(self, *labels: int) -> np.random.Generator:
        return coins.generator(self.seed, KINDS.index(self.kind), *labels)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        return cls(**d)


@dataclass
class Table:
    name: str
    header: list
    rows: list


@dataclass
class Gate:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Figure:
    name: str
    series: dict
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    logx: bool = False
    logy: bool = False
    hline: Optional[float] = None


@dataclass
class SuiteResult:
    plan: ExperimentPlan
    tables: list = field(default_factory=list)
    gates: list = field(default_factory=list)
    figures: list = field(default_factory=list)
    values: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates)

    def gate(self, name: str) -> Gate:
        for g in self.gates:
            if g.name == name:
                return g
        raise KeyError(name)

    def add_gate(self, name: str, passed: bool, detail: str = "") -> None:
        self.gates.append(Gate(name, bool(passed), detail))


def _map_cells(fn, cells: list, workers: int = 1) -> list:
    """Apply ``fn`` to every cell; results keep the cell order."""
    if workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


# ---- statistics helpers ------------------------------------------------------

def binomial_chisquare(samples, n: int, p: float, min_expected: float = 5.0) -> tuple:
    """Pearson chi-square of integer ``samples`` against Binomial(n, p).

    Cells with small expected counts are merged into the upper tail.
    Returns ``(statistic, p_value, dof)``.
    """
    samples = np.asarray(samples, dtype=np.int64)
    size = samples.size
    pmf = stats.binom.pmf(np.arange(n + 1), n, p)
    obs = np.bincount(samples, minlength=n + 1)[: n + 1].astype(float)
    exp_, ob = [], []
    acc_e = acc_o = 0.0
    for k in range(n + 1):
        acc_e += pmf[k] * size
        acc_o += obs[k]
        if acc_e >= min_expected:
            exp_.append(acc_e)
            ob.append(acc_o)
            acc_e = acc_o = 0.0
    if exp_:
        exp_[-1] += acc_e
        ob[-1] += acc_o
    if len(exp_) < 2:
        return 0.0, 1.0, 0
    exp_ = np.array(exp_)
    exp_ *= size / exp_.sum()
    res = stats.chisquare(np.array(ob), exp_)
    return float(res.statistic), float(res.pvalue), len(exp_) - 1


def median_band(values, level: float = 0.95) -> tuple:
    """Sample median with a distribution-free order-statistic confidence band."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    z = stats.norm.ppf(0.5 + level / 2)
    lo = max(int(math.floor(n / 2 - z * math.sqrt(n) / 2)), 0)
    hi = min(int(math.ceil(n / 2 + z * math.sqrt(n) / 2)), n - 1)
    return float(np.median(v)), float(v[lo]), float(v[hi])


# ---- branching suite: exact laws, martingale, tails, coupling -----------------

def offspring_samples(N: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """Offspring counts of ``reps`` independent envelope particles."""
    _, parent = branch(np.zeros(reps, dtype=np.int64), N, 1.0 / (2 * N), rng)
    return np.bincount(parent, minlength=reps)


def horizontal_degree_samples(N: int, reps: int, seed: int) -> np.ndarray:
    """Open horizontal degree of site 0 on ``reps`` independently keyed lattices."""
    seeds = np.array([coins.derive_seed(seed, r) for r in range(reps)], dtype=np.uint64)
    return percolation.open_horizontal_degree(LatticeConfig(N=N), np.zeros(reps, dtype=np.int64), 0, seeds)


def one_step_mass_moments(N: int, start: int, reps: int, rng: np.random.Generator) -> dict:
    """Conditional mean and variance of the envelope mass after one step from ``start`` particles."""
    parents = np.tile(np.arange(start, dtype=np.int64) * 3, reps)
    _, idx = branch(parents, N, 1.0 / (2 * N), rng)
    X = np.bincount(idx // start, minlength=reps).astype(float)
    mean, var = float(X.mean()), float(X.var(ddof=1))
    c = X - mean
    se_var = math.sqrt(max(float(np.mean(c**4)) - var * var, 0.0) / reps)
    return {"mean": mean, "se_mean": float(X.std(ddof=1) / math.sqrt(reps)),
            "var": var, "se_var": se_var, "target_var": (1 - 1 / (2 * N)) * start}


def branching_suite(plan: ExperimentPlan) -> SuiteResult:
    res = SuiteResult(plan)
    pr = plan.params
    # exact laws
    rows = []
    ok = True
    n_law = plan.n_reps(10**5, 100)
    for i, N in enumerate(pr.get("law_N", [1, 8, 64])):
        off = offspring_samples(N, n_law, plan.rng(1, i))
        deg = horizontal_degree_samples(N, n_law, coins.derive_seed(plan.seed, 2, i))
        for name, s in (("offspring", off), ("horizontal_degree", deg)):
            chi, pv, dof = binomial_chisquare(s, 2 * N, 1 / (2 * N))
            rows.append([name, N, s.size, repr(chi), dof, repr(pv)])
            ok &= pv > 0.01
    res.tables.append(Table("exact_laws", ["law", "N", "samples", "chi2", "dof", "p_value"], rows))
    res.add_gate("exact_laws", ok, "all chi-square p-values > 0.01")

    # martingale
    N, X0 = pr.get("mart_N", 16), pr.get("mart_start", 64)
    m = one_step_mass_moments(N, X0, plan.n_reps(10**5, 100), plan.rng(3))
    drift_ok = abs(m["mean"] - X0) <= 4 * m["se_mean"]
    var_ok = abs(m["var"] / m["target_var"] - 1) <= 0.05
    res.tables.append(Table("martingale", ["N", "start", "mean", "se_mean", "var", "se_var", "target_var"],
                            [[N, X0, repr(m["mean"]), repr(m["se_mean"]), repr(m["var"]),
                              repr(m["se_var"]), repr(m["target_var"])]]))
    res.add_gate("martingale_drift", drift_ok, f"mean {m['mean']:.4f} vs {X0} (se {m['se_mean']:.4f})")
    res.add_gate("martingale_variance", var_ok, f"var ratio {m['var'] / m['target_var']:.4f}")

    # hitting-time tail
    ks = pr.get("hit_k", [3, 4, 5, 6, 7, 8])
    ht = env.hitting_probabilities(pr.get("hit_N", 16), ks, plan.n_reps(10**5, 1000), plan.rng(4))
    slope = ht.slope() if np.all(ht.prob > 0) else float("nan")
    res.tables.append(Table("hitting", ["k", "prob", "stderr", "reps"],
                            [[int(k), repr(float(p)), repr(float(s)), ht.reps]
                             for k, p, s in zip(ht.ks, ht.prob, ht.stderr)]))
    res.add_gate("hitting_slope", -1.25 <= slope <= -0.75, f"slope {slope:.4f}")
    res.values["hitting_slope"] = slope
    res.figures.append(Figure("hitting", {"P(T_k finite)": (ht.ks, ht.prob, ht.stderr),
                                          "2^-k": (ht.ks, 2.0 ** -ht.ks.astype(float))},
                              "k", "probability", "hitting-time tail", logy=True))

    # survival
    n, NS = pr.get("surv_n", 100), pr.get("surv_N", 1000)
    p, se = env.survival_probability(NS, n, plan.n_reps(2 * 10**5, 1000), plan.rng(5))
    res.tables.append(Table("survival", ["N", "n", "prob", "stderr", "n_times_prob"],
                            [[NS, n, repr(p), repr(se), repr(n * p)]]))
    res.add_gate("survival_limit", 1.7 <= n * p <= 2.3, f"n P = {n * p:.4f} +- {n * se:.4f}")
    res.values["n_times_survival"] = n * p

    # coupling
    runs = plan.n_reps(10**3, 10)
    cN, cap = pr.get("couple_N", 16), pr.get("couple_steps", 10**4)
    rng = plan.rng(6)
    viol = [coupled_violations(LatticeConfig(N=cN), cap, rng) for _ in range(runs)]
    res.tables.append(Table("coupling", ["N", "runs", "steps_cap", "violations"], [[cN, runs, cap, int(sum(viol))]]))
    res.add_gate("coupling_domination", sum(viol) == 0, f"{sum(viol)} violations in {runs} runs")
    return res


# ---- kappa scan and exponent fit ---------------------------------------------

def box_for(N: int, alpha: float = 0.2) -> tuple:
    """Default crossing box ``(W, M) = (3 floor(N^(1+a)), ceil(2 N^(2a)))``."""
    return 3 * math.floor(N ** (1 + alpha) + 1e-9), math.ceil(2 * N ** (2 * alpha) - 1e-9)


def _scan_cell(args) -> dict:
    N, seed, reps, W, M = args
    try:
        cfg = LatticeConfig(N=N, seed=coins.derive_seed(seed, N))
        return {"N": N, "thresholds": percolation.crossing_thresholds(cfg, W, M, reps), "error": ""}
    except Exception as exc:  # recorded per cell, the scan continues
        return {"N": N, "thresholds": None, "error": repr(exc)}


def scan_thresholds(plan: ExperimentPlan) -> dict:
    """Crossing thresholds per ``N``; shared by every ``(kappa, b)`` cell (paired coins)."""
    reps = plan.n_reps(2000, 10)
    cells = []
    for N in plan.grid.get("N", [32, 128, 512]):
        W, M = plan.params.get("box", {}).get(str(N), box_for(N))
        cells.append((int(N), plan.seed, reps, W, M))
    out = _map_cells(_scan_cell, cells, plan.params.get("workers", 1))
    return {c["N"]: c for c in out}


def run_kappa_scan(plan: ExperimentPlan, thresholds: Optional[dict] = None) -> SuiteResult:
    """Crossing estimates over the ``(N, kappa, b)`` grid and half-crossing points per ``(N, b)``."""
    res = SuiteResult(plan)
    th = thresholds if thresholds is not None else scan_thresholds(plan)
    Ns = sorted(th)
    bs = plan.grid.get("b", [0.3, 0.4, 0.5])
    kappas = sorted(plan.grid.get("kappa", [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0]))
    rows, half = [], []
    khat = {}
    mono = True
    zero_ok = True
    for N in Ns:
        cell = th[N]
        for b in bs:
            if cell["thresholds"] is None:
                rows.append([N, b, "", "", "", "", 0, cell["error"]])
                continue
            t = cell["thresholds"]
            prev = -1.0
            for kap in kappas:
                pv = min(1.0, kap * N ** -b)
                est = percolation.CrossingEstimate.from_hits(t < pv)
                rows.append([N, b, kap, repr(pv), repr(est.estimate), repr(est.stderr), est.reps, ""])
                mono &= est.estimate >= prev
                prev = est.estimate
                if kap == 0:
                    zero_ok &= est.estimate == 0
            med, lo, hi = median_band(t)
            khat[(b, N)] = med * N**b
            half.append([N, b, repr(med * N**b), repr(lo * N**b), repr(hi * N**b), t.size])
    res.tables.append(Table("crossing", ["N", "b", "kappa", "p_v", "estimate", "stderr", "reps", "error"], rows))
    res.tables.append(Table("half_crossing", ["N", "b", "kappa_hat", "lo95", "hi95", "reps"], half))
    res.add_gate("scan_complete", all(th[N]["thresholds"] is not None for N in Ns),
                 "; ".join(f"N={N}: {th[N]['error']}" for N in Ns if th[N]["error"]))
    res.add_gate("monotone_in_kappa", mono, "paired estimates nondecreasing in kappa")
    if 0.0 in kappas:
        res.add_gate("kappa_zero", zero_ok, "kappa = 0 never crosses")
    res.values["kappa_hat"] = {f"{b}:{N}": v for (b, N), v in khat.items()}
    trend = trend_gates(khat)
    for name, (ok, detail) in trend.items():
        res.add_gate(name, ok, detail)
    series = {}
    for b in bs:
        pts = [(N, khat[(b, N)]) for N in Ns if (b, N) in khat]
        if pts:
            x, y = zip(*pts)
            series[f"b={b}"] = (list(x), list(y))
    res.figures.append(Figure("half_crossing", series, "N", "half-crossing kappa", "kappa_hat(N)",
                              logx=True, logy=True))
    b_mid = min(bs, key=lambda b: abs(b - 0.4))
    curves = {}
    for N in Ns:
        if th[N]["thresholds"] is None:
            continue
        t = th[N]["thresholds"]
        est = [float(np.mean(t < min(1.0, k * N**-b_mid))) for k in kappas]
        curves[f"N={N}"] = (kappas, est)
    res.figures.append(Figure("crossing_curves", curves, "kappa", "crossing probability",
                              f"crossing proxy at b={b_mid}", hline=0.5))
    return res


def trend_gates(khat: dict) -> dict:
    """Stability at ``b = 0.4`` and monotone drift at ``b = 0.3`` / ``0.5``.

    Only gates whose exponents are present with at least two ``N`` values
    are returned.
    """
    out = {}
    by_b: dict = {}
    for (b, N), v in khat.items():
        by_b.setdefault(round(b, 6), []).append((N, v))
    for b, pts in by_b.items():
        pts.sort()
        vals = np.array([v for _, v in pts])
        if len(vals) < 2:
            continue
        txt = ", ".join(f"{v:.4g}" for v in vals)
        if b == 0.4:
            ratio = float(vals.max() / vals.min()) if np.all(np.isfinite(vals)) and vals.min() > 0 else math.inf
            out["trend_b0.4_stable"] = (ratio <= 2.0, f"max/min {ratio:.3f} ({txt})")
        elif b == 0.5:
            out["trend_b0.5_increasing"] = (bool(np.all(np.diff(vals) > 0)), txt)
        elif b == 0.3:
            out["trend_b0.3_decreasing"] = (bool(np.all(np.diff(vals) < 0)), txt)
    return out


def run_exponent_fit(plan: ExperimentPlan, thresholds: Optional[dict] = None) -> SuiteResult:
    """Exponent at which the half-crossing point is flat in ``N``.

    ``log median threshold`` is regressed on ``log N``; minus the slope is
    the exponent ``b`` making ``kappa_hat = median * N^b`` constant.  The
    standard error comes from resampling replicas within each ``N``.
    """
    res = SuiteResult(plan)
    th = thresholds if thresholds is not None else scan_thresholds(plan)
    Ns = [N for N in sorted(th) if th[N]["thresholds"] is not None]
    if len(Ns) < 2:
        res.add_gate("exponent_fit", False, "need two or more N values")
        return res
    logN = np.log(Ns)

    def fit(samples):
        return -float(np.polyfit(logN, np.log([np.median(s) for s in samples]), 1)[0])

    b_hat = fit([th[N]["thresholds"] for N in Ns])
    rng = plan.rng(7)
    boots = []
    for _ in range(plan.params.get("boot", 200)):
        boots.append(fit([rng.choice(th[N]["thresholds"], th[N]["thresholds"].size) for N in Ns]))
    se = float(np.std(boots, ddof=1))
    res.tables.append(Table("exponent_fit", ["N_values", "b_hat", "stderr", "reps"],
                            [[" ".join(map(str, Ns)), repr(b_hat), repr(se), int(th[Ns[0]]["thresholds"].size)]]))
    res.values["b_hat"] = b_hat
    res.add_gate("exponent_finite", math.isfinite(b_hat), f"b_hat {b_hat:.4f} +- {se:.4f}")
    return res


# ---- cluster scaling and the dominating branching process --------------------

@dataclass
class DominatingBranching:
    extinct_fraction: float
    stderr: float
    capped: int
    reps: int
    mean_offspring: float
    offspring_se: float
    predicted_offspring: float
    two_kappa_L: float

    @property
    def subcritical(self) -> bool:
        return self.two_kappa_L < 1


def run_dominating_branching(cfg: LatticeConfig, L_hat: float, reps: int, rng: np.random.Generator,
                             sizes, cap: int = 1000, max_population: int = 10**6) -> DominatingBranching:
    """Simulate ``Z_{m+1} ~ Binomial(2 * sum of Z_m cluster sizes, p_v)`` from ``Z_0 = 1``.

    Cluster sizes are drawn with replacement from ``sizes``.  A replica is
    capped when it survives ``cap`` generations or exceeds
    ``max_population``.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size == 0 or reps < 1:
        raise ValueError("need a nonempty size sample and reps >= 1")
    pv = cfg.p_v
    Z = np.ones(reps, dtype=np.int64)
    capped = np.zeros(reps, dtype=bool)
    parents = children = 0
    for _ in range(cap):
        live = np.nonzero((Z > 0) & ~capped)[0]
        if live.size == 0:
            break
        z = Z[live]
        draws = rng.choice(sizes, int(z.sum()))
        starts = np.concatenate([[0], np.cumsum(z)[:-1]])
        tot = np.add.reduceat(draws, starts)
        kids = rng.binomial(2 * tot, pv)
        parents += int(z.sum())
        children += int(kids.sum())
        Z[live] = kids
        capped[live[kids > max_population]] = True
    capped |= Z > 0
    ext = float(np.mean(Z == 0))
    mean_n = float(sizes.mean())
    off_var = 2 * pv * (1 - pv) * mean_n + 4 * pv * pv * float(sizes.var())
    return DominatingBranching(
        ext, math.sqrt(ext * (1 - ext) / reps), int(capped.sum()), reps,
        children / parents if parents else 0.0, math.sqrt(off_var / max(parents, 1)),
        2 * pv * mean_n, 2 * cfg.kappa * L_hat)


def cluster_suite(plan: ExperimentPlan) -> SuiteResult:
    res = SuiteResult(plan)
    reps = plan.n_reps(10**4, 50)
    cap = plan.params.get("cap", 10**4)
    rows, norm = [], []
    last = None
    for i, N in enumerate(plan.grid.get("N", [50, 200, 800])):
        r = cumulative_cluster_size(LatticeConfig(N=int(N)), cap, reps, plan.rng(1, i))
        rows.append([N, repr(r.mean), repr(r.stderr), repr(r.normalized), r.reps, r.capped])
        norm.append((N, r.normalized, r.stderr / N**0.4))
        res.add_gate(f"cluster_reliable_N{N}", not r.unreliable, f"{r.capped} capped of {r.reps}")
        last = r
    res.tables.append(Table("cluster_size", ["N", "mean", "stderr", "normalized", "reps", "capped"], rows))
    vals = np.array([v for _, v, _ in norm])
    ratio = float(vals.max() / vals.min())
    res.values["cluster_ratio"] = ratio
    res.add_gate("cluster_scaling", ratio <= 3.0, f"max/min of mean|C|/N^0.4 = {ratio:.3f}")
    x, y, e = zip(*norm)
    res.figures.append(Figure("cluster_scaling", {"mean|C|/N^0.4": (list(x), list(y), list(e))},
                              "N", "normalized mean cluster size", "cluster scaling", logx=True))

    # dominating branching at 2 kappa L = target, on the largest N's size sample
    target = plan.params.get("two_kappa_L", 0.5)
    L_hat = float(vals.max())
    kappa = target / (2 * L_hat)
    cfg = LatticeConfig(N=last.N, kappa=kappa)
    db = run_dominating_branching(cfg, L_hat, plan.n_reps(10**4, 100), plan.rng(2), last.sizes,
                                  cap=plan.params.get("generations", 1000))
    res.tables.append(Table("dominating_branching",
                            ["N", "kappa", "two_kappa_L", "extinct_fraction", "stderr", "capped", "reps",
                             "mean_offspring", "offspring_se", "predicted_offspring"],
                            [[last.N, repr(kappa), repr(db.two_kappa_L), repr(db.extinct_fraction),
                              repr(db.stderr), db.capped, db.reps, repr(db.mean_offspring),
                              repr(db.offspring_se), repr(db.predicted_offspring)]]))
    if db.two_kappa_L <= 0.5:
        res.add_gate("dominating_extinction", db.extinct_fraction >= 0.99,
                     f"extinct {db.extinct_fraction:.4f}, capped {db.capped}")
    res.add_gate("dominating_wald", abs(db.mean_offspring - db.predicted_offspring) <= 3 * db.offspring_se + 1e-12,
                 f"{db.mean_offspring:.4f} vs {db.predicted_offspring:.4f} (se {db.offspring_se:.4f})")
    return res


def dominating_suite(plan: ExperimentPlan) -> SuiteResult:
    """Dominating branching over a ``kappa`` grid at one ``N``."""
    res = SuiteResult(plan)
    N = int(plan.grid.get("N", [200])[0])
    sizes = cumulative_cluster_size(LatticeConfig(N=N), plan.params.get("cap", 10**4),
                                    plan.n_reps(10**4, 50), plan.rng(1))
    L_hat = sizes.normalized
    rows, ext = [], []
    for i, kap in enumerate(plan.grid.get("kappa", [0.0, 0.1, 0.2, 0.4])):
        db = run_dominating_branching(LatticeConfig(N=N, kappa=kap), L_hat, plan.n_reps(10**3, 50),
                                      plan.rng(2, i), sizes.sizes)
        rows.append([N, kap, repr(db.two_kappa_L), repr(db.extinct_fraction), repr(db.stderr), db.capped,
                     db.reps, repr(db.mean_offspring), repr(db.predicted_offspring)])
        ext.append((db.two_kappa_L, db.extinct_fraction, db.stderr))
        if kap == 0:
            res.add_gate("kappa_zero_extinct", db.extinct_fraction == 1.0, "Z_1 = 0 at kappa = 0")
    res.tables.append(Table("dominating_branching",
                            ["N", "kappa", "two_kappa_L", "extinct_fraction", "stderr", "capped", "reps",
                             "mean_offspring", "predicted_offspring"], rows))
    x, y, e = zip(*ext)
    res.figures.append(Figure("dominating_branching", {"extinction": (list(x), list(y), list(e))},
                              "2 kappa L", "extinction fraction", "dominating branching"))
    return res


# ---- SPDE and kernel ---------------------------------------------------------

def kernel_checks(N: int = 16, ts=(4, 16, 64, 256)) -> dict:
    step = kernel.StepDistribution(N)
    mass = max(abs(kernel.pair(step, kernel.psi_profile(step, n)[1]) - 1) for n in (0, 3, 10, 40))
    resid = max(kernel.recursion_residual(step, i) for i in (1, 2, 5, 20))
    var = max(abs(kernel.walk_variance(step, t) - t * step.variance) for t in (1, 7, 30))
    clt = [kernel.clt_error(step, t) for t in ts]
    return {"mass": mass, "residual": resid, "variance": var, "clt": clt}


def point_mass(x: np.ndarray, dx: float) -> np.ndarray:
    """Unit mass on the grid node nearest 0."""
    u = np.zeros_like(x)
    u[int(np.argmin(np.abs(x)))] = 1.0 / dx
    return u


def spde_suite(plan: ExperimentPlan) -> SuiteResult:
    res = SuiteResult(plan)
    pr = plan.params

    kc = kernel_checks(pr.get("kernel_N", 16))
    res.tables.append(Table("kernel", ["check", "value"],
                            [["mass_error", repr(kc["mass"])], ["recursion_residual", repr(kc["residual"])],
                             ["variance_error", repr(kc["variance"])]]
                            + [[f"clt_bound_ratio_t{c.t}", repr(c.bound_ratio)] for c in kc["clt"]]))
    ratios = [c.bound_ratio for c in kc["clt"]]
    res.add_gate("kernel_mass", kc["mass"] <= 1e-12, f"{kc['mass']:.2e}")
    res.add_gate("kernel_recursion", kc["residual"] < 1e-10, f"{kc['residual']:.2e}")
    res.add_gate("kernel_variance", kc["variance"] < 1e-10, f"{kc['variance']:.2e}")
    res.add_gate("kernel_clt_bounded", max(ratios) <= 1.0, f"bound ratios {['%.3f' % r for r in ratios]}")
    res.figures.append(Figure("clt_error", {"sup error": ([c.t for c in kc["clt"]], [c.sup_error for c in kc["clt"]]),
                                            "t^-3/2 N^a": ([c.t for c in kc["clt"]],
                                                           [16**0.2 * c.t**-1.5 for c in kc["clt"]])},
                              "t", "sup error", "local CLT error", logx=True, logy=True))

    # noise-off flow of a point mass against the heat kernel with variance t/3
    dx = pr.get("heat_dx", 0.01)
    x = spde.make_grid(4.0, dx)
    u = spde.simulate(point_mass(x, dx), 1.0, plan.rng(1), dx=dx, dt=dx * dx / 2, noise=False).state.u
    g = np.exp(-1.5 * x * x) / math.sqrt(2 * math.pi / 3)
    l1 = float(np.abs(u - g).sum() * dx)
    res.tables.append(Table("heat_profile", ["x", "numeric", "kernel"],
                            [[repr(float(a)), repr(float(b)), repr(float(c))] for a, b, c in zip(x, u, g)]))
    res.add_gate("heat_match", l1 <= 0.01, f"L1 {l1:.2e}")
    res.figures.append(Figure("heat_match", {"grid": (x, u), "kernel": (x, g)}, "x", "u(1, x)",
                              "noise-off flow at t = 1"))

    f = spde.trapezoid_profile(0.75, 0.5)
    X0 = 2.0
    # Feller moments
    t = pr.get("moment_t", 0.5)
    mm = spde.total_mass_moments(f, t, plan.n_reps(10**4, 200), plan.rng(2), scheme="feller")
    res.tables.append(Table("mass_moments", ["t", "X0", "mean", "se_mean", "variance", "se_variance", "reps"],
                            [[t, X0, repr(mm.mean), repr(mm.se_mean), repr(mm.variance), repr(mm.se_variance),
                              mm.reps]]))
    res.add_gate("feller_mean", abs(mm.mean - X0) <= 3 * mm.se_mean, f"{mm.mean:.4f} +- {mm.se_mean:.4f}")
    res.add_gate("feller_variance", abs(mm.variance / (X0 * t) - 1) <= 0.10, f"ratio {mm.variance / (X0 * t):.4f}")

    # duality
    phi = spde.trapezoid_profile(0.5, 0.5)
    td = pr.get("duality_t", 0.25)
    dc = spde.duality_check(f, phi, td, plan.n_reps(10**4, 200), plan.rng(3))
    res.tables.append(Table("duality", ["t", "mc_mean", "stderr", "predicted"],
                            [[td, repr(dc.mc_mean), repr(dc.stderr), repr(dc.predicted)]]))
    res.add_gate("duality", abs(dc.mc_mean - dc.predicted) <= 3 * dc.stderr,
                 f"{dc.mc_mean:.5f} vs {dc.predicted:.5f} (se {dc.stderr:.5f})")

    # Girsanov weight is a mean-one martingale
    gw = spde.simulate(spde.trapezoid_profile(0.3, 0.3), pr.get("girsanov_t", 0.1), plan.rng(4), L=1.0, dx=0.1,
                       dt=1e-3, paths=plan.n_reps(10**4, 200), girsanov=True).log_weight
    w = np.exp(gw)
    wm, wse = float(w.mean()), float(w.std(ddof=1) / math.sqrt(w.size))
    res.tables.append(Table("girsanov", ["mean_weight", "stderr", "paths"], [[repr(wm), repr(wse), int(w.size)]]))
    res.add_gate("girsanov_mean_one", abs(wm - 1) <= 3 * wse, f"{wm:.4f} +- {wse:.4f}")

    # heat-flat bound of the killed equation (reported, not gated)
    rows = []
    for i, d in enumerate(pr.get("heat_flat_delta", [0.5])):
        hf = spde.heat_flat_bound(d, plan.n_reps(1000, 50), plan.rng(5, i))
        rows.append([d, repr(hf.prob), repr(hf.stderr), repr(hf.target), repr(hf.L1), repr(hf.L2), hf.reps])
    res.tables.append(Table("heat_flat", ["delta", "prob", "stderr", "target", "L1", "L2", "reps"], rows))
    return res


# ---- renormalization ---------------------------------------------------------

def desk_block_spec(params: dict) -> ren.BlockSpec:
    return ren.BlockSpec.from_k(params.get("K", 2), params.get("block_N", 2**20),
                                layer_factor=params.get("layer_factor", 4), coarsen=params.get("coarsen", 16))


def renorm_suite(plan: ExperimentPlan) -> SuiteResult:
    res = SuiteResult(plan)
    pr = plan.params
    rows_n = pr.get("rows", 200)
    reps = plan.n_reps(10**3, 50)

    # oriented percolation thresholds
    U = plan.rng(1).random((reps, rows_n + 1, 2 * rows_n + 3))
    surv = []
    for p in pr.get("iid_p", [0.4, 0.5, 0.6, 0.7, 0.8, 0.9]):
        s, se = ren.oriented_survival(ren.iid_field(p, rows_n, reps, None, U=U), rows_n)
        surv.append([p, rows_n, reps, repr(s), repr(se)])
        if p == 0.9:
            res.add_gate("oriented_p0.9", s >= 0.5, f"survival {s:.3f}")
        if p == 0.4:
            res.add_gate("oriented_p0.4", s <= 0.01, f"survival {s:.3f}")
    res.tables.append(Table("oriented_survival", ["p", "rows", "reps", "survival", "stderr"], surv))
    res.figures.append(Figure("oriented_survival",
                              {"iid": ([r[0] for r in surv], [float(r[3]) for r in surv],
                                       [float(r[4]) for r in surv])},
                              "p", f"P(reach row {rows_n})", "oriented percolation"))

    # omega from stacked block runs
    spec = desk_block_spec(pr)
    kap = pr.get("block_kappa", 1e9)
    omegas = []
    n_runs = plan.n_reps(pr.get("audit_reps", 300), 20)
    for r in range(n_runs):
        cfg = LatticeConfig(N=spec.N, kappa=kap, seed=coins.derive_seed(plan.seed, 11, r))
        omegas.append(ren.stacked_run(cfg, spec, rows=pr.get("audit_rows", 2), width=pr.get("audit_width", 2)).omega)
    keys = sorted(omegas[0])
    dens = {k: float(np.mean([o[k] for o in omegas])) for k in keys}
    res.tables.append(Table("omega_density", ["m", "n", "density", "runs"],
                            [[m, n, repr(dens[(m, n)]), n_runs] for m, n in keys]))
    audit = ren.independence_audit(omegas, offsets=tuple(tuple(o) for o in pr.get("audit_offsets",
                                                                                     [(2, 0), (4, 0), (3, 1)])),
                                   rng=plan.rng(12))
    res.tables.append(Table("independence_audit", ["dm", "dn", "corr", "stderr", "pairs", "degenerate", "passed"],
                            [[a.offset[0], a.offset[1], repr(a.corr), repr(a.stderr), a.pairs, a.degenerate,
                              a.passed] for a in audit]))
    res.add_gate("omega_independence", all(a.passed for a in audit),
                 "; ".join(f"{a.offset}: {a.corr:.3f} +- {a.stderr:.3f}" for a in audit))

    # kappa monotonicity with paired coins
    kaps = pr.get("mono_kappa", [4.0, 16.0, 64.0, 1e9])
    km = ren.kappa_monotonicity(LatticeConfig(N=spec.N, seed=coins.derive_seed(plan.seed, 13)), spec, kaps,
                                plan.n_reps(pr.get("mono_reps", 40), 5))
    res.tables.append(Table("block_kappa", ["kappa", "success_rate", "mean_layer0_deficit", "reps"],
                            [[k, repr(float(r)), repr(float(d)), km.successes.shape[1]]
                             for k, r, d in zip(km.kappas, km.rates, km.layer0_deficit.mean(axis=1))]))
    res.add_gate("block_monotone_kappa", km.passed,
                 f"pathwise {km.pathwise}, rates {np.round(km.rates, 3).tolist()}")
    return res


SUITES = {
    "kappa_scan": run_kappa_scan,
    "exponent_fit": run_exponent_fit,
    "cluster_scaling": cluster_suite,
    "dominating_branching": dominating_suite,
    "spde_suite": spde_suite,
    "renorm_suite": renorm_suite,
    "branching_suite": branching_suite,
}


def run_plan(plan: ExperimentPlan) -> SuiteResult:
    t0 = time.time()
    out = SUITES[plan.kind](plan)
    log.info("%s finished in %.1f s, gates %s", plan.kind, time.time() - t0,
             {g.name: g.passed for g in out.gates})
    return out


# ---- report bundle -----------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_table(table: Table, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        w.writerows(table.rows)


def _versions() -> dict:
    import matplotlib
    import scipy
    return {"anisoperc": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


def emit_report(results: list, out, figures: bool = True) -> dict:
    """Write every table as CSV, every figure as SVG/PNG and a ``manifest.json``.

    File names are ``<kind>__<table>.csv``.  The manifest records the plans,
    versions, gate outcomes and the SHA-256 of each file.
    """
    from .plotting import line_chart

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"versions": _versions(), "plans": [], "gates": {}, "files": {}, "passed": True}
    for res in results:
        kind = res.plan.kind
        manifest["plans"].append(res.plan.to_dict())
        for tb in res.tables:
            p = out / f"{kind}__{tb.name}.csv"
            write_table(tb, p)
            manifest["files"][p.name] = _sha256(p)
        if figures:
            for fg in res.figures:
                for p in line_chart(out / f"{kind}__{fg.name}", fg.series, xlabel=fg.xlabel, ylabel=fg.ylabel,
                                    title=fg.title, logx=fg.logx, logy=fg.logy, hline=fg.hline):
                    manifest["files"][p.name] = _sha256(p)
        manifest["gates"][kind] = {g.name: {"passed": g.passed, "detail": g.detail} for g in res.gates}
        manifest["passed"] &= res.passed
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest


def plans_from_manifest(path) -> list:
    data = json.loads(Path(path).read_text())
    return [ExperimentPlan.from_dict(p) for p in data.get("plans", [])]


def default_plan(kind: str, seed: int = 0, out: str = "out", scale: float = 1.0, **params) -> ExperimentPlan:
    grids = {
        "kappa_scan": {"N": [32, 128, 512], "b": [0.3, 0.4, 0.5], "kappa": [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0]},
        "exponent_fit": {"N": [32, 128, 512]},
        "cluster_scaling": {"N": [50, 200, 800]},
        "dominating_branching": {"N": [200], "kappa": [0.0, 0.1, 0.2, 0.4]},
    }
    return ExperimentPlan(kind, grids.get(kind, {}), 0, out, seed, params, scale)


def grid_cells(plan: ExperimentPlan) -> list:
    """Cartesian product of the grid lists, in a fixed order."""
    keys = [k for k in ("N", "kappa", "b", "delta") if plan.grid.get(k)]
    return [dict(zip(keys, vals)) for vals in itertools.product(*[plan.grid[k] for k in keys])]
