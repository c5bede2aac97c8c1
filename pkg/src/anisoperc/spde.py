"""Grid solvers for the limiting equations.

The field solves ``du = (1/6) u'' dt - kill * u * Theta dt + sqrt(u) dW`` on
``[-L, L]`` with zero boundary values, where ``Theta(t, x)`` is the time
integral of ``u`` up to ``t``.  Paths are stored as rows of a 2-D array so
many independent paths advance together.

Two noise schemes are available:

``"em"``
    Euler-Maruyama, ``u += dt * drift + sqrt(max(u, 0) dt / dx) G``, then
    clamp at zero (the clamped mass is accumulated).
``"feller"``
    Splitting: the deterministic drift step, then an exact transition of
    each cell mass ``m = u dx`` under ``dm = sqrt(m) dB``.  Mass is never
    clamped and the noise step is an exact martingale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr

DIFFUSION = 1.0 / 6.0


def check_stability(dt: float, dx: float) -> None:
    if dt <= 0 or dx <= 0:
        raise ValueError("dt and dx must be positive")
    if dt > 3.0 * dx * dx * (1 + 1e-12):
        raise ValueError(f"unstable explicit step: dt={dt} > 3 dx^2 = {3 * dx * dx}")


def make_grid(L: float, dx: float) -> np.ndarray:
    """Nodes ``-L, -L + dx, ..., L``; the two end nodes are held at zero."""
    n = int(round(2 * L / dx))
    return -L + dx * np.arange(n + 1)


def laplacian(u: np.ndarray, dx: float) -> np.ndarray:
    """Second difference along the last axis with zero boundary nodes."""
    out = np.zeros_like(u)
    out[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / (dx * dx)
    return out


@dataclass
class SpdeState:
    x: np.ndarray
    u: np.ndarray
    cumulative: np.ndarray
    t: float
    dt: float
    dx: float
    clamped: np.ndarray = None  # mass removed by clamping, per path

    def __post_init__(self):
        check_stability(self.dt, self.dx)
        if self.clamped is None:
            self.clamped = np.zeros(self.u.shape[:-1])

    @classmethod
    def initial(cls, f, x: np.ndarray, dt: float, dx: float, paths: Optional[int] = None) -> "SpdeState":
        """Start from ``f`` sampled on ``x`` (``f`` callable or array)."""
        u0 = np.asarray(f(x) if callable(f) else f, dtype=float).copy()
        u0[0] = u0[-1] = 0.0
        if paths is not None:
            u0 = np.broadcast_to(u0, (paths, u0.size)).copy()
        return cls(x, u0, np.zeros_like(u0), 0.0, dt, dx)

    def mass(self) -> np.ndarray:
        return self.u.sum(axis=-1) * self.dx

    def snapshot_rows(self) -> list:
        u = self.u if self.u.ndim == 1 else self.u[0]
        return [(self.t, float(a), float(b)) for a, b in zip(self.x, u)]


def feller_transition(m: np.ndarray, t: float, rng: np.random.Generator) -> np.ndarray:
    """Exact law of ``m_t`` for ``dm = sqrt(m) dB``: Gamma(K, t/2) with K ~ Poisson(2 m_0 / t)."""
    m = np.asarray(m, dtype=float)
    k = rng.poisson(2.0 * np.maximum(m, 0.0) / t)
    out = np.zeros(m.shape)
    pos = k > 0
    out[pos] = rng.gamma(k[pos], t / 2.0)
    return out


def step_dw(state: SpdeState, kill: bool, rng: Optional[np.random.Generator] = None,
            noise: bool = True, G: Optional[np.ndarray] = None, scheme: str = "em") -> SpdeState:
    """Advance every path by ``dt`` and return the new state.

    ``G`` supplies the standard normals of the ``"em"`` scheme (same shape
    as ``u``); when omitted they are drawn from ``rng``.
    """
    u, dt, dx = state.u, state.dt, state.dx
    drift = DIFFUSION * laplacian(u, dx)
    if kill:
        drift = drift - u * state.cumulative
    clamped = state.clamped.copy()
    if not noise:
        new = u + dt * drift
    elif scheme == "em":
        if G is None:
            G = rng.standard_normal(u.shape)
        new = u + dt * drift + np.sqrt(np.maximum(u, 0.0) * dt / dx) * G
    elif scheme == "feller":
        new = np.maximum(u + dt * drift, 0.0)
        new = feller_transition(new * dx, dt, rng) / dx
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    neg = new < 0
    if neg.any():
        clamped -= np.where(neg, new, 0.0).sum(axis=-1) * dx
        new = np.where(neg, 0.0, new)
    new[..., 0] = 0.0
    new[..., -1] = 0.0
    cum = state.cumulative + 0.5 * dt * (u + new)
    return SpdeState(state.x, new, cum, state.t + dt, dt, dx, clamped)


@dataclass
class SimResult:
    state: SpdeState
    log_weight: Optional[np.ndarray] = None
    times: list = field(default_factory=list)
    masses: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    window_integral: Optional[np.ndarray] = None


def simulate(f, t: float, rng: np.random.Generator, *, L: float = 4.0, dx: float = 0.05,
             dt: float = 1e-3, paths: Optional[int] = None, kill: bool = False, noise: bool = True,
             scheme: str = "em", girsanov: bool = False, record_every: int = 0,
             integrate_from: Optional[float] = None) -> SimResult:
    """Run paths to time ``t`` (rounded to whole steps).

    ``girsanov=True`` accumulates, online, the log density of the killed
    law against the unkilled one along the simulated (unkilled) paths; it
    needs the ``"em"`` scheme because it uses the Gaussian increments.
    ``integrate_from`` accumulates ``int u dt`` over ``[integrate_from, t]``
    by the trapezoid rule.
    """
    x = make_grid(L, dx)
    st = SpdeState.initial(f, x, dt, dx, paths)
    steps = int(round(t / dt))
    logw = np.zeros(st.u.shape[:-1]) if girsanov else None
    if girsanov and scheme != "em":
        raise ValueError("the Girsanov weight needs the Gaussian increments of the em scheme")
    res = SimResult(st, logw)
    acc = None
    if integrate_from is not None:
        acc = np.zeros_like(st.u)
    start_step = None if integrate_from is None else int(round(integrate_from / dt))
    if record_every:
        res.times.append(0.0)
        res.masses.append(st.mass())
    for i in range(steps):
        G = rng.standard_normal(st.u.shape) if (noise and scheme == "em") else None
        if girsanov:
            theta = st.cumulative
            amp = np.sqrt(np.maximum(st.u, 0.0) * dt * dx)
            logw -= np.sum(theta * amp * G + 0.5 * np.maximum(st.u, 0.0) * theta**2 * dt * dx, axis=-1)
        prev = st.u
        st = step_dw(st, kill, rng, noise=noise, G=G, scheme=scheme)
        if acc is not None and i >= start_step:
            acc += 0.5 * dt * (prev + st.u)
        if record_every and (i + 1) % record_every == 0:
            res.times.append(st.t)
            res.masses.append(st.mass())
            res.snapshots.append(st.snapshot_rows())
    res.state = st
    res.log_weight = logw
    res.window_integral = acc
    return res


@dataclass
class MassMoments:
    mean: float
    variance: float
    se_mean: float
    se_variance: float
    reps: int
    clamp_rate: float


def total_mass_moments(f, t: float, reps: int, rng: np.random.Generator, kill: bool = False,
                       **grid) -> MassMoments:
    """Sample mean and variance of ``int u_t dx`` over ``reps`` paths."""
    if t == 0:
        x = make_grid(grid.get("L", 4.0), grid.get("dx", 0.05))
        m0 = float(SpdeState.initial(f, x, grid.get("dt", 1e-3), grid.get("dx", 0.05)).mass())
        return MassMoments(m0, 0.0, 0.0, 0.0, reps, 0.0)
    res = simulate(f, t, rng, paths=reps, kill=kill, **grid)
    X = res.state.mass()
    n = X.size
    mean = float(X.mean())
    var = float(X.var(ddof=1))
    c = X - mean
    m4 = float(np.mean(c**4))
    se_var = math.sqrt(max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n)
    clamp = float(res.state.clamped.mean() / (t * max(mean, 1e-300)))
    return MassMoments(mean, var, float(X.std(ddof=1) / math.sqrt(n)), se_var, n, clamp)


def feller_sup_exceedance(x0: float, ks, t_max: float, dt: float, reps: int,
                          rng: np.random.Generator) -> np.ndarray:
    """``P(max over the time grid of X >= 2**k)`` for the Feller diffusion from ``x0``."""
    ks = np.asarray(ks)
    X = np.full(reps, float(x0))
    peak = X.copy()
    for _ in range(int(round(t_max / dt))):
        alive = X > 0
        if not alive.any():
            break
        X[alive] = feller_transition(X[alive], dt, rng)
        np.maximum(peak, X, out=peak)
    return (peak[:, None] >= 2.0 ** ks[None, :]).mean(axis=0)


def dual_solve(phi, t: float, *, L: float = 4.0, dx: float = 0.05, dt: float = 1e-3,
               quadratic: float = 0.5, diffuse: bool = True) -> np.ndarray:
    """Explicit solution of ``v' = (1/6) v'' - quadratic * v^2`` from ``v(0) = phi``.

    ``quadratic = 1/2`` is the Laplace dual of the ``sqrt(u) dW`` noise;
    ``diffuse=False`` drops the Laplacian (the spatially flat Riccati case).
    ``phi`` may be a callable or an array already on the grid.
    """
    check_stability(dt, dx)
    x = make_grid(L, dx)
    v = np.asarray(phi(x) if callable(phi) else phi, dtype=float).copy()
    if diffuse:
        v[0] = v[-1] = 0.0
    for _ in range(int(round(t / dt))):
        lap = DIFFUSION * laplacian(v, dx) if diffuse else 0.0
        v = v + dt * (lap - quadratic * v * v)
        if diffuse:
            v[0] = v[-1] = 0.0
    return v


def heat_solve(f, t: float, *, L: float = 4.0, dx: float = 0.05, dt: float = 1e-3) -> np.ndarray:
    """Grid solution of ``v' = (1/6) v''`` (the noise-free, kill-free equation)."""
    return dual_solve(f, t, L=L, dx=dx, dt=dt, quadratic=0.0)


@dataclass
class DualityCheck:
    mc_mean: float
    stderr: float
    predicted: float

    @property
    def z(self) -> float:
        return abs(self.mc_mean - self.predicted) / self.stderr


def duality_check(f, phi, t: float, paths: int, rng: np.random.Generator, *, L: float = 4.0,
                  dx: float = 0.05, dt: float = 1e-3, scheme: str = "feller") -> DualityCheck:
    """Compare ``E exp(-(u_t, phi))`` with ``exp(-(f, v_t))`` on one grid."""
    x = make_grid(L, dx)
    res = simulate(f, t, rng, L=L, dx=dx, dt=dt, paths=paths, scheme=scheme)
    ph = np.asarray(phi(x), dtype=float)
    vals = np.exp(-res.state.u @ ph * dx)
    v = dual_solve(phi, t, L=L, dx=dx, dt=dt)
    f0 = SpdeState.initial(f, x, dt, dx).u
    pred = math.exp(-float(np.dot(f0, v) * dx))
    return DualityCheck(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(paths)), pred)


def girsanov_log_weight(us, gaussians, dt: float, dx: float) -> float:
    """Log density of the killed law against the unkilled law along one recorded path.

    ``us[i]`` is the field at the start of step ``i`` and ``gaussians[i]``
    the normals driving that step, so the martingale-measure increment of a
    cell is ``sqrt(u dt dx) G``.  ``theta`` is the running time integral of
    ``u`` (trapezoid).
    """
    if us is None or gaussians is None:
        raise ValueError("a recorded path with its noise increments is required")
    if len(us) != len(gaussians):
        raise ValueError("need one noise array per recorded step")
    logw = 0.0
    theta = np.zeros_like(np.asarray(us[0], dtype=float)) if len(us) else None
    for i, (u, G) in enumerate(zip(us, gaussians)):
        u = np.maximum(np.asarray(u, dtype=float), 0.0)
        logw -= float(np.sum(theta * np.sqrt(u * dt * dx) * G + 0.5 * u * theta**2 * dt * dx))
        nxt = np.maximum(np.asarray(us[i + 1], dtype=float), 0.0) if i + 1 < len(us) else u
        theta = theta + 0.5 * dt * (u + nxt)
    return logw


def record_path(f, steps: int, rng: np.random.Generator, *, L: float = 1.0, dx: float = 0.1,
                dt: float = 1e-3) -> tuple:
    """One unkilled em path: the fields at the start of each step and their normals."""
    x = make_grid(L, dx)
    st = SpdeState.initial(f, x, dt, dx)
    us, gs = [], []
    for _ in range(steps):
        G = rng.standard_normal(st.u.shape)
        us.append(st.u.copy())
        gs.append(G)
        st = step_dw(st, False, G=G)
    us.append(st.u.copy())
    return us[:-1], gs, st


def heat_semigroup(f, x: np.ndarray, t: float, quad_points: int = 4001) -> np.ndarray:
    """``G_t f(x) = E f(x + B_{t/3})`` by quadrature against the Gaussian density."""
    x = np.asarray(x, dtype=float)
    if t == 0:
        return np.asarray(f(x), dtype=float)
    s = math.sqrt(t / 3.0)
    z = np.linspace(-8.0, 8.0, quad_points)
    w = np.exp(-0.5 * z * z)
    w /= w.sum()
    return (np.asarray(f(x[:, None] + s * z[None, :]), dtype=float) * w).sum(axis=1)


def trapezoid_profile(r: float, ramp: float):
    """``f = 1`` on ``[-r, r]``, zero outside ``[-r - ramp, r + ramp]``, linear between."""
    def f(x):
        return np.clip((r + ramp - np.abs(np.asarray(x, dtype=float))) / ramp, 0.0, 1.0)
    return f


def indicator_heat(r: float, t: float, x) -> np.ndarray:
    """``G_t 1_[-r, r](x)`` in closed form."""
    s = math.sqrt(t / 3.0)
    x = np.asarray(x, dtype=float)
    return ndtr((r - x) / s) - ndtr((-r - x) / s)


@dataclass
class HeatFlatResult:
    delta: float
    prob: float
    stderr: float
    L1: float
    L2: float
    target: float
    reps: int


def heat_flat_constants(r: float, delta: float) -> tuple:
    """``(L1, L2)`` read off the heat semigroup.

    ``2 L1`` is the indicator's heat flow at the far edge
    ``r + 2 delta^(5/2)`` at time ``delta^5``; ``L2`` doubles the largest
    value the flow of the initial profile can take, which is at most 1.
    """
    d5 = delta**5
    L1 = 0.5 * float(indicator_heat(r, d5, r + 2 * delta**2.5))
    return L1, 2.0


def heat_flat_bound(delta: float, reps: int, rng: np.random.Generator, *, r: float = 1.0,
                    noise: bool = True, kill: bool = True, dx: float = 0.02,
                    dt: Optional[float] = None, L: Optional[float] = None,
                    scheme: str = "feller", f=None) -> HeatFlatResult:
    """Probability that ``L1 d^5 <= int_{d^5/2}^{d^5} u_t(x) dt <= L2 d^5`` on the whole window
    ``|x| <= r + 2 delta^(5/2)``, with ``d = delta``.
    """
    d5 = delta**5
    dt = dt if dt is not None else min(d5 / 100.0, 3 * dx * dx)
    if d5 < 10 * dt:
        raise ValueError("delta too small for this time step")
    L = L if L is not None else r + 2.0
    f = f if f is not None else trapezoid_profile(r, delta**2.5)
    L1, L2 = heat_flat_constants(r, delta)
    res = simulate(f, d5, rng, L=L, dx=dx, dt=dt, paths=reps, kill=kill, noise=noise,
                   scheme=scheme, integrate_from=d5 / 2)
    x = res.state.x
    win = np.abs(x) <= r + 2 * delta**2.5 + 1e-12
    integ = res.window_integral[..., win]
    ok = np.all((integ >= L1 * d5) & (integ <= L2 * d5), axis=-1)
    p = float(np.mean(ok))
    return HeatFlatResult(delta, p, math.sqrt(p * (1 - p) / ok.size), L1, L2, 1 - delta**3.5, int(ok.size))


def write_snapshots(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u"])
        for row in rows:
            w.writerows(row if isinstance(row, list) else [row])
