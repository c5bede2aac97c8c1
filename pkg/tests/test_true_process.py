import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from anisoperc import coins
from anisoperc import true_process as T
from anisoperc.config import LatticeConfig
from anisoperc.envelope import ParticleField

seeds = st.integers(0, 2**32)


@given(seeds)
def test_origin_never_reoccupied(seed):
    rng = np.random.default_rng(seed)
    f = T.OccupancyField.from_sites([0])
    for _ in range(40):
        f = T.step_true(f, LatticeConfig(N=3, p_h_override=0.6), rng)
        assert 0 not in f.occupied


def test_empty_is_absorbing():
    f = T.OccupancyField.from_sites([])
    for _ in range(5):
        f = T.step_true(f, LatticeConfig(N=8), np.random.default_rng(0))
        assert f.mass == 0


@given(seeds, st.integers(1, 10))
def test_attrition_invariants(seed, N):
    rng = np.random.default_rng(seed)
    cfg = LatticeConfig(N=N, p_h_override=min(1.0, 1.5 / N))
    win = (-3 * N, 3 * N)
    f = T.OccupancyField.from_sites([-1, 0, 2], kill_window=win)
    for _ in range(30):
        g = T.step_true(f, cfg, rng)
        assert not np.isin(g.occupied, f.visited).any()
        assert np.isin(f.visited, g.visited).all()
        assert np.isin(g.occupied, g.visited).all()
        assert np.all((g.occupied >= win[0]) & (g.occupied <= win[1]))
        f = g


@given(seeds)
def test_coupled_domination_pathwise(seed):
    rng = np.random.default_rng(seed)
    cfg = LatticeConfig(N=4)
    f = T.OccupancyField.from_sites([0, 1, 5])
    e = ParticleField.from_sites([0, 1, 5])
    for _ in range(60):
        if f.mass == 0:
            break
        f, e = T.step_true(f, cfg, rng, e)
        assert np.all(e.count_at(f.occupied) >= 1)
        assert f.mass <= e.total_mass


def test_coupled_violations_zero():
    rng = np.random.default_rng(1)
    assert sum(T.coupled_violations(LatticeConfig(N=16), 10**4, rng) for _ in range(100)) == 0


def test_coupling_rejects_bad_support():
    with pytest.raises(ValueError):
        T.step_true(T.OccupancyField.from_sites([3]), LatticeConfig(N=4), np.random.default_rng(0),
                    ParticleField.from_sites([0]))


def _hits(masses, k):
    cum = np.cumsum(masses)
    for n, (m, c) in enumerate(zip(masses, cum)):
        if m >= 2**k or c >= 4**k:
            return n
    return math.inf


@pytest.mark.parametrize("seed", range(30))
def test_hat_hitting_time_dominates(seed):
    rng = np.random.default_rng(seed)
    cfg = LatticeConfig(N=16)
    f, e = T.OccupancyField.from_sites([0]), ParticleField.single(0)
    mh, me = [1], [1]
    for _ in range(300):
        f, e = T.step_true(f, cfg, rng, e)
        mh.append(f.mass)
        me.append(e.total_mass)
        if e.total_mass == 0 or e.total_mass > 10**4:
            break
    for k in range(0, 6):
        assert _hits(mh, k) >= _hits(me, k)


def test_hitting_hat_k0():
    r = T.run_hitting_time_hat(LatticeConfig(N=16), 0, 10, np.random.default_rng(0))
    assert r.T == 0


def test_cluster_size_all_closed():
    r = T.cumulative_cluster_size(LatticeConfig(N=10, p_h_override=0.0), 100, 50, np.random.default_rng(0))
    assert np.all(r.sizes == 1) and r.mean == 1 and not r.unreliable


def test_cluster_size_cap_flag():
    r = T.cumulative_cluster_size(LatticeConfig(N=10, p_h_override=0.5), 3, 50, np.random.default_rng(0))
    assert r.capped == 50 and r.unreliable


def test_mean_mass_decreases_with_multiplier():
    out = T.mean_mass_at(LatticeConfig(N=200), [1, 4, 16], 10**4, np.random.default_rng(3))
    means = [m for m, _ in out]
    assert means[0] > means[1] > means[2]


def test_conditional_ratios_below_one_and_decreasing():
    N = 256
    k0 = math.floor(0.4 * math.log2(N))
    res = T.conditional_hitting_ratios(LatticeConfig(N=N), [k0 + 1, k0 + 2, k0 + 3], 300, np.random.default_rng(5))
    assert np.all(res.ratios < 1)
    assert res.ratios[0] > res.ratios[2]


def _keyed_run(seed, N, start, steps, kill_window=None):
    """Attrition process driven by keyed coins on (step, parent, child)."""
    f = T.OccupancyField.from_sites(start, kill_window)
    d = np.concatenate([np.arange(-N, 0), np.arange(1, N + 1)])
    for n in range(steps):
        y = f.occupied[:, None] + d
        u = coins.uniform(seed, coins.STREAM, n, f.occupied[:, None], y)
        children = y[u < 1 / (2 * N)]
        new = T._admit(children, f.visited, kill_window)
        f = T.OccupancyField(new, np.union1d(f.visited, new), n + 1, kill_window)
    return f


@given(seeds)
def test_subordinated_visits_are_a_subset(seed):
    N = 6
    start = list(range(-10, 11, 2))
    free = _keyed_run(seed, N, start, 25)
    killed = _keyed_run(seed, N, start, 25, kill_window=(-15, 15))
    assert np.isin(killed.visited, free.visited).all()


@given(st.lists(st.integers(-200, 200), max_size=80, unique=True), st.integers(2, 64))
def test_error_term_bound(sites, N):
    f = T.OccupancyField.from_sites(sites)
    exact, bound = T.error_term_check(f, LatticeConfig(N=N), np.arange(-260, 261))
    assert np.all(exact >= -1e-15) and np.all(exact <= bound + 1e-15)


def test_rle_csv(tmp_path):
    f = T.OccupancyField.from_sites([1, 2, 3, 7, 9, 10])
    f.to_csv(tmp_path / "f.csv")
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[:4] == ["set,start,length", "occupied,1,3", "occupied,7,1", "occupied,9,2"]


# ---- good configurations ----

specs = st.builds(lambda a, w, d, N: T.GoodSpec(a, a + w, d, N),
                  st.floats(-3, 3), st.floats(0.3, 3), st.floats(0.05, 1.0), st.sampled_from([1024, 3**10, 2**20]))


@given(specs)
def test_make_good_roundtrip(spec):
    f = T.make_good(spec)
    assert T.is_good(f, spec)
    assert np.array_equal(f.occupied, f.visited)
    if f.mass:
        g = T.OccupancyField.from_sites(f.occupied[1:])
        assert not T.is_good(g, spec)


@given(specs)
def test_make_good_total_count(spec):
    f = T.make_good(spec)
    per = math.floor(spec.N**0.1 + 1e-9)
    lo, hi = spec.index_range()
    assert f.mass == per * max(hi - lo + 1, 0)
    assert abs(f.mass - (spec.b - spec.a) * spec.N**0.4) <= 2 * spec.N**0.1


def test_empty_tau_and_shift_cases():
    spec = T.GoodSpec(-1.0, 1.0, 0.5, 1024)
    assert not T.is_good(T.OccupancyField.from_sites([]), spec)
    assert T.is_good(T.OccupancyField.from_sites([]), spec, tau=math.inf)
    f = T.make_good(spec)
    shifted = T.OccupancyField.from_sites(f.occupied - 1)
    assert not T.is_good(shifted, spec)
    assert T.is_good(shifted, spec, tau=1)


def test_thin_to_good():
    spec = T.GoodSpec(-1.0, 1.0, 0.5, 1024)
    dense = np.arange(-4200, 4201)
    kept, deficits = T.thin_to_good(dense, spec)
    assert not deficits and T.is_good(kept, spec)
    sparse = T.make_good(spec).occupied[::2]
    _, deficits = T.thin_to_good(sparse, spec)
    assert deficits and all(v > 0 for v in deficits.values())


def test_goodspec_validation():
    with pytest.raises(ValueError):
        T.GoodSpec(1.0, 1.0, 0.5, 1024)
    with pytest.raises(ValueError):
        T.GoodSpec(0.0, 1.0, 0.0, 1024)
    with pytest.raises(ValueError):
        T.GoodSpec(0.0, 1.0, 0.5, 1024, coarsen=0)
