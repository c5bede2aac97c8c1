import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from anisoperc import percolation as P
from anisoperc.config import Caps, LatticeConfig
from anisoperc.experiments import binomial_chisquare


@given(st.integers(1, 16), st.integers(-100, 100), st.integers(-5, 5), st.integers(1, 16), st.booleans(),
       st.integers(0, 2**32))
def test_orientation_symmetry(N, x, layer, d, vertical, seed):
    cfg = LatticeConfig(N=N, kappa=0.7, seed=seed)
    if vertical:
        u, v = (x, layer), (x, layer + 1)
    else:
        u, v = (x, layer), (x + min(d, N), layer)
    e1, e2 = P.EdgeId.between(u, v, N), P.EdgeId.between(v, u, N)
    assert e1 == e2
    assert P.edge_is_open(cfg, e1) == P.edge_is_open(cfg, e2) == P.edge_is_open(cfg, e1)


def test_invalid_edges_rejected():
    with pytest.raises(ValueError):
        P.EdgeId.between((0, 0), (3, 0), 2)
    with pytest.raises(ValueError):
        P.EdgeId.between((0, 0), (0, 2), 2)
    with pytest.raises(ValueError):
        P.edge_is_open(LatticeConfig(N=2), P.EdgeId("horizontal", (0, 0), (5, 0)))


def test_kappa_zero_closes_vertical_edges():
    cfg = LatticeConfig(N=4, kappa=0.0, seed=9)
    assert not any(P.edge_is_open(cfg, P.EdgeId.between((x, 0), (x, 1), 4)) for x in range(-200, 200))


def test_open_fraction_at_n1():
    # 10^6 horizontal edges of N = 1 across seeds: p_h = 1/2
    u = P.horizontal_uniform(np.arange(10**6, dtype=np.uint64), 0, 0, 1)
    assert abs(np.mean(u < 0.5) - 0.5) < 0.002


def test_degree_law_chisquare():
    cfg = LatticeConfig(N=8)
    seeds = np.arange(10**5, dtype=np.uint64) * 7919 + 1
    deg = P.open_horizontal_degree(cfg, np.zeros(seeds.size, dtype=np.int64), 0, seeds)
    _, pv, _ = binomial_chisquare(deg, 16, 1 / 16)
    assert pv > 0.01


def test_isolated_origin():
    N = 2
    for seed in range(1000):
        cfg = LatticeConfig(N=N, kappa=0.5, seed=seed)
        nb = [P.EdgeId.between((0, 0), (d, 0), N) for d in (-2, -1, 1, 2)]
        nb += [P.EdgeId.between((0, 0), (0, s), N) for s in (-1, 1)]
        if not any(P.edge_is_open(cfg, e) for e in nb):
            break
    cl = P.explore_cluster(cfg)
    assert cl.size == 1 and cl.sites == {(0, 0)} and not cl.truncated


def test_kappa_zero_single_layer():
    cl = P.explore_cluster(LatticeConfig(N=8, kappa=0.0, seed=3))
    assert set(cl.layer.tolist()) == {0}


def _box_union_find(cfg, xs, layers):
    sites = [(x, i) for i in layers for x in xs]
    idx = {s: k for k, s in enumerate(sites)}
    rows, cols = [], []
    for (x, i) in sites:
        for d in range(1, cfg.N + 1):
            if (x + d, i) in idx and P.edge_is_open(cfg, P.EdgeId.between((x, i), (x + d, i), cfg.N)):
                rows.append(idx[(x, i)]); cols.append(idx[(x + d, i)])
        if (x, i + 1) in idx and P.edge_is_open(cfg, P.EdgeId.between((x, i), (x, i + 1), cfg.N)):
            rows.append(idx[(x, i)]); cols.append(idx[(x, i + 1)])
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(sites), len(sites)))
    _, lab = connected_components(g, directed=False)
    return {s for s in sites if lab[idx[s]] == lab[idx[(0, 0)]]}


@pytest.mark.parametrize("seed", range(25))
def test_cluster_matches_union_find_on_box(seed):
    cfg = LatticeConfig(N=2, kappa=0.6 * 2**0.4, seed=seed, p_h_override=0.45)
    xs, layers = range(-4, 5), range(0, 3)
    cl, _ = P._explore(cfg, [(0, 0)], Caps(layer_window=(0, 2)), x_bounds=(-4, 4))
    assert cl.sites == _box_union_find(cfg, xs, layers)


@pytest.mark.parametrize("seed", range(10))
def test_generations_are_bfs_depths(seed):
    cfg = LatticeConfig(N=3, kappa=0.8, seed=seed, p_h_override=0.3)
    cl = P.explore_cluster(cfg, caps=Caps(max_sites=5000))
    gmap = cl.generation_map()
    assert gmap[(0, 0)] == 0
    for (x, i), g in gmap.items():
        if g == 0:
            continue
        nbrs = [(x + d, i) for d in range(-3, 4) if d] + [(x, i - 1), (x, i + 1)]
        parents = [v for v in nbrs if gmap.get(v) == g - 1 and P.edge_is_open(cfg, P.EdgeId.between((x, i), v, 3))]
        assert parents
        assert all(gmap.get(v, g + 1) >= g - 1 for v in nbrs if v in gmap
                   and P.edge_is_open(cfg, P.EdgeId.between((x, i), v, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_cluster_consistency_from_any_member(seed):
    cfg = LatticeConfig(N=8, kappa=0.5, seed=seed)
    cl = P.explore_cluster(cfg, caps=Caps(max_sites=20000))
    assert not cl.truncated
    other = sorted(cl.sites)[len(cl.sites) // 2]
    assert P.explore_cluster(cfg, origin=other, caps=Caps(max_sites=20000)).sites == cl.sites


@pytest.mark.parametrize("seed", range(5))
def test_cluster_monotone_in_kappa(seed):
    prev = set()
    for kappa in (0.0, 0.3, 0.6, 0.9):
        cl = P.explore_cluster(LatticeConfig(N=4, kappa=kappa, seed=seed),
                               caps=Caps(max_sites=50000, layer_window=(-3, 3)))
        assert not cl.truncated
        assert prev <= cl.sites
        prev = cl.sites


def test_caps_truncate_and_flag():
    cfg = LatticeConfig(N=4, p_h_override=1.0, p_v_override=1.0)
    cl = P.explore_cluster(cfg, caps=Caps(max_sites=50))
    assert cl.truncated and cl.size == 50
    cl = P.explore_cluster(cfg, caps=Caps(max_generation=2, layer_window=(0, 0)))
    assert cl.truncated and cl.generation.max() == 2


def test_cluster_csv(tmp_path):
    cl = P.explore_cluster(LatticeConfig(N=8, seed=4), caps=Caps(layer_window=(0, 0)))
    p = P.write_cluster_csv(cl, tmp_path / "c.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "x,layer,generation" and len(lines) == cl.size + 1


def test_default_initial_sites():
    for N in (1, 32, 100, 512):
        cfg = LatticeConfig(N=N)
        s = P.default_initial_sites(cfg)
        R = math.floor(N**1.2 + 1e-9)
        assert s.size == 2 * math.floor(N**0.4 + 1e-9)
        assert s.min() >= -R and s.max() <= R


def test_crossing_trivial_cases():
    full = LatticeConfig(N=4, p_h_override=1.0, p_v_override=1.0)
    for method in ("threshold", "quenched"):
        assert P.crossing_probability(full, 8, 3, 5, method=method).estimate == 1.0
        assert P.crossing_probability(LatticeConfig(N=4, kappa=0.0), 8, 3, 5, method=method).estimate == 0.0
    with pytest.raises(ValueError):
        P.crossing_probability(full, 8, 3, 0)
    with pytest.raises(ValueError):
        P.crossing_probability(full, 7, 3, 1)


def test_crossing_monotone_in_kappa_n64():
    W, M = 3 * math.floor(64**1.2), math.ceil(2 * 64**0.4)
    est = [P.crossing_probability(LatticeConfig(N=64, kappa=k, seed=1), W, M, 60).estimate
           for k in (0.1, 1.0, 10.0)]
    assert est[0] <= est[1] <= est[2]


def test_threshold_and_quenched_methods_agree():
    # the annealed threshold search and the fully keyed table estimate the same probability
    cfg = LatticeConfig(N=8, kappa=0.55, seed=2)
    W, M = 3 * math.floor(8**1.2), math.ceil(2 * 8**0.4)
    a = P.crossing_probability(cfg, W, M, 400, method="threshold")
    b = P.crossing_probability(cfg, W, M, 400, method="quenched")
    assert 0.05 < a.estimate < 0.95
    assert abs(a.estimate - b.estimate) <= 4 * math.hypot(a.stderr, b.stderr)
