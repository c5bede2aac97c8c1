import json

import pytest
from hypothesis import given, strategies as st

from anisoperc.config import Caps, LatticeConfig, RunConfig, dump_config, load_config, parse_config


def test_edge_probabilities():
    cfg = LatticeConfig(N=64, kappa=2.0)
    assert cfg.p_h == 1 / 128
    assert cfg.p_v == pytest.approx(2.0 * 64**-0.4)
    assert LatticeConfig(N=4, kappa=100.0).p_v == 1.0
    assert LatticeConfig(N=4).p_v == 0.0


@given(st.integers(1, 10**6), st.floats(0, 1e3), st.floats(0.05, 2.0))
def test_probability_ranges(N, kappa, b):
    cfg = LatticeConfig(N=N, kappa=kappa, b=b)
    assert 0 < cfg.p_h <= 0.5
    assert 0 <= cfg.p_v <= 1


@pytest.mark.parametrize("kw", [{"N": 0}, {"N": 2, "alpha": 1.0}, {"N": 2, "b": 0}, {"N": 2, "kappa": -1},
                                {"N": 2, "p_v_override": 1.5}])
def test_invalid_configs_rejected(kw):
    with pytest.raises(ValueError):
        LatticeConfig(**kw)


def test_key_value_roundtrip(tmp_path):
    text = """
    # comment
    n = 64
    alpha = 1/5
    b = 0.4
    kappa = 2.5
    seed = 12345
    max_sites = 1000
    layer_window = 0 0
    renorm_suite = {"rows": 20}
    """
    run = parse_config(text)
    assert run.lattice == LatticeConfig(N=64, alpha=0.2, b=0.4, kappa=2.5, seed=12345)
    assert run.caps.max_sites == 1000 and run.caps.layer_window == (0, 0)
    assert run.extra["renorm_suite"] == {"rows": 20}
    p = tmp_path / "c.cfg"
    p.write_text(dump_config(run))
    assert load_config(p) == run


def test_json_config_and_missing_n():
    run = parse_config(json.dumps({"n": 8, "kappa": 1.0}))
    assert run.lattice.N == 8 and run.caps == Caps()
    with pytest.raises(ValueError):
        parse_config("kappa = 1")
    assert isinstance(run, RunConfig)
