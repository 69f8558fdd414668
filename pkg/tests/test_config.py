import pytest

from avlbp.config import ConfigError, RunConfig, load_config, parse_config
from avlbp.lbp import LbpConfig


def test_defaults_round_trip_through_text():
    cfg = RunConfig()
    assert parse_config(cfg.format()) == cfg


def test_parse_with_comments_and_types():
    cfg = parse_config("""
        # comment line
        n_trees = 25   # trailing comment
        lbp_rotation_invariant = false
        probe_threshold_high = 90
        lbp_scales = 8:1, 16:2
    """)
    assert cfg.n_trees == 25 and cfg.lbp_rotation_invariant is False
    assert cfg.probe_threshold_high == 90.0 and isinstance(cfg.probe_threshold_high, float)
    assert cfg.lbp_configs() == [LbpConfig(8, 1.0, False), LbpConfig(16, 2.0, False)]


def test_unknown_and_malformed_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("not_a_key = 3\n")
    with pytest.raises(ConfigError):
        parse_config("n_trees 3\n")
    with pytest.raises(ConfigError):
        parse_config("n_trees = many\n")
    with pytest.raises(ConfigError):
        parse_config("n_trees = 1\nn_trees = 2\n")
    with pytest.raises(ConfigError):
        RunConfig(lbp_scales="8-1").lbp_configs()


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("cv_seed = 4\n")
    assert load_config(path).cv_seed == 4
