import pytest

from sgdtn.config import ConfigError, SimConfig, dump_config, parse_config_text, validate_config


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("")
    cfg = validate_config(path)
    assert cfg == SimConfig()
    resolved = (tmp_path / "empty.resolved.cfg").read_text()
    for key in SimConfig.__dataclass_fields__:
        assert f"\n{key} = " in "\n" + resolved


def test_block_bounds_error_names_both_keys():
    with pytest.raises(ConfigError) as err:
        parse_config_text("block_min = 2e6\nblock_max = 1e6\n")
    keys = {k for _, k, _ in err.value.problems}
    assert {"block_min", "block_max"} <= keys
    lines = {k: line for line, k, _ in err.value.problems}
    assert lines["block_min"] == 1 and lines["block_max"] == 2


def test_published_parameter_set_accepted():
    text = """
    # published simulation settings
    noise_power = 1e-13
    mbs_cpu_freq = 6e9
    uplink_rate = 0.5e10
    downlink_rate = 1e10
    model_tx_factor = 0.5
    arrival_lo = 80000000
    arrival_hi = 240000000
    cycles_per_bit_lo = 2000
    cycles_per_bit_hi = 4000
    x_lo = 1e6
    x_hi = 2e6
    y_lo = 5e5
    y_hi = 2e6
    carrier_freq = 1e8
    """
    cfg = parse_config_text(text)
    assert cfg.noise_power == 1e-13 and cfg.mbs_cpu_freq == 6e9 and cfg.arrival_hi == 2.4e8


def test_unknown_and_malformed_keys_reported_with_lines():
    with pytest.raises(ConfigError) as err:
        parse_config_text("v_lyapunov = 3\nbogus = 1\nn_mbs = 2.5\nnonsense\n")
    got = {(line, key) for line, key, _ in err.value.problems}
    assert (2, "bogus") in got and (3, "n_mbs") in got and (4, "nonsense") in got


def test_round_trip_dump():
    cfg = SimConfig(v_lyapunov=50.0, hidden=(8, 4), price_sign="cost")
    assert parse_config_text(dump_config(cfg)) == cfg


def test_invalid_values_rejected():
    for text in ("gamma = 1.0", "price_sign = weird", "n_channels = 0", "tx_power = -1",
                 "maml_wrap = neither", "v_lyapunov = nan"):
        with pytest.raises(ConfigError):
            parse_config_text(text)
