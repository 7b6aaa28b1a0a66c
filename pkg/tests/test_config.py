"""Config schema, defaults, and sweep axes."""

import json

import pytest

from layercast.config import (ConfigError, ScenarioConfig, config_from_dict,
                              parse_config, parse_seed_spec, parse_sweep_spec)


class TestDefaults:
    def test_default_scenario_parameters(self):
        cfg = ScenarioConfig()
        assert cfg.n_downstream == 500
        assert cfg.upload_range == (256.0, 2048.0)
        assert cfg.download_range == (256.0, 1024.0)
        assert cfg.layer_rates == (200.0, 100.0, 100.0, 100.0, 100.0, 100.0)
        assert [c.share for c in cfg.classes] == [0.10, 0.30, 0.60]
        assert [c.reference_price for c in cfg.classes] == [4, 2, 1]

    def test_empty_file_means_defaults(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{}")
        assert parse_config(path) == ScenarioConfig()


class TestSchema:
    def test_share_sum_must_be_one(self):
        data = {"classes": [
            {"id": 1, "reference_price": 3, "share": 0.5},
            {"id": 2, "reference_price": 2, "share": 0.5},
            {"id": 3, "reference_price": 1, "share": 0.5},
        ]}
        with pytest.raises(ConfigError, match="share"):
            config_from_dict(data)

    def test_negative_layer_rate_rejected(self):
        with pytest.raises(ConfigError, match="rate"):
            config_from_dict({"layers": {"count": 2, "rates": [200, -100]}})

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            config_from_dict({"n_upstrem": 10})

    def test_range_must_be_a_pair(self):
        with pytest.raises(ConfigError):
            config_from_dict({"upload_range": [100]})

    def test_prices_must_decrease_with_class_id(self):
        data = {"classes": [
            {"id": 1, "reference_price": 1, "share": 0.5},
            {"id": 2, "reference_price": 2, "share": 0.5},
        ]}
        with pytest.raises(ConfigError, match="decrease"):
            config_from_dict(data)

    def test_invalid_json_reported(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            parse_config(path)

    def test_partial_override_keeps_other_defaults(self):
        cfg = config_from_dict({"n_downstream": 100})
        assert cfg.n_downstream == 100
        assert cfg.n_upstream == ScenarioConfig().n_upstream


class TestSweeps:
    def test_upload_mid_recenters_preserving_spread(self):
        cfg = ScenarioConfig().with_upload_mid(600.0)
        lo, hi = cfg.upload_range
        assert (lo + hi) / 2 == pytest.approx(600.0, abs=0.01)
        base_lo, base_hi = ScenarioConfig().upload_range
        assert (hi - lo) / (hi + lo) == pytest.approx(
            (base_hi - base_lo) / (base_hi + base_lo), rel=1e-6)

    def test_q1_share_grows_at_the_bottom_classes_expense(self):
        cfg = ScenarioConfig().with_q1_share(0.3)
        shares = {c.id: c.share for c in cfg.classes}
        assert shares[1] == pytest.approx(0.3)
        assert shares[2] == pytest.approx(0.3)
        assert shares[3] == pytest.approx(0.4)

    def test_size_sweep_keeps_the_ratio(self):
        base = ScenarioConfig()
        small = base.with_size(100)
        assert small.n_downstream == 100
        assert small.n_upstream == round(100 * base.n_upstream / base.n_downstream)

    def test_unknown_sweep_key(self):
        with pytest.raises(ConfigError):
            ScenarioConfig().apply_sweep("volume", 11.0)


class TestSpecStrings:
    def test_single_seed(self):
        assert parse_seed_spec("7") == [7]

    def test_seed_range(self):
        assert parse_seed_spec("1..5") == [1, 2, 3, 4, 5]

    def test_empty_seed_range_rejected(self):
        with pytest.raises(ConfigError):
            parse_seed_spec("5..1")

    def test_sweep_spec(self):
        key, values = parse_sweep_spec("upload_mid=600..1400:200")
        assert key == "upload_mid"
        assert values == [600, 800, 1000, 1200, 1400]

    def test_sweep_spec_requires_full_shape(self):
        with pytest.raises(ConfigError):
            parse_sweep_spec("upload_mid=600..1400")
        with pytest.raises(ConfigError):
            parse_sweep_spec("600..1400:200")


def test_to_dict_round_trips():
    cfg = ScenarioConfig(n_upstream=12, n_downstream=30, degree=3)
    again = config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
