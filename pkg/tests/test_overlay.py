"""Overlay generation, subscription levels, and structural validation."""

import dataclasses

import pytest
from hypothesis import given, strategies as st

from layercast.config import ConfigError, ScenarioConfig
from layercast.overlay import (LayerSpec, Link, Overlay, Peer, PriorityClass,
                               generate_overlay, subscribe_quality,
                               validate_overlay)

SIX_LAYERS = LayerSpec(count=6, rates=(200.0, 100.0, 100.0, 100.0, 100.0, 100.0))


class TestSubscribeQuality:
    def test_download_covering_all_layers(self):
        assert subscribe_quality(700.0, SIX_LAYERS) == 5

    def test_download_between_base_and_first_enhancement(self):
        assert subscribe_quality(250.0, SIX_LAYERS) == 0

    def test_download_below_base_still_subscribes(self):
        assert subscribe_quality(150.0, SIX_LAYERS) == 0

    def test_exact_cumulative_boundary(self):
        assert subscribe_quality(300.0, SIX_LAYERS) == 1
        assert subscribe_quality(299.9, SIX_LAYERS) == 0

    @given(st.floats(min_value=1.0, max_value=2000.0),
           st.floats(min_value=0.0, max_value=500.0))
    def test_monotone_in_download(self, download, bump):
        assert (subscribe_quality(download + bump, SIX_LAYERS)
                >= subscribe_quality(download, SIX_LAYERS))


class TestGeneration:
    def test_micro_overlay_has_forced_link_count(self):
        cfg = ScenarioConfig(n_upstream=2, n_downstream=3, degree=2)
        overlay = generate_overlay(cfg, seed=7)
        assert len(overlay.links) == 6
        ups = {p.id for p in overlay.upstreams()}
        downs = {p.id for p in overlay.downstreams()}
        for link in overlay.links:
            assert link.upstream_id in ups
            assert link.downstream_id in downs

    def test_same_seed_is_byte_identical(self):
        cfg = ScenarioConfig(n_upstream=5, n_downstream=8, degree=3)
        a = generate_overlay(cfg, seed=42)
        b = generate_overlay(cfg, seed=42)
        assert a.to_json() == b.to_json()

    def test_different_seeds_differ(self):
        cfg = ScenarioConfig(n_upstream=5, n_downstream=8, degree=3)
        assert generate_overlay(cfg, 1).to_json() != generate_overlay(cfg, 2).to_json()

    def test_default_scale_capacities_in_range(self):
        overlay = generate_overlay(ScenarioConfig(), seed=3)
        lo, hi = ScenarioConfig().upload_range
        for p in overlay.upstreams():
            assert lo <= p.upload <= hi
        dlo, dhi = ScenarioConfig().download_range
        for p in overlay.downstreams():
            assert dlo <= p.download <= dhi

    def test_link_bandwidth_clamped_to_endpoints(self):
        overlay = generate_overlay(ScenarioConfig(), seed=11)
        by_id = {p.id: p for p in overlay.peers}
        for link in overlay.links:
            up = by_id[link.upstream_id]
            down = by_id[link.downstream_id]
            assert link.available_bandwidth <= up.upload + 0.05
            assert link.available_bandwidth <= down.download + 0.05

    def test_class_counts_match_shares_within_one(self):
        cfg = ScenarioConfig(n_downstream=500)
        overlay = generate_overlay(cfg, seed=5)
        counts = {1: 0, 2: 0, 3: 0}
        for p in overlay.downstreams():
            counts[p.class_id] += 1
        for cls in cfg.classes:
            assert abs(counts[cls.id] - cls.share * 500) <= 1

    def test_generated_overlays_validate_clean(self):
        for seed in (0, 1, 2):
            overlay = generate_overlay(
                ScenarioConfig(n_upstream=10, n_downstream=20, degree=4), seed)
            assert validate_overlay(overlay) == []

    def test_degree_beyond_upstream_count_rejected(self):
        cfg = ScenarioConfig(n_upstream=3, n_downstream=5, degree=4)
        with pytest.raises(ConfigError):
            generate_overlay(cfg, seed=1)


def _tiny_overlay():
    classes = (PriorityClass(id=1, reference_price=2, population_share=1.0),)
    peers = [
        Peer(id="u0", kind="upstream", upload=500.0),
        Peer(id="d0", kind="downstream", download=400.0, class_id=1,
             subscribed_level=1),
    ]
    links = [Link(downstream_id="d0", upstream_id="u0", available_bandwidth=400.0)]
    spec = LayerSpec(count=2, rates=(200.0, 100.0))
    return Overlay(peers=peers, links=links, layer_spec=spec, classes=classes,
                   rng_seed=0)


class TestValidation:
    def test_well_formed_is_clean(self):
        assert validate_overlay(_tiny_overlay()) == []

    def test_saturated_link_is_flagged(self):
        overlay = _tiny_overlay()
        bad = dataclasses.replace(overlay.links[0], allocated=400.0)
        overlay = Overlay(peers=overlay.peers, links=[bad],
                          layer_spec=overlay.layer_spec,
                          classes=overlay.classes, rng_seed=0)
        problems = validate_overlay(overlay)
        assert len(problems) == 1
        assert "allocated" in problems[0]

    def test_isolated_downstream_is_flagged(self):
        overlay = _tiny_overlay()
        lonely = Overlay(peers=overlay.peers, links=[],
                         layer_spec=overlay.layer_spec,
                         classes=overlay.classes, rng_seed=0)
        problems = validate_overlay(lonely)
        assert any("no upstream link" in p for p in problems)

    def test_nonincreasing_reference_prices_flagged(self):
        overlay = _tiny_overlay()
        broken = Overlay(
            peers=overlay.peers, links=overlay.links,
            layer_spec=overlay.layer_spec,
            classes=(PriorityClass(1, 2, 0.5), PriorityClass(2, 2, 0.5)),
            rng_seed=0)
        problems = validate_overlay(broken)
        assert any("strictly decrease" in p for p in problems)


def test_overlay_json_round_trip():
    overlay = generate_overlay(
        ScenarioConfig(n_upstream=4, n_downstream=6, degree=2), seed=9)
    again = Overlay.from_json(overlay.to_json())
    assert again.to_json() == overlay.to_json()


def test_layer_spec_rejects_mismatched_rates():
    with pytest.raises(ValueError):
        LayerSpec(count=3, rates=(100.0, 100.0))
    with pytest.raises(ValueError):
        LayerSpec(count=1, rates=(0.0,))


def test_cumulative_rates():
    assert SIX_LAYERS.cumulative(0) == 200.0
    assert SIX_LAYERS.cumulative(5) == 700.0
