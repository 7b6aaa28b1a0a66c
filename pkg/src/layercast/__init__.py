"""Deterministic simulator of auction-based upload-bandwidth allocation for
layered peer-to-peer streaming."""

from layercast.auction import (Allocation, AuctionLedger, Bid,
                               ConvergenceError, LayerOutcome,
                               LedgerStateError, ProtocolError, advance_layer,
                               allocate_round, run_layer_auction)
from layercast.bidder import (BidderState, LinkOffer, WaterFillResult,
                              layer_budget, water_fill)
from layercast.config import (ConfigError, ScenarioConfig, config_from_dict,
                              parse_config, parse_seed_spec, parse_sweep_spec)
from layercast.cost import (CostCurve, CostDomainError, inverse_marginal,
                            marginal_streaming_cost, streaming_cost)
from layercast.metrics import (MetricsReport, avg_streaming_cost, build_report,
                               delivery_ratio, useless_chunk_ratio)
from layercast.overlay import (LayerSpec, Link, Overlay, Peer, PriorityClass,
                               generate_overlay, subscribe_quality,
                               validate_overlay)
from layercast.simulation import (BASELINE, PROPOSED, ScenarioResult,
                                  convergence_stats, find_improving_deviation,
                                  run_baseline, run_scenario)

__version__ = "0.1.0"

__all__ = [
    "Allocation", "AuctionLedger", "BASELINE", "Bid", "BidderState",
    "ConfigError", "ConvergenceError", "CostCurve", "CostDomainError",
    "LayerOutcome", "LayerSpec", "LedgerStateError", "Link", "LinkOffer",
    "MetricsReport", "Overlay", "PROPOSED", "Peer", "PriorityClass",
    "ProtocolError", "ScenarioConfig", "ScenarioResult", "WaterFillResult",
    "advance_layer", "allocate_round", "avg_streaming_cost", "build_report",
    "config_from_dict", "convergence_stats", "delivery_ratio",
    "find_improving_deviation", "generate_overlay", "inverse_marginal",
    "layer_budget", "marginal_streaming_cost", "parse_config",
    "parse_seed_spec", "parse_sweep_spec", "run_baseline", "run_layer_auction",
    "run_scenario", "streaming_cost", "subscribe_quality",
    "useless_chunk_ratio", "validate_overlay", "water_fill",
]
