"""LLM trading agent with layered decaying memory, episode runner and metrics."""

from .agent import Agent, AgentProfile
from .backbone import Action, CompletionRequest, MockBackbone, RemoteBackbone, TradeDecision, parse_decision
from .embedding import HashEmbedder, RemoteEmbedder, cosine
from .market_data import (
    Environment,
    MarketObservation,
    Phase,
    build_environment,
    load_filings,
    load_news_feed,
    load_price_series,
    observation_at,
)
from .memory import DEFAULT_LAYER_PARAMS, Layer, LayerParams, MemoryStore, Source
from .metrics import Metrics, buy_and_hold, compute_metrics
from .simulation import RunReport, SimulationConfig, run_episode, run_experiment, run_test, run_warmup

__version__ = "0.1.0"

__all__ = [
    "Action",
    "Agent",
    "AgentProfile",
    "CompletionRequest",
    "DEFAULT_LAYER_PARAMS",
    "Environment",
    "HashEmbedder",
    "Layer",
    "LayerParams",
    "MarketObservation",
    "MemoryStore",
    "Metrics",
    "MockBackbone",
    "Phase",
    "RemoteBackbone",
    "RemoteEmbedder",
    "RunReport",
    "SimulationConfig",
    "Source",
    "TradeDecision",
    "build_environment",
    "buy_and_hold",
    "compute_metrics",
    "cosine",
    "load_filings",
    "load_news_feed",
    "load_price_series",
    "observation_at",
    "parse_decision",
    "run_episode",
    "run_experiment",
    "run_test",
    "run_warmup",
]
