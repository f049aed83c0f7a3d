"""Episode runner: warm-up, test phase, metrics and multi-epoch selection."""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from typing import Any, Callable, Sequence

from .agent import Agent, AgentProfile
from .backbone import FALLBACK_FORMAT, FALLBACK_PROVIDER, Action, MockBackbone, Transcript
from .embedding import HashEmbedder
from .errors import ConfigurationError, ExperimentError
from .market_data import Environment, MarketObservation, Phase, assert_no_leakage, log_return, observation_at
from .memory import MemoryStore
from .metrics import Metrics, compute_metrics

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimulationConfig:
    k_momentum: int = 3
    k_top: int = 5
    epochs: int = 5
    discount: float = 1.0
    seed: int = 0
    temperature: float = 0.6
    # Hold keeps yesterday's exposure instead of going flat; not the default
    hold_keeps_position: bool = False
    reflection_every: int = 5
    reflection_pnl_threshold: float = 0.05
    risk_free_daily: float = 0.0
    annualize_sharpe: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.discount <= 1.0:
            raise ConfigurationError("discount must lie in (0, 1]")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.k_momentum < 1 or self.k_top < 1:
            raise ConfigurationError("k_momentum and k_top must be positive")
        if self.reflection_every < 1:
            raise ConfigurationError("reflection_every must be positive")


@dataclass(frozen=True)
class DailyRecord:
    date: date
    action: Action
    position: int
    log_return_asset: float
    strategy_return: float
    pnl_cumulative: float
    retrieved_ids: dict[str, tuple[int, ...]] = field(default_factory=dict)
    supporting_ids: tuple[int, ...] = ()
    rationale: str = ""

    def as_dict(self) -> dict[str, Any]:
        return {
            "date": self.date.isoformat(),
            "action": self.action.value,
            "position": self.position,
            "log_return_asset": self.log_return_asset,
            "strategy_return": self.strategy_return,
            "pnl_cumulative": self.pnl_cumulative,
            "retrieved_ids": {k: list(v) for k, v in self.retrieved_ids.items()},
            "supporting_ids": list(self.supporting_ids),
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DailyRecord":
        return cls(
            date=date.fromisoformat(data["date"]),
            action=Action(data["action"]),
            position=int(data["position"]),
            log_return_asset=float(data["log_return_asset"]),
            strategy_return=float(data["strategy_return"]),
            pnl_cumulative=float(data["pnl_cumulative"]),
            retrieved_ids={k: tuple(v) for k, v in data.get("retrieved_ids", {}).items()},
            supporting_ids=tuple(data.get("supporting_ids", ())),
            rationale=data.get("rationale", ""),
        )


@dataclass(frozen=True)
class WarmupSummary:
    days: int
    reflections: int
    events_stored: int
    purged: int


@dataclass
class RunReport:
    config: dict[str, Any]
    records: list[DailyRecord]
    metrics: Metrics
    final_decision: dict[str, Any] | None = None
    warmup: WarmupSummary | None = None
    epoch: int = 0
    seed: int = 0
    extended_reflections: int = 0
    fallbacks: int = 0
    transcript_path: str | None = None

    @property
    def strategy_returns(self) -> list[float]:
        return [r.strategy_return for r in self.records]

    def as_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "epoch": self.epoch,
            "seed": self.seed,
            "metrics": self.metrics.as_dict(),
            "warmup": dataclasses.asdict(self.warmup) if self.warmup else None,
            "extended_reflections": self.extended_reflections,
            "fallbacks": self.fallbacks,
            "final_decision": self.final_decision,
            "transcript_path": self.transcript_path,
            "records": [r.as_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunReport":
        warm = data.get("warmup")
        return cls(
            config=data["config"],
            records=[DailyRecord.from_dict(r) for r in data["records"]],
            metrics=Metrics.from_dict(data["metrics"]),
            final_decision=data.get("final_decision"),
            warmup=WarmupSummary(**warm) if warm else None,
            epoch=data.get("epoch", 0),
            seed=data.get("seed", 0),
            extended_reflections=data.get("extended_reflections", 0),
            fallbacks=data.get("fallbacks", 0),
            transcript_path=data.get("transcript_path"),
        )


def run_warmup(env: Environment, agent: Agent) -> WarmupSummary:
    """Populate memory from the warm-up window.

    Every warm-up day is ingested; every day except the last also gets an
    explained, direction-fixed reflection that is stored in deep memory.
    """
    days = env.trading_days(Phase.WARMUP)
    if len(days) < 2:
        raise ConfigurationError(f"warm-up range {env.warmup_range} needs at least 2 trading days")
    stored = reflections = purged = 0
    for i, day in enumerate(days):
        if i + 1 < len(days):
            obs = observation_at(env, day, Phase.WARMUP)
        else:
            # last warm-up day: nothing to explain, only ingest
            obs = MarketObservation(day, Phase.WARMUP, env.price(day), 0.0, env.news_on(day), env.filings_on(day))
        today = agent.ingest(obs)
        stored += len(today)
        if i + 1 < len(days):
            outcome = agent.decide(obs, today)
            agent.store_reflection(outcome.reflection, outcome.decision.action)
            reflections += 1
        purged += len(agent.store.purge(day))
    return WarmupSummary(days=len(days), reflections=reflections, events_stored=stored, purged=purged)


def _position(action: Action, previous: int, hold_keeps: bool) -> int:
    if action is Action.HOLD and hold_keeps:
        return previous
    return action.position


def run_test(env: Environment, agent: Agent, config: SimulationConfig) -> RunReport:
    """Trade the test window one day at a time.

    Day ``t``'s action is realized against ``ln(p[t+1] / p[t])`` at the start
    of day ``t+1``; the final test day is decided but never traded.
    """
    days = env.trading_days(Phase.TEST)
    if not days:
        raise ConfigurationError(f"test range {env.test_range} has no trading days")
    records: list[DailyRecord] = []
    pending: tuple[date, Any] | None = None
    pnl = 0.0
    position = 0
    extended = fallbacks = 0
    final: dict[str, Any] | None = None

    for i, day in enumerate(days):
        if pending is not None:
            prev_day, outcome = pending
            position = _position(outcome.decision.action, position, config.hold_keeps_position)
            asset_ret = log_return(env, prev_day, day)
            strat_ret = asset_ret * position
            pnl += strat_ret
            records.append(
                DailyRecord(
                    date=prev_day,
                    action=outcome.decision.action,
                    position=position,
                    log_return_asset=asset_ret,
                    strategy_return=strat_ret,
                    pnl_cumulative=pnl,
                    retrieved_ids={layer.value: ids for layer, ids in outcome.retrieved.items()},
                    supporting_ids=outcome.decision.supporting_ids,
                    rationale=outcome.decision.rationale,
                )
            )
            due = len(records) % config.reflection_every == 0
            if due or abs(strat_ret) > config.reflection_pnl_threshold:
                window = records[-config.reflection_every:]
                if agent.extended_reflect(window, day) is not None:
                    extended += 1

        obs = observation_at(env, day, Phase.TEST, config.k_momentum)
        assert_no_leakage(obs)
        today = agent.ingest(obs)
        outcome = agent.decide(obs, today, running_pnl=pnl, position=position)
        if outcome.decision.rationale in (FALLBACK_FORMAT, FALLBACK_PROVIDER):
            fallbacks += 1
        agent.store.purge(day)
        if i + 1 < len(days):
            pending = (day, outcome)
        else:
            final = {
                "date": day.isoformat(),
                "action": outcome.decision.action.value,
                "supporting_ids": list(outcome.decision.supporting_ids),
            }

    returns = [r.strategy_return for r in records]
    return RunReport(
        config=dataclasses.asdict(config),
        records=records,
        metrics=compute_metrics(
            returns, risk_free_daily=config.risk_free_daily, annualize_sharpe=config.annualize_sharpe
        ),
        final_decision=final,
        extended_reflections=extended,
        fallbacks=fallbacks,
    )


def discounted_return(report: RunReport | Sequence[float], alpha: float) -> float:
    """Sum of ``alpha**t * r_t`` over the strategy returns, ``t`` from 0."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    returns = report.strategy_returns if isinstance(report, RunReport) else list(report)
    return math.fsum(alpha**t * r for t, r in enumerate(returns))


# -- experiments ------------------------------------------------------------------

AgentFactory = Callable[[int, int, Transcript | None], Agent]


def default_agent_factory(env: Environment, config: SimulationConfig) -> AgentFactory:
    """Mock backbone + hashed embeddings; the offline default."""

    def make(epoch: int, seed: int, transcript: Transcript | None) -> Agent:
        store = MemoryStore(HashEmbedder(seed=0), seed=seed)
        return Agent(
            MockBackbone(transcript=transcript),
            store,
            AgentProfile(symbol=env.symbol),
            k_top=config.k_top,
            temperature=config.temperature,
            seed=seed,
            transcript=transcript,
            tags={"epoch": epoch},
        )

    return make


def run_episode(
    env: Environment,
    config: SimulationConfig,
    agent: Agent,
    *,
    epoch: int = 0,
    seed: int | None = None,
) -> RunReport:
    warm = run_warmup(env, agent)
    report = run_test(env, agent, config)
    report.warmup = warm
    report.epoch = epoch
    report.seed = config.seed if seed is None else seed
    return report


@dataclass
class ExperimentResult:
    selected: RunReport
    selected_epoch: int
    reports: list[RunReport]
    note: str
    transcripts: list[Transcript] = field(default_factory=list)


def _median_epoch(values: Sequence[float]) -> tuple[int, bool]:
    """Lower-middle median; among equal values the smallest epoch wins.

    Returns the epoch and whether other epochs shared that value. NaN sorts last.
    """
    order = sorted(range(len(values)), key=lambda i: (math.isnan(values[i]), values[i] if not math.isnan(values[i]) else 0.0, i))
    target = values[order[(len(values) - 1) // 2]]

    def same(v: float) -> bool:
        return v == target or (math.isnan(v) and math.isnan(target))

    tied = [i for i in range(len(values)) if same(values[i])]
    return tied[0], len(tied) > 1


def select_epoch(metrics: Sequence[Metrics]) -> tuple[int, str]:
    """Pick the reported trajectory from a set of epochs.

    If the per-metric medians of CR, SR, AV and MDD all fall on one epoch it
    is chosen; otherwise the epoch holding the median SR.
    """
    if not metrics:
        raise ValueError("no epochs to select from")
    picks = {}
    ties = False
    for name in ("cr_percent", "sr", "av_percent", "mdd_percent"):
        epoch, tied = _median_epoch([getattr(m, name) for m in metrics])
        picks[name] = epoch
        ties = ties or (tied and name == "sr")
    sr_epoch = picks["sr"]
    if ties:
        return sr_epoch, f"tie-break epoch {sr_epoch}"
    if len(set(picks.values())) == 1:
        return sr_epoch, f"all medians from epoch {sr_epoch}"
    return sr_epoch, f"median SR epoch {sr_epoch}"


def run_experiment(
    env: Environment,
    config: SimulationConfig,
    agent_factory: AgentFactory | None = None,
    *,
    jobs: int = 1,
    keep_transcripts: bool = True,
) -> ExperimentResult:
    """Run ``config.epochs`` independent episodes with seeds ``seed + i``."""
    factory = agent_factory or default_agent_factory(env, config)
    transcripts = [Transcript() if keep_transcripts else None for _ in range(config.epochs)]

    def one(epoch: int) -> RunReport:
        seed = config.seed + epoch
        try:
            agent = factory(epoch, seed, transcripts[epoch])
            return run_episode(env, config, agent, epoch=epoch, seed=seed)
        except Exception as exc:
            raise ExperimentError(epoch, exc) from exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(one, range(config.epochs)))
    else:
        reports = [one(e) for e in range(config.epochs)]
    chosen, note = select_epoch([r.metrics for r in reports])
    log.info("selected epoch %d (%s)", chosen, note)
    return ExperimentResult(
        selected=reports[chosen],
        selected_epoch=chosen,
        reports=reports,
        note=note,
        transcripts=[t for t in transcripts if t is not None],
    )

