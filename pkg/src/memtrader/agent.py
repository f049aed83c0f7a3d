"""Per-day decision procedure: profile, perception, working memory, action."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from datetime import date
from enum import Enum
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Mapping, Sequence

from .backbone import (
    Action,
    Backbone,
    CompletionRequest,
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    FALLBACK_FORMAT,
    Transcript,
    TradeDecision,
    decide_with_retries,
    parse_decision,
)
from .errors import FormatError, ProviderError
from .market_data import FilingSummary, FormType, MarketObservation, NewsItem, Phase
from .memory import Layer, MemoryEvent, MemoryStore, Source

log = logging.getLogger(__name__)

TEMPLATE_NAMES = (
    "profile",
    "summarize",
    "observe_warmup",
    "observe_test",
    "reflect_warmup",
    "reflect_test",
    "extended_reflect",
    "schema",
)
DEFAULT_SUMMARY_THRESHOLD = 1200
DEFAULT_SUMMARY_WORDS = 1000
DEFAULT_ROLE = "experienced single-asset trader"
DEFAULT_BACKGROUND = "No additional background was supplied for this asset."


class RiskDisposition(str, Enum):
    SEEKING = "seeking"
    AVERSE = "averse"

    @property
    def label(self) -> str:
        return f"risk-{self.value}"


class ReflectionKind(str, Enum):
    IMMEDIATE = "immediate"
    EXTENDED = "extended"


@dataclass(frozen=True)
class AgentProfile:
    symbol: str
    role_text: str = DEFAULT_ROLE
    background_text: str = DEFAULT_BACKGROUND
    risk_disposition: RiskDisposition = RiskDisposition.SEEKING


@dataclass(frozen=True)
class ReflectionEvent:
    date: date
    text: str
    kind: ReflectionKind
    memory_id: int | None = None


@dataclass(frozen=True)
class DecisionOutcome:
    """Everything one decision step produced, including the prompt manifest."""

    decision: TradeDecision
    reflection: ReflectionEvent
    retrieved: Mapping[Layer, tuple[int, ...]]
    presented_ids: tuple[int, ...]
    query: str
    promoted: tuple[tuple[int, Layer, Layer], ...] = ()


def update_risk_disposition(profile: AgentProfile, momentum: float) -> AgentProfile:
    if not math.isfinite(momentum):
        raise ValueError("momentum must be finite")
    if momentum > 0:
        return dataclasses.replace(profile, risk_disposition=RiskDisposition.SEEKING)
    if momentum < 0:
        return dataclasses.replace(profile, risk_disposition=RiskDisposition.AVERSE)
    return profile


class PromptTemplates:
    """``string.Template`` files, loaded from a directory or the packaged defaults."""

    def __init__(self, directory: str | Path | None = None):
        self.templates: dict[str, Template] = {}
        for name in TEMPLATE_NAMES:
            if directory is not None and (Path(directory) / f"{name}.txt").exists():
                text = (Path(directory) / f"{name}.txt").read_text(encoding="utf-8")
            else:
                text = resources.files("memtrader").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")
            self.templates[name] = Template(text)

    def render(self, name: str, **fields: Any) -> str:
        return self.templates[name].substitute(**fields).strip()


def _one_line(text: str) -> str:
    return " ".join(text.split())


def _label(event: MemoryEvent) -> str:
    kind = {
        Source.NEWS: "News",
        Source.FILING_10Q: "Form 10-Q",
        Source.FILING_10K: "Form 10-K",
        Source.REFLECTION: "Self-reflection",
    }[event.source]
    return f"[{kind} (ID: {event.id})] {_one_line(event.text)}"


def _block(lines: Sequence[str]) -> str:
    return "\n".join(lines) if lines else "(none)"


def _direction(diff: float) -> Action:
    if diff > 0:
        return Action.BUY
    if diff < 0:
        return Action.SELL
    return Action.HOLD


class Agent:
    """One trading agent bound to one memory store for one episode."""

    def __init__(
        self,
        backbone: Backbone,
        store: MemoryStore,
        profile: AgentProfile,
        *,
        templates: PromptTemplates | None = None,
        k_top: int = 5,
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
        seed: int | None = None,
        summary_threshold: int = DEFAULT_SUMMARY_THRESHOLD,
        summary_words: int = DEFAULT_SUMMARY_WORDS,
        transcript: Transcript | None = None,
        tags: Mapping[str, Any] | None = None,
    ):
        self.backbone = backbone
        self.store = store
        self.profile = profile
        self.templates = templates or PromptTemplates()
        self.k_top = k_top
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.seed = seed
        self.summary_threshold = summary_threshold
        self.summary_words = summary_words
        self.transcript = transcript
        self.tags = dict(tags or {})
        self.latest_extended: ReflectionEvent | None = None
        self.summary_fallbacks = 0

    # -- plumbing ---------------------------------------------------------------

    def _request(self, user_prompt: str, **tags: Any) -> CompletionRequest:
        system = self.templates.render(
            "profile",
            symbol=self.profile.symbol,
            disposition=self.profile.risk_disposition.label,
            background=self.profile.background_text,
        )
        return CompletionRequest(
            system,
            user_prompt,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            seed=self.seed,
            tags={**self.tags, **tags},
        )

    def _note(self, **entry: Any) -> None:
        if self.transcript is not None:
            self.transcript.record(**self.tags, **entry)

    # -- working memory ---------------------------------------------------------

    def summarize_and_store(self, item: NewsItem | FilingSummary, day: date) -> MemoryEvent:
        """Write one news item or filing into long-term memory.

        Short news is stored verbatim with its sentiment tag; long news and all
        filings go through the backbone first.
        """
        if isinstance(item, NewsItem):
            body, kind = item.text, "news"
            source = Source.NEWS
            suffix = f" The sentiment is {{{item.sentiment.value}}}."
            meta = {"origin_id": item.id, "sentiment": item.sentiment.value}
        else:
            body, kind = item.summary, f"Form {item.form_type.value}"
            source = Source.FILING_10K if item.form_type is FormType.K10 else Source.FILING_10Q
            suffix = ""
            meta = {"origin_id": item.id, "form_type": item.form_type.value}
        if not body or not body.strip():
            raise ValueError(f"{kind} item {item.id!r} has empty text")

        text = body.strip()
        if source is not Source.NEWS or len(text) >= self.summary_threshold:
            prompt = self.templates.render(
                "summarize",
                words=self.summary_words,
                symbol=self.profile.symbol,
                kind=kind,
                date=day.isoformat(),
                text=text,
            )
            try:
                summary = self.backbone.complete(self._request(prompt, task="summarize", date=day.isoformat()))
                if not summary.strip():
                    raise ProviderError("empty summary")
                text = summary.strip()
            except ProviderError as exc:
                log.warning("summary of %s %s failed, storing truncated original: %s", kind, item.id, exc)
                text = text[: self.summary_threshold]
                meta["summary_fallback"] = True
                self.summary_fallbacks += 1
        return self.store.insert(text + suffix, source, day, meta=meta)

    def ingest(self, obs: MarketObservation) -> list[MemoryEvent]:
        return [self.summarize_and_store(item, obs.date) for item in (*obs.news, *obs.filings)]

    # -- action -----------------------------------------------------------------

    def query_text(self, obs: MarketObservation) -> str:
        return (
            f"{self.profile.role_text}, currently {self.profile.risk_disposition.label}. "
            f"Trading inquiry: should {self.profile.symbol} be bought, sold or held on {obs.date.isoformat()}?"
        )

    def _observation_text(self, obs: MarketObservation) -> str:
        if obs.phase is Phase.WARMUP:
            return self.templates.render(
                "observe_warmup",
                symbol=self.profile.symbol,
                date=obs.date.isoformat(),
                price=f"{obs.adjusted_close:.2f}",
                momentum=f"{obs.momentum:.2f}",
            )
        return self.templates.render(
            "observe_test",
            symbol=self.profile.symbol,
            date=obs.date.isoformat(),
            price=f"{obs.adjusted_close:.2f}",
            k=obs.k,
            momentum=f"{obs.momentum * 100:.4f}",
        )

    def decide(
        self,
        obs: MarketObservation,
        today: Sequence[MemoryEvent] = (),
        *,
        running_pnl: float = 0.0,
        position: int = 0,
    ) -> DecisionOutcome:
        """Run one immediate-reflection step for ``obs.date``.

        ``today`` holds the memory events ingested for this date; they are
        listed separately in the prompt. In warm-up the action is fixed by the
        sign of the next-day price change and the backbone only explains it.
        """
        self.profile = update_risk_disposition(self.profile, obs.momentum)
        query = self.query_text(obs)
        retrieved = self.store.retrieve_top_k(self.store.embedder.embed(query), obs.date, self.k_top)
        today_ids = {e.id for e in today}
        sections = {
            layer: [_label(e) for e, _ in retrieved[layer] if e.id not in today_ids] for layer in Layer
        }
        presented = [e.id for layer in Layer for e, _ in retrieved[layer]]
        presented += [e.id for e in today if e.id not in presented]
        reflection = self.latest_extended.text if self.latest_extended else "(none)"
        common = dict(
            observation=self._observation_text(obs),
            shallow=_block(sections[Layer.SHALLOW]),
            intermediate=_block(sections[Layer.INTERMEDIATE]),
            deep=_block(sections[Layer.DEEP]),
            reflection=_one_line(reflection),
            today=_block([_label(e) for e in today]),
            schema=self.templates.render("schema"),
            symbol=self.profile.symbol,
            date=obs.date.isoformat(),
        )
        tags = {"date": obs.date.isoformat(), "phase": obs.phase.value}

        if obs.phase is Phase.WARMUP:
            action = _direction(obs.momentum)
            prompt = self.templates.render(
                "reflect_warmup",
                direction={Action.BUY: "up", Action.SELL: "down", Action.HOLD: "nowhere"}[action],
                action=action.value,
                **common,
            )
            request = self._request(prompt, task="explain", **tags)
            try:
                explained = parse_decision(self.backbone.complete(request), presented)
                decision = TradeDecision(action, explained.rationale, explained.supporting_ids, explained.dropped_ids)
            except (FormatError, ProviderError) as exc:
                log.warning("warm-up explanation for %s unusable: %s", obs.date, exc)
                decision = TradeDecision(action, FALLBACK_FORMAT)
        else:
            prompt = self.templates.render(
                "reflect_test",
                position={1: "long", 0: "flat", -1: "short"}[position],
                pnl=f"{running_pnl * 100:.4f}",
                **common,
            )
            decision = decide_with_retries(self.backbone, self._request(prompt, task="decide", **tags), presented)

        report = self.store.register_access(decision.supporting_ids, obs.date)
        manifest = {layer: tuple(e.id for e, _ in retrieved[layer]) for layer in Layer}
        self._note(
            kind="decision",
            **tags,
            action=decision.action.value,
            supporting_ids=list(decision.supporting_ids),
            presented_ids=presented,
            manifest={layer.value: list(ids) for layer, ids in manifest.items()},
            today_ids=[e.id for e in today],
            query=query,
        )
        return DecisionOutcome(
            decision=decision,
            reflection=ReflectionEvent(obs.date, decision.rationale, ReflectionKind.IMMEDIATE),
            retrieved=manifest,
            presented_ids=tuple(presented),
            query=query,
            promoted=report.promoted,
        )

    def store_reflection(self, reflection: ReflectionEvent, action: Action) -> ReflectionEvent:
        """Persist a warm-up reflection into deep memory."""
        text = f"On {reflection.date.isoformat()} the correct action was '{action.value}'. {reflection.text}"
        event = self.store.insert(text, Source.REFLECTION, reflection.date, meta={"kind": reflection.kind.value})
        return dataclasses.replace(reflection, memory_id=event.id)

    def extended_reflect(self, history: Sequence[Any], day: date) -> ReflectionEvent | None:
        """Reflect on a window of completed days and file the result in deep memory.

        ``history`` items need ``date``, ``action``, ``log_return_asset`` and
        ``strategy_return`` attributes. Returns None if the backbone fails.
        """
        if not history:
            raise ValueError("extended reflection needs at least one completed day")
        window_cr = 100.0 * math.fsum(r.strategy_return for r in history)
        rows = "\n".join(
            f"{r.date.isoformat()}, {Action(r.action).value}, {r.log_return_asset:+.6f}, {r.strategy_return:+.6f}"
            for r in history
        )
        prompt = self.templates.render(
            "extended_reflect",
            symbol=self.profile.symbol,
            start=history[0].date.isoformat(),
            end=history[-1].date.isoformat(),
            days=len(history),
            cr=f"{window_cr:.4f}",
            rows=rows,
        )
        try:
            text = self.backbone.complete(self._request(prompt, task="extended", date=day.isoformat())).strip()
        except ProviderError as exc:
            log.warning("extended reflection on %s skipped: %s", day, exc)
            return None
        if not text:
            log.warning("extended reflection on %s skipped: empty response", day)
            return None
        event = self.store.insert(text, Source.REFLECTION, day, meta={"kind": ReflectionKind.EXTENDED.value})
        self.latest_extended = ReflectionEvent(day, text, ReflectionKind.EXTENDED, event.id)
        return self.latest_extended

