"""Reasoning backbone: chat-completion clients and decision parsing.

Two implementations share one ``complete(request) -> str`` surface:

* :class:`RemoteBackbone` posts to an OpenAI-style ``/chat/completions``
  endpoint with exponential-backoff retries.
* :class:`MockBackbone` is a deterministic rule-based stand-in that reads the
  rendered prompt, so full episodes run offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol

import httpx

from .errors import ConfigurationError, FormatError, ProviderError

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.6
DEFAULT_MAX_TOKENS = 1024
DEFAULT_RETRIES = 3
DEFAULT_MAX_IN_FLIGHT = 4

FORMAT_REMINDER = (
    "Your previous answer could not be parsed. Reply with exactly one fenced ```json block "
    'containing {"action": "Buy" | "Sell" | "Hold", "rationale": string, "supporting_ids": [int, ...]}.'
)
FALLBACK_FORMAT = "format-fallback"
FALLBACK_PROVIDER = "provider-fallback"


class Action(str, Enum):
    BUY = "Buy"
    SELL = "Sell"
    HOLD = "Hold"

    @property
    def position(self) -> int:
        return {Action.BUY: 1, Action.SELL: -1, Action.HOLD: 0}[self]

    @classmethod
    def parse(cls, raw: object) -> "Action":
        if isinstance(raw, str):
            for action in cls:
                if raw.strip().lower() == action.value.lower():
                    return action
        raise FormatError(f"invalid action {raw!r}")


@dataclass(frozen=True)
class CompletionRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int | None = None
    # transcript context only; never sent on the wire
    tags: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class TradeDecision:
    action: Action
    rationale: str
    supporting_ids: tuple[int, ...] = ()
    dropped_ids: tuple[int, ...] = field(default=(), compare=False)


class Backbone(Protocol):
    model: str

    def complete(self, request: CompletionRequest) -> str: ...


def chat_payload(request: CompletionRequest, model: str) -> dict[str, Any]:
    payload: dict[str, Any] = {
        "model": model,
        "messages": [
            {"role": "system", "content": request.system_prompt},
            {"role": "user", "content": request.user_prompt},
        ],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    if request.seed is not None:
        payload["seed"] = request.seed
    return payload


class Transcript:
    """Thread-safe, append-only record of prompts and responses."""

    def __init__(self) -> None:
        self._entries: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def record(self, **entry: Any) -> None:
        with self._lock:
            entry["seq"] = len(self._entries)
            self._entries.append(entry)

    @property
    def entries(self) -> list[dict[str, Any]]:
        with self._lock:
            return list(self._entries)

    def write(self, path: str | Path, append: bool = False) -> None:
        with Path(path).open("a" if append else "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry, sort_keys=True, default=str) + "\n")


def read_transcript(path: str | Path) -> list[dict[str, Any]]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class RemoteBackbone:
    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key: str | None = None,
        api_key_env: str = "OPENAI_API_KEY",
        retries: int = DEFAULT_RETRIES,
        backoff: float = 1.0,
        timeout: float = 120.0,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        transcript: Transcript | None = None,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key or os.environ.get(api_key_env)
        if not self.api_key:
            raise ConfigurationError(f"environment variable {api_key_env} is not set")
        self.retries = max(1, retries)
        self.backoff = backoff
        self.transcript = transcript
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, request: CompletionRequest) -> str:
        payload = chat_payload(request, self.model)
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last: ProviderError | None = None
        with self._slots:
            for attempt in range(self.retries):
                if attempt:
                    time.sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = self._client.post(self.endpoint, json=payload, headers=headers)
                except httpx.HTTPError as exc:
                    last = ProviderError(f"chat request failed: {exc}")
                    log.warning("attempt %d/%d: %s", attempt + 1, self.retries, last)
                    continue
                if resp.status_code // 100 != 2:
                    last = ProviderError(
                        f"chat endpoint returned HTTP {resp.status_code}: {resp.text[:500]}",
                        status=resp.status_code,
                        body=resp.text,
                    )
                    log.warning("attempt %d/%d: HTTP %d", attempt + 1, self.retries, resp.status_code)
                    continue
                try:
                    text = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise ProviderError(f"malformed chat response: {exc}", body=resp.text) from exc
                if self.transcript is not None:
                    self.transcript.record(**request.tags, payload=payload, response=text)
                return text
        if self.transcript is not None:
            self.transcript.record(**request.tags, payload=payload, error=str(last))
        assert last is not None
        raise last


# -- mock -------------------------------------------------------------------------

# Phrases the shipped templates contain; the mock keys its behaviour on them.
TASK_MARKERS = {
    "summarize": "Condense the document below",
    "explain": "Explain what drove the price move",
    "decide": "Decide today's trading action",
    "extended": "Review the recent trading window",
}

_TODAY_NEWS = re.compile(r"\[News \(ID: (\d+)\)\].*?The sentiment is \{(positive|negative|neutral)\}\.")
_MOMENTUM = re.compile(r"was \{(-?\d+(?:\.\d+)?)%\}")
_WINDOW_CR = re.compile(r"Window cumulative return: \{(-?\d+(?:\.\d+)?)%\}")
_TODAY_BLOCK = re.compile(r"Today's news:\n(.*?)(?:\n\n|\Z)", re.S)
_MOCK_SUMMARY_WORDS = 200


def _section(prompt: str) -> str:
    match = _TODAY_BLOCK.search(prompt)
    return match.group(1) if match else ""


class MockBackbone:
    """Deterministic rule-based backbone.

    Decision rule (``sentiment-majority``), using only the "Today's news"
    block and the rendered momentum:

    * Buy  if positive - negative > 0 and momentum >= 0
    * Sell if negative - positive > 0 and momentum < 0
    * Hold otherwise

    ``supporting_ids`` are the ids of today's news. With ``noise > 0`` the
    action is replaced, with that probability, by one derived from a hash of
    ``(prompt, seed)``; the output stays a pure function of prompt and seed.
    """

    policies = ("sentiment-majority", "always-buy", "always-hold", "always-sell")

    def __init__(
        self,
        policy: str = "sentiment-majority",
        *,
        noise: float = 0.0,
        model: str = "mock",
        transcript: Transcript | None = None,
    ):
        if policy not in self.policies:
            raise ConfigurationError(f"unknown mock policy {policy!r}")
        if not 0.0 <= noise <= 1.0:
            raise ConfigurationError("mock noise must lie in [0, 1]")
        self.policy = policy
        self.noise = noise
        self.model = model
        self.transcript = transcript

    def complete(self, request: CompletionRequest) -> str:
        text = self._respond(request)
        if self.transcript is not None:
            self.transcript.record(**request.tags, payload=chat_payload(request, self.model), response=text)
        return text

    def _respond(self, request: CompletionRequest) -> str:
        prompt = request.user_prompt
        if TASK_MARKERS["summarize"] in prompt:
            body = prompt.split("<<<", 1)[-1].rsplit(">>>", 1)[0]
            return " ".join(body.split()[:_MOCK_SUMMARY_WORDS])
        if TASK_MARKERS["extended"] in prompt:
            match = _WINDOW_CR.search(prompt)
            cr = match.group(1) if match else "0.0000"
            return (
                f"Over the reviewed window the strategy's cumulative return was {cr}%. "
                "Keep weighting today's news sentiment against recent momentum."
            )
        action, ids = self.rule(prompt)
        if TASK_MARKERS["decide"] in prompt:
            action = self._perturb(action, prompt, request.seed)
        rationale = f"mock {self.policy}: {len(ids)} news item(s) today"
        return render_decision(TradeDecision(action, rationale, tuple(ids)))

    def rule(self, prompt: str) -> tuple[Action, list[int]]:
        news = _TODAY_NEWS.findall(_section(prompt))
        ids = [int(i) for i, _ in news]
        if self.policy == "always-buy":
            return Action.BUY, ids
        if self.policy == "always-sell":
            return Action.SELL, ids
        if self.policy == "always-hold":
            return Action.HOLD, ids
        net = sum(1 if s == "positive" else -1 if s == "negative" else 0 for _, s in news)
        match = _MOMENTUM.search(prompt)
        momentum = float(match.group(1)) if match else 0.0
        if net > 0 and momentum >= 0:
            return Action.BUY, ids
        if net < 0 and momentum < 0:
            return Action.SELL, ids
        return Action.HOLD, ids

    def _perturb(self, action: Action, prompt: str, seed: int | None) -> Action:
        if self.noise <= 0.0:
            return action
        digest = hashlib.sha256(f"{seed}\x00{prompt}".encode()).digest()
        u = int.from_bytes(digest[:8], "little") / 2**64
        if u >= self.noise:
            return action
        return list(Action)[digest[8] % 3]


# -- structured output ------------------------------------------------------------

_FENCED = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.S)


def render_decision(decision: TradeDecision) -> str:
    body = {
        "action": decision.action.value,
        "rationale": decision.rationale,
        "supporting_ids": list(decision.supporting_ids),
    }
    return "```json\n" + json.dumps(body) + "\n```"


def _candidate_objects(raw: str) -> Iterable[str]:
    yield from _FENCED.findall(raw)
    # bare object: scan from each opening brace for a decodable JSON value
    decoder = json.JSONDecoder()
    for match in re.finditer(r"\{", raw):
        try:
            _, end = decoder.raw_decode(raw, match.start())
        except json.JSONDecodeError:
            continue
        yield raw[match.start(): end]


def parse_decision(raw: str, presented_ids: Iterable[int]) -> TradeDecision:
    """Extract ``{action, rationale, supporting_ids}`` from model output.

    Ids not in ``presented_ids`` are dropped and listed in ``dropped_ids``.
    """
    presented = set(presented_ids)
    for blob in _candidate_objects(raw or ""):
        try:
            obj = json.loads(blob)
        except json.JSONDecodeError:
            continue
        if not isinstance(obj, dict) or "action" not in obj:
            continue
        action = Action.parse(obj["action"])
        rationale = obj.get("rationale", "")
        if not isinstance(rationale, str):
            rationale = json.dumps(rationale)
        raw_ids = obj.get("supporting_ids", []) or []
        if not isinstance(raw_ids, list):
            raise FormatError("supporting_ids must be a list")
        kept, dropped = [], []
        for item in raw_ids:
            try:
                value = int(item)
            except (TypeError, ValueError):
                raise FormatError(f"non-integer supporting id {item!r}") from None
            if value in presented and value not in kept:
                kept.append(value)
            elif value not in presented:
                dropped.append(value)
        if dropped:
            log.info("dropped %d supporting id(s) not shown in the prompt: %s", len(dropped), dropped)
        return TradeDecision(action, rationale, tuple(kept), tuple(dropped))
    raise FormatError("no decision object found in model output")


def decide_with_retries(
    backbone: Backbone,
    request: CompletionRequest,
    presented_ids: Iterable[int],
    *,
    reprompts: int = 1,
) -> TradeDecision:
    """Ask for a decision; re-prompt on bad format, then fall back to Hold.

    Never raises for model or transport trouble, so an episode keeps going.
    """
    presented = list(presented_ids)
    current = request
    for attempt in range(reprompts + 1):
        try:
            raw = backbone.complete(current)
        except ProviderError as exc:
            log.warning("backbone failed, holding: %s", exc)
            return TradeDecision(Action.HOLD, FALLBACK_PROVIDER)
        try:
            return parse_decision(raw, presented)
        except FormatError as exc:
            log.warning("unparseable decision (attempt %d): %s", attempt + 1, exc)
            current = CompletionRequest(
                request.system_prompt,
                request.user_prompt + "\n\n" + FORMAT_REMINDER,
                request.temperature,
                request.max_tokens,
                request.seed,
                {**request.tags, "reprompt": attempt + 1},
            )
    return TradeDecision(Action.HOLD, FALLBACK_FORMAT)
