"""Three-layer long-term memory with exponential decay.

Every event lives in exactly one layer (shallow, intermediate, deep). Its
retrieval score is the sum of three parts, each in [0, 1]:

* recency    ``exp(-days / Q)`` with the layer's stability ``Q``
* relevancy  cosine similarity to the query, negative values clamped to 0
* importance ``v * alpha ** days`` divided by 100 and capped at 1

``v`` is drawn from {40, 60, 80} with layer-specific probabilities when the
event is stored, and grows by 5 each time a decision cites the event.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .embedding import EmbeddingProvider, cosine
from .errors import MemoryLookupError, ParseError, TemporalError

IMPORTANCE_VALUES = (40.0, 60.0, 80.0)
RECENCY_FLOOR = 0.05
IMPORTANCE_FLOOR = 5.0
ACCESS_BOOST = 5.0
IMPORTANCE_SCALE = 100.0
DEFAULT_PROMOTION_THRESHOLD = 3
SNAPSHOT_FORMAT = "memtrader.memory"
SNAPSHOT_VERSION = 1


class Layer(str, Enum):
    SHALLOW = "shallow"
    INTERMEDIATE = "intermediate"
    DEEP = "deep"

    def deeper(self) -> "Layer | None":
        order = list(Layer)
        i = order.index(self)
        return order[i + 1] if i + 1 < len(order) else None


class Source(str, Enum):
    NEWS = "news"
    FILING_10Q = "filing_10q"
    FILING_10K = "filing_10k"
    REFLECTION = "reflection"


SOURCE_LAYER = {
    Source.NEWS: Layer.SHALLOW,
    Source.FILING_10Q: Layer.INTERMEDIATE,
    Source.FILING_10K: Layer.DEEP,
    Source.REFLECTION: Layer.DEEP,
}


@dataclass(frozen=True)
class LayerParams:
    layer: Layer
    stability: float
    decay: float
    value_probs: tuple[float, float, float]

    def __post_init__(self) -> None:
        if self.stability <= 0:
            raise ValueError(f"{self.layer.value}: stability must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"{self.layer.value}: decay base must lie in (0, 1)")
        if len(self.value_probs) != 3 or any(p < 0 for p in self.value_probs):
            raise ValueError(f"{self.layer.value}: need three non-negative probabilities")
        if abs(sum(self.value_probs) - 1.0) > 1e-9:
            raise ValueError(f"{self.layer.value}: value probabilities must sum to 1")


DEFAULT_LAYER_PARAMS: Mapping[Layer, LayerParams] = {
    Layer.SHALLOW: LayerParams(Layer.SHALLOW, 14.0, 0.9, (0.8, 0.15, 0.05)),
    Layer.INTERMEDIATE: LayerParams(Layer.INTERMEDIATE, 90.0, 0.967, (0.05, 0.8, 0.15)),
    Layer.DEEP: LayerParams(Layer.DEEP, 365.0, 0.988, (0.05, 0.15, 0.8)),
}


@dataclass
class MemoryEvent:
    id: int
    layer: Layer
    text: str
    embedding: np.ndarray = field(repr=False)
    t_e: date
    value: float
    source: Source
    access_count: int = 0
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RetrievalScore:
    recency: float
    relevancy: float
    importance_raw: float
    importance_scaled: float
    gamma: float


@dataclass(frozen=True)
class PromotionReport:
    boosted: tuple[int, ...] = ()
    promoted: tuple[tuple[int, Layer, Layer], ...] = ()


def _elapsed(event: MemoryEvent, now: date) -> int:
    delta = (now - event.t_e).days
    if delta < 0:
        raise TemporalError(f"event {event.id} dated {event.t_e} is after {now}")
    return delta


def sample_value(probs: tuple[float, float, float], rng: random.Random) -> float:
    u = rng.random()
    if u < probs[0]:
        return IMPORTANCE_VALUES[0]
    if u < probs[0] + probs[1]:
        return IMPORTANCE_VALUES[1]
    return IMPORTANCE_VALUES[2]


def recency_score(event: MemoryEvent, now: date, params: LayerParams | None = None) -> float:
    params = params or DEFAULT_LAYER_PARAMS[event.layer]
    return math.exp(-_elapsed(event, now) / params.stability)


def importance_score(
    event: MemoryEvent, now: date, params: LayerParams | None = None
) -> tuple[float, float]:
    """Return ``(raw, scaled)`` importance; ``scaled = min(raw / 100, 1)``."""
    params = params or DEFAULT_LAYER_PARAMS[event.layer]
    raw = event.value * params.decay ** _elapsed(event, now)
    return raw, min(raw / IMPORTANCE_SCALE, 1.0)


def score(
    event: MemoryEvent,
    query_embedding: np.ndarray,
    now: date,
    params: LayerParams | None = None,
) -> RetrievalScore:
    recency = recency_score(event, now, params)
    raw, scaled = importance_score(event, now, params)
    relevancy = max(cosine(event.embedding, query_embedding), 0.0)
    return RetrievalScore(recency, relevancy, raw, scaled, recency + relevancy + scaled)


class MemoryStore:
    """Single-writer layered memory for one episode.

    ``seed`` initialises the importance-value sampler; pass ``rng`` to
    :meth:`insert` to override it per call.
    """

    def __init__(
        self,
        embedder: EmbeddingProvider,
        params: Mapping[Layer, LayerParams] | None = None,
        *,
        promotion_threshold: int = DEFAULT_PROMOTION_THRESHOLD,
        seed: int | None = 0,
    ):
        self.embedder = embedder
        self.params = dict(DEFAULT_LAYER_PARAMS)
        if params:
            self.params.update(params)
        if promotion_threshold < 1:
            raise ValueError("promotion threshold must be at least 1")
        self.promotion_threshold = promotion_threshold
        self.rng = random.Random(seed)
        self._events: dict[int, MemoryEvent] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._events)

    def __contains__(self, event_id: int) -> bool:
        return event_id in self._events

    def get(self, event_id: int) -> MemoryEvent:
        try:
            return self._events[event_id]
        except KeyError:
            raise MemoryLookupError(f"unknown memory id {event_id}") from None

    def events(self, layer: Layer | None = None) -> list[MemoryEvent]:
        return [e for e in self._events.values() if layer is None or e.layer is layer]

    def insert(
        self,
        text: str,
        source: Source | str,
        day: date,
        rng: random.Random | None = None,
        meta: dict | None = None,
    ) -> MemoryEvent:
        source = Source(source)
        layer = SOURCE_LAYER[source]
        embedding = self.embedder.embed(text)
        value = sample_value(self.params[layer].value_probs, rng or self.rng)
        event = MemoryEvent(
            id=self._next_id,
            layer=layer,
            text=text,
            embedding=embedding,
            t_e=day,
            value=value,
            source=source,
            meta=dict(meta or {}),
        )
        self._events[event.id] = event
        self._next_id += 1
        return event

    def recency(self, event: MemoryEvent, now: date) -> float:
        return recency_score(event, now, self.params[event.layer])

    def importance(self, event: MemoryEvent, now: date) -> tuple[float, float]:
        return importance_score(event, now, self.params[event.layer])

    def score(self, event: MemoryEvent, query_embedding: np.ndarray, now: date) -> RetrievalScore:
        return score(event, query_embedding, now, self.params[event.layer])

    def is_live(self, event: MemoryEvent, now: date) -> bool:
        return self.recency(event, now) >= RECENCY_FLOOR and self.importance(event, now)[0] >= IMPORTANCE_FLOOR

    def retrieve_top_k(
        self, query_embedding: np.ndarray, now: date, k: int
    ) -> dict[Layer, list[tuple[MemoryEvent, RetrievalScore]]]:
        """Top ``k`` live events per layer by score, ties to the smaller id.

        Events that :meth:`purge` would drop at ``now`` are never returned.
        Access counters are left untouched.
        """
        if k < 1:
            raise ValueError("k must be at least 1")
        ranked: dict[Layer, list[tuple[MemoryEvent, RetrievalScore]]] = {layer: [] for layer in Layer}
        for event in self._events.values():
            if event.t_e > now or not self.is_live(event, now):
                continue
            ranked[event.layer].append((event, self.score(event, query_embedding, now)))
        for layer, items in ranked.items():
            items.sort(key=lambda pair: (-pair[1].gamma, pair[0].id))
            del items[k:]
        return ranked

    def register_access(self, ids: Iterable[int], now: date) -> PromotionReport:
        """Boost every cited event and promote those reaching the threshold."""
        ids = list(ids)
        events = [self.get(i) for i in ids]
        promoted = []
        for event in events:
            event.value += ACCESS_BOOST
            event.access_count += 1
            target = event.layer.deeper()
            if event.access_count >= self.promotion_threshold and target is not None:
                promoted.append((event.id, event.layer, target))
                event.layer = target
                event.t_e = now
                event.access_count = 0
        return PromotionReport(tuple(ids), tuple(promoted))

    def purge(self, now: date) -> list[int]:
        doomed = [e.id for e in self._events.values() if e.t_e <= now and not self.is_live(e, now)]
        for event_id in doomed:
            del self._events[event_id]
        return doomed

    # -- snapshots -------------------------------------------------------------

    def dump(self, path: str | Path) -> None:
        """Write the store as versioned JSONL (header line, then one event per line)."""
        with Path(path).open("w", encoding="utf-8") as fh:
            header = {"format": SNAPSHOT_FORMAT, "version": SNAPSHOT_VERSION, "next_id": self._next_id}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for event in self._events.values():
                row = {
                    "id": event.id,
                    "layer": event.layer.value,
                    "text": event.text,
                    "embedding": [float(x) for x in event.embedding],
                    "t_e": event.t_e.isoformat(),
                    "value": event.value,
                    "source": event.source.value,
                    "access_count": event.access_count,
                    "meta": event.meta,
                }
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def load(self, path: str | Path) -> None:
        """Replace the store's contents with a snapshot written by :meth:`dump`."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ParseError(f"{path}: empty snapshot")
        header = json.loads(lines[0])
        if header.get("format") != SNAPSHOT_FORMAT or header.get("version") != SNAPSHOT_VERSION:
            raise ParseError(f"{path}: unsupported snapshot header {header}")
        events = {}
        for lineno, line in enumerate(lines[1:], start=2):
            try:
                row = json.loads(line)
                vec = np.asarray(row["embedding"], dtype=np.float64)
                vec.setflags(write=False)
                event = MemoryEvent(
                    id=int(row["id"]),
                    layer=Layer(row["layer"]),
                    text=row["text"],
                    embedding=vec,
                    t_e=date.fromisoformat(row["t_e"]),
                    value=float(row["value"]),
                    source=Source(row["source"]),
                    access_count=int(row["access_count"]),
                    meta=row.get("meta", {}),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from exc
            events[event.id] = event
        self._events = events
        self._next_id = int(header["next_id"])
