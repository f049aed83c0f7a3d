"""Price, news and filing ingestion plus the date-indexed trading environment.

The trading calendar is whatever dates appear in the price file. News and
filings dated on a non-trading day are attached to the next trading day.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import (
    ConfigurationError,
    DateLookupError,
    LeakageError,
    ParseError,
    ValidationError,
    WindowError,
)

log = logging.getLogger(__name__)

PRICE_HEADER = ("date", "open", "high", "low", "close", "adj_close", "volume")
DEFAULT_MOMENTUM_WINDOW = 3


class Sentiment(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NEUTRAL = "neutral"


class FormType(str, Enum):
    K10 = "10-K"
    Q10 = "10-Q"


class AssetClass(str, Enum):
    STOCK = "stock"
    CRYPTO = "crypto"
    ETF = "etf"


class Phase(str, Enum):
    WARMUP = "warmup"
    TEST = "test"


@dataclass(frozen=True)
class PriceBar:
    date: date
    open: float
    high: float
    low: float
    close: float
    adjusted_close: float
    volume: float

    def __post_init__(self) -> None:
        values = (self.open, self.high, self.low, self.close, self.adjusted_close, self.volume)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError(f"{self.date}: non-finite price or volume")
        lo, hi = min(self.open, self.close), max(self.open, self.close)
        if not (self.low <= lo and hi <= self.high):
            raise ValidationError(
                f"{self.date}: OHLC invariant violated "
                f"(low={self.low}, open={self.open}, close={self.close}, high={self.high})"
            )
        if self.adjusted_close <= 0:
            raise ValidationError(f"{self.date}: adjusted close must be positive")
        if self.volume < 0:
            raise ValidationError(f"{self.date}: negative volume")


@dataclass(frozen=True)
class NewsItem:
    id: str
    date: date
    text: str
    sentiment: Sentiment


@dataclass(frozen=True)
class FilingSummary:
    id: str
    date: date
    form_type: FormType
    summary: str


class DateRange(NamedTuple):
    start: date
    end: date

    def __contains__(self, day: object) -> bool:  # type: ignore[override]
        return isinstance(day, date) and self.start <= day <= self.end

    def __str__(self) -> str:
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


@dataclass(frozen=True)
class MarketObservation:
    date: date
    phase: Phase
    adjusted_close: float
    momentum: float
    news: tuple[NewsItem, ...] = ()
    filings: tuple[FilingSummary, ...] = ()
    k: int | None = None
    # latest bar date that fed into this observation
    horizon: date | None = None


# -- loaders -----------------------------------------------------------------


def _parse_date(raw: str, where: str) -> date:
    try:
        return date.fromisoformat(raw.strip())
    except (ValueError, AttributeError, TypeError) as exc:
        raise ParseError(f"{where}: bad date {raw!r}") from exc


def load_price_series(path: str | Path) -> list[PriceBar]:
    """Read a ``date,open,high,low,close,adj_close,volume`` CSV into sorted bars."""
    path = Path(path)
    bars: list[PriceBar] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PRICE_HEADER:
            raise ParseError(f"{path}: expected header {','.join(PRICE_HEADER)}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            where = f"{path}: row {lineno}"
            if len(row) != len(PRICE_HEADER):
                raise ParseError(f"{where}: expected {len(PRICE_HEADER)} columns, got {len(row)}")
            day = _parse_date(row[0], where)
            try:
                nums = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{where}: {exc}") from exc
            try:
                bars.append(PriceBar(day, *nums))
            except ValidationError as exc:
                raise ValidationError(f"{where}: {exc}") from exc
    bars.sort(key=lambda b: b.date)
    for prev, cur in zip(bars, bars[1:]):
        if prev.date == cur.date:
            raise ValidationError(f"{path}: duplicate date {cur.date.isoformat()}")
    return bars


def _read_jsonl(path: Path, fields: tuple[str, ...]) -> Iterable[tuple[str, dict]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}: line {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{where}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{where}: expected a JSON object")
            missing = [f for f in fields if f not in obj]
            if missing:
                raise ParseError(f"{where}: missing field(s) {', '.join(missing)}")
            extra = sorted(set(obj) - set(fields))
            if extra:
                raise ParseError(f"{where}: unknown field(s) {', '.join(extra)}")
            yield where, obj


def _check_unique(items: Sequence, path: Path) -> None:
    seen: set[str] = set()
    for item in items:
        if item.id in seen:
            raise ValidationError(f"{path}: duplicate id {item.id!r}")
        seen.add(item.id)


def load_news_feed(path: str | Path) -> list[NewsItem]:
    path = Path(path)
    items = []
    for where, obj in _read_jsonl(path, ("id", "date", "text", "sentiment")):
        try:
            sentiment = Sentiment(obj["sentiment"])
        except ValueError:
            raise ValidationError(
                f"{where}: sentiment {obj['sentiment']!r} not one of positive/negative/neutral"
            ) from None
        items.append(NewsItem(str(obj["id"]), _parse_date(obj["date"], where), str(obj["text"]), sentiment))
    _check_unique(items, path)
    items.sort(key=lambda n: n.date)
    return items


def load_filings(path: str | Path) -> list[FilingSummary]:
    path = Path(path)
    items = []
    for where, obj in _read_jsonl(path, ("id", "date", "form_type", "summary")):
        try:
            form = FormType(obj["form_type"])
        except ValueError:
            raise ValidationError(f"{where}: form_type {obj['form_type']!r} not 10-K or 10-Q") from None
        items.append(FilingSummary(str(obj["id"]), _parse_date(obj["date"], where), form, str(obj["summary"])))
    _check_unique(items, path)
    items.sort(key=lambda f: f.date)
    return items


# -- environment ---------------------------------------------------------------


@dataclass(frozen=True)
class Environment:
    """Immutable, date-indexed market data for one asset.

    Build with :func:`build_environment`; the constructor does no validation.
    """

    symbol: str
    asset_class: AssetClass
    bars: tuple[PriceBar, ...]
    news: Mapping[date, tuple[NewsItem, ...]]
    filings: Mapping[date, tuple[FilingSummary, ...]]
    warmup_range: DateRange
    test_range: DateRange
    dropped: Mapping[str, int] = field(default_factory=dict)
    _index: Mapping[date, int] = field(default_factory=dict, repr=False, compare=False)
    _dates: tuple[date, ...] = field(default=(), repr=False, compare=False)

    def index_of(self, day: date) -> int:
        try:
            return self._index[day]
        except KeyError:
            raise DateLookupError(f"{day.isoformat()} is not a trading day for {self.symbol}") from None

    def phase_range(self, phase: Phase | str) -> DateRange:
        return self.warmup_range if Phase(phase) is Phase.WARMUP else self.test_range

    def trading_days(self, phase: Phase | str | None = None) -> list[date]:
        if phase is None:
            return list(self._dates)
        rng = self.phase_range(phase)
        lo = bisect.bisect_left(self._dates, rng.start)
        hi = bisect.bisect_right(self._dates, rng.end)
        return list(self._dates[lo:hi])

    def price(self, day: date) -> float:
        return self.bars[self.index_of(day)].adjusted_close

    def next_trading_day(self, day: date) -> date | None:
        i = bisect.bisect_right(self._dates, day)
        return self._dates[i] if i < len(self._dates) else None

    def news_on(self, day: date) -> tuple[NewsItem, ...]:
        return self.news.get(day, ())

    def filings_on(self, day: date) -> tuple[FilingSummary, ...]:
        return self.filings.get(day, ())


def _attach(items, dates: tuple[date, ...], span: DateRange, kind: str, dropped: dict[str, int]):
    keyed: dict[date, list] = {}
    for item in items:
        if item.date not in span:
            dropped[kind] = dropped.get(kind, 0) + 1
            continue
        i = bisect.bisect_left(dates, item.date)
        if i == len(dates):
            dropped[kind] = dropped.get(kind, 0) + 1
            continue
        keyed.setdefault(dates[i], []).append(item)
    return MappingProxyType({d: tuple(v) for d, v in sorted(keyed.items())})


def build_environment(
    bars: Sequence[PriceBar],
    news: Iterable[NewsItem],
    filings: Iterable[FilingSummary],
    warmup_range: tuple[date, date],
    test_range: tuple[date, date],
    *,
    symbol: str = "ASSET",
    asset_class: AssetClass | str = AssetClass.STOCK,
) -> Environment:
    """Assemble an environment, dropping everything outside the two phases.

    Bars between the warm-up end and the test start are kept (they are needed
    for momentum history); bars, news and filings outside
    ``[warmup start, test end]`` are dropped and counted in ``env.dropped``.
    """
    warm, test = DateRange(*warmup_range), DateRange(*test_range)
    for name, rng in (("warm-up", warm), ("test", test)):
        if rng.start > rng.end:
            raise ConfigurationError(f"{name} range {rng} is inverted")
    if not warm.end < test.start:
        raise ConfigurationError(f"warm-up range {warm} must end before test range {test} begins")

    ordered = sorted(bars, key=lambda b: b.date)
    for prev, cur in zip(ordered, ordered[1:]):
        if prev.date >= cur.date:
            raise ValidationError(f"duplicate bar date {cur.date.isoformat()}")
    span = DateRange(warm.start, test.end)
    kept = tuple(b for b in ordered if b.date in span)
    dropped: dict[str, int] = {}
    if len(kept) != len(ordered):
        dropped["bars"] = len(ordered) - len(kept)
    dates = tuple(b.date for b in kept)
    for name, rng in (("warm-up", warm), ("test", test)):
        if not any(d in rng for d in dates):
            raise ConfigurationError(f"no trading days inside {name} range {rng}")

    env = Environment(
        symbol=symbol,
        asset_class=AssetClass(asset_class),
        bars=kept,
        news=_attach(news, dates, span, "news", dropped),
        filings=_attach(filings, dates, span, "filings", dropped),
        warmup_range=warm,
        test_range=test,
        dropped=MappingProxyType(dict(dropped)),
        _index=MappingProxyType({d: i for i, d in enumerate(dates)}),
        _dates=dates,
    )
    for kind, n in sorted(dropped.items()):
        log.warning("dropped %d %s record(s) outside %s", n, kind, span)
    return env


def truncate_after(env: Environment, day: date) -> Environment:
    """Copy of ``env`` with every bar, news item and filing after ``day`` removed.

    ``day`` must fall inside the test range; the test range is cut to end there.
    """
    if day not in env.test_range:
        raise DateLookupError(f"{day.isoformat()} is outside the test range {env.test_range}")
    out = build_environment(
        [b for b in env.bars if b.date <= day],
        [],
        [],
        env.warmup_range,
        (env.test_range.start, day),
        symbol=env.symbol,
        asset_class=env.asset_class,
    )
    # items are already keyed by the trading day they attach to
    news_by_day = {d: v for d, v in env.news.items() if d <= day}
    filings_by_day = {d: v for d, v in env.filings.items() if d <= day}
    return Environment(
        symbol=out.symbol,
        asset_class=out.asset_class,
        bars=out.bars,
        news=MappingProxyType(news_by_day),
        filings=MappingProxyType(filings_by_day),
        warmup_range=out.warmup_range,
        test_range=out.test_range,
        dropped=out.dropped,
        _index=out._index,
        _dates=out._dates,
    )


def observation_at(
    env: Environment,
    day: date,
    phase: Phase | str,
    k: int = DEFAULT_MOMENTUM_WINDOW,
) -> MarketObservation:
    """Build what the agent perceives on ``day``.

    Warm-up momentum is the next-day adjusted-close difference (in currency).
    Test momentum is ``ln(p_day / p_{day-k})`` using only bars up to ``day``.
    """
    phase = Phase(phase)
    idx = env.index_of(day)
    if day not in env.phase_range(phase):
        raise DateLookupError(f"{day.isoformat()} is outside the {phase.value} range {env.phase_range(phase)}")
    price = env.bars[idx].adjusted_close
    if phase is Phase.WARMUP:
        if idx + 1 >= len(env.bars):
            raise WindowError(f"{day.isoformat()}: no next trading day for warm-up momentum")
        nxt = env.bars[idx + 1]
        momentum = nxt.adjusted_close - price
        horizon = nxt.date
        window = None
    else:
        if k < 1:
            raise ValueError("k must be a positive integer")
        if idx - k < 0:
            raise WindowError(f"{day.isoformat()}: need {k} prior trading days, have {idx}")
        history = env.bars[idx - k: idx + 1]
        momentum = math.log(history[-1].adjusted_close / history[0].adjusted_close)
        horizon = history[-1].date
        window = k
    return MarketObservation(
        date=day,
        phase=phase,
        adjusted_close=price,
        momentum=momentum,
        news=env.news_on(day),
        filings=env.filings_on(day),
        k=window,
        horizon=horizon,
    )


def assert_no_leakage(obs: MarketObservation) -> None:
    """Raise :class:`LeakageError` if a test observation looks past its date."""
    if obs.phase is not Phase.TEST:
        return
    late = [x.date for x in (*obs.news, *obs.filings) if x.date > obs.date]
    if (obs.horizon is not None and obs.horizon > obs.date) or late:
        raise LeakageError(f"observation for {obs.date.isoformat()} references later data")


def log_return(env: Environment, day: date, next_day: date) -> float:
    return math.log(env.price(next_day) / env.price(day))
