"""CR / SR / AV / MDD and the Buy & Hold baseline.

All return inputs are daily log returns. Percent-valued metrics are scaled
by 100. Sample (n - 1) standard deviation throughout.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import UndefinedMetricError

log = logging.getLogger(__name__)

TRADING_DAYS_PER_YEAR = 252


@dataclass(frozen=True)
class Metrics:
    cr_percent: float
    sr: float
    av_percent: float
    mdd_percent: float

    def as_dict(self) -> dict[str, float | None]:
        # NaN marks an undefined metric; JSON has no NaN so emit null
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, float | None]) -> "Metrics":
        return cls(**{k: (math.nan if data[k] is None else float(data[k])) for k in cls.__dataclass_fields__})

    def same_as(self, other: "Metrics") -> bool:
        """Field-wise exact equality that treats two NaNs as equal."""
        for a, b in zip(asdict(self).values(), asdict(other).values()):
            if not (a == b or (math.isnan(a) and math.isnan(b))):
                return False
        return True


def _as_array(returns: Sequence[float]) -> np.ndarray:
    arr = np.asarray(returns, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("expected a 1-D series")
    if not np.all(np.isfinite(arr)):
        raise ValueError("series contains non-finite values")
    return arr


def log_returns(prices: Sequence[float]) -> list[float]:
    return [math.log(b / a) for a, b in zip(prices, prices[1:])]


def cumulative_return(returns: Sequence[float]) -> float:
    arr = _as_array(returns)
    if arr.size == 0:
        log.warning("cumulative return of an empty series is 0")
        return 0.0
    return 100.0 * math.fsum(arr.tolist())


def annualized_volatility(returns: Sequence[float]) -> float:
    arr = _as_array(returns)
    if arr.size < 2:
        raise UndefinedMetricError("volatility needs at least 2 observations")
    return 100.0 * float(np.std(arr, ddof=1)) * math.sqrt(TRADING_DAYS_PER_YEAR)


def sharpe(returns: Sequence[float], risk_free_daily: float = 0.0, *, annualize: bool = True) -> float:
    """Mean excess daily return over its sample std, times sqrt(252) if ``annualize``."""
    arr = _as_array(returns)
    if arr.size < 2:
        raise UndefinedMetricError("Sharpe ratio needs at least 2 observations")
    sd = float(np.std(arr, ddof=1))
    if sd == 0.0:
        raise UndefinedMetricError("Sharpe ratio undefined for zero-variance returns")
    ratio = (float(np.mean(arr)) - risk_free_daily) / sd
    return ratio * math.sqrt(TRADING_DAYS_PER_YEAR) if annualize else ratio


def portfolio_values(returns: Sequence[float], start: float = 1.0) -> np.ndarray:
    """Value path ``start * exp(cumsum(returns))`` with the starting value prepended."""
    arr = _as_array(returns)
    return start * np.exp(np.concatenate(([0.0], np.cumsum(arr))))


def max_drawdown(values: Sequence[float]) -> float:
    """Largest peak-to-later-trough drop, in percent."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise UndefinedMetricError("drawdown of an empty series")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("portfolio values must be positive and finite")
    peaks = np.maximum.accumulate(arr)
    return 100.0 * float(np.max((peaks - arr) / peaks))


def compute_metrics(
    returns: Sequence[float],
    *,
    risk_free_daily: float = 0.0,
    annualize_sharpe: bool = True,
) -> Metrics:
    """All four metrics for a daily strategy log-return series.

    Undefined values (e.g. Sharpe of a flat series) come back as NaN.
    """
    def guarded(fn, *args, **kwargs) -> float:
        try:
            return fn(*args, **kwargs)
        except UndefinedMetricError as exc:
            log.warning("%s", exc)
            return math.nan

    return Metrics(
        cr_percent=cumulative_return(returns),
        sr=guarded(sharpe, returns, risk_free_daily, annualize=annualize_sharpe),
        av_percent=guarded(annualized_volatility, returns),
        mdd_percent=guarded(max_drawdown, portfolio_values(returns)),
    )


def buy_and_hold_returns(env) -> list[float]:
    """Daily log returns of staying long across the environment's test range."""
    from .market_data import log_return

    days = env.trading_days("test")
    if len(days) < 2:
        raise UndefinedMetricError("Buy & Hold needs at least 2 test trading days")
    return [log_return(env, d, nxt) * 1.0 for d, nxt in zip(days, days[1:])]


def buy_and_hold(env, *, risk_free_daily: float = 0.0, annualize_sharpe: bool = True) -> Metrics:
    return compute_metrics(
        buy_and_hold_returns(env), risk_free_daily=risk_free_daily, annualize_sharpe=annualize_sharpe
    )


# -- reporting -------------------------------------------------------------------

COLUMNS = (("CR↑", "cr_percent"), ("SR↑", "sr"), ("AV↓", "av_percent"), ("MDD↓", "mdd_percent"))


def _fmt(value: float) -> str:
    return "n/a" if math.isnan(value) else f"{value:.3f}"


def format_table(rows: Mapping[str, Metrics]) -> str:
    """Aligned plain-text table in CR, SR, AV, MDD order."""
    header = ["Strategy", *(name for name, _ in COLUMNS)]
    body = [[label, *(_fmt(getattr(m, attr)) for _, attr in COLUMNS)] for label, m in rows.items()]
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = []
    for row in [header, *body]:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def table_csv(rows: Mapping[str, Metrics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", *(name for name, _ in COLUMNS)])
    for label, m in rows.items():
        writer.writerow([label, *(repr(getattr(m, attr)) for _, attr in COLUMNS)])
    return buf.getvalue()
