"""Naive market-neutral strategy: weights proportional to capped predicted returns."""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TRADING_DAYS = 252
DOWNSIDE_CONVENTION = "rms of negative excess returns, full-sample denominator"
EQUITY_HEADER = ["date", "daily_return", "cumulative_return"]


class AlignmentError(ValueError):
    """Weights and realized returns do not share the required dates."""


@dataclass
class WeightVector:
    """Positions held over ``date`` (the day whose return they earn).

    ``info_date`` is the last date whose data the predictions used; it must be
    strictly earlier than ``date``.
    """

    date: dt.date
    tickers: list[str]
    weights: np.ndarray
    info_date: dt.date | None = None

    @property
    def long_sum(self) -> float:
        return float(self.weights[self.weights > 0].sum())

    @property
    def short_sum(self) -> float:
        return float(self.weights[self.weights < 0].sum())


def weights_from_predictions(
    pred,
    universe_mask=None,
    cap: float = 0.5,
    date=None,
    tickers: Sequence[str] | None = None,
    info_date=None,
) -> WeightVector:
    """Cap predictions to ``[-cap, cap]`` and normalize each side to unit gross weight.

    Tickers outside the universe get exactly zero. An all-zero prediction
    vector gives a flat (all-zero) book.
    """
    p = np.asarray(pred, dtype=np.float64).copy()
    if not np.all(np.isfinite(p)):
        raise ValueError("predictions must be finite")
    if universe_mask is not None:
        p[~np.asarray(universe_mask, dtype=bool)] = 0.0
    p = np.clip(p, -cap, cap)
    w = np.zeros_like(p)
    pos, neg = p > 0, p < 0
    if pos.any():
        w[pos] = p[pos] / p[pos].sum()
    if neg.any():
        w[neg] = p[neg] / abs(p[neg].sum())
    if tickers is None:
        tickers = [str(i) for i in range(p.size)]
    return WeightVector(date, list(tickers), w, info_date)


def _excess(returns, risk_free) -> np.ndarray:
    r = np.asarray(returns, dtype=np.float64)
    rf = np.broadcast_to(np.asarray(risk_free, dtype=np.float64), r.shape)
    return r - rf


def sharpe(returns, risk_free=0.0, periods: int = TRADING_DAYS) -> float:
    """Mean daily excess return over the sample standard deviation of daily returns, times sqrt(periods)."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size < 2:
        raise ValueError("sharpe needs at least two returns")
    ex = _excess(r, risk_free)
    # a constant series can leave a rounding-sized std, so test equality directly
    if np.all(r == r[0]):
        if np.all(ex == 0.0):
            return 0.0
        raise ZeroDivisionError("sharpe undefined for zero-variance returns")
    return float(ex.mean() / r.std(ddof=1) * math.sqrt(periods))


def downside_deviation(returns, risk_free=0.0) -> float:
    ex = _excess(returns, risk_free)
    neg = np.minimum(ex, 0.0)
    return float(math.sqrt(np.mean(neg * neg)))


def sortino(returns, risk_free=0.0, periods: int = TRADING_DAYS) -> float | None:
    """Mean excess return over downside deviation, annualized.

    Returns ``None`` when no excess return is negative.
    """
    ex = _excess(returns, risk_free)
    if ex.size < 1:
        raise ValueError("sortino needs at least one return")
    if not np.any(ex < 0):
        return None
    return float(ex.mean() / downside_deviation(returns, risk_free) * math.sqrt(periods))


def annualized_return(returns, periods: int = TRADING_DAYS) -> float:
    r = np.asarray(returns, dtype=np.float64)
    if r.size == 0:
        return 0.0
    growth = float(np.prod(1.0 + r))
    return growth ** (periods / r.size) - 1.0


@dataclass
class PerformanceReport:
    dates: list[dt.date]
    daily_returns: np.ndarray
    cumulative: np.ndarray
    ann_return_pct: float
    sharpe: float | None
    sortino: float | None
    rebalances: int
    metadata: dict = field(default_factory=dict)

    @property
    def n_days(self) -> int:
        return int(self.daily_returns.size)

    def to_dict(self) -> dict:
        return {
            "ann_return_pct": self.ann_return_pct,
            "sharpe": self.sharpe,
            "sortino": self.sortino,
            "n_days": self.n_days,
            "rebalances": self.rebalances,
            **self.metadata,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_equity_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EQUITY_HEADER)
            for d, r, c in zip(self.dates, self.daily_returns, self.cumulative[1:]):
                w.writerow([d.isoformat(), repr(float(r)), repr(float(c))])


def run_backtest(
    weights: Sequence[WeightVector],
    returns,
    risk_free=0.0,
    cost_per_turnover: float = 0.0,
    periods: int = TRADING_DAYS,
) -> PerformanceReport:
    """Daily portfolio returns ``sum_i w_i(t) r_i(t)`` for each weight vector's date.

    ``returns`` is a :class:`~lstm_gcn.data.ReturnsMatrix`. ``risk_free`` is a
    daily rate: a constant or a mapping from date to rate. Weights formed from
    information dated on or after the day they earn raise ``AlignmentError``.
    """
    row = {d: k for k, d in enumerate(returns.dates)}
    col = {t: k for k, t in enumerate(returns.tickers)}
    daily, dates, rf = [], [], []
    prev = None
    for wv in weights:
        if wv.date not in row:
            raise AlignmentError(f"no realized returns for {wv.date}")
        if wv.info_date is not None and wv.info_date >= wv.date:
            raise AlignmentError(f"weights for {wv.date} use data from {wv.info_date}")
        try:
            cols = [col[t] for t in wv.tickers]
        except KeyError as exc:
            raise AlignmentError(f"ticker {exc.args[0]!r} missing from returns") from exc
        realized = returns.values[row[wv.date], cols]
        ret = float(wv.weights @ realized)
        if cost_per_turnover:
            turnover = np.abs(wv.weights - (prev if prev is not None else 0.0)).sum()
            ret -= cost_per_turnover * turnover
        prev = wv.weights
        daily.append(ret)
        dates.append(wv.date)
        rf.append(float(risk_free.get(wv.date, 0.0)) if isinstance(risk_free, dict) else float(risk_free))
    daily_arr = np.array(daily)
    rf_arr = np.array(rf)
    cumulative = np.concatenate([[1.0], np.cumprod(1.0 + daily_arr)])
    shp = srt = None
    if daily_arr.size >= 2:
        try:
            shp = sharpe(daily_arr, rf_arr, periods)
        except ZeroDivisionError:
            shp = None
        srt = sortino(daily_arr, rf_arr, periods)
    return PerformanceReport(
        dates=dates,
        daily_returns=daily_arr,
        cumulative=cumulative,
        ann_return_pct=100.0 * annualized_return(daily_arr, periods),
        sharpe=shp,
        sortino=srt,
        rebalances=sum(1 for w in weights if np.any(w.weights != 0)),
        metadata={"downside_convention": DOWNSIDE_CONVENTION, "annualization": periods},
    )


def read_risk_free_csv(path) -> dict[dt.date, float]:
    """``date,rate`` with daily rates as decimals."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[dt.date.fromisoformat(row["date"])] = float(row["rate"])
    return out
