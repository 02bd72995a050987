"""Price ingestion, returns, rolling windows, and the planted-signal generator."""

from __future__ import annotations

import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import Edge, GraphTimeline, NormalizedAdjacency, parse_date

PRICE_HEADER = ["date", "ticker", "close"]
UNIVERSE_HEADER = ["ticker", "start_date", "end_date"]


class DataError(ValueError):
    """Input data violates a precondition (ordering, positivity, coverage)."""


@dataclass
class PriceTable:
    """Closing prices, ``close[t, i]`` for date ``t`` and ticker ``i``; NaN marks missing."""

    dates: list[dt.date]
    tickers: list[str]
    close: np.ndarray

    def __post_init__(self):
        self.close = np.asarray(self.close, dtype=np.float64)
        if self.close.shape != (len(self.dates), len(self.tickers)):
            raise DataError(f"close has shape {self.close.shape}, expected "
                            f"{(len(self.dates), len(self.tickers))}")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")
        if len(set(self.tickers)) != len(self.tickers):
            raise DataError("tickers must be unique")


@dataclass
class ReturnsMatrix:
    """Simple daily returns; row ``t`` is the return earned on ``dates[t]``."""

    dates: list[dt.date]
    tickers: list[str]
    values: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def read_prices_csv(path) -> PriceTable:
    """Long-format ``date,ticker,close``; blank or ``nan`` close means missing."""
    cells: dict[tuple[dt.date, str], float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(PRICE_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            raw = (row["close"] or "").strip()
            try:
                px = float(raw) if raw else math.nan
            except ValueError as exc:
                raise DataError(f"{path}:{line}: bad close {raw!r}") from exc
            cells[(parse_date(row["date"]), row["ticker"])] = px
    dates = sorted({d for d, _ in cells})
    tickers = sorted({t for _, t in cells})
    di = {d: k for k, d in enumerate(dates)}
    ti = {t: k for k, t in enumerate(tickers)}
    close = np.full((len(dates), len(tickers)), np.nan)
    for (d, t), px in cells.items():
        close[di[d], ti[t]] = px
    return PriceTable(dates, tickers, close)


def write_prices_csv(path, prices: PriceTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRICE_HEADER)
        for t, d in enumerate(prices.dates):
            for i, tic in enumerate(prices.tickers):
                px = prices.close[t, i]
                w.writerow([d.isoformat(), tic, "" if np.isnan(px) else repr(float(px))])


@dataclass
class Universe:
    """Index membership intervals per ticker (inclusive bounds; open end allowed)."""

    intervals: dict[str, list[tuple[dt.date, dt.date | None]]] = field(default_factory=dict)

    def contains(self, ticker: str, date) -> bool:
        date = parse_date(date)
        for start, end in self.intervals.get(ticker, ()):
            if start <= date and (end is None or date <= end):
                return True
        return False

    def mask(self, tickers: Sequence[str], date) -> np.ndarray:
        return np.array([self.contains(t, date) for t in tickers], dtype=bool)

    def members(self) -> set[str]:
        return set(self.intervals)


def read_universe_csv(path) -> Universe:
    out: dict[str, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            end = (row.get("end_date") or "").strip()
            out.setdefault(row["ticker"], []).append(
                (parse_date(row["start_date"]), parse_date(end) if end else None))
    return Universe(out)


def write_universe_csv(path, universe: Universe) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(UNIVERSE_HEADER)
        for tic in sorted(universe.intervals):
            for start, end in universe.intervals[tic]:
                w.writerow([tic, start.isoformat(), end.isoformat() if end else ""])


def compute_returns(prices: PriceTable) -> ReturnsMatrix:
    """``p_t / p_{t-1} - 1``; zero wherever either price is missing."""
    if len(prices.dates) < 2:
        raise DataError("need at least two dates to compute returns")
    p = prices.close
    if np.any(p[~np.isnan(p)] <= 0):
        raise DataError("prices must be positive")
    with np.errstate(invalid="ignore"):
        r = p[1:] / p[:-1] - 1.0
    r[np.isnan(r)] = 0.0
    return ReturnsMatrix(list(prices.dates[1:]), list(prices.tickers), r)


def apply_filters(
    prices: PriceTable,
    min_prices_per_day: int = 0,
    min_trading_days: int = 0,
    min_output_history: int = 0,
    output_universe: set[str] | None = None,
) -> tuple[PriceTable, np.ndarray]:
    """Drop sparse days, then short-history tickers; return the output-node mask.

    A ticker is an output node when it has at least ``min_output_history`` valid
    prices (counted after the day filter) and, if ``output_universe`` is given,
    belongs to it. All other surviving tickers remain input-only nodes.
    """
    if min(min_prices_per_day, min_trading_days, min_output_history) < 0:
        raise ValueError("thresholds must be non-negative")
    valid = ~np.isnan(prices.close)
    keep_days = valid.sum(axis=1) >= min_prices_per_day
    close = prices.close[keep_days]
    dates = [d for d, k in zip(prices.dates, keep_days) if k]
    history = (~np.isnan(close)).sum(axis=0)
    keep_tickers = history >= min_trading_days
    if not keep_tickers.any() or not dates:
        raise DataError("all tickers filtered out")
    tickers = [t for t, k in zip(prices.tickers, keep_tickers) if k]
    history = history[keep_tickers]
    mask = history >= min_output_history
    if output_universe is not None:
        mask &= np.array([t in output_universe for t in tickers], dtype=bool)
    return PriceTable(dates, tickers, close[:, keep_tickers]), mask


@dataclass(frozen=True)
class RollingWindowSample:
    """One supervised example.

    ``features`` is ``(window - 1) x n`` past returns (oldest first), ``target``
    the next-day returns of the output nodes on ``target_date``.
    """

    features: np.ndarray
    graph: NormalizedAdjacency
    target: np.ndarray
    target_date: dt.date
    feature_end: dt.date
    index: int


GraphSource = Callable[[dt.date], NormalizedAdjacency]


def build_windows(
    returns: ReturnsMatrix,
    graph_source: GraphSource | NormalizedAdjacency,
    window: int,
    output_mask=None,
) -> list[RollingWindowSample]:
    """All ``T - window + 1`` rolling samples.

    Sample ``k`` uses return rows ``k .. k+window-2`` as features and row
    ``k+window-1`` as target; its graph is taken as of the last feature date.
    """
    T, n = returns.values.shape
    if window < 2:
        raise ValueError("window must be at least 2")
    if T < window:
        raise DataError(f"insufficient history: {T} return rows for window {window}")
    out_idx = np.flatnonzero(np.ones(n, bool) if output_mask is None else np.asarray(output_mask, bool))
    if out_idx.size == 0:
        raise DataError("no output nodes")
    samples = []
    for k in range(T - window + 1):
        last = k + window - 2
        end_date = returns.dates[last]
        g = graph_source if isinstance(graph_source, NormalizedAdjacency) else graph_source(end_date)
        samples.append(RollingWindowSample(
            features=returns.values[k:last + 1],
            graph=g,
            target=returns.values[last + 1, out_idx],
            target_date=returns.dates[last + 1],
            feature_end=end_date,
            index=k,
        ))
    return samples


def chronological_split(samples: Sequence, train_fraction: float = 0.8):
    """First ``floor(fraction * N)`` samples train, the rest test; no shuffling."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    cut = math.floor(train_fraction * len(samples))
    train, test = list(samples[:cut]), list(samples[cut:])
    if not train or not test:
        raise DataError(f"split of {len(samples)} samples leaves an empty side")
    return train, test


# ---------------------------------------------------------------- synthetic


EDGE_MODELS = ("ring", "er", "ring+er")


@dataclass(frozen=True)
class SyntheticSpec:
    """Lagged neighbour-spillover process on a random graph.

    ``r_j(t+1) = beta * mean_{i in N(j)} r_i(t) + sigma * eps``. ``horizon`` is
    the number of return rows; prices have one extra leading row.
    """

    n_nodes: int = 30
    edge_model: str = "ring+er"
    p: float = 0.1
    beta: float = 0.6
    sigma: float = 0.01
    horizon: int = 2000
    seed: int = 0
    start: dt.date = dt.date(2000, 1, 3)

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be at least 2")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must satisfy 0 <= beta < 1")
        if self.edge_model not in EDGE_MODELS:
            raise ValueError(f"edge_model must be one of {EDGE_MODELS}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")


@dataclass
class SyntheticData:
    prices: PriceTable
    returns: ReturnsMatrix
    edges: list[Edge]
    adjacency: np.ndarray


def business_days(start: dt.date, count: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < count:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def synthetic_adjacency(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.n_nodes
    a = np.zeros((n, n))
    if spec.edge_model in ("ring", "ring+er"):
        for j in range(n):
            k = (j + 1) % n
            if k != j:
                a[j, k] = a[k, j] = 1.0
    if spec.edge_model in ("er", "ring+er"):
        upper = np.triu(rng.random((n, n)) < spec.p, k=1)
        a[upper | upper.T] = 1.0
    np.fill_diagonal(a, 0.0)
    return a


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Sample graph, returns, and prices from ``spec`` using numpy's PCG64 seeded by ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_nodes, spec.horizon
    a = synthetic_adjacency(spec, rng)
    deg = a.sum(axis=1)
    if not a.any():
        warnings.warn("synthetic graph has no edges; returns are pure noise", stacklevel=2)
    mean_op = np.divide(a, deg[:, None], out=np.zeros_like(a), where=deg[:, None] > 0)
    noise = spec.sigma * rng.standard_normal((T, n))
    r = np.empty((T, n))
    r[0] = noise[0]
    for t in range(1, T):
        r[t] = spec.beta * (mean_op @ r[t - 1]) + noise[t]
    dates = business_days(spec.start, T + 1)
    close = 100.0 * np.vstack([np.ones(n), np.cumprod(1.0 + r, axis=0)])
    tickers = [f"N{j:03d}" for j in range(n)]
    prices = PriceTable(dates, tickers, close)
    valid_from = dates[0] - dt.timedelta(days=1)
    edges = [Edge(tickers[i], tickers[j], 1.0, valid_from)
             for i in range(n) for j in range(i + 1, n) if a[i, j]]
    returns = ReturnsMatrix(dates[1:], tickers, r)
    return SyntheticData(prices, returns, edges, a)


def timeline_for(edges: Sequence[Edge], tickers: Sequence[str], **kw) -> GraphTimeline:
    return GraphTimeline(list(edges), list(tickers), **kw)
