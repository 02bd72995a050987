"""End-to-end experiment plumbing: data -> windows -> split -> train -> evaluate -> backtest.

The command-line entry point and the robustness sweep both call into here, so a
run is fully described by a :class:`RunConfig`.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import backtest as bt
from . import data
from . import evaluation as ev
from . import graph
from . import models
from . import numerics as nx

PREDICTION_HEADER = ["target_date", "info_date", "ticker", "prediction", "target"]
GRADCHECK_VARIANTS = ("lstm-gcn", "tgcn", "gclstm", "lstm", "gcn", "fcl")


@dataclass
class RunConfig:
    """Every knob of one invocation. Paths are strings so the config echoes cleanly."""

    subcommand: str = ""
    prices: str | None = None
    edges: str | None = None
    universe: str | None = None
    risk_free: str | None = None
    predictions: str | None = None
    checkpoint: str | None = None
    out: str = "out"
    variant: str = "lstm-gcn"
    window: int = 60
    train_fraction: float = 0.8
    seed: int | None = None
    # synthetic generator
    n_nodes: int = 30
    edge_model: str = "ring+er"
    p: float = 0.1
    beta: float = 0.6
    sigma: float = 0.01
    horizon: int = 2000
    # data filters
    min_confidence: float = graph.MIN_CONFIDENCE
    min_prices_per_day: int = 0
    min_trading_days: int = 0
    min_output_history: int = 0
    as_of: str | None = None
    # model
    hidden: int = 6
    layers: int = 2
    steps: int = 3
    retain: int | None = None
    readout: str = "flatten"
    readout_hidden: int | None = None
    gcn_activation: str = "relu"
    cheb_k: int = 2
    fcl_days: int = 10
    carry_state: bool | None = None
    standardize: bool = True
    # training
    epochs: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # backtest
    cap: float = 0.5
    cost: float = 0.0
    # sweep
    offsets: list[int] = field(default_factory=lambda: [-20, -10, 0, 10, 20])
    workers: int = 1
    # gradcheck
    tolerance: float = 1e-4

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def synthetic_spec(self) -> data.SyntheticSpec:
        return data.SyntheticSpec(self.n_nodes, self.edge_model, self.p, self.beta,
                                  self.sigma, self.horizon, self.require_seed())

    def require_seed(self) -> int:
        if self.seed is None:
            raise ValueError("a seed is required; pass --seed")
        return int(self.seed)

    def train_config(self, window: int | None = None) -> ev.TrainConfig:
        return ev.TrainConfig(self.epochs, self.learning_rate, self.beta1, self.beta2, self.eps,
                              self.require_seed(), window or self.window,
                              self.retain or self.steps, self.variant)

    def model_config(self, n_nodes: int, output_index, window: int | None = None) -> models.ModelConfig:
        return models.ModelConfig(
            variant=self.variant, n_nodes=n_nodes, n_features=(window or self.window) - 1,
            output_index=list(output_index), hidden=self.hidden, layers=self.layers,
            steps=self.steps, retain=self.retain, gcn_activation=self.gcn_activation,
            cheb_k=self.cheb_k, readout=self.readout, readout_hidden=self.readout_hidden,
            fcl_days=self.fcl_days, carry_state=self.carry_state, standardize=self.standardize,
            seed=self.require_seed(),
        )


# -------------------------------------------------------------------- data


@dataclass
class Dataset:
    prices: data.PriceTable
    returns: data.ReturnsMatrix
    timeline: graph.GraphTimeline | None
    output_mask: np.ndarray
    universe: data.Universe | None = None

    @property
    def output_tickers(self) -> list[str]:
        return [t for t, m in zip(self.returns.tickers, self.output_mask) if m]


def _existing(path: str | None, what: str) -> str:
    if not path:
        raise FileNotFoundError(f"missing required input: {what}")
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def load_dataset(cfg: RunConfig, need_graph: bool = True) -> Dataset:
    prices = data.read_prices_csv(_existing(cfg.prices, "prices"))
    universe = data.read_universe_csv(_existing(cfg.universe, "universe")) if cfg.universe else None
    prices, mask = data.apply_filters(
        prices, cfg.min_prices_per_day, cfg.min_trading_days, cfg.min_output_history,
        universe.members() if universe else None)
    returns = data.compute_returns(prices)
    timeline = None
    if need_graph:
        edges = graph.read_edges_csv(_existing(cfg.edges, "edges"))
        timeline = graph.GraphTimeline(edges, returns.tickers, cfg.min_confidence)
    return Dataset(prices, returns, timeline, mask, universe)


def split_samples(cfg: RunConfig, ds: Dataset, window: int | None = None):
    w = window or cfg.window
    source = ds.timeline if ds.timeline is not None else graph.NormalizedAdjacency(np.eye(len(ds.returns.tickers)))
    samples = data.build_windows(ds.returns, source, w, ds.output_mask)
    return data.chronological_split(samples, cfg.train_fraction)


# --------------------------------------------------------------- experiment


@dataclass
class RunResult:
    model: models.Model
    loss_trace: list
    metrics: ev.MetricsReport
    predictions: np.ndarray
    test: list
    performance: bt.PerformanceReport | None = None


def train_model(cfg: RunConfig, train_samples, n_nodes: int, output_index, window=None, progress=None):
    model = models.Model(cfg.model_config(n_nodes, output_index, window))
    return ev.train(model, train_samples, cfg.train_config(window), progress)


def weights_for(cfg: RunConfig, preds: np.ndarray, test, tickers: Sequence[str],
                universe: data.Universe | None) -> list[bt.WeightVector]:
    out = []
    for row, s in zip(preds, test):
        mask = universe.mask(tickers, s.feature_end) if universe else None
        out.append(bt.weights_from_predictions(row, mask, cfg.cap, s.target_date, tickers, s.feature_end))
    return out


def risk_free_for(cfg: RunConfig):
    return bt.read_risk_free_csv(_existing(cfg.risk_free, "risk-free")) if cfg.risk_free else 0.0


def run_experiment(cfg: RunConfig, ds: Dataset | None = None, window: int | None = None,
                   progress=None) -> RunResult:
    """Train on the first split, evaluate and backtest on the second."""
    ds = ds or load_dataset(cfg, need_graph=cfg.variant not in ("lstm", "fcl", "zero", "mean"))
    train_samples, test = split_samples(cfg, ds, window)
    out_idx = np.flatnonzero(ds.output_mask)
    model, trace = train_model(cfg, train_samples, len(ds.returns.tickers), out_idx, window, progress)
    metrics, preds = ev.evaluate(model, test)
    weights = weights_for(cfg, preds, test, ds.output_tickers, ds.universe)
    perf = bt.run_backtest(weights, ds.returns, risk_free_for(cfg), cfg.cost)
    return RunResult(model, trace, metrics, preds, test, perf)


def sweep(cfg: RunConfig, ds: Dataset | None = None) -> list[ev.SweepResult]:
    ds = ds or load_dataset(cfg, need_graph=cfg.variant not in ("lstm", "fcl", "zero", "mean"))

    def one(window: int) -> ev.SweepResult:
        r = run_experiment(cfg, ds, window)
        return ev.SweepResult(window, r.metrics, r.performance, r.loss_trace)

    return ev.robustness_sweep(one, cfg.window, tuple(cfg.offsets), cfg.workers)


def sweep_csv(results: Sequence[ev.SweepResult]) -> str:
    rows = [ev.robustness_row(r.window, r.metrics, r.performance) for r in results]
    return ev.rows_to_csv(ev.ROBUSTNESS_COLUMNS, rows)


# ----------------------------------------------------------- prediction I/O


def write_predictions_csv(path, preds: np.ndarray, test, tickers: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for row, s in zip(preds, test):
            for t, p, y in zip(tickers, row, s.target):
                w.writerow([s.target_date.isoformat(), s.feature_end.isoformat(), t, repr(float(p)), repr(float(y))])


def read_predictions_csv(path):
    """Back to ``(target_dates, info_dates, tickers, pred matrix)``."""
    by_date: dict[dt.date, dict[str, float]] = {}
    info: dict[dt.date, dt.date] = {}
    tickers: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PREDICTION_HEADER:
            raise data.DataError(f"{path}: expected header {PREDICTION_HEADER}")
        for row in reader:
            d = dt.date.fromisoformat(row["target_date"])
            info[d] = dt.date.fromisoformat(row["info_date"])
            if row["ticker"] not in tickers:
                tickers.append(row["ticker"])
            by_date.setdefault(d, {})[row["ticker"]] = float(row["prediction"])
    dates = sorted(by_date)
    try:
        mat = np.array([[by_date[d][t] for t in tickers] for d in dates])
    except KeyError as exc:
        raise data.DataError(f"{path}: ticker {exc.args[0]!r} missing on some date") from exc
    return dates, [info[d] for d in dates], tickers, mat


# ---------------------------------------------------------------- gradcheck


def toy_instance(variant: str, seed: int = 0, n: int = 4, window: int = 5):
    """Random graph, window, parameters, and target for a small gradient check.

    Parameters are drawn uniformly so no pre-activation starts exactly on a ReLU
    kink, and the target sits within 0.01 of the model output: the roundoff of
    a central difference grows with the loss value, and a small residual keeps
    it well below the tolerance on small-gradient coordinates.
    """
    rng = np.random.default_rng(seed)
    a = np.triu((rng.random((n, n)) < 0.6) * rng.uniform(0.2, 1.0, (n, n)), k=1)
    names = [f"n{i}" for i in range(n)]
    edges = [(i, j, float(a[i, j]), None) for i in range(n) for j in range(i + 1, n) if a[i, j]]
    adj = graph.normalize(graph.ValueChainGraph(names, edges))
    feats = rng.uniform(-1.0, 1.0, (window - 1, n))
    # narrow widths keep the coordinate-wise difference check fast
    cfg = models.ModelConfig(variant, n, window - 1, list(range(n)), hidden=3, readout_hidden=5,
                             fcl_days=window - 1, seed=seed)
    model = models.Model(cfg)
    for p in model.parameters():
        p.values[...] = rng.uniform(-0.5, 0.5, p.shape)
    with nx.no_grad():
        pred, _ = model.forward(adj, feats)
    target = pred.values + 0.01 * rng.uniform(-1.0, 1.0, pred.shape)
    return model, adj, feats, target


def gradcheck_variant(variant: str, seed: int = 0) -> float:
    model, adj, feats, target = toy_instance(variant, seed)

    def loss():
        pred, _ = model.forward(adj, feats)
        return nx.mse_loss(pred, nx.Tensor(target))

    return nx.finite_difference_check(loss, model.parameters())


def gradcheck_all(seed: int = 0, variants: Sequence[str] = GRADCHECK_VARIANTS) -> dict[str, float]:
    return {v: gradcheck_variant(v, seed) for v in variants}


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
