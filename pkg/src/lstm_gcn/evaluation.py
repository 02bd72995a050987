"""Training loop, Adam, predictive metrics and the window-length robustness sweep."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import numerics as nx
from .models import Model

log = logging.getLogger(__name__)

METRIC_KEYS = ("mae", "mse", "r2_mean", "r2_per_node", "correctness_pct", "t_stat", "p_value")
COMPARISON_COLUMNS = ["models", "MAE", "MSE", "R^2", "Correctness (%)",
                      "ann. Return (%)", "ann. Sharpe Ratio", "ann. Sortino Ratio"]
ROBUSTNESS_COLUMNS = ["length of rolling window", "ann. Return (%)", "ann. Sharpe Ratio",
                      "ann. Sortino Ratio", "R^2", "t-statistic", "p-value"]


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    window: int = 60
    retain: int = 3
    variant: str = "lstm-gcn"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


class Adam:
    """Adam over one flat buffer; parameter arrays become views into it."""

    def __init__(self, params: Sequence[nx.Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        sizes = [p.values.size for p in self.params]
        self.bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.flat = np.concatenate([p.values.reshape(-1) for p in self.params]) if self.params else np.zeros(0)
        for p, a, b in zip(self.params, self.bounds[:-1], self.bounds[1:]):
            p.values = self.flat[a:b].reshape(p.values.shape)
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)
        self._g = np.zeros_like(self.flat)
        self._tmp = np.zeros_like(self.flat)
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        g, tmp = self._g, self._tmp
        for p, a, b in zip(self.params, self.bounds[:-1], self.bounds[1:]):
            if p.grad is None:
                g[a:b] = 0.0
            else:
                g[a:b] = p.grad.reshape(-1)
        self.m *= self.beta1
        np.multiply(g, 1.0 - self.beta1, out=tmp)
        self.m += tmp
        self.v *= self.beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - self.beta2
        self.v += tmp
        # p -= lr * m_hat / (sqrt(v_hat) + eps)
        np.divide(self.v, 1.0 - self.beta2 ** self.t, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += self.eps
        np.divide(self.m, tmp, out=tmp)
        tmp *= self.lr / (1.0 - self.beta1 ** self.t)
        self.flat -= tmp


def feature_scale(samples) -> float:
    sd = float(np.concatenate([s.features.reshape(-1) for s in samples]).std())
    return sd if sd > 0 else 1.0


def train(model: Model, samples, config: TrainConfig, progress: Callable | None = None):
    """Fit ``model`` with Adam on MSE, one window per step, in chronological order.

    Returns ``(model, loss_trace)`` where the trace holds the mean training loss
    of each epoch (in standardized units when the model standardizes).
    """
    samples = list(samples)
    if not samples:
        raise ValueError("training set is empty")
    if model.config.standardize:
        model.scale = feature_scale(samples)
    params = model.parameters()
    trace: list[float] = []
    carry = model.config.carry_state
    if not params or config.epochs == 0:
        model.state = _roll_state(model, samples) if carry and params else None
        return model, trace
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    for epoch in range(config.epochs):
        state = None
        total = 0.0
        for s in samples:
            opt.zero_grad()
            with nx.Tape():
                pred, new_state = model.forward(s.graph, s.features, state)
                loss = nx.mse_loss(pred, nx.Tensor(s.target / model.scale))
                value = float(loss.values)
                if not math.isfinite(value):
                    raise NumericalError(f"non-finite loss {value} at epoch {epoch}, window ending {s.feature_end}")
                nx.backward(loss)
            opt.step()
            total += value
            state = [st.detach() for st in new_state] if carry and new_state is not None else None
        trace.append(total / len(samples))
        if progress is not None:
            progress(epoch, trace[-1])
        log.debug("epoch %d loss %.6g", epoch, trace[-1])
    model.state = _roll_state(model, samples) if carry else None
    return model, trace


def _roll_state(model: Model, samples):
    state = None
    for s in samples:
        _, state = model.predict(s.graph, s.features, state)
    return state


def predict_all(model: Model, samples) -> np.ndarray:
    """Predictions for chronologically ordered samples, carrying state if configured."""
    state = model.state if model.config.carry_state else None
    preds = []
    for s in samples:
        p, new_state = model.predict(s.graph, s.features, state)
        preds.append(p)
        if model.config.carry_state:
            state = new_state
    return np.array(preds)


# ------------------------------------------------------------------ metrics


def r_squared(pred, true) -> float | None:
    """``1 - SS_res / SS_tot`` around the series' own mean; ``None`` for a constant series."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(true, dtype=np.float64)
    if p.shape != y.shape or y.size < 2:
        raise ValueError("r_squared needs equal-length series of length >= 2")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    return 1.0 - float(np.sum((y - p) ** 2)) / ss_tot


def directional_correctness(pred, true) -> float | None:
    """Percent of entries with matching sign, ignoring entries where ``true == 0``."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(true, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError("shapes differ")
    keep = y != 0
    if not keep.any():
        return None
    return 100.0 * float(np.mean(np.sign(p[keep]) == np.sign(y[keep])))


def r2_ttest(r2_values) -> tuple[float, float]:
    """One-sample, one-sided t-test of ``mean(R^2) > 0``."""
    x = np.asarray(r2_values, dtype=np.float64)
    if x.size < 2:
        raise ValueError("t-test needs at least two values")
    # identical values can leave a rounding-sized std, so test equality directly
    if np.all(x == x[0]):
        raise ZeroDivisionError("t-test undefined for zero variance")
    sd = x.std(ddof=1)
    if sd == 0.0:  # distinct but tiny values whose squared deviations underflow
        raise ZeroDivisionError("t-test variance underflows to zero")
    t = float(x.mean() / (sd / math.sqrt(x.size)))
    return t, float(stats.t.sf(t, df=x.size - 1))


@dataclass
class MetricsReport:
    mae: float
    mse: float
    r2_per_node: list
    r2_mean: float | None
    correctness_pct: float | None
    t_stat: float | None
    p_value: float | None

    def __post_init__(self):
        if self.mse < 0 or self.mae < 0:
            raise ValueError("errors must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in METRIC_KEYS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def metrics_from_predictions(pred, true) -> MetricsReport:
    """All predictive metrics for a ``time x node`` prediction matrix."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(true, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {p.shape} differs from truth {y.shape}")
    err = p - y
    per_node = [r_squared(p[:, j], y[:, j]) for j in range(y.shape[1])] if y.shape[0] >= 2 else []
    defined = np.array([v for v in per_node if v is not None])
    t = pv = None
    if defined.size >= 2:
        try:
            t, pv = r2_ttest(defined)
        except ZeroDivisionError:
            pass
    return MetricsReport(
        mae=float(np.mean(np.abs(err))),
        mse=float(np.mean(err * err)),
        r2_per_node=per_node,
        r2_mean=float(defined.mean()) if defined.size else None,
        correctness_pct=directional_correctness(p, y),
        t_stat=t,
        p_value=pv,
    )


def evaluate(model: Model, samples) -> tuple[MetricsReport, np.ndarray]:
    """Metrics over chronologically ordered test windows, plus the prediction matrix."""
    samples = list(samples)
    if not samples:
        raise ValueError("test set is empty")
    preds = predict_all(model, samples)
    truth = np.array([s.target for s in samples])
    return metrics_from_predictions(preds, truth), preds


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def comparison_row(name: str, metrics: MetricsReport, perf) -> list[str]:
    return [name, _fmt(metrics.mae), _fmt(metrics.mse), _fmt(metrics.r2_mean),
            _fmt(metrics.correctness_pct), _fmt(perf.ann_return_pct if perf else None),
            _fmt(perf.sharpe if perf else None), _fmt(perf.sortino if perf else None)]


def robustness_row(window: int, metrics: MetricsReport, perf) -> list[str]:
    return [str(window), _fmt(perf.ann_return_pct), _fmt(perf.sharpe), _fmt(perf.sortino),
            _fmt(metrics.r2_mean), _fmt(metrics.t_stat), _fmt(metrics.p_value)]


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


@dataclass
class SweepResult:
    window: int
    metrics: MetricsReport
    performance: object
    loss_trace: list = field(default_factory=list)


def sweep_windows(base_window: int, offsets=(-20, -10, 0, 10, 20)) -> list[int]:
    windows = [base_window + o for o in offsets]
    if min(windows) < 2:
        raise ValueError(f"window offsets {offsets} give a window below 2")
    return windows


def robustness_sweep(run_one: Callable[[int], SweepResult], base_window: int = 60,
                     offsets=(-20, -10, 0, 10, 20), workers: int = 1) -> list[SweepResult]:
    """Train and evaluate once per window length; rows keep the order of ``offsets``.

    ``run_one(window)`` performs one full experiment with every other setting held
    fixed. With ``workers > 1`` rows run in a thread pool.
    """
    windows = sweep_windows(base_window, offsets)
    if workers <= 1:
        return [run_one(w) for w in windows]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_one, windows))
