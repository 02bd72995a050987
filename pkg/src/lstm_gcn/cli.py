"""Batch entry point: ``python -m lstm_gcn <subcommand> [flags]``.

Flags override values from an optional ``--config`` file of ``key = value``
lines. Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import backtest as bt
from . import data
from . import evaluation as ev
from . import graph
from . import models
from . import pipeline as pl
from .pipeline import RunConfig

log = logging.getLogger("lstm_gcn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
SUBCOMMANDS = ("synth", "train", "evaluate", "backtest", "graph-stats", "gradcheck", "sweep")
NEEDS_SEED = ("synth", "train", "sweep", "gradcheck")
NO_GRAPH = ("lstm", "fcl", "zero", "mean")


class UsageError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text) -> list[int]:
    if isinstance(text, list):
        return [int(v) for v in text]
    return [int(v) for v in str(text).replace(",", " ").split()]


_CONVERTERS = {"int": int, "float": float, "bool": _bool, "str": str, "list[int]": _int_list}


def _converter(f: dataclasses.Field):
    return _CONVERTERS[str(f.type).replace(" | None", "")]


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "subcommand"}


def read_config_file(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment; keys may use dashes."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELDS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags take precedence")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, f in FIELDS.items():
        flag = "--" + name.replace("_", "-")
        common.add_argument(flag, dest=name, default=argparse.SUPPRESS, type=str,
                            metavar=_converter(f).__name__.lstrip("_").upper())
    parser = argparse.ArgumentParser(prog="lstm_gcn", description="Value-chain graph return forecasting.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "synth": "write a planted-signal price CSV and edge CSV",
        "train": "fit a model and write a checkpoint",
        "evaluate": "score a checkpoint on the test split",
        "backtest": "market-neutral backtest of a predictions CSV",
        "graph-stats": "summary statistics of the value-chain graph",
        "gradcheck": "compare autodiff and finite-difference gradients for every model",
        "sweep": "window-length robustness table",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    raw = read_config_file(args.config) if getattr(args, "config", None) else {}
    raw.update({k: v for k, v in vars(args).items() if k in FIELDS})
    values = {}
    for key, value in raw.items():
        try:
            values[key] = _converter(FIELDS[key])(value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}") from exc
    cfg = RunConfig(subcommand=args.subcommand, **values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.variant not in models.VARIANTS:
        raise UsageError(f"unknown variant {cfg.variant!r}; choose from {', '.join(models.VARIANTS)}")
    if cfg.subcommand in NEEDS_SEED and cfg.seed is None:
        raise UsageError(f"{cfg.subcommand} needs an explicit --seed")
    if cfg.window < 2:
        raise UsageError("window must be at least 2")
    if not 0.0 < cfg.train_fraction < 1.0:
        raise UsageError("train-fraction must lie strictly between 0 and 1")
    if cfg.epochs < 0 or cfg.learning_rate < 0:
        raise UsageError("epochs and learning-rate must be non-negative")
    if cfg.cap <= 0:
        raise UsageError("cap must be positive")


# -------------------------------------------------------------- outputs


class Outputs:
    """Collects written files so the manifest can fingerprint them."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.root / name

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)

    def manifest(self, cfg: RunConfig, wall_time: float, extra=None) -> None:
        digests = {n: hashlib.sha256((self.root / n).read_bytes()).hexdigest() for n in sorted(set(self.files))}
        blob = {
            "subcommand": cfg.subcommand,
            "config": cfg.to_dict(),
            "seed": cfg.seed,
            "code_version": __version__,
            "generator": "numpy PCG64 via default_rng(seed)",
            "outputs": digests,
            "wall_time_s": round(wall_time, 3),
        }
        if extra:
            blob.update(extra)
        (self.root / "manifest.json").write_text(pl.to_json(blob))


# ------------------------------------------------------------ subcommands


def cmd_synth(cfg: RunConfig, out: Outputs) -> dict:
    try:
        spec = cfg.synthetic_spec()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    syn = data.generate_synthetic(spec)
    data.write_prices_csv(out.path("prices.csv"), syn.prices)
    graph.write_edges_csv(out.path("edges.csv"), syn.edges)
    return {}


def _dataset(cfg: RunConfig) -> pl.Dataset:
    return pl.load_dataset(cfg, need_graph=cfg.variant not in NO_GRAPH)


def cmd_train(cfg: RunConfig, out: Outputs) -> dict:
    ds = _dataset(cfg)
    train, _ = pl.split_samples(cfg, ds)
    model, trace = pl.train_model(cfg, train, len(ds.returns.tickers), np.flatnonzero(ds.output_mask),
                                  progress=lambda e, l: log.info("epoch %d loss %.6g", e, l))
    model.save(out.path("model.json"))
    out.write_text("loss.csv", ev.rows_to_csv(["epoch", "loss"], [[i, repr(v)] for i, v in enumerate(trace)]))
    return {"train_windows": len(train)}


def _load_model(cfg: RunConfig, ds: pl.Dataset) -> models.Model:
    if cfg.checkpoint:
        model = models.Model.load(pl._existing(cfg.checkpoint, "checkpoint"))
        if model.config.n_nodes != len(ds.returns.tickers):
            raise data.DataError("checkpoint node count does not match the price data")
        return model
    if cfg.variant in ("zero", "mean"):
        seed = 0 if cfg.seed is None else cfg.seed
        return models.Model(dataclasses.replace(cfg, seed=seed).model_config(
            len(ds.returns.tickers), np.flatnonzero(ds.output_mask)))
    raise UsageError(f"evaluate needs --checkpoint for variant {cfg.variant}")


def cmd_evaluate(cfg: RunConfig, out: Outputs) -> dict:
    ds = _dataset(cfg)
    model = _load_model(cfg, ds)
    _, test = pl.split_samples(cfg, ds, model.config.n_features + 1)
    metrics, preds = ev.evaluate(model, test)
    out.write_text("metrics.json", metrics.to_json() + "\n")
    out.write_text("metrics.csv", ev.rows_to_csv(ev.COMPARISON_COLUMNS,
                                                 [ev.comparison_row(model.config.variant, metrics, None)]))
    pl.write_predictions_csv(out.path("predictions.csv"), preds, test, ds.output_tickers)
    return {"test_windows": len(test)}


def cmd_backtest(cfg: RunConfig, out: Outputs) -> dict:
    ds = pl.load_dataset(cfg, need_graph=False)
    dates, info, tickers, mat = pl.read_predictions_csv(pl._existing(cfg.predictions, "predictions"))
    weights = []
    for d, i, row in zip(dates, info, mat):
        mask = ds.universe.mask(tickers, i) if ds.universe else None
        weights.append(bt.weights_from_predictions(row, mask, cfg.cap, d, tickers, i))
    perf = bt.run_backtest(weights, ds.returns, pl.risk_free_for(cfg), cfg.cost)
    perf.write_json(out.path("performance.json"))
    perf.write_equity_csv(out.path("equity.csv"))
    with open(out.path("weights.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "info_date", "ticker", "weight"])
        for wv in weights:
            for t, x in zip(wv.tickers, wv.weights):
                w.writerow([wv.date.isoformat(), wv.info_date.isoformat(), t, repr(float(x))])
    return {}


def cmd_graph_stats(cfg: RunConfig, out: Outputs) -> dict:
    edges = graph.read_edges_csv(pl._existing(cfg.edges, "edges"))
    nodes = data.read_prices_csv(pl._existing(cfg.prices, "prices")).tickers if cfg.prices else None
    if cfg.as_of:
        as_of = graph.parse_date(cfg.as_of)
    elif edges:
        as_of = max(graph.parse_date(e.valid_from) for e in edges)
    else:
        raise data.DataError("edge file is empty; pass --as-of with a price file")
    g = graph.build_graph(edges, as_of, nodes, min_confidence=cfg.min_confidence, strict=nodes is not None)
    graph.write_stats_json(out.path("graph_stats.json"), graph.graph_stats(g))
    return {"as_of": as_of.isoformat()}


def cmd_gradcheck(cfg: RunConfig, out: Outputs) -> dict:
    errors = pl.gradcheck_all(cfg.require_seed())
    out.write_text("gradcheck.json", pl.to_json({"tolerance": cfg.tolerance, "max_relative_error": errors}))
    bad = {v: e for v, e in errors.items() if not e < cfg.tolerance}
    if bad:
        raise ev.NumericalError(f"gradient check failed: {bad}")
    return {}


def cmd_sweep(cfg: RunConfig, out: Outputs) -> dict:
    results = pl.sweep(cfg, _dataset(cfg))
    out.write_text("robustness.csv", pl.sweep_csv(results))
    return {"windows": [r.window for r in results]}


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "backtest": cmd_backtest,
    "graph-stats": cmd_graph_stats,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        cfg = resolve_config(args)
        out = Outputs(cfg.out)
        extra = COMMANDS[cfg.subcommand](cfg, out)
    except (UsageError, models.ModelError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, graph.GraphError, bt.AlignmentError, FileNotFoundError,
            KeyError, csv.Error) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ev.NumericalError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if "out" in locals():
            out.manifest(cfg, time.perf_counter() - start, {"status": "failed"})
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out.manifest(cfg, time.perf_counter() - start, extra)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
