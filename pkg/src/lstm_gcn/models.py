"""Recurrent graph cells, baselines, and the readout MLP.

Every model consumes one rolling window: a ``(window - 1) x n`` block of past
returns and a normalized adjacency. Recurrent variants unroll over ``steps``
overlapping sub-windows; at step ``s`` the node-feature matrix is
``features[s : s + L].T`` with ``L = window - steps``, so the last step sees the
most recent ``L`` returns of every node. The hidden states of the top layer at
the last ``retain`` steps are concatenated and passed to the readout.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import numerics as nx
from .graph import NormalizedAdjacency
from .numerics import Tensor

VARIANTS = ("lstm-gcn", "tgcn", "gclstm", "lstm", "gcn", "fcl", "zero", "mean")
RECURRENT = ("lstm-gcn", "tgcn", "gclstm", "lstm")
CHECKPOINT_FORMAT = "lstm_gcn.checkpoint"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    """Configuration or input dimensions are inconsistent."""


# -------------------------------------------------------------- parameters


@dataclass
class GCNLayerParams:
    weight: Tensor
    activation: str = "relu"


@dataclass
class TwoLayerGCN:
    layer1: GCNLayerParams
    layer2: GCNLayerParams

    def __post_init__(self):
        if self.layer1.weight.shape[1] != self.layer2.weight.shape[0]:
            raise ModelError("layer1 output width must equal layer2 input width")

    @property
    def out_width(self) -> int:
        return self.layer2.weight.shape[1]


@dataclass
class GateParams:
    """Weights and biases of the gates of one recurrent cell, keyed by gate letter."""

    weights: dict[str, Tensor]
    biases: dict[str, Tensor]


@dataclass
class LSTMGCNCellParams:
    gcn_h: TwoLayerGCN
    gcn_c: TwoLayerGCN
    gcn_x: TwoLayerGCN
    gates: GateParams
    hidden: int


@dataclass
class TGCNCellParams:
    gcn_x: TwoLayerGCN
    gates: GateParams  # u (update), r (reset), c (candidate)
    hidden: int


@dataclass
class GCLSTMCellParams:
    theta_h: list[Tensor]
    theta_c: list[Tensor]
    gates: GateParams
    hidden: int


@dataclass
class LSTMCellParams:
    gates: GateParams
    hidden: int


@dataclass
class ReadoutMLP:
    weights: list[Tensor]
    biases: list[Tensor]
    activation: str = "relu"

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


@dataclass
class CellState:
    h: Tensor
    c: Tensor

    def detach(self) -> "CellState":
        return CellState(self.h.detach(), self.c.detach())


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk nested parameter containers in a fixed order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, dict):
        for k in sorted(obj):
            yield from named_parameters(obj[k], f"{prefix}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield from named_parameters(v, f"{prefix}.{i}")


# ----------------------------------------------------------- initialization


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def zeros(n: int, value: float = 0.0) -> Tensor:
    return Tensor(np.full(n, value), requires_grad=True)


def init_gcn(rng, widths: Sequence[int], activation: str = "relu") -> TwoLayerGCN:
    d0, d1, d2 = widths
    return TwoLayerGCN(GCNLayerParams(glorot(rng, d0, d1), activation),
                       GCNLayerParams(glorot(rng, d1, d2), activation))


def init_gates(rng, letters: str, fan_in: int, hidden: int, forget_bias: float = 1.0) -> GateParams:
    weights = {g: glorot(rng, fan_in, hidden) for g in letters}
    biases = {g: zeros(hidden, forget_bias if g == "f" else 0.0) for g in letters}
    return GateParams(weights, biases)


def init_mlp(rng, widths: Sequence[int], activation: str = "relu") -> ReadoutMLP:
    ws = [glorot(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
    bs = [zeros(b) for b in widths[1:]]
    return ReadoutMLP(ws, bs, activation)


# ------------------------------------------------------------------ forward


def _adj(a) -> Tensor:
    if isinstance(a, Tensor):
        return a
    if isinstance(a, NormalizedAdjacency):
        return Tensor(a.matrix)
    return Tensor(a)


def _check_rows(op: str, a: Tensor, x: Tensor) -> None:
    if a.shape[0] != x.shape[0]:
        raise ModelError(f"{op}: adjacency is {a.shape} but features have {x.shape[0]} rows")


def gcn_layer(p: GCNLayerParams, a: Tensor, x: Tensor, sorted_sums: bool = False) -> Tensor:
    agg = nx.matmul_sorted if sorted_sums else nx.matmul
    return nx.ACTIVATIONS[p.activation](agg(a, nx.matmul(x, p.weight)))


def gcn_forward(params: TwoLayerGCN, a, x: Tensor, sorted_sums: bool = False) -> Tensor:
    """``f(A f(A X W1) W2)``.

    With ``sorted_sums`` the neighbour aggregation is order-independent, so
    relabeling the nodes permutes the output bitwise; the default BLAS product
    can differ in the last bit.
    """
    a = _adj(a)
    _check_rows("gcn_forward", a, x)
    if x.shape[1] != params.layer1.weight.shape[0]:
        raise ModelError(f"gcn_forward: features have width {x.shape[1]}, "
                         f"weights expect {params.layer1.weight.shape[0]}")
    return gcn_layer(params.layer2, a, gcn_layer(params.layer1, a, x, sorted_sums), sorted_sums)


def _gate(gp: GateParams, g: str, z: Tensor, act) -> Tensor:
    return act(nx.add_bias(nx.matmul(z, gp.weights[g]), gp.biases[g]))


def _lstm_update(gp: GateParams, z: Tensor, c_in: Tensor) -> CellState:
    f = _gate(gp, "f", z, nx.sigmoid)
    i = _gate(gp, "i", z, nx.sigmoid)
    cand = _gate(gp, "c", z, nx.tanh)
    o = _gate(gp, "o", z, nx.sigmoid)
    c = nx.add(nx.hadamard(f, c_in), nx.hadamard(i, cand))
    return CellState(nx.hadamard(o, nx.tanh(c)), c)


def lstm_gcn_step(params: LSTMGCNCellParams, a, x: Tensor, prev: CellState) -> CellState:
    """One LSTM-GCN update: every gate sees ``[H(h_prev), H(x)]`` and the cell carries ``H(c_prev)``."""
    a = _adj(a)
    _check_rows("lstm_gcn_step", a, x)
    z = nx.concat_columns(gcn_forward(params.gcn_h, a, prev.h), gcn_forward(params.gcn_x, a, x))
    return _lstm_update(params.gates, z, gcn_forward(params.gcn_c, a, prev.c))


def gru_update(gp: GateParams, x_feat: Tensor, h: Tensor) -> Tensor:
    z = nx.concat_columns(x_feat, h)
    u = _gate(gp, "u", z, nx.sigmoid)
    r = _gate(gp, "r", z, nx.sigmoid)
    cand = _gate(gp, "c", nx.concat_columns(x_feat, nx.hadamard(r, h)), nx.tanh)
    one_minus_u = nx.sub(Tensor(np.ones(u.shape)), u)
    return nx.add(nx.hadamard(u, h), nx.hadamard(one_minus_u, cand))


def tgcn_step(params: TGCNCellParams, a, x: Tensor, prev: CellState) -> CellState:
    """Gated recurrent update on ``H(x)``; the previous hidden state is not convolved."""
    a = _adj(a)
    _check_rows("tgcn_step", a, x)
    h = gru_update(params.gates, gcn_forward(params.gcn_x, a, x), prev.h)
    return CellState(h, h)


def chebyshev_filter(basis: Sequence, thetas: Sequence[Tensor], h: Tensor) -> Tensor:
    """``sum_k T_k h Theta_k``."""
    if len(basis) != len(thetas):
        raise ModelError(f"{len(basis)} Chebyshev terms but {len(thetas)} filter weights")
    out = None
    for t, theta in zip(basis, thetas):
        t = t if isinstance(t, Tensor) else Tensor(t)
        term = nx.matmul(t, nx.matmul(h, theta))
        out = term if out is None else nx.add(out, term)
    return out


def gclstm_step(params: GCLSTMCellParams, basis: Sequence, x: Tensor, prev: CellState) -> CellState:
    """LSTM update whose previous hidden and cell states pass through Chebyshev filters."""
    if basis[0].shape[0] != x.shape[0]:
        raise ModelError(f"gclstm_step: basis is {basis[0].shape} but features have {x.shape[0]} rows")
    z = nx.concat_columns(chebyshev_filter(basis, params.theta_h, prev.h), x)
    return _lstm_update(params.gates, z, chebyshev_filter(basis, params.theta_c, prev.c))


def lstm_step(params: LSTMCellParams, x: Tensor, prev: CellState) -> CellState:
    return _lstm_update(params.gates, nx.concat_columns(prev.h, x), prev.c)


def mlp_forward(p: ReadoutMLP, x: Tensor) -> Tensor:
    act = nx.ACTIVATIONS[p.activation]
    last = len(p.weights) - 1
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        if x.shape[-1] != w.shape[0]:
            raise ModelError(f"readout layer {k} expects width {w.shape[0]}, got {x.shape[-1]}")
        x = nx.add_bias(nx.matmul(x, w), b)
        if k < last:
            x = act(x)
    return x


def fcl_forward(params: ReadoutMLP, window: Tensor) -> Tensor:
    """Flatten a ``days x n_input`` block of returns row-major and apply the MLP."""
    return mlp_forward(params, nx.flatten(window))


# ------------------------------------------------------------------- model


@dataclass
class ModelConfig:
    variant: str
    n_nodes: int
    n_features: int
    output_index: list[int]
    hidden: int = 6
    layers: int = 2
    layer_widths: list[int] | None = None
    steps: int = 3
    retain: int | None = None
    gcn_activation: str = "relu"
    gcn_hidden: int | None = None
    cheb_k: int = 2
    readout: str = "flatten"
    readout_hidden: int | None = None
    fcl_days: int = 10
    carry_state: bool | None = None
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        self.output_index = [int(i) for i in self.output_index]
        if not self.output_index:
            raise ModelError("at least one output node is required")
        if any(not 0 <= i < self.n_nodes for i in self.output_index):
            raise ModelError("output index out of range")
        if self.readout not in ("flatten", "node"):
            raise ModelError("readout must be 'flatten' or 'node'")
        if self.retain is None:
            self.retain = self.steps
        if not 1 <= self.retain <= self.steps:
            raise ModelError("retain must lie in [1, steps]")
        if self.layer_widths is None:
            self.layer_widths = [self.hidden] * self.layers
        if self.carry_state is None:
            self.carry_state = self.variant == "lstm"
        if self.gcn_activation not in nx.ACTIVATIONS:
            raise ModelError(f"unknown activation {self.gcn_activation!r}")

    @property
    def n_out(self) -> int:
        return len(self.output_index)

    @property
    def min_features(self) -> int:
        if self.variant == "fcl":
            return self.fcl_days
        if self.variant in RECURRENT:
            return self.steps
        return 1

    @property
    def subwindow(self) -> int:
        return self.n_features - self.steps + 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class Model:
    """A configured variant with its parameters and (optionally) carried recurrent state."""

    def __init__(self, config: ModelConfig, params=None, scale: float = 1.0):
        self.config = config
        if config.n_features < config.min_features:
            raise ModelError(f"{config.variant} needs at least {config.min_features} features "
                             f"per node, window gives {config.n_features}")
        self.params = params if params is not None else init_params(config)
        self.scale = float(scale)
        self.state: list[CellState] | None = None

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(named_parameters(self.params))

    def zero_state(self) -> list[CellState]:
        n = self.config.n_nodes
        return [CellState(Tensor(np.zeros((n, w))), Tensor(np.zeros((n, w))))
                for w in self.config.layer_widths]

    def forward(self, adjacency, features: np.ndarray, state=None):
        """Scaled prediction tensor of length ``n_out`` and the final recurrent state."""
        cfg = self.config
        feats = np.asarray(features, dtype=np.float64)
        if feats.shape != (cfg.n_features, cfg.n_nodes):
            raise ModelError(f"features have shape {feats.shape}, expected {(cfg.n_features, cfg.n_nodes)}")
        feats = feats / self.scale
        v = cfg.variant
        if v == "zero":
            return Tensor(np.zeros(cfg.n_out)), state
        if v == "mean":
            return Tensor(feats.mean(axis=0)[cfg.output_index]), state
        if v == "fcl":
            return fcl_forward(self.params["mlp"], Tensor(feats[-cfg.fcl_days:])), state
        a = _adj(adjacency)
        if v == "gcn":
            hidden = gcn_forward(self.params["gcn"], a, Tensor(feats.T))
            return self._readout(hidden), state
        return self._recurrent(a, feats, state)

    def _recurrent(self, a: Tensor, feats: np.ndarray, state):
        cfg = self.config
        states = list(state) if state is not None else self.zero_state()
        cells = self.params["cells"]
        basis = None
        if cfg.variant == "gclstm":
            basis = [Tensor(t) for t in _cheb_from_adj(a.values, cfg.cheb_k)]
        length = cfg.subwindow
        kept = []
        for s in range(cfg.steps):
            x = Tensor(feats[s:s + length].T)
            for k, cell in enumerate(cells):
                if cfg.variant == "lstm-gcn":
                    states[k] = lstm_gcn_step(cell, a, x, states[k])
                elif cfg.variant == "tgcn":
                    states[k] = tgcn_step(cell, a, x, states[k])
                elif cfg.variant == "gclstm":
                    states[k] = gclstm_step(cell, basis, x, states[k])
                else:
                    states[k] = lstm_step(cell, x, states[k])
                x = states[k].h
            if s >= cfg.steps - cfg.retain:
                kept.append(x)
        return self._readout(nx.concat_columns(*kept)), states

    def _readout(self, hidden: Tensor) -> Tensor:
        cfg = self.config
        mlp = self.params["readout"]
        if cfg.readout == "flatten":
            return mlp_forward(mlp, nx.flatten(hidden))
        out = mlp_forward(mlp, nx.take_rows(hidden, cfg.output_index))
        return nx.reshape(out, (cfg.n_out,))

    def predict(self, adjacency, features, state=None):
        """Prediction in return units (numpy) and final state, without recording."""
        with nx.no_grad():
            pred, new_state = self.forward(adjacency, features, state)
        return pred.values * self.scale, new_state

    # --------------------------------------------------------- checkpoint

    def to_dict(self) -> dict:
        out = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "scale": self.scale,
            "params": {name: {"shape": list(t.shape), "values": t.values.reshape(-1).tolist()}
                       for name, t in self.named_parameters()},
        }
        if self.state is not None:
            out["state"] = [{"h": s.h.values.tolist(), "c": s.c.values.tolist()} for s in self.state]
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def from_dict(cls, blob: dict) -> "Model":
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise ModelError("not a model checkpoint")
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {blob.get('version')}")
        config = ModelConfig(**blob["config"])
        model = cls(config, scale=blob["scale"])
        stored = blob["params"]
        named = model.named_parameters()
        if set(stored) != {n for n, _ in named}:
            raise ModelError("checkpoint parameters do not match the configuration")
        for name, t in named:
            entry = stored[name]
            t.values = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if "state" in blob:
            model.state = [CellState(Tensor(s["h"]), Tensor(s["c"])) for s in blob["state"]]
        return model

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _cheb_from_adj(adj: np.ndarray, k: int) -> list[np.ndarray]:
    from .graph import chebyshev_basis
    return chebyshev_basis(NormalizedAdjacency(adj), k)


def init_params(config: ModelConfig):
    """Glorot-uniform weights, zero biases (forget gates +1), from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    cfg = config
    act = cfg.gcn_activation
    v = cfg.variant
    params: dict = {}
    if v in ("zero", "mean"):
        return params
    if v == "fcl":
        n_in, n_out = cfg.n_nodes, cfg.n_out
        widths = [cfg.fcl_days * n_in, 5 * n_in, 10 * n_in, 10 * n_out, n_out]
        params["mlp"] = init_mlp(rng, widths)
        return params
    if v == "gcn":
        d = cfg.n_features
        mid = cfg.gcn_hidden or d
        params["gcn"] = init_gcn(rng, (d, mid, cfg.hidden), act)
        params["readout"] = _init_readout(rng, cfg, cfg.hidden)
        return params
    cells = []
    d_in = cfg.subwindow
    for width in cfg.layer_widths:
        if v == "lstm-gcn":
            gm = cfg.gcn_hidden or d_in
            gx = init_gcn(rng, (d_in, gm, d_in), act)
            gh = init_gcn(rng, (width, width, width), act)
            gc = init_gcn(rng, (width, width, width), act)
            cells.append(LSTMGCNCellParams(gh, gc, gx, init_gates(rng, "fico", width + d_in, width), width))
        elif v == "tgcn":
            gm = cfg.gcn_hidden or d_in
            gx = init_gcn(rng, (d_in, gm, d_in), act)
            cells.append(TGCNCellParams(gx, init_gates(rng, "urc", d_in + width, width), width))
        elif v == "gclstm":
            th = [glorot(rng, width, width) for _ in range(cfg.cheb_k)]
            tc = [glorot(rng, width, width) for _ in range(cfg.cheb_k)]
            cells.append(GCLSTMCellParams(th, tc, init_gates(rng, "fico", width + d_in, width), width))
        else:
            cells.append(LSTMCellParams(init_gates(rng, "fico", width + d_in, width), width))
        d_in = width
    params["cells"] = cells
    params["readout"] = _init_readout(rng, cfg, cfg.retain * cfg.layer_widths[-1])
    return params


def _init_readout(rng, cfg: ModelConfig, per_node: int) -> ReadoutMLP:
    if cfg.readout == "flatten":
        hidden = cfg.readout_hidden or 10 * cfg.n_out
        return init_mlp(rng, [cfg.n_nodes * per_node, hidden, cfg.n_out])
    hidden = cfg.readout_hidden or 10
    return init_mlp(rng, [per_node, hidden, 1])


def forward_window(model: Model, adjacency, features, state=None):
    """Run ``model`` on one window; returns (scaled prediction tensor, final state)."""
    if np.asarray(features).shape[0] < model.config.min_features:
        raise ModelError("window shorter than the configured minimum")
    return model.forward(adjacency, features, state)
