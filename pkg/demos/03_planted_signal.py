"""Can a graph model find a lagged spillover that a node-only model cannot?

The generator plants ``r_j(t+1) = beta * mean of neighbours' r(t) + noise``.
We train LSTM-GCN and the plain LSTM on the same windows, score them on the
held-out last 20%, and trade the forecasts with the market-neutral rule.

The defaults are scaled down to finish in under a minute. At that size no model
beats the historical mean out of sample, even though the oracle line shows
there is signal to find. Pass ``--full`` for 30 nodes x 2000 days, which takes
a few minutes per model and is where the graph model pulls ahead of the LSTM.

    python demos/03_planted_signal.py [--full]
"""

import sys

import numpy as np

from lstm_gcn import data, graph, pipeline

full = "--full" in sys.argv
spec = data.SyntheticSpec(n_nodes=30 if full else 12, beta=0.6, sigma=0.01,
                          horizon=2000 if full else 600, seed=0)
syn = data.generate_synthetic(spec)
print(f"{spec.n_nodes} nodes, {len(syn.edges)} undirected edges, {spec.horizon} return days")

# The share of next-day variance the planted term explains bounds any model's R^2.
deg = syn.adjacency.sum(axis=1, keepdims=True)
signal = spec.beta * (syn.adjacency / np.maximum(deg, 1)) @ syn.returns.values[:-1].T
print(f"oracle R^2 (true spillover as forecast): "
      f"{1 - ((syn.returns.values[1:] - signal.T) ** 2).sum() / ((syn.returns.values[1:] - syn.returns.values[1:].mean(0)) ** 2).sum():.3f}")

ds = pipeline.Dataset(syn.prices, syn.returns, graph.GraphTimeline(syn.edges, syn.returns.tickers),
                      np.ones(spec.n_nodes, bool))

for variant in ("lstm-gcn", "lstm", "mean"):
    cfg = pipeline.RunConfig(variant=variant, window=60, seed=0, epochs=10 if full else 5, learning_rate=1e-4)
    result = pipeline.run_experiment(cfg, ds)
    m, p = result.metrics, result.performance
    print(f"{variant:9s} R^2 {m.r2_mean:+.4f}  t {m.t_stat:+.2f}  p {m.p_value:.3g}  "
          f"correct {m.correctness_pct:.1f}%  ann. return {p.ann_return_pct:+.1f}%  Sharpe {p.sharpe:+.2f}")
