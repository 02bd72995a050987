"""Turning forecasts into a daily market-neutral book.

Predicted returns are capped to +/-50%, then longs are scaled to sum to 1 and
shorts to -1. Weights formed on day t-1 earn day t's return; tickers outside
the index on the information date hold nothing.

    python demos/04_backtest.py
"""

import datetime as dt

import numpy as np

from lstm_gcn import backtest as bt
from lstm_gcn import data

print("book for [0.1, -0.1, 0.2]:", bt.weights_from_predictions([0.1, -0.1, 0.2]).weights)
print("book for [0.9, 0.1] (cap first):", np.round(bt.weights_from_predictions([0.9, 0.1]).weights, 4))

rng = np.random.default_rng(1)
tickers = ["AAA", "BBB", "CCC", "DDD"]
dates = data.business_days(dt.date(2020, 1, 6), 261)
returns = data.ReturnsMatrix(dates[1:], tickers, rng.normal(0.0003, 0.01, (260, 4)))
universe = data.Universe({t: [(dates[0], None)] for t in tickers[:3]}
                         | {"DDD": [(dates[100], None)]})  # joins the index later

# A forecaster with a little genuine skill: a noisy peek at tomorrow.
book = []
for k in range(260):
    info, day = dates[k], dates[k + 1]
    forecast = 0.2 * returns.values[k] + rng.normal(0, 0.01, 4)
    book.append(bt.weights_from_predictions(forecast, universe.mask(tickers, info), 0.5, day, tickers, info))

perf = bt.run_backtest(book, returns, risk_free=0.00005)
print(f"{perf.n_days} days, ann. return {perf.ann_return_pct:.1f}%, Sharpe {perf.sharpe:.2f}, "
      f"Sortino {perf.sortino:.2f} ({perf.metadata['downside_convention']})")
print("DDD weight before and after joining:", book[50].weights[3], round(book[150].weights[3], 3))

# Weights dated on or before the data they use are refused.
try:
    bt.run_backtest([bt.WeightVector(dates[5], tickers, np.zeros(4), dates[5])], returns)
except bt.AlignmentError as exc:
    print("rejected:", exc)
