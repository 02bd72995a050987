"""Reverse-mode gradients on a tape, checked against central differences.

The numerics layer records every operation inside a ``Tape`` and replays the
records backwards. Here we fit one linear layer by hand-rolled gradient
descent, then ask the finite-difference checker whether the gradients of every
model variant can be trusted.

    python demos/01_autodiff.py
"""

import numpy as np

from lstm_gcn import numerics as nx
from lstm_gcn import pipeline

rng = np.random.default_rng(0)

# A tiny regression: recover w_true from noisy observations.
x = nx.Tensor(rng.standard_normal((50, 3)))
w_true = np.array([[0.5], [-1.0], [2.0]])
y = nx.Tensor(x.values @ w_true + 0.01 * rng.standard_normal((50, 1)))
w = nx.Tensor(np.zeros((3, 1)), requires_grad=True)

for step in range(200):
    w.zero_grad()
    with nx.Tape():
        loss = nx.mse_loss(nx.matmul(x, w), y)
        nx.backward(loss)
    w.values -= 0.1 * w.grad
    if step % 50 == 0:
        print(f"step {step:3d}  loss {float(loss.values):.6f}")

print("recovered weights:", np.round(w.values.ravel(), 3), "true:", w_true.ravel())

# Outside a tape nothing is recorded, so inference costs no memory.
with nx.no_grad():
    print("prediction for x[0]:", nx.matmul(x, w).values[0])

# Every trainable variant on a 4-node toy graph, window 5: the largest
# relative gap between autodiff and central differences (h = 1e-6).
for variant, err in pipeline.gradcheck_all(seed=0).items():
    print(f"{variant:9s} max relative error {err:.2e}")
