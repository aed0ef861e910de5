"""
Thresholds and loss
===================

Choose the F1-optimal reranker threshold from scored examples and look at the
pointwise loss around it.
"""

from __future__ import annotations

import numpy as np

from hotquery import calibrate_threshold, pointwise_loss

rng = np.random.default_rng(0)

# two overlapping score populations
pos = np.clip(rng.normal(0.7, 0.12, 400), 0, 1)
neg = np.clip(rng.normal(0.4, 0.12, 600), 0, 1)
scores = np.concatenate([pos, neg]).round(3)
labels = np.concatenate([np.ones(400, bool), np.zeros(600, bool)])

report = calibrate_threshold(scores.tolist(), labels.tolist())
print(f"best threshold {report.best_threshold:.3f}  F1 {report.best_f1:.4f}")

# a few rows of the grid around the optimum
ts = np.array([row[0] for row in report.grid])
i = int(np.searchsorted(ts, report.best_threshold))
for t, p, r, f in report.grid[max(0, i - 3): i + 4]:
    print(f"t={t:.3f}  P={p:.3f}  R={r:.3f}  F1={f:.4f}")

# ============================================================================
# loss is ln 2 at an undecided prediction and stays finite at the ends
# ============================================================================

for p in (0.0, 0.01, 0.5, 0.99, 1.0):
    print(f"y_hat={p:<5} loss(y=1)={pointwise_loss(1, p):8.4f}  loss(y=0)={pointwise_loss(0, p):8.4f}")
