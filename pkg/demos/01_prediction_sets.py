#!/usr/bin/env python3
"""Walk through the statistical core: scores, calibration, prediction sets.

Builds a synthetic multiple-choice pool, calibrates a score threshold at a
few error rates, and checks the resulting coverage empirically.
"""

import numpy as np

from conformal_router import (
    OptionDistribution,
    calibrate,
    empirical_coverage,
    prediction_set,
    quantile_threshold,
    score,
    softmax_over_options,
)

LABELS = ("A", "B", "C", "D")

# --- scoring a single prompt -------------------------------------------------

logits = [2.0, 0.5, 0.1, -1.0]
probs = softmax_over_options(logits)
dist = OptionDistribution(labels=LABELS, probs=tuple(float(p) for p in probs))

print("logits      :", logits)
print("probabilities:", np.round(dist.probs, 4))
for label in LABELS:
    print(f"score({label}) = 1 - P({label}) = {score(dist, label):.4f}")

# --- calibrating a threshold -------------------------------------------------

# Synthetic exchangeable pool: Dirichlet probabilities, gold drawn from them.
rng = np.random.default_rng(0)
pool_probs = rng.dirichlet([1.0] * 4, size=4000)
cum = np.cumsum(pool_probs, axis=1)
gold_idx = (rng.random(4000)[:, None] > cum).sum(axis=1)
pool = [
    (OptionDistribution(labels=LABELS, probs=tuple(map(float, p))), LABELS[g])
    for p, g in zip(pool_probs, gold_idx)
]
cal, test = pool[:2000], pool[2000:]

model = calibrate(score(d, g) for d, g in cal)
print(f"\ncalibrated on n={model.n} records")

for alpha in (0.1, 0.2, 0.3):
    q_hat = quantile_threshold(model, alpha)
    coverage = empirical_coverage(model, test, alpha)
    sizes = [prediction_set(d, q_hat, alpha).size for d, _ in test]
    print(
        f"alpha={alpha:.1f}  q_hat={q_hat:.4f}  coverage={coverage:.4f} "
        f"(target >= {1 - alpha:.1f})  mean set size={np.mean(sizes):.2f}"
    )

# --- nesting -----------------------------------------------------------------

d = test[0][0]
print("\nnesting: sets only shrink as alpha grows")
for alpha in (0.05, 0.2, 0.4):
    members = prediction_set(d, quantile_threshold(model, alpha), alpha).members
    print(f"  alpha={alpha:.2f} -> {members}")
