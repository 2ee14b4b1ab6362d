"""
Metrics: relative error, DCG@K, Precision@K, bootstrap intervals
================================================================
"""
import numpy as np

from ctxpbm.clickmodel import sample_bias_weights
from ctxpbm.estimators import ConstantCurve
from ctxpbm.metrics import bootstrap_ci, dcg_at_k, precision_at_k, relative_error

rng = np.random.default_rng(0)
contexts = rng.uniform(0, 1, (2000, 10))
for eta in (0.0, 0.5, 1.0, 1.5):
    truth = sample_bias_weights(10, eta, np.random.default_rng(1))
    # a constant curve cannot follow the context; the population mean curve
    # shows how quickly that costs as eta grows
    mean_curve = ConstantCurve(truth.curve(contexts, 10).mean(0))
    print(f"eta={eta}: relative error of the mean curve {relative_error(mean_curve, truth, contexts, 10):.3f}")

print("DCG@3 of (1, 0, 1):", dcg_at_k([1, 0, 1], 3))
print("P@3 of (1, 0, 1):", round(precision_at_k([1, 0, 1], 3), 4))

x = rng.normal(size=100)
lo, hi = bootstrap_ci(x, iterations=1000, rng=rng)
print(f"mean {x.mean():.3f}, 95% percentile bootstrap CI [{lo:.3f}, {hi:.3f}] (width {hi - lo:.3f})")
