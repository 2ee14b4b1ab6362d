"""
Online learning to rank with debiased clicks
============================================

A linear Thompson-sampling ranker regresses clicks on propensity-scaled
features. Better propensities mean less distorted updates and better
rankings. All runs share the query stream and relevance draws.
"""
import numpy as np

from ctxpbm.clickmodel import TruthCurve
from ctxpbm.datasets import SinbinConfig, generate_sinbin
from ctxpbm.estimators import ConstantCurve, EmConfig, contextual_em_fit, regression_em_fit
from ctxpbm.ranker import log_with_ranker, run_online_ltr

d = generate_sinbin(SinbinConfig(n_queries=3000, n_test_queries=4000, eta=1.0, seed=1))
log = log_with_ranker(d.train, d.bias, np.random.default_rng(1), K=10)
predictors = {
    "flat": ConstantCurve(np.ones(10)),
    "regression EM": regression_em_fit(log, EmConfig(epochs=20))[0],
    "contextual PEM": contextual_em_fit(log, EmConfig(epochs=20, mode="pem"))[0],
    "true bias": TruthCurve(d.bias, 10),
}
for name, pred in predictors.items():
    traj = run_online_ltr(d.test, pred, 4000, d.bias, np.random.default_rng(7))
    s = traj.summary()
    print(f"{name:>15}: DCG@10 mean {s['dcg_mean']:.3f} (last 10% {s['dcg_tail']:.3f})  "
          f"P@10 mean {s['precision_mean']:.3f}")
