"""
The contextual position-based click model
=========================================

A click happens when the user examines a slot *and* finds the item there
relevant. Examination at rank k decays as 1 / k ** a(q), where the exponent
a(q) = max(<w, q> + 1, 0) depends on the query context q. The scale eta of
the random weights w controls how much the decay varies between contexts.
"""
import numpy as np

from ctxpbm.clickmodel import (ClickLog, draw_clicks, sample_bias_weights,
                               true_examination_prob, click_log_likelihood)
from ctxpbm.estimators import ConstantCurve

rng = np.random.default_rng(0)
K = 10
contexts = rng.uniform(0, 1, size=(5, 10))

# With eta = 0 every context shares the textbook 1/k curve.
flat = sample_bias_weights(10, 0.0, rng)
print("eta=0 curve:", np.round(flat.curve(contexts[0], K), 3))

# Larger eta spreads the exponent out. Weights are centered, so the
# average context keeps an exponent close to 1.
for eta in (0.5, 1.5):
    bias = sample_bias_weights(10, eta, np.random.default_rng(1))
    exps = bias.exponent(contexts)
    print(f"eta={eta}: exponents {np.round(exps, 2)}  sum(w)={bias.w.sum():+.1e}")
    print("  examination at rank 10 per context:", np.round(bias.curve(contexts, K)[:, -1], 4))

# The scalar form is handy for spot checks.
print("P(E | <w,q>=0, k=4) =", true_examination_prob(flat, contexts[0], 4))

# Simulate 20,000 impressions of one context with fixed relevances and
# compare the click rate per rank with examination * relevance.
bias = sample_bias_weights(10, 1.0, np.random.default_rng(2))
q = contexts[0]
rel = np.linspace(0.9, 0.3, K)
exam = bias.curve(q, K)
clicks = np.stack([draw_clicks(exam, rel, rng) for _ in range(20_000)])
print("empirical CTR :", np.round(clicks.mean(axis=0), 3))
print("model  CTR    :", np.round(exam * rel, 3))

# Log-likelihood of a tiny click log under a constant examination curve and
# a fixed relevance model.
class Relevance:
    def predict(self, contexts, items):
        return np.broadcast_to(rel, items.shape[:2])

log = ClickLog(np.arange(200), np.tile(q, (200, 1)), np.zeros((200, K, 1)), clicks[:200])
for name, curve in [("true curve", exam), ("flat curve", np.ones(K))]:
    ll = click_log_likelihood(log, ConstantCurve(curve), Relevance())
    print(f"log-likelihood under {name}: {ll:.1f}")
