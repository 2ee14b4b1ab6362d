"""
Datasets: synthetic catalog, swap randomization, device contexts, LETOR
=======================================================================
"""
import numpy as np

from ctxpbm.datasets import (DeviceConfig, SinbinConfig, apply_swap_randomization,
                             augment_device, build_letor_dataset, generate_sinbin,
                             parse_letor, LetorQuery)

# --- synthetic catalog -----------------------------------------------------
# 100 items with N(0, 1) features; relevance is logistic in [q; d].
d = generate_sinbin(SinbinConfig(n_queries=1000, n_test_queries=1000, eta=0.5, seed=0))
print("train contexts", d.train.contexts.shape, "items", d.items.shape)
rel = d.train.relevance(0)
print("relevance of the 5 best items for query 0:", np.round(np.sort(rel)[-5:], 3))

# Changing eta with the same seed only rescales the bias weights, which
# keeps comparisons across eta free of catalog noise.
d2 = generate_sinbin(SinbinConfig(n_queries=1000, n_test_queries=1000, eta=1.0, seed=0))
print("same contexts across eta:", np.array_equal(d.train.contexts, d2.train.contexts),
      " weight ratio:", np.round(d2.bias.w / d.bias.w, 6)[:3])

# --- swap randomization ------------------------------------------------------
rng = np.random.default_rng(1)
for _ in range(3):
    shown, ann = apply_swap_randomization(np.arange(1, 11), rng)
    print(f"{ann.parity:>4} parity, swapped pairs {ann.swapped_pairs}: {shown.tolist()}")

# --- device contexts ----------------------------------------------------------
ctx, bias = augment_device(d.train.contexts, DeviceConfig(device_prob=0.3, eta=1.5, seed=2))
print("device share:", ctx[:, -1].mean().round(3), " bias weights on device slots:",
      np.round(bias.w[-2:], 3))
print("distinct exponents across the log:", np.unique(np.round(bias.exponent(ctx), 12)))

# --- LETOR -------------------------------------------------------------------
text = """\
4 qid:10 1:0.9 2:0.1 # a comment
0 qid:10 2:0.5
2 qid:11 1:0.3 3:1.0
"""
for q in parse_letor(text):
    print("query", q.query_id, "grades", q.grades.tolist(), "binary", q.binary.tolist())
    print(q.features)

# Context synthesis on a made-up corpus: 5 informative features (picked from
# the 30 best position predictors) plus 5 noise entries per query.
rng = np.random.default_rng(3)
def fake(n):
    out = []
    for i in range(n):
        g = rng.integers(0, 5, 15)
        g[0] = 4
        out.append(LetorQuery(str(i), rng.random((15, 40)), g))
    return out
ds = build_letor_dataset(fake(300), fake(100), eta=1.0, K=10, rng=rng)
print("selected context features:", ds.selected.tolist(), " context dim:", ds.train.contexts.shape[1])
