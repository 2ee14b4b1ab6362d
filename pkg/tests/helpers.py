"""Small, fast click-log simulators used across the tests."""
import numpy as np

from ctxpbm.clickmodel import ClickLog, PARITY_EVEN, PARITY_ODD
from ctxpbm.datasets import apply_swap_randomization


def random_placement_log(n, curve_fn, rng, K=5, dq=2, dd=3, contexts=None, rel_scale=1.0):
    """Items drawn fresh per slot, relevance logistic in the item's first feature.

    ``curve_fn(contexts) -> (n, K)`` gives the examination probabilities.
    """
    Q = rng.random((n, dq)) if contexts is None else contexts
    D = rng.normal(size=(n, K, dd))
    rel = 1 / (1 + np.exp(-rel_scale * D[..., 0]))
    exam = curve_fn(Q)
    clicks = (rng.random((n, K)) < exam) & (rng.random((n, K)) < rel)
    return ClickLog(np.arange(n), Q, D, clicks.astype(int))


def swap_log(n, curve, rel, rng):
    """Fixed ranking of items with relevance ``rel``, swap-randomized per impression."""
    K = len(curve)
    parity = np.empty(n, dtype=np.int8)
    swapped = np.zeros((n, K - 1), dtype=bool)
    order = np.empty((n, K), dtype=int)
    for i in range(n):
        shown, ann = apply_swap_randomization(np.arange(K), rng)
        order[i] = shown
        parity[i] = PARITY_ODD if ann.parity == "odd" else PARITY_EVEN
        for k in ann.swapped_pairs:
            swapped[i, k - 1] = True
    r = np.asarray(rel)[order]
    clicks = (rng.random((n, K)) < np.asarray(curve)) & (rng.random((n, K)) < r)
    items = np.eye(K)[order]
    return ClickLog(np.arange(n), np.zeros((n, 1)), items, clicks.astype(int), order,
                    parity, swapped)
