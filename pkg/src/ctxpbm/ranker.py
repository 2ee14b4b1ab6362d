"""PBM-aware linear Thompson sampling ranker.

Clicks are modelled as ``c ~ p(q, k) * <theta, [q; d]>``. Each impression
enters the ridge posterior with weight ``p ** 2`` and target ``c / p``, i.e.
a regression of clicks on propensity-scaled features; with ``p = 1`` this is
plain linear Thompson sampling on raw clicks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .clickmodel import EPS, draw_clicks
from .datasets import QuerySet, apply_swap_randomization
from .metrics import dcg_at_k, precision_at_k


@dataclass
class LinTsState:
    A: np.ndarray
    b: np.ndarray
    lam: float = 1.0
    sigma_n: float = 1.0

    @classmethod
    def fresh(cls, dim: int, lam: float = 1.0, sigma_n: float = 1.0):
        return cls(lam * np.eye(dim), np.zeros(dim), lam, sigma_n)

    @property
    def dim(self):
        return self.b.shape[0]

    def posterior_mean(self):
        return cho_solve(cho_factor(self.A, lower=True), self.b)

    def sample_theta(self, rng):
        """Draw from N(A^-1 b, sigma_n^2 A^-1) via the Cholesky factor of A."""
        L = np.linalg.cholesky(self.A)
        mean = cho_solve((L, True), self.b)
        if self.sigma_n == 0:
            return mean
        z = rng.standard_normal(self.dim)
        # A = L L^T  =>  L^-T z has covariance A^-1
        return mean + self.sigma_n * solve_triangular(L, z, lower=True, trans="T")


def _features(q, items):
    q = np.broadcast_to(np.asarray(q, float), (items.shape[0], len(q)))
    return np.concatenate([q, items], axis=1)


def rank(state: LinTsState, q, candidates, K: int, rng, item_ids=None):
    """Top-``K`` candidate positions by sampled score; ties go to the lower item id.

    Returns indices into ``candidates``.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    n = candidates.shape[0]
    if n < K:
        raise ValueError(f"need at least K={K} candidates, got {n}")
    ids = np.arange(n) if item_ids is None else np.asarray(item_ids)
    theta = state.sample_theta(rng)
    scores = _features(q, candidates) @ theta
    order = np.lexsort((ids, -scores))
    return order[:K]


def update(state: LinTsState, q, items, clicks, propensities) -> LinTsState:
    """Propensity-weighted ridge update, in place; returns the state.

    ``propensities`` are the examination estimates for the presented
    positions; they are clamped below at ``EPS``.
    """
    X = _features(q, np.asarray(items, dtype=np.float64))
    p = np.maximum(np.asarray(propensities, dtype=np.float64), EPS)
    c = np.asarray(clicks, dtype=np.float64)
    Xw = X * (p * p)[:, None]
    state.A += Xw.T @ X
    state.b += Xw.T @ (c / p)
    return state


@dataclass
class Trajectory:
    dcg: np.ndarray
    precision: np.ndarray

    def __len__(self):
        return self.dcg.shape[0]

    def summary(self, tail: float = 0.1):
        n = len(self)
        if n == 0:
            return {"dcg_mean": np.nan, "precision_mean": np.nan,
                    "dcg_tail": np.nan, "precision_tail": np.nan}
        m = max(1, int(round(n * tail)))
        return {"dcg_mean": float(self.dcg.mean()),
                "precision_mean": float(self.precision.mean()),
                "dcg_tail": float(self.dcg[-m:].mean()),
                "precision_tail": float(self.precision[-m:].mean())}

    def rows(self):
        return [(i, float(d), float(p)) for i, (d, p) in enumerate(zip(self.dcg, self.precision))]


def run_online_ltr(queries: QuerySet, bias, n_queries: int, true_bias, rng, *, K: int = 10,
                   lam: float = 1.0, sigma_n: float = 1.0) -> Trajectory:
    """Rank -> simulate clicks -> update, over the first ``n_queries`` queries.

    ``bias`` is the examination estimate used to debias the updates (any
    object with ``predict(contexts)``, normalized at position 1); clicks are
    generated from ``true_bias``. Metrics use binary relevance drawn once per
    (query, candidate); those draws and the contexts come from a stream
    independent of the ranker, so runs with the same ``rng`` seed but
    different ``bias`` see identical queries.
    """
    n_queries = min(n_queries, len(queries))
    env_rng, click_rng, ts_rng = rng.spawn(3)
    state = LinTsState.fresh(queries.dq + queries.candidates(0)[0].shape[1], lam, sigma_n)
    if n_queries == 0:
        return Trajectory(np.zeros(0), np.zeros(0))
    props = normalized_curve(bias, queries.contexts[:n_queries])
    truth = true_bias.curve(queries.contexts[:n_queries], K)
    dcg = np.empty(n_queries)
    prec = np.empty(n_queries)
    for i in range(n_queries):
        q = queries.contexts[i]
        items, ids = queries.candidates(i)
        rel = (env_rng.random(items.shape[0]) < queries.relevance(i)).astype(float)
        shown = rank(state, q, items, K, ts_rng, ids)
        clicks = draw_clicks(truth[i], rel[shown], click_rng)
        update(state, q, items[shown], clicks, props[i])
        dcg[i] = dcg_at_k(rel[shown], K)
        prec[i] = precision_at_k(rel[shown], K)
    return Trajectory(dcg, prec)


def normalized_curve(bias, contexts):
    f = np.asarray(bias.predict(contexts), dtype=np.float64)
    f = f / f[:, :1]
    return np.clip(f, EPS, 1.0)


def log_with_ranker(queries: QuerySet, true_bias, rng, *, K: int = 10, randomize: bool = True,
                    lam: float = 1.0, sigma_n: float = 1.0, n_queries: int | None = None,
                    meta=None):
    """Collect a click log with a flat-bias ranker (biased LTR), optionally swap-randomized."""
    from .clickmodel import ClickLog

    n = len(queries) if n_queries is None else min(n_queries, len(queries))
    env_rng, click_rng, ts_rng, swap_rng = rng.spawn(4)
    state = LinTsState.fresh(queries.dq + queries.candidates(0)[0].shape[1], lam, sigma_n)
    truth = true_bias.curve(queries.contexts[:n], K)
    ones = np.ones(K)
    dd = queries.candidates(0)[0].shape[1]
    items_out = np.empty((n, K, dd))
    ids_out = np.empty((n, K), dtype=np.int64)
    clicks_out = np.empty((n, K), dtype=np.int8)
    parity = np.zeros(n, dtype=np.int8)
    swapped = np.zeros((n, K - 1), dtype=bool)
    for i in range(n):
        q = queries.contexts[i]
        items, ids = queries.candidates(i)
        rel = (env_rng.random(items.shape[0]) < queries.relevance(i)).astype(float)
        shown = rank(state, q, items, K, ts_rng, ids)
        if randomize:
            shown, ann = apply_swap_randomization(shown, swap_rng)
            parity[i] = 1 if ann.parity == "odd" else 2
            for k in ann.swapped_pairs:
                swapped[i, k - 1] = True
        clicks = draw_clicks(truth[i], rel[shown], click_rng)
        update(state, q, items[shown], clicks, ones)
        items_out[i] = items[shown]
        ids_out[i] = ids[shown]
        clicks_out[i] = clicks
    return ClickLog(np.arange(n), queries.contexts[:n].copy(), items_out, clicks_out,
                    ids_out, parity, swapped, dict(meta or {}))
