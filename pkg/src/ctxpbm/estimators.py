"""Position-bias estimators.

Every estimator consumes a :class:`~ctxpbm.clickmodel.ClickLog` and returns a
bias predictor exposing ``predict(contexts) -> (n, K)``. The EM-style and
generative estimators also return the fitted relevance model.

Contextual estimators
    ``contextual_em_fit`` (EM and PEM modes) and ``generative_fit``.
Non-contextual estimators
    ``regression_em_fit``, ``ctr_estimate`` and ``swap_estimate``; wrap any of
    them with ``semi_contextual_fit`` to fit one curve per context partition.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .clickmodel import EPS, PARITY_EVEN, PARITY_NONE, PARITY_ODD, ClickLog, clamp
from .datasets import device_label
from .nn import (AdamState, LossKind, Mlp, adam_step, forward_with_hidden, logit_grad,
                 mlp_backward, mlp_forward, model_from_dict, sigmoid, snapshot_dict)


class EstimationError(ValueError):
    pass


# ---------------------------------------------------------------- predictors

class ConstantCurve:
    kind = "constant-curve"

    def __init__(self, curve):
        self.curve = np.asarray(curve, dtype=np.float64)

    @property
    def K(self):
        return self.curve.shape[0]

    def predict(self, contexts):
        contexts = np.asarray(contexts)
        n = 1 if contexts.ndim == 1 else contexts.shape[0]
        return np.tile(self.curve, (n, 1))

    def __repr__(self):
        return f"ConstantCurve({np.round(self.curve, 4).tolist()})"


class ContextualCurve:
    kind = "contextual-network"

    def __init__(self, model: Mlp):
        self.model = model

    @property
    def K(self):
        return self.model.output_dim

    def predict(self, contexts):
        return mlp_forward(self.model, np.atleast_2d(contexts))


PARTITION_KEYS: Dict[str, Callable] = {"device": device_label}


class PartitionedCurve:
    """One bias predictor per context label."""

    kind = "partitioned"

    def __init__(self, partition_key, curves: dict, key_name: Optional[str] = None):
        self.partition_key = partition_key
        self.curves = dict(curves)
        self.key_name = key_name

    @property
    def K(self):
        return next(iter(self.curves.values())).K

    def predict(self, contexts):
        contexts = np.atleast_2d(contexts)
        labels = [self.partition_key(q) for q in contexts]
        out = np.empty((contexts.shape[0], self.K))
        for label in set(labels):
            if label not in self.curves:
                raise KeyError(f"no curve fitted for partition {label!r}")
            rows = np.array([l == label for l in labels])
            out[rows] = self.curves[label].predict(contexts[rows])
        return out


class RelevanceModel:
    """``g(q, d)``: relevance network over the concatenated context and item."""

    def __init__(self, model: Mlp):
        self.model = model

    def predict(self, contexts, items):
        contexts = np.atleast_2d(contexts)
        items = np.asarray(items, dtype=np.float64)
        n, K = items.shape[:2]
        q = np.broadcast_to(contexts[:, None, :], (n, K, contexts.shape[1]))
        X = np.concatenate([q, items], axis=2).reshape(n * K, -1)
        return mlp_forward(self.model, X).reshape(n, K)


def predictor_to_dict(pred) -> dict:
    if isinstance(pred, ConstantCurve):
        return {"kind": pred.kind, "curve": pred.curve.tolist()}
    if isinstance(pred, ContextualCurve):
        return {"kind": pred.kind, "model": snapshot_dict(pred.model)}
    if isinstance(pred, PartitionedCurve):
        if pred.key_name not in PARTITION_KEYS:
            raise ValueError("only named partition keys can be serialized")
        return {"kind": pred.kind, "partition": pred.key_name,
                "curves": [[label, predictor_to_dict(c)] for label, c in sorted(pred.curves.items())]}
    if isinstance(pred, RelevanceModel):
        return {"kind": "relevance-network", "model": snapshot_dict(pred.model)}
    raise TypeError(f"cannot serialize {type(pred).__name__}")


def predictor_from_dict(d: dict):
    kind = d["kind"]
    if kind == ConstantCurve.kind:
        return ConstantCurve(d["curve"])
    if kind == ContextualCurve.kind:
        return ContextualCurve(model_from_dict(d["model"]))
    if kind == PartitionedCurve.kind:
        name = d["partition"]
        return PartitionedCurve(PARTITION_KEYS[name],
                                {label: predictor_from_dict(c) for label, c in d["curves"]}, name)
    if kind == "relevance-network":
        return RelevanceModel(model_from_dict(d["model"]))
    raise ValueError(f"unknown predictor kind {kind!r}")


# ---------------------------------------------------------------- EM machinery

@dataclass
class EmConfig:
    epochs: int = 50
    mini_batch: int = 20
    mode: str = "em"  # "em": Bernoulli targets + BCE; "pem": probability targets + MSE
    seed: int = 0
    eps: float = EPS
    lr: float = 1e-3

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.mini_batch < 1:
            raise ValueError("mini_batch must be >= 1")
        if self.mode not in ("em", "pem"):
            raise ValueError(f"mode must be 'em' or 'pem', got {self.mode!r}")

    @property
    def loss(self) -> LossKind:
        return LossKind.BCE if self.mode == "em" else LossKind.MSE

    def to_dict(self):
        return asdict(self)


def e_step_marginals(c, fv, gv, eps: float = EPS):
    """Posterior P[E=1 | c] and P[R=1 | c] under the current ``f`` and ``g``.

    A click pins both to 1; otherwise examination is credited with
    ``f (1 - g) / (1 - f g)`` and relevance with ``(1 - f) g / (1 - f g)``.
    """
    c = np.asarray(c, dtype=np.float64)
    fv = clamp(np.asarray(fv, dtype=np.float64), eps)
    gv = clamp(np.asarray(gv, dtype=np.float64), eps)
    denom = 1.0 - fv * gv
    p_exam = c + (1.0 - c) * fv * (1.0 - gv) / denom
    p_rel = c + (1.0 - c) * (1.0 - fv) * gv / denom
    return p_exam, p_rel


def _relevance_net(log: ClickLog, rng):
    d = log.dq + log.dd
    return Mlp.init(d, math.ceil(d / 2), 1, rng)


def _batches(n, size, rng):
    perm = rng.permutation(n)
    return [perm[i:i + size] for i in range(0, n, size)]


def _slot_rows(idx, K):
    return (idx[:, None] * K + np.arange(K)).ravel()


def _targets(p, config, rng):
    if config.mode == "em":
        return (rng.random(p.shape) < p).astype(np.float64)
    return p


def _require(log):
    if log is None or log.n == 0:
        raise EstimationError("empty click log")


def contextual_em_fit(log: ClickLog, config: EmConfig = None, callback=None):
    """Contextual EM-based regression.

    ``f`` maps a context to K examination probabilities, ``g`` maps
    ``[q; d]`` to a relevance probability. Each mini-batch takes one ADAM
    step on ``f`` against E-step targets, then recomputes the relevance
    targets with the updated ``f`` and takes one ADAM step on ``g``.

    Returns ``(ContextualCurve, RelevanceModel)``.
    """
    config = config or EmConfig()
    _require(log)
    rng = np.random.default_rng(config.seed)
    K = log.K
    f = Mlp.init(log.dq, 2 * K, K, rng, seed=config.seed)
    g = _relevance_net(log, rng)
    g.seed = config.seed
    f_opt = AdamState.for_model(f, alpha=config.lr)
    g_opt = AdamState.for_model(g, alpha=config.lr)
    X = log.slot_features()
    C = log.clicks.astype(np.float64)
    loss = config.loss
    for epoch in range(config.epochs):
        for idx in _batches(log.n, config.mini_batch, rng):
            Q = log.contexts[idx]
            Xb = X[_slot_rows(idx, K)]
            Cb = C[idx]
            b = idx.shape[0]
            Hg, Zg = forward_with_hidden(g, Xb)
            Hf, Zf = forward_with_hidden(f, Q)
            gv = sigmoid(Zg).reshape(b, K)
            fv = sigmoid(Zf)
            p_exam, _ = e_step_marginals(Cb, fv, gv, config.eps)
            dZ = logit_grad(fv, _targets(p_exam, config, rng), loss) / b
            adam_step(f, mlp_backward(f, Q, Hf, dZ), f_opt)
            fv = mlp_forward(f, Q)
            _, p_rel = e_step_marginals(Cb, fv, gv, config.eps)
            dZ = logit_grad(gv, _targets(p_rel, config, rng), loss).reshape(-1, 1) / b
            adam_step(g, mlp_backward(g, Xb, Hg, dZ), g_opt)
        if callback is not None:
            callback(epoch, ContextualCurve(f), RelevanceModel(g))
    return ContextualCurve(f), RelevanceModel(g)


def closed_form_examination(p_exam) -> np.ndarray:
    """Per-position mean of examination marginals over impressions."""
    return np.asarray(p_exam, dtype=np.float64).mean(axis=0)


def regression_em_fit(log: ClickLog, config: EmConfig = None, callback=None, init="ctr"):
    """Regression-EM: closed-form examination curve, regression model for relevance.

    Examination marginals are accumulated over an epoch and the curve is
    replaced by their per-position mean at the end of it; the relevance
    network takes one ADAM step per mini-batch. The curve starts from the
    CTR estimate unless ``init`` gives a value or a K-vector: from a flat
    start 50 closed-form updates are far from converged.

    Returns ``(ConstantCurve, RelevanceModel)``.
    """
    config = config or EmConfig()
    _require(log)
    rng = np.random.default_rng(config.seed)
    K = log.K
    if isinstance(init, str) and init == "ctr":
        init = ctr_estimate(log).curve
    curve = clamp(np.broadcast_to(np.asarray(init, dtype=np.float64), (K,)).copy(), config.eps)
    g = _relevance_net(log, rng)
    g.seed = config.seed
    g_opt = AdamState.for_model(g, alpha=config.lr)
    X = log.slot_features()
    C = log.clicks.astype(np.float64)
    loss = config.loss
    for epoch in range(config.epochs):
        p_exam_all = np.empty_like(C)
        for idx in _batches(log.n, config.mini_batch, rng):
            Xb = X[_slot_rows(idx, K)]
            Cb = C[idx]
            Hg, Zg = forward_with_hidden(g, Xb)
            gv = sigmoid(Zg).reshape(-1, K)
            p_exam, p_rel = e_step_marginals(Cb, curve[None, :], gv, config.eps)
            p_exam_all[idx] = p_exam
            dZ = logit_grad(gv, _targets(p_rel, config, rng), loss).reshape(-1, 1) / idx.shape[0]
            adam_step(g, mlp_backward(g, Xb, Hg, dZ), g_opt)
        curve = clamp(closed_form_examination(p_exam_all), config.eps)
        if callback is not None:
            callback(epoch, ConstantCurve(curve), RelevanceModel(g))
    return ConstantCurve(curve), RelevanceModel(g)


def generative_fit(log: ClickLog, config: EmConfig = None, callback=None):
    """Maximize the click likelihood under ``P(C=1) = f(q, k) g(q, d)`` directly.

    Joint ADAM ascent on both networks, one step per mini-batch, no E-step.
    Returns ``(ContextualCurve, RelevanceModel)``.
    """
    config = config or EmConfig()
    _require(log)
    rng = np.random.default_rng(config.seed)
    K = log.K
    f = Mlp.init(log.dq, 2 * K, K, rng, seed=config.seed)
    g = _relevance_net(log, rng)
    g.seed = config.seed
    f_opt = AdamState.for_model(f, alpha=config.lr)
    g_opt = AdamState.for_model(g, alpha=config.lr)
    X = log.slot_features()
    C = log.clicks.astype(np.float64)
    lo, hi = config.eps, 1.0 - config.eps
    for epoch in range(config.epochs):
        for idx in _batches(log.n, config.mini_batch, rng):
            Q = log.contexts[idx]
            Xb = X[_slot_rows(idx, K)]
            Cb = C[idx]
            Hf, Zf = forward_with_hidden(f, Q)
            Hg, Zg = forward_with_hidden(g, Xb)
            F = sigmoid(Zf)
            G = sigmoid(Zg).reshape(-1, K)
            y = F * G
            inside = (y > lo) & (y < hi)
            y = np.clip(y, lo, hi)
            # d(-loglik)/dy, batch mean of per-record sums
            dy = np.where(inside, (1.0 - Cb) / (1.0 - y) - Cb / y, 0.0) / idx.shape[0]
            dZf = dy * G * F * (1.0 - F)
            dZg = (dy * F * G * (1.0 - G)).reshape(-1, 1)
            gf = mlp_backward(f, Q, Hf, dZf)
            gg = mlp_backward(g, Xb, Hg, dZg)
            adam_step(f, gf, f_opt)
            adam_step(g, gg, g_opt)
        if callback is not None:
            callback(epoch, ContextualCurve(f), RelevanceModel(g))
    return ContextualCurve(f), RelevanceModel(g)


# ---------------------------------------------------------------- counting estimators

def _finish_curve(curve):
    return ConstantCurve(np.clip(curve, EPS, 1.0))


def ctr_estimate(log: ClickLog) -> ConstantCurve:
    """Per-position click-through rate relative to position 1."""
    _require(log)
    ctr = log.clicks.mean(axis=0)
    if ctr[0] == 0:
        raise EstimationError("no clicks at position 1")
    return _finish_curve(ctr / ctr[0])


def swap_estimate(log: ClickLog) -> ConstantCurve:
    """Chain of adjacent-pair examination ratios from swap-randomized impressions.

    For pair ``(k, k + 1)`` only impressions whose drawn parity covers the
    pair are used. The ratio compares each of the two items at its lower
    slot against the same item at its upper slot, so relevance cancels:

        p[k+1] / p[k] ~ (CTR@k+1 | swapped + CTR@k+1 | kept)
                        / (CTR@k | kept + CTR@k | swapped)
    """
    _require(log)
    if np.any(log.swap_parity == PARITY_NONE):
        raise EstimationError("swap estimator needs swap annotations on every record")
    K = log.K
    C = log.clicks.astype(np.float64)
    curve = np.ones(K)
    for k in range(1, K):  # pair (k, k+1), 1-based
        parity = PARITY_ODD if k % 2 == 1 else PARITY_EVEN
        elig = log.swap_parity == parity
        sw = elig & log.swapped[:, k - 1]
        kept = elig & ~log.swapped[:, k - 1]
        if not sw.any() or not kept.any():
            raise EstimationError(f"pair ({k}, {k + 1}): no swapped or no kept impressions")
        num = C[sw, k].mean() + C[kept, k].mean()
        den = C[kept, k - 1].mean() + C[sw, k - 1].mean()
        if den == 0:
            raise EstimationError(f"pair ({k}, {k + 1}): no clicks at position {k}")
        curve[k] = curve[k - 1] * num / den
    return _finish_curve(curve)


def semi_contextual_fit(log: ClickLog, partition_key, base: Callable, labels=None,
                        key_name: Optional[str] = None) -> PartitionedCurve:
    """Fit ``base`` separately on each partition of the log.

    ``partition_key`` maps a context to a label (a name from
    ``PARTITION_KEYS`` is accepted too). ``labels``, when given, lists the
    partitions that must be present.
    """
    _require(log)
    if isinstance(partition_key, str):
        key_name = partition_key
        partition_key = PARTITION_KEYS[partition_key]
    observed = np.array([partition_key(q) for q in log.contexts])
    wanted = sorted(set(observed.tolist())) if labels is None else list(labels)
    curves = {}
    for label in wanted:
        mask = observed == label
        if not mask.any():
            raise EstimationError(f"partition {label!r} is empty")
        curves[label] = base(log.subset(np.flatnonzero(mask)))
    return PartitionedCurve(partition_key, curves, key_name)
