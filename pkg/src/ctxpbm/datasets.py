"""Experimental datasets and the logging-time swap randomization.

Two sources feed the simulator:

* a SINBIN-style synthetic catalog where relevance is a logistic function of
  the concatenated context and item features, and every item is a candidate
  for every query;
* LETOR/svmlight files (e.g. the Yahoo LTR challenge layout) whose queries get
  synthetic 10-dimensional contexts.

Both end up as a :class:`QuerySet`, which is what the ranker and the log
generator consume.
"""
from __future__ import annotations

import bz2
import gzip
import io
import lzma
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .clickmodel import GroundTruthBias, SwapAnnotation, sample_bias_weights
from .nn import sigmoid


class LetorParseError(ValueError):
    pass


# ---------------------------------------------------------------- query sets

class QuerySet:
    """Contexts plus, per query, candidate items and their relevance probabilities."""

    contexts: np.ndarray

    def __len__(self):
        return self.contexts.shape[0]

    @property
    def dq(self):
        return self.contexts.shape[1]

    def candidates(self, i):
        """``(features, item_ids)`` for query ``i``."""
        raise NotImplementedError

    def relevance(self, i) -> np.ndarray:
        """P[R=1 | q, d] for every candidate of query ``i``."""
        raise NotImplementedError

    def with_contexts(self, contexts) -> "QuerySet":
        raise NotImplementedError

    def __iter__(self):
        for i in range(len(self)):
            yield self.contexts[i], self.candidates(i)[0]


@dataclass
class SinbinQuerySet(QuerySet):
    contexts: np.ndarray
    items: np.ndarray
    theta: np.ndarray
    base_contexts: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.base_contexts is None:
            self.base_contexts = self.contexts
        dq = self.base_contexts.shape[1]
        self._item_logit = self.items @ self.theta[dq:]
        self._query_logit = self.base_contexts @ self.theta[:dq]
        self._ids = np.arange(self.items.shape[0])

    def candidates(self, i):
        return self.items, self._ids

    def relevance(self, i):
        return sigmoid(self._query_logit[i] + self._item_logit)

    def with_contexts(self, contexts):
        return SinbinQuerySet(np.asarray(contexts, float), self.items, self.theta,
                              self.base_contexts)


@dataclass
class LetorQuerySet(QuerySet):
    contexts: np.ndarray
    items: List[np.ndarray]
    labels: List[np.ndarray]
    query_ids: Optional[np.ndarray] = None

    def candidates(self, i):
        return self.items[i], np.arange(self.items[i].shape[0])

    def relevance(self, i):
        return self.labels[i]

    def with_contexts(self, contexts):
        return LetorQuerySet(np.asarray(contexts, float), self.items, self.labels, self.query_ids)


# ---------------------------------------------------------------- SINBIN

@dataclass
class SinbinConfig:
    n_queries: int = 10_000
    n_test_queries: int = 10_000
    n_items: int = 100
    dq: int = 10
    dd: int = 10
    K: int = 10
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_items < self.K:
            raise ValueError(f"n_items ({self.n_items}) must be >= K ({self.K})")
        if min(self.n_queries, self.n_items, self.dq, self.dd, self.K) < 1:
            raise ValueError("sizes must be positive")


@dataclass
class SinbinDataset:
    config: SinbinConfig
    train: SinbinQuerySet
    test: SinbinQuerySet
    bias: GroundTruthBias
    theta: np.ndarray
    items: np.ndarray

    def relevance_prob(self, q, d) -> float:
        dq = self.config.dq
        return float(sigmoid(np.dot(self.theta[:dq], q[:dq]) + np.dot(self.theta[dq:], d)))

    def __iter__(self):
        return iter(self.train)


def generate_sinbin(config: SinbinConfig, rng: np.random.Generator | None = None,
                    theta=None) -> SinbinDataset:
    """Synthetic catalog with logistic relevance.

    Contexts are U(0, 1) per coordinate, item features N(0, 1), and
    ``theta ~ N(0, (dq + dd) ** -1)`` entrywise. Independent child streams are
    used for catalog, train contexts, test contexts and bias weights, so two
    configs differing only in ``eta`` share everything except the (linearly
    rescaled) bias weights.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    r_items, r_theta, r_train, r_test, r_bias = rng.spawn(5)
    dq, dd = config.dq, config.dd
    items = r_items.normal(0.0, 1.0, size=(config.n_items, dd))
    if theta is None:
        theta = r_theta.normal(0.0, 1.0 / np.sqrt(dq + dd), size=dq + dd)
    theta = np.asarray(theta, dtype=np.float64)
    train = r_train.uniform(0.0, 1.0, size=(config.n_queries, dq))
    test = r_test.uniform(0.0, 1.0, size=(config.n_test_queries, dq))
    bias = sample_bias_weights(dq, config.eta, r_bias)
    return SinbinDataset(config, SinbinQuerySet(train, items, theta),
                         SinbinQuerySet(test, items, theta), bias, theta, items)


# ---------------------------------------------------------------- device experiment

@dataclass
class DeviceConfig:
    device_prob: float = 0.5
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.device_prob <= 0.5:
            raise ValueError("device_prob must lie in [0, 0.5]")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")


def device_bias(base_dim: int, eta: float, rng) -> GroundTruthBias:
    """Bias weights that are zero on the base context and live on the two device slots.

    Centering is done within the device block so the base coordinates stay
    exactly zero and the bias depends on the device alone.
    """
    w = np.zeros(base_dim + 2)
    w_tilde = rng.uniform(-eta, eta, size=2)
    w[base_dim:] = w_tilde - w_tilde.mean()
    return GroundTruthBias(w, float(eta))


def device_onehot(n: int, device_prob: float, rng) -> np.ndarray:
    second = rng.random(n) < device_prob
    out = np.zeros((n, 2))
    out[np.arange(n), second.astype(int)] = 1.0
    return out


def augment_device(contexts, config: DeviceConfig, rng=None, bias=None):
    """Append a one-hot device indicator; returns ``(contexts, bias)``.

    The second device is drawn with probability ``device_prob``. Pass an
    existing ``bias`` to augment another split under the same truth.
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    r_bias, r_dev = rng.spawn(2)
    if bias is None:
        bias = device_bias(contexts.shape[1], config.eta, r_bias)
    onehot = device_onehot(contexts.shape[0], config.device_prob, r_dev)
    return np.concatenate([contexts, onehot], axis=1), bias


def device_label(q) -> int:
    """Index of the active device slot (last two context entries)."""
    return int(np.argmax(np.asarray(q)[-2:]))


# ---------------------------------------------------------------- swaps

def apply_swap_randomization(ranking, rng):
    """Randomly swap disjoint adjacent pairs of one parity.

    A parity is chosen uniformly; every pair ``(k, k + 1)`` whose first
    position has that parity is then swapped with probability 1/2.
    Positions in the annotation are 1-based.
    """
    ranking = np.asarray(ranking)
    K = ranking.shape[0]
    if K < 2:
        raise ValueError("swap randomization needs K >= 2")
    parity = "odd" if rng.random() < 0.5 else "even"
    starts = np.arange(1 if parity == "odd" else 2, K, 2)
    flips = rng.random(starts.shape[0]) < 0.5
    out = ranking.copy()
    for k in starts[flips]:
        out[[k - 1, k]] = out[[k, k - 1]]
    return out, SwapAnnotation(parity, tuple(int(k) for k in starts[flips]))


# ---------------------------------------------------------------- LETOR

@dataclass
class LetorQuery:
    query_id: str
    features: np.ndarray
    grades: np.ndarray
    binary: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grades = np.asarray(self.grades, dtype=int)
        self.binary = np.array([binarize_relevance(g) for g in self.grades], dtype=int)


def binarize_relevance(grade: int) -> int:
    grade = int(grade)
    if not 0 <= grade <= 4:
        raise ValueError(f"relevance grade {grade} outside 0..4")
    return int(grade >= 3)


def open_letor(path):
    """Open a LETOR text file, transparently decompressing .gz/.bz2/.xz."""
    path = Path(path)
    opener = {".gz": gzip.open, ".bz2": bz2.open, ".xz": lzma.open}.get(path.suffix, open)
    return opener(path, "rt")


def parse_letor(source, n_features: int | None = None) -> List[LetorQuery]:
    """Parse ``<grade> qid:<id> <idx>:<val> ...`` lines.

    Feature index ``i`` (1-based, as in svmlight) lands in column ``i - 1``;
    absent features are 0. Queries are returned in order of first appearance.
    ``source`` is a path, an open text stream, or an iterable of lines.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and source and Path(source).is_file()):
        with open_letor(source) as fh:
            return parse_letor(fh, n_features)
    if isinstance(source, str):
        source = io.StringIO(source)

    rows = {}
    order = []
    max_idx = 0
    for lineno, raw in enumerate(source, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            grade = int(float(parts[0]))
            if float(parts[0]) != grade:
                raise ValueError("non-integer grade")
            if len(parts) < 2 or not parts[1].startswith("qid:"):
                raise ValueError("missing qid")
            qid = parts[1][4:]
            if not qid:
                raise ValueError("empty qid")
            feats = {}
            for tok in parts[2:]:
                idx, val = tok.split(":", 1)
                idx = int(idx)
                if idx < 1:
                    raise ValueError(f"feature index {idx} < 1")
                feats[idx] = float(val)
        except (ValueError, IndexError) as exc:
            raise LetorParseError(f"line {lineno}: {exc}: {raw.rstrip()!r}") from None
        if feats:
            max_idx = max(max_idx, max(feats))
        if qid not in rows:
            rows[qid] = []
            order.append(qid)
        rows[qid].append((grade, feats))

    if not order:
        raise LetorParseError("no LETOR records in input")
    width = n_features if n_features is not None else max_idx
    if width < max_idx:
        raise LetorParseError(f"feature index {max_idx} exceeds n_features={width}")
    queries = []
    for qid in order:
        X = np.zeros((len(rows[qid]), width))
        grades = []
        for j, (g, feats) in enumerate(rows[qid]):
            grades.append(g)
            for idx, val in feats.items():
                X[j, idx - 1] = val
        try:
            queries.append(LetorQuery(qid, X, np.array(grades)))
        except ValueError as exc:
            raise LetorParseError(f"query {qid}: {exc}") from None
    return queries


def filter_relevant(queries: Sequence[LetorQuery]) -> List[LetorQuery]:
    """Drop queries with no item of binary relevance 1."""
    return [q for q in queries if q.binary.any()]


def minmax_bounds(queries: Sequence[LetorQuery]):
    X = np.concatenate([q.features for q in queries], axis=0)
    return X.min(axis=0), X.max(axis=0)


def minmax_scale(queries: Sequence[LetorQuery], bounds=None) -> List[LetorQuery]:
    """Scale every feature to [0, 1]; constant features map to 0."""
    lo, hi = minmax_bounds(queries) if bounds is None else bounds
    span = np.where(hi > lo, hi - lo, 1.0)
    out = []
    for q in queries:
        X = np.clip((q.features - lo) / span, 0.0, 1.0)
        out.append(LetorQuery(q.query_id, X, q.grades))
    return out


def _optimal_rewards(queries, K):
    R = np.zeros((len(queries), K))
    for i, q in enumerate(queries):
        order = np.argsort(-q.grades, kind="stable")[:K]
        R[i, :len(order)] = q.binary[order]
    return R


def fit_position_logistic(X, R, epochs=200, lr=0.1):
    """Per-position logistic regressions without intercept, by full-batch gradient descent."""
    W = np.zeros((X.shape[1], R.shape[1]))
    n = X.shape[0]
    for _ in range(epochs):
        W -= lr * (X.T @ (sigmoid(X @ W) - R)) / n
    return W


@dataclass
class ContextSynthesis:
    contexts: np.ndarray
    selected: np.ndarray
    scores: np.ndarray

    def apply(self, queries, sigma, rng) -> np.ndarray:
        return _context_rows(queries, self.selected, sigma, rng)


def _context_rows(queries, selected, sigma, rng):
    first = np.stack([q.features[q.binary == 1].mean(axis=0)[selected] for q in queries])
    second = rng.normal(0.0, sigma, size=(len(queries), len(selected)))
    return np.concatenate([first, second], axis=1)


def synthesize_context(queries: Sequence[LetorQuery], sigma: float = 1.0, rng=None, *,
                       K: int = 10, n_top: int = 30, n_select: int = 5,
                       epochs: int = 200, lr: float = 0.1) -> ContextSynthesis:
    """Build ``2 * n_select``-dimensional contexts for LETOR queries.

    Features are scored by the largest absolute weight they receive in
    per-position logistic models that predict the optimal ranking's reward
    from the query's mean item vector; ``n_select`` of the ``n_top`` best
    are picked at random and evaluated on the mean relevant item. The other
    half of the context is N(0, sigma^2) noise.
    """
    if rng is None:
        rng = np.random.default_rng()
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    queries = list(queries)
    if not queries:
        raise ValueError("no queries")
    if any(not q.binary.any() for q in queries):
        raise ValueError("queries must have at least one relevant item; filter first")
    n_feat = queries[0].features.shape[1]
    if n_feat < n_top:
        raise ValueError(f"need at least {n_top} features, got {n_feat}")
    X = np.stack([q.features.mean(axis=0) for q in queries])
    W = fit_position_logistic(X, _optimal_rewards(queries, K), epochs, lr)
    scores = np.abs(W).max(axis=1)
    top = np.argsort(-scores, kind="stable")[:n_top]
    selected = np.sort(rng.choice(top, size=n_select, replace=False))
    return ContextSynthesis(_context_rows(queries, selected, sigma, rng), selected, scores)


@dataclass
class LetorDataset:
    train: LetorQuerySet
    test: LetorQuerySet
    bias: GroundTruthBias
    selected: np.ndarray


def build_letor_dataset(train_queries, test_queries, *, eta=0.0, sigma=1.0, K=10,
                        rng=None) -> LetorDataset:
    """Filter, scale and contextualize LETOR queries into train/test query sets.

    Queries without relevant items or with fewer than ``K`` items are dropped.
    Scaling bounds and the selected context features come from the train split.
    """
    if rng is None:
        rng = np.random.default_rng()
    r_ctx, r_test, r_bias = rng.spawn(3)
    train = [q for q in filter_relevant(train_queries) if q.features.shape[0] >= K]
    test = [q for q in filter_relevant(test_queries) if q.features.shape[0] >= K]
    if not train or not test:
        raise ValueError("no usable queries after filtering")
    bounds = minmax_bounds(train)
    train = minmax_scale(train, bounds)
    test = minmax_scale(test, bounds)
    synth = synthesize_context(train, sigma, r_ctx, K=K)
    test_ctx = synth.apply(test, sigma, r_test)

    def qset(qs, ctx):
        return LetorQuerySet(ctx, [q.features for q in qs],
                             [q.binary.astype(float) for q in qs],
                             np.array([q.query_id for q in qs]))

    bias = sample_bias_weights(synth.contexts.shape[1], eta, r_bias)
    return LetorDataset(qset(train, synth.contexts), qset(test, test_ctx), bias, synth.selected)
