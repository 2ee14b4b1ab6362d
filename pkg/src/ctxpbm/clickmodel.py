"""Contextual position-based click model and the click log container."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

EPS = 1e-6

PARITY_NONE, PARITY_ODD, PARITY_EVEN = 0, 1, 2
_PARITY_NAMES = {PARITY_ODD: "odd", PARITY_EVEN: "even"}
_PARITY_CODES = {"odd": PARITY_ODD, "even": PARITY_EVEN}


def clamp(p, eps=EPS):
    return np.clip(p, eps, 1.0 - eps)


# ---------------------------------------------------------------- ground truth

@dataclass(frozen=True)
class GroundTruthBias:
    """Examination probability ``1 / k ** max(<w, q> + 1, 0)``."""

    w: np.ndarray
    eta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")

    @property
    def dim(self):
        return self.w.shape[0]

    def exponent(self, contexts):
        return np.maximum(np.asarray(contexts, dtype=np.float64) @ self.w + 1.0, 0.0)

    def curve(self, contexts, K: int) -> np.ndarray:
        """True examination probabilities, shape ``(n, K)`` (or ``(K,)`` for one context)."""
        a = self.exponent(contexts)
        k = np.arange(1, K + 1, dtype=np.float64)
        return 1.0 / k ** np.asarray(a)[..., None]

    def to_dict(self):
        return {"w": self.w.tolist(), "eta": self.eta}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["w"]), float(d["eta"]))


def sample_bias_weights(dim: int, eta: float, rng: np.random.Generator) -> GroundTruthBias:
    """Draw ``w~_i ~ U(-eta, eta)`` and center it to zero mean."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    w_tilde = rng.uniform(-eta, eta, size=dim)
    return GroundTruthBias(w_tilde - w_tilde.mean(), float(eta))


def true_examination_prob(bias: GroundTruthBias, q, k: int) -> float:
    if k < 1:
        raise ValueError("positions are 1-based")
    a = max(float(np.dot(bias.w, q)) + 1.0, 0.0)
    return 1.0 / float(k) ** a


# ---------------------------------------------------------------- simulation

def draw_clicks(exam, rel, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli examination times Bernoulli relevance, slot by slot."""
    exam = np.asarray(exam, dtype=np.float64)
    rel = np.asarray(rel, dtype=np.float64)
    for name, p in (("examination", exam), ("relevance", rel)):
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError(f"{name} probability outside [0, 1]")
    e = rng.random(exam.shape) < exam
    r = rng.random(rel.shape) < rel
    return (e & r).astype(np.int8)


def simulate_clicks(q, items, relevance_prob: Callable, exam_prob: Callable,
                    rng: np.random.Generator) -> np.ndarray:
    """Clicks for one presented ranking.

    ``relevance_prob(q, d)`` and ``exam_prob(q, k)`` (``k`` 1-based) return
    probabilities; examination and relevance are drawn independently.
    """
    rel = [relevance_prob(q, d) for d in items]
    exam = [exam_prob(q, k) for k in range(1, len(items) + 1)]
    return draw_clicks(exam, rel, rng)


# ---------------------------------------------------------------- click log

@dataclass(frozen=True)
class SwapAnnotation:
    parity: str
    swapped_pairs: tuple = ()

    def __post_init__(self):
        if self.parity not in _PARITY_CODES:
            raise ValueError(f"parity must be 'odd' or 'even', got {self.parity!r}")
        want = 1 if self.parity == "odd" else 0
        for k in self.swapped_pairs:
            if k < 1 or k % 2 != want:
                raise ValueError(f"pair starting at {k} inconsistent with parity {self.parity}")


@dataclass
class ClickRecord:
    query_id: int
    context: np.ndarray
    items: np.ndarray
    clicks: np.ndarray
    item_ids: Optional[np.ndarray] = None
    swap: Optional[SwapAnnotation] = None


@dataclass
class ClickLog:
    """Columnar click log.

    ``swap_parity`` codes are 0 (not randomized), 1 (odd) and 2 (even);
    ``swapped[i, k - 1]`` is true when pair ``(k, k + 1)`` of record ``i``
    was swapped (positions 1-based).
    """

    query_ids: np.ndarray
    contexts: np.ndarray
    items: np.ndarray
    clicks: np.ndarray
    item_ids: Optional[np.ndarray] = None
    swap_parity: Optional[np.ndarray] = None
    swapped: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.contexts = np.asarray(self.contexts, dtype=np.float64)
        self.items = np.asarray(self.items, dtype=np.float64)
        self.clicks = np.asarray(self.clicks, dtype=np.int8)
        self.query_ids = np.asarray(self.query_ids, dtype=np.int64)
        n, K = self.clicks.shape
        if self.contexts.shape[0] != n or self.items.shape[:2] != (n, K):
            raise ValueError("records disagree on N or K")
        if np.any((self.clicks != 0) & (self.clicks != 1)):
            raise ValueError("clicks must be 0/1")
        if self.swap_parity is None:
            self.swap_parity = np.zeros(n, dtype=np.int8)
        if self.swapped is None:
            self.swapped = np.zeros((n, max(K - 1, 0)), dtype=bool)
        self.swap_parity = np.asarray(self.swap_parity, dtype=np.int8)
        self.swapped = np.asarray(self.swapped, dtype=bool)

    @property
    def n(self):
        return self.clicks.shape[0]

    @property
    def K(self):
        return self.clicks.shape[1]

    @property
    def dq(self):
        return self.contexts.shape[1]

    @property
    def dd(self):
        return self.items.shape[2]

    @property
    def randomized(self) -> bool:
        return self.n > 0 and bool(np.all(self.swap_parity != PARITY_NONE))

    def __len__(self):
        return self.n

    def record(self, i: int) -> ClickRecord:
        swap = None
        if self.swap_parity[i] != PARITY_NONE:
            pairs = tuple(int(k) + 1 for k in np.flatnonzero(self.swapped[i]))
            swap = SwapAnnotation(_PARITY_NAMES[int(self.swap_parity[i])], pairs)
        ids = None if self.item_ids is None else self.item_ids[i]
        return ClickRecord(int(self.query_ids[i]), self.contexts[i], self.items[i],
                           self.clicks[i], ids, swap)

    def __iter__(self) -> Iterator[ClickRecord]:
        return (self.record(i) for i in range(self.n))

    def subset(self, idx) -> "ClickLog":
        idx = np.asarray(idx)
        return ClickLog(self.query_ids[idx], self.contexts[idx], self.items[idx],
                        self.clicks[idx],
                        None if self.item_ids is None else self.item_ids[idx],
                        self.swap_parity[idx], self.swapped[idx], dict(self.meta))

    def slot_features(self) -> np.ndarray:
        """``[q; d]`` rows for every (record, position), shape ``(n * K, dq + dd)``."""
        q = np.broadcast_to(self.contexts[:, None, :], (self.n, self.K, self.dq))
        return np.concatenate([q, self.items], axis=2).reshape(self.n * self.K, -1)

    @classmethod
    def from_records(cls, records: Sequence[ClickRecord], meta=None) -> "ClickLog":
        if not records:
            raise ValueError("no records")
        K = len(records[0].clicks)
        parity = np.zeros(len(records), dtype=np.int8)
        swapped = np.zeros((len(records), max(K - 1, 0)), dtype=bool)
        for i, r in enumerate(records):
            if r.swap is not None:
                parity[i] = _PARITY_CODES[r.swap.parity]
                for k in r.swap.swapped_pairs:
                    swapped[i, k - 1] = True
        have_ids = all(r.item_ids is not None for r in records)
        return cls(
            np.array([r.query_id for r in records]),
            np.stack([r.context for r in records]),
            np.stack([r.items for r in records]),
            np.stack([r.clicks for r in records]),
            np.stack([r.item_ids for r in records]) if have_ids else None,
            parity, swapped, dict(meta or {}),
        )


def click_log_likelihood(log: ClickLog, f, g, eps: float = EPS) -> float:
    """Log-likelihood of the observed clicks under ``P(C=1) = f(q, k) g(q, d)``."""
    if log.n == 0:
        raise ValueError("empty click log")
    fv = clamp(f.predict(log.contexts), eps)
    gv = clamp(g.predict(log.contexts, log.items), eps)
    p = fv * gv
    c = log.clicks
    return float(np.sum(c * np.log(p) + (1 - c) * np.log1p(-p)))


# ---------------------------------------------------------------- serialization

def write_click_log(path, log: ClickLog, config_hash: str = "", seed=None):
    """One JSON header line, then one JSON record per line."""
    header = {"K": log.K, "dq": log.dq, "dd": log.dd,
              "config_hash": config_hash, "seed": seed, "n": log.n}
    lines = [json.dumps(header)]
    for i in range(log.n):
        rec = {
            "query_id": int(log.query_ids[i]),
            "context": log.contexts[i].tolist(),
            "items": log.items[i].tolist(),
            "clicks": log.clicks[i].tolist(),
        }
        if log.item_ids is not None:
            rec["item_ids"] = log.item_ids[i].tolist()
        if log.swap_parity[i] != PARITY_NONE:
            rec["swap_parity"] = _PARITY_NAMES[int(log.swap_parity[i])]
            rec["swapped_pairs"] = [int(k) + 1 for k in np.flatnonzero(log.swapped[i])]
        lines.append(json.dumps(rec))
    text = "\n".join(lines) + "\n"
    _atomic_write_text(path, text)


def read_click_log(path) -> ClickLog:
    with open(path) as fh:
        header = json.loads(fh.readline())
        records = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                swap = None
                if "swap_parity" in d:
                    swap = SwapAnnotation(d["swap_parity"], tuple(d.get("swapped_pairs", ())))
                ids = np.asarray(d["item_ids"]) if "item_ids" in d else None
                records.append(ClickRecord(d["query_id"], np.asarray(d["context"], float),
                                           np.asarray(d["items"], float),
                                           np.asarray(d["clicks"], np.int8), ids, swap))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from exc
    log = ClickLog.from_records(records, meta=header)
    if (log.K, log.dq, log.dd) != (header["K"], header["dq"], header["dd"]):
        raise ValueError(f"{path}: header dimensions do not match records")
    return log


def _atomic_write_text(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


class TruthCurve:
    """Adapter exposing a :class:`GroundTruthBias` through the predictor interface."""

    kind = "ground-truth"

    def __init__(self, bias: GroundTruthBias, K: int):
        self.bias = bias
        self.K = K

    def predict(self, contexts):
        return self.bias.curve(np.atleast_2d(contexts), self.K)
