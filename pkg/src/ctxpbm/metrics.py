"""Relative error of bias estimates, ranking metrics and bootstrap intervals."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

TABLE_COLUMNS = ("estimator", "eta", "device_prob", "seed", "metric", "value", "ci_low", "ci_high")


def relative_error(f, truth, contexts, K: int, normalize: bool = True) -> float:
    """Mean over contexts of ``(1/K) sum_k |1 - f(q, k) / p(q, k)|``.

    With ``normalize`` the estimate is divided by its position-1 value first,
    since examination is identified only up to scale.
    """
    contexts = np.asarray(contexts, dtype=np.float64)
    if contexts.ndim != 2 or contexts.shape[0] == 0:
        raise ValueError("contexts must be a nonempty 2-d array")
    est = np.asarray(f.predict(contexts), dtype=np.float64)[:, :K]
    if normalize:
        est = est / est[:, :1]
    p = truth.curve(contexts, K)
    return float(np.mean(np.abs(1.0 - est / p)))


def dcg_at_k(relevances, K: int) -> float:
    rel = np.asarray(relevances, dtype=np.float64)
    if rel.shape[0] < K:
        raise ValueError(f"need at least {K} relevances")
    return float(np.sum(rel[:K] / np.log2(np.arange(2, K + 2))))


def precision_at_k(relevances, K: int) -> float:
    rel = np.asarray(relevances, dtype=np.float64)
    if rel.shape[0] < K:
        raise ValueError(f"need at least {K} relevances")
    return float(rel[:K].sum() / K)


def bootstrap_ci(samples, iterations: int = 1000, level: float = 0.95, rng=None):
    """Percentile bootstrap interval for the mean."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("no samples")
    if rng is None:
        rng = np.random.default_rng()
    idx = rng.integers(0, x.size, size=(iterations, x.size))
    means = x[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(lo), float(hi)


@dataclass
class MetricSample:
    estimator: str
    eta: float
    device_prob: Optional[float]
    seed: object
    metric: str
    value: float
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite metric value for {self.estimator}")

    def row(self):
        def fmt(v):
            if v is None:
                return ""
            return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
        return [self.estimator, fmt(self.eta), fmt(self.device_prob), str(self.seed),
                self.metric, fmt(self.value), fmt(self.ci_low), fmt(self.ci_high)]


def format_metric_table(samples: Sequence[MetricSample]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for s in samples:
        w.writerow(s.row())
    return buf.getvalue()


def read_metric_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        num = lambda v: None if v == "" else float(v)
        out.append(MetricSample(r["estimator"], num(r["eta"]), num(r["device_prob"]), r["seed"],
                                r["metric"], float(r["value"]), num(r["ci_low"]), num(r["ci_high"])))
    return out


def summarize(samples: Sequence[MetricSample], by=("estimator", "eta", "device_prob", "metric"),
              iterations=1000, rng=None):
    """Collapse per-seed samples into mean rows with bootstrap CIs (``seed='all'``)."""
    groups = {}
    for s in samples:
        key = tuple(getattr(s, k) for k in by)
        groups.setdefault(key, []).append(s.value)
    out = []
    for key, vals in groups.items():
        d = dict(zip(by, key))
        lo, hi = bootstrap_ci(vals, iterations, rng=rng)
        out.append(MetricSample(d.get("estimator", "all"), d.get("eta"), d.get("device_prob"),
                                "all", d.get("metric", ""), float(np.mean(vals)), lo, hi))
    return out
