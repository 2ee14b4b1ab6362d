"""Declarative experiment grid: log generation, estimation, online LTR, sweeps.

A config spans cells ``(eta, device_prob, seed, randomized)``. Every cell gets
its own random streams, derived from the master seed and the cell's
coordinates (not its position in the grid), so adding grid points never
changes existing outputs. Output layout under the output directory::

    logs/<cell>.jsonl            click log
    logs/<cell>.truth.json       ground-truth bias for the cell
    predictors/<cell>/<est>.json fitted predictor + descriptor
    cells/<cell>/relerror.csv    per-cell relative errors
    cells/<cell>/curves.csv      mean estimated curve per estimator
    cells/<cell>/skipped.json    estimators skipped and why
    ltr/<cell>/<pred>.csv        online-LTR trajectories
    cells/<cell>/ltr.csv         per-cell LTR summaries
    tables/<name>.csv            per-group means with bootstrap CIs
    tables/<name>_seeds.csv      the per-seed rows behind them
    manifest.json                (sweep) config hash, inventory, cell status
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .clickmodel import (GroundTruthBias, TruthCurve, read_click_log, write_click_log,
                         _atomic_write_text)
from .datasets import (SinbinConfig, build_letor_dataset, device_bias, device_onehot,
                       generate_sinbin, parse_letor)
from .estimators import (ConstantCurve, EmConfig, EstimationError, contextual_em_fit,
                         ctr_estimate, generative_fit, predictor_from_dict, predictor_to_dict,
                         regression_em_fit, semi_contextual_fit, swap_estimate)
from .metrics import MetricSample, format_metric_table, relative_error, summarize
from .ranker import log_with_ranker, run_online_ltr

log = logging.getLogger(__name__)

CONTEXTUAL = ("contextual-em", "contextual-pem", "generative")
NEEDS_SWAPS = ("swap", "semi-swap")
NEEDS_DEVICE = ("semi-ctr", "semi-swap", "semi-em")
ESTIMATORS = ("contextual-em", "contextual-pem", "generative", "em", "ctr", "swap",
              "semi-ctr", "semi-swap", "semi-em")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

@dataclass
class DatasetSpec:
    kind: str = "sinbin"
    n_queries: int = 10_000
    n_test_queries: int = 10_000
    n_items: int = 100
    dq: int = 10
    dd: int = 10
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    sigma: float = 1.0


@dataclass
class RankerSpec:
    lam: float = 1.0
    sigma_n: float = 1.0


@dataclass
class EmSpec:
    epochs: int = 50
    mini_batch: int = 20


@dataclass
class LtrSpec:
    predictors: List[str] = field(default_factory=lambda: ["flat", "em", "contextual-pem"])
    n_queries: int = 10_000

    def __post_init__(self):
        # YAML reads a bare `true` as a boolean
        self.predictors = ["true" if p is True else str(p) for p in self.predictors]
        unknown = set(self.predictors) - set(ESTIMATORS) - {"flat", "true"}
        if unknown:
            raise ConfigError(f"unknown LTR predictors: {sorted(unknown)}")


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    eta: List[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5])
    device_prob: Optional[List[float]] = None
    estimators: List[str] = field(default_factory=lambda: ["contextual-em", "contextual-pem",
                                                           "generative", "em", "ctr", "swap"])
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    randomization: Union[bool, str] = True
    K: int = 10
    ranker: RankerSpec = field(default_factory=RankerSpec)
    em: EmSpec = field(default_factory=EmSpec)
    ltr: Optional[LtrSpec] = field(default_factory=LtrSpec)
    output_dir: str = "out"
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.eta:
            raise ConfigError("eta grid is empty")
        if self.device_prob is not None and not self.device_prob:
            raise ConfigError("device_prob grid is empty")
        if not self.seeds:
            raise ConfigError("no seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.estimators:
            raise ConfigError("no estimators")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ConfigError(f"unknown estimators: {sorted(unknown)}")
        if self.randomization not in (True, False, "both"):
            raise ConfigError("randomization must be true, false or 'both'")
        if self.dataset.kind not in ("sinbin", "letor"):
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        if self.dataset.kind == "letor" and not (self.dataset.train_path and self.dataset.test_path):
            raise ConfigError("letor dataset needs train_path and test_path")
        if any(e < 0 for e in self.eta):
            raise ConfigError("eta must be nonnegative")
        if self.device_prob is not None and any(not 0 <= p <= 0.5 for p in self.device_prob):
            raise ConfigError("device_prob values must lie in [0, 0.5]")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        nested = {"dataset": DatasetSpec, "ranker": RankerSpec, "em": EmSpec, "ltr": LtrSpec}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, typ in nested.items():
            if isinstance(d.get(key), dict):
                d[key] = typ(**d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Digest of everything that can change output bytes (not output_dir/workers)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return ExperimentConfig.from_dict(data or {})


# ---------------------------------------------------------------- cells and seeds

@dataclass(frozen=True)
class Cell:
    eta: float
    device_prob: Optional[float]
    seed: int
    randomized: bool

    @property
    def key(self):
        dev = "none" if self.device_prob is None else f"{self.device_prob:g}"
        return f"eta={self.eta:g}_dev={dev}_seed={self.seed}_rand={int(self.randomized)}"


def cells(config: ExperimentConfig) -> List[Cell]:
    rands = [True, False] if config.randomization == "both" else [bool(config.randomization)]
    devs = config.device_prob if config.device_prob is not None else [None]
    return [Cell(float(e), None if d is None else float(d), int(s), r)
            for e in config.eta for d in devs for s in config.seeds for r in rands]


def derive_seed(master: int, *parts) -> int:
    """Counter-style seed from the master seed and a tuple of labels."""
    digest = hashlib.sha256(repr(parts).encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(words))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def _rng(config, *parts):
    return np.random.default_rng(derive_seed(config.master_seed, *parts))


# ---------------------------------------------------------------- environments

@dataclass
class Environment:
    train: object
    test: object
    bias: GroundTruthBias


@lru_cache(maxsize=4)
def _letor_queries(path):
    return parse_letor(path)


def build_environment(config: ExperimentConfig, cell: Cell) -> Environment:
    """Query sets and ground truth for a cell.

    Catalog, contexts and the uniform draws behind the bias weights depend on
    the seed only, so cells that differ in ``eta`` share them.
    """
    ds = config.dataset
    data_rng = _rng(config, "data", cell.seed)
    if ds.kind == "sinbin":
        sc = SinbinConfig(ds.n_queries, ds.n_test_queries, ds.n_items, ds.dq, ds.dd,
                          config.K, cell.eta, cell.seed)
        d = generate_sinbin(sc, data_rng)
        train, test, bias = d.train, d.test, d.bias
    else:
        d = build_letor_dataset(_letor_queries(ds.train_path), _letor_queries(ds.test_path),
                                eta=cell.eta, sigma=ds.sigma, K=config.K, rng=data_rng)
        train, test, bias = d.train, d.test, d.bias
    if cell.device_prob is not None:
        bias = device_bias(train.dq, cell.eta, _rng(config, "device-bias", cell.seed))
        r_dev = _rng(config, "device", cell.seed, cell.device_prob)
        tr_dev, te_dev = r_dev.spawn(2)
        train = train.with_contexts(np.concatenate(
            [train.contexts, device_onehot(len(train), cell.device_prob, tr_dev)], axis=1))
        test = test.with_contexts(np.concatenate(
            [test.contexts, device_onehot(len(test), cell.device_prob, te_dev)], axis=1))
    return Environment(train, test, bias)


# ---------------------------------------------------------------- estimators

def fit_estimator(name: str, click_log, config: ExperimentConfig, seed: int):
    em = dict(epochs=config.em.epochs, mini_batch=config.em.mini_batch, seed=seed)
    if name == "contextual-em":
        return contextual_em_fit(click_log, EmConfig(mode="em", **em))[0]
    if name == "contextual-pem":
        return contextual_em_fit(click_log, EmConfig(mode="pem", **em))[0]
    if name == "generative":
        return generative_fit(click_log, EmConfig(**em))[0]
    if name == "em":
        return regression_em_fit(click_log, EmConfig(mode="em", **em))[0]
    if name == "ctr":
        return ctr_estimate(click_log)
    if name == "swap":
        return swap_estimate(click_log)
    base = {
        "semi-ctr": ctr_estimate,
        "semi-swap": swap_estimate,
        "semi-em": lambda l: regression_em_fit(l, EmConfig(mode="em", **em))[0],
    }[name]
    return semi_contextual_fit(click_log, "device", base, labels=[0, 1])


def skip_reason(name: str, click_log, cell: Cell) -> Optional[str]:
    if name in NEEDS_SWAPS and not click_log.randomized:
        return "needs swap-randomized log"
    if name in NEEDS_DEVICE and cell.device_prob is None:
        return "needs device contexts"
    return None


# ---------------------------------------------------------------- file helpers

def _paths(out: Path, cell: Cell):
    k = cell.key
    return {
        "log": out / "logs" / f"{k}.jsonl",
        "truth": out / "logs" / f"{k}.truth.json",
        "predictors": out / "predictors" / k,
        "cell": out / "cells" / k,
        "ltr": out / "ltr" / k,
    }


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(path, text)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f(x):
    return repr(float(x))


# ---------------------------------------------------------------- stages

def generate_cell(config: ExperimentConfig, cell: Cell, out: Path) -> List[Path]:
    """Collect one click log with the flat-bias ranker."""
    env = build_environment(config, cell)
    seed = derive_seed(config.master_seed, "log", cell.key)
    click_log = log_with_ranker(env.train, env.bias, np.random.default_rng(seed), K=config.K,
                                randomize=cell.randomized, lam=config.ranker.lam,
                                sigma_n=config.ranker.sigma_n, n_queries=config.dataset.n_queries)
    p = _paths(out, cell)
    p["log"].parent.mkdir(parents=True, exist_ok=True)
    write_click_log(p["log"], click_log, config.hash(), seed)
    truth = dict(env.bias.to_dict(), device_prob=cell.device_prob, K=config.K)
    _write(p["truth"], json.dumps(truth, sort_keys=True) + "\n")
    return [p["log"], p["truth"]]


def estimate_cell(config: ExperimentConfig, cell: Cell, out: Path) -> List[Path]:
    """Fit every configured estimator on the cell's log and score it."""
    p = _paths(out, cell)
    if not p["log"].exists():
        raise FileNotFoundError(f"missing click log {p['log']}")
    click_log = read_click_log(p["log"])
    truth = json.loads(p["truth"].read_text())
    bias = GroundTruthBias.from_dict(truth)
    written, rows, curves, skipped = [], [], [], {}
    curves.append(["truth"] + [_f(v) for v in bias.curve(click_log.contexts, config.K).mean(0)])
    for name in config.estimators:
        reason = skip_reason(name, click_log, cell)
        if reason is None:
            try:
                seed = derive_seed(config.master_seed, "fit", name, cell.key)
                pred = fit_estimator(name, click_log, config, seed)
            except EstimationError as exc:
                reason = f"estimation failed: {exc}"
        if reason is not None:
            skipped[name] = reason
            continue
        desc = {"estimator": name, "seed": seed, "normalization": "position-1",
                "em": asdict(config.em), "predictor": predictor_to_dict(pred)}
        path = p["predictors"] / f"{name}.json"
        _write(path, json.dumps(desc) + "\n")
        written.append(path)
        err = relative_error(pred, bias, click_log.contexts, config.K)
        rows.append(MetricSample(name, cell.eta, cell.device_prob, cell.seed, "relative_error", err))
        est = pred.predict(click_log.contexts)
        curves.append([name] + [_f(v) for v in (est / est[:, :1]).mean(0)])
    files = {
        "relerror.csv": format_metric_table(rows),
        "curves.csv": _csv(curves, ["estimator"] + [f"k{k}" for k in range(1, config.K + 1)]),
        "skipped.json": json.dumps(skipped, sort_keys=True, indent=1) + "\n",
    }
    for fname, text in files.items():
        _write(p["cell"] / fname, text)
        written.append(p["cell"] / fname)
    return written


def load_predictor(path):
    return predictor_from_dict(json.loads(Path(path).read_text())["predictor"])


def ltr_cell(config: ExperimentConfig, cell: Cell, out: Path) -> List[Path]:
    """Online LTR on the test split with each configured bias estimate."""
    if config.ltr is None:
        return []
    p = _paths(out, cell)
    env = build_environment(config, cell)
    rows, written = [], []
    for name in config.ltr.predictors:
        if name == "flat":
            pred = ConstantCurve(np.ones(config.K))
        elif name == "true":
            pred = TruthCurve(env.bias, config.K)
        else:
            path = p["predictors"] / f"{name}.json"
            if not path.exists():
                raise FileNotFoundError(f"missing predictor {path}")
            pred = load_predictor(path)
        rng = _rng(config, "ltr", cell.eta, cell.device_prob, cell.seed)
        traj = run_online_ltr(env.test, pred, config.ltr.n_queries, env.bias, rng, K=config.K,
                              lam=config.ranker.lam, sigma_n=config.ranker.sigma_n)
        tpath = p["ltr"] / f"{name}.csv"
        _write(tpath, _csv([(i, _f(d), _f(q)) for i, d, q in traj.rows()],
                           ["query_index", "dcg_at_k", "precision_at_k"]))
        written.append(tpath)
        for metric, value in traj.summary().items():
            rows.append(MetricSample(name, cell.eta, cell.device_prob, cell.seed, metric, value))
    path = p["cell"] / "ltr.csv"
    _write(path, format_metric_table(rows))
    written.append(path)
    return written


def _ltr_cells(config):
    # LTR runs once per (eta, device_prob, seed), on the randomized log's predictors if present
    want = config.randomization in (True, "both")
    return [c for c in cells(config) if c.randomized == want]


# ---------------------------------------------------------------- aggregation

def _read_rows(path):
    from .metrics import read_metric_table
    return read_metric_table(path) if path.exists() else []


def aggregate(config: ExperimentConfig, out: Path) -> List[Path]:
    """Rebuild the summary tables from per-cell outputs."""
    out = Path(out)
    all_cells = cells(config)
    rel, ltr = [], []
    for c in all_cells:
        rows = _read_rows(out / "cells" / c.key / "relerror.csv")
        for r in rows:
            r.metric = "relative_error" if c.randomized else "relative_error_nonrandomized"
        rel += rows
        ltr += _read_rows(out / "cells" / c.key / "ltr.csv")
    brng = _rng(config, "bootstrap")
    written = []

    def emit(name, per_seed, summary):
        # summary rows (mean + CI) are the plot-ready table; per-seed rows sit beside it
        for fname, rows in ((name, summary), (name.replace(".csv", "_seeds.csv"), per_seed)):
            path = out / "tables" / fname
            _write(path, format_metric_table(rows))
            written.append(path)

    emit("relerror.csv", rel, summarize(rel, rng=brng))
    if config.randomization == "both":
        by_key = {}
        for r in rel:
            by_key.setdefault((r.estimator, r.eta, r.device_prob, r.seed), {})[r.metric] = r.value
        diff = [MetricSample(k[0], k[1], k[2], k[3], "relative_error_difference",
                             v["relative_error"] - v["relative_error_nonrandomized"])
                for k, v in by_key.items() if len(v) == 2]
        emit("relerror_diff.csv", diff, summarize(diff, rng=brng))
    if config.device_prob is not None:
        randomized = [r for r in rel if r.metric == "relative_error"]
        emit("device.csv", randomized, summarize(randomized, rng=brng))
    if ltr:
        emit("ltr.csv", ltr, summarize(ltr, rng=brng))
    return written


# ---------------------------------------------------------------- commands

def _out(config, out):
    return Path(out if out is not None else config.output_dir)


def _run_stage(stage, config, cell_list, out):
    out.mkdir(parents=True, exist_ok=True)
    for c in cell_list:
        log.info("%s %s", stage.__name__, c.key)
        stage(config, c, out)


def cmd_generate(config: ExperimentConfig, out=None):
    out = _out(config, out)
    _run_stage(generate_cell, config, cells(config), out)
    return out


def cmd_estimate(config: ExperimentConfig, out=None):
    out = _out(config, out)
    _run_stage(estimate_cell, config, cells(config), out)
    aggregate(config, out)
    return out


def cmd_ltr(config: ExperimentConfig, out=None):
    out = _out(config, out)
    _run_stage(ltr_cell, config, _ltr_cells(config), out)
    aggregate(config, out)
    return out


def run_cell(config: ExperimentConfig, cell: Cell, out: Path) -> List[str]:
    """All stages for one cell; returns the written files relative to ``out``."""
    files = generate_cell(config, cell, out) + estimate_cell(config, cell, out)
    if cell in _ltr_cells(config):
        files += ltr_cell(config, cell, out)
    return sorted(str(Path(f).relative_to(out)) for f in files)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _cell_complete(entry, out: Path, config_hash: str) -> bool:
    if not entry or entry.get("status") != "done" or entry.get("config_hash") != config_hash:
        return False
    for rel, digest in entry["files"].items():
        f = out / rel
        if not f.exists() or _sha(f) != digest:
            return False
    return True


def _cell_job(args):
    config_dict, cell, out = args
    config = ExperimentConfig.from_dict(config_dict)
    try:
        files = run_cell(config, cell, Path(out))
        return cell.key, {"status": "done", "files": {f: _sha(Path(out) / f) for f in files}}
    except Exception as exc:  # one failing cell must not stop the sweep
        log.exception("cell %s failed", cell.key)
        return cell.key, {"status": "failed", "error": f"{type(exc).__name__}: {exc}", "files": {}}


def cmd_sweep(config: ExperimentConfig, out=None, workers: Optional[int] = None) -> dict:
    """generate -> estimate -> ltr for every cell, resuming from ``manifest.json``."""
    out = _out(config, out)
    out.mkdir(parents=True, exist_ok=True)
    workers = config.workers if workers is None else workers
    h = config.hash()
    mpath = out / "manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
    if manifest.get("config_hash") != h:
        manifest = {}
    status = dict(manifest.get("cells", {}))
    todo = [c for c in cells(config) if not _cell_complete(status.get(c.key), out, h)]
    for c in cells(config):
        if c not in todo:
            log.info("cell %s up to date", c.key)
    jobs = [(config.to_dict(), c, str(out)) for c in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    for key, entry in results:
        entry["config_hash"] = h
        status[key] = entry
    keys = [c.key for c in cells(config)]
    tables = aggregate(config, out)
    manifest = {
        "config_hash": h,
        "config": config.to_dict() | {"output_dir": None, "workers": None},
        "master_seed": config.master_seed,
        "seeds": list(config.seeds),
        "cells": {k: status[k] for k in keys},
        "tables": {str(p.relative_to(out)): _sha(p) for p in sorted(tables)},
    }
    log.info("recomputed %d of %d cells", len(results), len(keys))
    _write(mpath, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest
