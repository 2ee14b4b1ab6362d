import json

import numpy as np
import pytest

from ctxpbm.cli import main
from ctxpbm.clickmodel import read_click_log
from ctxpbm.experiment import (Cell, ConfigError, ExperimentConfig, cells, cmd_estimate,
                               cmd_generate, cmd_ltr, cmd_sweep, derive_seed, load_config)
from ctxpbm.metrics import read_metric_table

TINY = {
    "dataset": {"n_queries": 150, "n_test_queries": 100, "n_items": 15, "dq": 3, "dd": 3},
    "eta": [0.0, 1.0],
    "seeds": [0],
    "K": 5,
    "estimators": ["contextual-em", "em", "ctr", "swap"],
    "em": {"epochs": 1},
    "ltr": {"predictors": ["flat", "em", "contextual-em"], "n_queries": 60},
}


def tiny(**over):
    d = json.loads(json.dumps(TINY))
    d.update(over)
    return ExperimentConfig.from_dict(d)


def files(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("bad", [{"eta": []}, {"seeds": []}, {"seeds": [1, 1]}, {"estimators": ["magic"]},
                                 {"randomization": "sometimes"}, {"device_prob": [0.7]},
                                 {"bogus": 1}, {"ltr": {"predictors": ["nope"]}},
                                 {"dataset": {"kind": "letor"}}])
def test_invalid_configs(bad):
    d = dict(TINY)
    d.update(bad)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(d)


def test_yaml_and_json_configs_agree(tmp_path):
    import yaml
    (tmp_path / "c.json").write_text(json.dumps(TINY))
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(TINY))
    assert load_config(tmp_path / "c.json") == load_config(tmp_path / "c.yaml")
    (tmp_path / "t.yaml").write_text("ltr: {predictors: [flat, true]}\n")
    assert load_config(tmp_path / "t.yaml").ltr.predictors == ["flat", "true"]


def test_hash_tracks_every_output_relevant_field():
    base = tiny()
    variants = [tiny(eta=[0.0]), tiny(seeds=[1]), tiny(K=4), tiny(master_seed=3),
                tiny(em={"epochs": 2}), tiny(randomization=False)]
    hashes = {v.hash() for v in variants}
    assert base.hash() not in hashes and len(hashes) == len(variants)
    assert tiny(output_dir="elsewhere", workers=4).hash() == base.hash()


def test_cell_grid_and_keys():
    cfg = tiny(randomization="both", device_prob=[0.1, 0.3])
    cs = cells(cfg)
    assert len(cs) == 2 * 2 * 1 * 2
    assert Cell(1.5, 0.1, 2, True).key == "eta=1.5_dev=0.1_seed=2_rand=1"
    assert len({c.key for c in cs}) == len(cs)


def test_seed_derivation_is_stable_and_local():
    a = derive_seed(0, "log", "eta=0_dev=none_seed=0_rand=1")
    assert a == derive_seed(0, "log", "eta=0_dev=none_seed=0_rand=1")
    assert a != derive_seed(1, "log", "eta=0_dev=none_seed=0_rand=1")
    assert a != derive_seed(0, "fit", "eta=0_dev=none_seed=0_rand=1")


def test_generate_writes_one_log_per_cell(tmp_path):
    cfg = tiny(randomization=False)
    cmd_generate(cfg, tmp_path)
    logs = sorted((tmp_path / "logs").glob("*.jsonl"))
    assert len(logs) == 2
    log = read_click_log(logs[0])
    assert (log.n, log.K) == (150, 5) and not log.swap_parity.any()
    assert log.meta["config_hash"] == cfg.hash()
    first = logs[0].read_bytes()
    cmd_generate(cfg, tmp_path)
    assert logs[0].read_bytes() == first


def test_estimate_tables_and_skips(tmp_path):
    cfg = tiny(eta=[0.0, 0.5, 1.0, 1.5], randomization="both", estimators=["contextual-em", "em", "ctr", "swap"])
    cmd_generate(cfg, tmp_path)
    cmd_estimate(cfg, tmp_path)
    rows = read_metric_table(tmp_path / "tables" / "relerror.csv")
    randomized = [r for r in rows if r.metric == "relative_error"]
    assert len(randomized) == 4 * 4
    assert all(r.seed == "all" and r.ci_low <= r.value <= r.ci_high for r in rows)
    skipped = json.loads((tmp_path / "cells" / "eta=0_dev=none_seed=0_rand=0" / "skipped.json").read_text())
    assert list(skipped) == ["swap"]
    diff = read_metric_table(tmp_path / "tables" / "relerror_diff.csv")
    assert {r.estimator for r in diff} == {"contextual-em", "em", "ctr"}
    curves = (tmp_path / "cells" / "eta=1_dev=none_seed=0_rand=1" / "curves.csv").read_text().splitlines()
    assert curves[0] == "estimator,k1,k2,k3,k4,k5" and curves[1].startswith("truth,1.0,")


def test_estimate_needs_logs(tmp_path):
    with pytest.raises(FileNotFoundError):
        cmd_estimate(tiny(), tmp_path)


def test_ltr_needs_predictors(tmp_path):
    with pytest.raises(FileNotFoundError):
        cmd_ltr(tiny(), tmp_path)


def test_ltr_table(tmp_path):
    cfg = tiny(eta=[1.0], seeds=[0, 1])
    cmd_generate(cfg, tmp_path)
    cmd_estimate(cfg, tmp_path)
    cmd_ltr(cfg, tmp_path)
    rows = read_metric_table(tmp_path / "tables" / "ltr.csv")
    dcg = [r for r in rows if r.metric == "dcg_mean"]
    assert sorted(r.estimator for r in dcg) == ["contextual-em", "em", "flat"]
    traj = (tmp_path / "ltr" / "eta=1_dev=none_seed=0_rand=1" / "flat.csv").read_text().splitlines()
    assert traj[0] == "query_index,dcg_at_k,precision_at_k" and len(traj) == 61


def test_device_grid_table(tmp_path):
    cfg = tiny(eta=[1.5], device_prob=[0.2, 0.5], seeds=[0, 1], ltr=None,
               estimators=["ctr", "semi-ctr", "semi-swap"],
               dataset=dict(TINY["dataset"], n_queries=1500))
    cmd_sweep(cfg, tmp_path)
    rows = read_metric_table(tmp_path / "tables" / "device.csv")
    assert {(r.estimator, r.device_prob) for r in rows} == {
        (e, p) for e in ("ctr", "semi-ctr", "semi-swap") for p in (0.2, 0.5)}
    log = read_click_log(next((tmp_path / "logs").glob("*.jsonl")))
    assert log.dq == 5 and np.all(log.contexts[:, -2:].sum(axis=1) == 1)


def test_sweep_is_byte_deterministic(tmp_path):
    cfg = tiny(randomization="both")
    cmd_sweep(cfg, tmp_path / "a")
    cmd_sweep(cfg, tmp_path / "b", workers=2)
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_sweep_resumes_only_damaged_cells(tmp_path):
    cfg = tiny()
    cmd_sweep(cfg, tmp_path)
    before = files(tmp_path)
    victim = tmp_path / "cells" / "eta=1_dev=none_seed=0_rand=1" / "relerror.csv"
    victim.unlink()
    stamps = {p: p.stat().st_mtime_ns for p in (tmp_path / "logs").glob("*.jsonl")}
    manifest = cmd_sweep(cfg, tmp_path)
    assert files(tmp_path) == before
    touched = [p.name for p, t in stamps.items() if p.stat().st_mtime_ns != t]
    assert touched == ["eta=1_dev=none_seed=0_rand=1.jsonl"]
    assert all(c["status"] == "done" for c in manifest["cells"].values())
    assert manifest["config_hash"] == cfg.hash() and manifest["seeds"] == [0]


def test_changed_config_recomputes(tmp_path):
    cmd_sweep(tiny(), tmp_path)
    manifest = cmd_sweep(tiny(master_seed=5), tmp_path)
    assert manifest["config_hash"] == tiny(master_seed=5).hash()


def test_failing_cell_does_not_stop_sweep(tmp_path, monkeypatch):
    import ctxpbm.experiment as ex
    real = ex.estimate_cell

    def flaky(config, cell, out):
        if cell.eta == 1.0:
            raise RuntimeError("boom")
        return real(config, cell, out)

    monkeypatch.setattr(ex, "estimate_cell", flaky)
    manifest = cmd_sweep(tiny(), tmp_path)
    status = {k: v["status"] for k, v in manifest["cells"].items()}
    assert status == {"eta=0_dev=none_seed=0_rand=1": "done", "eta=1_dev=none_seed=0_rand=1": "failed"}


def test_cli_round_trip(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(TINY, eta=[0.5])))
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--seed", "3", "--workers", "1"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 3
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o2"), "--seed", "3"]) == 0
    assert (tmp_path / "o2" / "logs" / "eta=0.5_dev=none_seed=0_rand=1.jsonl").read_bytes() == \
        (out / "logs" / "eta=0.5_dev=none_seed=0_rand=1.jsonl").read_bytes()
    assert main(["sweep", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])
