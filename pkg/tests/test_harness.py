import json

import numpy as np
import pytest

from pacnet.harness import (CSV_HEADER, ExperimentConfig, ExperimentRecord, aggregate,
                            format_table, read_csv, records_to_csv, run)
from pacnet.nn import load_checkpoint
from pacnet.tasks.diffusion import load_fieldgrids

TINY = {"pretrain": {"epochs": 2, "batch_size": 256}, "allocate": {"epochs": 2, "batch_size": 256},
        "calibrate": {"epochs": 3, "batch_size": 16}}
NET = {"width": 8, "depth": 2}


def tiny(**kw):
    base = dict(task="friedman", strategies=["pacnet", "fine_tuning"], n_targets=[5, 10, 20],
                seeds=[0, 1], budgets=TINY, network=NET)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def grid():
    return run(tiny())


def test_grid_cardinality(grid):
    assert len(grid) == 12
    cells = {(r.strategy, r.n_target, r.seed) for r in grid}
    assert len(cells) == 12
    assert all(r.flag == "" and np.isfinite(r.value) for r in grid)


def test_rerun_gives_identical_csv(grid, tmp_path):
    a = run(tiny(out_dir=str(tmp_path / "a")))
    b = run(tiny(out_dir=str(tmp_path / "b")))
    ca = (tmp_path / "a" / "friedman_1.csv").read_bytes()
    assert ca == (tmp_path / "b" / "friedman_1.csv").read_bytes()
    assert records_to_csv(a) == records_to_csv(grid)


def test_removing_a_strategy_leaves_others_unchanged(grid):
    alone = run(tiny(strategies=["fine_tuning"]))
    ref = {(r.n_target, r.seed): r.value for r in grid if r.strategy == "fine_tuning"}
    assert {(r.n_target, r.seed): r.value for r in alone} == ref


def test_records_sorted(grid):
    keys = [(r.strategy != "pacnet", r.n_target, r.seed) for r in grid]
    assert keys == sorted(keys)


def test_workers_env(grid, monkeypatch):
    monkeypatch.setenv("PACNET_WORKERS", "2")
    assert records_to_csv(run(tiny())) == records_to_csv(grid)
    monkeypatch.setenv("PACNET_WORKERS", "0")
    with pytest.raises(ValueError):
        run(tiny())
    monkeypatch.setenv("PACNET_WORKERS", "many")
    with pytest.raises(ValueError):
        run(tiny())


def rec(strategy, n, seed, value, metric="rmse"):
    return ExperimentRecord("friedman", strategy, "1", n, seed, metric, value)


def test_aggregate_examples():
    one = aggregate([rec("a", 10, 0, 1.5), rec("a", 50, 0, 2.5)])
    assert one[0]["means"] == {10: 1.5, 50: 2.5}
    two = aggregate([rec("a", 10, 0, 1.0), rec("a", 10, 1, 3.0)])
    assert two[0]["means"][10] == 2.0 and two[0]["avg"] == 2.0
    row = [6.7, 5.8, 5.1, 4.6, 4.1, 4.0, 3.7, 3.6, 3.4, 3.3]
    table = aggregate([rec("pacnet", 10 * (i + 1), 0, v) for i, v in enumerate(row)])
    assert table[0]["avg"] == pytest.approx(4.43, abs=1e-12)
    assert round(table[0]["avg"], 1) == 4.4
    with pytest.raises(ValueError):
        aggregate([])


def test_aggregate_propagates_nan_and_formats():
    rows = aggregate([rec("a", 10, 0, float("nan")), rec("b", 10, 0, 2.0)])
    assert np.isnan(rows[0]["avg"])
    text = format_table(rows)
    assert text.splitlines()[0].split()[:2] == ["method", "metric"]
    assert "2.00" in text


def test_csv_format_and_round_trip(tmp_path):
    records = [rec("pacnet", 10, 0, 0.1 + 0.2), ExperimentRecord(
        "friedman", "pcnet", "1", 10, 0, "rmse", float("nan"), 'error: bad, "quoted"', 12.0)]
    text = records_to_csv(records)
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert "\r" not in text and text.endswith("\n")
    assert "0.30000000000000004" in text
    assert '"error: bad, ""quoted"""' in text
    # wall time is only written when timing is requested
    assert text.splitlines()[2].endswith(",")
    assert records_to_csv(records, timing=True).splitlines()[2].endswith(",12")
    path = tmp_path / "r.csv"
    path.write_text(text)
    back = read_csv(path)
    assert back[0].value == 0.1 + 0.2 and back[1].flag == 'error: bad, "quoted"'


def test_outputs_manifest_and_checkpoints(tmp_path):
    out = tmp_path / "run"
    run(tiny(seeds=[0], strategies=["pacnet"], n_targets=[5], out_dir=str(out)))
    man = json.loads((out / "friedman_1.manifest.json").read_text())
    assert man["tool"] == "pacnet" and man["config"]["budgets"]["pretrain"]["epochs"] == 2
    assert man["config"]["lam"] == 0.01 and man["config"]["prune_ratio"] == 0.8
    src, mask = load_checkpoint(out / "checkpoints" / "friedman_1_seed0_source.pacnet")
    assert mask is None and src.spec.hidden[0][0] == 8
    alloc, mask = load_checkpoint(out / "checkpoints" / "friedman_1_seed0_allocated.pacnet")
    assert np.all(alloc.params[~mask] == 0)


def test_failed_cells_are_flagged():
    records = run(tiny(seeds=[0], n_targets=[0, 5], strategies=["pacnet"]))
    bad = [r for r in records if r.n_target == 0]
    good = [r for r in records if r.n_target == 5]
    assert bad[0].flag.startswith("error:") and np.isnan(bad[0].value)
    assert good[0].flag == "" and np.isfinite(good[0].value)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny(task="celeba")
    with pytest.raises(ValueError):
        tiny(strategies=["boosting"])
    with pytest.raises(ValueError):
        tiny(prune_ratio=1.0)
    with pytest.raises(ValueError):
        tiny(seeds=[])
    with pytest.raises(ValueError):
        tiny(budgets={"warmup": {"epochs": 1, "batch_size": 1}})


def test_diffusion_run_writes_oracle_fields(tmp_path):
    budgets = {"pretrain": {"epochs": 1, "batch_size": 32, "max_steps": 3},
               "allocate": {"epochs": 1, "batch_size": 32, "max_steps": 3},
               "calibrate": {"epochs": 1, "batch_size": 32, "max_steps": 3}}
    cfg = ExperimentConfig("diffusion", ["pacnet"], [64], [0], budgets=budgets,
                           network={"width": 8, "depth": 2},
                           options={"grid_n": 21, "pools": [64, 16, 16]},
                           out_dir=str(tmp_path), save_checkpoints=False)
    records = run(cfg)
    assert [r.metric for r in records] == ["rmse_t0.25", "rmse_t0.5", "rmse_t0.75", "rmse_t1",
                                          "rmse_avg"]
    assert records[-1].value == pytest.approx(np.mean([r.value for r in records[:4]]))
    grids = load_fieldgrids(tmp_path / "diffusion_oracle.fields")
    assert [g.time for g in grids] == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert (tmp_path / "diffusion_0.01-_0.1.csv").exists()


def test_duffing_run():
    cfg = ExperimentConfig("duffing", ["pacnet", "target_only"], [5], [0],
                           budgets={k: {"epochs": 1, "batch_size": 64} for k in TINY},
                           network={"width": 8, "depth": 2},
                           options={"n_source_traj": 2, "n_target_traj": 2, "substeps": 2})
    records = run(cfg)
    assert len(records) == 2 and all(np.isfinite(r.value) for r in records)
