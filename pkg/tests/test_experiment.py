import csv
import hashlib
import math
from dataclasses import replace

import numpy as np
import pytest

from fairldam import dataspace as ds
from fairldam import experiment as ex
from fairldam.losses import LossSpec
from fairldam.metrics import TradeoffPoint
from fairldam.model import TrainConfig

FAST = TrainConfig(hidden_dim=16, epochs=15)


def small(**kw):
    base = dict(n_train=400, n_dev=100, n_test=300, train=FAST)
    base.update(kw)
    return ex.ExperimentConfig(**base)


def test_mix_seed_definition():
    digest = hashlib.blake2b(b"7:c0003", digest_size=8).digest()
    assert ex.mix_seed(7, "c0003") == int.from_bytes(digest, "big") % 2**63
    assert ex.mix_seed(7, "c0003") != ex.mix_seed(7, "c0004")
    assert 0 <= ex.mix_seed(123456789, "x") < 2**63


def test_presets():
    tr, te = ex.preset_ratios("original", 1000, 500)
    assert ds.cell_targets(tr).tolist() == [[54, 246], [126, 574]]
    assert te.target_size == 500 and te.stereotype == tr.stereotype
    tr, te = ex.preset_ratios("table1(0.8)", 1000, 400)
    assert ds.cell_targets(tr).tolist() == [[100, 400], [400, 100]]
    assert ds.cell_targets(te).tolist() == [[100, 100], [100, 100]]
    tr, te = ex.preset_ratios("table2(0.9)", 1000, 400)
    assert ds.cell_targets(tr).tolist() == [[20, 80], [720, 180]]
    assert te.positive_fraction == 0.9
    assert ds.cell_targets(ex.preset_ratios("95-95", 2000, 10)[0]).tolist() == [[5, 95], [1805, 95]]
    with pytest.raises(ValueError):
        ex.preset_ratios("table3(0.1)", 10, 10)


def test_config_roundtrip_and_source_check():
    cfg = small(loss=LossSpec("LDAM_ADV", C=0.3, lambda_adv=0.2), seed=5, setting="90-90")
    assert ex.ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ex.ExperimentConfig(synthetic=None)


def test_splits_shapes_and_disjoint_test():
    cfg = small(setting="table1(0.8)")
    sp = ex.build_splits(cfg)
    assert (len(sp.train), len(sp.dev), len(sp.test)) == (400, 100, 300)
    n_yg = ds.compute_counts(sp.test).n_yg
    assert n_yg[0, 0] == n_yg[0, 1] and n_yg[1, 0] == n_yg[1, 1]
    train_rows = {tuple(r) for r in sp.train.features}
    assert not any(tuple(r) in train_rows for r in sp.test.features)
    # loss hyperparameters do not change the data
    other = ex.build_splits(replace(cfg, loss=LossSpec("LDAM", C=2.0), config_id="c0009"))
    assert other.train.equals(sp.train) and other.test.equals(sp.test)


def test_vanilla_balanced_is_fair():
    row = ex.run_experiment(ex.ExperimentConfig(setting="table1(0.5)"))
    assert 1.0 - row.test_gap >= 0.9
    assert all(0.0 <= v <= 1.0 for v in (row.dev_f, row.dev_gap, row.test_f, row.test_gap))


def test_run_deterministic():
    cfg = small(loss=LossSpec("LDAM_ADV", C=0.5, lambda_adv=0.5))
    assert ex.run_experiment(cfg) == ex.run_experiment(cfg)


def test_csv_source(tmp_path):
    pool = ds.generate_synthetic(ds.SyntheticSpec(ratios=ds.stereotyped(0.5, 0.5, 4000)), 3)
    ds.save_csv(pool, tmp_path / "pool.csv")
    cfg = small(synthetic=None, csv_path=str(tmp_path / "pool.csv"))
    row = ex.run_experiment(cfg)
    assert row.ok and 0.0 <= row.test_f <= 1.0


def test_large_rho_fairer_than_zero():
    wins = 0
    for seed in range(5):
        cfg = small(setting="table1(0.8)", seed=seed)
        sp = ex.build_splits(cfg)
        lo = ex.run_experiment(replace(cfg, loss=LossSpec("LDAM_REG", C=0.1, rho=0.0)), sp)
        hi = ex.run_experiment(replace(cfg, loss=LossSpec("LDAM_REG", C=0.1, rho=100.0)), sp)
        wins += hi.test_gap < lo.test_gap
    assert wins >= 3


def test_default_grid_ranges():
    g = ex.SweepGrid()
    for axis, lo, hi in ((g.C, 1e-2, 30.0), (g.rho, 1e-4, 1e2), (g.lambda_adv, 1e-4, 1e2)):
        assert len(axis) == 10
        assert math.isclose(axis[0], lo) and math.isclose(axis[-1], hi)
        ratios = np.diff(np.log(axis))
        np.testing.assert_allclose(ratios, ratios[0])
    assert g.inlp_iters == tuple(range(1, 11))


def test_grid_uses_only_relevant_axes():
    g = ex.SweepGrid(C=(0.1, 1.0), rho=(0.0, 1.0, 2.0), settings=("table1(0.5)", "table1(0.8)"))
    assert len(g.configs(small(loss=LossSpec("VANILLA")))) == 2
    assert len(g.configs(small(loss=LossSpec("LDAM")))) == 4
    cfgs = g.configs(small(loss=LossSpec("LDAM_REG")))
    assert len(cfgs) == 12
    assert [c.config_id for c in cfgs] == [f"c{i:04d}" for i in range(12)]
    with pytest.raises(ValueError):
        ex.SweepGrid(rho=()).configs(small(loss=LossSpec("LDAM_REG")))


def test_sweep_three_rho_values():
    grid = ex.SweepGrid(C=(0.1,), rho=(0.01, 1.0, 100.0))
    base = small(loss=LossSpec("LDAM_REG"), train=TrainConfig(hidden_dim=8, epochs=3))
    rows = ex.run_sweep(grid, base)
    assert [r.rho for r in rows] == [0.01, 1.0, 100.0]
    assert rows == ex.run_sweep(grid, base)
    assert rows == ex.run_sweep(grid, base, jobs=2)


def test_sweep_records_failures():
    grid = ex.SweepGrid(settings=("table1(0.5)", "table1(0.999)"))
    rows = ex.run_sweep(grid, small(train=TrainConfig(hidden_dim=4, epochs=1)))
    assert rows[0].ok
    assert rows[1].status.startswith("error: CellStarvationError")
    assert math.isnan(rows[1].test_f)


def _row(cid, setting, method, dev_f, dev_gap, test_f, test_gap):
    return ex.ResultRow(cid, method, 0.1, 0.0, 0.0, 0.9999, 2.0, setting, dev_f, dev_gap, test_f, test_gap)


def test_rows_csv_roundtrip(tmp_path):
    rows = [_row("c0000", "table1(0.5)", "LDAM", 0.8, 0.1, 0.7, 0.2),
            replace(_row("c0001", "table1(0.5)", "LDAM", math.nan, math.nan, math.nan, math.nan), status="error: X: y")]
    ex.write_rows(rows, tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header.startswith("config_id,variant,C,rho,lambda,beta,gamma,setting,dev_f,dev_gap,test_f,test_gap")
    back = ex.read_rows(tmp_path / "r.csv")
    assert back[0] == rows[0]
    assert back[1].status == "error: X: y" and math.isnan(back[1].dev_f)


def test_frontier_file(tmp_path):
    pts = [(0.5, 0.9), (0.6, 0.8), (0.55, 0.85), (0.5, 0.8)]
    rows = [_row(f"c{i:04d}", "s", "LDAM", 0, 0, f, 1 - fair) for i, (f, fair) in enumerate(pts)]
    front = ex.emit_frontier(rows, tmp_path / "f.csv")
    with open(tmp_path / "f.csv") as fh:
        recs = list(csv.DictReader(fh))
    assert [r["config_id"] for r in recs] == ["c0001", "c0002", "c0000"]
    assert [p.config_id for p in front] == ["c0001", "c0002", "c0000"]
    one = ex.emit_frontier(rows[:1], tmp_path / "g.csv")
    assert one == [TradeoffPoint(0.5, 1 - (1 - 0.9), "c0000")]


def test_table_protocol_one_line_per_ratio_and_method(tmp_path):
    rows = []
    for i, r in enumerate((0.5, 0.6, 0.7, 0.8)):
        for method in ("VANILLA", "LDAM_REG"):
            rows.append(_row(f"c{len(rows):04d}", f"table1({r})", method, 0.8, 0.1, 0.7 + i / 100, 0.2))
    table = ex.emit_table(rows, tmp_path / "t.csv")
    assert len(table) == 8
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "setting,method,f,one_minus_gap,n" and len(lines) == 9


def test_select_rows_per_setting():
    rows = [_row("c0000", "a", "M", 0.8, 0.4, 0, 0), _row("c0001", "a", "M", 0.7, 0.1, 0, 0),
            _row("c0002", "b", "M", 0.6, 0.2, 0, 0)]
    chosen = ex.select_rows(rows, "HARMONIC_MEAN")
    assert chosen["a"].config_id == "c0001" and chosen["b"].config_id == "c0002"
    assert ex.select_rows(rows, "BEST_DEV_F")["a"].config_id == "c0000"
