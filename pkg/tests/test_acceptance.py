"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``. Criteria 6 and 7
train several hundred models each and take a few minutes.
"""

import math
import random
import time

import numpy as np
import pytest

from fairldam import inlp as I
from fairldam import losses as L
from fairldam import metrics as Mx
from fairldam import model as M
from fairldam.cli import main
from fairldam.dataspace import make_rng
from fairldam.losses import LossSpec, Variant
from fairldam.protocols import imbalance_protocol, medians, run_protocol, stereotyping_protocol

from test_losses import counts_from
from test_metrics import brute_frontier, brute_macro_f, brute_rates


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_gradient_correctness(report):
    t0 = time.perf_counter()
    worst = {}
    for v in Variant:
        spec = LossSpec(v, C=0.7, rho=0.8, lambda_adv=0.6, gamma=2.0)
        errs = []
        for k in range(20):
            rng = make_rng(900, k)
            X = rng.standard_normal((5, 3))
            y = np.array([0, 1, *rng.integers(0, 2, 3)])
            g = np.array([0, 1, *rng.integers(0, 2, 3)])
            params = M.init_params(3, 4, 2, 2 if v is Variant.LDAM_ADV else None, 1000 + k, init_scale=1.0)
            errs.append(M.grad_check(params, (X, y, g), spec, 1e-5))
        worst[v.value] = max(errs)
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    report(1, top < 1e-4 and elapsed < 10.0, f"max rel err {top:.2e} over 9 variants x 20 instances in {elapsed:.1f}s")


def test_criterion_2_closed_forms(report):
    beta = 0.9999
    checks = [
        L.ldam_margins([16, 81], 1.0).tolist() == [0.5, 1.0 / 3.0],
        abs(L.ldam_loss([0.0, 0.0], 0, [math.log(2), 0.0])[0] - math.log(3)) <= 1e-12,
        abs(L.raw_group_weights([[1]], beta)[0, 0] - 1.0) <= 1e-12,
        abs(L.raw_group_weights([[2]], beta)[0, 0] - 1.0 / (1.0 + beta)) <= 1e-12,
        abs(L.mmd_penalty(np.array([[0.0], [0.0], [1.0], [1.0]]), [0, 0, 1, 1]) - 0.5) <= 1e-12,
    ]
    report(2, all(checks), f"{sum(checks)}/5 closed-form values match")


def test_criterion_3_reductions(report):
    rng = make_rng(901)
    z = rng.normal(size=(40, 2)) * 3
    y = rng.integers(0, 2, 40)
    g = rng.integers(0, 2, 40)
    skew = counts_from([[12, 50], [90, 8]])
    balanced = counts_from([[25, 25], [25, 25]])

    def total(variant, counts, **kw):
        spec = LossSpec(variant, **kw)
        return L.objective_terms(z, y, g, spec, L.LossTables.build(spec, counts)).total

    ce = L.cross_entropy(z, y).mean()
    diffs = {
        "LDAM(C=0)": abs(total("LDAM", skew, C=0.0) - ce),
        "FOCAL(g=0)": abs(total("FOCAL", skew, gamma=0.0) - ce),
        "REG(rho=0)": abs(total("LDAM_REG", skew, C=0.6, rho=0.0) - total("LDAM", skew, C=0.6)),
        "CW balanced": abs(total("CW", balanced) - ce),
        "IW balanced": abs(total("IW", balanced) - ce),
    }
    X = rng.normal(size=(6, 3))
    yy, gg = np.array([0, 1, 1, 0, 1, 0]), np.array([0, 0, 1, 1, 1, 0])
    params = M.init_params(3, 4, 2, 2, 5, init_scale=1.0)
    g_adv, _ = M.gradient(params, (X, yy, gg), LossSpec("LDAM_ADV", C=0.6, lambda_adv=0.0))
    g_ldam, _ = M.gradient(params.with_arrays(Wa=None, ba=None), (X, yy, gg), LossSpec("LDAM", C=0.6))
    diffs["ADV(l=0) shared grads"] = max(float(np.abs(g_adv[k] - g_ldam[k]).max()) for k in ("W1", "b1", "W2", "b2"))
    worst = max(diffs, key=diffs.get)
    report(3, all(d <= 1e-12 for d in diffs.values()), f"largest deviation {diffs[worst]:.1e} ({worst})")


def test_criterion_4_inlp_mechanics(report):
    t0 = time.perf_counter()
    X = make_rng(902).standard_normal((500, 8))
    g = (X[:, 0] > 0).astype(np.int64)
    one = I.inlp_run(X, g, max_iters=1)
    refit = I.fit_linear_group_classifier(X @ one.P, g).train_accuracy
    excess = refit - I.majority_fraction(g)
    wp = idem = 0.0
    ranks_ok = True
    for k in range(1, 5):
        s = I.inlp_run(X, g, max_iters=k, stop_accuracy=0.0)
        wp = max(wp, float(np.abs(s.removed @ s.P).max()))
        idem = max(idem, float(np.abs(s.P @ s.P - s.P).max()))
        svd_rank = int(np.sum(np.linalg.svd(s.P, compute_uv=False) > 1e-8))
        ranks_ok &= s.rank == svd_rank == 8 - k
    elapsed = time.perf_counter() - t0
    ok = excess <= 0.05 and wp < 1e-8 and idem < 1e-8 and ranks_ok and elapsed < 5.0
    report(4, ok, f"refit acc - majority = {excess:.3f}; |WP| {wp:.1e}; |P^2-P| {idem:.1e}; "
                  f"rank drops by 1 per iteration: {ranks_ok}; {elapsed:.1f}s")


def test_criterion_5_metrics_oracles(report):
    rng = random.Random(903)
    mismatches = 0
    for _ in range(1000):
        n = rng.randint(1, 120)
        yv = [rng.randint(0, 1) for _ in range(n)]
        gv = [rng.randint(0, 1) for _ in range(n)]
        pv = [rng.randint(0, 1) for _ in range(n)]
        rep = Mx.evaluate_predictions(np.array(pv), np.array(yv), np.array(gv))
        tpr, tnr = brute_rates(pv, yv, gv)
        gap = (abs(tpr[0] - tpr[1]) + abs(tnr[0] - tnr[1])) / 2
        mismatches += not (
            rep.macro_f == pytest.approx(brute_macro_f(pv, yv), abs=1e-15)
            and list(rep.tpr) == tpr and list(rep.tnr) == tnr and rep.gap == gap
        )
    bad_fronts = 0
    for trial in range(200):
        pts = [Mx.TradeoffPoint(rng.randint(0, 8) / 8, rng.randint(0, 8) / 8, f"c{i}")
               if trial % 2 else Mx.TradeoffPoint(rng.random(), rng.random(), f"c{i}")
               for i in range(rng.randint(1, 50))]
        bad_fronts += {(p.f, p.fairness) for p in Mx.pareto_frontier(pts)} != brute_frontier(pts)
    report(5, mismatches == 0 and bad_fronts == 0,
           f"{mismatches}/1000 metric mismatches, {bad_fronts}/200 frontier mismatches")


@pytest.mark.slow
def test_criterion_6_stereotyping_trend(report):
    t0 = time.perf_counter()
    med = medians(run_protocol(stereotyping_protocol()))
    elapsed = time.perf_counter() - t0
    v5, v8, r8 = med[("table1(0.5)", "VANILLA")], med[("table1(0.8)", "VANILLA")], med[("table1(0.8)", "LDAM_REG")]
    drop = v5[1] - v8[1]
    lift = r8[1] - v8[1]
    fdiff = abs(r8[0] - v8[0])
    ok = drop >= 0.05 and lift >= 0.05 and fdiff <= 0.05 and elapsed < 600
    table = "; ".join(f"{s} {m} F={f:.3f} 1-GAP={fair:.3f}" for (s, m), (f, fair) in sorted(med.items()))
    report(6, ok, f"(a) vanilla 1-GAP drop 0.5->0.8 = {drop:.3f}; (b) LDAM_REG lift at 0.8 = {lift:.3f}, "
                  f"|dF| = {fdiff:.3f}; {elapsed:.0f}s [{table}]")


@pytest.mark.slow
def test_criterion_7_imbalance_trend(report):
    t0 = time.perf_counter()
    med = medians(run_protocol(imbalance_protocol()))
    elapsed = time.perf_counter() - t0
    lines, ok = [], elapsed < 600
    for p in (0.7, 0.8, 0.9):
        s = f"table2({p})"
        v, cw, iw = med[(s, "VANILLA")], med[(s, "LDAM_CW")], med[(s, "LDAM_IW")]
        ok &= cw[0] >= v[0] and cw[1] <= iw[1]
        lines.append(f"p={p}: F cw {cw[0]:.3f} vs vanilla {v[0]:.3f}, 1-GAP cw {cw[1]:.3f} vs iw {iw[1]:.3f}")
    report(7, ok, "; ".join(lines) + f"; {elapsed:.0f}s")


def test_criterion_8_cli_determinism(report, tmp_path):
    import json

    cfg = {"setting": "table1(0.7)", "n_train": 300, "n_dev": 100, "n_test": 200,
           "train": {"hidden_dim": 8, "epochs": 5}, "loss": {"variant": "LDAM_ADV"}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    (tmp_path / "g.json").write_text(json.dumps({"C": [0.1, 1.0], "lambda_adv": [0.01, 1.0]}))
    (tmp_path / "s.json").write_text(json.dumps({"d": 8}))
    names = ("d.csv", "rows.csv", "front.csv", "table.csv", "m.json", "eval.json", "p.json")
    runs = []
    for k in range(2):
        o = tmp_path / f"run{k}"
        o.mkdir()
        codes = [
            main(["generate", "--spec", str(tmp_path / "s.json"), "--seed", "7", "--out", str(o / "d.csv")]),
            main(["sweep", "--config", str(tmp_path / "c.json"), "--grid", str(tmp_path / "g.json"), "--out", str(o / "rows.csv")]),
            main(["frontier", "--in", str(o / "rows.csv"), "--out", str(o / "front.csv")]),
            main(["table", "--in", str(o / "rows.csv"), "--out", str(o / "table.csv")]),
            main(["train", "--config", str(tmp_path / "c.json"), "--out", str(o / "m.json")]),
            main(["evaluate", "--model", str(o / "m.json"), "--data", str(o / "d.csv"), "--out", str(o / "eval.json")]),
            main(["inlp", "--model", str(o / "m.json"), "--data", str(o / "d.csv"), "--out", str(o / "p.json")]),
        ]
        assert codes == [0] * 7
        runs.append([(o / n).read_bytes() for n in names])
    same = [a == b for a, b in zip(*runs)]
    report(8, all(same), f"{sum(same)}/{len(names)} output files byte-identical across two runs")
