"""Experiment configs, the single-run pipeline, sweeps and result files."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import re
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataspace as ds
from . import inlp as inlp_mod
from .losses import LDAM_FAMILY, LossSpec, Variant
from .metrics import EvalReport, Policy, TradeoffPoint, evaluate_predictions, pareto_frontier, select_model
from .model import ModelParams, TrainConfig, forward, predict, train

ROW_FIELDS = [
    "config_id", "variant", "C", "rho", "lambda", "beta", "gamma", "setting",
    "dev_f", "dev_gap", "test_f", "test_gap",
]
EXTRA_FIELDS = ["inlp_iters", "status"]


def mix_seed(base_seed: int, key: str) -> int:
    """Derived 63-bit seed: first 8 bytes of BLAKE2b("{base_seed}:{key}"), big-endian."""
    digest = hashlib.blake2b(f"{int(base_seed)}:{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") & ((1 << 63) - 1)


# --- ratio presets ----------------------------------------------------------

_PRESET = re.compile(r"^(original|90-90|95-95|table1\(([0-9.]+)\)|table2\(([0-9.]+)\))$")


def preset_ratios(name: str, n_traindev: int, n_test: int) -> tuple[ds.RatioSpec, ds.RatioSpec]:
    """(train/dev ratios, test ratios) for a named setting.

    ``table1(r)``: balanced classes, stereotype r, stereotype-balanced test.
    ``table2(p)``: symmetric 0.8 stereotyping, positive fraction p, test mirrors train.
    ``original``: 70% positive, 18:82 groups in both classes.
    ``90-90`` / ``95-95``: class skew and symmetric stereotyping at that level.
    """
    m = _PRESET.match(name.strip())
    if not m:
        raise ValueError(f"unknown setting {name!r}")
    if name == "original":
        st = ((0.18, 0.82), (0.18, 0.82))
        train_r = ds.RatioSpec(0.7, st, n_traindev)
        return train_r, replace(train_r, target_size=n_test)
    if name in ("90-90", "95-95"):
        r = int(name[:2]) / 100.0
        return ds.stereotyped(r, r, n_traindev), ds.stereotyped(r, r, n_test)
    if m.group(2) is not None:
        r = float(m.group(2))
        return ds.stereotyped(0.5, r, n_traindev), ds.stereotyped(0.5, 0.5, n_test)
    p = float(m.group(3))
    return ds.stereotyped(p, 0.8, n_traindev), ds.stereotyped(p, 0.8, n_test)


# --- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class InlpSettings:
    enabled: bool = False
    max_iters: int = 10
    stop_accuracy: float | None = None


@dataclass(frozen=True)
class SelectionSettings:
    policy: Policy = Policy.BEST_DEV_F
    floor: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))


@dataclass(frozen=True)
class ExperimentConfig:
    synthetic: ds.SyntheticSpec | None = field(default_factory=ds.SyntheticSpec)
    csv_path: str | None = None
    setting: str = "table1(0.5)"
    train_ratios: ds.RatioSpec | None = None  # overrides the preset when given
    test_ratios: ds.RatioSpec | None = None
    n_train: int = 1600
    n_dev: int = 400
    n_test: int = 1000
    loss: LossSpec = field(default_factory=LossSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    inlp: InlpSettings = field(default_factory=InlpSettings)
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    seed: int = 0
    config_id: str = "c0000"

    def __post_init__(self):
        if (self.synthetic is None) == (self.csv_path is None):
            raise ValueError("exactly one of synthetic / csv_path must be given")
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ValueError("n_train, n_dev and n_test must be >= 1")

    def ratios(self) -> tuple[ds.RatioSpec, ds.RatioSpec]:
        tr, te = preset_ratios(self.setting, self.n_train + self.n_dev, self.n_test)
        if self.train_ratios is not None:
            tr = replace(self.train_ratios, target_size=self.n_train + self.n_dev)
        if self.test_ratios is not None:
            te = replace(self.test_ratios, target_size=self.n_test)
        return tr, te

    def to_dict(self) -> dict:
        return {
            "synthetic": None if self.synthetic is None else self.synthetic.to_dict(),
            "csv_path": self.csv_path,
            "setting": self.setting,
            "train_ratios": None if self.train_ratios is None else self.train_ratios.to_dict(),
            "test_ratios": None if self.test_ratios is None else self.test_ratios.to_dict(),
            "n_train": self.n_train,
            "n_dev": self.n_dev,
            "n_test": self.n_test,
            "loss": self.loss.to_dict(),
            "train": self.train.to_dict(),
            "inlp": asdict(self.inlp),
            "selection": {"policy": self.selection.policy.value, "floor": self.selection.floor},
            "seed": self.seed,
            "config_id": self.config_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kw: dict = {}
        if "csv_path" in d and d["csv_path"] is not None:
            kw["csv_path"] = d["csv_path"]
            kw["synthetic"] = None
        if d.get("synthetic") is not None:
            kw["synthetic"] = ds.SyntheticSpec.from_dict(d["synthetic"])
        for k in ("setting", "n_train", "n_dev", "n_test", "seed", "config_id"):
            if k in d:
                kw[k] = d[k]
        for k in ("train_ratios", "test_ratios"):
            if d.get(k) is not None:
                kw[k] = ds.RatioSpec.from_dict(d[k])
        if "loss" in d:
            kw["loss"] = LossSpec.from_dict(d["loss"])
        if "train" in d:
            kw["train"] = TrainConfig.from_dict(d["train"])
        if "inlp" in d:
            kw["inlp"] = InlpSettings(**d["inlp"])
        if "selection" in d:
            kw["selection"] = SelectionSettings(**d["selection"])
        return cls(**kw)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- pipeline ---------------------------------------------------------------


@dataclass(frozen=True)
class Splits:
    train: ds.LabeledGroupedDataset
    dev: ds.LabeledGroupedDataset
    test: ds.LabeledGroupedDataset


def build_splits(config: ExperimentConfig) -> Splits:
    """Draw train/dev and a disjoint test set from one pool.

    Depends only on the data source, setting, sizes and base seed, so every
    row of a sweep over loss hyperparameters sees the same data.
    """
    tr_ratios, te_ratios = config.ratios()
    data_seed = mix_seed(config.seed, f"data:{config.setting}")
    if config.synthetic is not None:
        per_cell = tr_ratios.target_size + te_ratios.target_size
        pool_spec = replace(config.synthetic, ratios=ds.stereotyped(0.5, 0.5, 4 * per_cell))
        pool = ds.generate_synthetic(pool_spec, data_seed)
    else:
        pool = ds.load_csv(config.csv_path)
    td_idx = ds.resample_indices(pool, tr_ratios, mix_seed(data_seed, "traindev"))
    te_idx = ds.resample_indices(pool, te_ratios, mix_seed(data_seed, "test"), exclude=td_idx)
    n_td = config.n_train + config.n_dev
    tr, dv, _ = ds.split(pool.subset(td_idx), (config.n_train / n_td, config.n_dev / n_td, 0.0), mix_seed(data_seed, "split"))
    return Splits(tr, dv, pool.subset(te_idx))


def evaluate(params: ModelParams, data: ds.LabeledGroupedDataset) -> EvalReport:
    return evaluate_predictions(predict(params, data.features), data.labels, data.groups, data.n_classes)


@dataclass(frozen=True)
class ResultRow:
    config_id: str
    variant: str
    C: float
    rho: float
    lambda_adv: float
    beta: float
    gamma: float
    setting: str
    dev_f: float
    dev_gap: float
    test_f: float
    test_gap: float
    inlp_iters: int = 0
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def dev_point(self) -> TradeoffPoint:
        return TradeoffPoint(self.dev_f, 1.0 - self.dev_gap, self.config_id)

    def test_point(self) -> TradeoffPoint:
        return TradeoffPoint(self.test_f, 1.0 - self.test_gap, self.config_id)

    def as_csv(self) -> list[str]:
        def num(v):
            return "nan" if isinstance(v, float) and math.isnan(v) else format(float(v), ".17g")

        return [
            self.config_id, self.variant, num(self.C), num(self.rho), num(self.lambda_adv),
            num(self.beta), num(self.gamma), self.setting, num(self.dev_f), num(self.dev_gap),
            num(self.test_f), num(self.test_gap), str(self.inlp_iters), self.status,
        ]


def _variant_label(config: ExperimentConfig) -> str:
    v = config.loss.variant.value
    if not config.inlp.enabled:
        return v
    return "INLP" if config.loss.variant is Variant.VANILLA else f"{v}+INLP"


def train_model(config: ExperimentConfig, splits: Splits) -> tuple[ModelParams, int]:
    """Train the MLP (and apply INLP when enabled); returns params and INLP iterations."""
    tcfg = replace(config.train, seed=mix_seed(config.seed, config.config_id))
    params, _ = train(splits.train, splits.dev, config.loss, tcfg)
    if not config.inlp.enabled:
        return params, 0
    reps = forward(params, splits.train.features)[0]
    state = inlp_mod.inlp_run(reps, splits.train.groups, config.inlp.max_iters, config.inlp.stop_accuracy)
    head = inlp_mod.apply_and_retrain(state, reps, splits.train.labels, splits.train.n_classes)
    return params.with_arrays(W2=head.W, b2=head.b), state.removed.shape[0]


def run_experiment(config: ExperimentConfig, splits: Splits | None = None) -> ResultRow:
    if splits is None:
        splits = build_splits(config)
    params, iters = train_model(config, splits)
    return make_row(config, params, splits, iters)


def make_row(config: ExperimentConfig, params: ModelParams, splits: Splits, inlp_iters: int = 0) -> ResultRow:
    dev = evaluate(params, splits.dev)
    test = evaluate(params, splits.test)
    s = config.loss
    return ResultRow(
        config.config_id, _variant_label(config), s.C, s.rho, s.lambda_adv, s.beta, s.gamma, config.setting,
        dev.macro_f, dev.gap, test.macro_f, test.gap, inlp_iters,
    )


# --- sweeps -------------------------------------------------------------------


def _logspace(lo: float, hi: float, n: int = 10) -> list[float]:
    return [float(v) for v in np.logspace(math.log10(lo), math.log10(hi), n)]


@dataclass(frozen=True)
class SweepGrid:
    C: tuple[float, ...] = tuple(_logspace(1e-2, 30.0))
    rho: tuple[float, ...] = tuple(_logspace(1e-4, 1e2))
    lambda_adv: tuple[float, ...] = tuple(_logspace(1e-4, 1e2))
    inlp_iters: tuple[int, ...] = tuple(range(1, 11))
    settings: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "SweepGrid":
        return cls(**{k: tuple(d[k]) for k in ("C", "rho", "lambda_adv", "inlp_iters", "settings") if k in d})

    def configs(self, base: ExperimentConfig) -> list[ExperimentConfig]:
        """Cartesian product over the axes the base variant uses, in fixed order."""
        v = base.loss.variant
        cs = self.C if v in LDAM_FAMILY else (base.loss.C,)
        rhos = self.rho if v is Variant.LDAM_REG else (base.loss.rho,)
        lams = self.lambda_adv if v is Variant.LDAM_ADV else (base.loss.lambda_adv,)
        iters = self.inlp_iters if base.inlp.enabled else (base.inlp.max_iters,)
        settings = self.settings or (base.setting,)
        for name, axis in (("C", cs), ("rho", rhos), ("lambda_adv", lams), ("inlp_iters", iters), ("settings", settings)):
            if not axis:
                raise ValueError(f"empty sweep axis {name}")
        out = []
        for i, (st, c, r, lam, it) in enumerate(itertools.product(settings, cs, rhos, lams, iters)):
            out.append(
                replace(
                    base,
                    setting=st,
                    loss=replace(base.loss, C=float(c), rho=float(r), lambda_adv=float(lam)),
                    inlp=replace(base.inlp, max_iters=int(it)),
                    config_id=f"c{i:04d}",
                )
            )
        return out


def _failed_row(config: ExperimentConfig, exc: Exception) -> ResultRow:
    s = config.loss
    nan = float("nan")
    msg = f"error: {type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
    return ResultRow(config.config_id, _variant_label(config), s.C, s.rho, s.lambda_adv, s.beta, s.gamma,
                     config.setting, nan, nan, nan, nan, 0, msg)


def _run_safe(config: ExperimentConfig) -> ResultRow:
    try:
        return run_experiment(config)
    except Exception as exc:  # recorded per row, sweep continues
        return _failed_row(config, exc)


def run_sweep(grid: SweepGrid, base: ExperimentConfig, jobs: int = 1) -> list[ResultRow]:
    configs = grid.configs(base)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_safe, configs))
    cache: dict[str, Splits] = {}
    rows = []
    for cfg in configs:
        try:
            if cfg.setting not in cache:
                cache[cfg.setting] = build_splits(cfg)
            rows.append(run_experiment(cfg, cache[cfg.setting]))
        except Exception as exc:
            rows.append(_failed_row(cfg, exc))
    return rows


# --- result files -----------------------------------------------------------


def write_rows(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS + EXTRA_FIELDS)
        for r in rows:
            w.writerow(r.as_csv())


def read_rows(path) -> list[ResultRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[: len(ROW_FIELDS)] != ROW_FIELDS:
            raise ValueError(f"{path}: header must start with {','.join(ROW_FIELDS)}")
        rows = []
        for rec in reader:
            rows.append(
                ResultRow(
                    rec["config_id"], rec["variant"], float(rec["C"]), float(rec["rho"]), float(rec["lambda"]),
                    float(rec["beta"]), float(rec["gamma"]), rec["setting"], float(rec["dev_f"]),
                    float(rec["dev_gap"]), float(rec["test_f"]), float(rec["test_gap"]),
                    int(rec.get("inlp_iters") or 0), rec.get("status") or "ok",
                )
            )
    return rows


def frontier_rows(rows, split: str = "test") -> list[TradeoffPoint]:
    ok = [r for r in rows if r.ok]
    if not ok:
        raise ValueError("no successful rows")
    pts = [r.test_point() if split == "test" else r.dev_point() for r in ok]
    return pareto_frontier(pts)


def emit_frontier(rows, path, split: str = "test") -> list[TradeoffPoint]:
    front = frontier_rows(rows, split)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["f", "fairness", "config_id"])
        for p in front:
            w.writerow([format(p.f, ".17g"), format(p.fairness, ".17g"), p.config_id])
    return front


def select_rows(rows, policy: Policy | str, floor: float | None = None) -> dict[str, ResultRow]:
    """Per setting, the row chosen on dev metrics by ``policy``."""
    by_id = {r.config_id: r for r in rows if r.ok}
    out = {}
    for setting in dict.fromkeys(r.setting for r in by_id.values()):
        cands = [r.dev_point() for r in by_id.values() if r.setting == setting]
        out[setting] = by_id[select_model(cands, policy, floor)]
    return out


def emit_table(rows, path) -> list[dict]:
    """Median test F and 1-GAP per (setting, method); one CSV line per pair."""
    groups: dict[tuple[str, str], list[ResultRow]] = {}
    for r in rows:
        if r.ok:
            groups.setdefault((r.setting, r.variant), []).append(r)
    if not groups:
        raise ValueError("no successful rows")
    table = []
    for (setting, method), rs in groups.items():
        table.append(
            {
                "setting": setting,
                "method": method,
                "f": statistics.median(r.test_f for r in rs),
                "one_minus_gap": statistics.median(1.0 - r.test_gap for r in rs),
                "n": len(rs),
            }
        )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "method", "f", "one_minus_gap", "n"])
        for t in table:
            w.writerow([t["setting"], t["method"], format(t["f"], ".17g"), format(t["one_minus_gap"], ".17g"), t["n"]])
    return table
