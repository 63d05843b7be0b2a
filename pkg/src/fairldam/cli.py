"""Command-line entry point.

Each subcommand reads JSON files plus flag overrides and writes CSV/JSON
outputs. Failures print one ``error: <Kind>: <message>`` line to stderr and
exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import dataspace as ds
from . import experiment as ex
from . import inlp as inlp_mod
from .metrics import Policy
from .model import forward, load_params, predict, save_params


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, assignments: list[str]) -> dict:
    """Apply ``dotted.key=value`` assignments to a nested dict; values parse as JSON."""
    out = json.loads(json.dumps(d))
    for item in assignments:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"override {item!r} is not key=value")
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = _parse_value(value)
    return out


def _config(args) -> ex.ExperimentConfig:
    d = _read_json(args.config) if args.config else {}
    base = ex.ExperimentConfig().to_dict()
    if d.get("csv_path") is not None:
        base["synthetic"] = None
    _deep_update(base, d)
    if args.seed is not None:
        base["seed"] = args.seed
    return ex.ExperimentConfig.from_dict(apply_overrides(base, args.set))


def _deep_update(dst: dict, src: dict) -> None:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _deep_update(dst[k], v)
        else:
            dst[k] = v


# --- subcommands ---------------------------------------------------------------


def cmd_generate(args) -> None:
    spec_d = ds.SyntheticSpec().to_dict()
    _deep_update(spec_d, _read_json(args.spec) if args.spec else {})
    spec_d = apply_overrides(spec_d, args.set)
    data = ds.generate_synthetic(ds.SyntheticSpec.from_dict(spec_d), args.seed)
    ds.save_csv(data, args.out)


def cmd_resample(args) -> None:
    data = ds.load_csv(args.data)
    if args.ratios:
        ratios = ds.RatioSpec.from_dict(apply_overrides(_read_json(args.ratios), args.set))
    else:
        if args.setting is None or args.size is None:
            raise ValueError("give --ratios, or --setting with --size")
        ratios = replace(ex.preset_ratios(args.setting, args.size, 1)[0], target_size=args.size)
    ds.save_csv(ds.resample_to_ratios(data, ratios, args.seed), args.out)


def cmd_train(args) -> None:
    cfg = _config(args)
    splits = ex.build_splits(cfg)
    params, iters = ex.train_model(cfg, splits)
    save_params(params, args.out)
    if args.rows:
        ex.write_rows([ex.make_row(cfg, params, splits, iters)], args.rows)


def cmd_evaluate(args) -> None:
    params = load_params(args.model)
    data = ds.load_csv(args.data, n_classes=params.W2.shape[0], n_groups=2)
    report = ex.evaluate(params, data)
    text = json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.predictions:
        preds = predict(params, data.features)
        Path(args.predictions).write_text("pred\n" + "".join(f"{int(p)}\n" for p in preds), encoding="utf-8")


def cmd_inlp(args) -> None:
    params = load_params(args.model)
    data = ds.load_csv(args.data, n_classes=params.W2.shape[0], n_groups=2)
    reps = forward(params, data.features)[0]
    state = inlp_mod.inlp_run(reps, data.groups, args.max_iters, args.stop_accuracy)
    state.save(args.out)
    if args.model_out:
        head = inlp_mod.apply_and_retrain(state, reps, data.labels, data.n_classes)
        save_params(params.with_arrays(W2=head.W, b2=head.b), args.model_out)


def cmd_sweep(args) -> None:
    cfg = _config(args)
    grid = ex.SweepGrid.from_dict(_read_json(args.grid)) if args.grid else ex.SweepGrid()
    rows = ex.run_sweep(grid, cfg, jobs=args.jobs)
    ex.write_rows(rows, args.out)
    failed = sum(not r.ok for r in rows)
    if failed:
        print(f"warning: {failed} of {len(rows)} rows failed", file=sys.stderr)


def cmd_frontier(args) -> None:
    ex.emit_frontier(ex.read_rows(args.inp), args.out, split=args.split)


def cmd_table(args) -> None:
    # one input file per seed: select per (setting, method) on dev, then take medians
    chosen = []
    for path in args.inp:
        rows = ex.read_rows(path)
        for method in dict.fromkeys(r.variant for r in rows):
            subset = [r for r in rows if r.variant == method]
            chosen.extend(ex.select_rows(subset, args.policy, args.floor).values())
    ex.emit_table(chosen, args.out)


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairldam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        return p

    def overrides(p):
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (dotted path, JSON value); repeatable")

    def config_args(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override the base seed")
        overrides(p)

    p = add("generate", cmd_generate, "write a synthetic dataset CSV")
    p.add_argument("--spec", help="SyntheticSpec JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    overrides(p)

    p = add("resample", cmd_resample, "subsample a dataset CSV to target class/group ratios")
    p.add_argument("--data", required=True)
    p.add_argument("--ratios", help="RatioSpec JSON")
    p.add_argument("--setting", help="named preset, e.g. original, 90-90, table1(0.8)")
    p.add_argument("--size", type=int, help="target size when using --setting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    overrides(p)

    p = add("train", cmd_train, "train one model from an experiment config")
    config_args(p)
    p.add_argument("--out", required=True, help="checkpoint JSON")
    p.add_argument("--rows", help="also write the dev/test result row CSV")

    p = add("evaluate", cmd_evaluate, "evaluate a checkpoint on a dataset CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report JSON (stdout when omitted)")
    p.add_argument("--predictions", help="write per-row predictions CSV")

    p = add("inlp", cmd_inlp, "run nullspace projection on a checkpoint's hidden layer")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--max-iters", type=int, default=10)
    p.add_argument("--stop-accuracy", type=float)
    p.add_argument("--out", required=True, help="projection state JSON")
    p.add_argument("--model-out", help="checkpoint with the retrained, projection-folded head")

    p = add("sweep", cmd_sweep, "run a hyperparameter grid")
    config_args(p)
    p.add_argument("--grid", help="SweepGrid JSON (defaults when omitted)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="rows CSV")

    p = add("frontier", cmd_frontier, "extract the Pareto frontier from a rows CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--split", choices=("test", "dev"), default="test")
    p.add_argument("--out", required=True)

    p = add("table", cmd_table, "median test F and 1-GAP per setting and method")
    p.add_argument("--in", dest="inp", required=True, nargs="+", help="rows CSVs, one per seed")
    p.add_argument("--policy", choices=[x.value for x in Policy], default=Policy.BEST_DEV_F.value)
    p.add_argument("--floor", type=float)
    p.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except Exception as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0
