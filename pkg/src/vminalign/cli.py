"""Command-line entry point.

Exit codes: 0 success, 2 input/schema error, 3 numerical failure,
4 convergence warning under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import fields, replace
from pathlib import Path

from . import estimators as est
from . import harness, simgen
from .datamodel import DieSchema, load_die_csv, load_probe_csv, write_die_csv, zone_labels
from .errors import ConvergenceWarning, InvalidConfig, VminError
from .featsel import cfs_select
from .report import render_report_text, write_report_csv

EXIT_INPUT = 2
EXIT_STRICT = 4

_SIM_FIELDS = {f.name for f in fields(simgen.SimConfig)}
_RBA_FIELDS = {f.name for f in fields(est.RbaOptions)}


def _read_config(path) -> tuple[dict, dict]:
    if path is None:
        return {}, {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path}: expected a JSON object")
    unknown = set(data) - _SIM_FIELDS - _RBA_FIELDS
    if unknown:
        raise InvalidConfig(f"{path}: unknown config fields {sorted(unknown)}")
    return ({k: v for k, v in data.items() if k in _SIM_FIELDS},
            {k: v for k, v in data.items() if k in _RBA_FIELDS})


def _rba_options(args) -> est.RbaOptions:
    _, cfg = _read_config(getattr(args, "config", None))
    opt = est.RbaOptions(**cfg)
    overrides = {
        "eta": args.eta, "rel_tol": args.rel_tol, "max_iter": args.max_iter,
        "bias_step": args.bias_step, "reference_zone": args.reference_zone,
    }
    return replace(opt, **{k: v for k, v in overrides.items() if v is not None})


def _schema(args, feature_cols=None) -> DieSchema:
    return DieSchema(
        n_zones=getattr(args, "zones", None),
        feature_cols=tuple(feature_cols) if feature_cols else None,
        pattern=getattr(args, "pattern", "") or "",
        temperature=getattr(args, "temperature", "") or "",
    )


def _load(path, args, feature_cols=None):
    ds = load_die_csv(path, _schema(args, feature_cols))
    for r in ds.rejects:
        print(f"warning: {path}: row {r.row} rejected: {r.reason}", file=sys.stderr)
    return ds


def cmd_simulate(args) -> int:
    sim_cfg, _ = _read_config(args.config)
    if args.seed is not None:
        sim_cfg["seed"] = args.seed
    cfg = simgen.SimConfig.from_dict(sim_cfg)
    ds, probes, gt = simgen.generate(cfg)
    paths = simgen.write_simulation(args.out_dir, ds, probes, gt, cfg)
    print(simgen.describe(gt), end="")
    for name, p in paths.items():
        print(f"wrote {name}: {p}")
    return 0


def cmd_zones(args) -> int:
    schema = DieSchema(use_zone_column=False, n_zones=args.zones)
    ds = load_die_csv(args.input, schema)
    zones = zone_labels(ds.wafer_ids, ds.die_x, ds.die_y, args.zones)
    banded = type(ds)(
        wafer_ids=ds.wafer_ids, die_x=ds.die_x, die_y=ds.die_y, zones=zones, X=ds.X,
        vmin=ds.vmin, n_zones=args.zones, feature_names=ds.feature_names, meta=ds.meta,
        die_ids=ds.die_ids,
    )
    write_die_csv(banded, args.out)
    return 0


def cmd_select_features(args) -> int:
    schema = DieSchema(vmin_col=args.target, use_zone_column=True)
    ds = load_die_csv(args.input, schema).labeled_only()
    subset = cfs_select(ds.X, ds.vmin, args.max_k)
    lines = ["rank,index,feature"]
    lines += [f"{r + 1},{i},{ds.feature_names[i]}" for r, i in enumerate(subset.indices)]
    lines.append(f"merit,{subset.merit!r},")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="")
    print(text, end="")
    return 0


def cmd_fit(args) -> int:
    ds = _load(args.train, args)
    probes = load_probe_csv(args.probes) if args.probes else None
    if args.method == "ols":
        lab = ds.labeled_only()
        model = est.fit_ols(lab.X, lab.vmin, ds.feature_names)
    elif args.method == "ba":
        model = est.fit_ba(ds)
    else:
        model = est.fit_rba(ds, probes, _rba_options(args))
    est.save_model(model, args.model_out)
    if isinstance(model, est.RbaModel):
        print(f"rba: {model.n_iter} iterations, final loss {model.train_trace[-1]:.6g}, "
              f"converged={model.converged}")
        print(est.shift_tables(model).render(), end="")
    return 0


def cmd_predict(args) -> int:
    model = est.load_model(args.model)
    ds = _load(args.input, args, model.feature_names or None)
    probes = load_probe_csv(args.probes) if args.probes else None
    pred = est.predict_dataset(model, ds, probes, use_probe=args.use_probe)
    with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wafer_id", "die_x", "die_y", "zone", "vmin", "vmin_pred"])
        for i in range(len(ds)):
            v = ds.vmin[i]
            w.writerow([ds.wafer_ids[i], _coord(ds.die_x[i]), _coord(ds.die_y[i]), int(ds.zones[i]),
                        "" if v != v else repr(float(v)), repr(float(pred[i]))])
    return 0


def _coord(v) -> str:
    v = float(v)
    if v != v:
        return ""
    return str(int(v)) if v.is_integer() else repr(v)


def cmd_evaluate(args) -> int:
    models = [est.load_model(p) for p in args.models]
    names = models[0].feature_names or None
    ds = _load(args.test, args, names)
    probes = load_probe_csv(args.probes) if args.probes else None
    report = harness.evaluate(models, ds, probes, use_probe=args.use_probe)
    rba = [m for m in models if isinstance(m, est.RbaModel)]
    if rba:
        report = replace(report, shift_tables=est.shift_tables(rba[0]))
    write_report_csv(report, args.report)
    print(render_report_text(report, ds.n_zones), end="")
    return 0


def cmd_study(args) -> int:
    ds = _load(args.data, args)
    opt = _rba_options(args)
    if args.mode == "data-efficiency":
        res = harness.run_data_efficiency(ds, tuple(args.fractions), tuple(args.seeds), opt)
        text = res.csv_text()
        Path(args.report).write_text(text, encoding="utf-8", newline="")
        print(text, end="")
        return 0
    if not args.probes:
        raise InvalidConfig(f"--probes is required for --mode {args.mode}")
    probes = load_probe_csv(args.probes)
    wafers = list(ds.wafers)
    n_train = args.train_wafers if args.train_wafers is not None else max(1, (6 * len(wafers)) // 10)
    if args.mode == "new-wafer":
        report = harness.run_new_wafer_protocol(wafers[:n_train], wafers[n_train:], ds, probes, opt)
        write_report_csv(report, args.report)
        print(render_report_text(report, ds.n_zones), end="")
        return 0
    summary = harness.run_correlation_study(ds, probes, n_train, opt)
    lines = ["quantity,key,value"]
    lines += [f"shift_mv,{w},{v!r}" for w, v in summary.shifts_mv.items()]
    lines += [f"pearson,{n},{v!r}" for n, v in summary.pearson.items()]
    lines.append(f"top1_pearson,{summary.top1_feature},{summary.top1_pearson!r}")
    lines.append(f"r2_heldout,{'|'.join(summary.test_wafers)},{summary.r2_heldout!r}")
    text = "\n".join(lines) + "\n"
    Path(args.report).write_text(text, encoding="utf-8", newline="")
    print(text, end="")
    return 0


def _add_rba_flags(p):
    p.add_argument("--config", help="JSON file with RbaOptions fields")
    p.add_argument("--eta", type=float)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--bias-step", choices=["gradient", "exact"])
    p.add_argument("--reference-zone", type=int)


def _add_data_flags(p):
    p.add_argument("--zones", type=int, help="zone count when the CSV has no zone column (default 4)")
    p.add_argument("--pattern", default="", help="test pattern label stored with the dataset")
    p.add_argument("--temperature", default="", help="temperature label stored with the dataset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vminalign", description="Vmin prediction with process-variation bias alignment")
    parser.add_argument("--strict", action="store_true", help="treat RBA non-convergence as an error (exit 4)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with planted truth")
    p.add_argument("--config", help="JSON file with SimConfig fields")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("zones", help="assign balanced radial zones")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--zones", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_zones)

    p = sub.add_parser("select-features", help="correlation-based feature selection")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--target", default="vmin")
    p.add_argument("--max-k", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("fit", help="fit a model")
    p.add_argument("--method", choices=["ols", "ba", "rba"], required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--probes")
    p.add_argument("--model-out", required=True)
    _add_rba_flags(p)
    _add_data_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict Vmin for a die CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--probes")
    p.add_argument("--use-probe", action="store_true", help="RBA: always take wafer bias from class probes")
    p.add_argument("--out", required=True)
    _add_data_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="per-zone test RMSE report")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--probes")
    p.add_argument("--use-probe", action="store_true")
    p.add_argument("--report", required=True)
    _add_data_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("study", help="run an experimental protocol")
    p.add_argument("--mode", choices=["new-wafer", "correlation", "data-efficiency"], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--probes")
    p.add_argument("--train-wafers", type=int, help="first N wafers train (default 60%%)")
    p.add_argument("--fractions", type=float, nargs="+", default=[0.75, 0.05])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--report", required=True)
    _add_rba_flags(p)
    _add_data_flags(p)
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        try:
            code = args.func(args)
        except VminError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return exc.exit_code
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if args.strict and any(issubclass(w.category, ConvergenceWarning) for w in caught):
        return EXIT_STRICT
    return code


if __name__ == "__main__":
    sys.exit(main())
