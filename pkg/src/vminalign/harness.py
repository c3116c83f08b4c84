"""Evaluation protocols: per-zone test RMSE, new-wafer deployment, probe correlation, data efficiency."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numkit
from .datamodel import ClassProbeTable, WaferDataset, split_train_test
from .errors import InputError, MissingProbe, ShapeMismatch, TooFewWafers
from .estimators import (
    RbaOptions,
    fit_ols,
    fit_probe_bias_model,
    fit_rba,
    predict_dataset,
    shift_tables,
)
from .report import CorrelationSummary, EvalReport, ReportRow


def _named(models) -> dict:
    if isinstance(models, Mapping):
        return dict(models)
    out, counts = {}, {}
    for m in models:
        counts[m.kind] = counts.get(m.kind, 0) + 1
        name = m.kind if counts[m.kind] == 1 else f"{m.kind}{counts[m.kind]}"
        out[name] = m
    return out


def evaluate(models, test: WaferDataset, probes: ClassProbeTable | None = None,
             use_probe: bool = False) -> EvalReport:
    """Test RMSE (mV) per labeled (wafer, zone) group for each model.

    ``models`` is a sequence (named by model kind) or a name -> model mapping.
    OLS predicts globally, BA needs a stored bias for every group, RBA uses
    stored wafer biases unless ``use_probe`` forces the class-probe path.
    """
    named = _named(models)
    if not named:
        raise InputError("no models to evaluate")
    for name, m in named.items():
        if m.w.size != test.d:
            raise ShapeMismatch(f"model {name!r} expects {m.w.size} features, test set has {test.d}")
    lab = test.labeled_only()
    preds = {name: predict_dataset(m, lab, probes, use_probe) for name, m in named.items()}
    rows = []
    for (wafer, zone), idx in lab.group_indices().items():
        y = lab.vmin[idx]
        rows.append(ReportRow(
            wafer_id=wafer,
            zone=zone,
            n_dies=int(idx.size),
            rmse_mv=tuple(numkit.rmse(y - preds[name][idx]) * 1e3 for name in named),
        ))
    return EvalReport(methods=tuple(named), rows=tuple(rows), meta=dict(test.meta))


def _check_probe_cover(wafers, probes: ClassProbeTable):
    missing = [w for w in wafers if w not in probes]
    if missing:
        raise MissingProbe(f"no class-probe rows for wafers {missing}")


def run_new_wafer_protocol(train_wafers: Sequence, test_wafers: Sequence, ds: WaferDataset,
                           probes: ClassProbeTable, options: RbaOptions | None = None) -> EvalReport:
    """Fit on ``train_wafers`` only and predict ``test_wafers`` from class probes.

    RBA gets each test wafer's inter bias from the probe model; the OLS
    baseline is fitted on the same training dies.
    """
    train_wafers, test_wafers = list(train_wafers), list(test_wafers)
    if set(train_wafers) & set(test_wafers):
        raise InputError(f"train and test wafers overlap: {sorted(set(train_wafers) & set(test_wafers))}")
    if not train_wafers or not test_wafers:
        raise TooFewWafers("need at least one training and one test wafer")
    _check_probe_cover(train_wafers + test_wafers, probes)
    if len(train_wafers) <= probes.k + 1:
        raise TooFewWafers(
            f"probe model with {probes.k} features needs more than {probes.k + 1} training wafers, "
            f"got {len(train_wafers)}"
        )
    train = ds.select_wafers(train_wafers).labeled_only()
    test = ds.select_wafers(test_wafers)
    rba = fit_rba(train, probes, options)
    ols = fit_ols(train.X, train.vmin, train.feature_names)
    report = evaluate({"ols": ols, "rba": rba}, test, probes, use_probe=True)
    return EvalReport(methods=report.methods, rows=report.rows,
                      meta={**report.meta, "protocol": "new-wafer",
                            "train_wafers": tuple(train_wafers), "test_wafers": tuple(test_wafers)})


def run_correlation_study(ds: WaferDataset, probes: ClassProbeTable, n_train_wafers: int,
                          options: RbaOptions | None = None, base_wafer=None) -> CorrelationSummary:
    """Correlate RBA inter-wafer shifts with each probe feature.

    RBA is fitted on every wafer. Shifts are taken relative to ``base_wafer``
    (default: the first), and the Pearson coefficient of each probe feature
    is computed over the remaining wafers. A probe model fitted on the first
    ``n_train_wafers`` wafers is then scored (R^2) on the rest.
    """
    wafers = list(ds.wafers)
    if len(wafers) < n_train_wafers + 2:
        raise TooFewWafers(f"need at least {n_train_wafers + 2} wafers, got {len(wafers)}")
    _check_probe_cover(wafers, probes)
    rba = fit_rba(ds.labeled_only(), None, options)
    base = wafers[0] if base_wafer is None else base_wafer
    tables = shift_tables(rba, base)
    others = [w for w in wafers if w != base]
    shifts = np.array([tables.inter_mv[w] for w in others])
    corr = {}
    for j, name in enumerate(probes.feature_names):
        zj = np.array([probes.vector(w)[j] for w in others])
        corr[name] = numkit.pearson(zj, shifts)
    top = max(corr, key=lambda n: (abs(corr[n]), -probes.feature_names.index(n)))

    train_w, test_w = wafers[:n_train_wafers], wafers[n_train_wafers:]
    probe_model = fit_probe_bias_model({w: rba.b_inter[w] for w in train_w}, probes)
    truth = np.array([rba.b_inter[w] for w in test_w])
    pred = np.array([probe_model.predict(probes.vector(w)) for w in test_w])
    return CorrelationSummary(
        base_wafer=base,
        shifts_mv=dict(tables.inter_mv),
        pearson=corr,
        top1_feature=top,
        top1_pearson=abs(corr[top]),
        train_wafers=tuple(train_w),
        test_wafers=tuple(test_w),
        r2_heldout=numkit.r_squared(truth, pred),
    )


@dataclass(frozen=True)
class EfficiencyResult:
    """Mean per-zone RBA test RMSE (mV) for each training fraction, per seed."""

    fractions: tuple
    seeds: tuple
    rmse_mv: np.ndarray  # (len(seeds), len(fractions))

    @property
    def mean_rmse_mv(self) -> dict:
        return dict(zip(self.fractions, self.rmse_mv.mean(axis=0).tolist()))

    def csv_text(self) -> str:
        lines = ["seed," + ",".join(f"rmse_mv_frac_{f!r}" for f in self.fractions)]
        for s, row in zip(self.seeds, self.rmse_mv):
            lines.append(f"{s}," + ",".join(repr(float(v)) for v in row))
        lines.append("mean," + ",".join(repr(float(v)) for v in self.rmse_mv.mean(axis=0)))
        return "\n".join(lines) + "\n"


def run_data_efficiency(ds: WaferDataset, fractions=(0.75, 0.05), seeds=(0,),
                        options: RbaOptions | None = None) -> EfficiencyResult:
    """RBA test RMSE when training on each fraction of every (wafer, zone) group."""
    out = np.empty((len(seeds), len(fractions)))
    for i, seed in enumerate(seeds):
        for j, frac in enumerate(fractions):
            train, test = split_train_test(ds, frac, seed)
            model = fit_rba(train, None, options)
            out[i, j] = evaluate({"rba": model}, test).mean_row["rba"]
    return EfficiencyResult(tuple(fractions), tuple(seeds), out)
