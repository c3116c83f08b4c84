"""Evaluation report containers and their CSV / plain-text renderings."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import EmptyInput, ShapeMismatch

ZONE_NAMES_4 = ("center", "inner donut", "outer donut", "edge")


def format_number(v) -> str:
    """Shortest text that round-trips the float exactly."""
    return repr(float(v))


def format_shift(mv: float) -> str:
    return f"{mv:+.3f} mV"


def zone_label(zone: int, n_zones: int) -> str:
    if n_zones == 4:
        return ZONE_NAMES_4[zone]
    return f"zone {zone}"


@dataclass(frozen=True)
class ReportRow:
    wafer_id: str
    zone: int
    n_dies: int
    rmse_mv: tuple


@dataclass(frozen=True)
class ShiftTables:
    """Inter-wafer shifts relative to one wafer and intra-wafer shifts relative to one zone, in mV."""

    reference_wafer: str
    reference_zone: int
    inter_mv: Mapping
    intra_mv: Mapping

    def render(self) -> str:
        lines = [f"inter-wafer shift (mV) from wafer {self.reference_wafer}"]
        width = max(len(str(w)) for w in self.inter_mv)
        for w, v in self.inter_mv.items():
            lines.append(f"  {str(w):<{width}}  {format_shift(v)}")
        lines.append(f"intra-wafer shift (mV) from zone {self.reference_zone}")
        for z, v in self.intra_mv.items():
            lines.append(f"  zone {z}  {format_shift(v)}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CorrelationSummary:
    """Probe-feature correlation with estimated inter-wafer shifts."""

    base_wafer: str
    shifts_mv: Mapping
    pearson: Mapping
    top1_feature: str
    top1_pearson: float
    train_wafers: tuple
    test_wafers: tuple
    r2_heldout: float


@dataclass(frozen=True)
class EvalReport:
    """Per-(wafer, zone) test RMSE in mV for one or more methods.

    The mean row is the unweighted mean over rows; :attr:`weighted_mean_row`
    weights each row by its die count.
    """

    methods: tuple
    rows: tuple
    shift_tables: ShiftTables | None = None
    correlation: CorrelationSummary | None = None
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "rows", tuple(self.rows))
        for r in self.rows:
            if len(r.rmse_mv) != len(self.methods):
                raise ShapeMismatch(f"row {r.wafer_id}/{r.zone} has {len(r.rmse_mv)} values for {len(self.methods)} methods")

    def _matrix(self) -> np.ndarray:
        return np.array([r.rmse_mv for r in self.rows], dtype=float).reshape(len(self.rows), len(self.methods))

    @property
    def mean_row(self) -> dict:
        if not self.rows:
            raise EmptyInput("report has no rows")
        return dict(zip(self.methods, self._matrix().mean(axis=0).tolist()))

    @property
    def weighted_mean_row(self) -> dict:
        if not self.rows:
            raise EmptyInput("report has no rows")
        n = np.array([r.n_dies for r in self.rows], dtype=float)
        return dict(zip(self.methods, (n @ self._matrix() / n.sum()).tolist()))

    def column(self, method: str) -> np.ndarray:
        return self._matrix()[:, self.methods.index(method)]


def report_header(report: EvalReport) -> list[str]:
    return ["wafer_id", "zone", "n_dies", *(f"rmse_mv_{m}" for m in report.methods)]


def report_csv_text(report: EvalReport) -> str:
    if not report.rows:
        raise EmptyInput("cannot write an empty report")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report_header(report))
    for r in report.rows:
        w.writerow([r.wafer_id, r.zone, r.n_dies, *(format_number(v) for v in r.rmse_mv)])
    mean = report.mean_row
    w.writerow(["mean", "-", sum(r.n_dies for r in report.rows), *(format_number(mean[m]) for m in report.methods)])
    return buf.getvalue()


def write_report_csv(report: EvalReport, path) -> None:
    """Write rows plus a final unweighted mean row; output is byte-stable."""
    Path(path).write_text(report_csv_text(report), encoding="utf-8", newline="")


def render_report_text(report: EvalReport, n_zones: int | None = None) -> str:
    """Aligned table in the layout of the per-zone RMSE tables, plus both mean rows."""
    head = ["Wafer ID", "Wafer Zone", "# Die", *report.methods]
    body = []
    for r in report.rows:
        zname = zone_label(r.zone, n_zones) if n_zones else str(r.zone)
        body.append([str(r.wafer_id), zname, str(r.n_dies), *(f"{v:.2f}" for v in r.rmse_mv)])
    body.append(["mean", "-", "-", *(f"{report.mean_row[m]:.2f}" for m in report.methods)])
    body.append(["weighted mean", "-", str(sum(r.n_dies for r in report.rows)),
                 *(f"{report.weighted_mean_row[m]:.2f}" for m in report.methods)])
    widths = [max(len(row[i]) for row in [head, *body]) for i in range(len(head))]
    fmt = lambda row: "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
    lines = [fmt(head), "-" * len(fmt(head))]
    lines += [fmt(row) for row in body[:-2]]
    lines.append("-" * len(fmt(head)))
    lines += [fmt(row) for row in body[-2:]]
    out = "\n".join(lines) + "\n"
    if report.shift_tables is not None:
        out += "\n" + report.shift_tables.render()
    if report.correlation is not None:
        c = report.correlation
        out += (f"\ntop-1 |pearson| {c.top1_pearson:.3f} ({c.top1_feature}); "
                f"held-out probe-model R^2 {c.r2_heldout:.3f}\n")
    return out


def write_shift_csv(tables: ShiftTables, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["table", "key", "shift_mv"])
    for k, v in tables.inter_mv.items():
        w.writerow(["inter", k, format_number(v)])
    for k, v in tables.intra_mv.items():
        w.writerow(["intra", k, format_number(v)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")
