import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vminalign.errors import EmptyInput, ShapeMismatch
from vminalign.report import (EvalReport, ReportRow, ShiftTables, render_report_text,
                              report_csv_text, write_report_csv, write_shift_csv)


def _report(n_rows, methods=("ols", "rba"), seed=0):
    rng = np.random.default_rng(seed)
    rows = [ReportRow(f"W{i // 4 + 1:02d}", i % 4, int(rng.integers(1, 200)),
                      tuple(float(v) for v in rng.uniform(0, 20, len(methods)))) for i in range(n_rows)]
    return EvalReport(methods, rows)


def test_single_row_three_lines(tmp_path):
    p = tmp_path / "r.csv"
    write_report_csv(_report(1), p)
    lines = p.read_text().splitlines()
    assert len(lines) == 3
    assert lines[0] == "wafer_id,zone,n_dies,rmse_mv_ols,rmse_mv_rba"
    assert lines[-1].startswith("mean,-,")


def test_twenty_rows_twenty_two_lines():
    assert len(report_csv_text(_report(20)).splitlines()) == 22


def test_reemit_byte_identical(tmp_path):
    r = _report(9, seed=3)
    write_report_csv(r, tmp_path / "a.csv")
    write_report_csv(r, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_mean_row_recomputes(n, seed):
    rows = list(csv.reader(report_csv_text(_report(n, seed=seed)).splitlines()))
    body, mean = rows[1:-1], rows[-1]
    assert int(mean[2]) == sum(int(r[2]) for r in body)
    for j in (3, 4):
        assert float(mean[j]) == pytest.approx(np.mean([float(r[j]) for r in body]), abs=1e-9)


def test_values_round_trip_exactly():
    r = _report(5, seed=1)
    rows = list(csv.reader(report_csv_text(r).splitlines()))[1:-1]
    for row, rr in zip(rows, r.rows):
        assert tuple(float(v) for v in row[3:]) == rr.rmse_mv


def test_weighted_mean():
    r = EvalReport(("a",), [ReportRow("W", 0, 1, (1.0,)), ReportRow("W", 1, 3, (5.0,))])
    assert r.mean_row == {"a": 3.0}
    assert r.weighted_mean_row == {"a": 4.0}
    np.testing.assert_array_equal(r.column("a"), [1.0, 5.0])


def test_empty_report():
    r = EvalReport(("a",), [])
    with pytest.raises(EmptyInput):
        report_csv_text(r)
    with pytest.raises(EmptyInput):
        r.mean_row


def test_row_width_checked():
    with pytest.raises(ShapeMismatch):
        EvalReport(("a", "b"), [ReportRow("W", 0, 1, (1.0,))])


def test_text_rendering_with_shifts(tmp_path):
    tables = ShiftTables("W01", 0, {"W01": 0.0, "W02": -18.78}, {0: 0.0, 1: 2.5})
    r = EvalReport(("ols", "rba"), _report(4).rows, shift_tables=tables)
    text = render_report_text(r, n_zones=4)
    assert "center" in text and "edge" in text
    assert "weighted mean" in text
    assert "  W02  -18.780 mV" in text
    assert "  zone 1  +2.500 mV" in text
    write_shift_csv(tables, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines() == [
        "table,key,shift_mv", "inter,W01,0.0", "inter,W02,-18.78", "intra,0,0.0", "intra,1,2.5"]
