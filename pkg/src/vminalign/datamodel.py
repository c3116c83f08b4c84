"""Die and wafer containers, CSV ingestion, zone banding and train/test splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateWafer,
    EmptyFile,
    GroupTooSmall,
    InputError,
    MissingCoordinates,
    MissingProbe,
    ParseError,
    SchemaMismatch,
    ShapeMismatch,
    TooFewDies,
)
from .report import format_number, write_report_csv  # noqa: F401

DEFAULT_ZONES = 4


def _format_coord(v) -> str:
    v = float(v)
    if math.isnan(v):
        return ""
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


@dataclass(frozen=True)
class DieRecord:
    wafer_id: str
    die_x: float
    die_y: float
    features: np.ndarray
    vmin: float | None = None
    zone: int | None = None

    @property
    def labeled(self) -> bool:
        return self.vmin is not None


@dataclass(frozen=True)
class Reject:
    row: int
    reason: str
    labeled: bool


@dataclass(frozen=True, eq=False)
class WaferDataset:
    """Column-oriented die table with a zone label per die.

    ``vmin`` holds NaN for unlabeled dies. Those are kept for prediction and
    skipped by every fitting routine. ``die_ids`` are stable row identifiers
    that survive subsetting.
    """

    wafer_ids: np.ndarray
    die_x: np.ndarray
    die_y: np.ndarray
    zones: np.ndarray
    X: np.ndarray
    vmin: np.ndarray
    n_zones: int
    feature_names: tuple = ()
    meta: Mapping = field(default_factory=dict)
    die_ids: np.ndarray | None = None
    rejects: tuple = ()

    def __post_init__(self):
        n = len(self.wafer_ids)
        cols = {
            "wafer_ids": np.asarray(self.wafer_ids, dtype=object),
            "die_x": np.asarray(self.die_x, dtype=float),
            "die_y": np.asarray(self.die_y, dtype=float),
            "zones": np.asarray(self.zones, dtype=np.int64),
            "X": np.asarray(self.X, dtype=float),
            "vmin": np.asarray(self.vmin, dtype=float),
            "die_ids": np.arange(n) if self.die_ids is None else np.asarray(self.die_ids, dtype=np.int64),
        }
        X = cols["X"]
        if X.ndim != 2 or X.shape[0] != n:
            raise ShapeMismatch(f"X must be ({n}, d), got {X.shape}")
        for key in ("die_x", "die_y", "zones", "vmin", "die_ids"):
            if cols[key].shape != (n,):
                raise ShapeMismatch(f"{key} must have length {n}")
        if not np.all(np.isfinite(X)):
            raise InputError("feature matrix contains NaN or Inf")
        labeled = ~np.isnan(cols["vmin"])
        if np.any(cols["vmin"][labeled] <= 0) or np.any(np.isinf(cols["vmin"])):
            raise InputError("vmin must be strictly positive and finite")
        if self.n_zones < 1:
            raise InputError("n_zones must be >= 1")
        if n and (cols["zones"].min() < 0 or cols["zones"].max() >= self.n_zones):
            raise InputError(f"zone labels must lie in 0..{self.n_zones - 1}")
        names = tuple(self.feature_names) or tuple(f"f_{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ShapeMismatch(f"{len(names)} feature names for {X.shape[1]} columns")
        for key, arr in cols.items():
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "meta", dict(self.meta))
        object.__setattr__(self, "rejects", tuple(self.rejects))

    def __len__(self) -> int:
        return len(self.wafer_ids)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def labeled(self) -> np.ndarray:
        return ~np.isnan(self.vmin)

    @property
    def n_labeled(self) -> int:
        return int(self.labeled.sum())

    @property
    def wafers(self) -> tuple:
        """Wafer ids in order of first appearance."""
        seen = dict.fromkeys(self.wafer_ids.tolist())
        return tuple(seen)

    def group_indices(self, labeled_only: bool = True) -> dict:
        """Row indices per ``(wafer_id, zone)``, ordered by wafer appearance then zone."""
        order = {w: i for i, w in enumerate(self.wafers)}
        mask = self.labeled if labeled_only else np.ones(len(self), dtype=bool)
        buckets: dict = {}
        for idx in np.flatnonzero(mask):
            buckets.setdefault((self.wafer_ids[idx], int(self.zones[idx])), []).append(idx)
        keys = sorted(buckets, key=lambda k: (order[k[0]], k[1]))
        return {k: np.asarray(buckets[k], dtype=np.int64) for k in keys}

    def groups(self) -> dict:
        """Labeled ``(X_ij, y_ij)`` per ``(wafer_id, zone)``."""
        return {k: (self.X[idx], self.vmin[idx]) for k, idx in self.group_indices().items()}

    def subset(self, mask_or_index) -> "WaferDataset":
        sel = np.asarray(mask_or_index)
        return WaferDataset(
            wafer_ids=self.wafer_ids[sel],
            die_x=self.die_x[sel],
            die_y=self.die_y[sel],
            zones=self.zones[sel],
            X=self.X[sel],
            vmin=self.vmin[sel],
            n_zones=self.n_zones,
            feature_names=self.feature_names,
            meta=self.meta,
            die_ids=self.die_ids[sel],
        )

    def select_wafers(self, wafer_ids: Iterable) -> "WaferDataset":
        wanted = set(wafer_ids)
        missing = wanted - set(self.wafers)
        if missing:
            raise InputError(f"unknown wafers: {sorted(missing)}")
        return self.subset(np.array([w in wanted for w in self.wafer_ids], dtype=bool))

    def labeled_only(self) -> "WaferDataset":
        return self.subset(self.labeled)

    def records(self) -> list[DieRecord]:
        out = []
        for i in range(len(self)):
            v = self.vmin[i]
            out.append(
                DieRecord(
                    wafer_id=self.wafer_ids[i],
                    die_x=float(self.die_x[i]),
                    die_y=float(self.die_y[i]),
                    features=self.X[i].copy(),
                    vmin=None if math.isnan(v) else float(v),
                    zone=int(self.zones[i]),
                )
            )
        return out

    @classmethod
    def from_records(cls, records: Sequence[DieRecord], n_zones: int | None = None,
                     feature_names=(), meta=None) -> "WaferDataset":
        """Build a dataset from records, banding zones by radius when any record lacks one."""
        if not records:
            raise EmptyFile("no die records")
        d = len(records[0].features)
        if any(len(r.features) != d for r in records):
            raise ShapeMismatch("records disagree on feature count")
        if any(r.zone is None for r in records):
            m = n_zones or DEFAULT_ZONES
            zones = assign_zones(records, m)
        else:
            zones = [r.zone for r in records]
            m = n_zones or (max(zones) + 1)
        return cls(
            wafer_ids=np.array([r.wafer_id for r in records], dtype=object),
            die_x=[r.die_x for r in records],
            die_y=[r.die_y for r in records],
            zones=zones,
            X=np.array([np.asarray(r.features, dtype=float) for r in records]).reshape(len(records), d),
            vmin=[np.nan if r.vmin is None else r.vmin for r in records],
            n_zones=m,
            feature_names=feature_names,
            meta=meta or {},
        )


@dataclass(frozen=True)
class ClassProbeTable:
    """Per-wafer class-probe feature vectors."""

    feature_names: tuple
    rows: Mapping

    def __post_init__(self):
        names = tuple(self.feature_names)
        rows = {}
        for w, z in self.rows.items():
            v = np.array(z, dtype=float)
            if v.shape != (len(names),):
                raise ShapeMismatch(f"probe row for {w!r} has {v.size} values, expected {len(names)}")
            if not np.all(np.isfinite(v)):
                raise InputError(f"probe row for {w!r} contains NaN or Inf")
            v.setflags(write=False)
            rows[w] = v
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "rows", rows)

    @property
    def k(self) -> int:
        return len(self.feature_names)

    @property
    def wafers(self) -> tuple:
        return tuple(self.rows)

    def __contains__(self, wafer_id) -> bool:
        return wafer_id in self.rows

    def vector(self, wafer_id) -> np.ndarray:
        try:
            return self.rows[wafer_id]
        except KeyError:
            raise MissingProbe(f"no class-probe row for wafer {wafer_id!r}") from None

    def matrix(self, wafer_ids: Sequence) -> np.ndarray:
        return np.vstack([self.vector(w) for w in wafer_ids]) if wafer_ids else np.empty((0, self.k))

    def select(self, columns: Sequence[int]) -> "ClassProbeTable":
        cols = list(columns)
        return ClassProbeTable(
            tuple(self.feature_names[c] for c in cols),
            {w: z[cols] for w, z in self.rows.items()},
        )


@dataclass(frozen=True)
class DieSchema:
    """Column mapping for :func:`load_die_csv`.

    ``feature_cols=None`` takes every column that is not one of the named
    ones. ``n_zones=None`` means: infer from the zone column if present,
    otherwise band into :data:`DEFAULT_ZONES` zones.
    """

    wafer_col: str = "wafer_id"
    x_col: str = "die_x"
    y_col: str = "die_y"
    vmin_col: str = "vmin"
    zone_col: str = "zone"
    feature_cols: tuple | None = None
    n_zones: int | None = None
    use_zone_column: bool = True
    pattern: str = ""
    temperature: str = ""
    extra_ignored: tuple = ("die_id",)


def _parse_float(text, row, column, allow_empty=False):
    s = text.strip() if text is not None else ""
    if s == "":
        if allow_empty:
            return None
        raise ParseError("empty value", row, column)
    try:
        return float(s)
    except ValueError:
        raise ParseError(f"not a number: {s!r}", row, column) from None


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyFile(f"{path}: no header")
        rows = [r for r in reader if any(c.strip() for c in r)]
    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise SchemaMismatch(f"{path}: duplicate column names in header")
    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(r)}", row=i + 2)
    return header, rows


def load_die_csv(path, schema: DieSchema | None = None) -> WaferDataset:
    """Read a die CSV into a :class:`WaferDataset`.

    Rows with a missing or non-finite feature are rejected and listed in
    ``dataset.rejects``; rows with an empty Vmin cell are kept unlabeled.
    """
    schema = schema or DieSchema()
    header, rows = _read_csv(path)
    col = {h: i for i, h in enumerate(header)}
    if schema.wafer_col not in col:
        raise SchemaMismatch(f"missing wafer column {schema.wafer_col!r}")
    if schema.vmin_col not in col:
        raise SchemaMismatch(f"missing Vmin column {schema.vmin_col!r}")
    has_zone = schema.use_zone_column and schema.zone_col in col
    has_xy = schema.x_col in col and schema.y_col in col
    if not has_zone and not has_xy:
        raise MissingCoordinates(
            f"need {schema.x_col!r}/{schema.y_col!r} columns (or a {schema.zone_col!r} column)"
        )
    named = {schema.wafer_col, schema.x_col, schema.y_col, schema.vmin_col, schema.zone_col}
    if schema.feature_cols is None:
        feature_cols = [h for h in header if h not in named and h not in schema.extra_ignored]
    else:
        feature_cols = list(schema.feature_cols)
        missing = [c for c in feature_cols if c not in col]
        if missing:
            raise SchemaMismatch(f"missing feature columns {missing}")
    if not feature_cols:
        raise SchemaMismatch("no feature columns")

    wafers, xs, ys, zones, feats, vmins, ids = [], [], [], [], [], [], []
    rejects = []
    for i, r in enumerate(rows):
        line = i + 2
        wid = r[col[schema.wafer_col]].strip()
        if not wid:
            raise ParseError("empty wafer id", line, schema.wafer_col)
        vmin = _parse_float(r[col[schema.vmin_col]], line, schema.vmin_col, allow_empty=True)
        if vmin is not None and not (math.isfinite(vmin) and vmin > 0):
            raise ParseError(f"vmin must be a positive finite number, got {vmin}", line, schema.vmin_col)
        values, bad = [], None
        for c in feature_cols:
            v = _parse_float(r[col[c]], line, c, allow_empty=True)
            if v is None or not math.isfinite(v):
                bad = c
                break
            values.append(v)
        if bad is not None:
            rejects.append(Reject(line, f"missing or non-finite feature {bad!r}", vmin is not None))
            continue
        if has_xy:
            x = _parse_float(r[col[schema.x_col]], line, schema.x_col, allow_empty=has_zone)
            y = _parse_float(r[col[schema.y_col]], line, schema.y_col, allow_empty=has_zone)
        else:
            x = y = None
        if has_zone:
            z = _parse_float(r[col[schema.zone_col]], line, schema.zone_col)
            if not float(z).is_integer() or z < 0:
                raise ParseError(f"zone must be a non-negative integer, got {z}", line, schema.zone_col)
            zones.append(int(z))
        wafers.append(wid)
        xs.append(np.nan if x is None else x)
        ys.append(np.nan if y is None else y)
        feats.append(values)
        vmins.append(np.nan if vmin is None else vmin)
        ids.append(i)
    if not wafers:
        raise EmptyFile(f"{path}: every row was rejected")

    wafer_arr = np.array(wafers, dtype=object)
    if has_zone:
        m = schema.n_zones or (max(zones) + 1)
        if max(zones) >= m:
            raise SchemaMismatch(f"zone label {max(zones)} exceeds n_zones={m}")
    else:
        m = schema.n_zones or DEFAULT_ZONES
        zones = zone_labels(wafer_arr, np.array(xs), np.array(ys), m)
    return WaferDataset(
        wafer_ids=wafer_arr,
        die_x=xs,
        die_y=ys,
        zones=zones,
        X=np.array(feats, dtype=float).reshape(len(wafers), len(feature_cols)),
        vmin=vmins,
        n_zones=m,
        feature_names=tuple(feature_cols),
        meta={"pattern": schema.pattern, "temperature": schema.temperature, "source": str(path)},
        die_ids=ids,
        rejects=tuple(rejects),
    )


def write_die_csv(ds: WaferDataset, path, include_zone: bool = True) -> None:
    header = ["wafer_id", "die_x", "die_y"]
    if include_zone:
        header.append("zone")
    header += list(ds.feature_names) + ["vmin"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            row = [ds.wafer_ids[i], _format_coord(ds.die_x[i]), _format_coord(ds.die_y[i])]
            if include_zone:
                row.append(str(int(ds.zones[i])))
            row += [format_number(v) for v in ds.X[i]]
            v = ds.vmin[i]
            row.append("" if math.isnan(v) else format_number(v))
            w.writerow(row)


def zone_labels(wafer_ids, die_x, die_y, n_zones: int) -> np.ndarray:
    """Equal-count radial banding per wafer; zone 0 is the centre band.

    Dies are ranked by distance from the centroid of their wafer's die
    coordinates, ties broken by ``(die_x, die_y)``, and the ranking is cut into
    ``n_zones`` contiguous bands whose sizes differ by at most one (earlier
    bands take the remainder).
    """
    if n_zones < 1:
        raise InputError("n_zones must be >= 1")
    wafer_ids = np.asarray(wafer_ids, dtype=object)
    x = np.asarray(die_x, dtype=float)
    y = np.asarray(die_y, dtype=float)
    if np.any(np.isnan(x)) or np.any(np.isnan(y)):
        raise MissingCoordinates("zone assignment needs die_x/die_y for every die")
    out = np.empty(len(wafer_ids), dtype=np.int64)
    for w in dict.fromkeys(wafer_ids.tolist()):
        idx = np.flatnonzero(wafer_ids == w)
        if idx.size < n_zones:
            raise TooFewDies(f"wafer {w!r} has {idx.size} dies, fewer than {n_zones} zones")
        wx, wy = x[idx], y[idx]
        r2 = (wx - wx.mean()) ** 2 + (wy - wy.mean()) ** 2
        order = np.lexsort((wy, wx, r2))
        for zone, band in enumerate(np.array_split(order, n_zones)):
            out[idx[band]] = zone
    return out


def assign_zones(dies: Sequence[DieRecord], n_zones: int = DEFAULT_ZONES) -> list[int]:
    """Zone label for each die record, see :func:`zone_labels`."""
    if not dies:
        return []
    xs = [np.nan if r.die_x is None else r.die_x for r in dies]
    ys = [np.nan if r.die_y is None else r.die_y for r in dies]
    return zone_labels([r.wafer_id for r in dies], xs, ys, n_zones).tolist()


def split_train_test(ds: WaferDataset, fraction: float, seed) -> tuple[WaferDataset, WaferDataset]:
    """Stratified split of labeled dies per (wafer, zone).

    Each group sends ``ceil(fraction * n)`` randomly chosen dies to train and
    the rest to test. Unlabeled dies go to neither side.
    """
    if not 0.0 < fraction < 1.0:
        raise InputError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for key, idx in ds.group_indices().items():
        n = idx.size
        # round() guards against 0.05 * 20 landing a hair above 1.0
        n_train = math.ceil(round(fraction * n, 9))
        if n_train < 1:
            raise GroupTooSmall(f"group {key} would get no training dies")
        perm = idx[rng.permutation(n)]
        train_idx.append(np.sort(perm[:n_train]))
        test_idx.append(np.sort(perm[n_train:]))
    train = np.sort(np.concatenate(train_idx)) if train_idx else np.empty(0, dtype=np.int64)
    test = np.sort(np.concatenate(test_idx)) if test_idx else np.empty(0, dtype=np.int64)
    return ds.subset(train), ds.subset(test)


def load_probe_csv(path, wafer_col: str = "wafer_id") -> ClassProbeTable:
    header, rows = _read_csv(path)
    if wafer_col not in header:
        raise SchemaMismatch(f"missing wafer column {wafer_col!r}")
    wi = header.index(wafer_col)
    names = [h for h in header if h != wafer_col]
    if not names:
        raise SchemaMismatch("probe file has no feature columns")
    out = {}
    for i, r in enumerate(rows):
        line = i + 2
        wid = r[wi].strip()
        if not wid:
            raise ParseError("empty wafer id", line, wafer_col)
        if wid in out:
            raise DuplicateWafer(f"wafer {wid!r} appears more than once (row {line})")
        vals = []
        for j, h in enumerate(header):
            if j == wi:
                continue
            v = _parse_float(r[j], line, h)
            if not math.isfinite(v):
                raise ParseError("non-finite probe value", line, h)
            vals.append(v)
        out[wid] = vals
    return ClassProbeTable(tuple(names), out)


def write_probe_csv(table: ClassProbeTable, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wafer_id", *table.feature_names])
        for wid, z in table.rows.items():
            w.writerow([wid, *(format_number(v) for v in z)])
