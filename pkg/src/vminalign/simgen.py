"""Synthetic wafer data with planted ground truth.

Each die's Vmin is generated as::

    y = base_vmin + x . w_true + shift[wafer] + b_intra[zone] + noise

with ``shift[wafer] = b_z_true + z_wafer . w_z_true + probe_noise`` so that the
wafer-level shift is (mostly) explained by class-probe features. Features are
unit-variance Gaussians whose means move per wafer and per zone, which gives
the covariate shift seen between zones and wafers in real lots.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .datamodel import ClassProbeTable, WaferDataset, write_die_csv, write_probe_csv, zone_labels
from .errors import InvalidConfig
from .report import ShiftTables

VMIN_FLOOR = 1e-3  # volts; generated Vmin below this is clipped up to it


@dataclass(frozen=True)
class SimConfig:
    """Generator settings. Voltages in volts.

    When ``w_z_true`` is None the probe coefficients are derived so that the
    wafer shift has standard deviation ``sigma_inter`` in total, of which
    ``sigma_probe_noise`` is not explained by the probes. An explicit
    ``w_z_true`` overrides ``sigma_inter``. ``w_true=None`` draws the die
    coefficients from the seed.
    """

    n_wafers: int = 5
    n_zones: int = 4
    dies_per_zone: int = 150
    d: int = 5
    k: int = 2
    w_true: tuple | None = None
    w_z_true: tuple | None = None
    b_z_true: float = 0.0
    sigma_inter: float = 0.015
    sigma_intra: float = 0.005
    sigma_noise: float = 0.003
    sigma_probe_noise: float = 0.0015
    feature_shift_scale: float = 0.5
    base_vmin: float = 0.75
    intra_perturbation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_wafers", "n_zones", "dies_per_zone", "d", "k"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {v}")
        for name in ("sigma_inter", "sigma_intra", "sigma_noise", "sigma_probe_noise",
                     "feature_shift_scale", "intra_perturbation"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidConfig(f"{name} must be finite and >= 0, got {v}")
        if not self.base_vmin > 0:
            raise InvalidConfig(f"base_vmin must be positive, got {self.base_vmin}")
        if self.w_true is not None:
            object.__setattr__(self, "w_true", tuple(float(v) for v in self.w_true))
            if len(self.w_true) != self.d:
                raise InvalidConfig(f"w_true has {len(self.w_true)} entries, d={self.d}")
        if self.w_z_true is not None:
            object.__setattr__(self, "w_z_true", tuple(float(v) for v in self.w_z_true))
            if len(self.w_z_true) != self.k:
                raise InvalidConfig(f"w_z_true has {len(self.w_z_true)} entries, k={self.k}")
        elif self.sigma_probe_noise > self.sigma_inter:
            raise InvalidConfig("sigma_probe_noise cannot exceed sigma_inter when w_z_true is derived")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown SimConfig fields: {sorted(unknown)}")
        return cls(**data)

    def probe_coefficients(self) -> np.ndarray:
        if self.w_z_true is not None:
            return np.array(self.w_z_true)
        direction = 0.35 ** np.arange(self.k)
        scale = math.sqrt(self.sigma_inter**2 - self.sigma_probe_noise**2)
        return direction / np.linalg.norm(direction) * scale

    @property
    def probe_snr(self) -> float:
        """Std of the probe-explained wafer shift over std of the unexplained part."""
        explained = float(np.linalg.norm(self.probe_coefficients()))
        return math.inf if self.sigma_probe_noise == 0 else explained / self.sigma_probe_noise

    def with_probe_snr(self, snr: float) -> "SimConfig":
        """Same config with probe noise set for the given SNR at fixed ``sigma_inter``."""
        return replace(self, w_z_true=None, sigma_probe_noise=self.sigma_inter / math.sqrt(1.0 + snr * snr))


@dataclass(frozen=True)
class GroundTruth:
    """Planted parameters in the estimators' coordinates.

    ``b_inter_true`` already includes ``base_vmin`` and ``b_z_true`` is the
    effective probe intercept ``base_vmin + cfg.b_z_true``, so both compare
    directly with fitted values. ``b_intra_true[0] == 0``.
    """

    w_true: np.ndarray
    b_inter_true: dict
    b_intra_true: np.ndarray
    w_z_true: np.ndarray
    b_z_true: float
    z_true: dict
    base_vmin: float
    n_clipped: int = 0
    intra_perturbation: np.ndarray | None = None

    def shift_tables(self, reference_wafer=None) -> ShiftTables:
        ref_w = reference_wafer if reference_wafer is not None else next(iter(self.b_inter_true))
        ref = self.b_inter_true[ref_w]
        return ShiftTables(
            reference_wafer=ref_w,
            reference_zone=0,
            inter_mv={w: (b - ref) * 1e3 for w, b in self.b_inter_true.items()},
            intra_mv={z: float(b) * 1e3 for z, b in enumerate(self.b_intra_true)},
        )

    def to_dict(self) -> dict:
        return {
            "w_true": self.w_true.tolist(),
            "b_inter_true": dict(self.b_inter_true),
            "b_intra_true": self.b_intra_true.tolist(),
            "w_z_true": self.w_z_true.tolist(),
            "b_z_true": self.b_z_true,
            "z_true": {w: z.tolist() for w, z in self.z_true.items()},
            "base_vmin": self.base_vmin,
            "n_clipped": self.n_clipped,
            "intra_perturbation": None if self.intra_perturbation is None else self.intra_perturbation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        pert = d.get("intra_perturbation")
        return cls(
            w_true=np.array(d["w_true"], dtype=float),
            b_inter_true={w: float(b) for w, b in d["b_inter_true"].items()},
            b_intra_true=np.array(d["b_intra_true"], dtype=float),
            w_z_true=np.array(d["w_z_true"], dtype=float),
            b_z_true=float(d["b_z_true"]),
            z_true={w: np.array(z, dtype=float) for w, z in d["z_true"].items()},
            base_vmin=float(d["base_vmin"]),
            n_clipped=int(d.get("n_clipped", 0)),
            intra_perturbation=None if pert is None else np.array(pert, dtype=float),
        )


def disc_layout(n: int) -> tuple[np.ndarray, np.ndarray]:
    """The ``n`` integer grid sites closest to the origin, ordered by radius then (x, y)."""
    half = int(math.ceil(math.sqrt(n / math.pi))) + 2
    g = np.arange(-half, half + 1)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    order = np.lexsort((gy, gx, gx * gx + gy * gy))[:n]
    return gx[order].astype(float), gy[order].astype(float)


def generate(cfg: SimConfig) -> tuple[WaferDataset, ClassProbeTable, GroundTruth]:
    """Draw a dataset, its class-probe table and the planted truth; deterministic per ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    N, M, P, d, k = cfg.n_wafers, cfg.n_zones, cfg.dies_per_zone, cfg.d, cfg.k
    w_true = np.array(cfg.w_true) if cfg.w_true is not None else rng.normal(0.0, 0.01, d)
    w_z = cfg.probe_coefficients()

    n_die = M * P
    dx, dy = disc_layout(n_die)
    wafer_zones = zone_labels(np.zeros(n_die, dtype=object), dx, dy, M)

    b_intra = np.concatenate([[0.0], rng.normal(0.0, cfg.sigma_intra, M - 1)])
    zone_shift = rng.normal(0.0, 1.0, (M, d)) * cfg.feature_shift_scale

    wafer_ids, xs, ys, zs, feats, vmins = [], [], [], [], [], []
    b_inter, z_true, pert_all = {}, {}, []
    n_clipped = 0
    for i in range(N):
        wid = f"W{i + 1:02d}"
        z = rng.normal(0.0, 1.0, k)
        shift = cfg.b_z_true + float(z @ w_z) + rng.normal(0.0, 1.0) * cfg.sigma_probe_noise
        wafer_shift = rng.normal(0.0, 1.0, d) * cfg.feature_shift_scale
        pert = rng.normal(0.0, 1.0, M) * cfg.intra_perturbation
        X = rng.normal(wafer_shift + zone_shift[wafer_zones], 1.0)
        noise = rng.normal(0.0, 1.0, n_die) * cfg.sigma_noise
        y = cfg.base_vmin + X @ w_true + shift + (b_intra + pert)[wafer_zones] + noise
        low = y < VMIN_FLOOR
        n_clipped += int(low.sum())
        y = np.where(low, VMIN_FLOOR, y)

        b_inter[wid] = cfg.base_vmin + shift
        z_true[wid] = z
        pert_all.append(pert)
        wafer_ids += [wid] * n_die
        xs.append(dx)
        ys.append(dy)
        zs.append(wafer_zones)
        feats.append(X)
        vmins.append(y)

    ds = WaferDataset(
        wafer_ids=np.array(wafer_ids, dtype=object),
        die_x=np.concatenate(xs),
        die_y=np.concatenate(ys),
        zones=np.concatenate(zs),
        X=np.vstack(feats),
        vmin=np.concatenate(vmins),
        n_zones=M,
        feature_names=tuple(f"f_{j + 1}" for j in range(d)),
        meta={"pattern": "synthetic", "temperature": "", "seed": cfg.seed},
    )
    probes = ClassProbeTable(tuple(f"z_{j + 1}" for j in range(k)), z_true)
    gt = GroundTruth(
        w_true=w_true,
        b_inter_true=b_inter,
        b_intra_true=b_intra,
        w_z_true=w_z,
        b_z_true=cfg.base_vmin + cfg.b_z_true,
        z_true=z_true,
        base_vmin=cfg.base_vmin,
        n_clipped=n_clipped,
        intra_perturbation=np.array(pert_all) if cfg.intra_perturbation > 0 else None,
    )
    return ds, probes, gt


def describe(gt: GroundTruth) -> str:
    """Planted parameters as text; the shift block uses the same layout as fitted shift tables."""
    vec = lambda a: "[" + ", ".join(repr(float(v)) for v in a) + "]"
    head = [
        "planted ground truth",
        f"w_true: {vec(gt.w_true)}",
        f"w_z_true: {vec(gt.w_z_true)}",
        f"b_z_true: {gt.b_z_true!r} V",
        f"clipped dies: {gt.n_clipped}",
    ]
    return "\n".join(head) + "\n" + gt.shift_tables().render()


def write_simulation(out_dir, ds: WaferDataset, probes: ClassProbeTable, gt: GroundTruth,
                     cfg: SimConfig | None = None) -> dict:
    """Write ``dies.csv``, ``probes.csv`` and ``truth.json``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"dies": out / "dies.csv", "probes": out / "probes.csv", "truth": out / "truth.json"}
    write_die_csv(ds, paths["dies"])
    write_probe_csv(probes, paths["probes"])
    truth = gt.to_dict()
    if cfg is not None:
        truth["config"] = asdict(cfg)
    paths["truth"].write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8", newline="")
    return paths
