"""Vmin predictors: pooled OLS, Bias Alignment (BA) and Restricted Bias Alignment (RBA).

BA fits one coefficient vector shared by all dies plus a free voltage bias per
(wafer, zone) group. RBA restricts that bias to an additive split
``b_inter[wafer] + b_intra[zone]`` and can map class-probe features to the
wafer term, so that wafers without any Vmin measurement can be predicted.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import numkit
from .datamodel import ClassProbeTable, WaferDataset
from .errors import (
    ConvergenceWarning,
    Diverged,
    GroupTooSmall,
    InputError,
    InvalidConfig,
    NoInterBiasSource,
    ShapeMismatch,
    TooFewSamples,
    TooFewWafers,
    UnknownGroup,
    UnknownWafer,
)
from .report import ShiftTables

# Loss values at or below this fraction of sum(y^2) count as an exact fit.
EXACT_FIT_FLOOR = 1e-26
# Relative loss increase that counts towards divergence.
DIVERGENCE_SLACK = 1e-9
DIVERGENCE_PATIENCE = 3


@dataclass(frozen=True)
class OlsModel:
    w: np.ndarray
    b: float
    feature_names: tuple = ()

    kind = "ols"


@dataclass(frozen=True)
class BaModel:
    w: np.ndarray
    biases: Mapping
    feature_names: tuple = ()

    kind = "ba"


@dataclass(frozen=True)
class ProbeBiasModel:
    w_z: np.ndarray
    b_z: float
    feature_names: tuple = ()

    def predict(self, z) -> float:
        z = numkit.as_vector(z, "z")
        if z.shape != self.w_z.shape:
            raise ShapeMismatch(f"probe vector has {z.size} entries, model expects {self.w_z.size}")
        return float(z @ self.w_z + self.b_z)


@dataclass(frozen=True)
class RbaOptions:
    eta: float = 0.1
    rel_tol: float = 0.001
    max_iter: int = 10000
    bias_step: str = "gradient"
    reference_zone: int = 0

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise InvalidConfig(f"eta must lie in (0, 1), got {self.eta}")
        if not self.rel_tol > 0.0:
            raise InvalidConfig(f"rel_tol must be positive, got {self.rel_tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise InvalidConfig(f"max_iter must be a positive integer, got {self.max_iter}")
        if self.bias_step not in ("gradient", "exact"):
            raise InvalidConfig(f"bias_step must be 'gradient' or 'exact', got {self.bias_step!r}")
        if int(self.reference_zone) != self.reference_zone or self.reference_zone < 0:
            raise InvalidConfig(f"reference_zone must be a zone index, got {self.reference_zone}")


@dataclass(frozen=True)
class RbaModel:
    w: np.ndarray
    b_inter: Mapping
    b_intra: np.ndarray
    reference_zone: int
    options_used: RbaOptions
    train_trace: tuple = ()
    probe: ProbeBiasModel | None = None
    zones_seen: tuple = ()
    converged: bool = True
    feature_names: tuple = ()

    kind = "rba"

    @property
    def n_zones(self) -> int:
        return len(self.b_intra)

    @property
    def n_iter(self) -> int:
        return max(len(self.train_trace) - 1, 0)


def _check_x(w: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != w.shape or x.ndim > 2:
        raise ShapeMismatch(f"expected feature vector(s) of length {w.size}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("features contain NaN or Inf")
    return x


def _scalar_or_array(v):
    return float(v) if np.ndim(v) == 0 else v


# ---------------------------------------------------------------- OLS

def fit_ols(X, y, feature_names=()) -> OlsModel:
    """Least squares with an intercept: slope from centred data, ``b = mean(y) - mean(X) w``."""
    X = numkit.as_matrix(X, "X")
    y = numkit.as_vector(y, "y")
    n, d = X.shape
    if y.size != n:
        raise ShapeMismatch(f"X has {n} rows but y has {y.size}")
    if n <= d:
        raise TooFewSamples(f"OLS needs more samples than features (n={n}, d={d})")
    Xc, x_bar = numkit.centralize(X)
    yc, y_bar = numkit.centralize(y)
    w = numkit.solve_least_squares(Xc, yc)
    return OlsModel(w=w, b=float(y_bar - x_bar @ w), feature_names=tuple(feature_names))


def predict_ols(m: OlsModel, x):
    """``x w + b`` for one feature vector (returns float) or a matrix of rows."""
    x = _check_x(m.w, x)
    return _scalar_or_array(x @ m.w + m.b)


def residuals(y, yhat) -> np.ndarray:
    y = numkit.as_vector(y, "y")
    yhat = numkit.as_vector(yhat, "yhat")
    if y.shape != yhat.shape:
        raise ShapeMismatch(f"length mismatch: {y.size} vs {yhat.size}")
    return y - yhat


# ---------------------------------------------------------------- BA

def _labeled_groups(ds: WaferDataset, min_size: int) -> dict:
    groups = ds.groups()
    if not groups:
        raise TooFewSamples("dataset has no labeled dies")
    for key, (_, y) in groups.items():
        if y.size < min_size:
            raise GroupTooSmall(f"group {key} has {y.size} labeled dies, need at least {min_size}")
    return groups


def fit_ba(ds: WaferDataset) -> BaModel:
    """Closed-form BA fit.

    The shared slope solves least squares on the pooled per-group-centred data;
    each group bias is then ``mean(y_ij) - mean(X_ij) w``.
    """
    groups = _labeled_groups(ds, 2)
    xs, ys, means = [], [], {}
    for key, (X, y) in groups.items():
        Xc, x_bar = numkit.centralize(X)
        yc, y_bar = numkit.centralize(y)
        xs.append(Xc)
        ys.append(yc)
        means[key] = (x_bar, y_bar)
    Xc = np.vstack(xs)
    if Xc.shape[0] < Xc.shape[1]:
        raise TooFewSamples("not enough labeled dies to estimate the shared coefficients")
    w = numkit.solve_least_squares(Xc, np.concatenate(ys))
    biases = {key: float(y_bar - x_bar @ w) for key, (x_bar, y_bar) in means.items()}
    return BaModel(w=w, biases=biases, feature_names=ds.feature_names)


def predict_ba(m: BaModel, x, wafer_id, zone):
    try:
        b = m.biases[(wafer_id, int(zone))]
    except KeyError:
        raise UnknownGroup(
            f"BA has no bias for wafer {wafer_id!r} zone {zone}; "
            "it needs labeled dies from every (wafer, zone) it predicts"
        ) from None
    x = _check_x(m.w, x)
    return _scalar_or_array(x @ m.w + b)


def ba_loss(ds: WaferDataset, w, biases: Mapping) -> float:
    """Sum of squared residuals of a BA parameter set over the labeled dies."""
    w = np.asarray(w, dtype=float)
    total = 0.0
    for key, (X, y) in ds.groups().items():
        r = y - X @ w - biases[key]
        total += float(r @ r)
    return total


# ---------------------------------------------------------------- RBA

@dataclass(frozen=True)
class _Pooled:
    """Labeled dies flattened with integer wafer / zone codes."""

    X: np.ndarray
    y: np.ndarray
    wafer: np.ndarray
    zone: np.ndarray
    wafers: tuple
    n_zones: int

    @classmethod
    def from_dataset(cls, ds: WaferDataset) -> "_Pooled":
        lab = ds.labeled
        wafers = tuple(w for w in ds.wafers if np.any(lab & (ds.wafer_ids == w)))
        code = {w: i for i, w in enumerate(wafers)}
        return cls(
            X=ds.X[lab],
            y=ds.vmin[lab],
            wafer=np.array([code[w] for w in ds.wafer_ids[lab]], dtype=np.int64),
            zone=ds.zones[lab].astype(np.int64),
            wafers=wafers,
            n_zones=ds.n_zones,
        )

    def residual(self, w, b_inter, b_intra) -> np.ndarray:
        return self.y - self.X @ w - b_inter[self.wafer] - b_intra[self.zone]

    def group_means(self, r) -> tuple[np.ndarray, np.ndarray]:
        """Mean of ``r`` per wafer and per zone (NaN for zones without dies)."""
        nw = np.bincount(self.wafer, minlength=len(self.wafers))
        nz = np.bincount(self.zone, minlength=self.n_zones)
        sw = np.bincount(self.wafer, weights=r, minlength=len(self.wafers))
        sz = np.bincount(self.zone, weights=r, minlength=self.n_zones)
        with np.errstate(invalid="ignore", divide="ignore"):
            return sw / nw, sz / nz


def rba_loss(ds: WaferDataset, w, b_inter: Mapping, b_intra) -> float:
    """Sum of squared RBA residuals over the labeled dies."""
    p = _Pooled.from_dataset(ds)
    bi = np.array([b_inter[w_] for w_ in p.wafers], dtype=float)
    r = p.residual(np.asarray(w, dtype=float), bi, np.asarray(b_intra, dtype=float))
    return float(r @ r)


def rba_bias_gradient(ds: WaferDataset, w, b_inter: Mapping, b_intra):
    """Gradient of the RBA loss w.r.t. each bias, divided by that bias's die count.

    Returns ``(g_inter, g_intra)``: a dict keyed by wafer and an array over
    zones (NaN for zones with no labeled dies). Each entry equals
    ``-2 * mean residual`` of the group; the gradient bias step moves every
    bias by ``-eta`` times it.
    """
    p = _Pooled.from_dataset(ds)
    bi = np.array([b_inter[w_] for w_ in p.wafers], dtype=float)
    r = p.residual(np.asarray(w, dtype=float), bi, np.asarray(b_intra, dtype=float))
    mw, mz = p.group_means(r)
    return {w_: float(-2.0 * m) for w_, m in zip(p.wafers, mw)}, -2.0 * mz


def _init_from_ba(ba: BaModel, p: _Pooled):
    """Split the BA bias matrix into wafer and zone components.

    Wafer term: mean over that wafer's zones. Zone term: mean over wafers of
    what the wafer term leaves unexplained, so the grand mean is not counted
    twice.
    """
    B = np.full((len(p.wafers), p.n_zones), np.nan)
    code = {w: i for i, w in enumerate(p.wafers)}
    for (w, z), b in ba.biases.items():
        B[code[w], z] = b
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        b_inter = np.nanmean(B, axis=1)
        b_intra = np.nanmean(B - b_inter[:, None], axis=0)
    return b_inter, np.nan_to_num(b_intra, nan=0.0)


def fit_rba(ds: WaferDataset, probes: ClassProbeTable | None = None,
            opt: RbaOptions | None = None) -> RbaModel:
    """Alternating RBA fit, initialised from the BA solution.

    Each iteration solves the shared coefficients exactly (pooled raw features,
    no intercept, bias-adjusted targets) and then updates the biases. With
    ``bias_step="gradient"`` every bias moves by ``2 * eta`` times its group's
    mean residual; with ``"exact"`` the wafer block and then the zone block are
    set to their conditional optima. Training stops once the relative loss
    improvement drops below ``rel_tol``. The result is gauged so that the
    reference zone's intra bias is exactly zero.

    Raises
    ------
    Diverged
        If the loss grows for several consecutive iterations (possible only
        for large ``eta``).

    Warns
    -----
    ConvergenceWarning
        If ``max_iter`` is reached; the model is returned with
        ``converged=False``.
    """
    opt = opt or RbaOptions()
    if opt.reference_zone >= ds.n_zones:
        raise InvalidConfig(f"reference_zone {opt.reference_zone} outside 0..{ds.n_zones - 1}")
    ba = fit_ba(ds)
    p = _Pooled.from_dataset(ds)
    seen = np.bincount(p.zone, minlength=p.n_zones) > 0
    if not seen[opt.reference_zone]:
        raise InputError(f"reference zone {opt.reference_zone} has no labeled training dies")

    w = ba.w.copy()
    b_inter, b_intra = _init_from_ba(ba, p)
    r = p.residual(w, b_inter, b_intra)
    trace = [float(r @ r)]
    floor = EXACT_FIT_FLOOR * float(p.y @ p.y)
    converged = trace[0] <= floor
    rises = 0
    t = 0
    while not converged and t < opt.max_iter:
        t += 1
        w = numkit.solve_least_squares(p.X, p.y - b_inter[p.wafer] - b_intra[p.zone])
        base = p.y - p.X @ w
        if opt.bias_step == "gradient":
            mw, mz = p.group_means(base - b_inter[p.wafer] - b_intra[p.zone])
            b_inter = b_inter + 2.0 * opt.eta * mw
            b_intra = np.where(seen, b_intra + 2.0 * opt.eta * np.nan_to_num(mz), b_intra)
        else:
            mw, _ = p.group_means(base - b_intra[p.zone])
            b_inter = mw
            _, mz = p.group_means(base - b_inter[p.wafer])
            b_intra = np.where(seen, np.nan_to_num(mz), b_intra)
        r = p.residual(w, b_inter, b_intra)
        loss = float(r @ r)
        prev = trace[-1]
        trace.append(loss)
        if loss > prev * (1.0 + DIVERGENCE_SLACK):
            rises += 1
            if rises >= DIVERGENCE_PATIENCE:
                raise Diverged(
                    f"RBA loss increased for {rises} consecutive iterations "
                    f"(eta={opt.eta}); lower the learning rate"
                )
            continue
        rises = 0
        converged = loss <= floor or (prev - loss) / prev < opt.rel_tol
    if not converged:
        warnings.warn(
            f"RBA stopped after {t} iterations without meeting rel_tol={opt.rel_tol}",
            ConvergenceWarning,
            stacklevel=2,
        )

    c = b_intra[opt.reference_zone]
    b_intra = np.where(seen, b_intra - c, 0.0)
    b_inter = b_inter + c
    inter = {w_: float(b) for w_, b in zip(p.wafers, b_inter)}
    probe = fit_probe_bias_model(inter, probes) if probes is not None else None
    return RbaModel(
        w=w,
        b_inter=inter,
        b_intra=b_intra,
        reference_zone=opt.reference_zone,
        options_used=opt,
        train_trace=tuple(trace),
        probe=probe,
        zones_seen=tuple(int(z) for z in np.flatnonzero(seen)),
        converged=converged,
        feature_names=ds.feature_names,
    )


def fit_probe_bias_model(b_inter: Mapping, probes: ClassProbeTable) -> ProbeBiasModel:
    """Least-squares map from class-probe features to per-wafer inter bias.

    Needs more than ``k + 1`` wafers so the fit keeps residual degrees of freedom.
    """
    wafers = list(b_inter)
    n, k = len(wafers), probes.k
    if n <= k + 1:
        raise TooFewWafers(
            f"probe model with {k} features needs more than {k + 1} wafers, got {n}"
        )
    Z = probes.matrix(wafers)
    ols = fit_ols(Z, [b_inter[w] for w in wafers])
    return ProbeBiasModel(w_z=ols.w, b_z=ols.b, feature_names=probes.feature_names)


def inter_bias(m: RbaModel, wafer_id=None, z=None, use_probe: bool = False) -> float:
    """Wafer voltage bias: the stored estimate for a training wafer, else the probe model."""
    if wafer_id in m.b_inter and not use_probe:
        return m.b_inter[wafer_id]
    if z is not None and m.probe is not None:
        return m.probe.predict(z)
    if z is not None:
        raise NoInterBiasSource("model has no fitted probe model; refit with class-probe data")
    raise NoInterBiasSource(
        f"wafer {wafer_id!r} is not a training wafer and no class-probe vector was given"
    )


def predict_rba(m: RbaModel, x, zone, wafer_id=None, z=None, use_probe: bool = False):
    """``x w + inter bias + intra bias[zone]``.

    ``use_probe=True`` ignores stored wafer biases and always goes through the
    probe model, as when deploying on a wafer without Vmin measurements.
    """
    zone = int(zone)
    if zone not in m.zones_seen:
        raise UnknownGroup(f"zone {zone} was not present in RBA training data")
    inter = inter_bias(m, wafer_id, z, use_probe)
    x = _check_x(m.w, x)
    return _scalar_or_array(x @ m.w + inter + m.b_intra[zone])


def shift_tables(m: RbaModel, reference_wafer=None) -> ShiftTables:
    """Inter-wafer shifts from ``reference_wafer`` and intra-wafer shifts, in mV."""
    if reference_wafer is None:
        reference_wafer = next(iter(m.b_inter))
    if reference_wafer not in m.b_inter:
        raise UnknownWafer(f"wafer {reference_wafer!r} is not in the model")
    ref = m.b_inter[reference_wafer]
    return ShiftTables(
        reference_wafer=reference_wafer,
        reference_zone=m.reference_zone,
        inter_mv={w: (b - ref) * 1e3 for w, b in m.b_inter.items()},
        intra_mv={z: float(m.b_intra[z]) * 1e3 for z in m.zones_seen},
    )


def predict_dataset(model, ds: WaferDataset, probes: ClassProbeTable | None = None,
                    use_probe: bool = False) -> np.ndarray:
    """Predictions for every die of ``ds`` (labeled or not) along each model's own path."""
    if ds.d != model.w.size:
        raise ShapeMismatch(f"dataset has {ds.d} features, model expects {model.w.size}")
    if isinstance(model, OlsModel):
        return ds.X @ model.w + model.b
    out = np.empty(len(ds))
    for (wafer, zone), idx in ds.group_indices(labeled_only=False).items():
        if isinstance(model, BaModel):
            out[idx] = predict_ba(model, ds.X[idx], wafer, zone)
        elif isinstance(model, RbaModel):
            z = probes.vector(wafer) if probes is not None and wafer in probes else None
            out[idx] = predict_rba(model, ds.X[idx], zone, wafer, z, use_probe)
        else:
            raise TypeError(f"unsupported model type {type(model).__name__}")
    return out


# ---------------------------------------------------------------- persistence

def model_to_dict(model) -> dict:
    base = {"kind": model.kind, "feature_names": list(model.feature_names), "w": model.w.tolist()}
    if isinstance(model, OlsModel):
        base["b"] = model.b
    elif isinstance(model, BaModel):
        base["biases"] = [{"wafer_id": w, "zone": z, "bias": b} for (w, z), b in model.biases.items()]
    elif isinstance(model, RbaModel):
        base.update(
            b_inter=[{"wafer_id": w, "bias": b} for w, b in model.b_inter.items()],
            b_intra=model.b_intra.tolist(),
            reference_zone=model.reference_zone,
            zones_seen=list(model.zones_seen),
            converged=model.converged,
            options_used=asdict(model.options_used),
            train_trace=list(model.train_trace),
            probe=None if model.probe is None else {
                "w_z": model.probe.w_z.tolist(),
                "b_z": model.probe.b_z,
                "feature_names": list(model.probe.feature_names),
            },
        )
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    return base


def model_from_dict(data: Mapping):
    try:
        kind = data["kind"]
        names = tuple(data.get("feature_names", ()))
        w = np.array(data["w"], dtype=float)
        if kind == "ols":
            return OlsModel(w=w, b=float(data["b"]), feature_names=names)
        if kind == "ba":
            biases = {(e["wafer_id"], int(e["zone"])): float(e["bias"]) for e in data["biases"]}
            return BaModel(w=w, biases=biases, feature_names=names)
        if kind == "rba":
            pr = data.get("probe")
            probe = None if pr is None else ProbeBiasModel(
                w_z=np.array(pr["w_z"], dtype=float), b_z=float(pr["b_z"]),
                feature_names=tuple(pr.get("feature_names", ())),
            )
            return RbaModel(
                w=w,
                b_inter={e["wafer_id"]: float(e["bias"]) for e in data["b_inter"]},
                b_intra=np.array(data["b_intra"], dtype=float),
                reference_zone=int(data["reference_zone"]),
                options_used=RbaOptions(**data["options_used"]),
                train_trace=tuple(float(v) for v in data["train_trace"]),
                probe=probe,
                zones_seen=tuple(int(z) for z in data["zones_seen"]),
                converged=bool(data["converged"]),
                feature_names=names,
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed model file: {exc}") from None
    raise InputError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    """Write a model as JSON; floats are stored in round-trip (shortest repr) form."""
    text = json.dumps(model_to_dict(model), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8", newline="")


def load_model(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(data)
