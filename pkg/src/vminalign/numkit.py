"""Dense numerical kernels shared by the estimators and the harness."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import EmptyInput, NonFinite, RankDeficient, ShapeMismatch, ZeroVariance

# Reciprocal condition number (of the column-equilibrated design) below which
# a least-squares problem is refused.
RCOND_MIN = 1e-10


def as_matrix(a, name="matrix") -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return m


def as_vector(v, name="vector") -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim != 1:
        raise ShapeMismatch(f"{name} must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return a


def reciprocal_condition(A) -> float:
    """Reciprocal 2-norm condition number of ``A`` after scaling columns to unit norm.

    Equilibration keeps the estimate independent of feature units, so only
    genuine collinearity trips the threshold.
    """
    A = np.asarray(A, dtype=float)
    norms = np.linalg.norm(A, axis=0)
    if A.size == 0 or np.any(norms == 0.0):
        return 0.0
    s = np.linalg.svd(A / norms, compute_uv=False)
    return float(s[-1] / s[0])


def solve_least_squares(A, t, rcond_min: float = RCOND_MIN) -> np.ndarray:
    """Minimise ``||t - A c||^2`` over ``c`` with a thin QR factorisation.

    No intercept column is added; callers centre or augment ``A`` themselves.

    Raises
    ------
    ShapeMismatch
        If ``t`` does not match the rows of ``A`` or ``A`` has more columns
        than rows.
    RankDeficient
        If the reciprocal condition estimate is below ``rcond_min``.
    """
    A = as_matrix(A, "A")
    t = as_vector(t, "t")
    n, d = A.shape
    if t.shape[0] != n:
        raise ShapeMismatch(f"A has {n} rows but t has {t.shape[0]} entries")
    if d < 1 or n < d:
        raise ShapeMismatch(f"need n >= d >= 1, got n={n}, d={d}")
    Q, R = np.linalg.qr(A, mode="reduced")
    rc = reciprocal_condition(R)
    if rc < rcond_min:
        raise RankDeficient(
            f"design matrix is rank deficient or collinear (rcond={rc:.3g} < {rcond_min:g})"
        )
    return solve_triangular(R, Q.T @ t, lower=False)


def centralize(M):
    """Subtract column means.

    Returns ``(centered, means)``. A 1-D input is treated as a single column
    and its mean is returned as a float.
    """
    a = np.asarray(M, dtype=float)
    if a.ndim not in (1, 2):
        raise ShapeMismatch(f"expected 1-D or 2-D input, got shape {a.shape}")
    if a.shape[0] == 0:
        raise EmptyInput("cannot centralize an empty input")
    if not np.all(np.isfinite(a)):
        raise NonFinite("input contains NaN or Inf")
    mu = a.mean(axis=0)
    centered = a - mu
    if a.ndim == 1:
        return centered, float(mu)
    return centered, mu


def rmse(residuals) -> float:
    r = as_vector(residuals, "residuals")
    if r.size == 0:
        raise EmptyInput("rmse of an empty vector")
    peak = float(np.max(np.abs(r)))
    if peak == 0.0:
        return 0.0
    s = r / peak  # scaled to avoid under/overflow in the squares
    return peak * float(np.sqrt(np.mean(s * s)))


def _sum_sq_dev(v: np.ndarray) -> float:
    c = v - v.mean()
    ss = float(c @ c)
    # Rounding in the mean leaves ~eps-sized deviations on constant input.
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    if ss <= v.size * (1e-14 * scale) ** 2:
        return 0.0
    return ss


def _paired(u, v, min_len=2):
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise ShapeMismatch(f"length mismatch: {u.size} vs {v.size}")
    if u.size < min_len:
        raise ShapeMismatch(f"need at least {min_len} entries, got {u.size}")
    return u, v


def pearson(u, v) -> float:
    """Pearson correlation coefficient, clipped to [-1, 1]."""
    u, v = _paired(u, v)
    ss_u, ss_v = _sum_sq_dev(u), _sum_sq_dev(v)
    if ss_u == 0.0 or ss_v == 0.0:
        raise ZeroVariance("pearson correlation undefined for a constant input")
    cov = float((u - u.mean()) @ (v - v.mean()))
    return float(np.clip(cov / np.sqrt(ss_u * ss_v), -1.0, 1.0))


def r_squared(y_true, y_pred) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot`` (not clamped)."""
    y_true, y_pred = _paired(y_true, y_pred)
    ss_tot = _sum_sq_dev(y_true)
    if ss_tot == 0.0:
        raise ZeroVariance("r_squared undefined when y_true is constant")
    res = y_true - y_pred
    return float(1.0 - (res @ res) / ss_tot)
