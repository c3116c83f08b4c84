"""Correlation-based feature selection (greedy forward search)."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import numkit
from .errors import EmptySubset, InputError, ShapeMismatch, ZeroVarianceColumn


@dataclass(frozen=True)
class FeatureSubset:
    indices: tuple
    merit: float

    def names(self, feature_names) -> tuple:
        return tuple(feature_names[i] for i in self.indices)


def cfs_merit(subset, feature_target_corr, feature_feature_corr) -> float:
    """CFS merit ``k r_cf / sqrt(k + k (k - 1) r_ff)``.

    ``r_cf`` is the mean absolute feature-target correlation over the subset
    and ``r_ff`` the mean absolute correlation over distinct feature pairs.
    """
    idx = list(subset)
    if not idx:
        raise EmptySubset("merit of an empty feature subset")
    if len(set(idx)) != len(idx):
        raise InputError(f"duplicate indices in subset {idx}")
    r_cf = np.asarray(feature_target_corr, dtype=float)
    r_ff = np.asarray(feature_feature_corr, dtype=float)
    if r_ff.shape != (r_cf.size, r_cf.size):
        raise ShapeMismatch(f"feature-feature matrix {r_ff.shape} does not match {r_cf.size} features")
    k = len(idx)
    mean_cf = float(np.mean(np.abs(r_cf[idx])))
    if k == 1:
        return mean_cf
    mean_ff = float(np.mean([abs(r_ff[a, b]) for a, b in combinations(idx, 2)]))
    return k * mean_cf / np.sqrt(k + k * (k - 1) * mean_ff)


def correlations(X, y) -> tuple[np.ndarray, np.ndarray]:
    """Feature-target and feature-feature Pearson correlations."""
    X = numkit.as_matrix(X, "X")
    y = numkit.as_vector(y, "y")
    if X.shape[0] != y.size:
        raise ShapeMismatch(f"X has {X.shape[0]} rows but y has {y.size}")
    d = X.shape[1]
    for j in range(d):
        if np.ptp(X[:, j]) == 0.0:
            raise ZeroVarianceColumn(f"feature column {j} is constant")
    r_cf = np.array([numkit.pearson(X[:, j], y) for j in range(d)])
    r_ff = np.eye(d)
    for a, b in combinations(range(d), 2):
        r_ff[a, b] = r_ff[b, a] = numkit.pearson(X[:, a], X[:, b])
    return r_cf, r_ff


def cfs_select(X, y, max_k: int) -> FeatureSubset:
    """Greedy forward CFS.

    Adds the feature that raises the merit most, stopping when nothing
    improves it or ``max_k`` features are chosen. Ties go to the lowest
    column index.
    """
    if max_k < 1:
        raise InputError(f"max_k must be >= 1, got {max_k}")
    r_cf, r_ff = correlations(X, y)
    chosen: list[int] = []
    merit = -np.inf
    while len(chosen) < min(max_k, r_cf.size):
        best, best_merit = None, merit
        for j in range(r_cf.size):
            if j in chosen:
                continue
            m = cfs_merit(chosen + [j], r_cf, r_ff)
            if m > best_merit:
                best, best_merit = j, m
        if best is None:
            break
        chosen.append(best)
        merit = best_merit
    return FeatureSubset(indices=tuple(chosen), merit=float(merit))
