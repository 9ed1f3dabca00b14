"""Reconstruction quality metrics.

The headline number is rho: the average row-wise l2 distance between the
training matrix and the reconstruction under the best row matching (and,
when the activation leaves signs unidentifiable, the best per-row sign
flip), normalized by n*sqrt(d) so that values well below 1 mean success.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, rowspan_residuals
from .models import feature_map


def hungarian(cost):
    """Minimum-cost perfect matching on a square cost matrix.

    Augmenting-path implementation with row/column potentials, O(n^3).
    Ties are resolved toward the lowest column index, so the assignment is
    deterministic for reproducible reports. Returns (row_to_col, total_cost).
    """
    cost = as_matrix(cost, "cost")
    n, m = cost.shape
    if n != m:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    inf = float("inf")
    # 1-indexed arrays with a 0 sentinel column, the classic formulation
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.int64)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    row_to_col = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        if match[j] > 0:
            row_to_col[match[j] - 1] = j - 1
    total = float(cost[np.arange(n), row_to_col].sum())
    return row_to_col, total


@dataclass
class AssignmentResult:
    """Optimal matching between training rows and candidates."""

    permutation: np.ndarray   # permutation[i] = candidate index matched to row i
    sign_flips: np.ndarray    # +1 / -1 per matched pair
    rho: float
    per_pair: np.ndarray      # post-flip l2 distance per matched pair

    def to_dict(self):
        return {
            "permutation": self.permutation.tolist(),
            "sign_flips": self.sign_flips.tolist(),
            "rho": self.rho,
            "per_pair": self.per_pair.tolist(),
        }


def assignment_rho(X, x_hat, allow_sign_flips):
    """Permutation-optimal (and optionally sign-flip-optimal) row distance."""
    X = as_matrix(X, "X")
    x_hat = as_matrix(x_hat, "x_hat")
    if X.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: X {X.shape} vs x_hat {x_hat.shape}")
    n, d = X.shape
    diff = np.linalg.norm(X[:, None, :] - x_hat[None, :, :], axis=2)
    if allow_sign_flips:
        summed = np.linalg.norm(X[:, None, :] + x_hat[None, :, :], axis=2)
        cost = np.minimum(diff, summed)
    else:
        cost = diff
    permutation, total = hungarian(cost)
    per_pair = cost[np.arange(n), permutation]
    if allow_sign_flips:
        flips = np.where(
            summed[np.arange(n), permutation] < diff[np.arange(n), permutation], -1, 1
        ).astype(np.int64)
    else:
        flips = np.ones(n, dtype=np.int64)
    return AssignmentResult(
        permutation=permutation,
        sign_flips=flips,
        rho=float(total / (n * np.sqrt(d))),
        per_pair=per_pair,
    )


def span_residual(model, X, x_hat):
    """Average normalized length of training features outside the candidate span.

    Zero (to solver tolerance) exactly when every training feature vector
    lies in the span of the candidate feature rows.
    """
    phi = feature_map(model, X)          # n x p
    phi_hat = feature_map(model, x_hat)  # m x p
    residuals, _ = rowspan_residuals(phi_hat, phi.T)
    norms = np.linalg.norm(residuals, axis=0)
    n, p = phi.shape
    return float(norms.sum() / (n * np.sqrt(p)))


def training_mse(model, X, Y):
    """Mean squared prediction error, averaged over samples and outputs."""
    X = as_matrix(X, "X")
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    err = model.predict(X) - Y
    return float(np.sum(err * err)) / (Y.shape[0] * Y.shape[1])


def metrics_report(model, X, Y, x_hat, allow_sign_flips):
    """Full evaluation bundle as a JSON-serializable dict."""
    assignment = assignment_rho(X, x_hat, allow_sign_flips)
    return {
        "rho": assignment.rho,
        "residual": span_residual(model, X, x_hat),
        "train_mse": training_mse(model, X, Y),
        "permutation": assignment.permutation.tolist(),
        "sign_flips": assignment.sign_flips.tolist(),
    }
