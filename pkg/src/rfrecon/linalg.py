"""Dense linear-algebra kernels shared by training and reconstruction.

Everything here works on plain float64 numpy arrays (matrices are 2-d and
row-major, vectors 1-d). The three building blocks are a counter-based
Gaussian sampler (so parallel sweep cells can draw independent, reproducible
streams), a conjugate-gradient solver for the small symmetric positive
definite Gram systems, and the minimum-norm least-squares solve built on top
of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConjugateGradientError(RuntimeError):
    """Conjugate gradients failed: NaN/indefinite system or no convergence.

    Carries the iteration count and a condition estimate of the Gram matrix
    so callers can report why the solve went wrong.
    """

    def __init__(self, message, iterations=0, condition=float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.condition = condition


class IllConditionedError(RuntimeError):
    """Gram matrix condition estimate exceeds the solvable cutoff."""


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {a.shape}")
    return a


def as_vector(a, name="vector"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {a.shape}")
    return a


_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)


class RngStream:
    """Reproducible random stream keyed by a (seed, counter) pair.

    The pair fully determines the draw sequence, so a sweep worker can derive
    its own stream from (seed, cell index) without coordinating with anyone
    else. Bits come from the counter-based Philox generator and normal
    variates from an explicit Box-Muller transform, which keeps the sequence
    bit-identical across platforms.
    """

    algorithm = "philox4x64/box-muller"

    def __init__(self, seed, counter=0):
        self.seed = int(seed)
        self.counter = int(counter)
        key = np.array([self.seed, self.counter], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key & _U64))

    def derive(self, counter):
        """Fresh stream with the same seed and a new counter."""
        return RngStream(self.seed, counter)

    def uniform(self, size):
        """Uniform draws in (0, 1]."""
        return 1.0 - self._gen.random(size)

    def normal(self, shape, std=1.0):
        """Standard-normal draws (times std) via Box-Muller pairs."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        m = int(np.prod(shape)) if shape else 1
        pairs = (m + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:m]
        out = z.reshape(shape)
        if std != 1.0:
            out = out * std
        return out

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"


def gaussian_matrix(rng, rows, cols, std):
    """rows x cols matrix of i.i.d. N(0, std^2) entries from `rng`."""
    if rows <= 0 or cols <= 0:
        raise ValueError(f"empty shape ({rows}, {cols})")
    if std <= 0:
        raise ValueError(f"std must be positive, got {std}")
    return rng.normal((rows, cols), std=std)


def condition_estimate(gram):
    """lambda_max / lambda_min of a symmetric matrix (inf if singular)."""
    eig = np.linalg.eigvalsh(gram)
    lo, hi = eig[0], eig[-1]
    if hi <= 0:
        return float("inf")
    if lo <= 0:
        return float("inf")
    return float(hi / lo)


@dataclass
class CGResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float


def cg_solve(gram, rhs, tol=1e-12, max_iter=None):
    """Solve gram @ x = rhs by conjugate gradients.

    `gram` must be symmetric positive definite. Returns the iterate whose
    residual satisfies ||gram x - rhs|| <= tol * ||rhs||, or the best iterate
    seen with converged=False if the iteration cap (default 10n) runs out.
    """
    gram = as_matrix(gram, "gram")
    rhs = as_vector(rhs, "rhs")
    n = rhs.shape[0]
    if gram.shape != (n, n):
        raise ValueError(f"gram shape {gram.shape} incompatible with rhs length {n}")
    scale = np.max(np.abs(gram))
    if not np.isfinite(scale):
        raise ConjugateGradientError("non-finite entries in gram matrix")
    if np.max(np.abs(gram - gram.T)) > 1e-10 * max(scale, np.finfo(np.float64).tiny):
        raise ValueError("gram matrix is not symmetric (relative asymmetry > 1e-10)")
    if not np.all(np.isfinite(rhs)):
        raise ConjugateGradientError("non-finite entries in rhs")
    if max_iter is None:
        max_iter = 10 * n

    rhs_norm = float(np.linalg.norm(rhs))
    x = np.zeros(n)
    if rhs_norm == 0.0:
        return CGResult(x, True, 0, 0.0)

    r = rhs.copy()
    d = r.copy()
    rs = float(r @ r)
    best_x = x.copy()
    best_res = np.sqrt(rs)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        gd = gram @ d
        curvature = float(d @ gd)
        if not np.isfinite(curvature) or curvature <= 0.0:
            raise ConjugateGradientError(
                "conjugate gradients hit non-positive curvature (matrix not PD?)",
                iterations=iterations,
                condition=condition_estimate(gram),
            )
        step = rs / curvature
        x = x + step * d
        r = r - step * gd
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise ConjugateGradientError(
                "NaN encountered during conjugate gradients",
                iterations=iterations,
                condition=condition_estimate(gram),
            )
        res = np.sqrt(rs_new)
        if res < best_res:
            best_res = res
            best_x = x.copy()
        if res <= tol * rhs_norm:
            return CGResult(x, True, iterations, res)
        d = r + (rs_new / rs) * d
        rs = rs_new
    return CGResult(best_x, False, iterations, best_res)


def min_norm_solve(features, targets, tol=1e-12):
    """Minimum-Frobenius-norm interpolator for an underdetermined system.

    For features F (n x p, p >= n, full row rank) and targets Y (n or n x k),
    returns T = F^T (F F^T)^{-1} Y, the smallest-norm solution of F T = Y.
    The n x n Gram system is solved per target column with cg_solve.
    """
    features = as_matrix(features, "features")
    n, p = features.shape
    targets = np.asarray(targets, dtype=np.float64)
    squeeze = targets.ndim == 1
    y = targets.reshape(n, -1) if not squeeze else targets.reshape(n, 1)
    if y.shape[0] != n:
        raise ValueError(f"targets have {y.shape[0]} rows, features {n}")
    if p < n:
        raise ValueError(f"need p >= n for an interpolating solve, got p={p}, n={n}")

    gram = features @ features.T
    cond = condition_estimate(gram)
    if cond > 1e14:
        raise IllConditionedError(
            f"feature Gram condition estimate {cond:.3e} exceeds 1e14"
        )
    coeffs = np.empty_like(y)
    for j in range(y.shape[1]):
        result = cg_solve(gram, y[:, j], tol=tol)
        if not result.converged:
            raise ConjugateGradientError(
                "Gram solve did not converge in min_norm_solve",
                iterations=result.iterations,
                condition=cond,
            )
        coeffs[:, j] = result.x
    theta = features.T @ coeffs
    return theta[:, 0] if squeeze else theta


def rowspan_residuals(features, vectors, tol=1e-12, jitter_cond=1e12,
                      jitter_scale=1e-10):
    """Components of `vectors` orthogonal to the row span of `features`.

    For features F (n x p) and vectors W (p x k), solves (F F^T) A = F W and
    returns (residuals = W - F^T A, alphas A). When the Gram matrix looks
    numerically singular (condition estimate beyond `jitter_cond`, as happens
    for p <= n or near-duplicate rows), a diagonal jitter proportional to the
    mean diagonal is added once before solving.
    """
    features = as_matrix(features, "features")
    vectors = as_matrix(vectors, "vectors")
    n, p = features.shape
    if vectors.shape[0] != p:
        raise ValueError(
            f"vectors live in dimension {vectors.shape[0]}, features have p={p}"
        )
    gram = features @ features.T
    cond = condition_estimate(gram)
    if cond > jitter_cond:
        jitter = jitter_scale * float(np.trace(gram)) / n
        gram = gram + jitter * np.eye(n)
        cond = condition_estimate(gram)
    rhs_all = features @ vectors
    alphas = np.empty((n, vectors.shape[1]))
    for j in range(vectors.shape[1]):
        result = cg_solve(gram, rhs_all[:, j], tol=tol)
        if not result.converged:
            raise ConjugateGradientError(
                "Gram solve did not converge while projecting onto a row span",
                iterations=result.iterations,
                condition=cond,
            )
        alphas[:, j] = result.x
    residuals = vectors - features.T @ alphas
    return residuals, alphas
