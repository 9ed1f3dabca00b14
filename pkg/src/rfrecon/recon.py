"""Reconstruction of training inputs from a trained model's parameters.

The candidate matrix is optimized to make the trained readout vector lie in
the span of the candidate feature rows: the loss is the squared norm of the
readout's component orthogonal to that span, driven to zero by projected
gradient descent with momentum on the product of radius-sqrt(d) spheres.

Convergence control: plain momentum descent reliably parks one or two
candidate rows as duplicates of already-found rows, leaving a loss plateau
far above the convergence threshold. On a plateau the optimizer therefore
scans for redundant candidates (rows whose removal leaves the loss
unchanged, a quantity computable from the model alone) and reseeds them at
fresh random positions; plateaus without redundancy decay the step size.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import modelio
from .linalg import ConjugateGradientError, as_matrix, cg_solve, condition_estimate
from .models import RFModel, TwoLayerModel, _first_layer


class ReconDivergedError(RuntimeError):
    """Optimization produced non-finite candidates; carries the last good state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class LossConsistencyError(RuntimeError):
    """Loss left the numerically plausible range (more negative than CG noise)."""


@dataclass
class ReconProblem:
    """A reconstruction instance: model, span targets, and candidate count."""

    model: object            # RFModel or TwoLayerModel
    targets: np.ndarray      # p x k, one column per model output
    d: int
    n_candidates: int

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.ndim == 1:
            self.targets = self.targets.reshape(-1, 1)
        p = _first_layer(self.model).shape[0]
        if self.targets.shape[0] != p:
            raise ValueError(
                f"targets have length {self.targets.shape[0]}, model features have p={p}"
            )
        if self.n_candidates < 1:
            raise ValueError("need at least one candidate row")

    @property
    def target_sq_norm(self):
        return float(np.sum(self.targets * self.targets))

    @classmethod
    def from_rf(cls, model, n_candidates):
        """Target the trained readout directly (zero-initialized training)."""
        return cls(model=model, targets=model.theta_star, d=model.d,
                   n_candidates=n_candidates)

    @classmethod
    def from_two_layer(cls, model, n_candidates):
        """Target the last layer's movement away from its initialization."""
        diff = (model.theta2 - model.theta2_init).T  # h x k
        return cls(model=model, targets=diff, d=model.d, n_candidates=n_candidates)


@dataclass
class ReconConfig:
    """Optimizer settings for one reconstruction run.

    The optimizer descends the *normalized* loss (raw loss over the squared
    target norm), so `step` is scale-free: the same value works whether the
    targets are an O(1) readout vector or a tiny last-layer increment. The
    plateau_* and reseed knobs drive the convergence control described in
    the module docstring; log_every controls the loss-trace cadence.
    """

    step: float = 20.0
    momentum: float = 0.9
    max_iters: int = 500_000
    threshold: float = 1e-7
    log_every: int = 100
    plateau_patience: int = 400
    plateau_rel_gain: float = 0.01
    reseed_cooldown: int = 1500
    max_reseed_rounds: int = 12
    step_decay: float = 0.5

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")

    @classmethod
    def from_dict(cls, raw):
        return cls(**raw)


@dataclass
class TracePoint:
    iteration: int
    normalized_loss: float
    wall_ms: float


@dataclass
class ReconState:
    """Candidates on the sphere plus the momentum buffer and loss trace."""

    x_hat: np.ndarray
    momentum: np.ndarray
    iteration: int = 0
    trace: list = field(default_factory=list)

    def __post_init__(self):
        self.x_hat = as_matrix(self.x_hat, "x_hat")
        self.momentum = as_matrix(self.momentum, "momentum")
        if self.momentum.shape != self.x_hat.shape:
            raise ValueError("momentum buffer shape differs from candidate shape")
        d = self.x_hat.shape[1]
        norms = np.linalg.norm(self.x_hat, axis=1)
        if np.max(np.abs(norms - np.sqrt(d))) > 1e-8:
            raise ValueError("candidate rows must lie on the radius-sqrt(d) sphere")


@dataclass
class ReconLossResult:
    loss: float
    normalized_loss: float
    alphas: np.ndarray      # n x k, Gram-system solutions per target
    residuals: np.ndarray   # p x k, target components off the candidate span


@dataclass
class ReconResult:
    x_hat: np.ndarray
    trace: list
    converged: bool
    iterations: int
    normalized_loss: float
    reseed_rounds: int = 0
    events: list = field(default_factory=list)  # (iteration, action, detail)


def _solve_gram(gram, rhs_columns, cond, tol=1e-12):
    """CG solve per column, reporting iteration count and conditioning on failure."""
    alphas = np.empty_like(rhs_columns)
    for j in range(rhs_columns.shape[1]):
        result = cg_solve(gram, rhs_columns[:, j], tol=tol)
        if not result.converged:
            raise ConjugateGradientError(
                "Gram solve did not converge while evaluating the reconstruction loss",
                iterations=result.iterations,
                condition=cond,
            )
        alphas[:, j] = result.x
    return alphas


def _gram_with_jitter(phi_hat):
    """Candidate Gram matrix, jittered once if numerically singular.

    Near-duplicate candidate rows (and the degenerate regime p <= n) make the
    Gram matrix singular; a one-shot diagonal jitter proportional to the mean
    diagonal keeps the solve meaningful there.
    """
    n = phi_hat.shape[0]
    gram = phi_hat @ phi_hat.T
    cond = condition_estimate(gram)
    if cond > 1e12:
        jitter = 1e-10 * float(np.trace(gram)) / n
        gram = gram + jitter * np.eye(n)
        cond = condition_estimate(gram)
    return gram, cond


def _evaluate(problem, x_hat, want_grad):
    """Loss (plus alphas/residuals, and the gradient when asked) at x_hat.

    One feature pass is shared between the loss and the gradient. The scalar
    loss is evaluated as the squared norm of the residual vectors, which is
    algebraically the projector expansion but stays nonnegative and accurate
    down to machine precision at the minimum.
    """
    weights = _first_layer(problem.model)
    act = problem.model.activation
    z = x_hat @ weights.T
    phi_hat = act.fn(z)
    gram, cond = _gram_with_jitter(phi_hat)
    rhs = phi_hat @ problem.targets              # n x k
    alphas = _solve_gram(gram, rhs, cond)
    residuals = problem.targets - phi_hat.T @ alphas
    loss = float(np.sum(residuals * residuals))
    theta_sq = problem.target_sq_norm
    if loss < -1e-9 * max(1.0, theta_sq):
        raise LossConsistencyError(f"reconstruction loss {loss:.3e} is negative")
    loss = max(loss, 0.0)
    grad = None
    if want_grad:
        # d loss / d phi_hat = -2 alpha r^T summed over targets, chained
        # through the activation derivative back to the candidate rows
        weighted = (residuals @ alphas.T).T      # n x p: sum_t alpha_t r_t^T
        grad = -2.0 * (act.deriv(z) * weighted) @ weights
    normalized = loss / theta_sq if theta_sq > 0 else 0.0
    return loss, normalized, alphas, residuals, grad


def recon_loss(problem, x_hat):
    """Span-mismatch loss of a candidate matrix, with solver byproducts."""
    x_hat = as_matrix(x_hat, "x_hat")
    loss, normalized, alphas, residuals, _ = _evaluate(problem, x_hat, want_grad=False)
    return ReconLossResult(loss, normalized, alphas, residuals)


def recon_grad(problem, x_hat):
    """Gradient of recon_loss with respect to the candidate rows."""
    x_hat = as_matrix(x_hat, "x_hat")
    _, _, _, _, grad = _evaluate(problem, x_hat, want_grad=True)
    return grad


def recon_step(state, grad, config):
    """One projected momentum step: update, retract rows to the sphere."""
    grad = as_matrix(grad, "grad")
    if grad.shape != state.x_hat.shape:
        raise ValueError("gradient shape differs from candidate shape")
    momentum = config.momentum * state.momentum + grad
    x_hat = state.x_hat - config.step * momentum
    if not np.all(np.isfinite(x_hat)):
        raise ReconDivergedError(
            f"non-finite candidate entries after step {state.iteration}", state=state
        )
    d = x_hat.shape[1]
    norms = np.linalg.norm(x_hat, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ReconDivergedError(
            f"candidate row collapsed to zero at step {state.iteration}", state=state
        )
    x_hat *= np.sqrt(d) / norms
    return ReconState(x_hat=x_hat, momentum=momentum,
                      iteration=state.iteration + 1, trace=state.trace)


def init_state(problem, rng):
    """Gaussian candidate rows retracted onto the sphere, zero momentum."""
    raw = rng.normal((problem.n_candidates, problem.d))
    d = problem.d
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    x_hat = raw * (np.sqrt(d) / norms)
    return ReconState(x_hat=x_hat, momentum=np.zeros_like(x_hat))


def _loss_of_features(problem, phi_hat):
    gram, cond = _gram_with_jitter(phi_hat)
    rhs = phi_hat @ problem.targets
    alphas = _solve_gram(gram, rhs, cond)
    res = problem.targets - phi_hat.T @ alphas
    return float(np.sum(res * res))


def _redundant_rows(problem, phi_hat, loss):
    """Candidates whose removal leaves the loss essentially unchanged.

    Duplicated and lost candidate rows contribute nothing to spanning the
    targets, so dropping them does not raise the loss; every quantity here
    is available to the attacker (no training data involved).
    """
    n = phi_hat.shape[0]
    redundant = []
    for i in range(n):
        keep = np.arange(n) != i
        try:
            sub_loss = _loss_of_features(problem, phi_hat[keep])
        except ConjugateGradientError:
            continue
        if sub_loss <= loss * 1.05 + 1e-30:
            redundant.append(i)
    return redundant


def _best_sign_flip(problem, z, phi_hat, loss):
    """Most loss-reducing single-row sign flip, or (-1, loss) if none helps.

    Activations without mixed-parity high-order coefficients leave candidate
    signs underdetermined, so the optimizer can park a row near the negative
    of a training row; flipping it back is a zero-cost repair."""
    act = problem.model.activation
    best_i, best_loss = -1, loss
    for i in range(phi_hat.shape[0]):
        flipped = phi_hat.copy()
        flipped[i] = act.fn(-z[i])
        try:
            flip_loss = _loss_of_features(problem, flipped)
        except ConjugateGradientError:
            continue
        if flip_loss < best_loss:
            best_i, best_loss = i, flip_loss
    return best_i, best_loss


def _guided_rows(problem, residual, rng, count):
    """Reseed positions for stalled candidates.

    The residual is the unspanned part of the targets; because the feature
    map has a linear Hermite component, W^T residual is a matched-filter
    guess for a missing training row (up to sign). Those two guesses plus a
    handful of random sphere points are ranked by how much residual their
    features capture, and the best `count` are returned.
    """
    weights = _first_layer(problem.model)
    act = problem.model.activation
    d = problem.d
    candidates = []
    guess = weights.T @ residual
    norm = np.linalg.norm(guess)
    if norm > 0:
        base = guess * (np.sqrt(d) / norm)
        candidates.extend([base, -base])
    while len(candidates) < count + 8:
        row = rng.normal(d)
        candidates.append(row * (np.sqrt(d) / np.linalg.norm(row)))
    scores = [abs(float(act.fn(weights @ c) @ residual)) for c in candidates]
    order = np.argsort(scores)[::-1]
    return [candidates[i] for i in order[:count]]


def reconstruct(problem, config, rng):
    """Minimize the span-mismatch loss until the normalized loss crosses the
    convergence threshold or the iteration budget runs out."""
    state = init_state(problem, rng)
    weights = _first_layer(problem.model)
    act = problem.model.activation
    step = config.step
    start = time.perf_counter()
    best = np.inf
    best_at = 0
    quiet_until = 0
    reseed_rounds = 0
    stalled_decays = 0
    normalized = np.inf
    converged = False
    events = []

    while True:
        z = state.x_hat @ weights.T
        phi_hat = act.fn(z)
        gram, cond = _gram_with_jitter(phi_hat)
        rhs = phi_hat @ problem.targets
        alphas = _solve_gram(gram, rhs, cond)
        residuals = problem.targets - phi_hat.T @ alphas
        loss = max(float(np.sum(residuals * residuals)), 0.0)
        theta_sq = problem.target_sq_norm
        normalized = loss / theta_sq if theta_sq > 0 else 0.0

        it = state.iteration
        if it % config.log_every == 0:
            wall_ms = (time.perf_counter() - start) * 1e3
            state.trace.append(TracePoint(it, normalized, wall_ms))
        if normalized < config.threshold:
            converged = True
            break
        if it >= config.max_iters:
            break

        # convergence control on a plateau. Safe moves first: reseed rows the
        # loss provably does not need, or undo a parked sign flip. Otherwise
        # assume momentum oscillation and decay the step; only when two
        # decays in a row bought nothing sacrifice the least-used row to a
        # residual-guided position (if it was needed it descends right back).
        touched = ()
        if normalized < best * (1.0 - config.plateau_rel_gain):
            best = normalized
            best_at = it
            stalled_decays = 0
        elif it - best_at > config.plateau_patience and it >= quiet_until:
            acted = None
            if reseed_rounds < config.max_reseed_rounds:
                residual_col = residuals[:, int(np.argmax(
                    np.linalg.norm(residuals, axis=0)))]
                rows = _redundant_rows(problem, phi_hat, loss)
                if rows:
                    fresh_rows = _guided_rows(problem, residual_col, rng, len(rows))
                    for i, fresh in zip(rows, fresh_rows):
                        state.x_hat[i] = fresh
                        state.momentum[i] = 0.0
                    acted = ("reseed-redundant", tuple(rows))
                    touched = tuple(rows)
                else:
                    flip_i, flip_loss = _best_sign_flip(problem, z, phi_hat, loss)
                    if flip_i >= 0 and flip_loss < 0.9 * loss:
                        state.x_hat[flip_i] = -state.x_hat[flip_i]
                        state.momentum[flip_i] = 0.0
                        acted = ("sign-flip", flip_i)
                        touched = (flip_i,)
                    elif stalled_decays >= 2:
                        weakest = int(np.argmin(np.max(np.abs(alphas), axis=1)))
                        state.x_hat[weakest] = _guided_rows(
                            problem, residual_col, rng, 1)[0]
                        state.momentum[weakest] = 0.0
                        step = config.step  # fresh row needs mobility again
                        stalled_decays = 0
                        acted = ("reseed-weakest", weakest)
                        touched = (weakest,)
            if acted is not None:
                events.append((it, *acted))
                reseed_rounds += 1
                best = np.inf
                quiet_until = it + config.reseed_cooldown
            else:
                step *= config.step_decay
                stalled_decays += 1
                events.append((it, "step-decay", step))
            best_at = it

        weighted = (residuals @ alphas.T).T
        grad = -2.0 * (act.deriv(z) * weighted) @ weights
        if theta_sq > 0:
            grad /= theta_sq  # descend the normalized loss: step is scale-free
        for i in touched:
            grad[i] = 0.0  # pre-surgery gradient is stale for repaired rows
        state = recon_step(state, grad, replace(config, step=step))

    if not state.trace or state.trace[-1].iteration != state.iteration:
        wall_ms = (time.perf_counter() - start) * 1e3
        state.trace.append(TracePoint(state.iteration, normalized, wall_ms))
    return ReconResult(
        x_hat=state.x_hat,
        trace=state.trace,
        converged=converged,
        iterations=state.iteration,
        normalized_loss=normalized,
        reseed_rounds=reseed_rounds,
        events=events,
    )


def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "normalized_loss", "wall_ms"])
        for point in trace:
            writer.writerow([point.iteration, repr(point.normalized_loss),
                             repr(point.wall_ms)])


def save_checkpoint(path, state):
    modelio.save_recon_state(path, state.x_hat, state.momentum, state.iteration)


def load_checkpoint(path):
    x_hat, momentum, iteration = modelio.load_recon_state(path)
    return ReconState(x_hat=x_hat, momentum=momentum, iteration=iteration)
