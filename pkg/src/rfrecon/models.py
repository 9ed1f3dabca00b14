"""Random-features and two-layer regression models and their trainers.

A random-features model keeps a frozen Gaussian first layer V and fits only
the readout theta by minimum-norm interpolation. The two-layer network trains
both layers with full-batch gradient descent; its initialization of the
second layer is kept around because reconstruction targets the *change*
theta2 - theta2_init rather than the raw trained weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import Activation
from .linalg import as_matrix, min_norm_solve


class TrainingDivergedError(RuntimeError):
    """Gradient descent produced a non-finite loss."""

    def __init__(self, message, step_index):
        super().__init__(message)
        self.step_index = step_index


@dataclass
class RFModel:
    """f(x) = activation(V x)^T theta_star with V frozen at p x d."""

    V: np.ndarray
    activation: Activation
    theta_star: np.ndarray  # p x k

    @property
    def d(self):
        return self.V.shape[1]

    @property
    def p(self):
        return self.V.shape[0]

    @property
    def k(self):
        return self.theta_star.shape[1]

    def __post_init__(self):
        self.V = as_matrix(self.V, "V")
        self.theta_star = np.asarray(self.theta_star, dtype=np.float64)
        if self.theta_star.ndim == 1:
            self.theta_star = self.theta_star.reshape(-1, 1)
        if self.theta_star.shape[0] != self.V.shape[0]:
            raise ValueError(
                f"theta_star has {self.theta_star.shape[0]} rows, V has p={self.V.shape[0]}"
            )

    def predict(self, inputs):
        return feature_map(self, inputs) @ self.theta_star


@dataclass
class TwoLayerModel:
    """f(x) = theta2 @ activation(theta1 @ x), both layers trainable."""

    theta1: np.ndarray       # h x d
    theta2: np.ndarray       # k x h
    theta2_init: np.ndarray  # k x h, frozen copy of the initialization
    activation: Activation

    @property
    def d(self):
        return self.theta1.shape[1]

    @property
    def h(self):
        return self.theta1.shape[0]

    @property
    def k(self):
        return self.theta2.shape[0]

    @property
    def p_last(self):
        """Number of parameters in the last layer (k * h)."""
        return self.theta2.size

    def __post_init__(self):
        self.theta1 = as_matrix(self.theta1, "theta1")
        self.theta2 = as_matrix(self.theta2, "theta2")
        self.theta2_init = as_matrix(self.theta2_init, "theta2_init")
        h = self.theta1.shape[0]
        if self.theta2.shape[1] != h or self.theta2_init.shape != self.theta2.shape:
            raise ValueError(
                f"inconsistent layer shapes: theta1 {self.theta1.shape}, "
                f"theta2 {self.theta2.shape}, theta2_init {self.theta2_init.shape}"
            )
        # the initialization is part of the reconstruction contract; never alias it
        self.theta2_init = self.theta2_init.copy()
        self.theta2_init.setflags(write=False)

    def predict(self, inputs):
        return feature_map(self, inputs) @ self.theta2.T


def _first_layer(model):
    return model.V if isinstance(model, RFModel) else model.theta1


def feature_map(model, inputs):
    """Penultimate features of a batch: rows activation(W x_i) for W = V or theta1."""
    inputs = as_matrix(inputs, "inputs")
    weights = _first_layer(model)
    if inputs.shape[1] != weights.shape[1]:
        raise ValueError(
            f"inputs have dimension {inputs.shape[1]}, model expects d={weights.shape[1]}"
        )
    return model.activation.fn(inputs @ weights.T)


def feature_jvp_transpose(model, x_hat, cotangent):
    """Pull a feature-space cotangent back to input space.

    Returns W^T (activation'(W x_hat) * cotangent), the gradient of
    cotangent^T activation(W x_hat) with respect to x_hat.
    """
    weights = _first_layer(model)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if x_hat.shape != (weights.shape[1],):
        raise ValueError(f"x_hat has shape {x_hat.shape}, expected ({weights.shape[1]},)")
    if cotangent.shape != (weights.shape[0],):
        raise ValueError(
            f"cotangent has shape {cotangent.shape}, expected ({weights.shape[0]},)"
        )
    z = weights @ x_hat
    return weights.T @ (model.activation.deriv(z) * cotangent)


def _check_sphere_rows(X, tol=1e-8):
    d = X.shape[1]
    norms = np.linalg.norm(X, axis=1)
    if np.max(np.abs(norms - np.sqrt(d))) > tol:
        raise ValueError(
            "training rows must lie on the radius-sqrt(d) sphere "
            f"(worst deviation {np.max(np.abs(norms - np.sqrt(d))):.3e})"
        )


def train_rf(V, activation, X, Y, tol=1e-12):
    """Fit the readout of a random-features model by min-norm interpolation."""
    V = as_matrix(V, "V")
    X = as_matrix(X, "X")
    _check_sphere_rows(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    n = X.shape[0]
    if Y.shape[0] != n:
        raise ValueError(f"Y has {Y.shape[0]} rows, X has {n}")
    if V.shape[0] < n:
        raise ValueError(
            f"interpolation needs p >= n features, got p={V.shape[0]}, n={n}"
        )
    model = RFModel(V=V, activation=activation, theta_star=np.zeros((V.shape[0], Y.shape[1])))
    phi = feature_map(model, X)
    model.theta_star = min_norm_solve(phi, Y, tol=tol)
    return model


def two_layer_loss(model, X, Y):
    """Mean squared training loss sum_i ||f(x_i) - y_i||^2 / n."""
    err = model.predict(X) - Y
    return float(np.sum(err * err)) / X.shape[0]


def two_layer_gradients(model, X, Y):
    """Gradients of two_layer_loss with respect to (theta1, theta2)."""
    n = X.shape[0]
    z = X @ model.theta1.T
    hidden = model.activation.fn(z)
    err = hidden @ model.theta2.T - Y          # n x k
    g2 = (2.0 / n) * err.T @ hidden            # k x h
    back = (2.0 / n) * (err @ model.theta2) * model.activation.deriv(z)  # n x h
    g1 = back.T @ X                            # h x d
    return g1, g2


def train_two_layer(model, X, Y, step, steps):
    """Full-batch gradient descent on both layers of a two-layer network."""
    X = as_matrix(X, "X")
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if Y.shape != (X.shape[0], model.k):
        raise ValueError(
            f"targets shape {Y.shape} inconsistent with n={X.shape[0]}, k={model.k}"
        )
    theta1 = model.theta1.copy()
    theta2 = model.theta2.copy()
    current = TwoLayerModel(theta1, theta2, model.theta2_init, model.activation)
    n = X.shape[0]
    # overflow on a diverging run is detected explicitly, not via warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            z = X @ theta1.T
            hidden = current.activation.fn(z)
            err = hidden @ theta2.T - Y
            loss = float(np.sum(err * err)) / n
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"training loss became non-finite at step {t}", step_index=t
                )
            g2 = (2.0 / n) * err.T @ hidden
            back = (2.0 / n) * (err @ theta2) * current.activation.deriv(z)
            g1 = back.T @ X
            theta1 -= step * g1
            theta2 -= step * g2
        final = TwoLayerModel(theta1, theta2, model.theta2_init, model.activation)
        if not np.isfinite(two_layer_loss(final, X, Y)):
            raise TrainingDivergedError(
                f"training loss became non-finite at step {steps}", step_index=steps
            )
    return final
