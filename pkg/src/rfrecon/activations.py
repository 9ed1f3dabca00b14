"""Pointwise activations and their expansion in the Gaussian Hermite basis.

The Hermite coefficients mu_l of an activation (probabilists' polynomials,
normalized so E[h_l(z) h_m(z)] = delta_lm under z ~ N(0,1)) decide whether
training inputs are identifiable up to sign: an activation needs non-zero
coefficients of order >= 3 of *both* parities for the sign to be pinned down.
ReLU (all odd coefficients beyond mu_1 vanish) and tanh (odd function) both
leave the sign free; relu+tanh does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class QuadratureError(RuntimeError):
    """Hermite-coefficient quadrature failed its convergence check."""


@dataclass(frozen=True)
class Activation:
    """A scalar nonlinearity with its pointwise derivative."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_deriv(z):
    # subgradient choice at the kink: derivative 0 at z == 0
    return (z > 0.0).astype(np.float64)


def _tanh_deriv(z):
    t = np.tanh(z)
    return 1.0 - t * t


RELU = Activation("relu", _relu, _relu_deriv)
TANH = Activation("tanh", np.tanh, _tanh_deriv)
RELU_PLUS_TANH = Activation(
    "relu+tanh",
    lambda z: np.maximum(z, 0.0) + np.tanh(z),
    lambda z: (z > 0.0).astype(np.float64) + _tanh_deriv(z),
)
IDENTITY = Activation("identity", lambda z: np.asarray(z, dtype=np.float64),
                      lambda z: np.ones_like(z, dtype=np.float64))

_REGISTRY = {a.name: a for a in (RELU, TANH, RELU_PLUS_TANH, IDENTITY)}

# stable ids used by the binary model container
ACTIVATION_IDS = {"identity": 0, "relu": 1, "tanh": 2, "relu+tanh": 3}
ACTIVATION_FROM_ID = {v: k for k, v in ACTIVATION_IDS.items()}


def get_activation(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise ValueError(f"unknown activation {name!r} (known: {known})") from None


@dataclass(frozen=True)
class HermiteProfile:
    """Hermite coefficients mu_0..mu_L of an activation under N(0,1)."""

    coefficients: np.ndarray
    mixed_parity_order_ge_3: bool
    sum_sq_order_ge_3: float

    @property
    def max_order(self):
        return len(self.coefficients) - 1


def _normalized_hermite_rows(x, max_order):
    """h_l(x) for l = 0..max_order, stacked as rows.

    Uses the normalized three-term recurrence
    h_{l+1} = (x h_l - sqrt(l) h_{l-1}) / sqrt(l+1), which stays O(1) on the
    quadrature range instead of overflowing like the raw polynomials.
    """
    rows = np.empty((max_order + 1, x.shape[0]))
    rows[0] = 1.0
    if max_order >= 1:
        rows[1] = x
    for l in range(1, max_order):
        rows[l + 1] = (x * rows[l] - math.sqrt(l) * rows[l - 1]) / math.sqrt(l + 1)
    return rows


def _gauss_expectations(fn, max_order, points, cutoff=40.0):
    """E[fn(z) h_l(z)] for z ~ N(0,1), plus E[fn(z)^2], by fixed-node quadrature.

    The integral over the real line is folded onto [0, cutoff] so that
    activations with a kink at the origin (relu and friends) are smooth on
    the integration domain; Gauss-Legendre nodes then converge at machine
    precision instead of stalling on the kink.
    """
    t, w = np.polynomial.legendre.leggauss(points)
    x = 0.5 * cutoff * (t + 1.0)
    weights = 0.5 * cutoff * w * np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    f_pos = np.asarray(fn(x), dtype=np.float64)
    f_neg = np.asarray(fn(-x), dtype=np.float64)
    h = _normalized_hermite_rows(x, max_order)
    parity = np.array([(-1.0) ** l for l in range(max_order + 1)])
    # h_l(-x) = (-1)^l h_l(x): fold both half-lines into one weighted sum
    mus = h @ (weights * f_pos) + parity * (h @ (weights * f_neg))
    second_moment = float(weights @ (f_pos * f_pos + f_neg * f_neg))
    return mus, second_moment


def hermite_coefficients(act, max_order=8, quad_points=200):
    """Expand an activation in the normalized probabilists' Hermite basis.

    Coefficients are computed twice, at quad_points and 2*quad_points nodes;
    if any coefficient moves by more than 1e-8 the quadrature has not
    converged for this activation and a QuadratureError is raised.
    """
    if max_order < 1:
        raise ValueError("max_order must be at least 1")
    if quad_points < 2 * max_order + 2:
        raise ValueError(
            f"quad_points={quad_points} too small for max_order={max_order} "
            f"(need at least {2 * max_order + 2})"
        )
    coarse, _ = _gauss_expectations(act.fn, max_order, quad_points)
    fine, second_moment = _gauss_expectations(act.fn, max_order, 2 * quad_points)
    drift = np.max(np.abs(coarse - fine))
    if drift > 1e-8:
        raise QuadratureError(
            f"Hermite quadrature for {act.name!r} not converged: doubling the "
            f"nodes moved a coefficient by {drift:.3e}"
        )
    total = float(np.sum(fine * fine))
    if total > second_moment + 1e-6:
        raise QuadratureError(
            f"Hermite coefficients of {act.name!r} violate the Parseval bound"
        )
    odd_high = any(abs(fine[l]) > 1e-8 for l in range(3, max_order + 1, 2))
    even_high = any(abs(fine[l]) > 1e-8 for l in range(4, max_order + 1, 2))
    return HermiteProfile(
        coefficients=fine,
        mixed_parity_order_ge_3=bool(odd_high and even_high),
        sum_sq_order_ge_3=float(np.sum(fine[3:] * fine[3:])),
    )


@dataclass
class AssumptionReport:
    """Which identifiability conditions an activation profile satisfies."""

    mu1_nonzero: bool
    mu0_zero: bool
    mu2_zero: bool
    mixed_parity: bool
    sign_ambiguity: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mu1_nonzero": self.mu1_nonzero,
            "mu0_zero": self.mu0_zero,
            "mu2_zero": self.mu2_zero,
            "mixed_parity": self.mixed_parity,
            "sign_ambiguity": self.sign_ambiguity,
            "notes": list(self.notes),
        }


def assumption_check(profile, tol=1e-8):
    """Report identifiability flags for a Hermite profile.

    The key warning is sign ambiguity: without non-zero coefficients of both
    parities at order >= 3, candidate rows can converge to negated copies of
    the training rows, so distances should be scored modulo sign flips.
    """
    mu = profile.coefficients
    report = AssumptionReport(
        mu1_nonzero=bool(abs(mu[1]) > tol),
        mu0_zero=bool(abs(mu[0]) <= tol),
        mu2_zero=bool(len(mu) <= 2 or abs(mu[2]) <= tol),
        mixed_parity=bool(profile.mixed_parity_order_ge_3),
        sign_ambiguity=not profile.mixed_parity_order_ge_3,
    )
    if not report.mu1_nonzero:
        report.notes.append(
            "mu_1 is zero: features carry no linear component and candidate "
            "rows decouple from input directions"
        )
    if report.sign_ambiguity:
        report.notes.append(
            "sign ambiguity: no pair of order->=3 Hermite coefficients with "
            "different parity, so negated training rows produce the same "
            "feature span; evaluate distances with sign flips allowed"
        )
    return report
