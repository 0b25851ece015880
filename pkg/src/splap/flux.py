"""Nonlinear flux algebra of the p-Laplace operator.

The diffusion is driven by the power-law stress

    stress(g)  = (kappa + |g|)^(p-2) g,

its companion ``natural_map(g) = (kappa + |g|)^((p-2)/2) g`` (squared L2
distances of it measure energy errors), the scalar potential with
``potential'(t) = (kappa + t)^(p-2) t``, and the associated Dirichlet-type
energy of a P1 finite element function.

All operations are vectorized: gradient arguments may have any shape
``(..., 2)`` and are evaluated elementwise in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularGradientError(ValueError):
    """Stress derivative requested at a point where it is unbounded."""


@dataclass(frozen=True)
class FluxParams:
    """Exponent p > 1 and shift kappa >= 0 of the power-law flux."""

    p: float
    kappa: float = 0.0

    def __post_init__(self):
        if not self.p > 1.0:
            raise ValueError(f"exponent must satisfy p > 1, got p={self.p}")
        if self.kappa < 0.0:
            raise ValueError(f"shift must be nonnegative, got kappa={self.kappa}")


def _norm(g):
    g = np.asarray(g, dtype=float)
    return np.sqrt(np.sum(g * g, axis=-1))


def stress(params: FluxParams, g) -> np.ndarray:
    """(kappa + |g|)^(p-2) g, with stress(0) = 0 by continuity."""
    g = np.asarray(g, dtype=float)
    r = _norm(g)
    base = params.kappa + r
    # base == 0 only when kappa == 0 and g == 0; the product is 0 there.
    factor = np.where(base > 0.0, base, 1.0) ** (params.p - 2.0)
    factor = np.where(base > 0.0, factor, 0.0 if params.p < 2.0 else 1.0)
    out = factor[..., None] * g
    return out


def natural_map(params: FluxParams, g) -> np.ndarray:
    """(kappa + |g|)^((p-2)/2) g; the half-power companion of the stress."""
    g = np.asarray(g, dtype=float)
    base = params.kappa + _norm(g)
    factor = np.where(base > 0.0, base, 1.0) ** ((params.p - 2.0) / 2.0)
    factor = np.where(base > 0.0, factor, 0.0 if params.p < 2.0 else 1.0)
    return factor[..., None] * g


def potential(params: FluxParams, t) -> np.ndarray:
    """Antiderivative of (kappa+s)^(p-2) s on [0, t], in closed form.

    Equals ((kappa+t)^(p-1) ((p-1) t - kappa) + kappa^p) / (p (p-1)); it is
    nonnegative, convex and vanishes at t = 0.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("potential defined for t >= 0 only")
    p, k = params.p, params.kappa
    val = ((k + t) ** (p - 1.0) * ((p - 1.0) * t - k) + k**p) / (p * (p - 1.0))
    # Guard tiny negative round-off near t = 0.
    return np.maximum(val, 0.0)


def stress_jacobian(params: FluxParams, g) -> np.ndarray:
    """Derivative of the stress, shape (..., 2, 2); symmetric PSD.

    At g = 0 the limit is kappa^(p-2) I for kappa > 0, the zero matrix for
    kappa = 0 with p > 2, and the identity for p = 2.  For kappa = 0 and
    p < 2 the derivative is unbounded at 0 and SingularGradientError is
    raised rather than regularizing.
    """
    g = np.asarray(g, dtype=float)
    p, k = params.p, params.kappa
    r = _norm(g)
    zero = r == 0.0
    if k == 0.0 and p < 2.0 and np.any(zero):
        raise SingularGradientError(
            "stress derivative is unbounded at a zero gradient for kappa=0, p<2"
        )
    base = k + r
    safe_base = np.where(base > 0.0, base, 1.0)
    safe_r = np.where(zero, 1.0, r)
    iso = safe_base ** (p - 2.0)
    rad = (p - 2.0) * safe_base ** (p - 3.0) / safe_r
    eye = np.eye(2)
    out = iso[..., None, None] * eye + rad[..., None, None] * (
        g[..., :, None] * g[..., None, :]
    )
    if np.any(zero):
        if k > 0.0:
            limit = k ** (p - 2.0) * eye
        elif p == 2.0:
            limit = eye
        else:  # kappa = 0, p > 2
            limit = np.zeros((2, 2))
        out = np.where(zero[..., None, None], limit, out)
    return out


def energy(params: FluxParams, v) -> float:
    """Integral of potential(|grad v|) over the mesh of the P1 function v.

    Exact for P1 since the gradient is elementwise constant.
    """
    grads = v.mesh.gradient_of(v.coeffs)
    return float(np.dot(v.mesh.areas, potential(params, _norm(grads))))
