"""Closed-form reference solutions for the linear heat case (p = 2).

With one multiplicative noise mode lam * u and an eigenfunction as initial
state, the solution of the space-discrete problem stays a scalar multiple of
that eigenfunction; the multiplier is the geometric-Brownian factor

    exp(-(lam^2/2 + mu) t + lam * beta(t)),

with the discrete pencil eigenvalue mu_h in place of mu = 2 pi^2 when the
semidiscrete process is wanted (that choice removes all space error from
scheme comparisons).  Point references evaluate the factor at the grid
times; averaged references replace each step value by a right-endpoint
Riemann mean over r_ref sub-steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import FeFunction
from .noise import IncrementTable, TimeGrid, path_points
from .schemes import Trajectory


class ResolutionMismatchError(ValueError):
    """Increment table does not resolve the requested reference grid."""


@dataclass(frozen=True)
class ExactParams:
    """Data of the explicit solution: noise intensity, eigenpair, resolution."""

    lam: float
    mu: float
    mu_h: float
    u_h0: FeFunction
    r_ref: int = 10

    def __post_init__(self):
        if not (self.mu_h > self.mu > 0.0):
            raise ValueError("expected mu_h > mu > 0")
        if self.r_ref < 1:
            raise ValueError("Riemann resolution must be positive")


def scale_factor(params: ExactParams, t, beta_t, discrete: bool = True):
    """Exponential solution factor at time t for path value beta_t."""
    mu = params.mu_h if discrete else params.mu
    t = np.asarray(t, dtype=float)
    return np.exp(-(0.5 * params.lam**2 + mu) * t + params.lam * np.asarray(beta_t))


def build_references(params: ExactParams, fine_table: IncrementTable,
                     scheme_grid: TimeGrid):
    """Point and Riemann-averaged reference trajectories on the scheme grid.

    The fine table must resolve every Riemann node, i.e. carry exactly
    scheme_grid.M * r_ref steps over the same horizon.  Returns the pair
    (point_reference, averaged_reference); with r_ref = 1 they coincide.
    """
    r = params.r_ref
    if fine_table.grid.M != scheme_grid.M * r or fine_table.grid.T != scheme_grid.T:
        raise ResolutionMismatchError(
            f"table with M={fine_table.grid.M} cannot resolve "
            f"{scheme_grid.M} steps at r_ref={r}")
    beta = path_points(fine_table, 0)
    factors = scale_factor(params, fine_table.grid.times, beta, discrete=True)
    mesh, base = params.u_h0.mesh, params.u_h0.coeffs

    def state(c):
        return FeFunction(mesh, c * base)

    point = [state(factors[m * r]) for m in range(scheme_grid.M + 1)]
    aver = [state(1.0)]
    for m in range(1, scheme_grid.M + 1):
        aver.append(state(np.mean(factors[(m - 1) * r + 1:m * r + 1])))
    return Trajectory(scheme_grid, point), Trajectory(scheme_grid, aver)
