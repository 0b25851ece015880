"""Fully discrete time stepping driven by an increment table.

Three schemes share one implicit step: minimize over the zero-trace P1 space

    Phi(v) = 1/2 (v, v) - (v, v_prev) + tau_eff * energy(v) - (load, v),

whose optimality condition is the variational step equation.  The scheme
kinds differ only in which table column drives the load, at which past state
the noise coefficient is frozen, and whether the first step is damped:

* "em":        step m uses the standard increment and the state m-1;
* "avg_half":  averaged increments, state m-2, first step with tau/2;
* "avg_full":  averaged increments, state m-2, full first step.

Each step is solved by damped Newton with Armijo backtracking on Phi; the
Hessian solves reuse the Jacobi-preconditioned conjugate gradient kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import fem, flux
from .mesh import FeFunction, TriMesh, from_interior
from .noise import IncrementTable, NoiseModel, TimeGrid


class SchemeKind(str, Enum):
    EM = "em"
    AVG_HALF = "avg_half"
    AVG_FULL = "avg_full"


class NewtonError(RuntimeError):
    """Implicit step did not reach its residual tolerance."""


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_iter: int = 50
    armijo: float = 1e-4
    backtrack: float = 0.5

    def __post_init__(self):
        if min(self.abs_tol, self.rel_tol) <= 0.0:
            raise ValueError("tolerances must be positive")


@dataclass
class Trajectory:
    """States of one scheme run, indexed m = 0..M on a single mesh."""

    grid: TimeGrid
    states: list[FeFunction] = field(repr=False)

    def __post_init__(self):
        if len(self.states) != self.grid.M + 1:
            raise ValueError("need one state per grid time")

    @property
    def mesh(self) -> TriMesh:
        return self.states[0].mesh

    def coefficient_matrix(self) -> np.ndarray:
        """All coefficients stacked as an (M+1, n_v) array."""
        return np.stack([s.coeffs for s in self.states])


def implicit_step(params: flux.FluxParams, mesh: TriMesh, mass, tau_eff: float,
                  v_prev: FeFunction, load, cfg: NewtonConfig,
                  info: dict | None = None) -> FeFunction:
    """One implicit step of size tau_eff from v_prev under the given load.

    Returns the minimizer of Phi above; at return the step residual
    || M (v - v_prev) + tau_eff * residual(v) - load || is below
    abs_tol + rel_tol (||M v_prev|| + ||load||).  A singular stress Jacobian
    (kappa = 0, p < 2 with a flat element) falls back to a safeguarded
    gradient step for that iteration.
    """
    if tau_eff < 0.0:
        raise ValueError("tau_eff must be nonnegative")
    vp = v_prev.coeffs[mesh.interior]
    load = np.asarray(load, dtype=float)
    m_vp = mass @ vp
    data_norm = np.linalg.norm(m_vp) + np.linalg.norm(load)
    tol = cfg.abs_tol + cfg.rel_tol * data_norm
    if data_norm <= tol:
        # Extinct step: v = 0 already satisfies the residual contract
        # (||M v_prev + load|| <= tol), and iterating on the degenerate
        # functional would stall for p < 2.
        if info is not None:
            info.update(iterations=0, increment_norms=[], residual=data_norm)
        return from_interior(mesh, np.zeros_like(vp))

    def objective(x):
        val = 0.5 * float(x @ (mass @ x)) - float(x @ m_vp) - float(x @ load)
        if tau_eff > 0.0:
            val += tau_eff * flux.energy(params, from_interior(mesh, x))
        return val

    def gradient(x):
        g = mass @ (x - vp) - load
        if tau_eff > 0.0:
            g = g + tau_eff * fem.p_laplace_residual(params, from_interior(mesh, x))
        return g

    # For kappa = 0, p < 2 the Hessian degenerates near flat gradients and
    # pure Newton directions oscillate or crawl; the weighted-stiffness
    # majorant (classical secant iteration for shear-thinning flow) descends
    # globally there.  Elsewhere the true Hessian gives the quadratic tail.
    degenerate = params.kappa == 0.0 and params.p < 2.0
    step_matrix = fem.p_laplace_secant_matrix if degenerate else fem.p_laplace_jacobian

    x = vp.copy()
    phi = objective(x)
    increments = []
    for iteration in range(cfg.max_iter):
        grad = gradient(x)
        if np.linalg.norm(grad) <= tol:
            if info is not None:
                info.update(iterations=iteration, increment_norms=increments,
                            residual=float(np.linalg.norm(grad)))
            return from_interior(mesh, x)
        try:
            if tau_eff > 0.0:
                hess = mass + tau_eff * step_matrix(params, from_interior(mesh, x))
            else:
                hess = mass
            direction = fem.solve_spd(hess, -grad)
        except flux.SingularGradientError:
            direction = -grad
        slope = float(grad @ direction)
        if slope >= 0.0:
            direction = -grad
            slope = float(grad @ direction)
        alpha = 1.0
        while True:
            trial = x + alpha * direction
            phi_trial = objective(trial)
            # Near the minimum the true decrease sinks below the rounding
            # noise of the objective; the ulp-scale slack keeps full Newton
            # steps acceptable there (approximate-descent test).
            slack = 1e-13 * (abs(phi) + abs(phi_trial))
            if phi_trial <= phi + cfg.armijo * alpha * slope + slack:
                break
            alpha *= cfg.backtrack
            if alpha < 1e-14:
                raise NewtonError("line search found no descent step")
        increments.append(alpha * float(np.linalg.norm(direction)))
        x = trial
        phi = phi_trial
    grad = gradient(x)
    if np.linalg.norm(grad) <= tol:
        if info is not None:
            info.update(iterations=cfg.max_iter, increment_norms=increments,
                        residual=float(np.linalg.norm(grad)))
        return from_interior(mesh, x)
    raise NewtonError(f"no convergence within {cfg.max_iter} Newton iterations")


def run_scheme(kind: SchemeKind, params: flux.FluxParams, mesh: TriMesh,
               u0: FeFunction, model: NoiseModel, table: IncrementTable,
               cfg: NewtonConfig = NewtonConfig()) -> Trajectory:
    """Integrate one scheme over the full table.

    u0 is the projected initial state (state 0 of the trajectory); state m
    depends only on earlier states and table rows up to m.
    """
    kind = SchemeKind(kind)
    if table.J != model.n_modes:
        raise ValueError("table modes do not match the noise model")
    if u0.mesh is not mesh:
        raise ValueError("initial state must live on the scheme mesh")
    tau = table.grid.tau
    mass = fem.assemble_mass(mesh)
    states = [u0]
    for m in range(1, table.grid.M + 1):
        if kind is SchemeKind.EM:
            weights = table.std[m]
            frozen = states[m - 1]
            tau_eff = tau
        else:
            weights = table.avg[m]
            frozen = states[max(m - 2, 0)]
            tau_eff = 0.5 * tau if (m == 1 and kind is SchemeKind.AVG_HALF) else tau
        load = fem.noise_load_vector(mesh, model, frozen, weights)
        states.append(implicit_step(params, mesh, mass, tau_eff,
                                    states[m - 1], load, cfg))
    return Trajectory(table.grid, states)
