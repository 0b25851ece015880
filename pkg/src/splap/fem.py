"""P1 finite element kernels on triangulated unit squares.

Mass/stiffness assembly uses the exact element formulas; data integrals use
the 3-point edge-midpoint rule (exact for quadratics).  Boundary conditions
are imposed by eliminating boundary vertices, so system matrices act on
interior degrees of freedom only and stay symmetric positive definite.
The only linear solver is conjugate gradients with Jacobi preconditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import flux
from .mesh import FeFunction, MeshMismatchError, TriMesh, from_interior


class LinearSolverError(RuntimeError):
    """Iterative solver failed to reach its tolerance."""


class EigenSolverError(RuntimeError):
    """Inverse power iteration failed to converge."""


# ---------------------------------------------------------------------------
# assembly


def _assemble(mesh: TriMesh, local, restrict):
    """Scatter per-element 3x3 blocks (n_t, 3, 3) into a CSR matrix."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    data = local.ravel()
    n = mesh.n_vertices
    mat = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    if restrict:
        mat = mat[mesh.interior][:, mesh.interior].tocsr()
    return mat


def assemble_mass(mesh: TriMesh, restrict: bool = True) -> sp.csr_matrix:
    """Consistent P1 mass matrix (diag area/6, off-diag area/12 per element)."""
    key = ("mass", restrict)
    if key not in mesh._cache:
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        blocks = mesh.areas[:, None, None] * local
        mesh._cache[key] = _assemble(mesh, blocks, restrict)
    return mesh._cache[key]


def assemble_stiffness(mesh: TriMesh, restrict: bool = True) -> sp.csr_matrix:
    """P1 stiffness matrix of the Laplacian; unrestricted row sums vanish."""
    key = ("stiffness", restrict)
    if key not in mesh._cache:
        g = mesh.basis_gradients
        blocks = mesh.areas[:, None, None] * np.einsum("tix,tjx->tij", g, g)
        mesh._cache[key] = _assemble(mesh, blocks, restrict)
    return mesh._cache[key]


def _edge_midpoint_rhs(mesh: TriMesh, qvals):
    """Vertex load vector of integrand values at the edge midpoints.

    qvals has shape (n_t, 3); entry q lives on the edge between local
    vertices q and (q+1)%3, so vertex i collects (area/6)(q_i + q_{i-1}).
    """
    w = mesh.areas[:, None] / 6.0
    contrib = w * (qvals + np.roll(qvals, 1, axis=1))
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles.ravel(), contrib.ravel())
    return out


def l2_project(mesh: TriMesh, f) -> FeFunction:
    """Orthogonal projection of f(x, y) onto the zero-trace P1 space.

    The data integral is approximated by the edge-midpoint rule; the mass
    system is solved on the interior vertices.
    """
    pts = mesh.quadrature_points()
    rhs = _edge_midpoint_rhs(mesh, np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float))
    coeffs = solve_spd(assemble_mass(mesh), rhs[mesh.interior])
    return from_interior(mesh, coeffs)


def interpolate(mesh: TriMesh, f) -> FeFunction:
    """Nodal interpolant of f(x, y) with the trace forced to zero."""
    vals = np.asarray(f(mesh.vertices[:, 0], mesh.vertices[:, 1]), dtype=float)
    vals = np.where(mesh.boundary_mask, 0.0, vals)
    return FeFunction(mesh, vals)


def noise_load_vector(mesh: TriMesh, model, v: FeFunction, weights) -> np.ndarray:
    """Interior load vector of sum_j weights[j] * g_j(x, v(x)).

    The coefficient functions g_j come from the noise model; v is evaluated
    linearly at the quadrature points.
    """
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    if weights.shape[0] != model.n_modes:
        raise ValueError("one weight per noise mode required")
    pts = mesh.quadrature_points()
    x, y = pts[..., 0], pts[..., 1]
    u = mesh.value_at_quadrature(v.coeffs)
    total = np.zeros_like(u)
    for j, w in enumerate(weights):
        if w != 0.0:
            total += w * model.mode_values(j, x, y, u)
    return _edge_midpoint_rhs(mesh, total)[mesh.interior]


# ---------------------------------------------------------------------------
# nonlinear residual and Jacobian


def p_laplace_residual(params: flux.FluxParams, v: FeFunction) -> np.ndarray:
    """Interior vector of (stress(grad v), grad hat_i); exact for P1.

    This is the gradient of flux.energy with respect to the interior
    coefficients.
    """
    mesh = v.mesh
    s = flux.stress(params, mesh.gradient_of(v.coeffs))
    contrib = mesh.areas[:, None] * np.einsum(
        "tx,tix->ti", s, mesh.basis_gradients)
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles.ravel(), contrib.ravel())
    return out[mesh.interior]


def _coupled_elements(mesh: TriMesh) -> np.ndarray:
    """Elements owning at least one interior vertex.

    Fully pinned elements (all vertices on the boundary, e.g. refined corner
    triangles) have a gradient that no unknown can change; they drop out of
    the interior system entirely.
    """
    key = "coupled_elements"
    if key not in mesh._cache:
        mesh._cache[key] = np.flatnonzero(
            (~mesh.boundary_mask[mesh.triangles]).any(axis=1))
    return mesh._cache[key]


def p_laplace_jacobian(params: flux.FluxParams, v: FeFunction) -> sp.csr_matrix:
    """Interior matrix of (Dstress(grad v) grad hat_j, grad hat_i).

    The stress derivative is only evaluated (and only needs to exist) on
    elements coupled to the interior unknowns; a singular stress derivative
    on a coupled element still raises.
    """
    mesh = v.mesh
    active = _coupled_elements(mesh)
    d = flux.stress_jacobian(params, mesh.gradient_of(v.coeffs)[active])
    g = mesh.basis_gradients
    blocks = np.zeros((mesh.n_triangles, 3, 3))
    blocks[active] = mesh.areas[active, None, None] * np.einsum(
        "tix,txy,tjy->tij", g[active], d, g[active])
    return _assemble(mesh, blocks, restrict=True)


def p_laplace_secant_matrix(params: flux.FluxParams, v: FeFunction) -> sp.csr_matrix:
    """Weighted stiffness matrix with weights (kappa + |grad v|)^(p-2).

    Applied to the coefficients of v it reproduces p_laplace_residual
    exactly, and for p <= 2 it dominates the true Hessian, so steps with it
    descend robustly where the Hessian degenerates (the classical secant
    iteration for shear-thinning diffusion).
    """
    mesh = v.mesh
    active = _coupled_elements(mesh)
    r = np.linalg.norm(mesh.gradient_of(v.coeffs)[active], axis=-1)
    if params.kappa == 0.0 and params.p < 2.0 and np.any(r == 0.0):
        raise flux.SingularGradientError(
            "secant weight is unbounded at a zero gradient for kappa=0, p<2")
    base = params.kappa + r
    w = np.where(base > 0.0, base, 1.0) ** (params.p - 2.0)
    w = np.where(base > 0.0, w, 0.0 if params.p > 2.0 else 1.0)
    g = mesh.basis_gradients
    blocks = np.zeros((mesh.n_triangles, 3, 3))
    blocks[active] = (w * mesh.areas[active])[:, None, None] * np.einsum(
        "tix,tjx->tij", g[active], g[active])
    return _assemble(mesh, blocks, restrict=True)


# ---------------------------------------------------------------------------
# norms and distances


@dataclass(frozen=True)
class NormPair:
    l2_sq: float
    h1_semi_sq: float


def norms(a: FeFunction, b: FeFunction) -> NormPair:
    """Squared L2 and H1-seminorm distances of two functions on one mesh."""
    if a.mesh is not b.mesh:
        raise MeshMismatchError("norms need both functions on the same mesh")
    d = a.coeffs - b.coeffs
    m = assemble_mass(a.mesh, restrict=False)
    s = assemble_stiffness(a.mesh, restrict=False)
    return NormPair(float(d @ (m @ d)), float(d @ (s @ d)))


def natural_distance_sq(params: flux.FluxParams, a: FeFunction, b: FeFunction) -> float:
    """Exact squared L2 distance of natural_map(grad a) and natural_map(grad b)."""
    if a.mesh is not b.mesh:
        raise MeshMismatchError("distance needs both functions on the same mesh")
    va = flux.natural_map(params, a.mesh.gradient_of(a.coeffs))
    vb = flux.natural_map(params, b.mesh.gradient_of(b.coeffs))
    diff = va - vb
    return float(np.dot(a.mesh.areas, np.sum(diff * diff, axis=-1)))


# ---------------------------------------------------------------------------
# linear algebra


def solve_spd(a: sp.csr_matrix, b, rel_tol: float = 1e-12,
              abs_tol: float = 1e-14, max_iter: int | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients for an SPD matrix."""
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros(n)
    tol = max(rel_tol * norm_b, abs_tol)
    if max_iter is None:
        max_iter = 10 * n
    inv_diag = 1.0 / a.diagonal()
    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(max_iter):
        ap = a @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= tol:
            return x
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise LinearSolverError(
        f"conjugate gradients stalled after {max_iter} iterations "
        f"(residual {np.linalg.norm(r):.3e}, tolerance {tol:.3e})")


def min_eigenpair(mesh: TriMesh, tol: float = 1e-10, max_iter: int = 500):
    """Smallest eigenpair of the stiffness/mass pencil on the interior.

    Inverse power iteration seeded with the interpolated first Laplace
    eigenfunction sin(pi x) sin(pi y); the eigenvector is normalized against
    the mass matrix and its sign fixed positive near the midpoint of the
    square.  Returns (eigenvalue, FeFunction).
    """
    s = assemble_stiffness(mesh)
    m = assemble_mass(mesh)
    seed = interpolate(mesh, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    x = seed.coeffs[mesh.interior]
    x /= np.sqrt(float(x @ (m @ x)))
    mu = float(x @ (s @ x))
    for _ in range(max_iter):
        y = solve_spd(s, m @ x)
        y /= np.sqrt(float(y @ (m @ y)))
        mu_new = float(y @ (s @ y))
        x, drift, mu = y, abs(mu_new - mu), mu_new
        mx = m @ x
        residual = np.linalg.norm(s @ x - mu * mx) / np.linalg.norm(mx)
        if drift <= tol * abs(mu) and residual <= 1e-8:
            break
    else:
        raise EigenSolverError(f"no eigenpair convergence in {max_iter} iterations")
    center = mesh.vertices[mesh.interior] - 0.5
    nearest = np.argmin(np.einsum("ij,ij->i", center, center))
    if x[nearest] < 0.0:
        x = -x
    return mu, from_interior(mesh, x)
