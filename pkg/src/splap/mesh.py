"""Structured triangulations of the unit square with nested uniform refinement.

Level-0 meshes split every lattice cell along the diagonal from its
lower-left to its upper-right corner.  Uniform refinement quarters each
triangle through the edge midpoints; parent vertices keep their indices and
midpoint vertices are appended in the order of the sorted parent edge pairs,
so meshes of successive levels are exactly nested and piecewise linear
functions transfer between them without error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshMismatchError(ValueError):
    """Function and mesh do not belong to the same refinement hierarchy."""


class TriMesh:
    """Conforming triangulation of the unit square.

    Attributes
    ----------
    vertices : (n_v, 2) float array
    triangles : (n_t, 3) int array, counterclockwise vertex triples
    boundary_mask : (n_v,) bool array, True iff a coordinate is 0 or 1
    level : refinement depth (0 for a freshly built lattice mesh)
    h_max : longest element diameter
    parent : the mesh this one was refined from, or None
    midpoint_edges : (n_new, 2) int array of parent edges whose midpoints
        were appended during refinement (empty at level 0)
    """

    def __init__(self, vertices, triangles, level, h_max, parent=None,
                 midpoint_edges=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.level = int(level)
        self.h_max = float(h_max)
        self.parent = parent
        self.midpoint_edges = (
            np.zeros((0, 2), dtype=np.int64) if midpoint_edges is None
            else np.ascontiguousarray(midpoint_edges, dtype=np.int64))
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        self.boundary_mask = (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)
        self.interior = np.flatnonzero(~self.boundary_mask)
        self._geometry = None
        self._cache = {}

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def _geom(self):
        if self._geometry is None:
            pts = self.vertices[self.triangles]          # (n_t, 3, 2)
            d1 = pts[:, 1] - pts[:, 0]
            d2 = pts[:, 2] - pts[:, 0]
            det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
            areas = 0.5 * det
            # Gradient of the local hat function at vertex i is the rotated
            # opposite edge divided by twice the area.
            grads = np.empty((self.n_triangles, 3, 2))
            for i in range(3):
                a = pts[:, (i + 1) % 3]
                b = pts[:, (i + 2) % 3]
                grads[:, i, 0] = (a[:, 1] - b[:, 1]) / det
                grads[:, i, 1] = (b[:, 0] - a[:, 0]) / det
            self._geometry = (areas, grads)
        return self._geometry

    @property
    def areas(self):
        return self._geom()[0]

    @property
    def basis_gradients(self):
        """Per-element gradients of the three hat functions, (n_t, 3, 2)."""
        return self._geom()[1]

    def gradient_of(self, coeffs):
        """Elementwise constant gradient of a P1 coefficient vector.

        Accepts a single vector (n_v,) or a batch (..., n_v); returns
        (n_t, 2) respectively (..., n_t, 2).
        """
        coeffs = np.asarray(coeffs, dtype=float)
        local = coeffs[..., self.triangles]              # (..., n_t, 3)
        return np.einsum("...ti,tix->...tx", local, self.basis_gradients)

    def quadrature_points(self):
        """Edge midpoints of every element, (n_t, 3, 2).

        Point q sits on the edge between local vertices q and (q+1)%3; the
        induced rule with weights area/3 integrates quadratics exactly.
        """
        pts = self.vertices[self.triangles]
        return 0.5 * (pts + np.roll(pts, -1, axis=1))

    def value_at_quadrature(self, coeffs):
        """P1 values at the edge midpoint quadrature points, (n_t, 3)."""
        local = np.asarray(coeffs, dtype=float)[self.triangles]
        return 0.5 * (local + np.roll(local, -1, axis=1))


@dataclass
class FeFunction:
    """P1 function: a mesh and one coefficient per vertex (zero trace)."""

    mesh: TriMesh
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.mesh.n_vertices,):
            raise ValueError("coefficient vector does not match the mesh")

    def copy(self):
        return FeFunction(self.mesh, self.coeffs.copy())


def zero_function(mesh: TriMesh) -> FeFunction:
    return FeFunction(mesh, np.zeros(mesh.n_vertices))


def from_interior(mesh: TriMesh, interior_values) -> FeFunction:
    """Build a zero-trace function from its interior coefficients."""
    coeffs = np.zeros(mesh.n_vertices)
    coeffs[mesh.interior] = interior_values
    return FeFunction(mesh, coeffs)


def unit_square_mesh(n: int) -> TriMesh:
    """Structured n-by-n lattice mesh of the unit square.

    (n+1)^2 vertices ordered lexicographically by (y, x) and 2 n^2 triangles;
    h_max = sqrt(2)/n.
    """
    if n < 1:
        raise ValueError("need at least one cell per direction")
    side = np.linspace(0.0, 1.0, n + 1)
    xs, ys = np.meshgrid(side, side)                     # row-major in y
    vertices = np.column_stack([xs.ravel(), ys.ravel()])
    tris = []
    for iy in range(n):
        for ix in range(n):
            v00 = iy * (n + 1) + ix
            v10 = v00 + 1
            v01 = v00 + (n + 1)
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return TriMesh(vertices, np.array(tris), level=0, h_max=np.sqrt(2.0) / n)


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into 4 congruent children via edge midpoints."""
    tri = mesh.triangles
    pairs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    pairs.sort(axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    mid_index = mesh.n_vertices + np.arange(edges.shape[0])
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])

    n_t = mesh.n_triangles
    m01 = mid_index[inverse[:n_t]]
    m12 = mid_index[inverse[n_t:2 * n_t]]
    m20 = mid_index[inverse[2 * n_t:]]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    children = np.concatenate([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    vertices = np.concatenate([mesh.vertices, midpoints])
    return TriMesh(vertices, children, level=mesh.level + 1,
                   h_max=0.5 * mesh.h_max, parent=mesh, midpoint_edges=edges)


def refinement_chain(coarse: TriMesh, fine: TriMesh):
    """Meshes from coarse to fine (inclusive); error if unrelated."""
    chain = [fine]
    m = fine
    while m is not coarse:
        if m.parent is None:
            raise MeshMismatchError(
                "target mesh is not a refinement descendant of the source mesh")
        m = m.parent
        chain.append(m)
    return chain[::-1]


def prolongate(coarse_fn: FeFunction, fine_mesh: TriMesh) -> FeFunction:
    """Represent a P1 function exactly on a nested finer mesh.

    Midpoint coefficients are averages of the two parent edge endpoints; the
    function itself is unchanged.
    """
    chain = refinement_chain(coarse_fn.mesh, fine_mesh)
    coeffs = coarse_fn.coeffs
    for m in chain[1:]:
        new = 0.5 * (coeffs[m.midpoint_edges[:, 0]] + coeffs[m.midpoint_edges[:, 1]])
        coeffs = np.concatenate([coeffs, new])
    if coeffs is coarse_fn.coeffs:
        coeffs = coeffs.copy()
    return FeFunction(fine_mesh, coeffs)
