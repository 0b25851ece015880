"""Sampling of jointly distributed standard and averaged Wiener increments.

Per mode, one table row m holds the standard increment of the driving
Brownian motion over the m-th step and the increment of its running time
averages.  The averaged increments carry a reduced variance (tau/3 on the
first step, 2 tau/3 afterwards) and a one-step correlation tau/6; both kinds
are generated jointly from i.i.d. normals via a bridge-average construction,
so a single fine sample can be coarsened consistently to any coarser grid.

Streams are counter-based (Philox keyed by master seed and sample index)
with a fixed in-stream draw order, so tables are bit-reproducible no matter
how samples are distributed over workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into M steps."""

    T: float
    M: int

    def __post_init__(self):
        if not (self.T > 0.0 and self.M >= 1):
            raise ValueError("need T > 0 and M >= 1")

    @property
    def tau(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M + 1)


@dataclass(frozen=True)
class NoiseModel:
    """Truncated multiplicative noise coefficient.

    kind "linear": one mode, g(x, u) = lam * u.
    kind "trace": two modes, g1 = sin(pi x) y u and g2 = sin(pi y) x u;
    both vanish at u = 0 and on the boundary.
    """

    kind: str
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "trace"):
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @property
    def n_modes(self) -> int:
        return 1 if self.kind == "linear" else 2

    def mode_values(self, j, x, y, u):
        if self.kind == "linear":
            return self.lam * u
        if j == 0:
            return np.sin(np.pi * x) * y * u
        return np.sin(np.pi * y) * x * u


@dataclass
class IncrementTable:
    """Standard and averaged increments, arrays of shape (M+1, J).

    Row 0 is identically zero so that index m matches the m-th step; the
    statistical law of the rows is the bridge-average construction of
    sample_increment_table.
    """

    grid: TimeGrid
    std: np.ndarray = field(repr=False)
    avg: np.ndarray = field(repr=False)

    def __post_init__(self):
        expect = (self.grid.M + 1, self.J)
        if self.std.shape != expect or self.avg.shape != expect:
            raise ValueError("increment arrays must have shape (M+1, J)")

    @property
    def J(self) -> int:
        return self.std.shape[1]


@dataclass(frozen=True)
class CoarsenSpec:
    """Integer step ratio between a fine and a coarse grid."""

    r: int

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("coarsening ratio must be a positive integer")


def stream(master_seed: int, sample_index: int) -> np.random.Generator:
    """Independent, reproducible generator for one Monte Carlo sample."""
    key = np.array([master_seed & 0xFFFFFFFFFFFFFFFF,
                    sample_index & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_increment_table(grid: TimeGrid, J: int,
                           rng: np.random.Generator) -> IncrementTable:
    """Draw one coupled table of standard and averaged increments.

    With i.i.d. standard normals zeta, eta the standard increments are
    sqrt(tau) zeta, the bridge averages sqrt(tau/12) eta, and

        avg[m] = (std[m] + std[m-1]) / 2 + bridge[m] - bridge[m-1]

    with std[0] = bridge[0] = 0.  This reproduces the joint law of the
    standard and time-averaged increments per mode.
    """
    if J < 1:
        raise ValueError("need at least one mode")
    tau = grid.tau
    zeta = rng.standard_normal((grid.M, J))
    eta = rng.standard_normal((grid.M, J))
    std = np.zeros((grid.M + 1, J))
    bridge = np.zeros((grid.M + 1, J))
    std[1:] = np.sqrt(tau) * zeta
    bridge[1:] = np.sqrt(tau / 12.0) * eta
    avg = np.zeros_like(std)
    avg[1:] = 0.5 * (std[1:] + std[:-1]) + bridge[1:] - bridge[:-1]
    return IncrementTable(grid, std, avg)


def _split_grid(fine: TimeGrid, spec: CoarsenSpec) -> TimeGrid:
    if fine.M % spec.r != 0:
        raise ValueError(f"ratio {spec.r} does not divide M = {fine.M}")
    return TimeGrid(fine.T, fine.M // spec.r)


def coarsen_increments(fine: IncrementTable, spec: CoarsenSpec) -> IncrementTable:
    """Exact coarse-grid table derived from a fine one (same randomness).

    Standard increments add up blockwise.  Averaged increments recombine
    with the triangular weights

        coarse_avg[1] = sum_{l=1..r} (1 - (l-1)/r) fine_avg[l]
        coarse_avg[j] = sum_{l=0..r-1} (l+1)/r fine_avg[r j - l]
                      + sum_{l=0..r-2} (1 - (l+1)/r) fine_avg[r (j-1) - l]
    """
    r = spec.r
    grid_c = _split_grid(fine.grid, spec)
    if r == 1:
        return IncrementTable(grid_c, fine.std.copy(), fine.avg.copy())
    mc = grid_c.M
    std = np.zeros((mc + 1, fine.J))
    avg = np.zeros_like(std)
    std[1:] = fine.std[1:].reshape(mc, r, fine.J).sum(axis=1)
    w_first = 1.0 - np.arange(r) / r                     # l = 1..r
    avg[1] = w_first @ fine.avg[1:r + 1]
    w_up = (np.arange(r) + 1.0) / r                      # l = 0..r-1
    w_down = 1.0 - (np.arange(r - 1) + 1.0) / r          # l = 0..r-2
    for j in range(2, mc + 1):
        upper = fine.avg[r * j - (r - 1):r * j + 1][::-1]
        lower = fine.avg[r * (j - 1) - (r - 2):r * (j - 1) + 1][::-1]
        avg[j] = w_up @ upper + w_down @ lower
    return IncrementTable(grid_c, std, avg)


def coarse_oracle(fine: IncrementTable, spec: CoarsenSpec) -> IncrementTable:
    """Independent reconstruction of the coarse table via running means.

    Prefix sums of the fine averaged increments recover the time-averaged
    path values; a coarse average over r fine steps is the arithmetic mean
    of the r fine averages, and coarse increments are their differences.
    Must agree with coarsen_increments to machine precision.
    """
    r = spec.r
    grid_c = _split_grid(fine.grid, spec)
    mc = grid_c.M
    means_f = np.cumsum(fine.avg[1:], axis=0)            # (M_f, J)
    means_c = means_f.reshape(mc, r, fine.J).mean(axis=1)
    std = np.zeros((mc + 1, fine.J))
    avg = np.zeros_like(std)
    std[1:] = fine.std[1:].reshape(mc, r, fine.J).sum(axis=1)
    avg[1] = means_c[0]
    avg[2:] = np.diff(means_c, axis=0)
    return IncrementTable(grid_c, std, avg)


def path_points(table: IncrementTable, j: int = 0) -> np.ndarray:
    """Brownian path values of mode j at the grid times, starting at 0."""
    return np.concatenate([[0.0], np.cumsum(table.std[1:, j])])


def empirical_covariance(tables, j: int = 0):
    """Raw sample covariances of one mode across many tables.

    Returns (avg_cov, cross_cov) where avg_cov[m, l] estimates
    Cov(avg[m+1], avg[l+1]) (unbiased) and cross_cov[m, l] estimates
    Cov(std[m+1], avg[l+1]).  The law assertions live with the callers.
    """
    if len(tables) < 2:
        raise ValueError("need at least two samples")
    x = np.stack([t.avg[1:, j] for t in tables])         # (n, M)
    y = np.stack([t.std[1:, j] for t in tables])
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    avg_cov = (xc.T @ xc) / (n - 1)
    cross_cov = (yc.T @ xc) / (n - 1)
    return avg_cov, cross_cov
