"""Distances between coarse and fine trajectories and Monte Carlo averaging.

All metrics are single-sample quantities (the max or sum is taken first,
expectation afterwards by monte_carlo).  The fine trajectory runs on a mesh
that refines the coarse one and on a time grid with an integer step ratio r;
coarse states are prolongated exactly, so no interpolation error enters.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import flux
from .mesh import prolongate
from .schemes import Trajectory
from . import fem


class MetricKind(str, Enum):
    LINF_L2_AVER = "linf_l2_aver"
    LINF_L2_POINT = "linf_l2_point"
    L2V_CLASSIC = "l2v_classic"
    L2V_INNER = "l2v_inner"
    L2V_OUTER = "l2v_outer"
    L2_GRAD = "l2_grad"


class GridMismatchError(ValueError):
    """Fine and coarse trajectories are not compatible for comparison."""


def _aligned(fine: Trajectory, coarse: Trajectory):
    """Step ratio and coarse coefficients prolongated onto the fine mesh."""
    if fine.grid.T != coarse.grid.T or fine.grid.M % coarse.grid.M != 0:
        raise GridMismatchError("fine grid must refine the coarse grid")
    r = fine.grid.M // coarse.grid.M
    if coarse.mesh is fine.mesh:
        cc = coarse.coefficient_matrix()
    else:
        cc = np.stack([prolongate(s, fine.mesh).coeffs for s in coarse.states])
    return r, cc


def trajectory_distance(kind: MetricKind, params: flux.FluxParams,
                        fine: Trajectory, coarse: Trajectory,
                        point_pairing: bool = False) -> float:
    """One sample of the requested distance between two coupled runs.

    The sup-norm metrics compare squared L2 distances of averaged blocks
    (LINF_L2_AVER) or matching grid points (LINF_L2_POINT).  The nonlinear
    metrics accumulate squared L2 distances of the half-power gradient map:
    classic pairs every fine state with its coarse buddy, inner applies the
    map to the block-averaged fine function, outer averages the mapped
    gradients themselves.  L2_GRAD is the plain squared H1-seminorm metric;
    point_pairing selects grid-point instead of block-average pairing there.
    """
    kind = MetricKind(kind)
    mesh = fine.mesh
    r, cc = _aligned(fine, coarse)
    fc = fine.coefficient_matrix()
    mc = coarse.grid.M
    tau_c = coarse.grid.tau

    if kind in (MetricKind.LINF_L2_AVER, MetricKind.LINF_L2_POINT):
        mass = fem.assemble_mass(mesh, restrict=False)
        worst = 0.0
        for m in range(1, mc + 1):
            if kind is MetricKind.LINF_L2_AVER:
                ref = fc[(m - 1) * r + 1:m * r + 1].mean(axis=0)
            else:
                ref = fc[m * r]
            d = ref - cc[m]
            worst = max(worst, float(d @ (mass @ d)))
        return worst

    if kind is MetricKind.L2_GRAD:
        stiff = fem.assemble_stiffness(mesh, restrict=False)
        total = 0.0
        for m in range(1, mc + 1):
            if point_pairing:
                ref = fc[m * r]
            else:
                ref = fc[(m - 1) * r + 1:m * r + 1].mean(axis=0)
            d = ref - cc[m]
            total += tau_c * float(d @ (stiff @ d))
        return total

    areas = mesh.areas
    grads_c = mesh.gradient_of(cc)                       # (Mc+1, n_t, 2)
    vc = flux.natural_map(params, grads_c)
    total = 0.0
    for m in range(1, mc + 1):
        block = fc[(m - 1) * r + 1:m * r + 1]
        if kind is MetricKind.L2V_CLASSIC:
            vf = flux.natural_map(params, mesh.gradient_of(block))
            diff = vf - vc[m]
            total += (tau_c / r) * float(
                np.einsum("t,ktx->", areas, diff * diff))
        elif kind is MetricKind.L2V_INNER:
            vf = flux.natural_map(params, mesh.gradient_of(block.mean(axis=0)))
            diff = vf - vc[m]
            total += tau_c * float(np.dot(areas, np.sum(diff * diff, axis=-1)))
        else:  # L2V_OUTER
            vf = flux.natural_map(params, mesh.gradient_of(block)).mean(axis=0)
            diff = vf - vc[m]
            total += tau_c * float(np.dot(areas, np.sum(diff * diff, axis=-1)))
    return total


def v_oscillation(params: flux.FluxParams, fine: Trajectory, mc: int) -> float:
    """Within-block spread of the mapped gradients of a fine trajectory.

    Equals sum_m (tau_c / r) sum_k || natural_map(grad v_k) - block mean ||^2;
    together with L2V_OUTER it decomposes L2V_CLASSIC exactly.
    """
    if fine.grid.M % mc != 0:
        raise GridMismatchError("block count must divide the fine step count")
    r = fine.grid.M // mc
    tau_c = fine.grid.T / mc
    mesh = fine.mesh
    fc = fine.coefficient_matrix()
    total = 0.0
    for m in range(1, mc + 1):
        vf = flux.natural_map(params, mesh.gradient_of(fc[(m - 1) * r + 1:m * r + 1]))
        diff = vf - vf.mean(axis=0)
        total += (tau_c / r) * float(np.einsum("t,ktx->", mesh.areas, diff * diff))
    return total


# ---------------------------------------------------------------------------
# Monte Carlo aggregation


@dataclass
class ErrorReport:
    """Per-cell Monte Carlo estimates of several metrics."""

    scheme: str
    p: float
    kappa: float
    tau_c: float
    h_c: float
    tau_f: float
    h_f: float
    seed: int
    n_samples: int
    means: dict = field(default_factory=dict)
    stderrs: dict = field(default_factory=dict)


class SampleFailure(RuntimeError):
    """Monte Carlo sample evaluation failed; message carries the index."""


def default_workers() -> int:
    """Worker count from SPLAP_WORKERS, else the available parallelism."""
    env = os.environ.get("SPLAP_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _guarded(per_sample, index):
    try:
        return np.asarray(per_sample(index), dtype=float)
    except Exception as exc:                             # noqa: BLE001
        raise SampleFailure(f"sample {index} failed: {exc!r}") from exc


def monte_carlo(per_sample, n: int, workers: int | None = None):
    """Mean and standard error of a per-sample vector over samples 0..n-1.

    per_sample maps a sample index to a float vector; it must derive all of
    its randomness from that index so results do not depend on the worker
    count.  Values are accumulated in index order; with n = 1 the standard
    error is reported as 0.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if workers is None:
        workers = default_workers()
    if workers <= 1 or n == 1:
        rows = [_guarded(per_sample, i) for i in range(n)]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, n)) as pool:
            rows = list(pool.map(_guarded, [per_sample] * n, range(n)))
    values = np.stack(rows)
    mean = values.mean(axis=0)
    if n == 1:
        stderr = np.zeros_like(mean)
    else:
        stderr = values.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, stderr
