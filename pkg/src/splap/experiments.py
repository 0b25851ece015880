"""Experiment drivers and CSV emission.

Every experiment draws one increment table per sample at the finest
resolution it needs and derives all coarser tables from it, so each scheme
and each (tau, h) cell of one sample sees the same underlying randomness.
Sample work is distributed over a process pool; results are accumulated in
sample order, making output bytes independent of the worker count.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass
from functools import lru_cache, partial

import numpy as np

from . import fem, selfcheck
from .config import ConfigError, ExperimentConfig
from .errors import MetricKind, monte_carlo, trajectory_distance
from .exact import ExactParams, build_references
from .flux import FluxParams
from .mesh import refine_uniform, unit_square_mesh
from .noise import (CoarsenSpec, NoiseModel, TimeGrid, coarsen_increments,
                    sample_increment_table, stream)
from .schemes import NewtonConfig, SchemeKind, run_scheme

CSV_FIELDS = ("experiment", "scheme", "metric", "p", "kappa", "tau_c", "h_c",
              "tau_f", "h_f", "n_samples", "mean", "stderr", "seed")

SCHEME_ORDER = (SchemeKind.EM, SchemeKind.AVG_HALF, SchemeKind.AVG_FULL)
EXPLICIT_METRICS = ("linf_l2_vs_point", "linf_l2_vs_aver",
                    "grad_l2_vs_point", "grad_l2_vs_aver")
CONVERGE_METRICS = (MetricKind.LINF_L2_AVER, MetricKind.LINF_L2_POINT,
                    MetricKind.L2V_CLASSIC, MetricKind.L2V_INNER,
                    MetricKind.L2V_OUTER)


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class CsvRow:
    experiment: str
    scheme: str
    metric: str
    p: float
    kappa: float
    tau_c: float
    h_c: float
    tau_f: float
    h_f: float
    n_samples: int
    mean: float
    stderr: float
    seed: int


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12e}"
    return str(value)


def rows_to_csv(rows) -> str:
    lines = [",".join(CSV_FIELDS)]
    for row in rows:
        lines.append(",".join(_fmt(getattr(row, f)) for f in CSV_FIELDS))
    return "\n".join(lines) + "\n"


def write_atomic(text: str, path: str) -> None:
    """Write via a temp file and rename so partial output never appears."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@lru_cache(maxsize=None)
def _hierarchy(n0: int, levels: int):
    meshes = [unit_square_mesh(n0)]
    for _ in range(levels):
        meshes.append(refine_uniform(meshes[-1]))
    return tuple(meshes)


def _sin_product(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


@lru_cache(maxsize=None)
def _initial_states(n0: int, levels: int):
    return tuple(fem.l2_project(m, _sin_product) for m in _hierarchy(n0, levels))


@lru_cache(maxsize=None)
def _eigen(n0: int):
    return fem.min_eigenpair(_hierarchy(n0, 0)[0])


def _newton(cfg: ExperimentConfig) -> NewtonConfig:
    return NewtonConfig(abs_tol=cfg.newton_abs_tol, rel_tol=cfg.newton_rel_tol,
                        max_iter=cfg.newton_max_iter)


def converge_cells(cfg: ExperimentConfig):
    """(M_c, level) pairs under the configured tau-h coupling.

    Ascending M_c entries map to mesh levels by index (capped at the finest
    level); under tau~h2 two step halvings share one refinement.
    """
    step = 1 if cfg.coupling == "tau~h" else 0.5
    return [(mc, min(int(i * step), cfg.levels))
            for i, mc in enumerate(cfg.m_coarse)]


# ---------------------------------------------------------------------------
# explicit-solution experiment (linear case oracle)


def _explicit_sample(cfg: ExperimentConfig, index: int) -> np.ndarray:
    mesh = _hierarchy(cfg.mesh_n0, 0)[0]
    mu_h, u_h0 = _eigen(cfg.mesh_n0)
    params = FluxParams(cfg.p, cfg.kappa)
    model = NoiseModel(cfg.noise_kind, cfg.noise_lam)
    exact = ExactParams(lam=cfg.noise_lam, mu=2.0 * np.pi**2, mu_h=mu_h,
                        u_h0=u_h0, r_ref=cfg.r_ref)
    ncfg = _newton(cfg)
    m_top = max(cfg.m_list) * cfg.r_ref
    finest = sample_increment_table(TimeGrid(cfg.T, m_top), model.n_modes,
                                    stream(cfg.master_seed, index))
    values = []
    for m_steps in cfg.m_list:
        grid = TimeGrid(cfg.T, m_steps)
        scheme_table = coarsen_increments(finest, CoarsenSpec(m_top // m_steps))
        ref_table = coarsen_increments(
            finest, CoarsenSpec(m_top // (m_steps * cfg.r_ref)))
        point, aver = build_references(exact, ref_table, grid)
        for kind in SCHEME_ORDER:
            traj = run_scheme(kind, params, mesh, u_h0, model, scheme_table, ncfg)
            values.extend([
                trajectory_distance(MetricKind.LINF_L2_POINT, params, point, traj),
                trajectory_distance(MetricKind.LINF_L2_AVER, params, aver, traj),
                trajectory_distance(MetricKind.L2_GRAD, params, point, traj,
                                    point_pairing=True),
                trajectory_distance(MetricKind.L2_GRAD, params, aver, traj),
            ])
    return np.array(values)


def run_explicit(cfg: ExperimentConfig, workers=None):
    mesh = _hierarchy(cfg.mesh_n0, 0)[0]
    mean, stderr = monte_carlo(partial(_explicit_sample, cfg), cfg.n_samples,
                               workers)
    rows = []
    pos = 0
    for m_steps in cfg.m_list:
        for kind in SCHEME_ORDER:
            for metric in EXPLICIT_METRICS:
                rows.append(CsvRow(
                    experiment=cfg.experiment, scheme=kind.value, metric=metric,
                    p=cfg.p, kappa=cfg.kappa, tau_c=cfg.T / m_steps,
                    h_c=mesh.h_max, tau_f=cfg.T / (m_steps * cfg.r_ref),
                    h_f=mesh.h_max, n_samples=cfg.n_samples,
                    mean=float(mean[pos]), stderr=float(stderr[pos]),
                    seed=cfg.master_seed))
                pos += 1
    return rows


# ---------------------------------------------------------------------------
# coarse-versus-fine convergence experiment


def _converge_sample(cfg: ExperimentConfig, index: int) -> np.ndarray:
    meshes = _hierarchy(cfg.mesh_n0, cfg.levels)
    states = _initial_states(cfg.mesh_n0, cfg.levels)
    params = FluxParams(cfg.p, cfg.kappa)
    model = NoiseModel(cfg.noise_kind, cfg.noise_lam)
    ncfg = _newton(cfg)
    cells = converge_cells(cfg)
    fine_table = sample_increment_table(TimeGrid(cfg.T, cfg.m_fine),
                                        model.n_modes,
                                        stream(cfg.master_seed, index))
    coarse_tables = {mc: coarsen_increments(fine_table, CoarsenSpec(cfg.m_fine // mc))
                     for mc in dict.fromkeys(mc for mc, _ in cells)}
    values = []
    for kind in SCHEME_ORDER:
        fine = run_scheme(kind, params, meshes[-1], states[-1], model,
                          fine_table, ncfg)
        for mc, level in cells:
            coarse = run_scheme(kind, params, meshes[level], states[level],
                                model, coarse_tables[mc], ncfg)
            for metric in CONVERGE_METRICS:
                values.append(trajectory_distance(metric, params, fine, coarse))
    return np.array(values)


def run_converge(cfg: ExperimentConfig, workers=None):
    meshes = _hierarchy(cfg.mesh_n0, cfg.levels)
    mean, stderr = monte_carlo(partial(_converge_sample, cfg), cfg.n_samples,
                               workers)
    rows = []
    pos = 0
    for kind in SCHEME_ORDER:
        for mc, level in converge_cells(cfg):
            for metric in CONVERGE_METRICS:
                rows.append(CsvRow(
                    experiment=cfg.experiment, scheme=kind.value,
                    metric=metric.value, p=cfg.p, kappa=cfg.kappa,
                    tau_c=cfg.T / mc, h_c=meshes[level].h_max,
                    tau_f=cfg.T / cfg.m_fine, h_f=meshes[-1].h_max,
                    n_samples=cfg.n_samples, mean=float(mean[pos]),
                    stderr=float(stderr[pos]), seed=cfg.master_seed))
                pos += 1
    return rows


# ---------------------------------------------------------------------------
# law verification and raw table emission


def averaged_increment_covariance(grid: TimeGrid) -> np.ndarray:
    """Target covariance of the averaged increments on the given grid."""
    tau = grid.tau
    cov = np.zeros((grid.M, grid.M))
    np.fill_diagonal(cov, 2.0 * tau / 3.0)
    cov[0, 0] = tau / 3.0
    idx = np.arange(grid.M - 1)
    cov[idx, idx + 1] = tau / 6.0
    cov[idx + 1, idx] = tau / 6.0
    return cov


def _collect_avg_rows(cfg: ExperimentConfig, model: NoiseModel, j: int = 0):
    grid = TimeGrid(cfg.T, cfg.m_fine)
    rows = np.empty((cfg.n_samples, grid.M))
    for i in range(cfg.n_samples):
        table = sample_increment_table(grid, model.n_modes,
                                       stream(cfg.master_seed, i))
        rows[i] = table.avg[1:, j]
    return grid, rows


def run_verify_law(cfg: ExperimentConfig, workers=None):
    model = NoiseModel(cfg.noise_kind, cfg.noise_lam)
    grid, rows = _collect_avg_rows(cfg, model)
    n = rows.shape[0]
    centered = rows - rows.mean(axis=0)
    emp = (centered.T @ centered) / (n - 1)
    products = centered[:, :, None] * centered[:, None, :]
    se = products.std(axis=0, ddof=1) / math.sqrt(n)
    theory = averaged_increment_covariance(grid)
    dev = np.abs(emp - theory) / se
    out = []

    def row(metric, mean, stderr=0.0):
        out.append(CsvRow(experiment=cfg.experiment, scheme="-", metric=metric,
                          p=cfg.p, kappa=cfg.kappa, tau_c=grid.tau, h_c=0.0,
                          tau_f=grid.tau, h_f=0.0, n_samples=n,
                          mean=float(mean), stderr=float(stderr),
                          seed=cfg.master_seed))

    for m in range(grid.M):
        for l in range(grid.M):
            row(f"cov_emp[{m + 1},{l + 1}]", emp[m, l], se[m, l])
            row(f"cov_theory[{m + 1},{l + 1}]", theory[m, l])
    row("max_abs_dev_in_stderr", dev.max())
    return out


def run_sample_noise(cfg: ExperimentConfig, workers=None):
    """Emit raw increment tables; returns no aggregate rows."""
    if cfg.out is None:
        raise ExperimentError("sample-noise needs an output path")
    model = NoiseModel(cfg.noise_kind, cfg.noise_lam)
    grid = TimeGrid(cfg.T, cfg.m_fine)
    lines = ["sample,m,j,std,avg"]
    for i in range(cfg.n_samples):
        table = sample_increment_table(grid, model.n_modes,
                                       stream(cfg.master_seed, i))
        for m in range(1, grid.M + 1):
            for j in range(table.J):
                lines.append(f"{i},{m},{j + 1},{_fmt(float(table.std[m, j]))},"
                             f"{_fmt(float(table.avg[m, j]))}")
    write_atomic("\n".join(lines) + "\n", cfg.out)
    return []


def run_selftest(cfg: ExperimentConfig, workers=None):
    results = selfcheck.run_all()
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    failures = [name for name, ok, _ in results if not ok]
    if failures:
        raise ExperimentError(f"selftest failures: {', '.join(failures)}")
    return []


_RUNNERS = {
    "explicit": run_explicit,
    "converge": run_converge,
    "verify-law": run_verify_law,
    "sample-noise": run_sample_noise,
    "selftest": run_selftest,
}


def run_experiment(cfg: ExperimentConfig, workers=None):
    """Run one experiment; write CSV atomically when an output path is set."""
    if cfg.experiment not in _RUNNERS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    rows = _RUNNERS[cfg.experiment](cfg, workers)
    if rows and cfg.out is not None:
        write_atomic(rows_to_csv(rows), cfg.out)
    return rows
