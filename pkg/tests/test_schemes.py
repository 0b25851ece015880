import numpy as np
import pytest

from splap import fem
from splap.flux import FluxParams, energy
from splap.mesh import FeFunction, from_interior, unit_square_mesh
from splap.noise import (IncrementTable, NoiseModel, TimeGrid,
                         sample_increment_table, stream)
from splap.schemes import (NewtonConfig, NewtonError, SchemeKind, Trajectory,
                           implicit_step, run_scheme)


def zero_table(grid, J=1):
    z = np.zeros((grid.M + 1, J))
    return IncrementTable(grid, z.copy(), z.copy())


def sin_product(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def test_step_without_diffusion_is_mass_solve():
    mesh = unit_square_mesh(5)
    rng = np.random.default_rng(1)
    mass = fem.assemble_mass(mesh)
    v_prev = from_interior(mesh, rng.standard_normal(mesh.interior.size))
    load = rng.standard_normal(mesh.interior.size)
    # p = 1.5, kappa = 0 with a flat previous state would be singular if the
    # diffusion term entered; tau_eff = 0 must bypass it entirely
    out = implicit_step(FluxParams(1.5, 0.0), mesh, mass, 0.0, v_prev, load,
                        NewtonConfig())
    expected = v_prev.coeffs[mesh.interior] + fem.solve_spd(mass, load)
    assert np.abs(out.coeffs[mesh.interior] - expected).max() < 1e-10


def test_step_zero_data_returns_zero():
    mesh = unit_square_mesh(4)
    mass = fem.assemble_mass(mesh)
    zero = FeFunction(mesh, np.zeros(mesh.n_vertices))
    out = implicit_step(FluxParams(3.0, 0.0), mesh, mass, 0.1, zero,
                        np.zeros(mesh.interior.size), NewtonConfig())
    assert np.array_equal(out.coeffs, np.zeros(mesh.n_vertices))


def test_step_p2_matches_direct_linear_solve():
    mesh = unit_square_mesh(8)
    rng = np.random.default_rng(2)
    mass = fem.assemble_mass(mesh)
    stiff = fem.assemble_stiffness(mesh)
    tau = 0.05
    v_prev = from_interior(mesh, rng.standard_normal(mesh.interior.size))
    load = 0.01 * rng.standard_normal(mesh.interior.size)
    out = implicit_step(FluxParams(2.0, 0.0), mesh, mass, tau, v_prev, load,
                        NewtonConfig())
    direct = fem.solve_spd((mass + tau * stiff).tocsr(),
                           mass @ v_prev.coeffs[mesh.interior] + load)
    assert np.abs(out.coeffs[mesh.interior] - direct).max() < 1e-9


def test_step_residual_contract():
    mesh = unit_square_mesh(6)
    rng = np.random.default_rng(3)
    mass = fem.assemble_mass(mesh)
    for p, kappa in ((3.0, 0.0), (1.5, 0.0), (1.5, 1.0)):
        params = FluxParams(p, kappa)
        v_prev = fem.l2_project(mesh, sin_product)
        load = 0.01 * rng.standard_normal(mesh.interior.size)
        cfg = NewtonConfig()
        out = implicit_step(params, mesh, mass, 0.02, v_prev, load, cfg)
        x = out.coeffs[mesh.interior]
        res = mass @ (x - v_prev.coeffs[mesh.interior]) \
            + 0.02 * fem.p_laplace_residual(params, out) - load
        bound = cfg.abs_tol + cfg.rel_tol * (
            np.linalg.norm(mass @ v_prev.coeffs[mesh.interior])
            + np.linalg.norm(load))
        assert np.linalg.norm(res) <= bound


def test_newton_superlinear_tail():
    # smooth case kappa = 1: late increments shrink superlinearly
    mesh = unit_square_mesh(8)
    rng = np.random.default_rng(4)
    mass = fem.assemble_mass(mesh)
    v_prev = from_interior(mesh, rng.standard_normal(mesh.interior.size))
    load = 0.1 * rng.standard_normal(mesh.interior.size)
    info = {}
    implicit_step(FluxParams(3.0, 1.0), mesh, mass, 1.0, v_prev, load,
                  NewtonConfig(), info=info)
    inc = info["increment_norms"]
    assert len(inc) >= 3
    assert inc[-1] < inc[-2] ** 1.5


def test_newton_iteration_cap_raises():
    mesh = unit_square_mesh(6)
    rng = np.random.default_rng(5)
    mass = fem.assemble_mass(mesh)
    v_prev = from_interior(mesh, rng.standard_normal(mesh.interior.size))
    load = 0.1 * rng.standard_normal(mesh.interior.size)
    with pytest.raises(NewtonError):
        implicit_step(FluxParams(3.0, 0.0), mesh, mass, 1.0, v_prev, load,
                      NewtonConfig(max_iter=1))


def test_run_scheme_guards():
    mesh = unit_square_mesh(4)
    grid = TimeGrid(1.0, 4)
    table = zero_table(grid, J=2)
    u0 = fem.l2_project(mesh, sin_product)
    with pytest.raises(ValueError):
        run_scheme(SchemeKind.EM, FluxParams(2.0, 0.0), mesh, u0,
                   NoiseModel("linear"), table)


@pytest.mark.parametrize("kind", list(SchemeKind))
def test_linear_case_matches_scalar_recursion(kind):
    """With one eigenmode and one linear noise mode every state stays a
    multiple of the eigenvector; the multipliers obey a scalar recursion."""
    mesh = unit_square_mesh(5)
    mu, u = fem.min_eigenpair(mesh)
    grid = TimeGrid(1.0, 12)
    table = sample_increment_table(grid, 1, stream(8, 3))
    traj = run_scheme(kind, FluxParams(2.0, 0.0), mesh, u,
                      NoiseModel("linear", 1.0), table)
    tau = grid.tau
    c = np.ones(grid.M + 1)
    for m in range(1, grid.M + 1):
        if kind is SchemeKind.EM:
            c[m] = c[m - 1] * (1 + table.std[m, 0]) / (1 + tau * mu)
        else:
            te = 0.5 * tau if (m == 1 and kind is SchemeKind.AVG_HALF) else tau
            c[m] = (c[m - 1] + table.avg[m, 0] * c[max(m - 2, 0)]) / (1 + te * mu)
    expected = c[:, None] * u.coeffs[None, :]
    assert np.abs(traj.coefficient_matrix() - expected).max() < 1e-8


def test_zero_noise_eigen_decay_factors():
    mesh = unit_square_mesh(5)
    mu, u = fem.min_eigenpair(mesh)
    grid = TimeGrid(1.0, 6)
    tau = grid.tau
    table = zero_table(grid)
    params = FluxParams(2.0, 0.0)
    model = NoiseModel("linear", 1.0)
    em = run_scheme(SchemeKind.EM, params, mesh, u, model, table)
    full = run_scheme(SchemeKind.AVG_FULL, params, mesh, u, model, table)
    half = run_scheme(SchemeKind.AVG_HALF, params, mesh, u, model, table)
    ref = u.coeffs[mesh.interior]
    for m in range(grid.M + 1):
        factor = (1 + tau * mu) ** -m
        assert np.abs(em.states[m].coeffs[mesh.interior] - factor * ref).max() < 1e-9
        assert np.abs(full.states[m].coeffs[mesh.interior] - factor * ref).max() < 1e-9
        if m >= 1:
            fh = (1 + tau * mu / 2) ** -1 * (1 + tau * mu) ** -(m - 1)
            assert np.abs(half.states[m].coeffs[mesh.interior] - fh * ref).max() < 1e-9


def test_half_and_full_differ_only_in_first_step_size():
    mesh = unit_square_mesh(4)
    u0 = fem.l2_project(mesh, sin_product)
    grid = TimeGrid(1.0, 1)
    table = sample_increment_table(grid, 2, stream(9, 0))
    params = FluxParams(3.0, 0.0)
    model = NoiseModel("trace")
    half = run_scheme(SchemeKind.AVG_HALF, params, mesh, u0, model, table)
    full = run_scheme(SchemeKind.AVG_FULL, params, mesh, u0, model, table)
    mass = fem.assemble_mass(mesh)
    load = fem.noise_load_vector(mesh, model, u0, table.avg[1])
    again = implicit_step(params, mesh, mass, 0.5 * grid.tau, u0, load,
                          NewtonConfig())
    assert np.array_equal(half.states[1].coeffs, again.coeffs)
    assert not np.array_equal(half.states[1].coeffs, full.states[1].coeffs)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_zero_noise_energy_dissipation(p):
    mesh = unit_square_mesh(6)
    u0 = fem.l2_project(mesh, sin_product)
    grid = TimeGrid(1.0, 6)
    table = zero_table(grid)
    params = FluxParams(p, 0.0)
    mass = fem.assemble_mass(mesh, restrict=False)
    for kind in SchemeKind:
        traj = run_scheme(kind, params, mesh, u0, NoiseModel("linear"), table)
        for m in range(1, grid.M + 1):
            d = traj.states[m].coeffs - traj.states[m - 1].coeffs
            lhs = energy(params, traj.states[m]) + d @ (mass @ d) / (2 * grid.tau)
            assert lhs <= energy(params, traj.states[m - 1]) + 1e-9
        # energies themselves are non-increasing as well
        es = [energy(params, s) for s in traj.states]
        assert all(es[i + 1] <= es[i] + 1e-12 for i in range(grid.M))


def test_adaptedness_to_table_prefix():
    """Replacing table rows beyond m must leave states up to m bit-identical."""
    mesh = unit_square_mesh(5)
    u0 = fem.l2_project(mesh, sin_product)
    grid = TimeGrid(1.0, 8)
    table = sample_increment_table(grid, 2, stream(10, 0))
    params = FluxParams(3.0, 0.0)
    model = NoiseModel("trace")
    cut = 4
    tampered_std = table.std.copy()
    tampered_avg = table.avg.copy()
    tampered_std[cut + 1:] += 3.0
    tampered_avg[cut + 1:] -= 5.0
    tampered = IncrementTable(grid, tampered_std, tampered_avg)
    for kind in SchemeKind:
        a = run_scheme(kind, params, mesh, u0, model, table)
        b = run_scheme(kind, params, mesh, u0, model, tampered)
        for m in range(cut + 1):
            assert np.array_equal(a.states[m].coeffs, b.states[m].coeffs)
        assert not np.array_equal(a.states[-1].coeffs, b.states[-1].coeffs)


def test_trajectory_shape_guard():
    mesh = unit_square_mesh(3)
    grid = TimeGrid(1.0, 3)
    with pytest.raises(ValueError):
        Trajectory(grid, [FeFunction(mesh, np.zeros(mesh.n_vertices))])
