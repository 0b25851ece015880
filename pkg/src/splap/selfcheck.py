"""Runtime property suite behind the selftest subcommand.

Each check exercises one module invariant with fixed seeds and returns
(name, passed, detail); run_all collects every check.  The pytest suite
covers the same ground in more depth; these checks are the quick in-package
smoke test and deliberately avoid any test framework dependency.
"""

from __future__ import annotations

import numpy as np

from . import errors, exact, fem, flux, mesh as meshmod, noise, schemes


def _pairs(rng, n, radius=10.0):
    g = rng.uniform(-radius, radius, size=(n, 2, 2)) / np.sqrt(2.0)
    return g[:, 0], g[:, 1]


def check_coercivity_ratio():
    rng = np.random.default_rng(101)
    details = []
    ok = True
    for p in (1.5, 2.0, 3.0):
        lo, hi = np.inf, 0.0
        for kappa in (0.0, 1.0):
            params = flux.FluxParams(p, kappa)
            g1, g2 = _pairs(rng, 10_000)
            num = np.sum((flux.stress(params, g1) - flux.stress(params, g2))
                         * (g1 - g2), axis=-1)
            dv = flux.natural_map(params, g1) - flux.natural_map(params, g2)
            den = np.sum(dv * dv, axis=-1)
            keep = np.sqrt(den) >= 1e-12
            ratio = num[keep] / den[keep]
            lo, hi = min(lo, ratio.min()), max(hi, ratio.max())
        ok = ok and 0.0 < lo <= hi < np.inf
        details.append(f"p={p}: [{lo:.3f}, {hi:.3f}]")
    return "flux coercivity ratio", ok, "; ".join(details)


def check_monotonicity():
    rng = np.random.default_rng(202)
    worst = np.inf
    for p in (1.5, 2.0, 3.0):
        for kappa in (0.0, 1.0):
            params = flux.FluxParams(p, kappa)
            g1, g2 = _pairs(rng, 10_000)
            num = np.sum((flux.stress(params, g1) - flux.stress(params, g2))
                         * (g1 - g2), axis=-1)
            worst = min(worst, num.min())
    return "flux monotonicity", worst >= -1e-12, f"min pairing {worst:.3e}"


def check_potential_derivative():
    rng = np.random.default_rng(303)
    t = rng.uniform(0.1, 10.0, size=100)
    worst = 0.0
    for p in (1.5, 2.0, 3.0):
        for kappa in (0.0, 1.0):
            params = flux.FluxParams(p, kappa)
            eps = 1e-6 * t
            fd = (flux.potential(params, t + eps)
                  - flux.potential(params, t - eps)) / (2.0 * eps)
            target = (kappa + t) ** (p - 2.0) * t
            worst = max(worst, float(np.max(np.abs(fd - target) / np.abs(target))))
    return "potential derivative", worst < 1e-6, f"max rel err {worst:.3e}"


def check_stress_jacobian():
    rng = np.random.default_rng(404)
    worst = 0.0
    for p in (1.5, 3.0):
        for kappa in (0.0, 1.0):
            params = flux.FluxParams(p, kappa)
            radius = rng.uniform(0.1, 10.0, size=100)
            angle = rng.uniform(0.0, 2.0 * np.pi, size=100)
            g = radius[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])
            jac = flux.stress_jacobian(params, g)
            eps = 1e-7 * np.maximum(radius, 1.0)
            for axis in range(2):
                dg = np.zeros_like(g)
                dg[:, axis] = eps
                fd = (flux.stress(params, g + dg)
                      - flux.stress(params, g - dg)) / (2.0 * eps[:, None])
                err = np.abs(fd - jac[:, :, axis]).max(axis=1)
                scale = np.abs(jac).reshape(len(g), -1).max(axis=1)
                worst = max(worst, float(np.max(err / scale)))
    return "stress jacobian vs finite differences", worst < 1e-6, \
        f"max rel err {worst:.3e}"


def check_energy_gradient():
    rng = np.random.default_rng(505)
    m = meshmod.unit_square_mesh(5)
    worst = 0.0
    for p, kappa in ((3.0, 0.0), (1.5, 1.0), (2.0, 0.0)):
        params = flux.FluxParams(p, kappa)
        v = meshmod.from_interior(m, rng.standard_normal(m.interior.size))
        res = fem.p_laplace_residual(params, v)
        for _ in range(5):
            d = rng.standard_normal(m.interior.size)
            eps = 1e-6
            up = meshmod.from_interior(m, v.coeffs[m.interior] + eps * d)
            dn = meshmod.from_interior(m, v.coeffs[m.interior] - eps * d)
            fd = (flux.energy(params, up) - flux.energy(params, dn)) / (2 * eps)
            worst = max(worst, abs(fd - res @ d) / max(abs(fd), 1e-12))
    return "residual equals energy gradient", worst < 1e-5, \
        f"max rel err {worst:.3e}"


def check_mesh_geometry():
    m0 = meshmod.unit_square_mesh(10)
    meshes = [m0, meshmod.refine_uniform(m0)]
    meshes.append(meshmod.refine_uniform(meshes[-1]))
    ok = m0.n_vertices == 121 and m0.n_triangles == 200
    details = []
    ratio0 = None
    for m in meshes:
        pts = m.vertices[m.triangles]
        edges = np.stack([np.linalg.norm(pts[:, i] - pts[:, (i + 1) % 3], axis=1)
                          for i in range(3)])
        h_t = edges.max(axis=0)
        rho = 2.0 * m.areas / edges.sum(axis=0)
        ratio = float((h_t / rho).max())
        ratio0 = ratio0 or ratio
        ok = ok and abs(sum(m.areas) - 1.0) < 1e-12
        ok = ok and abs(h_t.max() - m.h_max) < 1e-12 * m.h_max
        ok = ok and abs(ratio - ratio0) < 1e-9
        ok = ok and h_t.max() / h_t.min() <= np.sqrt(2.0) + 1e-12
        onb = (m.vertices == 0.0) | (m.vertices == 1.0)
        ok = ok and np.array_equal(m.boundary_mask, onb.any(axis=1))
        details.append(f"L{m.level}: h={m.h_max:.4f}")
    ok = ok and abs(meshes[1].h_max - 0.5 * meshes[0].h_max) == 0.0
    return "mesh refinement geometry", ok, "; ".join(details)


def check_prolongation():
    rng = np.random.default_rng(606)
    coarse = meshmod.unit_square_mesh(4)
    fine = meshmod.refine_uniform(meshmod.refine_uniform(coarse))
    v = meshmod.from_interior(coarse, rng.standard_normal(coarse.interior.size))
    w = meshmod.prolongate(v, fine)
    nested = np.allclose(w.coeffs[:coarse.n_vertices], v.coeffs, rtol=0, atol=0)
    mc = fem.assemble_mass(coarse, restrict=False)
    mf = fem.assemble_mass(fine, restrict=False)
    l2c = float(v.coeffs @ (mc @ v.coeffs))
    l2f = float(w.coeffs @ (mf @ w.coeffs))
    ok = nested and abs(l2c - l2f) < 1e-12 * max(l2c, 1.0)
    return "prolongation nestedness and norm invariance", ok, \
        f"L2 drift {abs(l2c - l2f):.2e}"


def check_assembly():
    m = meshmod.unit_square_mesh(6)
    mass = fem.assemble_mass(m, restrict=False)
    stiff = fem.assemble_stiffness(m, restrict=False)
    ok = abs(mass.sum() - 1.0) < 1e-12
    ok = ok and float(np.abs(stiff @ np.ones(m.n_vertices)).max()) < 1e-12
    ok = ok and (abs(mass - mass.T)).max() < 1e-14
    ok = ok and (abs(stiff - stiff.T)).max() < 1e-14
    return "mass and stiffness assembly", ok, "partition of unity, kernel, symmetry"


def check_projection_identity():
    rng = np.random.default_rng(707)
    n = 8
    m = meshmod.unit_square_mesh(n)
    v = meshmod.from_interior(m, rng.standard_normal(m.interior.size))
    # Quadrature points are edge midpoints, i.e. vertices of the refined
    # mesh; exact P1 values there come from the prolongated coefficients.
    fine = meshmod.refine_uniform(m)
    w = meshmod.prolongate(v, fine)
    table = {(round(px * 2 * n), round(py * 2 * n)): c
             for (px, py), c in zip(fine.vertices, w.coeffs)}

    def f(x, y):
        vals = [table[(round(a * 2 * n), round(b * 2 * n))]
                for a, b in zip(np.ravel(x), np.ravel(y))]
        return np.array(vals).reshape(np.shape(x))

    proj = fem.l2_project(m, f)
    err = float(np.abs(proj.coeffs - v.coeffs).max())
    return "projection identity on the element space", err < 1e-10, \
        f"max coeff err {err:.2e}"


def check_eigenpair():
    target = 2.0 * np.pi**2
    mus = []
    m = meshmod.unit_square_mesh(8)
    for _ in range(2):
        mu, _u = fem.min_eigenpair(m)
        mus.append(mu)
        m = meshmod.refine_uniform(m)
    ok = all(mu > target for mu in mus) and mus[1] < mus[0]
    return "pencil eigenvalue bounds", ok, \
        f"mu: {mus[0]:.5f} -> {mus[1]:.5f} > {target:.5f}"


def check_linear_solver():
    rng = np.random.default_rng(808)
    import scipy.sparse as sp
    a = rng.standard_normal((10, 10))
    a = a @ a.T + 10.0 * np.eye(10)
    b = rng.standard_normal(10)
    x = fem.solve_spd(sp.csr_matrix(a), b)
    err = np.linalg.norm(x - np.linalg.solve(a, b)) / np.linalg.norm(b)
    return "cg against dense elimination", err < 1e-10, f"rel err {err:.2e}"


def check_increment_law():
    grid = noise.TimeGrid(0.3, 3)
    n = 20_000
    rows = np.empty((n, 3))
    for i in range(n):
        rows[i] = noise.sample_increment_table(grid, 1, noise.stream(99, i)).avg[1:, 0]
    centered = rows - rows.mean(axis=0)
    emp = (centered.T @ centered) / (n - 1)
    se = (centered[:, :, None] * centered[:, None, :]).std(axis=0, ddof=1) / np.sqrt(n)
    tau = grid.tau
    theory = np.array([[tau / 3, tau / 6, 0.0],
                       [tau / 6, 2 * tau / 3, tau / 6],
                       [0.0, tau / 6, 2 * tau / 3]])
    dev = float((np.abs(emp - theory) / se).max())
    return "averaged increment covariance", dev <= 5.0, f"max dev {dev:.2f} se"


def check_coarsening():
    ok = True
    worst = 0.0
    for i, r in enumerate((2, 4, 8)):
        grid = noise.TimeGrid(1.0, 8 * r)
        table = noise.sample_increment_table(grid, 2, noise.stream(7, i))
        spec = noise.CoarsenSpec(r)
        a = noise.coarsen_increments(table, spec)
        b = noise.coarse_oracle(table, spec)
        worst = max(worst, float(np.abs(a.avg - b.avg).max()),
                    float(np.abs(a.std - b.std).max()))
        # Telescoping: the summed coarse increments recover the final coarse
        # running mean, i.e. the mean of the last r fine running means.
        means_f = np.cumsum(table.avg[1:], axis=0)
        ok = ok and np.allclose(a.avg[1:].sum(axis=0), means_f[-r:].mean(axis=0),
                                atol=1e-12)
    return "coarsening equals running-mean oracle", ok and worst < 1e-12, \
        f"max abs diff {worst:.2e}"


def check_pythagoras():
    rng = np.random.default_rng(909)
    m = meshmod.unit_square_mesh(4)
    params = flux.FluxParams(3.0, 0.0)
    grid_f, grid_c = noise.TimeGrid(1.0, 8), noise.TimeGrid(1.0, 4)
    worst = 0.0
    for _ in range(3):
        fine = schemes.Trajectory(grid_f, [
            meshmod.from_interior(m, rng.standard_normal(m.interior.size))
            for _ in range(9)])
        coarse = schemes.Trajectory(grid_c, [
            meshmod.from_interior(m, rng.standard_normal(m.interior.size))
            for _ in range(5)])
        classic = errors.trajectory_distance(errors.MetricKind.L2V_CLASSIC,
                                             params, fine, coarse)
        outer = errors.trajectory_distance(errors.MetricKind.L2V_OUTER,
                                           params, fine, coarse)
        osc = errors.v_oscillation(params, fine, grid_c.M)
        worst = max(worst, abs(classic - (outer + osc)) / classic)
    return "classic = outer + oscillation", worst < 1e-10, f"rel gap {worst:.2e}"


def check_scheme_recursion():
    m = meshmod.unit_square_mesh(4)
    mu, u = fem.min_eigenpair(m)
    params = flux.FluxParams(2.0, 0.0)
    model = noise.NoiseModel("linear", 1.0)
    grid = noise.TimeGrid(1.0, 8)
    table = noise.sample_increment_table(grid, 1, noise.stream(42, 0))
    tau = grid.tau
    worst = 0.0
    for kind in schemes.SchemeKind:
        traj = schemes.run_scheme(kind, params, m, u, model, table)
        c = np.ones(grid.M + 1)
        for step in range(1, grid.M + 1):
            if kind is schemes.SchemeKind.EM:
                c[step] = c[step - 1] * (1 + table.std[step, 0]) / (1 + tau * mu)
            else:
                te = 0.5 * tau if (step == 1 and kind is schemes.SchemeKind.AVG_HALF) else tau
                c[step] = (c[step - 1]
                           + table.avg[step, 0] * c[max(step - 2, 0)]) / (1 + te * mu)
        coeffs = traj.coefficient_matrix()
        expect = c[:, None] * u.coeffs[None, :]
        worst = max(worst, float(np.abs(coeffs - expect).max()))
    return "linear-case scheme recursion", worst < 1e-8, f"max coeff err {worst:.2e}"


def check_energy_decay():
    m = meshmod.unit_square_mesh(6)
    params = flux.FluxParams(3.0, 0.0)
    model = noise.NoiseModel("linear", 1.0)
    grid = noise.TimeGrid(1.0, 6)
    table = noise.IncrementTable(grid, np.zeros((7, 1)), np.zeros((7, 1)))
    u0 = fem.l2_project(m, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    mass = fem.assemble_mass(m, restrict=False)
    ok = True
    for kind in schemes.SchemeKind:
        traj = schemes.run_scheme(kind, params, m, u0, model, table)
        for step in range(1, grid.M + 1):
            d = traj.states[step].coeffs - traj.states[step - 1].coeffs
            lhs = flux.energy(params, traj.states[step]) \
                + float(d @ (mass @ d)) / (2 * grid.tau)
            ok = ok and lhs <= flux.energy(params, traj.states[step - 1]) + 1e-9
    return "zero-noise energy dissipation", ok, "discrete gradient-flow bound"


def check_reference_geometric_sum():
    m = meshmod.unit_square_mesh(4)
    mu, u = fem.min_eigenpair(m)
    # lam -> 0 limit realized by a zero noise path.
    params = exact.ExactParams(lam=0.0, mu=1.0, mu_h=mu, u_h0=u, r_ref=10)
    grid = noise.TimeGrid(1.0, 4)
    fine_grid = noise.TimeGrid(1.0, 40)
    table = noise.IncrementTable(fine_grid, np.zeros((41, 1)), np.zeros((41, 1)))
    _point, aver = exact.build_references(params, table, grid)
    q = np.exp(-mu * grid.tau / 10.0)
    worst = 0.0
    for step in range(1, 5):
        analytic = np.exp(-mu * grid.times[step - 1]) \
            * q * (1 - q**10) / (1 - q) / 10.0
        got = aver.states[step].coeffs[m.interior][0] / u.coeffs[m.interior][0]
        worst = max(worst, abs(got - analytic) / analytic)
    return "averaged reference geometric sum", worst < 1e-12, f"rel err {worst:.2e}"


def check_monte_carlo_contract():
    mean, stderr = errors.monte_carlo(lambda i: np.array([3.5]), 4, workers=1)
    ok = mean[0] == 3.5 and stderr[0] == 0.0
    mean1, stderr1 = errors.monte_carlo(lambda i: np.array([float(i)]), 1, workers=1)
    ok = ok and mean1[0] == 0.0 and stderr1[0] == 0.0
    return "monte carlo aggregation contract", ok, "constant and single-sample cases"


def check_determinism():
    grid = noise.TimeGrid(1.0, 16)
    a = noise.sample_increment_table(grid, 2, noise.stream(5, 11))
    b = noise.sample_increment_table(grid, 2, noise.stream(5, 11))
    ok = np.array_equal(a.std, b.std) and np.array_equal(a.avg, b.avg)
    return "seeded sampling determinism", ok, "bit-identical tables"


ALL_CHECKS = (
    check_coercivity_ratio,
    check_monotonicity,
    check_potential_derivative,
    check_stress_jacobian,
    check_energy_gradient,
    check_mesh_geometry,
    check_prolongation,
    check_assembly,
    check_projection_identity,
    check_eigenpair,
    check_linear_solver,
    check_increment_law,
    check_coarsening,
    check_pythagoras,
    check_scheme_recursion,
    check_energy_decay,
    check_reference_geometric_sum,
    check_monte_carlo_contract,
    check_determinism,
)


def run_all():
    results = []
    for check in ALL_CHECKS:
        try:
            results.append(check())
        except Exception as exc:                         # noqa: BLE001
            results.append((check.__name__, False, f"raised {exc!r}"))
    return results
