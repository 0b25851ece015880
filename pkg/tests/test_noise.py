import numpy as np
import pytest

from splap.noise import (CoarsenSpec, IncrementTable, NoiseModel, TimeGrid,
                         coarse_oracle, coarsen_increments,
                         empirical_covariance, path_points,
                         sample_increment_table, stream)


def table_from_normals(grid, zeta, eta):
    """Rebuild a table from explicit standard normals (sampler formulas)."""
    tau = grid.tau
    J = zeta.shape[1]
    std = np.zeros((grid.M + 1, J))
    bridge = np.zeros((grid.M + 1, J))
    std[1:] = np.sqrt(tau) * zeta
    bridge[1:] = np.sqrt(tau / 12.0) * eta
    avg = np.zeros_like(std)
    avg[1:] = 0.5 * (std[1:] + std[:-1]) + bridge[1:] - bridge[:-1]
    return IncrementTable(grid, std, avg)


def test_grid_and_model_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)
    with pytest.raises(ValueError):
        NoiseModel("weird")
    assert NoiseModel("linear", 2.0).n_modes == 1
    assert NoiseModel("trace").n_modes == 2


def test_sampler_hand_example():
    # M=2, tau=1, zeta=(1,0), eta=(0,0): std=(1,0), avg=(0.5,0.5)
    grid = TimeGrid(2.0, 2)
    table = table_from_normals(grid, np.array([[1.0], [0.0]]),
                               np.array([[0.0], [0.0]]))
    assert np.allclose(table.std[1:, 0], [1.0, 0.0])
    assert np.allclose(table.avg[1:, 0], [0.5, 0.5])


def test_sampler_zero_normals():
    grid = TimeGrid(1.0, 5)
    table = table_from_normals(grid, np.zeros((5, 2)), np.zeros((5, 2)))
    assert np.array_equal(table.std, np.zeros((6, 2)))
    assert np.array_equal(table.avg, np.zeros((6, 2)))


def test_sampler_determinism_and_independence():
    grid = TimeGrid(1.0, 16)
    a = sample_increment_table(grid, 2, stream(5, 11))
    b = sample_increment_table(grid, 2, stream(5, 11))
    c = sample_increment_table(grid, 2, stream(5, 12))
    assert np.array_equal(a.std, b.std) and np.array_equal(a.avg, b.avg)
    assert not np.array_equal(a.std, c.std)


def test_first_step_variance_is_third_of_tau():
    grid = TimeGrid(0.5, 5)
    n = 40_000
    first = np.array([sample_increment_table(grid, 1, stream(7, i)).avg[1, 0]
                      for i in range(n)])
    var = first.var(ddof=1)
    se = first.std(ddof=1) ** 2 * np.sqrt(2.0 / (n - 1))
    assert abs(var - grid.tau / 3.0) < 3 * se


def test_bridge_average_variance():
    # avg[1] - std[1]/2 recovers the bridge average, variance tau/12
    grid = TimeGrid(0.5, 3)
    n = 40_000
    vals = np.empty(n)
    for i in range(n):
        t = sample_increment_table(grid, 1, stream(70, i))
        vals[i] = t.avg[1, 0] - 0.5 * t.std[1, 0]
    var = vals.var(ddof=1)
    se = vals.std(ddof=1) ** 2 * np.sqrt(2.0 / (n - 1))
    assert abs(var - grid.tau / 12.0) < 3 * se


def test_running_mean_variance():
    """Prefix sums of averaged increments have variance (2 t_{m-1} + t_m)/3."""
    grid = TimeGrid(0.6, 3)
    n = 40_000
    sums = np.empty((n, 3))
    for i in range(n):
        sums[i] = np.cumsum(sample_increment_table(grid, 1, stream(71, i)).avg[1:, 0])
    times = grid.times
    for m in range(1, 4):
        target = (2 * times[m - 1] + times[m]) / 3.0
        sample = sums[:, m - 1]
        se = sample.std(ddof=1) ** 2 * np.sqrt(2.0 / (n - 1))
        assert abs(sample.var(ddof=1) - target) < 3 * se


def test_empirical_covariance_trivial_and_law():
    grid = TimeGrid(0.3, 3)
    flat = [table_from_normals(grid, np.ones((3, 1)), np.ones((3, 1)))
            for _ in range(4)]
    cov, cross = empirical_covariance(flat)
    assert np.abs(cov).max() == 0.0 and np.abs(cross).max() == 0.0

    n = 30_000
    tables = [sample_increment_table(grid, 2, stream(9, i)) for i in range(n)]
    cov0, _ = empirical_covariance(tables, 0)
    tau = grid.tau
    theory = np.array([[tau / 3, tau / 6, 0.0],
                       [tau / 6, 2 * tau / 3, tau / 6],
                       [0.0, tau / 6, 2 * tau / 3]])
    x0 = np.stack([t.avg[1:, 0] for t in tables])
    c0 = x0 - x0.mean(axis=0)
    se = (c0[:, :, None] * c0[:, None, :]).std(axis=0, ddof=1) / np.sqrt(n)
    assert (np.abs(cov0 - theory) <= 3 * se).all()
    # modes are independent: cross-mode covariance of averaged increments
    x1 = np.stack([t.avg[1:, 1] for t in tables])
    c1 = x1 - x1.mean(axis=0)
    xm = (c0.T @ c1) / (n - 1)
    se_m = (c0[:, :, None] * c1[:, None, :]).std(axis=0, ddof=1) / np.sqrt(n)
    assert (np.abs(xm) <= 3 * se_m).all()


def test_joint_law_against_brute_force_paths():
    """Sampler covariances of (standard, averaged) increments against a
    trapezoid-rule oracle on 1000-point sub-grids per step."""
    grid = TimeGrid(0.4, 4)
    tau = grid.tau
    n_tab = 60_000
    std = np.empty((n_tab, 4))
    avg = np.empty((n_tab, 4))
    for i in range(n_tab):
        t = sample_increment_table(grid, 1, stream(13, i))
        std[i] = t.std[1:, 0]
        avg[i] = t.avg[1:, 0]

    k = 1000
    n_paths = 20_000
    chunk = 2000
    rng = np.random.default_rng(99)
    ostd = np.empty((n_paths, 4))
    oavg = np.empty((n_paths, 4))
    for start in range(0, n_paths, chunk):
        dw = np.sqrt(tau / k) * rng.standard_normal((chunk, 4 * k))
        w = np.concatenate([np.zeros((chunk, 1)), np.cumsum(dw, axis=1)], axis=1)
        ends = w[:, ::k]                                 # t_0 .. t_4
        means = np.empty((chunk, 4))
        for j in range(4):
            seg = w[:, j * k:(j + 1) * k + 1]
            means[:, j] = (0.5 * seg[:, 0] + seg[:, 1:-1].sum(axis=1)
                           + 0.5 * seg[:, -1]) / k
        ostd[start:start + chunk] = np.diff(ends, axis=1)
        oavg[start:start + chunk, 0] = means[:, 0]
        oavg[start:start + chunk, 1:] = np.diff(means, axis=1)

    def cross_cov(a, b):
        return ((a - a.mean(0)).T @ (b - b.mean(0))) / (len(a) - 1)

    def cross_se(a, b):
        prod = (a - a.mean(0))[:, :, None] * (b - b.mean(0))[:, None, :]
        return prod.std(axis=0, ddof=1) / np.sqrt(len(a))

    cs = cross_cov(std, avg)
    co = cross_cov(ostd, oavg)
    se = np.sqrt(cross_se(std, avg) ** 2 + cross_se(ostd, oavg) ** 2)
    for m in range(4):
        assert abs(cs[m, m] - co[m, m]) < 3 * se[m, m]
        if m + 1 < 4:
            assert abs(cs[m, m + 1] - co[m, m + 1]) < 3 * se[m, m + 1]
    # the same-step and next-step cross terms are both near tau/2
    assert np.abs(np.diag(cs) - tau / 2).max() < 4 * np.diag(se).max()


@pytest.mark.parametrize("r", [1, 2, 4, 8])
def test_coarsening_matches_oracle(r):
    grid = TimeGrid(1.0, 8 * r)
    worst = 0.0
    for i in range(25):
        table = sample_increment_table(grid, 2, stream(31, i))
        spec = CoarsenSpec(r)
        a = coarsen_increments(table, spec)
        b = coarse_oracle(table, spec)
        assert a.grid.M == 8
        worst = max(worst, np.abs(a.avg - b.avg).max(),
                    np.abs(a.std - b.std).max())
    assert worst < 1e-12


def test_coarsening_hand_case_r2():
    # r=2, M_c=1: coarse avg[1] = fine avg[1] + fine avg[2]/2
    grid = TimeGrid(1.0, 2)
    table = sample_increment_table(grid, 1, stream(1, 0))
    coarse = coarsen_increments(table, CoarsenSpec(2))
    assert coarse.avg[1, 0] == pytest.approx(
        table.avg[1, 0] + 0.5 * table.avg[2, 0], rel=1e-14)
    assert coarse.std[1, 0] == pytest.approx(
        table.std[1, 0] + table.std[2, 0], rel=1e-14)


def test_coarsening_identity_and_divisibility():
    grid = TimeGrid(1.0, 6)
    table = sample_increment_table(grid, 1, stream(2, 0))
    same = coarsen_increments(table, CoarsenSpec(1))
    assert np.array_equal(same.std, table.std)
    assert np.array_equal(same.avg, table.avg)
    with pytest.raises(ValueError):
        coarsen_increments(table, CoarsenSpec(4))


def test_coarsening_telescopes_to_final_running_mean():
    grid = TimeGrid(1.0, 12)
    table = sample_increment_table(grid, 2, stream(3, 0))
    means = np.cumsum(table.avg[1:], axis=0)
    for r in (2, 3, 4):
        coarse = coarsen_increments(table, CoarsenSpec(r))
        assert np.allclose(coarse.avg[1:].sum(axis=0), means[-r:].mean(axis=0),
                           atol=1e-13)


def test_path_points():
    grid = TimeGrid(2.0, 2)
    table = table_from_normals(grid, np.array([[1.0], [-1.0]]),
                               np.zeros((2, 1)))
    assert np.array_equal(path_points(table), [0.0, 1.0, 0.0])
    zero = table_from_normals(grid, np.zeros((2, 1)), np.zeros((2, 1)))
    assert np.array_equal(path_points(zero), np.zeros(3))


def test_terminal_path_variance():
    grid = TimeGrid(0.7, 7)
    n = 30_000
    ends = np.array([path_points(sample_increment_table(grid, 1, stream(41, i)))[-1]
                     for i in range(n)])
    se = ends.std(ddof=1) ** 2 * np.sqrt(2.0 / (n - 1))
    assert abs(ends.var(ddof=1) - grid.T) < 3 * se
