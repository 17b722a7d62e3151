import numpy as np
import pytest

from tumour_damage.solvers import (LineSearchStall, LinearOperator, NonConvergence, cg_solve,
                                   dense_jacobian_solver, krylov_jacobian_solver, minimize_convex,
                                   newton_solve)


def spd(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def test_cg_identity_one_iteration():
    b = np.arange(12.0).reshape(3, 4) - 4.0
    x, rep = cg_solve(lambda v: v, b, tol=1e-12)
    np.testing.assert_array_equal(x, b)
    assert rep.iterations == 1 and rep.converged


def test_cg_zero_rhs():
    x, rep = cg_solve(lambda v: 2 * v, np.zeros(5))
    assert not x.any() and rep.iterations == 0 and rep.converged


def test_cg_matches_dense_and_residual_contract():
    a = spd(30, 0)
    b = np.random.default_rng(1).standard_normal(30)
    x, rep = cg_solve(lambda v: a @ v, b, tol=1e-12, max_iter=200)
    np.testing.assert_allclose(x, np.linalg.solve(a, b), rtol=1e-9)
    assert rep.residual <= 1e-12
    assert np.linalg.norm(b - a @ x) <= 1e-11 * np.linalg.norm(b)


def test_cg_energy_error_nonincreasing():
    a = spd(40, 2)
    b = np.random.default_rng(3).standard_normal(40)
    exact = np.linalg.solve(a, b)
    errs = []

    def watch(x):
        e = x - exact
        errs.append(e @ a @ e)

    cg_solve(lambda v: a @ v, b, tol=1e-12, max_iter=200, callback=watch)
    assert len(errs) > 5
    assert all(e2 <= e1 * (1 + 1e-10) for e1, e2 in zip(errs, errs[1:]))


def test_cg_nonconvergence_and_indefinite():
    a = spd(50, 4)
    with pytest.raises(NonConvergence) as info:
        cg_solve(lambda v: a @ v, np.ones(50), tol=1e-14, max_iter=2)
    assert info.value.report.iterations == 2
    with pytest.raises(NonConvergence):
        cg_solve(lambda v: -v, np.ones(3))


def test_linear_operator_symmetry_probe():
    a = spd(6, 5)
    assert LinearOperator(lambda v: a @ v).symmetry_defect((6,)) < 1e-14
    b = a + np.triu(np.ones((6, 6)), 1)
    assert LinearOperator(lambda v: b @ v, symmetric=False).symmetry_defect((6,)) > 1e-3


def test_newton_scalar_cubic():
    x, rep = newton_solve(lambda x: x**3 + x - 2, lambda x, f: -f / (3 * x**2 + 1),
                          np.array([0.0]), tol=1e-12)
    assert x[0] == pytest.approx(1.0, abs=1e-12)
    assert rep.converged and rep.residual <= 1e-12
    assert all(b <= a for a, b in zip(rep.history, rep.history[1:]))


def test_newton_linear_one_step():
    a = spd(10, 6)
    b = np.random.default_rng(7).standard_normal(10)
    x, rep = newton_solve(lambda x: a @ x - b, lambda x, f: -np.linalg.solve(a, f),
                          np.zeros(10), tol=1e-10)
    assert rep.iterations == 1


def test_newton_stall_and_budget():
    # a direction of ascent can never satisfy Armijo
    with pytest.raises(LineSearchStall):
        newton_solve(lambda x: x - 1.0, lambda x, f: f, np.array([0.0]))
    with pytest.raises(NonConvergence):
        newton_solve(lambda x: np.arctan(x), lambda x, f: -0.01 * f, np.array([1.0]), max_iter=3)


def test_krylov_and_dense_jacobian_solvers():
    a = spd(12, 8) + np.triu(np.ones((12, 12)), 1)
    r = np.random.default_rng(9).standard_normal(12)
    exact = -np.linalg.solve(a, r)
    jac = lambda x, d: a @ d  # noqa: E731
    np.testing.assert_allclose(krylov_jacobian_solver(jac, rtol=1e-12)(None, r), exact, rtol=1e-8)
    np.testing.assert_allclose(dense_jacobian_solver(jac)(None, r), exact, rtol=1e-10)


def quad(c):
    return lambda z: (0.5 * float(np.sum((z - c) ** 2)), z - c)


def test_minimize_proximal_identity():
    c = np.random.default_rng(10).standard_normal((5, 4))
    z, rep = minimize_convex(quad(c), np.zeros_like(c), tol=1e-12)
    np.testing.assert_allclose(z, c, atol=1e-12)
    assert rep.converged


def test_minimize_contract_and_two_starts():
    rng = np.random.default_rng(11)
    a = spd(20, 12)
    b = rng.standard_normal(20)

    def fun(z):
        return 0.25 * float(np.sum(z**4)) + 0.5 * z @ a @ z - b @ z, z**3 + a @ z - b

    z1, r1 = minimize_convex(fun, rng.standard_normal(20), tol=1e-10)
    z2, _ = minimize_convex(fun, 5 * rng.standard_normal(20), tol=1e-10)
    assert np.max(np.abs(z1 - z2)) < 1e-8
    assert np.max(np.abs(fun(z1)[1])) <= 1e-10
    assert r1.converged and all(np.isfinite(r1.history))


def test_minimize_value_monotone():
    values = []
    c = np.linspace(-1, 1, 9)

    def fun(z):
        v = float(np.sum(np.cosh(z - c)))
        values.append(v)
        return v, np.sinh(z - c)

    z, _ = minimize_convex(fun, np.full(9, 3.0), tol=1e-10)
    np.testing.assert_allclose(z, c, atol=1e-10)
    assert fun(z)[0] <= values[0]


def test_minimize_budget():
    with pytest.raises(NonConvergence):
        minimize_convex(quad(np.ones(3)), np.zeros(3), tol=1e-15, max_iter=0)


def test_two_cell_damage_against_grid_search():
    """Two cells of width 1/2 joined by one face; p = 4, tau = 0.1, no strain."""
    tau, p, h = 0.1, 4.0, 0.5
    z0 = np.array([0.2, 0.8])

    def energy(z1, z2):
        cells = sum(zi**2 / (2 * tau) - z0i * zi / tau for zi, z0i in ((z1, z0[0]), (z2, z0[1])))
        return h * cells + h * np.abs((z2 - z1) / h) ** p / p

    def fun(z):
        d = (z[1] - z[0]) / h
        flux = np.abs(d) ** (p - 2) * d
        grad = h * ((z - z0) / tau) + np.array([-flux, flux])
        return float(energy(z[0], z[1])), grad

    z, _ = minimize_convex(fun, np.array([0.5, 0.5]), tol=1e-12)

    # exhaustive search, then two zoomed passes around the best point
    lo, hi, best = np.zeros(2), np.ones(2), None
    for _ in range(3):
        a = np.linspace(lo[0], hi[0], 801)
        b = np.linspace(lo[1], hi[1], 801)
        aa, bb = np.meshgrid(a, b, indexing="ij")
        e = energy(aa, bb)
        i, j = np.unravel_index(np.argmin(e), e.shape)
        best = np.array([a[i], b[j]])
        width = 4 * (hi - lo) / 800
        lo, hi = best - width, best + width
    assert np.max(np.abs(z - best)) < 1e-4
    assert np.all((z >= 0) & (z <= 1))
