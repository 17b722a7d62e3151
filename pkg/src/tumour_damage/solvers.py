"""Matrix-free iterative kernels: CG, damped Newton and a convex minimiser."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator as _ScipyOperator
from scipy.sparse.linalg import gmres


class NonConvergence(RuntimeError):
    """An iteration hit its budget without meeting the tolerance."""

    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


class LineSearchStall(NonConvergence):
    """Backtracking could not find an acceptable step."""


@dataclass
class SolveReport:
    iterations: int = 0
    residual: float = 0.0
    converged: bool = False
    wall_time: float = 0.0
    history: list[float] = field(default_factory=list, repr=False)


@dataclass
class LinearOperator:
    """Matrix-free operator acting on arrays of a fixed shape."""

    apply: Callable[[np.ndarray], np.ndarray]
    symmetric: bool = True
    positive: bool = True

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    def symmetry_defect(self, shape, rng: np.random.Generator | None = None) -> float:
        """Relative ``|<Ax, y> - <x, Ay>|`` on one random probe pair."""
        rng = rng or np.random.default_rng(0)
        x = rng.standard_normal(shape)
        y = rng.standard_normal(shape)
        lhs = np.vdot(self.apply(x), y)
        rhs = np.vdot(x, self.apply(y))
        return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def cg_solve(A, b: np.ndarray, tol: float = 1e-10, max_iter: int = 1000,
             precond: Callable[[np.ndarray], np.ndarray] | None = None,
             x0: np.ndarray | None = None,
             callback: Callable[[np.ndarray], None] | None = None
             ) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradients on an SPD operator.

    Stops when ``||b - A x|| <= tol * ||b||``.  Raises :class:`NonConvergence`
    when ``max_iter`` iterations do not reach that.  ``callback`` sees every
    iterate.
    """
    start = time.perf_counter()
    report = SolveReport()
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        report.converged = True
        report.wall_time = time.perf_counter() - start
        return np.zeros_like(b), report

    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A(x) if x0 is not None else b.copy()
    res = np.linalg.norm(r)
    report.history.append(res / b_norm)
    if res <= tol * b_norm:
        report.residual, report.converged = res / b_norm, True
        report.wall_time = time.perf_counter() - start
        return x, report

    z = precond(r) if precond else r
    p = z.copy()
    rz = np.vdot(r, z)
    for it in range(1, max_iter + 1):
        ap = A(p)
        pap = np.vdot(p, ap)
        if pap <= 0.0:
            raise NonConvergence(f"operator not positive definite (p.Ap = {pap:.3e})", report)
        step = rz / pap
        x += step * p
        r -= step * ap
        if callback is not None:
            callback(x)
        res = np.linalg.norm(r)
        report.history.append(res / b_norm)
        if res <= tol * b_norm:
            report.iterations, report.residual, report.converged = it, res / b_norm, True
            report.wall_time = time.perf_counter() - start
            return x, report
        z = precond(r) if precond else r
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    report.iterations, report.residual = max_iter, res / b_norm
    report.wall_time = time.perf_counter() - start
    raise NonConvergence(f"CG stopped at relative residual {res / b_norm:.3e} "
                         f"after {max_iter} iterations", report)


def krylov_jacobian_solver(jac_apply: Callable[[np.ndarray, np.ndarray], np.ndarray],
                           rtol: float = 1e-10, max_iter: int = 500):
    """Build a Newton linear solver from a Jacobian action ``jac_apply(x, d)``.

    Uses restarted GMRES since a generic Jacobian need not be symmetric.
    """

    def solve(x: np.ndarray, r: np.ndarray) -> np.ndarray:
        n = r.size
        op = _ScipyOperator((n, n), matvec=lambda d: jac_apply(x, d.reshape(r.shape)).ravel(),
                            dtype=float)
        d, info = gmres(op, -r.ravel(), rtol=rtol, atol=0.0, maxiter=max_iter)
        if info > 0:
            raise NonConvergence(f"GMRES did not converge in {max_iter} restarts")
        return d.reshape(r.shape)

    return solve


def dense_jacobian_solver(jac_apply: Callable[[np.ndarray, np.ndarray], np.ndarray],
                          max_size: int = 4096):
    """Newton linear solver that assembles the Jacobian column by column.

    Exact up to LU round-off; meant for small diagnostic grids only.
    """

    def solve(x: np.ndarray, r: np.ndarray) -> np.ndarray:
        n = r.size
        if n > max_size:
            raise ValueError(f"dense Jacobian of size {n} exceeds {max_size}")
        cols = np.empty((n, n))
        e = np.zeros(n)
        for i in range(n):
            e[i] = 1.0
            cols[:, i] = jac_apply(x, e.reshape(r.shape)).ravel()
            e[i] = 0.0
        return np.linalg.solve(cols, -r.ravel()).reshape(r.shape)

    return solve


def newton_solve(residual: Callable[[np.ndarray], np.ndarray],
                 linear_solve: Callable[[np.ndarray, np.ndarray], np.ndarray],
                 x0: np.ndarray, tol: float = 1e-9, max_iter: int = 50,
                 armijo: float = 1e-4, min_step: float = 2.0**-30
                 ) -> tuple[np.ndarray, SolveReport]:
    """Damped Newton iteration with Armijo backtracking on ``0.5 * ||F||^2``.

    ``linear_solve(x, F(x))`` must return the Newton direction ``d`` with
    ``J(x) d = -F(x)``.  Convergence is ``max |F| <= tol``.
    """
    start = time.perf_counter()
    report = SolveReport()
    x = np.array(x0, dtype=float, copy=True)
    f = residual(x)
    merit = 0.5 * np.vdot(f, f)
    res = float(np.max(np.abs(f))) if f.size else 0.0
    report.history.append(res)
    for it in range(max_iter + 1):
        if res <= tol:
            report.iterations, report.residual, report.converged = it, res, True
            report.wall_time = time.perf_counter() - start
            return x, report
        if it == max_iter:
            break
        d = linear_solve(x, f)
        step = 1.0
        while True:
            trial = x + step * d
            f_trial = residual(trial)
            merit_trial = 0.5 * np.vdot(f_trial, f_trial)
            if merit_trial <= (1.0 - 2.0 * armijo * step) * merit:
                break
            step *= 0.5
            if step < min_step:
                report.iterations, report.residual = it, res
                report.wall_time = time.perf_counter() - start
                raise LineSearchStall(f"no Armijo step at residual {res:.3e}", report)
        x, f, merit = trial, f_trial, merit_trial
        res = float(np.max(np.abs(f)))
        report.history.append(res)

    report.iterations, report.residual = max_iter, res
    report.wall_time = time.perf_counter() - start
    raise NonConvergence(f"Newton stopped at residual {res:.3e} after {max_iter} steps", report)


def _power_lipschitz(grad, z, g, iters: int = 8, rng=None) -> float:
    # power iteration on finite differences of the gradient map
    rng = rng or np.random.default_rng(1)
    v = rng.standard_normal(z.shape)
    v /= np.linalg.norm(v)
    lip = 1.0
    for _ in range(iters):
        eps = 1e-6 * max(1.0, np.linalg.norm(z))
        w = (grad(z + eps * v) - g) / eps
        lip = np.linalg.norm(w)
        if lip == 0.0:
            return 1.0
        v = w / lip
    return lip


def minimize_convex(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], z0: np.ndarray,
                    tol: float = 1e-9, max_iter: int = 20000, armijo: float = 1e-4,
                    diag: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    """Minimise a smooth convex functional by Barzilai-Borwein gradient steps.

    ``fun(z)`` returns ``(value, gradient)``; convergence is
    ``max |gradient| <= tol``.  Steps are safeguarded by monotone backtracking
    on the value, with a slack of a few ulps of ``|value|`` because near the
    minimiser true decreases fall below the resolution of the sum.  When the
    BB quotient is undefined the step falls back to ``1/L`` with ``L`` from a
    short power iteration.  ``diag`` is an optional positive diagonal scaling
    (the BB quotients are then taken in the scaled metric).
    """
    start = time.perf_counter()
    report = SolveReport()
    z = np.array(z0, dtype=float, copy=True)
    d = np.ones_like(z) if diag is None else np.asarray(diag, dtype=float)

    value, g = fun(z)
    res = float(np.max(np.abs(g)))
    report.history.append(res)
    if res <= tol:
        report.converged, report.residual = True, res
        report.wall_time = time.perf_counter() - start
        return z, report

    grad_scaled = lambda w: fun(w)[1] / d  # noqa: E731
    sg = g / d
    step = 1.0 / _power_lipschitz(grad_scaled, z, sg)
    for it in range(1, max_iter + 1):
        slack = 64.0 * np.finfo(float).eps * max(1.0, abs(value))
        gs = np.vdot(g, sg)
        while True:
            trial = z - step * sg
            v_trial, g_trial = fun(trial)
            if v_trial <= value - armijo * step * gs + slack:
                break
            step *= 0.5
            if step < 1e-30:
                report.iterations, report.residual = it, res
                report.wall_time = time.perf_counter() - start
                raise LineSearchStall(f"minimiser backtracking stalled at |g| = {res:.3e}", report)
        s = trial - z
        y = g_trial - g
        z, value, g = trial, v_trial, g_trial
        sg = g / d
        res = float(np.max(np.abs(g)))
        report.history.append(res)
        if res <= tol:
            report.iterations, report.residual, report.converged = it, res, True
            report.wall_time = time.perf_counter() - start
            return z, report
        sy = np.vdot(s, y)
        if sy > 0.0 and np.isfinite(sy):
            # alternate the two BB quotients, both in the metric of ``d``
            step = np.vdot(s, d * s) / sy if it % 2 else sy / np.vdot(y, y / d)
        else:
            step = 1.0 / _power_lipschitz(grad_scaled, z, sg)

    report.iterations, report.residual = max_iter, res
    report.wall_time = time.perf_counter() - start
    raise NonConvergence(f"minimiser stopped at |g| = {res:.3e} after {max_iter} steps", report)
