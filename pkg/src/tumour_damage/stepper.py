"""One step of the semi-implicit scheme, in the order nutrient, Cahn-Hilliard,
damage, displacement, plus initialisation and time interpolants."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import integrate as _quad

from . import constitutive as cm
from .constitutive import ModelParams
from .errors import InvalidInitialData, OutOfRange, Violation
from .grid import (Grid, Robin, div_tensor, laplacian, neumann_eigenvalues,
                   neumann_spectral_apply, p_energy, p_laplacian, sym_grad, zero_boundary)
from .solvers import (NonConvergence, SolveReport, cg_solve, dense_jacobian_solver,
                      minimize_convex, newton_solve)

log = logging.getLogger(__name__)

LINEAR_TOL = 1e-12
NEWTON_TOL = 1e-9
DAMAGE_TOL = 1e-9
BOUND_SLACK = 1e-12


@dataclass(frozen=True)
class StepState:
    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    u: np.ndarray
    v: np.ndarray
    u_prev: np.ndarray
    k: int = 0
    t: float = 0.0
    tau: float = 0.0

    def field(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass(frozen=True)
class InitialData:
    phi0: np.ndarray
    sigma0: np.ndarray
    z0: np.ndarray
    u0: np.ndarray
    v0: np.ndarray


def _boundary_values(u: np.ndarray) -> np.ndarray:
    return np.concatenate([u[:, 0, :].ravel(), u[:, -1, :].ravel(),
                           u[:, :, 0].ravel(), u[:, :, -1].ravel()])


def validate_initial_data(data: InitialData, params: ModelParams, grid: Grid) -> None:
    for name in ("phi0", "sigma0", "z0"):
        arr = getattr(data, name)
        if arr.shape != grid.shape:
            raise InvalidInitialData(f"{name} has shape {arr.shape}, expected {grid.shape}")
    for name in ("u0", "v0"):
        arr = getattr(data, name)
        if arr.shape != (2,) + grid.node_shape:
            raise InvalidInitialData(f"{name} has shape {arr.shape}")
    for name in ("phi0", "sigma0", "z0", "u0", "v0"):
        if not np.all(np.isfinite(getattr(data, name))):
            raise InvalidInitialData(f"{name} has non-finite values")
    if data.sigma0.min() < 0.0 or data.sigma0.max() > params.M:
        raise InvalidInitialData(
            f"sigma0 must lie in [0, M={params.M}], got [{data.sigma0.min()}, {data.sigma0.max()}]")
    if data.z0.min() < 0.0 or data.z0.max() > 1.0:
        raise InvalidInitialData("z0 must lie in [0, 1] where the damage constraint is finite")
    for name in ("u0", "v0"):
        if np.any(_boundary_values(getattr(data, name)) != 0.0):
            raise InvalidInitialData(f"{name} must vanish on the Dirichlet boundary")


def initialize(data: InitialData, params: ModelParams, grid: Grid) -> StepState:
    validate_initial_data(data, params, grid)
    tau = params.tau
    return StepState(phi=data.phi0.astype(float).copy(), mu=np.zeros(grid.shape),
                     sigma=data.sigma0.astype(float).copy(), z=data.z0.astype(float).copy(),
                     u=data.u0.astype(float).copy(), v=data.v0.astype(float).copy(),
                     u_prev=data.u0 - tau * data.v0, k=0, t=0.0, tau=tau)


def rebase(state: StepState, tau: float) -> StepState:
    """Re-express the previous displacement for a new step size, keeping ``v``."""
    if state.tau == tau:
        return state
    return replace(state, u_prev=state.u - tau * state.v, tau=tau)


# ------------------------------------------------------------------- nutrient


def nutrient_operator(grid: Grid, params: ModelParams, state: StepState):
    """Coefficient and linear operator of ``(-lap + c) sigma``, plus right side ``d``."""
    g = cm.g_of(state.phi, state.z, params.g_on)
    supply = cm.supply_rate(state.z, params.lambda_s0)
    c = 1.0 / params.tau + params.lambda_c * g + supply
    d = state.sigma / params.tau + supply * params.sigma_s
    robin0 = Robin(params.alpha, 0.0)

    def apply(x):
        return c * x - laplacian(grid, x, robin0)

    return c, d, apply


def step_nutrient(state: StepState, params: ModelParams, grid: Grid,
                  report: SolveReport | None = None) -> np.ndarray:
    c, d, apply = nutrient_operator(grid, params, state)
    robin = Robin(params.alpha, params.sigma_gamma)
    # solve for the increment so the solver error scales with the update
    r0 = d - (c * state.sigma - laplacian(grid, state.sigma, robin))
    diag = c + 2.0 / grid.hx**2 + 2.0 / grid.hy**2
    delta, rep = cg_solve(apply, r0, tol=LINEAR_TOL, max_iter=5000, precond=lambda r: r / diag)
    if report is not None:
        report.__dict__.update(rep.__dict__)
    return state.sigma + delta


# -------------------------------------------------------------- Cahn-Hilliard


@dataclass
class CahnHilliardSystem:
    """Residual pair of the discrete Cahn-Hilliard step and its Newton solver."""

    grid: Grid
    params: ModelParams
    phi_prev: np.ndarray
    mu_prev: np.ndarray
    source: np.ndarray
    h_prev: np.ndarray
    strain_load: np.ndarray  # C eps(u^{k-1}) : R
    mu_reg: float = 1.0  # 0 drops the tau * D(mu) regularisation (negative control)

    def __post_init__(self):
        self.kappa = cm.eigenstrain_stiffness(self.params)
        self.lam = neumann_eigenvalues(self.grid)

    def w_phi(self, phi):
        return -self.h_prev * (self.strain_load - self.kappa * phi)

    def residual(self, x: np.ndarray) -> np.ndarray:
        phi, mu = x
        tau, grid = self.params.tau, self.grid
        r1 = (phi - self.phi_prev) / tau - laplacian(grid, mu) - self.source \
            + self.mu_reg * (mu - self.mu_prev)
        split_now = cm.psi(phi)
        split_old = cm.psi(self.phi_prev)
        r2 = mu + laplacian(grid, phi) - split_now.convex_deriv - split_old.concave_deriv \
            - self.w_phi(phi) - (phi - self.phi_prev)
        return np.stack([r1, r2])

    def jacobian_apply(self, x: np.ndarray, dx: np.ndarray) -> np.ndarray:
        phi = x[0]
        dphi, dmu = dx
        tau, grid = self.params.tau, self.grid
        diag = cm.psi_convex_second(phi) + self.h_prev * self.kappa + 1.0
        j1 = dphi / tau - laplacian(grid, dmu) + self.mu_reg * dmu
        j2 = dmu + laplacian(grid, dphi) - diag * dphi
        return np.stack([j1, j2])

    def schur_solve(self, x: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Newton direction by eliminating ``dmu``; the reduced operator
        ``(I - lap)^{-1}/tau - lap + D`` is SPD and is preconditioned exactly in
        the cosine basis up to the spread of ``D``."""
        tau, grid, lam = self.params.tau, self.grid, self.lam
        r1, r2 = f
        diag = cm.psi_convex_second(x[0]) + self.h_prev * self.kappa + 1.0
        gamma_symbol = 1.0 / (1.0 + lam)

        def gamma(w):
            return neumann_spectral_apply(w, gamma_symbol)

        def schur(w):
            return gamma(w) / tau - laplacian(grid, w) + diag * w

        pre_symbol = 1.0 / (gamma_symbol / tau + lam + float(np.mean(diag)))
        rhs = r2 - gamma(r1)
        dphi, _ = cg_solve(schur, rhs, tol=LINEAR_TOL, max_iter=2000,
                           precond=lambda w: neumann_spectral_apply(w, pre_symbol))
        dmu = -gamma(r1 + dphi / tau)
        return np.stack([dphi, dmu])

    def solve(self, x0: np.ndarray) -> tuple[np.ndarray, SolveReport]:
        if self.mu_reg == 1.0:
            linear = self.schur_solve
        else:
            # without the mu term the block has no cheap Schur complement
            linear = dense_jacobian_solver(self.jacobian_apply)
        return newton_solve(self.residual, linear, x0, tol=NEWTON_TOL, max_iter=50)


def cahn_hilliard_system(state: StepState, sigma_new: np.ndarray, params: ModelParams,
                         grid: Grid, f: float | None = None, mu_reg: float = 1.0):
    f = params.f if f is None else f
    e_prev = sym_grad(grid, state.u)
    w_prev = cm.W_and_partials(state.phi, e_prev, state.z, params)
    source = cm.source_U(sigma_new, w_prev.W_e, state.phi, state.z, f, params)
    c_e = cm.elastic_apply(e_prev, params.lame_lambda, params.lame_mu)
    strain_load = params.r0 * (c_e[0] + c_e[1])
    return CahnHilliardSystem(grid, params, state.phi, state.mu, source,
                              cm.h_of_z(state.z, params.h_star), strain_load, mu_reg)


def step_cahn_hilliard(state: StepState, sigma_new: np.ndarray, params: ModelParams,
                       grid: Grid, f: float | None = None, mu_reg: float = 1.0,
                       report: SolveReport | None = None) -> tuple[np.ndarray, np.ndarray]:
    system = cahn_hilliard_system(state, sigma_new, params, grid, f, mu_reg)
    x, rep = system.solve(np.stack([state.phi, state.mu]))
    if report is not None:
        report.__dict__.update(rep.__dict__)
    return x[0].copy(), x[1].copy()


# --------------------------------------------------------------------- damage


@dataclass
class DamageFunctional:
    """Discrete damage functional divided by the cell area.

    Dividing by the cell area makes the gradient equal to the per-cell
    Euler-Lagrange residual.
    """

    grid: Grid
    params: ModelParams
    z_prev: np.ndarray
    strain_q: np.ndarray  # C eta : eta, eta = eps(u^{k-1}) - R phi^k

    def __post_init__(self):
        k = self.params.h_curvature
        self.linear = cm.pi_of_z(self.z_prev, self.params.c_pi) \
            + 0.5 * (-k * self.z_prev) * self.strain_q

    def value(self, z: np.ndarray) -> float:
        tau, p = self.params.tau, self.params.p
        beta_val, _ = cm.beta_tau(z, tau)
        cells = z * z / (2.0 * tau) - self.z_prev * z / tau + beta_val + self.linear * z \
            + 0.5 * cm.h_convex_value(z, self.params.h_star) * self.strain_q
        return float(np.sum(cells)) + p_energy(self.grid, z, p) / self.grid.cell_area

    def gradient(self, z: np.ndarray) -> np.ndarray:
        tau = self.params.tau
        _, beta_der = cm.beta_tau(z, tau)
        h = cm.h_split(z, self.params.h_star)
        return (z - self.z_prev) / tau + beta_der + self.linear \
            + 0.5 * h.convex_deriv * self.strain_q - p_laplacian(self.grid, z, self.params.p)

    def __call__(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        return self.value(z), self.gradient(z)

    def scaling(self, z: np.ndarray) -> np.ndarray:
        """Positive diagonal estimate of the Hessian, used to scale BB steps."""
        grid, p = self.grid, self.params.p
        g = np.zeros_like(z)
        gx = np.diff(z, axis=0) / grid.hx
        gy = np.diff(z, axis=1) / grid.hy
        mag = np.zeros_like(z)
        mag[:-1] = np.maximum(mag[:-1], np.abs(gx))
        mag[1:] = np.maximum(mag[1:], np.abs(gx))
        mag[:, :-1] = np.maximum(mag[:, :-1], np.abs(gy))
        mag[:, 1:] = np.maximum(mag[:, 1:], np.abs(gy))
        g += (p - 1.0) * mag ** (p - 2.0) * (2.0 / grid.hx**2 + 2.0 / grid.hy**2)
        return 1.0 / self.params.tau + g + 0.5 * self.params.h_curvature * self.strain_q


def damage_functional(state: StepState, phi_new: np.ndarray, params: ModelParams,
                      grid: Grid) -> DamageFunctional:
    e_prev = sym_grad(grid, state.u)
    q = cm.strain_energy_density(phi_new, e_prev, params)
    return DamageFunctional(grid, params, state.z, q)


def damage_residual(state: StepState, phi_new: np.ndarray, z: np.ndarray,
                    params: ModelParams, grid: Grid) -> np.ndarray:
    """Per-cell Euler-Lagrange residual of the damage step at ``z``."""
    return damage_functional(state, phi_new, params, grid).gradient(z)


def step_damage(state: StepState, phi_new: np.ndarray, params: ModelParams, grid: Grid,
                z_start: np.ndarray | None = None, report: SolveReport | None = None,
                tol: float = DAMAGE_TOL) -> np.ndarray:
    fun = damage_functional(state, phi_new, params, grid)
    start = state.z if z_start is None else z_start
    z, rep = minimize_convex(fun, start, tol=tol, max_iter=50000, diag=fun.scaling(state.z))
    if report is not None:
        report.__dict__.update(rep.__dict__)
    return z


# --------------------------------------------------------------- displacement


def displacement_system(state: StepState, phi_new: np.ndarray, z_new: np.ndarray,
                        params: ModelParams, grid: Grid):
    """Operator ``u - div(theta C eps(u))`` and right side of the displacement step."""
    tau = params.tau
    a = cm.a_of_z(z_new, params.a_lo, params.a_hi)
    h = cm.h_of_z(z_new, params.h_star)
    theta = tau * params.omega * a + tau**2 * h
    lam, mu_l = params.lame_lambda, params.lame_mu

    def apply(u):
        out = u - div_tensor(grid, theta * cm.elastic_apply(sym_grad(grid, u), lam, mu_l))
        return zero_boundary(out)

    growth = tau**2 * h * cm.elastic_apply(cm.eigenstrain(phi_new, params.r0), lam, mu_l)
    viscous = tau * a * params.omega * cm.elastic_apply(sym_grad(grid, state.u), lam, mu_l)
    rhs = 2.0 * state.u - state.u_prev - div_tensor(grid, growth + viscous)
    zero_boundary(rhs)
    diag = 1.0 + float(np.max(theta)) * (2.0 * mu_l + lam) * (1.0 / grid.hx**2 + 1.0 / grid.hy**2)
    return apply, rhs, diag


def step_displacement(state: StepState, phi_new: np.ndarray, z_new: np.ndarray,
                      params: ModelParams, grid: Grid,
                      report: SolveReport | None = None) -> tuple[np.ndarray, np.ndarray]:
    apply, rhs, diag = displacement_system(state, phi_new, z_new, params, grid)
    r0 = rhs - apply(state.u)
    delta, rep = cg_solve(apply, r0, tol=LINEAR_TOL, max_iter=5000, precond=lambda r: r / diag)
    if report is not None:
        report.__dict__.update(rep.__dict__)
    u = zero_boundary(state.u + delta)
    v = (u - state.u) / params.tau
    return u, v


# ------------------------------------------------------------------ full step


def treatment_mean(treatment: Callable[[float], float] | float, t0: float, t1: float) -> float:
    """Local mean of the treatment over one step."""
    if not callable(treatment):
        return float(treatment)
    value, _ = _quad.quad(treatment, t0, t1)
    return value / (t1 - t0)


def check_sigma_bounds(sigma: np.ndarray, params: ModelParams, k: int) -> None:
    lo, hi = float(sigma.min()), float(sigma.max())
    if lo < -BOUND_SLACK or hi > params.M + BOUND_SLACK:
        raise Violation(f"nutrient left [0, M] at step {k}",
                        {"field": "sigma", "min": lo, "max": hi, "M": params.M, "k": k})


def advance(state: StepState, params: ModelParams, grid: Grid,
            treatment: Callable[[float], float] | float | None = None,
            mu_reg: float = 1.0) -> tuple[StepState, dict[str, SolveReport]]:
    """Advance one step; the input state is never modified."""
    state = rebase(state, params.tau)
    tau = params.tau
    f = treatment_mean(params.f if treatment is None else treatment, state.t, state.t + tau)
    reports = {name: SolveReport() for name in ("nutrient", "cahn_hilliard", "damage", "displacement")}
    sigma = step_nutrient(state, params, grid, reports["nutrient"])
    check_sigma_bounds(sigma, params, state.k + 1)
    phi, mu = step_cahn_hilliard(state, sigma, params, grid, f, mu_reg, reports["cahn_hilliard"])
    z = step_damage(state, phi, params, grid, report=reports["damage"])
    u, v = step_displacement(state, phi, z, params, grid, reports["displacement"])
    new = StepState(phi=phi, mu=mu, sigma=sigma, z=z, u=u, v=v, u_prev=state.u,
                    k=state.k + 1, t=state.t + tau, tau=tau)
    for name in ("phi", "mu", "sigma", "z", "u", "v"):
        if not np.all(np.isfinite(new.field(name))):
            raise NonConvergence(f"non-finite values in {name} at step {new.k}")
    return new, reports


def advance_with_retry(state: StepState, params: ModelParams, grid: Grid,
                       treatment=None, retries: int = 3) -> tuple[StepState, dict]:
    """Advance one step, halving the step size on solver failure.

    A failed step is replaced by two half steps (recursively, ``retries``
    levels deep); the returned state carries the original step counter + 1.
    """
    try:
        return advance(state, params, grid, treatment)
    except NonConvergence as exc:
        if retries <= 0:
            raise
        log.warning("step %d failed (%s); retrying with tau = %g", state.k + 1, exc, params.tau / 2)
    half = params.with_tau(params.tau / 2)
    mid, _ = advance_with_retry(state, half, grid, treatment, retries - 1)
    end, reports = advance_with_retry(mid, half, grid, treatment, retries - 1)
    return replace(end, k=state.k + 1), reports


def iterate(state: StepState, params: ModelParams, grid: Grid, n_steps: int,
            treatment=None, retry: bool = True) -> Iterator[tuple[StepState, dict]]:
    step = advance_with_retry if retry else advance
    for _ in range(n_steps):
        state, reports = step(state, params, grid, treatment)
        yield state, reports


def steps_for(T: float, tau: float) -> int:
    n = T / tau
    k = round(n)
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise ValueError(f"T = {T} is not an integer multiple of tau = {tau}")
    return int(k)


# ---------------------------------------------------------------- interpolants


def interpolants(history: Sequence[np.ndarray], t: float, tau: float):
    """Piecewise-constant, retarded and piecewise-linear interpolants at ``t``."""
    n = len(history) - 1
    T = n * tau
    if n < 1 or t < 0.0 or t > T * (1.0 + 1e-12):
        raise OutOfRange(f"t = {t} outside [0, {T}]")
    s = t / tau
    k = round(s) if abs(s - round(s)) < 1e-9 else math.ceil(s)
    k = min(max(int(k), 1), n)
    w_k, w_km1 = history[k], history[k - 1]
    theta = (t - (k - 1) * tau) / tau
    return w_k, w_km1, theta * w_k + (1.0 - theta) * w_km1
