"""Discrete energy budget, invariant checks and time-step refinement studies."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import constitutive as cm
from .constitutive import ModelParams
from .errors import Violation
from .grid import (Grid, Robin, dirichlet_energy, face_pairing, grad_faces, integrate,
                   node_inner, p_energy, robin_effective_alpha, sym_grad)
from .stepper import BOUND_SLACK, InitialData, StepState, initialize, iterate, steps_for


@dataclass(frozen=True)
class EnergyBreakdown:
    grad_phi: float
    well: float
    nutrient: float
    kinetic: float
    damage_grad: float
    constraint: float
    perturb: float
    elastic: float
    mu_reg: float
    total: float
    dissipation: float = 0.0

    ADDENDS = ("grad_phi", "well", "nutrient", "kinetic", "damage_grad",
               "constraint", "perturb", "elastic", "mu_reg")

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.passed


def dissipation(prev: StepState, state: StepState, params: ModelParams, grid: Grid) -> float:
    """Dissipation of the step ``prev -> state`` (every term a square or coercive form)."""
    tau = params.tau
    gmu = grad_faces(grid, state.mu)
    gsig = grad_faces(grid, state.sigma)
    terms = [tau * face_pairing(grid, gmu, gmu),
             integrate(grid, (state.phi - prev.phi) ** 2),
             tau * face_pairing(grid, gsig, gsig)]
    if params.alpha > 0.0:
        ax = robin_effective_alpha(params.alpha, grid.hx)
        ay = robin_effective_alpha(params.alpha, grid.hy)
        s = state.sigma
        edge = ay * grid.hx * (np.sum(s[:, 0] ** 2) + np.sum(s[:, -1] ** 2)) \
            + ax * grid.hy * (np.sum(s[0] ** 2) + np.sum(s[-1] ** 2))
        terms.append(tau * float(edge))
    ev = sym_grad(grid, state.v)
    a = cm.a_of_z(state.z, params.a_lo, params.a_hi)
    visc = cm.elastic_apply(ev, params.lame_lambda, params.lame_mu)
    terms.append(tau * params.omega * integrate(grid, a * (visc[0] * ev[0] + visc[1] * ev[1]
                                                           + 2.0 * visc[2] * ev[2])))
    terms.append(integrate(grid, (state.z - prev.z) ** 2) / tau)
    return float(sum(terms))


def energy(state: StepState, params: ModelParams, grid: Grid,
           prev: StepState | None = None) -> EnergyBreakdown:
    tau = params.tau
    parts = dict(
        grad_phi=dirichlet_energy(grid, state.phi),
        well=integrate(grid, cm.psi(state.phi).value),
        nutrient=0.5 * integrate(grid, state.sigma**2),
        kinetic=0.5 * node_inner(grid, state.v, state.v),
        damage_grad=p_energy(grid, state.z, params.p),
        constraint=integrate(grid, cm.beta_tau(state.z, tau)[0]),
        perturb=integrate(grid, cm.pi_hat(state.z, params.c_pi)),
        elastic=integrate(grid, cm.W_and_partials(state.phi, sym_grad(grid, state.u),
                                                  state.z, params).W),
        mu_reg=0.5 * tau * integrate(grid, state.mu**2),
    )
    total = 0.0
    for name in EnergyBreakdown.ADDENDS:
        total += parts[name]
    diss = dissipation(prev, state, params, grid) if prev is not None else 0.0
    return EnergyBreakdown(**parts, total=total, dissipation=diss)


def energy_tolerance(total_prev: float) -> float:
    return 1e-8 * (1.0 + abs(total_prev))


def check_energy_step(prev: EnergyBreakdown, nxt: EnergyBreakdown, k: int,
                      raise_on_fail: bool = True) -> Verdict:
    """``total_k + dissipation_k <= total_{k-1} + tol`` (meaningful with sources off)."""
    slack = prev.total + energy_tolerance(prev.total) - (nxt.total + nxt.dissipation)
    verdict = Verdict("energy", slack >= 0.0, {"k": k, "slack": slack, "total": nxt.total,
                                               "dissipation": nxt.dissipation})
    if not verdict.passed and raise_on_fail:
        raise Violation(f"energy increased at step {k}", verdict.detail)
    return verdict


def check_bounds(state: StepState, params: ModelParams, raise_on_fail: bool = True) -> Verdict:
    """Assert ``0 <= sigma <= M``; report how far ``z`` leaves [0, 1] in units of tau."""
    s = state.sigma
    lo, hi = float(s.min()), float(s.max())
    ok = lo >= -BOUND_SLACK and hi <= params.M + BOUND_SLACK
    excursion = max(0.0, -float(state.z.min()), float(state.z.max()) - 1.0)
    detail = {"k": state.k, "sigma_min": lo, "sigma_max": hi, "M": params.M,
              "z_min": float(state.z.min()), "z_max": float(state.z.max()),
              "C_z": excursion / params.tau}
    if not ok:
        where = np.unravel_index(int(np.argmin(s) if lo < -BOUND_SLACK else np.argmax(s)), s.shape)
        detail.update(field="sigma", extremum=lo if lo < -BOUND_SLACK else hi,
                      location=tuple(int(i) for i in where))
        if raise_on_fail:
            raise Violation("nutrient outside [0, M]", detail)
    return Verdict("bounds", ok, detail)


def modified_mass(state: StepState, grid: Grid, tau: float) -> float:
    return (integrate(grid, state.phi) + tau * integrate(grid, state.mu)) / grid.area


# ------------------------------------------------------------------ tau study


@dataclass(frozen=True)
class CauchyTable:
    taus: tuple[float, ...]
    distances: tuple[float, ...]
    ratios: tuple[float, ...]

    def rows(self) -> list[dict[str, float]]:
        out = []
        for i, d in enumerate(self.distances):
            out.append({"tau_coarse": self.taus[i], "tau_fine": self.taus[i + 1], "distance": d,
                        "ratio": self.ratios[i - 1] if i > 0 else float("nan")})
        return out


def piecewise_linear_distance(coarse: Sequence[np.ndarray], fine: Sequence[np.ndarray],
                              tau_fine: float, cell_area: float) -> float:
    """Exact ``L^2(0,T; L^2)`` distance of two piecewise-linear interpolants.

    ``coarse`` lives on every second node of ``fine``; both are linear on each
    fine interval, so the squared difference integrates in closed form.
    """
    if len(fine) != 2 * (len(coarse) - 1) + 1:
        raise ValueError("fine history must have twice the intervals of the coarse one")
    diffs = []
    for j, w in enumerate(fine):
        c = coarse[j // 2] if j % 2 == 0 else 0.5 * (coarse[j // 2] + coarse[j // 2 + 1])
        diffs.append(w - c)
    total = 0.0
    for a, b in zip(diffs[:-1], diffs[1:]):
        total += (np.vdot(a, a) + np.vdot(a, b) + np.vdot(b, b)) * cell_area * tau_fine / 3.0
    return float(np.sqrt(total))


def _history(data: InitialData, params: ModelParams, grid: Grid, T: float,
             field_name: str, treatment=None) -> list[np.ndarray]:
    state = initialize(data, params, grid)
    out = [state.field(field_name).copy()]
    for state, _ in iterate(state, params, grid, steps_for(T, params.tau), treatment):
        out.append(state.field(field_name).copy())
    return out


def tau_refinement_study(data: InitialData | Callable[[ModelParams], InitialData],
                         params: ModelParams, grid: Grid, taus: Sequence[float], T: float,
                         field_name: str = "phi", treatment=None) -> CauchyTable:
    """Cauchy distances between successive halvings of ``tau``.

    ``data`` may be a callable of the params for data that depend on tau.
    """
    taus = tuple(float(t) for t in taus)
    for a, b in zip(taus[:-1], taus[1:]):
        if abs(a - 2.0 * b) > 1e-12 * a:
            raise ValueError("tau list must be a halving sequence")
    histories = []
    for tau in taus:
        p = params.with_tau(tau)
        d = data(p) if callable(data) else data
        histories.append(_history(d, p, grid, T, field_name, treatment))
    distances = tuple(piecewise_linear_distance(histories[i], histories[i + 1], taus[i + 1],
                                                grid.cell_area)
                      for i in range(len(taus) - 1))
    ratios = tuple(distances[i] / distances[i + 1] for i in range(len(distances) - 1))
    return CauchyTable(taus, distances, ratios)


def energy_columns() -> list[str]:
    return ["k", "t", *EnergyBreakdown.ADDENDS, "total", "dissipation", "verdict"]


def breakdown_fields() -> list[str]:
    return [f.name for f in fields(EnergyBreakdown)]
