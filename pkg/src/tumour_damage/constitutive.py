"""Model functions: potentials, splittings, sources and the elastic energy.

All functions are vectorised over numpy arrays.  Symmetric 2x2 tensors are
passed as arrays whose leading axis holds ``(e11, e22, e12)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .grid import contract

# sup |q''| of the quintic ramp, attained at t = (3 -+ sqrt(3)) / 6
RAMP_CURVATURE = 10.0 * math.sqrt(3.0) / 3.0


@dataclass(frozen=True)
class ModelParams:
    """Constitutive constants; sign constraints are checked on construction."""

    lambda_p: float = 0.5
    lambda_a: float = 0.1
    lambda_c: float = 1.0
    lambda_s0: float = 1.0
    sigma_s: float = 1.0
    sigma_gamma: float = 1.0
    alpha: float = 1.0
    f: float = 0.0
    lame_lambda: float = 1.0
    lame_mu: float = 1.0
    omega: float = 1.0
    a_lo: float = 1.0
    a_hi: float = 2.0
    h_star: float = 1.0
    r0: float = 0.05
    p: float = 3.0
    c_pi: float = 0.1
    tau: float = 1e-3
    g_on: bool = True

    def __post_init__(self):
        for name in ("lambda_p", "lambda_a", "lambda_c", "lambda_s0", "sigma_s",
                     "sigma_gamma", "alpha", "lame_lambda", "c_pi", "h_star"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValidationError(name, f"{name} >= 0 and finite", value)
        for name in ("f", "r0"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(name, f"{name} finite", getattr(self, name))
        for name in ("lame_mu", "omega", "tau"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValidationError(name, f"{name} > 0", value)
        if not 0.0 < self.a_lo <= self.a_hi or not math.isfinite(self.a_hi):
            raise ValidationError("a_lo", "0 < a_lo <= a_hi", (self.a_lo, self.a_hi))
        if not (math.isfinite(self.p) and self.p > 2.0):
            raise ValidationError("p", "p > 2", self.p)

    @property
    def M(self) -> float:
        return max(self.sigma_s, self.sigma_gamma)

    @property
    def h_curvature(self) -> float:
        """``sup |h''|`` used by the convex-concave split of ``h``."""
        return self.h_star * RAMP_CURVATURE

    def sources_off(self) -> "ModelParams":
        """Switch off every term that feeds the right-hand side of the energy balance."""
        return replace(self, g_on=False, lambda_s0=0.0, alpha=0.0, c_pi=0.0, f=0.0)

    def with_tau(self, tau: float) -> "ModelParams":
        return replace(self, tau=tau)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class Split(NamedTuple):
    """Value of ``s = convex + concave`` and the derivatives of both parts."""

    value: np.ndarray
    convex_deriv: np.ndarray
    concave_deriv: np.ndarray

    @property
    def deriv(self):
        return self.convex_deriv + self.concave_deriv


# ------------------------------------------------------------------ potentials


def psi(r):
    """Quartic double well split as ``r^4/4`` (convex) plus ``1/4 - r^2/2``."""
    r = np.asarray(r, dtype=float)
    return Split(0.25 * (1.0 - r * r) ** 2, r**3, -r)


def psi_convex_second(r):
    return 3.0 * np.asarray(r, dtype=float) ** 2


def ramp(t):
    """C^2 quintic ramp, 0 below 0 and 1 above 1."""
    s = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def ramp_deriv(t):
    s = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return 30.0 * s * s * (1.0 - s) ** 2


def ramp_second(t):
    s = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)


def h_of_z(z, h_star: float):
    return h_star * ramp(z)


def h_deriv(z, h_star: float):
    return h_star * ramp_deriv(z)


def h_split(z, h_star: float):
    """Split ``h = h_convex + h_concave`` with ``h_concave = -K z^2 / 2``."""
    z = np.asarray(z, dtype=float)
    k = h_star * RAMP_CURVATURE
    return Split(h_of_z(z, h_star), h_deriv(z, h_star) + k * z, -k * z)


def h_convex_value(z, h_star: float):
    z = np.asarray(z, dtype=float)
    return h_of_z(z, h_star) + 0.5 * h_star * RAMP_CURVATURE * z * z


def a_of_z(z, a_lo: float, a_hi: float):
    return a_lo + (a_hi - a_lo) * ramp(z)


def beta_tau(z, tau: float):
    """Moreau-Yosida envelope of the indicator of [0, 1] and its derivative."""
    z = np.asarray(z, dtype=float)
    gap = z - np.clip(z, 0.0, 1.0)
    return gap * gap / (2.0 * tau), gap / tau


def beta_hat(z):
    """Indicator of [0, 1]: 0 inside, +inf outside."""
    z = np.asarray(z, dtype=float)
    return np.where((z >= 0.0) & (z <= 1.0), 0.0, np.inf)


def pi_of_z(z, c_pi: float):
    return -c_pi * np.asarray(z, dtype=float)


def pi_hat(z, c_pi: float):
    z = np.asarray(z, dtype=float)
    return -0.5 * c_pi * z * z


def g_of(phi, z=None, on: bool = True):
    """Tumour indicator: 0 at phi = -1, 1 at phi = 1.  ``z`` is accepted for
    future damage dependence and ignored."""
    phi = np.asarray(phi, dtype=float)
    if not on:
        return np.zeros_like(phi)
    return np.clip(0.5 * (1.0 + phi), 0.0, 1.0)


def supply_rate(z, lambda_s0: float):
    return lambda_s0 * np.clip(np.asarray(z, dtype=float), 0.0, 1.0)


# ------------------------------------------------------------------ elasticity


def _as_tensor(e) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    if e.shape[0] != 3:
        raise ValueError("symmetric tensors are passed as (e11, e22, e12)")
    return e


def elastic_apply(e, lame_lambda: float, lame_mu: float) -> np.ndarray:
    e = _as_tensor(e)
    tr = e[0] + e[1]
    return np.stack([2.0 * lame_mu * e[0] + lame_lambda * tr,
                     2.0 * lame_mu * e[1] + lame_lambda * tr,
                     2.0 * lame_mu * e[2]])


def frobenius(t) -> np.ndarray:
    t = _as_tensor(t)
    return np.sqrt(contract(t, t))


def eigenstrain(phi, r0: float) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    rp = r0 * phi
    return np.stack([rp, rp, np.zeros_like(rp)])


class ElasticTerms(NamedTuple):
    W: np.ndarray
    W_phi: np.ndarray
    W_e: np.ndarray
    W_z: np.ndarray


def W_and_partials(phi, e, z, params: ModelParams) -> ElasticTerms:
    """Elastic energy ``h(z)/2 C(e - R phi):(e - R phi)`` and its partials."""
    e = _as_tensor(e)
    eta = e - eigenstrain(phi, params.r0)
    c_eta = elastic_apply(eta, params.lame_lambda, params.lame_mu)
    q = contract(c_eta, eta)
    hz = h_of_z(z, params.h_star)
    # C eta : R with R = r0 I
    c_eta_r = params.r0 * (c_eta[0] + c_eta[1])
    return ElasticTerms(0.5 * hz * q, -hz * c_eta_r, hz * c_eta,
                        0.5 * h_deriv(z, params.h_star) * q)


def strain_energy_density(phi, e, params: ModelParams) -> np.ndarray:
    """``C eta : eta`` with ``eta = e - R phi`` (the damage driving term)."""
    eta = _as_tensor(e) - eigenstrain(phi, params.r0)
    return contract(elastic_apply(eta, params.lame_lambda, params.lame_mu), eta)


def eigenstrain_stiffness(params: ModelParams) -> float:
    """``C R : R`` for ``R = r0 I``."""
    return 4.0 * (params.lame_lambda + params.lame_mu) * params.r0**2


# --------------------------------------------------------------------- sources


def source_U(sigma, W_e_prev, phi_prev, z_prev, f, params: ModelParams):
    mech = frobenius(W_e_prev)
    g = g_of(phi_prev, z_prev, params.g_on)
    return (params.lambda_p * np.asarray(sigma) / (1.0 + mech) - params.lambda_a + f) * g


def source_S(sigma, phi_prev, z_prev, sigma_s, params: ModelParams):
    g = g_of(phi_prev, z_prev, params.g_on)
    sigma = np.asarray(sigma, dtype=float)
    return -params.lambda_c * sigma * g + supply_rate(z_prev, params.lambda_s0) * (sigma_s - sigma)
