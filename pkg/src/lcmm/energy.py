"""Landau-de Gennes bulk free energy and its derivatives.

The bulk density is F_b = F_t + F_e + F_u with

    F_t = (A/2) tr Q^2 - (B/3) sqrt(6) tr Q^3 + (C/4) (tr Q^2)^2
    F_e = (L/2) sum_ijk (dQ_ij/dx_k)^2
    F_u = -(eps0/2) (eps_bar |E|^2 + eps_a E.Q E) - e_flexo (div Q).E

For a uniaxial state tr Q^2 = S^2 and sqrt(6) tr Q^3 = S^3, so the
thermotropic part restricted to uniaxial states is
g(S) = A S^2/2 - B S^3/3 + C S^4/4.

Gradients and fields are two-dimensional; they live in the plane of tensor
axes 1 and 3 (see :data:`lcmm.qtensor.PLANE_AXES`). Array conventions:
``q`` is (..., 5), ``grad_q`` is (..., 5, 2) with ``grad_q[..., i, k] =
d q_i / d x_k``, and ``E`` is (..., 2).

All formulas are unit-agnostic: :meth:`MaterialParams.nondimensional`
returns a parameter set with eps0 = 1 and nu = 1 in which lengths are in
units of the coherence length, energy densities in units of C S_eq^2 and
time in units of nu / (C S_eq^2).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import qtensor as qt

EPS0_SI = 8.8541878128e-12


@dataclass(frozen=True)
class MaterialParams:
    A: float
    B: float
    C: float
    L: float
    eps_bar: float = 0.0
    eps_a: float = 0.0
    e_flexo: float = 0.0
    nu: float = 1.0
    eps0: float = EPS0_SI

    def __post_init__(self):
        if not (self.nu > 0 and self.C > 0 and self.L > 0):
            raise ValueError("material parameters require nu > 0, C > 0, L > 0")
        disc = self.B * self.B - 4.0 * self.A * self.C
        if disc < 0:
            raise ValueError("thermotropic potential has no nematic minimum (B^2 < 4AC)")
        S = self.S_eq
        g1 = self.A * S - self.B * S * S + self.C * S**3
        if abs(g1) > 1e-10 * max(abs(self.A), abs(self.B), abs(self.C)):
            raise ValueError("S_eq self-consistency check failed")

    @property
    def S_eq(self) -> float:
        """Nematic minimiser of g(S); root of A - B S + C S^2 = 0."""
        return (self.B + np.sqrt(self.B * self.B - 4.0 * self.A * self.C)) / (2.0 * self.C)

    @property
    def energy_scale(self) -> float:
        return self.C * self.S_eq**2

    @property
    def zeta(self) -> float:
        """Nematic coherence length sqrt(L / (C S_eq^2))."""
        return np.sqrt(self.L / self.energy_scale)

    @property
    def time_scale(self) -> float:
        return self.nu / self.energy_scale

    @property
    def potential_scale(self) -> float:
        return self.zeta * np.sqrt(self.energy_scale / self.eps0)

    def nondimensional(self) -> "MaterialParams":
        e0 = self.energy_scale
        z = self.zeta
        u0 = self.potential_scale
        return MaterialParams(
            A=self.A / e0,
            B=self.B / e0,
            C=self.C / e0,
            L=self.L / (e0 * z * z),
            eps_bar=self.eps_bar,
            eps_a=self.eps_a,
            e_flexo=self.e_flexo * u0 / (z * z * e0),
            nu=1.0,
            eps0=1.0,
        )

    def with_(self, **kw) -> "MaterialParams":
        return replace(self, **kw)


def calibrate_profile(
    S_eq: float = 0.65,
    zeta: float = 4.06e-9,
    C: float = 4.0e6,
    b_ratio: float = 0.8,
    delta_eps: float = 11.5,
    eps_bar: float = 11.0,
    gamma1: float = 0.0777,
    e_flexo: float = 0.0,
) -> MaterialParams:
    """Build a parameter set hitting a target S_eq and coherence length.

    ``b_ratio`` = B / (C S_eq) fixes the shape of the Landau potential, after
    which A = S_eq (B - C S_eq) and L = zeta^2 C S_eq^2. The dielectric
    anisotropy is chosen so that the eigenvalue gap of eps_a Q at S_eq equals
    ``delta_eps``; nu = gamma1 / (3 S_eq^2) matches the rotational viscosity of
    a uniaxial state.
    """
    B = b_ratio * C * S_eq
    A = S_eq * (B - C * S_eq)
    L = zeta * zeta * C * S_eq * S_eq
    eps_a = delta_eps / (qt.SQRT3_2 * S_eq)
    nu = gamma1 / (3.0 * S_eq * S_eq)
    return MaterialParams(A=A, B=B, C=C, L=L, eps_bar=eps_bar, eps_a=eps_a, e_flexo=e_flexo, nu=nu)


# the shipped 5CB-like profile; values are calibrated, not measured
FIVE_CB = calibrate_profile()


def thermotropic_density(q, p: MaterialParams) -> np.ndarray:
    t2 = qt.trace_q2(q)
    t3 = qt.trace_q3(q)
    return 0.5 * p.A * t2 - (p.B / 3.0) * qt.SQRT6 * t3 + 0.25 * p.C * t2 * t2


def elastic_density(grad_q, p: MaterialParams) -> np.ndarray:
    g = np.asarray(grad_q, dtype=float)
    g1, g2, g3, g4, g5 = (g[..., i, :] for i in range(5))
    s = g1 * g1 + g1 * g4 + g4 * g4 + g2 * g2 + g3 * g3 + g5 * g5
    return p.L * s.sum(axis=-1)


def _plane_QE(q, E):
    q = np.asarray(q, dtype=float)
    qxx = q[..., 0]
    qxy = q[..., 2]
    qyy = -q[..., 0] - q[..., 3]
    Ex, Ey = E[..., 0], E[..., 1]
    return np.stack([qxx * Ex + qxy * Ey, qxy * Ex + qyy * Ey], axis=-1)


def _plane_divergence(grad_q) -> np.ndarray:
    g = np.asarray(grad_q, dtype=float)
    dx = g[..., 0, 0] + g[..., 2, 1]
    dy = g[..., 2, 0] - g[..., 0, 1] - g[..., 3, 1]
    return np.stack([dx, dy], axis=-1)


def electrostatic_density(q, grad_q, E, p: MaterialParams) -> np.ndarray:
    E = np.asarray(E, dtype=float)
    EE = (E * E).sum(axis=-1)
    EQE = (E * _plane_QE(q, E)).sum(axis=-1)
    flexo = (_plane_divergence(grad_q) * E).sum(axis=-1)
    return -0.5 * p.eps0 * (p.eps_bar * EE + p.eps_a * EQE) - p.e_flexo * flexo


def bulk_density(q, grad_q, E, p: MaterialParams) -> np.ndarray:
    return thermotropic_density(q, p) + elastic_density(grad_q, p) + electrostatic_density(q, grad_q, E, p)


def displacement(q, grad_q, E, p: MaterialParams) -> np.ndarray:
    """D = -dF_u/dE = eps0 (eps_bar E + eps_a Q E) + e_flexo div Q."""
    E = np.asarray(E, dtype=float)
    return p.eps0 * (p.eps_bar * E + p.eps_a * _plane_QE(q, E)) + p.e_flexo * _plane_divergence(grad_q)


def thermotropic_gradient(q, p: MaterialParams) -> np.ndarray:
    t2 = qt.trace_q2(q)[..., None]
    return (0.5 * p.A + 0.5 * p.C * t2) * qt.grad_trace_q2(q) - p.B * qt.SQRT6 * qt.grad_determinant(q)


def thermotropic_hessian(q, p: MaterialParams) -> np.ndarray:
    t2 = qt.trace_q2(q)[..., None, None]
    g2 = qt.grad_trace_q2(q)
    return (
        (0.5 * p.A + 0.5 * p.C * t2) * qt.HESS_TRACE_Q2
        + 0.5 * p.C * g2[..., :, None] * g2[..., None, :]
        - p.B * qt.SQRT6 * qt.hess_determinant(q)
    )


def bulk_derivatives(q, grad_q, E, p: MaterialParams):
    """Exact partials (f_hat, Gamma_hat) of the bulk density.

    Returns ``f_hat`` (..., 5) = dF_b/dq_i and ``gamma_hat`` (..., 5, 2) =
    dF_b/d(grad q_i).
    """
    q = np.asarray(q, dtype=float)
    g = np.asarray(grad_q, dtype=float)
    E = np.asarray(E, dtype=float)
    f = thermotropic_gradient(q, p)

    Ex, Ey = E[..., 0], E[..., 1]
    c = 0.5 * p.eps0 * p.eps_a
    f[..., 0] -= c * (Ex * Ex - Ey * Ey)
    f[..., 2] -= 2.0 * c * Ex * Ey
    f[..., 3] += c * Ey * Ey

    G = np.empty(g.shape)
    G[..., 0, :] = p.L * (2.0 * g[..., 0, :] + g[..., 3, :])
    G[..., 3, :] = p.L * (g[..., 0, :] + 2.0 * g[..., 3, :])
    for i in (1, 2, 4):
        G[..., i, :] = 2.0 * p.L * g[..., i, :]
    e = p.e_flexo
    if e != 0.0:
        G[..., 0, 0] -= e * Ex
        G[..., 0, 1] += e * Ey
        G[..., 2, 0] -= e * Ey
        G[..., 2, 1] -= e * Ex
        G[..., 3, 1] += e * Ey
    return f, G


def _check_nu(nu: float) -> None:
    if not nu > 0:
        raise ValueError("viscosity nu must be positive")


def mixing_matrix(nu: float) -> np.ndarray:
    """Linear map from hatted to rescaled quantities (inverse of the dissipation form)."""
    _check_nu(nu)
    Mx = np.diag([0.0, 0.5, 0.5, 0.0, 0.5]) / nu
    Mx[0, 0] = Mx[3, 3] = 2.0 / (3.0 * nu)
    Mx[0, 3] = Mx[3, 0] = -1.0 / (3.0 * nu)
    return Mx


def scaled_rhs(f_hat, gamma_hat, p: MaterialParams):
    """Apply the dissipation inverse: (f_hat, Gamma_hat) -> (f, Gamma)."""
    nu = p.nu if isinstance(p, MaterialParams) else float(p)
    Mx = mixing_matrix(nu)
    f = np.einsum("ij,...j->...i", Mx, np.asarray(f_hat, dtype=float))
    G = np.einsum("ij,...jk->...ik", Mx, np.asarray(gamma_hat, dtype=float))
    return f, G


def uniaxial_potential(S, p: MaterialParams):
    S = np.asarray(S, dtype=float)
    return 0.5 * p.A * S**2 - p.B * S**3 / 3.0 + 0.25 * p.C * S**4
