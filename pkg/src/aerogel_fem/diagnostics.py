"""Mixture-level aggregates and phase mass-balance residuals for post-processing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constitutive import MechParams, ThermalParams, elastic_stress, knudsen_conductivity
from .errors import InvalidInput
from .mechanics import MechState, element_divergence, element_strains
from .mesh import Mesh
from .thermal import ThermalState


@dataclass
class MixtureSummary:
    density: np.ndarray  # (...,)
    velocity: np.ndarray  # (..., 2)
    diffusion_velocities: np.ndarray  # (3, ..., 2)
    stress: np.ndarray  # (..., 2, 2)
    heat_flux: np.ndarray  # (..., 2)
    body_force: np.ndarray  # (..., 2), zero: no body forces in the solved systems
    heat_supply: np.ndarray  # (...,), zero

    def diffusion_momentum(self, rho, phi) -> np.ndarray:
        """sum_a rho_a phi_a p_a, which vanishes by construction."""
        w = _weights(rho, phi, self.density.shape)
        return np.sum(w[..., None] * self.diffusion_velocities, axis=0)


def _weights(rho, phi, shape):
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    w = rho * phi if rho.shape == phi.shape else None
    if w is None:
        raise InvalidInput(f"density shape {rho.shape} does not match volume-fraction shape {phi.shape}")
    if w.shape[0] != 3:
        raise InvalidInput("expected three phases on the leading axis")
    return w.reshape((3,) + (1,) * len(shape)) if w.ndim == 1 else w


def mixture_aggregates(rho, phi, velocities, stresses, heat_fluxes, energies) -> MixtureSummary:
    """Mixture density, velocity, stress and heat flux from per-phase fields.

    ``rho`` and ``phi`` have shape (3,) or (3, ...); ``velocities`` (3, ..., 2),
    ``stresses`` (3, ..., 2, 2), ``heat_fluxes`` (3, ..., 2), ``energies`` (3, ...).
    """
    v = np.asarray(velocities, dtype=float)
    S = np.asarray(stresses, dtype=float)
    q = np.asarray(heat_fluxes, dtype=float)
    eps = np.asarray(energies, dtype=float)
    pts = v.shape[1:-1]
    if S.shape[:-2] != v.shape[:-1] or q.shape != v.shape or eps.shape != v.shape[:-1]:
        raise InvalidInput("phase fields are not defined on the same set of points")
    w = np.broadcast_to(_weights(rho, phi, pts), (3,) + pts)

    density = w.sum(axis=0)
    velocity = np.sum(w[..., None] * v, axis=0) / density[..., None]
    p = v - velocity[None]
    stress = np.sum(S - w[..., None, None] * np.einsum("a...i,a...j->a...ij", p, p), axis=0)
    heat = np.sum(
        q
        - np.einsum("a...ji,a...j->a...i", S, p)
        + (w * eps)[..., None] * p
        + 0.5 * w[..., None] * p * np.sum(p * p, axis=-1, keepdims=True),
        axis=0,
    )
    return MixtureSummary(density, velocity, p, stress, heat, np.zeros_like(velocity), np.zeros_like(density))


def phase_fields(mesh: Mesh, mech_prev: MechState, mech_next: MechState, thermal: ThermalState,
                 mech: MechParams, therm: ThermalParams, dt: float) -> dict:
    """Per-element phase quantities from solver states, ready for :func:`mixture_aggregates`.

    Solid velocities are backward differences of the displacements; the gas
    velocity follows from the Darcy flux G = phi_g v_g.
    """
    n = mesh.n_nodes
    for name, arr in (("p", mech_next.p), ("u_s", mech_prev.u_s), ("theta", thermal.theta[0])):
        if arr.shape[0] != n:
            raise InvalidInput(f"field {name} has {arr.shape[0]} nodes, mesh has {n}")
    el = mesh.elements
    p = mech_next.p[el].mean(axis=1)
    v_s = (mech_next.u_s - mech_prev.u_s)[el].mean(axis=1) / dt
    v_f = (mech_next.u_f - mech_prev.u_f)[el].mean(axis=1) / dt
    v_g = mech_next.G / mech.phi_g
    I = np.eye(2)
    T_s = -mech.phi_s * p[:, None, None] * I + elastic_stress(element_strains(mesh, mech_next.u_s), mech.lambda_s, mech.mu_s)
    T_g = -mech.phi_g * p[:, None, None] * I
    T_f = -mech.phi_f * p[:, None, None] * I + elastic_stress(element_strains(mesh, mech_next.u_f), mech.lambda_f, mech.mu_f)
    c = mesh.centroids
    kappa = [
        np.full(len(el), therm.kappa_s),
        knudsen_conductivity(therm.pore_size(c[:, 0], c[:, 1]), therm.l_g, therm.beta, therm.kappa_bg),
        np.full(len(el), therm.kappa_f),
    ]
    phi_t = therm.phi
    grads = [np.einsum("eak,ea->ek", mesh.gradients, thermal.theta[a][el]) for a in range(3)]
    q = np.stack([-phi_t[a] * kappa[a][:, None] * grads[a] for a in range(3)])
    theta_c = thermal.theta[:, el].mean(axis=2)
    cap = np.array([therm.c_s, therm.c_g, therm.c_f])
    return {
        "rho": np.array([therm.rho_s, therm.rho_g, therm.rho_f]),
        "phi": np.array([mech.phi_s, mech.phi_g, mech.phi_f]),
        "velocities": np.stack([v_s, v_g, v_f]),
        "stresses": np.stack([T_s, T_g, T_f]),
        "heat_fluxes": q,
        "energies": cap[:, None] * theta_c,
    }


def evolve_volume_fractions(mesh: Mesh, phi_n: np.ndarray, state_n: MechState, state_next: MechState) -> np.ndarray:
    """Per-element fractions (3, n_el) at the next level that satisfy the discrete solid mass balances exactly."""
    ds = element_divergence(mesh, state_next.u_s - state_n.u_s)
    df = element_divergence(mesh, state_next.u_f - state_n.u_f)
    phi_n = np.broadcast_to(np.asarray(phi_n, dtype=float).reshape(3, -1), (3, mesh.n_elements))
    s = phi_n[0] / (1.0 + ds)
    f = phi_n[2] / (1.0 + df)
    return np.stack([s, 1.0 - s - f, f])


def mass_balance_residual(mesh: Mesh, states, phis, dt: float) -> np.ndarray:
    """Backward-difference residuals (3, n_el) of the skeleton, gas and fiber volume balances.

    ``states`` and ``phis`` hold two consecutive levels; ``phis[k]`` has shape (3,) or (3, n_el).
    """
    if len(states) != 2 or len(phis) != 2:
        raise InvalidInput("need exactly two consecutive levels")
    s0, s1 = states
    p0, p1 = (np.broadcast_to(np.asarray(p, dtype=float).reshape(3, -1), (3, mesh.n_elements)) for p in phis)
    div_vs = element_divergence(mesh, s1.u_s - s0.u_s) / dt
    div_vf = element_divergence(mesh, s1.u_f - s0.u_f) / dt
    r_s = (p1[0] - p0[0]) / dt + p1[0] * div_vs
    r_f = (p1[2] - p0[2]) / dt + p1[2] * div_vf
    r_g = (p1[1] - p0[1]) / dt - (p1[0] * div_vs + p1[2] * div_vf)
    return np.stack([r_s, r_g, r_f])


def flag_incompatible(residual: np.ndarray, tol: float) -> np.ndarray:
    """Boolean (3,) per phase: True where some element residual exceeds ``tol``."""
    return np.abs(residual).max(axis=1) > tol
