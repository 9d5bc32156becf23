"""Pointwise material laws for the skeleton/gas/fiber composite.

All functions broadcast over leading axes, so they work on a single
tensor or on a stack of quadrature-point values.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import InvalidArgument

PHASES = ("s", "g", "f")


@dataclass(frozen=True)
class MechParams:
    """Mechanical coefficients in SI units (Pa, m^2, 1/Pa)."""

    phi_s: float
    phi_g: float
    phi_f: float
    lambda_s: float
    mu_s: float
    lambda_f: float
    mu_f: float
    chi_0: float
    eps_strain: float
    C0: float
    k: float
    gamma_s: float = 0.0
    gamma_f: float = 0.0

    def violations(self) -> list:
        out = []
        total = self.phi_s + self.phi_g + self.phi_f
        if abs(total - 1.0) > 1e-12:
            out.append(f"volume fractions sum to {total!r}, expected 1")
        for name in ("phi_s", "phi_g", "phi_f"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                out.append(f"{name} = {v} outside [0, 1]")
        for name in ("lambda_s", "lambda_f", "chi_0", "eps_strain", "C0", "k", "gamma_s", "gamma_f"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be non-negative")
        for name in ("mu_s", "mu_f"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                out.append(f"{f.name} is not finite")
        return out

    def validate(self) -> "MechParams":
        bad = self.violations()
        if bad:
            raise InvalidArgument("; ".join(bad))
        return self


@dataclass(frozen=True)
class PoreSize:
    """Affine pore-size field omega(x, y) = origin + slope_x * x + slope_y * y, in meters."""

    origin: float
    slope_x: float = 0.0
    slope_y: float = 0.0

    def __call__(self, x, y):
        return self.origin + self.slope_x * np.asarray(x) + self.slope_y * np.asarray(y)

    def min_on_rectangle(self, lx: float, ly: float) -> float:
        corners = [(0.0, 0.0), (lx, 0.0), (0.0, ly), (lx, ly)]
        return float(min(self(x, y) for x, y in corners))


@dataclass(frozen=True)
class ThermalParams:
    """Thermal coefficients in SI units.

    Exchange coefficients h_sg, h_sf, h_gf multiply a cubed temperature
    difference, so they carry W/(m^3 K^3). ``pore_size`` feeds the Knudsen
    reduction of the gas conductivity.
    """

    phi_s: float
    phi_g: float
    phi_f: float
    rho_s: float
    rho_g: float
    rho_f: float
    c_s: float
    c_g: float
    c_f: float
    kappa_s: float
    kappa_f: float
    kappa_bg: float
    l_g: float
    beta: float
    h_sg: float
    h_sf: float
    h_gf: float
    h_air: float
    theta_hot: float
    theta_cold: float
    pore_size: PoreSize

    @property
    def phi(self) -> np.ndarray:
        return np.array([self.phi_s, self.phi_g, self.phi_f])

    @property
    def heat_capacity(self) -> np.ndarray:
        """Volumetric capacities rho_a * phi_a * c_a, ordered (s, g, f)."""
        return np.array(
            [self.rho_s * self.phi_s * self.c_s, self.rho_g * self.phi_g * self.c_g, self.rho_f * self.phi_f * self.c_f]
        )

    def gas_conductivity(self, x, y):
        return knudsen_conductivity(self.pore_size(x, y), self.l_g, self.beta, self.kappa_bg)

    def violations(self, lx=None, ly=None) -> list:
        out = []
        total = self.phi_s + self.phi_g + self.phi_f
        if abs(total - 1.0) > 1e-12:
            out.append(f"volume fractions sum to {total!r}, expected 1")
        for f in fields(self):
            if f.name == "pore_size":
                continue
            v = getattr(self, f.name)
            if not np.isfinite(v):
                out.append(f"{f.name} is not finite")
            elif v < 0:
                out.append(f"{f.name} must be non-negative")
        if self.theta_hot < self.theta_cold:
            out.append("theta_hot must be >= theta_cold")
        if lx is not None and ly is not None and not self.pore_size.min_on_rectangle(lx, ly) > 0:
            out.append("pore size must be positive everywhere on the domain")
        return out

    def validate(self, lx=None, ly=None) -> "ThermalParams":
        bad = self.violations(lx, ly)
        if bad:
            raise InvalidArgument("; ".join(bad))
        return self


def strain(grad_u):
    """Symmetric part of a displacement gradient."""
    g = np.asarray(grad_u, dtype=float)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def elastic_stress(E, lam, mu):
    """Isotropic linear elasticity 2*mu*E + lam*tr(E)*I."""
    E = np.asarray(E, dtype=float)
    tr = np.trace(E, axis1=-2, axis2=-1)
    return 2.0 * mu * E + lam * tr[..., None, None] * np.eye(E.shape[-1])


def relative_strain_norm(E_s, E_f):
    d = np.asarray(E_s, dtype=float) - np.asarray(E_f, dtype=float)
    return np.sqrt(np.sum(d * d, axis=(-2, -1)))


def chi_coefficient(E_s, E_f, chi_0, eps_strain):
    """Strain-coupling coefficient: chi_0 while bonded, 0 once the relative strain reaches the threshold."""
    norm = relative_strain_norm(E_s, E_f)
    out = np.where(norm < eps_strain, float(chi_0), 0.0)
    return float(out) if out.ndim == 0 else out


def darcy_flux(grad_p, k):
    return -float(k) * np.asarray(grad_p, dtype=float)


def knudsen_conductivity(omega, l_g, beta, kappa_bg):
    """Gas conductivity reduced by confinement in pores of size ``omega``."""
    omega = np.asarray(omega, dtype=float)
    if np.any(~(omega > 0)):
        raise InvalidArgument("pore size must be positive")
    out = kappa_bg / (beta * (l_g / omega) + 1.0)
    return float(out) if out.ndim == 0 else out


def exchange_source(theta_a, theta_b, h_ab):
    """Heat gained by phase a from phase b, h_ab * (theta_b - theta_a)**3."""
    d = np.asarray(theta_b, dtype=float) - np.asarray(theta_a, dtype=float)
    out = h_ab * (d * d * d)  # np.power is not exactly odd for arrays; products are
    return float(out) if np.ndim(out) == 0 else out


def exchange_sources(theta_s, theta_g, theta_f, h_sg, h_sf, h_gf):
    """Net exchange gain of each phase, ordered (s, g, f); sums to zero pointwise."""
    sg = exchange_source(theta_s, theta_g, h_sg)
    sf = exchange_source(theta_s, theta_f, h_sf)
    gf = exchange_source(theta_g, theta_f, h_gf)
    return sg + sf, gf - sg, -sf - gf


def storage_rate(dp_dt, C0, rho_g, phi_g):
    """Gas density rate from the pressure rate under the isothermal compressibility law."""
    if not phi_g > 0:
        raise InvalidArgument("phi_g must be positive")
    if np.ndim(dp_dt):
        dp_dt = np.asarray(dp_dt, dtype=float)
    return C0 * (rho_g / phi_g) * dp_dt
