"""Manufactured solutions and convergence studies for both solvers.

Source terms come from symbolic differentiation of closed-form fields, so
they are independent of the discrete operators they verify. The fields are
affine in time: backward Euler differentiates them exactly and the
measured error is purely spatial.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sm

from . import fem
from .constitutive import MechParams, PoreSize, ThermalParams
from .mechanics import MechanicsSolver, MechBCs, MechOptions, MechSources
from .mesh import BoundaryTag, generate_rect_mesh
from .thermal import NewtonSettings, ThermalForcing, ThermalSolver, ThermalState

X, Y, T = sm.symbols("x y t", real=True)


def _fn(expr):
    f = sm.lambdify((X, Y, T), expr, "numpy")

    def call(x, y, t):
        return np.broadcast_to(np.asarray(f(x, y, t), dtype=float), np.shape(x)).copy()

    return call


def _vec(exprs):
    fs = [_fn(e) for e in exprs]
    return lambda x, y, t: np.stack([f(x, y, t) for f in fs])


def _sym_strain(u):
    g = sm.Matrix([[sm.diff(u[i], v) for v in (X, Y)] for i in range(2)])
    return (g + g.T) / 2


def _div_tensor(S):
    return [sm.diff(S[i, 0], X) + sm.diff(S[i, 1], Y) for i in range(2)]


MECH_MMS_PARAMS = MechParams(
    phi_s=0.3, phi_g=0.5, phi_f=0.2, lambda_s=1.0, mu_s=1.0, lambda_f=2.0, mu_f=1.5,
    chi_0=0.5, eps_strain=1e9, C0=1.0, k=1.0,
)


@dataclass
class MechManufactured:
    """Closed-form (p, u_s, u_f) with the matching volume sources."""

    params: MechParams
    pressure_coupling: bool = True

    def __post_init__(self):
        pr = self.params
        pi = sm.pi
        s = 1 + T
        p = s * sm.sin(pi * X) * sm.sin(pi * Y) + X * Y
        u_s = [s * sm.Rational(1, 10) * sm.sin(pi * X) * sm.cos(pi * Y / 2),
               s * sm.Rational(1, 20) * (X**2 + sm.sin(pi * Y) * sm.exp(X))]
        u_f = [s * sm.Rational(1, 20) * sm.cos(pi * X / 2) * Y**2,
               s * sm.Rational(1, 10) * sm.sin(pi * X * Y)]
        E_s, E_f = _sym_strain(u_s), _sym_strain(u_f)
        I2 = sm.eye(2)
        T_s = 2 * pr.mu_s * E_s + pr.lambda_s * E_s.trace() * I2
        T_f = 2 * pr.mu_f * E_f + pr.lambda_f * E_f.trace() * I2
        chi = pr.chi_0
        pc = 1 if self.pressure_coupling else 0
        grad_p = [sm.diff(p, X), sm.diff(p, Y)]
        div_Ts, div_Tf = _div_tensor(T_s), _div_tensor(T_f)
        div_cs, div_cf = _div_tensor(chi * (E_s - E_f)), _div_tensor(chi * (E_f - E_s))
        f_s = [-div_Ts[i] - div_cs[i] + pc * pr.phi_s * grad_p[i] for i in range(2)]
        f_f = [-div_Tf[i] - div_cf[i] + pc * pr.phi_f * grad_p[i] for i in range(2)]
        div_us = sm.diff(u_s[0], X) + sm.diff(u_s[1], Y)
        div_uf = sm.diff(u_f[0], X) + sm.diff(u_f[1], Y)
        f_p = (pr.C0 * sm.diff(p, T) + pr.phi_s * sm.diff(div_us, T) + pr.phi_f * sm.diff(div_uf, T)
               - pr.k * (sm.diff(p, X, 2) + sm.diff(p, Y, 2)))
        self.p = _fn(p)
        self.u_s = _vec(u_s)
        self.u_f = _vec(u_f)
        self.sources = MechSources(pressure=_fn(f_p), skeleton=_vec(f_s), fiber=_vec(f_f))


def mech_mms_errors(n: int, dt: float = 0.1, n_steps: int = 2, params: MechParams = MECH_MMS_PARAMS,
                    options: MechOptions | None = None) -> dict:
    """L2 errors of p, u_s, u_f on an n-by-n unit square after ``n_steps`` steps."""
    options = options or MechOptions()
    man = MechManufactured(params, options.pressure_coupling)
    mesh = generate_rect_mesh(1.0, 1.0, n, n)
    solver = MechanicsSolver(mesh, params, MechBCs(top_displacement=None, exact=man), options, man.sources)
    state = solver.run(dt, n_steps * dt)[-1]
    t = state.time
    return {
        "h": 1.0 / n,
        "p": fem.l2_error(mesh, state.p, man.p, t),
        "u_s": np.hypot(*(fem.l2_error(mesh, state.u_s[:, c], lambda x, y, tt, c=c: man.u_s(x, y, tt)[c], t)
                          for c in range(2))),
        "u_f": np.hypot(*(fem.l2_error(mesh, state.u_f[:, c], lambda x, y, tt, c=c: man.u_f(x, y, tt)[c], t)
                          for c in range(2))),
    }


THERMAL_MMS_PARAMS = ThermalParams(
    phi_s=0.3, phi_g=0.5, phi_f=0.2, rho_s=2.0, rho_g=1.0, rho_f=1.5, c_s=1.0, c_g=1.0, c_f=1.0,
    kappa_s=1.0, kappa_f=0.5, kappa_bg=2.0, l_g=1.0, beta=1.0, h_sg=0.02, h_sf=0.01, h_gf=0.03,
    h_air=2.0, theta_hot=310.0, theta_cold=300.0, pore_size=PoreSize(2.0, 0.0, -1.95),
)


@dataclass
class ThermalManufactured:
    """Three temperatures with zero x-derivative on the lateral faces."""

    params: ThermalParams

    def __post_init__(self):
        pr = self.params
        pi = sm.pi
        s = 1 + T / 2
        th = [
            300 + s * (10 * Y**2 + 5 * sm.cos(pi * X) * sm.sin(pi * Y)),
            305 + s * (8 * Y + 4 * sm.cos(pi * X) * Y**2),
            295 + s * (6 * Y**3 + 3 * sm.cos(pi * X) * sm.cos(pi * Y)),
        ]
        omega = pr.pore_size.origin + pr.pore_size.slope_x * X + pr.pore_size.slope_y * Y
        kappa = [pr.kappa_s, pr.kappa_bg / (pr.beta * pr.l_g / omega + 1), pr.kappa_f]
        phi = [pr.phi_s, pr.phi_g, pr.phi_f]
        cap = list(pr.heat_capacity)
        ts, tg, tf = th
        e = [
            pr.h_sg * (tg - ts) ** 3 + pr.h_sf * (tf - ts) ** 3,
            pr.h_sg * (ts - tg) ** 3 + pr.h_gf * (tf - tg) ** 3,
            pr.h_sf * (ts - tf) ** 3 + pr.h_gf * (tg - tf) ** 3,
        ]
        src, top, bottom = [], [], []
        for a in range(3):
            flux_div = sm.diff(phi[a] * kappa[a] * sm.diff(th[a], X), X) + sm.diff(phi[a] * kappa[a] * sm.diff(th[a], Y), Y)
            src.append(cap[a] * sm.diff(th[a], T) - flux_div - e[a])
            dth_dy = sm.diff(th[a], Y)
            # -phi kappa dn(theta) = phi h_air (theta - ambient)
            top.append(th[a] + kappa[a] * dth_dy / pr.h_air)
            bottom.append(th[a] - kappa[a] * dth_dy / pr.h_air)
        self.theta = _vec(th)
        self._top, self._bottom = _vec(top), _vec(bottom)
        self.forcing = ThermalForcing(volume=_vec(src), ambient=self.ambient)

    def ambient(self, tag, x, y, t):
        return self._top(x, y, t) if BoundaryTag(tag) is BoundaryTag.TOP else self._bottom(x, y, t)


def thermal_mms_errors(n: int, dt: float = 0.05, n_steps: int = 2, params: ThermalParams = THERMAL_MMS_PARAMS,
                       lumped: bool = True, settings: NewtonSettings | None = None) -> dict:
    man = ThermalManufactured(params)
    mesh = generate_rect_mesh(1.0, 1.0, n, n)
    solver = ThermalSolver(mesh, params, lumped, man.forcing)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    state0 = ThermalState(man.theta(x, y, 0.0), 0.0)
    snaps = solver.run(dt, n_steps * dt, settings, state0=state0)
    final = snaps[-1]
    out = {"h": 1.0 / n, "max_newton": max(s.newton_iterations for s in snaps[1:])}
    for a, name in enumerate(("theta_s", "theta_g", "theta_f")):
        out[name] = fem.l2_error(mesh, final.theta[a], lambda xx, yy, tt, a=a: man.theta(xx, yy, tt)[a], final.time)
    return out


def observed_rates(errors: list, key: str) -> list:
    """Pairwise log2 error ratios between consecutive refinements."""
    return [float(np.log(e0[key] / e1[key]) / np.log(e0["h"] / e1["h"])) for e0, e1 in zip(errors, errors[1:])]
