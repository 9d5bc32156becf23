"""Three-temperature heat transport with cubic interphase exchange.

Each phase (skeleton s, gas g, fiber f) carries its own P1 temperature.
Time stepping is backward Euler; the cubic exchange makes each step
nonlinear, so it is solved by Newton's method with residual-based damping.

By default the capacity, exchange and Robin terms use nodal (vertex)
quadrature. With the non-obtuse structured mesh this keeps the discrete
system monotone, so temperatures stay between the cold and hot ambient
values. ``lumped=False`` switches to a consistent capacity matrix, a
degree-4 rule for the exchange terms and Gauss quadrature on the facets.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem
from .constitutive import ThermalParams
from .errors import InvalidArgument, InvalidState, NewtonFailure, SolverFailure
from .mesh import BoundaryTag, Mesh

log = logging.getLogger(__name__)

HOT_TAGS = (BoundaryTag.TOP,)
COLD_TAGS = (BoundaryTag.BOTTOM,)


@dataclass
class ThermalState:
    theta: np.ndarray  # (3, n_nodes) K, phases ordered (s, g, f)
    time: float = 0.0
    newton_iterations: int = 0

    @property
    def theta_s(self):
        return self.theta[0]

    @property
    def theta_g(self):
        return self.theta[1]

    @property
    def theta_f(self):
        return self.theta[2]

    @classmethod
    def uniform(cls, mesh: Mesh, value: float, time: float = 0.0) -> "ThermalState":
        return cls(np.full((3, mesh.n_nodes), float(value)), time)


@dataclass(frozen=True)
class NewtonSettings:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-10
    max_iter: int = 25
    damping: float = 1.0
    max_halvings: int = 5

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise InvalidArgument("Newton tolerances must be positive")
        if self.max_iter < 1:
            raise InvalidArgument("max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise InvalidArgument("damping must lie in (0, 1]")


@dataclass(frozen=True)
class ThermalForcing:
    """Extra data for manufactured solutions.

    ``volume(x, y, t)`` returns volumetric sources for the three phases.
    ``ambient(tag, x, y, t)`` overrides the Robin ambient temperatures per phase
    on the hot and cold faces.
    """

    volume: object = None
    ambient: object = None


def _cubic_exchange(theta, h_sg, h_sf, h_gf):
    """Exchange gains e (3, ...) and their derivatives de[a, b] = d e_a / d theta_b."""
    ts, tg, tf = theta
    d_sg, d_sf, d_gf = tg - ts, tf - ts, tf - tg
    # explicit products keep the pair terms exactly odd in the temperature difference
    sg, sf, gf = h_sg * (d_sg * d_sg * d_sg), h_sf * (d_sf * d_sf * d_sf), h_gf * (d_gf * d_gf * d_gf)
    e = np.stack([sg + sf, gf - sg, -sf - gf])
    a_sg, a_sf, a_gf = 3 * h_sg * d_sg**2, 3 * h_sf * d_sf**2, 3 * h_gf * d_gf**2
    de = np.stack([
        np.stack([-a_sg - a_sf, a_sg, a_sf]),
        np.stack([a_sg, -a_sg - a_gf, a_gf]),
        np.stack([a_sf, a_gf, -a_sf - a_gf]),
    ])
    return e, de


class ThermalSolver:
    def __init__(self, mesh: Mesh, params: ThermalParams, lumped: bool = True,
                 forcing: ThermalForcing | None = None):
        self.mesh = mesh
        self.params = params.validate(mesh.lx, mesh.ly)
        self.lumped = lumped
        self.forcing = forcing or ThermalForcing()
        n = mesh.n_nodes
        self.n = n
        pr = params

        self.capacity = pr.heat_capacity
        self.node_weights = np.zeros(n)
        np.add.at(self.node_weights, mesh.elements.ravel(), np.repeat(mesh.areas / 3.0, 3))
        if lumped:
            self.M = sp.diags(self.node_weights).tocsr()
        else:
            self.M = fem.scalar_matrix(mesh, fem.element_mass(mesh))

        pts, w = fem.DEGREE2.physical(mesh)
        kappa_g_int = np.sum(w * pr.gas_conductivity(pts[..., 0], pts[..., 1]), axis=1)
        self.kappa_g_mean = kappa_g_int / mesh.areas
        unit_k = np.einsum("eik,ejk->eij", mesh.gradients, mesh.gradients)
        self.K = [
            fem.scalar_matrix(mesh, pr.phi_s * pr.kappa_s * mesh.areas[:, None, None] * unit_k),
            fem.scalar_matrix(mesh, pr.phi_g * kappa_g_int[:, None, None] * unit_k),
            fem.scalar_matrix(mesh, pr.phi_f * pr.kappa_f * mesh.areas[:, None, None] * unit_k),
        ]
        self.robin_tags = HOT_TAGS + COLD_TAGS
        self.B = fem.boundary_mass(mesh, self.robin_tags, lumped=lumped)
        self.robin_coef = pr.phi * pr.h_air
        self._linear_cache: dict = {}

        if not lumped:
            rule = fem.DEGREE4
            _, self.q_w = rule.physical(mesh)
            self.q_N = rule.points  # (q, a)
            rows = np.repeat(mesh.elements, 3, axis=1)
            cols = np.tile(mesh.elements, (1, 3))
            self._pair_rows, self._pair_cols = rows.ravel(), cols.ravel()

    # -- pieces ----------------------------------------------------------------

    def ambient_load(self, t: float) -> np.ndarray:
        """Robin right-hand side phi_a * h_air * int(theta_amb * z) per phase, shape (3, n)."""
        mesh, pr = self.mesh, self.params
        out = np.zeros((3, self.n))
        for tags, default in ((HOT_TAGS, pr.theta_hot), (COLD_TAGS, pr.theta_cold)):
            facets, length, _ = fem.facet_geometry(mesh, list(tags))
            if len(facets) == 0:
                continue
            if self.lumped:
                pts = mesh.nodes[facets]  # (f, 2 nodes, 2)
                phi = np.eye(2)
                w = length[:, None] * np.array([0.5, 0.5])[None, :]
            else:
                pts, phi, w = fem.facet_quadrature(mesh, facets, length)
            if self.forcing.ambient is not None:
                vals = np.asarray(self.forcing.ambient(tags[0], pts[..., 0], pts[..., 1], t), dtype=float)
                vals = vals * np.ones((3,) + pts.shape[:2])
            else:
                vals = np.full((3,) + pts.shape[:2], float(default))
            for a in range(3):
                local = np.einsum("fq,fq,qb->fb", vals[a], w, phi)
                np.add.at(out[a], facets.ravel(), self.robin_coef[a] * local.ravel())
        return out

    def volume_load(self, t: float) -> np.ndarray:
        out = np.zeros((3, self.n))
        if self.forcing.volume is None:
            return out
        for a in range(3):
            out[a] = fem.load_vector(self.mesh, lambda x, y, tt, a=a: self.forcing.volume(x, y, tt)[a], t)
        return out

    def exchange(self, theta: np.ndarray, with_jacobian: bool = True):
        """Assembled exchange gains (3, n) and the sparse (3n, 3n) gain Jacobian (None if not requested)."""
        pr = self.params
        n = self.n
        if self.lumped:
            e, de = _cubic_exchange(theta, pr.h_sg, pr.h_sf, pr.h_gf)
            gains = e * self.node_weights
            if not with_jacobian:
                return gains, None
            idx = np.arange(n)
            rows = (np.arange(3)[:, None, None] * n + idx).repeat(3, axis=1).ravel()
            cols = np.broadcast_to(np.arange(3)[None, :, None] * n + idx, (3, 3, n)).ravel()
            vals = (de * self.node_weights).ravel()
            return gains, sp.csr_matrix((vals, (rows, cols)), shape=(3 * n, 3 * n))
        mesh = self.mesh
        th_q = np.einsum("qa,zea->zeq", self.q_N, theta[:, mesh.elements])
        e, de = _cubic_exchange(th_q, pr.h_sg, pr.h_sf, pr.h_gf)
        gains = np.zeros((3, n))
        for a in range(3):
            local = np.einsum("eq,eq,qb->eb", e[a], self.q_w, self.q_N)
            np.add.at(gains[a], mesh.elements.ravel(), local.ravel())
        if not with_jacobian:
            return gains, None
        local = np.einsum("abeq,eq,qi,qj->abeij", de, self.q_w, self.q_N, self.q_N)
        off = np.arange(3) * n
        rows = (off[:, None, None] + self._pair_rows[None, None, :]).repeat(3, axis=1)
        cols = np.broadcast_to(off[None, :, None] + self._pair_cols[None, None, :], rows.shape)
        return gains, sp.csr_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * n, 3 * n))

    def linear_blocks(self, dt: float):
        """Per-phase linear operators (capacity/dt, conduction, Robin) and their block diagonal."""
        if dt not in self._linear_cache:
            blocks = [(self.capacity[a] / dt) * self.M + self.K[a] + self.robin_coef[a] * self.B for a in range(3)]
            self._linear_cache[dt] = (blocks, sp.block_diag(blocks, format="csr"))
        return self._linear_cache[dt]

    # -- residual and Jacobian -----------------------------------------------

    def residual(self, guess: ThermalState | np.ndarray, prev: ThermalState, dt: float) -> np.ndarray:
        """Weak-form residual stacked by phase, shape (3 * n,)."""
        theta = guess.theta if isinstance(guess, ThermalState) else np.asarray(guess).reshape(3, self.n)
        t1 = prev.time + dt
        gains, _ = self.exchange(theta, with_jacobian=False)
        lin, _ = self.linear_blocks(dt)
        amb = self.ambient_load(t1)
        src = self.volume_load(t1)
        R = np.empty((3, self.n))
        for a in range(3):
            R[a] = (lin[a] @ theta[a] - (self.capacity[a] / dt) * (self.M @ prev.theta[a])
                    - amb[a] - gains[a] - src[a])
        return R.ravel()

    def jacobian_matrix(self, guess: ThermalState | np.ndarray, dt: float) -> sp.csr_matrix:
        theta = guess.theta if isinstance(guess, ThermalState) else np.asarray(guess).reshape(3, self.n)
        _, dgain = self.exchange(theta)
        _, lin = self.linear_blocks(dt)
        return (lin - dgain).tocsr()

    def jacobian(self, guess, prev: ThermalState, dt: float) -> fem.SparseSystem:
        """Newton system J * delta = -R at ``guess``."""
        return fem.SparseSystem(self.jacobian_matrix(guess, dt), -self.residual(guess, prev, dt))

    # -- stepping --------------------------------------------------------------

    def step(self, prev: ThermalState, dt: float, settings: NewtonSettings | None = None) -> ThermalState:
        settings = settings or NewtonSettings()
        if not dt > 0:
            raise InvalidArgument("dt must be positive")
        if not np.all(np.isfinite(prev.theta)):
            raise InvalidState(f"non-finite temperatures at t={prev.time}")
        t1 = prev.time + dt
        theta = prev.theta.ravel().copy()
        R = self.residual(theta, prev, dt)
        r0 = r = np.linalg.norm(R)
        for it in range(1, settings.max_iter + 1):
            try:
                # the Jacobian is symmetric, so a minimum-degree ordering on A + A^T gives less fill
                delta = fem.solve_linear(fem.SparseSystem(self.jacobian_matrix(theta, dt), -R),
                                         ordering="MMD_AT_PLUS_A")
            except SolverFailure as exc:
                raise NewtonFailure(f"linear solve failed in Newton iteration {it}: {exc}",
                                    residual=r, time=t1) from exc
            step = settings.damping
            for _ in range(settings.max_halvings + 1):
                trial = theta + step * delta
                R_trial = self.residual(trial, prev, dt)
                r_trial = np.linalg.norm(R_trial)
                if r_trial <= r or r_trial <= settings.abs_tol:
                    break
                step *= 0.5
            theta, R, r = trial, R_trial, r_trial
            if not np.isfinite(r):
                break
            if r <= settings.abs_tol or r <= settings.rel_tol * r0:
                return ThermalState(theta.reshape(3, self.n), t1, it)
        raise NewtonFailure(f"Newton did not converge in {settings.max_iter} iterations at t={t1:g}; "
                            f"residual {r:.3e}", residual=r, time=t1)

    def run(self, dt: float, t_end: float, settings: NewtonSettings | None = None, snapshot_every: int = 1,
            state0: ThermalState | None = None, callback=None) -> list:
        state = state0 if state0 is not None else ThermalState.uniform(self.mesh, self.params.theta_cold)
        n_steps = int(round((t_end - state.time) / dt))
        t0 = state.time
        snaps = [state]
        for n in range(1, n_steps + 1):
            state = self.step(state, dt, settings)
            state.time = t0 + n * dt  # avoid drift from repeated addition
            if callback is not None:
                callback(n, state)
            if n % snapshot_every == 0 or n == n_steps:
                snaps.append(state)
        return snaps

    # -- diagnostics -----------------------------------------------------------

    def stored_energy(self, state: ThermalState) -> float:
        """Sum over phases of int rho*phi*c*theta, per unit depth (J/m)."""
        return float(sum(self.capacity[a] * (self.node_weights @ state.theta[a]) for a in range(3)))

    def boundary_inflow(self, state: ThermalState) -> float:
        """Net Robin heat inflow through the hot and cold faces (W/m)."""
        amb = self.ambient_load(state.time)
        ones = np.ones(self.n)
        return float(sum(amb[a].sum() - self.robin_coef[a] * (ones @ (self.B @ state.theta[a])) for a in range(3)))


def thermal_residual(mesh, state_guess, state_n, params, dt, lumped=True, forcing=None):
    return ThermalSolver(mesh, params, lumped, forcing).residual(state_guess, state_n, dt)


def thermal_jacobian(mesh, state_guess, state_n, params, dt, lumped=True, forcing=None):
    return ThermalSolver(mesh, params, lumped, forcing).jacobian(state_guess, state_n, dt)


def thermal_step(mesh, state_n, params, settings, dt, lumped=True, forcing=None):
    return ThermalSolver(mesh, params, lumped, forcing).step(state_n, dt, settings)


def centerline_profile(state: ThermalState, mesh: Mesh, x_frac: float = 0.5) -> np.ndarray:
    """Temperatures along x = x_frac * lx at every node row; columns (y, theta_s, theta_g, theta_f)."""
    if not 0.0 <= x_frac <= 1.0:
        raise InvalidArgument("x_frac must lie in [0, 1]")
    nx1 = mesh.nx + 1
    x0 = x_frac * mesh.lx
    xs = mesh.nodes[:nx1, 0]
    rows = []
    for j in range(mesh.ny + 1):
        idx = slice(j * nx1, (j + 1) * nx1)
        y = mesh.nodes[j * nx1, 1]
        rows.append([y] + [np.interp(x0, xs, state.theta[a, idx]) for a in range(3)])
    return np.array(rows)
