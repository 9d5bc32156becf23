"""Quasi-static skeleton/fiber/gas poro-mechanics with backward Euler in time.

Unknowns are the gas pressure p and the skeleton and fiber displacements
u_s, u_f, all continuous P1. Darcy's law is substituted into the gas mass
balance, so the flux G = -k grad p is recovered per element after each solve.

The skeleton-fiber strain coupling is treated as an interaction stress
chi * (E_s - E_f) tested against the symmetric gradient of the test function,
which gives equal and opposite contributions in the two momentum balances.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import fem
from .constitutive import MechParams, relative_strain_norm
from .errors import InvalidArgument, InvalidState, SolverFailure
from .mesh import BoundaryTag, Mesh

log = logging.getLogger(__name__)

FIBER_MODES = ("fixed_bottom", "mirror")
CHI_MODES = ("lagged", "fixed_point")


@dataclass
class MechState:
    p: np.ndarray  # (n_nodes,) Pa
    u_s: np.ndarray  # (n_nodes, 2) m
    u_f: np.ndarray  # (n_nodes, 2) m
    G: np.ndarray  # (n_elements, 2) m/s
    time: float = 0.0
    bonded: np.ndarray | None = None  # (n_elements,) strain coupling still active

    @classmethod
    def zeros(cls, mesh: Mesh, time: float = 0.0) -> "MechState":
        n = mesh.n_nodes
        return cls(
            np.zeros(n), np.zeros((n, 2)), np.zeros((n, 2)), np.zeros((mesh.n_elements, 2)), time,
            np.ones(mesh.n_elements, dtype=bool),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.p, self.u_s, self.u_f, self.G)) and np.isfinite(self.time)


@dataclass(frozen=True)
class MechBCs:
    """Boundary data for the mechanics problem.

    ``exact`` switches to manufactured-solution mode: every boundary dof of
    every field is pinned to ``exact.p``, ``exact.u_s``, ``exact.u_f``.
    """

    top_displacement: tuple | None = (0.0, -1.0e-5)
    top_traction: float | None = None  # normal traction on the top face, Pa (negative compresses)
    ramp_time: float = 0.0
    fixed_bottom: bool = True
    lateral_rollers: bool = False
    drained: frozenset = frozenset(BoundaryTag)
    fiber_mode: str = "fixed_bottom"
    exact: object = None

    def __post_init__(self):
        object.__setattr__(self, "drained", frozenset(BoundaryTag(t) for t in self.drained))
        if self.fiber_mode not in FIBER_MODES:
            raise InvalidArgument(f"fiber_mode must be one of {FIBER_MODES}")
        if self.ramp_time < 0:
            raise InvalidArgument("ramp_time must be non-negative")
        if self.top_displacement is not None and self.top_traction is not None:
            raise InvalidArgument("top face takes either a displacement or a traction, not both")

    @property
    def impermeable(self) -> frozenset:
        return frozenset(BoundaryTag) - self.drained

    def load_factor(self, t: float) -> float:
        if self.ramp_time == 0.0:
            return 1.0 if t > 0 else 0.0
        return min(t / self.ramp_time, 1.0)


@dataclass(frozen=True)
class MechOptions:
    pressure_coupling: bool = True
    chi_mode: str = "lagged"
    max_sweeps: int = 10

    def __post_init__(self):
        if self.chi_mode not in CHI_MODES:
            raise InvalidArgument(f"chi_mode must be one of {CHI_MODES}")


@dataclass(frozen=True)
class MechSources:
    """Volume sources: ``pressure(x, y, t)`` and vector ``skeleton``/``fiber`` returning (fx, fy)."""

    pressure: object = None
    skeleton: object = None
    fiber: object = None


def _strain_operator(grads: np.ndarray) -> np.ndarray:
    """Voigt strain-displacement matrices (n_el, 3, 6) for (exx, eyy, 2exy)."""
    n_el = grads.shape[0]
    B = np.zeros((n_el, 3, 6))
    B[:, 0, 0::2] = grads[:, :, 0]
    B[:, 1, 1::2] = grads[:, :, 1]
    B[:, 2, 0::2] = grads[:, :, 1]
    B[:, 2, 1::2] = grads[:, :, 0]
    return B


def element_strains(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Constant symmetric strain tensors per element, shape (n_el, 2, 2)."""
    grad = np.einsum("eak,eai->eik", mesh.gradients, u[mesh.elements])
    return 0.5 * (grad + np.swapaxes(grad, 1, 2))


def element_divergence(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    return np.einsum("eak,eak->e", mesh.gradients, u[mesh.elements])


def postprocess_darcy(mesh: Mesh, p: np.ndarray, params: MechParams) -> np.ndarray:
    """Per-element Darcy flux -k grad p."""
    grad_p = np.einsum("eak,ea->ek", mesh.gradients, p[mesh.elements])
    return -params.k * grad_p


class MechanicsSolver:
    """Owns the mesh-dependent operators for repeated backward-Euler steps."""

    def __init__(self, mesh: Mesh, params: MechParams, bcs: MechBCs,
                 options: MechOptions | None = None, sources: MechSources | None = None):
        self.mesh = mesh
        self.params = params.validate()
        self.bcs = bcs
        self.options = options or MechOptions()
        self.sources = sources or MechSources()
        self.dofmap = fem.DofMap(mesh.n_nodes, (("p", 1), ("u_s", 2), ("u_f", 2)))
        self.element_dofs = self.dofmap.element_dofs(mesh.elements)

        A = mesh.areas
        G = mesh.gradients
        B = _strain_operator(G)
        pr = params

        def elastic(lam, mu):
            D = np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
            return A[:, None, None] * np.einsum("eki,kl,elj->eij", B, D, B)

        self.K_s = elastic(pr.lambda_s, pr.mu_s)
        self.K_f = elastic(pr.lambda_f, pr.mu_f)
        # E(u):E(w) in Voigt form weights the engineering shear by 1/2
        self.K_chi_unit = A[:, None, None] * np.einsum("eki,kl,elj->eij", B, np.diag([1.0, 1.0, 0.5]), B)
        # int q_a div(w_b): pressure basis integrates to A/3
        self.B_div = (A / 3.0)[:, None, None] * np.broadcast_to(
            G.reshape(len(A), 1, 6), (len(A), 3, 6)
        )
        self.M_p = fem.element_mass(mesh)
        self.K_p = fem.element_stiffness(mesh, pr.k)
        self._check_constrained()

    # -- boundary conditions -------------------------------------------------

    def _check_constrained(self):
        if self.bcs.exact is not None:
            return
        b = self.bcs
        if not (b.fixed_bottom or b.top_displacement is not None):
            raise SolverFailure("skeleton displacement has no Dirichlet data; rigid-body modes make the system singular")
        fiber_pinned = b.fiber_mode == "fixed_bottom" or b.fixed_bottom or b.top_displacement is not None
        if not fiber_pinned:
            raise SolverFailure("fiber displacement has no Dirichlet data; rigid-body modes make the system singular")

    def constraints(self, t: float) -> dict:
        mesh, dm, b = self.mesh, self.dofmap, self.bcs
        cons: list = []
        if b.exact is not None:
            nodes = mesh.boundary_nodes()
            x, y = mesh.nodes[nodes, 0], mesh.nodes[nodes, 1]
            p = np.broadcast_to(b.exact.p(x, y, t), x.shape)
            cons += zip(dm.index("p", nodes), p)
            for name, func in (("u_s", b.exact.u_s), ("u_f", b.exact.u_f)):
                vals = func(x, y, t)
                for c in range(2):
                    cons += zip(dm.index(name, nodes, c), np.broadcast_to(vals[c], x.shape))
            return fem._normalize_constraints(cons)

        def pin(name, nodes, comps, values):
            for c, v in zip(comps, values):
                cons.extend((i, v) for i in dm.index(name, nodes, c))

        bottom = mesh.boundary_nodes([BoundaryTag.BOTTOM])
        top = mesh.boundary_nodes([BoundaryTag.TOP])
        sides = mesh.boundary_nodes([BoundaryTag.LEFT, BoundaryTag.RIGHT])
        solid_fields = ["u_s"] + (["u_f"] if b.fiber_mode == "mirror" else [])
        for name in solid_fields:
            if b.lateral_rollers:
                pin(name, sides, (0,), (0.0,))
            if b.fixed_bottom:
                pin(name, bottom, (0, 1), (0.0, 0.0))
            if b.top_displacement is not None:
                lf = b.load_factor(t)
                pin(name, top, (0, 1), (lf * b.top_displacement[0], lf * b.top_displacement[1]))
        if b.fiber_mode == "fixed_bottom":
            pin("u_f", bottom, (0, 1), (0.0, 0.0))
        drained = mesh.boundary_nodes(sorted(b.drained, key=lambda t: t.value))
        pin("p", drained, (0,), (0.0,))
        return fem._normalize_constraints(cons)

    # -- assembly ------------------------------------------------------------

    def chi_field(self, state: MechState, bonded: np.ndarray) -> np.ndarray:
        return np.where(bonded, self.params.chi_0, 0.0)

    def bonded_after(self, bonded: np.ndarray, state_like_us, state_like_uf) -> np.ndarray:
        rel = relative_strain_norm(element_strains(self.mesh, state_like_us), element_strains(self.mesh, state_like_uf))
        return bonded & (rel < self.params.eps_strain)

    def system(self, state_n: MechState, chi: np.ndarray, dt: float) -> fem.SparseSystem:
        pr, mesh = self.params, self.mesh
        n_el = mesh.n_elements
        t1 = state_n.time + dt
        pc = 1.0 if self.options.pressure_coupling else 0.0
        Kc = chi[:, None, None] * self.K_chi_unit
        Bs = pr.phi_s * self.B_div
        Bf = pr.phi_f * self.B_div

        K = np.zeros((n_el, 15, 15))
        P, S, F = slice(0, 3), slice(3, 9), slice(9, 15)
        K[:, S, S] = self.K_s + Kc
        K[:, S, F] = -Kc
        K[:, F, S] = -Kc
        K[:, F, F] = self.K_f + Kc
        K[:, S, P] = -pc * np.swapaxes(Bs, 1, 2)
        K[:, F, P] = -pc * np.swapaxes(Bf, 1, 2)
        # pressure rows are negated so the coupled operator stays symmetric when pc = 1
        K[:, P, S] = -Bs
        K[:, P, F] = -Bf
        K[:, P, P] = -(pr.C0 * self.M_p + dt * self.K_p)

        el = mesh.elements
        p_old = state_n.p[el]
        us_old = state_n.u_s[el].reshape(n_el, 6)
        uf_old = state_n.u_f[el].reshape(n_el, 6)
        f = np.zeros((n_el, 15))
        f[:, P] = -(
            pr.C0 * np.einsum("eij,ej->ei", self.M_p, p_old)
            + np.einsum("eij,ej->ei", Bs, us_old)
            + np.einsum("eij,ej->ei", Bf, uf_old)
        )
        system = fem.assemble_batched(self.dofmap.n_dofs, self.element_dofs, K, f)
        self._add_sources(system.rhs, t1, dt)
        return system

    def _add_sources(self, rhs: np.ndarray, t: float, dt: float):
        mesh, dm, src = self.mesh, self.dofmap, self.sources
        if src.pressure is not None:
            rhs[dm.field_slice("p")] -= dt * fem.load_vector(mesh, src.pressure, t)
        for name, func in (("u_s", src.skeleton), ("u_f", src.fiber)):
            if func is None:
                continue
            for c in range(2):
                comp = fem.load_vector(mesh, lambda x, y, tt, c=c: func(x, y, tt)[c], t)
                rhs[dm.index(name, np.arange(mesh.n_nodes), c)] += comp
        if self.bcs.exact is None and self.bcs.top_traction is not None:
            lf = self.bcs.load_factor(t)
            load = fem.boundary_load(mesh, [BoundaryTag.TOP], lambda x, y, tt: lf * self.bcs.top_traction, t)
            rhs[dm.index("u_s", np.arange(mesh.n_nodes), 1)] += load

    def _unpack(self, x: np.ndarray, t: float, bonded: np.ndarray) -> MechState:
        dm, n = self.dofmap, self.mesh.n_nodes
        p = x[dm.field_slice("p")].copy()
        u_s = x[dm.field_slice("u_s")].reshape(n, 2).copy()
        u_f = x[dm.field_slice("u_f")].reshape(n, 2).copy()
        G = postprocess_darcy(self.mesh, p, self.params)
        return MechState(p, u_s, u_f, G, t, bonded)

    def solve_with_chi(self, state_n: MechState, chi: np.ndarray, dt: float) -> np.ndarray:
        sys = fem.apply_dirichlet(self.system(state_n, chi, dt), self.constraints(state_n.time + dt))
        return fem.solve_linear(sys)

    def step(self, state_n: MechState, dt: float) -> MechState:
        if not dt > 0:
            raise InvalidArgument("dt must be positive")
        if not state_n.is_finite():
            raise InvalidState(f"non-finite values in mechanics state at t={state_n.time}")
        bonded_n = state_n.bonded if state_n.bonded is not None else np.ones(self.mesh.n_elements, dtype=bool)
        t1 = state_n.time + dt
        try:
            if self.options.chi_mode == "lagged":
                x = self.solve_with_chi(state_n, self.chi_field(state_n, bonded_n), dt)
            else:
                pattern = bonded_n
                x = None
                for sweep in range(self.options.max_sweeps):
                    x = self.solve_with_chi(state_n, self.chi_field(state_n, pattern), dt)
                    cand = self._unpack(x, t1, pattern)
                    new_pattern = self.bonded_after(bonded_n, cand.u_s, cand.u_f)
                    if np.array_equal(new_pattern, pattern):
                        break
                    pattern = new_pattern
                else:
                    log.warning("chi pattern did not settle in %d sweeps at t=%g", self.options.max_sweeps, t1)
        except SolverFailure as exc:
            exc.time = t1
            raise
        out = self._unpack(x, t1, bonded_n)
        out.bonded = self.bonded_after(bonded_n, out.u_s, out.u_f)
        return out

    def initial_state(self) -> MechState:
        s = MechState.zeros(self.mesh)
        if self.bcs.exact is not None:
            ex = self.bcs.exact
            x, y = self.mesh.nodes[:, 0], self.mesh.nodes[:, 1]
            s.p = np.broadcast_to(ex.p(x, y, 0.0), x.shape).astype(float)
            s.u_s = np.column_stack([np.broadcast_to(v, x.shape) for v in ex.u_s(x, y, 0.0)]).astype(float)
            s.u_f = np.column_stack([np.broadcast_to(v, x.shape) for v in ex.u_f(x, y, 0.0)]).astype(float)
            s.G = postprocess_darcy(self.mesh, s.p, self.params)
        s.bonded = self.bonded_after(s.bonded, s.u_s, s.u_f)
        return s

    def run(self, dt: float, t_end: float, snapshot_every: int = 1, state0: MechState | None = None,
            callback=None) -> list:
        """Advance from ``state0`` (default: rest) to ``t_end``; returns the snapshot list."""
        state = state0 if state0 is not None else self.initial_state()
        n_steps = int(round((t_end - state.time) / dt))
        t0 = state.time
        snaps = [state]
        for n in range(1, n_steps + 1):
            state = self.step(state, dt)
            state.time = t0 + n * dt  # avoid drift from repeated addition
            if callback is not None:
                callback(n, state)
            if n % snapshot_every == 0 or n == n_steps:
                snaps.append(state)
        return snaps


def mech_step(mesh: Mesh, state_n: MechState, params: MechParams, bcs: MechBCs, dt: float,
              options: MechOptions | None = None, sources: MechSources | None = None) -> MechState:
    return MechanicsSolver(mesh, params, bcs, options, sources).step(state_n, dt)


def with_params(solver: MechanicsSolver, **changes) -> MechanicsSolver:
    """A solver on the same mesh and boundary data with some coefficients replaced."""
    return MechanicsSolver(solver.mesh, replace(solver.params, **changes), solver.bcs, solver.options, solver.sources)
