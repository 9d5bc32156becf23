from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from aerogel_fem import fem
from aerogel_fem.constitutive import PoreSize, ThermalParams
from aerogel_fem.errors import InvalidArgument, NewtonFailure
from aerogel_fem.mesh import BoundaryTag, generate_rect_mesh
from aerogel_fem.mms import THERMAL_MMS_PARAMS, ThermalManufactured
from aerogel_fem.thermal import (
    NewtonSettings, ThermalSolver, ThermalState, centerline_profile, thermal_jacobian, thermal_residual,
    thermal_step,
)

# conductivities, densities and pore-size profile from the reference slab; the rest are artifact defaults
SLAB = ThermalParams(
    phi_s=0.10, phi_g=0.85, phi_f=0.05, rho_s=2650.0, rho_g=1.836, rho_f=1000.0,
    c_s=750.0, c_g=1005.0, c_f=1200.0, kappa_s=0.5, kappa_f=0.066, kappa_bg=0.08,
    l_g=1e-3, beta=1.0, h_sg=1.0, h_sf=0.5, h_gf=0.1, h_air=50.0,
    theta_hot=400.0, theta_cold=300.0, pore_size=PoreSize(2e-3, 0.0, -0.325),
)
LX, LY = 12e-3, 6e-3


@pytest.fixture(scope="module")
def coarse():
    return generate_rect_mesh(LX, LY, 8, 4)


def test_equilibrium_residual_is_zero(coarse):
    params = replace(SLAB, theta_hot=320.0, theta_cold=320.0)
    st_eq = ThermalState.uniform(coarse, 320.0)
    for lumped in (True, False):
        R = thermal_residual(coarse, st_eq, st_eq, params, 0.1, lumped)
        assert np.abs(R).max() <= 1e-10


@pytest.mark.parametrize("lumped", [True, False])
def test_exchange_gains_cancel_across_phases(coarse, lumped):
    solver = ThermalSolver(coarse, SLAB, lumped)
    theta = 300.0 + 100.0 * np.random.default_rng(2).random((3, coarse.n_nodes))
    gains, _ = solver.exchange(theta, with_jacobian=False)
    assert np.abs(gains.sum(axis=0)).max() <= 1e-12 * np.abs(gains).max()


def test_exchange_jacobian_vanishes_at_equal_temperatures(coarse):
    solver = ThermalSolver(coarse, SLAB)
    theta = np.tile(300.0 + coarse.nodes[:, 1] * 1e3, (3, 1))
    _, dgain = solver.exchange(theta)
    assert dgain.count_nonzero() == 0 or np.abs(dgain.data).max() == 0.0


def _fd_mismatch(solver, theta, prev, dt, rng):
    v = rng.standard_normal(theta.size)
    v /= np.abs(v).max()
    eps = 1e-4 * np.abs(theta).max()
    Jv = solver.jacobian_matrix(theta, dt) @ v
    fd = (solver.residual(theta + eps * v, prev, dt) - solver.residual(theta - eps * v, prev, dt)) / (2 * eps)
    return np.linalg.norm(Jv - fd) / np.linalg.norm(Jv)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lumped=st.booleans(), spread=st.floats(1.0, 150.0))
def test_jacobian_matches_finite_differences(seed, lumped, spread):
    mesh = generate_rect_mesh(LX, LY, 4, 2)
    # exchange strong enough to rival the capacity term at a 150 K spread
    params = replace(SLAB, h_sg=50.0, h_sf=20.0, h_gf=10.0)
    solver = ThermalSolver(mesh, params, lumped)
    rng = np.random.default_rng(seed)
    theta = (300.0 + spread * rng.random(3 * mesh.n_nodes))
    prev = ThermalState(300.0 + spread * rng.random((3, mesh.n_nodes)))
    assert _fd_mismatch(solver, theta, prev, 0.1, rng) <= 1e-6


def test_single_node_block_matches_hand_linearization(coarse):
    params = replace(SLAB, h_sg=2.0, h_sf=3.0, h_gf=5.0)
    solver = ThermalSolver(coarse, params)
    theta = np.full((3, coarse.n_nodes), 350.0)
    node = 7
    ts, tg, tf = 380.0, 340.0, 310.0
    theta[:, node] = (ts, tg, tf)
    J = solver.jacobian_matrix(theta, 0.1)
    lin = solver.linear_blocks(0.1)[1]
    idx = [node, coarse.n_nodes + node, 2 * coarse.n_nodes + node]
    block = (J - lin).toarray()[np.ix_(idx, idx)]
    a, b, c = 3 * 2.0 * (tg - ts) ** 2, 3 * 3.0 * (tf - ts) ** 2, 3 * 5.0 * (tf - tg) ** 2
    # d/d theta of the exchange gains, negated because gains enter the residual with a minus sign
    hand = -np.array([[-a - b, a, b], [a, -a - c, c], [b, c, -b - c]]) * solver.node_weights[node]
    assert np.allclose(block, hand, rtol=1e-13, atol=0)


def test_jacobian_module_function_builds_newton_system(coarse):
    prev = ThermalState.uniform(coarse, 300.0)
    system = thermal_jacobian(coarse, prev, prev, SLAB, 0.1)
    assert np.allclose(system.rhs, -thermal_residual(coarse, prev, prev, SLAB, 0.1))
    assert system.matrix.shape == (3 * coarse.n_nodes,) * 2


def _single_field_heat(mesh, capacity, conductivity, robin, hot, cold, theta0, dt, n_steps):
    """Independent lumped backward-Euler heat solve for one phase."""
    dm = fem.DofMap(mesh.n_nodes, (("T", 1),))

    def kernel(e, xy):
        _, g = fem.p1_basis(xy, [1 / 3] * 3)
        d1, d2 = xy[1] - xy[0], xy[2] - xy[0]
        area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
        return conductivity * area * g @ g.T + capacity / dt * area / 3 * np.eye(3), None

    base = fem.assemble(mesh, dm, kernel)
    mass = np.zeros(mesh.n_nodes)
    for e, tri in enumerate(mesh.elements):
        mass[tri] += mesh.areas[e] / 3
    edge_w = np.zeros(mesh.n_nodes)
    load = np.zeros(mesh.n_nodes)
    for (a, b), tag in zip(mesh.facets, mesh.facet_tags):
        if tag in (BoundaryTag.TOP, BoundaryTag.BOTTOM):
            half = 0.5 * np.hypot(*(mesh.nodes[b] - mesh.nodes[a]))
            amb = hot if tag is BoundaryTag.TOP else cold
            for n in (a, b):
                edge_w[n] += half
                load[n] += robin * half * amb
    A = (base.matrix + sp.diags(robin * edge_w)).tocsr()
    T = theta0.copy()
    for _ in range(n_steps):
        T = fem.solve_linear(fem.SparseSystem(A, capacity / dt * mass * T + load))
    return T


def test_decoupled_phases_match_single_field_solver(coarse):
    params = replace(SLAB, h_sg=0.0, h_sf=0.0, h_gf=0.0, beta=0.0)
    theta0 = 300.0 + 20.0 * np.sin(coarse.nodes[:, 0] / LX * np.pi)
    prev = ThermalState(np.tile(theta0, (3, 1)))
    solver = ThermalSolver(coarse, params)
    snaps = solver.run(0.5, 2.5, state0=prev)
    kappa = [params.kappa_s, params.kappa_bg, params.kappa_f]
    for a in range(3):
        ref = _single_field_heat(coarse, params.heat_capacity[a], params.phi[a] * kappa[a],
                                 params.phi[a] * params.h_air, params.theta_hot, params.theta_cold, theta0, 0.5, 5)
        assert np.abs(snaps[-1].theta[a] - ref).max() <= 1e-10 * 400
    assert all(s.newton_iterations == 1 for s in snaps[1:])


def test_equilibrium_start_takes_one_newton_iteration(coarse):
    params = replace(SLAB, theta_hot=330.0, theta_cold=330.0)
    start = ThermalState.uniform(coarse, 330.0)
    nxt = thermal_step(coarse, start, params, NewtonSettings(), 0.1)
    assert nxt.newton_iterations == 1
    assert np.abs(nxt.theta - 330.0).max() <= 1e-10


def test_manufactured_residual_converges_to_forcing():
    ratios = []
    for n in (8, 16, 32):
        mesh = generate_rect_mesh(1.0, 1.0, n, n)
        man = ThermalManufactured(THERMAL_MMS_PARAMS)
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        prev = ThermalState(man.theta(x, y, 0.0), 0.0)
        exact = ThermalState(man.theta(x, y, 0.1), 0.1)
        forced = ThermalSolver(mesh, THERMAL_MMS_PARAMS, False, man.forcing)
        bare = ThermalSolver(mesh, THERMAL_MMS_PARAMS, False, replace(man.forcing, volume=None))
        R = forced.residual(exact, prev, 0.1)
        F = bare.residual(exact, prev, 0.1) - R  # the assembled volume forcing
        ratios.append(np.linalg.norm(R) / np.linalg.norm(F))
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[2] < 0.01


@pytest.mark.parametrize("lumped", [True, False])
def test_energy_balance_over_ten_steps(coarse, lumped):
    solver = ThermalSolver(coarse, SLAB, lumped)
    snaps = solver.run(0.1, 3.0, state0=ThermalState.uniform(coarse, 300.0))
    for k in range(0, len(snaps) - 10, 10):
        window = snaps[k:k + 11]
        stored = solver.stored_energy(window[-1]) - solver.stored_energy(window[0])
        inflow = sum(0.1 * solver.boundary_inflow(s) for s in window[1:])
        assert abs(stored - inflow) <= 0.01 * abs(stored)


def test_temperatures_stay_between_ambient_values():
    mesh = generate_rect_mesh(LX, LY, 16, 8)
    solver = ThermalSolver(mesh, SLAB)
    lo, hi = [], []
    solver.run(0.1, 10.0, callback=lambda n, s: (lo.append(s.theta.min()), hi.append(s.theta.max())))
    assert min(lo) >= 300.0 - 1e-6 and max(hi) <= 400.0 + 1e-6


def test_gas_conductivity_increases_toward_bottom():
    mesh = generate_rect_mesh(LX, LY, 8, 6)
    solver = ThermalSolver(mesh, SLAB)
    row = (mesh.centroids[:, 1] / (LY / mesh.ny)).astype(int)
    k = solver.kappa_g_mean
    for j in range(mesh.ny - 1):
        assert k[row == j].min() > k[row == j + 1].max()


def test_reaches_steady_state():
    mesh = generate_rect_mesh(LX, LY, 6, 6)
    solver = ThermalSolver(mesh, SLAB)
    state = ThermalState.uniform(mesh, 300.0)
    dt = 2000.0
    for _ in range(40):
        nxt = solver.step(state, dt)
        rate = np.abs(nxt.theta - state.theta).max() / dt
        state = nxt
    assert rate < 1e-8
    assert np.abs(solver.residual(state, state, dt)).max() <= 1e-8 * np.abs(solver.ambient_load(0.0)).max()


def test_centerline_profile(coarse):
    uni = ThermalState.uniform(coarse, 312.5)
    prof = centerline_profile(uni, coarse)
    assert prof.shape == (coarse.ny + 1, 4) and np.all(prof[:, 1:] == 312.5)
    y = coarse.nodes[:, 1]
    lin = ThermalState(np.stack([300 + 1e4 * y, 310 - 2e3 * y, 305 + 0 * y]))
    prof = centerline_profile(lin, coarse, 0.37)
    assert np.allclose(prof[:, 1], 300 + 1e4 * prof[:, 0], atol=1e-10)
    assert np.allclose(prof[:, 2], 310 - 2e3 * prof[:, 0], atol=1e-10)
    rand = ThermalState(np.random.default_rng(0).random((3, coarse.n_nodes)))
    prof = centerline_profile(rand, coarse, 0.5)
    mid_bottom, mid_top = coarse.nx // 2, coarse.ny * (coarse.nx + 1) + coarse.nx // 2
    assert np.array_equal(prof[0, 1:], rand.theta[:, mid_bottom])
    assert np.array_equal(prof[-1, 1:], rand.theta[:, mid_top])
    with pytest.raises(InvalidArgument):
        centerline_profile(uni, coarse, 1.5)


def test_newton_failure_reports_residual(coarse):
    strict = NewtonSettings(abs_tol=1e-300, rel_tol=1e-300, max_iter=1)
    with pytest.raises(NewtonFailure) as info:
        thermal_step(coarse, ThermalState.uniform(coarse, 300.0), SLAB, strict, 0.1)
    assert info.value.residual is not None and info.value.time == pytest.approx(0.1)


def test_invalid_inputs(coarse):
    solver = ThermalSolver(coarse, SLAB)
    with pytest.raises(InvalidArgument):
        solver.step(ThermalState.uniform(coarse, 300.0), 0.0)
    with pytest.raises(InvalidArgument):
        NewtonSettings(damping=0.0)
    with pytest.raises(InvalidArgument):
        ThermalSolver(generate_rect_mesh(LX, 7e-3, 4, 4), SLAB)  # pore size turns negative
