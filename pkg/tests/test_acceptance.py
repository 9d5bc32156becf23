"""Acceptance suite: one test per criterion, each summarised as a PASS/FAIL line at the end of the run."""
import filecmp
import time
from dataclasses import replace

import numpy as np
import pytest

from aerogel_fem import mms
from aerogel_fem.cli import main
from aerogel_fem.config import REFERENCE_CONFIGS, parse_config, reference_config_text
from aerogel_fem.constitutive import exchange_source, knudsen_conductivity
from aerogel_fem.mechanics import MechanicsSolver, MechBCs, MechOptions
from aerogel_fem.mesh import BoundaryTag, generate_rect_mesh
from aerogel_fem.thermal import NewtonSettings, ThermalSolver, ThermalState


def _mesh(cfg):
    m = cfg.mesh
    return generate_rect_mesh(m.lx, m.ly, m.nx, m.ny, m.diagonal)


def _newton(cfg):
    s = cfg.solver
    return NewtonSettings(s.newton_abs_tol, s.newton_rel_tol, s.newton_max_iter, s.newton_damping)


# -- 1, 2: manufactured solutions ----------------------------------------------

@pytest.mark.criterion(1, "mechanics MMS rate >= 1.8 on 8/16/32 meshes in < 60 s")
def test_mms_mechanics(record_property):
    cfg = parse_config(reference_config_text("mms-mechanical"))
    params = replace(mms.MECH_MMS_PARAMS, eps_strain=1e9)
    start = time.perf_counter()
    errors = [mms.mech_mms_errors(n, cfg.mms.dt, cfg.mms.steps, params, MechOptions()) for n in cfg.mms.levels]
    elapsed = time.perf_counter() - start
    rates = {k: mms.observed_rates(errors, k) for k in ("p", "u_s", "u_f")}
    worst = min(min(r) for r in rates.values())
    record_property("detail", f"min rate {worst:.3f}, {elapsed:.1f} s")
    assert tuple(cfg.mms.levels) == (8, 16, 32)
    assert worst >= 1.8
    assert elapsed < 60.0


@pytest.mark.criterion(2, "thermal MMS rate >= 1.8 with nonzero exchange, Newton <= 6 iterations")
def test_mms_thermal(record_property):
    cfg = parse_config(reference_config_text("mms-thermal"))
    params = mms.THERMAL_MMS_PARAMS
    assert min(params.h_sg, params.h_sf, params.h_gf) > 0
    errors = [mms.thermal_mms_errors(n, cfg.mms.dt, cfg.mms.steps, params, cfg.solver.mass_lumping, _newton(cfg))
              for n in cfg.mms.levels]
    worst = min(min(mms.observed_rates(errors, k)) for k in ("theta_s", "theta_g", "theta_f"))
    iters = max(e["max_newton"] for e in errors)
    record_property("detail", f"min rate {worst:.3f}, max Newton iterations {iters}")
    assert worst >= 1.8
    assert iters <= 6


# -- 3: consolidation ----------------------------------------------------------

def consolidation_series(y, t, height, c_v, p0, terms=400):
    """Excess pore pressure of a layer drained at y = height and sealed at y = 0 under a step load."""
    z = height - np.asarray(y, dtype=float)
    out = np.zeros_like(z)
    for m in range(terms):
        M = (2 * m + 1) * np.pi / 2
        out += 2.0 / M * np.sin(M * z / height) * np.exp(-M * M * c_v * t / height**2)
    return p0 * out


@pytest.mark.criterion(3, "consolidation limit matches the series solution within 2% at three times")
def test_consolidation_limit(record_property):
    ref = parse_config(reference_config_text("mechanical")).mech
    phi_s, phi_f = 0.15, 1e-6
    params = replace(ref, phi_s=phi_s, phi_f=phi_f, phi_g=1.0 - phi_s - phi_f, chi_0=0.0)
    height, load = 1e-3, -1e3
    # one-dimensional constrained modulus and the drained storage it implies
    M = params.lambda_s + 2 * params.mu_s
    c_v = params.k / (params.C0 + phi_s**2 / M)
    p0 = -phi_s * load / (M * params.C0 + phi_s**2)
    t_c = height**2 / c_v

    ny, n_steps = 40, 200
    mesh = generate_rect_mesh(2 * height / ny, height, 2, ny)
    bcs = MechBCs(top_displacement=None, top_traction=load, lateral_rollers=True, drained={BoundaryTag.TOP})
    dt = 0.5 * t_c / n_steps
    snaps = MechanicsSolver(mesh, params, bcs).run(dt, 0.5 * t_c)
    errs = []
    for frac in (0.05, 0.1, 0.2):
        s = snaps[int(round(frac * t_c / dt))]
        exact = consolidation_series(mesh.nodes[:, 1], s.time, height, c_v, p0)
        errs.append(np.linalg.norm(s.p - exact) / np.linalg.norm(exact))
    record_property("detail", "relative L2 errors " + ", ".join(f"{e:.2%}" for e in errs))
    assert max(errs) <= 0.02


# -- 4, 5: thermal Jacobian and conservation -------------------------------------

@pytest.mark.criterion(4, "thermal Jacobian matches finite differences within 1e-6 on 20 random states")
def test_jacobian_finite_differences(record_property):
    cfg = parse_config(reference_config_text("thermal"))
    mesh = _mesh(cfg)
    t = cfg.thermal
    solver = ThermalSolver(mesh, t, cfg.solver.mass_lumping)
    dt = cfg.time.dt
    rng = np.random.default_rng(20)
    worst_full = worst_exchange = 0.0
    for _ in range(20):
        theta = t.theta_cold + (t.theta_hot - t.theta_cold) * rng.random(3 * mesh.n_nodes)
        prev = ThermalState(t.theta_cold + (t.theta_hot - t.theta_cold) * rng.random((3, mesh.n_nodes)))
        v = rng.standard_normal(theta.size)
        v /= np.abs(v).max()
        eps = 1e-4 * np.abs(theta).max()
        J = solver.jacobian_matrix(theta, dt)
        fd = (solver.residual(theta + eps * v, prev, dt) - solver.residual(theta - eps * v, prev, dt)) / (2 * eps)
        worst_full = max(worst_full, np.linalg.norm(J @ v - fd) / np.linalg.norm(J @ v))
        # the nonlinear part alone, so the linear blocks cannot hide an exchange error
        _, dgain = solver.exchange(theta.reshape(3, -1))
        g_plus, _ = solver.exchange((theta + eps * v).reshape(3, -1), with_jacobian=False)
        g_minus, _ = solver.exchange((theta - eps * v).reshape(3, -1), with_jacobian=False)
        fd_gain = (g_plus - g_minus).ravel() / (2 * eps)
        worst_exchange = max(worst_exchange, np.linalg.norm(dgain @ v - fd_gain) / np.linalg.norm(dgain @ v))
    record_property("detail", f"max relative mismatch {worst_full:.2e} (exchange part {worst_exchange:.2e})")
    assert worst_full <= 1e-6
    assert worst_exchange <= 1e-6


@pytest.fixture(scope="module")
def thermal_reference_run():
    cfg = parse_config(reference_config_text("thermal"))
    mesh = _mesh(cfg)
    solver = ThermalSolver(mesh, cfg.thermal, cfg.solver.mass_lumping)
    bounds = []
    start = time.perf_counter()
    snaps = solver.run(cfg.time.dt, cfg.time.t_end, _newton(cfg), 1,
                       callback=lambda n, s: bounds.append((s.theta.min(), s.theta.max())))
    elapsed = time.perf_counter() - start
    return cfg, mesh, solver, snaps, np.array(bounds), elapsed


@pytest.mark.criterion(5, "exact pairwise exchange antisymmetry and energy balance within 1% per 10-step window")
def test_conservation(record_property, thermal_reference_run):
    cfg, mesh, solver, snaps, _, _ = thermal_reference_run
    t = cfg.thermal
    assert (t.kappa_s, t.kappa_bg, t.kappa_f) == (0.5, 0.08, 0.066)
    assert (t.rho_s, t.rho_g, t.rho_f) == (2650.0, 1.836, 1000.0)
    assert cfg.time.dt == 0.1

    for state in (snaps[1], snaps[len(snaps) // 2], snaps[-1]):
        ts, tg, tf = state.theta
        for a, b, h in ((ts, tg, t.h_sg), (ts, tf, t.h_sf), (tg, tf, t.h_gf)):
            assert np.array_equal(exchange_source(a, b, h), -exchange_source(b, a, h))
        gains, _ = solver.exchange(state.theta, with_jacobian=False)
        assert np.abs(gains.sum(axis=0)).max() <= 1e-12 * max(np.abs(gains).max(), 1e-300)

    dt = cfg.time.dt
    worst = 0.0
    for k in range(0, len(snaps) - 10, 10):
        window = snaps[k:k + 11]
        stored = solver.stored_energy(window[-1]) - solver.stored_energy(window[0])
        inflow = sum(dt * solver.boundary_inflow(s) for s in window[1:])
        worst = max(worst, abs(stored - inflow) / abs(stored))
    record_property("detail", f"{(len(snaps) - 1) // 10} windows, worst imbalance {worst:.2e}")
    assert worst <= 0.01


# -- 6: reference-scale smoke runs ---------------------------------------------

@pytest.mark.criterion(6, "reference-scale runs finish in < 120 s, temperatures bounded, pressure decays monotonically")
def test_smoke_runs(record_property, thermal_reference_run):
    cfg_t, mesh_t, _, snaps_t, bounds, elapsed_t = thermal_reference_run
    t = cfg_t.thermal
    assert (mesh_t.nx, mesh_t.ny) == (32, 16) and (mesh_t.lx, mesh_t.ly) == pytest.approx((12e-3, 6e-3))
    assert snaps_t[-1].time == pytest.approx(80.0, abs=1e-12) and len(bounds) == 800
    lo, hi = bounds[:, 0].min(), bounds[:, 1].max()

    cfg_m = parse_config(reference_config_text("mechanical"))
    mesh_m = _mesh(cfg_m)
    assert (mesh_m.nx, mesh_m.ny) == (32, 16) and mesh_m.lx == pytest.approx(1e-3)
    opts = MechOptions(cfg_m.solver.pressure_coupling, cfg_m.solver.chi_mode, cfg_m.solver.max_sweeps)
    solver = MechanicsSolver(mesh_m, cfg_m.mech, cfg_m.mech_bcs, opts)
    interior = [p for p in cfg_m.output.probes if 0 < p[0] < mesh_m.lx and 0 < p[1] < mesh_m.ly]
    history = []
    start = time.perf_counter()
    solver.run(cfg_m.time.dt, cfg_m.time.t_end, callback=lambda n, s: history.append(
        [float(mesh_m.interpolate(s.p, pt)) for pt in interior]))
    elapsed_m = time.perf_counter() - start
    history = np.array(history)
    worst_rise = 0.0
    for col in history.T:
        peak = np.argmax(np.abs(col))
        after = np.abs(col[peak:])
        worst_rise = max(worst_rise, np.diff(after).max(initial=0.0) / np.abs(col[peak]))

    record_property("detail", f"thermal {elapsed_t:.1f} s, theta in [{lo:.4f}, {hi:.4f}] K; mechanical "
                              f"{elapsed_m:.1f} s, worst rise after peak {worst_rise:.1e} of peak")
    assert elapsed_t < 120.0 and elapsed_m < 120.0
    assert lo >= t.theta_cold - 1e-6 and hi <= t.theta_hot + 1e-6
    assert len(interior) >= 3 and np.all(np.abs(history[0]) > 0)
    # monotone up to solver round-off relative to the peak
    assert worst_rise <= 1e-4


# -- 7: debonding switch ----------------------------------------------------------

@pytest.mark.criterion(7, "after the debonding switch the run equals a chi_0 = 0 restart exactly")
def test_debonding_switch(record_property):
    cfg = parse_config(reference_config_text("mechanical"))
    mesh = generate_rect_mesh(cfg.mesh.lx, cfg.mesh.ly, 16, 8, cfg.mesh.diagonal)
    # a tiny threshold and a ramped load drive every element past it while the load still changes
    params = replace(cfg.mech, eps_strain=1e-9)
    bcs = replace(cfg.mech_bcs, ramp_time=10 * cfg.time.dt)
    dt, n_steps = cfg.time.dt, 6
    coupled = MechanicsSolver(mesh, params, bcs).run(dt, n_steps * dt)
    switch = next(k for k, s in enumerate(coupled) if not s.bonded.any())
    assert switch >= 1 and coupled[switch - 1].bonded.all()
    restart = MechanicsSolver(mesh, replace(params, chi_0=0.0), bcs).run(dt, n_steps * dt, state0=coupled[switch])
    assert len(restart) == len(coupled) - switch
    for a, b in zip(coupled[switch:], restart):
        for x, y in ((a.p, b.p), (a.u_s, b.u_s), (a.u_f, b.u_f), (a.G, b.G)):
            assert np.array_equal(x, y)
    # the coupling did matter before the switch
    before = MechanicsSolver(mesh, replace(params, chi_0=0.0), bcs).run(dt, switch * dt)[-1]
    assert not np.array_equal(before.u_f, coupled[switch].u_f)
    record_property("detail", f"switch at step {switch}, {n_steps - switch} later steps identical")


# -- 8: Knudsen law ------------------------------------------------------------

@pytest.mark.criterion(8, "Knudsen law at 100 pore sizes within 1e-14, monotone, half value at beta l_g = omega")
def test_knudsen_law(record_property):
    kappa_bg, l_g, beta = 0.08, 1e-3, 1.0
    omega = np.geomspace(1e-8, 1e-1, 100)
    kappa = knudsen_conductivity(omega, l_g, beta, kappa_bg)
    expected = np.array([kappa_bg * w / (w + beta * l_g) for w in omega])
    err = np.abs(kappa - expected).max()
    half = knudsen_conductivity(beta * l_g, l_g, beta, kappa_bg)
    record_property("detail", f"max deviation {err:.1e}")
    assert err <= 1e-14
    assert np.all(np.diff(kappa) > 0)
    assert half == kappa_bg / 2


# -- 9: determinism ------------------------------------------------------------

@pytest.mark.criterion(9, "repeated runs of every reference config give byte-identical CSV files")
def test_determinism(record_property, tmp_path):
    compared = 0
    for name in REFERENCE_CONFIGS:
        cfg_path = tmp_path / f"{name}.toml"
        cfg_path.write_text(reference_config_text(name))
        outs = [tmp_path / f"{name}-{k}" for k in range(2)]
        for out in outs:
            assert main(["--config", str(cfg_path), "--output", str(out), "--quiet"]) == 0
        csvs = sorted(p.name for p in outs[0].glob("*.csv"))
        assert csvs and csvs == sorted(p.name for p in outs[1].glob("*.csv"))
        match, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], csvs, shallow=False)
        assert not mismatch and not errors
        compared += len(match)
    record_property("detail", f"{compared} CSV files compared across {len(REFERENCE_CONFIGS)} configs")
