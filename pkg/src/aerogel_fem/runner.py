"""Run orchestration: build solvers from a RunConfig, march in time, write outputs."""
from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

from . import mms
from .config import RunConfig
from .errors import IoError
from .mechanics import MechanicsSolver, MechOptions
from .mesh import generate_rect_mesh
from .output import ProbeField, write_csv_timeseries, write_table_csv, write_vtk
from .thermal import NewtonSettings, ThermalSolver, centerline_profile

log = logging.getLogger(__name__)

MECH_FIELDS = [
    ProbeField("p", "Pa", lambda s: s.p),
    ProbeField("u_s_x", "m", lambda s: s.u_s[:, 0]),
    ProbeField("u_s_y", "m", lambda s: s.u_s[:, 1]),
    ProbeField("u_f_x", "m", lambda s: s.u_f[:, 0]),
    ProbeField("u_f_y", "m", lambda s: s.u_f[:, 1]),
]
THERMAL_FIELDS = [
    ProbeField("theta_s", "K", lambda s: s.theta[0]),
    ProbeField("theta_g", "K", lambda s: s.theta[1]),
    ProbeField("theta_f", "K", lambda s: s.theta[2]),
]


def _outdir(cfg: RunConfig, output_dir) -> Path:
    out = Path(output_dir or cfg.output_dir or "output")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _progress(label, n_steps):
    every = max(1, n_steps // 10)

    def cb(n, state):
        if n % every == 0 or n == n_steps:
            log.info("%s step %d/%d t=%.6g", label, n, n_steps, state.time)

    return cb


def mech_run(cfg: RunConfig, output_dir=None) -> list:
    """Run the mechanical case; returns the snapshots and writes CSV/VTK files."""
    m = cfg.mesh
    mesh = generate_rect_mesh(m.lx, m.ly, m.nx, m.ny, m.diagonal)
    options = MechOptions(cfg.solver.pressure_coupling, cfg.solver.chi_mode, cfg.solver.max_sweeps)
    solver = MechanicsSolver(mesh, cfg.mech, cfg.mech_bcs, options)
    n_steps = int(round(cfg.time.t_end / cfg.time.dt))
    snaps = solver.run(cfg.time.dt, cfg.time.t_end, cfg.time.snapshot_every,
                       callback=_progress("mechanical", n_steps))
    out = _outdir(cfg, output_dir)
    if cfg.output.probes:
        write_csv_timeseries(out / "mechanical_probes.csv", mesh, snaps, cfg.output.probes, MECH_FIELDS)
    if cfg.output.vtk:
        for k, s in enumerate(snaps):
            write_vtk(mesh, out / f"mechanical_{k:04d}.vtk",
                      {"p": s.p, "u_s": s.u_s, "u_f": s.u_f}, {"G": s.G, "bonded": s.bonded.astype(float)},
                      title=f"mechanical t={s.time!r}")
    return snaps


def thermal_run(cfg: RunConfig, output_dir=None) -> list:
    """Run the thermal case; also writes the centerline temperature profiles."""
    m = cfg.mesh
    mesh = generate_rect_mesh(m.lx, m.ly, m.nx, m.ny, m.diagonal)
    s = cfg.solver
    settings = NewtonSettings(s.newton_abs_tol, s.newton_rel_tol, s.newton_max_iter, s.newton_damping)
    solver = ThermalSolver(mesh, cfg.thermal, lumped=s.mass_lumping)
    n_steps = int(round(cfg.time.t_end / cfg.time.dt))
    snaps = solver.run(cfg.time.dt, cfg.time.t_end, settings, cfg.time.snapshot_every,
                       callback=_progress("thermal", n_steps))
    out = _outdir(cfg, output_dir)
    if cfg.output.probes:
        write_csv_timeseries(out / "thermal_probes.csv", mesh, snaps, cfg.output.probes, THERMAL_FIELDS)
    rows = []
    for st in snaps:
        for y, ts, tg, tf in centerline_profile(st, mesh, cfg.output.profile_x_frac):
            rows.append((st.time, y, ts, tg, tf))
    write_table_csv(out / "thermal_centerline.csv", ["time_s", "y_m", "theta_s_K", "theta_g_K", "theta_f_K"], rows)
    write_table_csv(out / "thermal_newton.csv", ["time_s", "newton_iterations"],
                    [(st.time, st.newton_iterations) for st in snaps[1:]])
    if cfg.output.vtk:
        for k, st in enumerate(snaps):
            write_vtk(mesh, out / f"thermal_{k:04d}.vtk",
                      {"theta_s": st.theta[0], "theta_g": st.theta[1], "theta_f": st.theta[2]},
                      title=f"thermal t={st.time!r}")
    return snaps


def mms_run(cfg: RunConfig, output_dir=None) -> list:
    """Convergence study over ``cfg.mms.levels``; writes errors and observed rates."""
    out = _outdir(cfg, output_dir)
    levels = cfg.mms.levels
    if cfg.case == "mms-mechanical":
        params = cfg.mech or mms.MECH_MMS_PARAMS
        if params.eps_strain < 1e9:
            params = replace(params, eps_strain=1e9)  # keep the coupling active throughout
        options = MechOptions(cfg.solver.pressure_coupling, cfg.solver.chi_mode, cfg.solver.max_sweeps)
        errors = [mms.mech_mms_errors(n, cfg.mms.dt, cfg.mms.steps, params, options) for n in levels]
        keys = ["p", "u_s", "u_f"]
        name = "mms_mechanical.csv"
    else:
        params = cfg.thermal or mms.THERMAL_MMS_PARAMS
        s = cfg.solver
        settings = NewtonSettings(s.newton_abs_tol, s.newton_rel_tol, s.newton_max_iter, s.newton_damping)
        errors = [mms.thermal_mms_errors(n, cfg.mms.dt, cfg.mms.steps, params, s.mass_lumping, settings)
                  for n in levels]
        keys = ["theta_s", "theta_g", "theta_f"]
        name = "mms_thermal.csv"
    rates = {k: [float("nan")] + mms.observed_rates(errors, k) for k in keys}
    rows = []
    for i, (n, e) in enumerate(zip(levels, errors)):
        rows.append([n, e["h"]] + [e[k] for k in keys] + [rates[k][i] for k in keys])
    header = ["n", "h"] + [f"l2_error_{k}" for k in keys] + [f"rate_{k}" for k in keys]
    write_table_csv(out / name, header, rows)
    for k in keys:
        log.info("%s observed rates %s", k, ", ".join(f"{r:.3f}" for r in rates[k][1:]))
    return errors


def run(cfg: RunConfig, output_dir=None):
    if cfg.case == "mechanical":
        return mech_run(cfg, output_dir)
    if cfg.case == "thermal":
        return thermal_run(cfg, output_dir)
    return mms_run(cfg, output_dir)
