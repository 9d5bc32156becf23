"""Run configuration: TOML text with SI units spelled out in key names.

Keys ending in ``_pa`` also accept an ``_mpa`` spelling and keys ending in
``_m`` also accept ``_mm``; both are converted to SI when parsed. Printing
always emits the SI spelling, so ``parse_config(format_config(c)) == c``.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib as tomli
else:
    import tomli

from .constitutive import MechParams, PoreSize, ThermalParams
from .errors import ConfigError, InvalidArgument
from .mechanics import CHI_MODES, FIBER_MODES, MechBCs
from .mesh import BoundaryTag

CASES = ("mechanical", "thermal", "mms-mechanical", "mms-thermal")
TOP_LOADS = ("displacement", "traction", "free")
ALIASES = {"_pa": ("_mpa", 1e6), "_m": ("_mm", 1e-3)}

REQUIRED = object()
NO_ALIAS = {"c0_per_pa"}  # an inverse unit; MPa scaling would go the wrong way


@dataclass(frozen=True)
class MeshSpec:
    lx: float
    ly: float
    nx: int
    ny: int
    diagonal: str = "right"


@dataclass(frozen=True)
class TimeSpec:
    dt: float
    t_end: float
    snapshot_every: int = 1


@dataclass(frozen=True)
class SolverSpec:
    pressure_coupling: bool = True
    chi_mode: str = "lagged"
    max_sweeps: int = 10
    newton_abs_tol: float = 1e-9
    newton_rel_tol: float = 1e-10
    newton_max_iter: int = 25
    newton_damping: float = 1.0
    mass_lumping: bool = True


@dataclass(frozen=True)
class OutputSpec:
    probes: tuple = ()
    vtk: bool = True
    profile_x_frac: float = 0.5


@dataclass(frozen=True)
class MmsSpec:
    levels: tuple = (8, 16, 32)
    dt: float = 0.1
    steps: int = 2


@dataclass(frozen=True)
class RunConfig:
    case: str
    mesh: MeshSpec | None = None
    time: TimeSpec | None = None
    mech: MechParams | None = None
    mech_bcs: MechBCs | None = None
    thermal: ThermalParams | None = None
    solver: SolverSpec = field(default_factory=SolverSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    mms: MmsSpec = field(default_factory=MmsSpec)
    output_dir: str | None = None


# (toml key, attribute, default); numeric keys with unit suffixes get aliases
MESH_KEYS = [("lx_m", "lx", REQUIRED), ("ly_m", "ly", REQUIRED), ("nx", "nx", REQUIRED),
             ("ny", "ny", REQUIRED), ("diagonal", "diagonal", "right")]
TIME_KEYS = [("dt_s", "dt", REQUIRED), ("t_end_s", "t_end", REQUIRED), ("snapshot_every", "snapshot_every", 1)]
MECH_KEYS = [
    ("phi_s", "phi_s", REQUIRED), ("phi_g", "phi_g", REQUIRED), ("phi_f", "phi_f", REQUIRED),
    ("lambda_s_pa", "lambda_s", REQUIRED), ("mu_s_pa", "mu_s", REQUIRED),
    ("lambda_f_pa", "lambda_f", REQUIRED), ("mu_f_pa", "mu_f", REQUIRED),
    ("chi_0_pa", "chi_0", REQUIRED), ("eps_strain", "eps_strain", REQUIRED),
    ("c0_per_pa", "C0", REQUIRED), ("k_m2", "k", REQUIRED),
    ("gamma_s_pa_s_per_m2", "gamma_s", 0.0), ("gamma_f_pa_s_per_m2", "gamma_f", 0.0),
]
BC_KEYS = [
    ("top_load", "top_load", "displacement"), ("top_displacement_m", "top_displacement", (0.0, -1.0e-5)),
    ("top_traction_pa", "top_traction", 0.0), ("ramp_time_s", "ramp_time", 0.0),
    ("fixed_bottom", "fixed_bottom", True), ("lateral_rollers", "lateral_rollers", False),
    ("drained", "drained", ("bottom", "left", "right", "top")), ("fiber_mode", "fiber_mode", "fixed_bottom"),
]
THERMAL_KEYS = [
    ("phi_s", "phi_s", REQUIRED), ("phi_g", "phi_g", REQUIRED), ("phi_f", "phi_f", REQUIRED),
    ("rho_s_kg_m3", "rho_s", REQUIRED), ("rho_g_kg_m3", "rho_g", REQUIRED), ("rho_f_kg_m3", "rho_f", REQUIRED),
    ("c_s_j_kg_k", "c_s", 750.0), ("c_g_j_kg_k", "c_g", 1005.0), ("c_f_j_kg_k", "c_f", 1200.0),
    ("kappa_s_w_mk", "kappa_s", REQUIRED), ("kappa_f_w_mk", "kappa_f", REQUIRED),
    ("kappa_bg_w_mk", "kappa_bg", REQUIRED), ("l_g_m", "l_g", REQUIRED), ("beta", "beta", 1.0),
    ("h_sg_w_m3_k3", "h_sg", REQUIRED), ("h_sf_w_m3_k3", "h_sf", REQUIRED), ("h_gf_w_m3_k3", "h_gf", REQUIRED),
    ("h_air_w_m2_k", "h_air", REQUIRED), ("theta_hot_k", "theta_hot", 400.0), ("theta_cold_k", "theta_cold", 300.0),
    ("pore_size_origin_m", "pore_origin", 2.0e-3), ("pore_size_slope_x", "pore_slope_x", 0.0),
    ("pore_size_slope_y", "pore_slope_y", -0.325),
]
SOLVER_KEYS = [(k, k, getattr(SolverSpec(), k)) for k in SolverSpec.__dataclass_fields__]
OUTPUT_KEYS = [("probes_m", "probes", ()), ("vtk", "vtk", True), ("profile_x_frac", "profile_x_frac", 0.5)]
MMS_KEYS = [("levels", "levels", (8, 16, 32)), ("dt_s", "dt", 0.1), ("steps", "steps", 2)]

INT_ATTRS = {"nx", "ny", "snapshot_every", "max_sweeps", "newton_max_iter", "steps"}
BOOL_ATTRS = {"fixed_bottom", "lateral_rollers", "pressure_coupling", "mass_lumping", "vtk"}
STR_ATTRS = {"diagonal", "top_load", "fiber_mode", "chi_mode"}


def _alias(key):
    if key in NO_ALIAS:
        return None, 1.0
    for suffix, (alt, factor) in ALIASES.items():
        if key.endswith(suffix):
            return key[: -len(suffix)] + alt, factor
    return None, 1.0


def _scale(value, factor):
    if factor == 1.0:
        return value
    if isinstance(value, (list, tuple)):
        return [_scale(v, factor) for v in value]
    return value * factor


def _convert(attr, value, where, errors):
    if attr in BOOL_ATTRS:
        if not isinstance(value, bool):
            errors.append(f"{where}: expected true/false")
        return value
    if attr in STR_ATTRS:
        if not isinstance(value, str):
            errors.append(f"{where}: expected a string")
        return value
    if attr in INT_ATTRS:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{where}: expected an integer")
        return value
    if attr == "levels":
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            errors.append(f"{where}: expected a list of integers")
            return ()
        return tuple(value)
    if attr == "drained":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            errors.append(f"{where}: expected a list of boundary names")
            return frozenset()
        bad = [v for v in value if v not in {t.value for t in BoundaryTag}]
        if bad:
            errors.append(f"{where}: unknown boundary names {bad}")
            return frozenset()
        return frozenset(BoundaryTag(v) for v in value)
    if attr == "top_displacement":
        if not (isinstance(value, list) and len(value) == 2 and all(_is_num(v) for v in value)):
            errors.append(f"{where}: expected [ux, uy]")
            return (0.0, 0.0)
        return (float(value[0]), float(value[1]))
    if attr == "probes":
        ok = isinstance(value, list) and all(
            isinstance(p, list) and len(p) == 2 and all(_is_num(v) for v in p) for p in value
        )
        if not ok:
            errors.append(f"{where}: expected a list of [x, y] pairs")
            return ()
        return tuple((float(p[0]), float(p[1])) for p in value)
    if not _is_num(value):
        errors.append(f"{where}: expected a number")
        return 0.0
    return float(value)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _read_section(data, name, keys, errors, required=True):
    """Pull one table out of the parsed TOML, resolving unit aliases; returns attr -> value."""
    table = data.get(name)
    if table is None:
        if required:
            errors.append(f"missing section [{name}]")
        table = {}
    if not isinstance(table, dict):
        errors.append(f"[{name}] must be a table")
        table = {}
    out, known = {}, set()
    for key, attr, default in keys:
        alt, factor = _alias(key)
        known.add(key)
        if alt:
            known.add(alt)
        where = f"{name}.{key}"
        if key in table and alt in table:
            errors.append(f"{where}: given both as {key} and {alt}")
        if key in table:
            out[attr] = _convert(attr, table[key], where, errors)
        elif alt and alt in table:
            out[attr] = _convert(attr, _scale(table[alt], factor), f"{name}.{alt}", errors)
        elif default is REQUIRED:
            if required or table:
                errors.append(f"{where}: required field missing")
        else:
            out[attr] = _convert(attr, list(default) if isinstance(default, tuple) else default, where, errors)
    nested = {"bcs"} if name == "mechanics" else set()
    for key in table:
        if key not in known and key not in nested:
            errors.append(f"{name}.{key}: unknown key")
    return out


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises ConfigError listing every violation found."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"syntax error: {exc}"]) from exc
    errors: list = []
    case = data.get("case")
    if case not in CASES:
        errors.append(f"case: expected one of {CASES}, got {case!r}")
    known_top = {"case", "output_dir", "mesh", "time", "mechanics", "thermal", "solver", "output", "mms"}
    errors += [f"{k}: unknown key" for k in data if k not in known_top]
    output_dir = data.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        errors.append("output_dir: expected a string")

    needs_mech = case == "mechanical"
    needs_therm = case == "thermal"
    solver = _read_section(data, "solver", SOLVER_KEYS, errors, required=False)
    output = _read_section(data, "output", OUTPUT_KEYS, errors, required=False)
    mms = _read_section(data, "mms", MMS_KEYS, errors, required=False)
    mesh = _read_section(data, "mesh", MESH_KEYS, errors, required=needs_mech or needs_therm) if (
        needs_mech or needs_therm or "mesh" in data) else None
    time = _read_section(data, "time", TIME_KEYS, errors, required=needs_mech or needs_therm) if (
        needs_mech or needs_therm or "time" in data) else None
    mech = bcs = therm = None
    if needs_mech or "mechanics" in data:
        mech = _read_section(data, "mechanics", MECH_KEYS, errors, required=needs_mech)
        bcs = _read_section(data.get("mechanics", {}), "bcs", BC_KEYS, errors, required=False)
    if needs_therm or "thermal" in data:
        therm = _read_section(data, "thermal", THERMAL_KEYS, errors, required=needs_therm)

    cfg_kwargs = {"case": case, "output_dir": output_dir}
    cfg_kwargs["solver"] = _build(SolverSpec, solver, "solver", errors)
    cfg_kwargs["output"] = _build(OutputSpec, output, "output", errors)
    cfg_kwargs["mms"] = _build(MmsSpec, mms, "mms", errors)
    if mesh is not None:
        cfg_kwargs["mesh"] = _build(MeshSpec, mesh, "mesh", errors)
    if time is not None:
        cfg_kwargs["time"] = _build(TimeSpec, time, "time", errors)
    if mech is not None:
        cfg_kwargs["mech"] = _build(MechParams, mech, "mechanics", errors)
        cfg_kwargs["mech_bcs"] = _build_bcs(bcs, errors)
    if therm is not None:
        pore = PoreSize(therm.pop("pore_origin", 2e-3), therm.pop("pore_slope_x", 0.0), therm.pop("pore_slope_y", 0.0))
        cfg_kwargs["thermal"] = _build(ThermalParams, dict(therm, pore_size=pore), "thermal", errors)

    _semantic_checks(cfg_kwargs, errors)
    if errors:
        raise ConfigError(errors)
    return RunConfig(**cfg_kwargs)


def _build(cls, values, where, errors):
    try:
        return cls(**values)
    except TypeError:
        return None  # missing fields are already reported
    except InvalidArgument as exc:
        errors.append(f"{where}: {exc}")
        return None


def _build_bcs(b, errors):
    try:
        load = b.pop("top_load", "displacement")
        disp = b.pop("top_displacement", (0.0, -1e-5))
        trac = b.pop("top_traction", 0.0)
        if load not in TOP_LOADS:
            errors.append(f"mechanics.bcs.top_load: expected one of {TOP_LOADS}")
            return None
        if b.get("fiber_mode") not in FIBER_MODES:
            errors.append(f"mechanics.bcs.fiber_mode: expected one of {FIBER_MODES}")
            return None
        return MechBCs(
            top_displacement=disp if load == "displacement" else None,
            top_traction=trac if load == "traction" else None,
            **b,
        )
    except (InvalidArgument, TypeError) as exc:
        errors.append(f"mechanics.bcs: {exc}")
        return None


def _semantic_checks(kw, errors):
    mesh, time = kw.get("mesh"), kw.get("time")
    if mesh is not None:
        if not (mesh.lx > 0 and mesh.ly > 0):
            errors.append("mesh: extents must be positive")
        if mesh.nx < 1 or mesh.ny < 1:
            errors.append("mesh: subdivisions must be >= 1")
        if mesh.diagonal not in ("right", "alternating"):
            errors.append("mesh.diagonal: expected 'right' or 'alternating'")
    if time is not None:
        if not time.dt > 0:
            errors.append("time.dt_s must be positive")
        if not time.t_end >= time.dt:
            errors.append("time.t_end_s must be >= dt_s")
        if time.snapshot_every < 1:
            errors.append("time.snapshot_every must be >= 1")
    mech = kw.get("mech")
    if mech is not None:
        errors += [f"mechanics: {v}" for v in mech.violations()]
    therm = kw.get("thermal")
    if therm is not None:
        lx, ly = (mesh.lx, mesh.ly) if mesh is not None else (None, None)
        errors += [f"thermal: {v}" for v in therm.violations(lx, ly)]
    solver = kw.get("solver")
    if solver is not None:
        if solver.chi_mode not in CHI_MODES:
            errors.append(f"solver.chi_mode: expected one of {CHI_MODES}")
        if not (solver.newton_abs_tol > 0 and solver.newton_rel_tol > 0):
            errors.append("solver: Newton tolerances must be positive")
        if solver.newton_max_iter < 1:
            errors.append("solver.newton_max_iter must be >= 1")
        if not 0 < solver.newton_damping <= 1:
            errors.append("solver.newton_damping must lie in (0, 1]")
    out = kw.get("output")
    if out is not None and mesh is not None:
        for x, y in out.probes:
            if not (0 <= x <= mesh.lx and 0 <= y <= mesh.ly):
                errors.append(f"output.probes_m: probe ({x}, {y}) lies outside the domain")
    mms = kw.get("mms")
    if mms is not None:
        if len(mms.levels) < 2 or any(n < 1 for n in mms.levels):
            errors.append("mms.levels: need at least two positive refinement levels")
        if not mms.dt > 0 or mms.steps < 1:
            errors.append("mms: dt_s must be positive and steps >= 1")


def to_dict(cfg: RunConfig) -> dict:
    """Plain TOML-ready structure using the SI key spellings."""
    out: dict = {"case": cfg.case}
    if cfg.output_dir is not None:
        out["output_dir"] = cfg.output_dir
    if cfg.mesh is not None:
        out["mesh"] = {k: getattr(cfg.mesh, a) for k, a, _ in MESH_KEYS}
    if cfg.time is not None:
        out["time"] = {k: getattr(cfg.time, a) for k, a, _ in TIME_KEYS}
    if cfg.mech is not None:
        out["mechanics"] = {k: getattr(cfg.mech, a) for k, a, _ in MECH_KEYS}
        b = cfg.mech_bcs
        if b is not None:
            load = "displacement" if b.top_displacement is not None else ("traction" if b.top_traction is not None else "free")
            bcs = {"top_load": load}
            if b.top_displacement is not None:
                bcs["top_displacement_m"] = list(b.top_displacement)
            if b.top_traction is not None:
                bcs["top_traction_pa"] = b.top_traction
            bcs.update({
                "ramp_time_s": b.ramp_time, "fixed_bottom": b.fixed_bottom, "lateral_rollers": b.lateral_rollers,
                "drained": sorted(t.value for t in b.drained), "fiber_mode": b.fiber_mode,
            })
            out["mechanics"]["bcs"] = bcs
    if cfg.thermal is not None:
        t = cfg.thermal
        vals = {k: getattr(t, a) for k, a, _ in THERMAL_KEYS if not a.startswith("pore_")}
        vals.update({"pore_size_origin_m": t.pore_size.origin, "pore_size_slope_x": t.pore_size.slope_x,
                     "pore_size_slope_y": t.pore_size.slope_y})
        out["thermal"] = vals
    out["solver"] = {k: getattr(cfg.solver, a) for k, a, _ in SOLVER_KEYS}
    out["output"] = {"probes_m": [list(p) for p in cfg.output.probes], "vtk": cfg.output.vtk,
                     "profile_x_frac": cfg.output.profile_x_frac}
    out["mms"] = {"levels": list(cfg.mms.levels), "dt_s": cfg.mms.dt, "steps": cfg.mms.steps}
    return out


def format_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def reference_config_text(name: str) -> str:
    """Text of a shipped reference config: 'mechanical', 'thermal', 'mms-mechanical' or 'mms-thermal'."""
    return resources.files("aerogel_fem.configs").joinpath(f"{name}.toml").read_text(encoding="utf-8")


REFERENCE_CONFIGS = ("mechanical", "thermal", "mms-mechanical", "mms-thermal")
