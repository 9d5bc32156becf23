"""Legacy-VTK and CSV writers. Output is byte-deterministic for identical inputs."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import InvalidProbe, IoError
from .mesh import Mesh


def fmt(value: float) -> str:
    """17 significant digits, fixed layout."""
    return format(float(value), ".16e")


def _write(path, text: str):
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def write_vtk(mesh: Mesh, path, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "aerogel_fem") -> Path:
    """Write an ASCII legacy (version 2.0) unstructured grid of linear triangles.

    Arrays in ``point_data`` / ``cell_data`` are scalars (n,) or 2-vectors (n, 2).
    """
    lines = ["# vtk DataFile Version 2.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines += [f"{fmt(x)} {fmt(y)} {fmt(0.0)}" for x, y in mesh.nodes]
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {4 * ne}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["5"] * ne

    def block(data, count, header):
        if not data:
            return
        lines.append(f"{header} {count}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != count:
                raise ValueError(f"field {name!r} has {arr.shape[0]} entries, expected {count}")
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(fmt(v) for v in arr)
            else:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{fmt(v[0])} {fmt(v[1])} {fmt(0.0)}" for v in arr)

    block(point_data, mesh.n_nodes, "POINT_DATA")
    block(cell_data, ne, "CELL_DATA")
    return _write(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class ProbeField:
    """A nodal field sampled at probes: ``getter(state)`` returns (n_nodes,) values."""

    name: str
    unit: str
    getter: Callable


def write_csv_timeseries(path, mesh: Mesh, snapshots, probes, fields) -> Path:
    """One row per snapshot with every field interpolated at every probe."""
    located = []
    for k, (x, y) in enumerate(probes):
        try:
            located.append(mesh.locate((x, y)))
        except InvalidProbe as exc:
            raise InvalidProbe(f"probe {k} at ({x}, {y}): {exc}") from exc
    header = ["time_s"]
    for k in range(len(probes)):
        header += [f"{f.name}_{f.unit}@probe{k}" for f in fields]
    rows = [",".join(header)]
    for state in snapshots:
        row = [fmt(state.time)]
        for e, bary in located:
            nodes = mesh.elements[e]
            for f in fields:
                row.append(fmt(float(bary @ np.asarray(f.getter(state))[nodes])))
        rows.append(",".join(row))
    return _write(path, "\n".join(rows) + "\n")


def write_table_csv(path, header, rows) -> Path:
    out = [",".join(header)]
    for r in rows:
        out.append(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else fmt(v))
                            for v in r))
    return _write(path, "\n".join(out) + "\n")
