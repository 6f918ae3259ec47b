"""Snapshot and diagnostics files: legacy VTK (ASCII) and CSV.

Rank 0 does all file I/O; the other ranks only contribute their owned blocks to
the gathers. Snapshots cover all ``nx x ny`` nodes, so the periodic seam column
``x = 1`` is written as a copy of ``x = 0``.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..mesh import Field, GridSpec, gather
from .diagnostics import Diagnostics

SNAPSHOT_ARRAYS = ("phi", "c", "pressure", "u", "v")


def snapshot_name(step: int) -> str:
    return f"snapshot_{step:06d}.vtk"


def with_seam(a: np.ndarray) -> np.ndarray:
    """Append the periodic seam column to a ``(mx, ny)`` array."""
    return np.concatenate([a, a[:1]], axis=0)


def write_vtk(path, grid: GridSpec, arrays: dict, title: str = "biofilm snapshot") -> Path:
    """Write ``{name: (mx, ny) array}`` as STRUCTURED_POINTS point data.

    Values are printed with 17 significant digits so a reparse is exact.
    """
    path = Path(path)
    nx, ny = grid.nx, grid.ny
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} 1",
        "ORIGIN 0 0 0",
        f"SPACING {grid.dx!r} {grid.dy!r} 1",
        f"POINT_DATA {nx * ny}",
    ]
    for name, a in arrays.items():
        full = with_seam(np.asarray(a, dtype=float))
        if full.shape != (nx, ny):
            raise ValueError(f"array {name!r} has shape {np.shape(a)}, expected {grid.shape}")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        # VTK point order runs x fastest
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in full.T)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk(path) -> tuple[tuple[int, int], tuple[float, float], dict]:
    """Parse a file written by :func:`write_vtk`.

    Returns ``(dims, spacing, arrays)`` with each array shaped ``(nx, ny)``
    including the seam column.
    """
    tokens = Path(path).read_text().split("\n")
    dims = spacing = None
    npts = 0
    arrays = {}
    k = 0
    while k < len(tokens):
        line = tokens[k].strip()
        k += 1
        if line.startswith("DIMENSIONS"):
            dims = tuple(int(t) for t in line.split()[1:3])
        elif line.startswith("SPACING"):
            spacing = tuple(float(t) for t in line.split()[1:3])
        elif line.startswith("POINT_DATA"):
            npts = int(line.split()[1])
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            if not tokens[k].strip().startswith("LOOKUP_TABLE"):
                raise ValueError(f"{path}: SCALARS {name} without LOOKUP_TABLE")
            k += 1
            values = []
            while len(values) < npts:
                values.extend(float(t) for t in tokens[k].split())
                k += 1
            arrays[name] = np.array(values).reshape(dims[1], dims[0]).T
    if dims is None or spacing is None:
        raise ValueError(f"{path}: not a STRUCTURED_POINTS file")
    return dims, spacing, arrays


def write_snapshot(state, phi: Field, c: Field, step: int, directory, dt: float) -> Path | None:
    """Gather ``phi``, ``c``, ``p/dt``, ``u``, ``v`` and write one VTK file on rank 0.

    The projection solves for ``p`` scaled by the time step, so the physical
    pressure written out is ``p / dt``.
    """
    fields = (phi, c, state.p, state.v.u, state.v.v)
    globs = [gather(f) for f in fields]
    sub = phi.sub
    if sub.comm is not None and sub.comm.rank != 0:
        return None
    arrays = dict(zip(SNAPSHOT_ARRAYS, globs))
    arrays["pressure"] = arrays["pressure"] / dt
    path = Path(directory) / snapshot_name(step)
    return write_vtk(path, sub.grid, arrays, title=f"biofilm step {step}")


class DiagnosticsWriter:
    """Append-only ``diagnostics.csv`` stream (rank 0 only; a no-op elsewhere)."""

    def __init__(self, directory, active: bool = True):
        self.path = Path(directory) / "diagnostics.csv"
        self.active = active
        self._fh = None
        if active:
            self._fh = open(self.path, "w", newline="")
            self._csv = csv.writer(self._fh)
            self._csv.writerow(Diagnostics.header())
            self._fh.flush()

    def write(self, d: Diagnostics) -> None:
        if not self.active:
            return
        self._csv.writerow([repr(v) if isinstance(v, float) else v for v in d.row()])
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
