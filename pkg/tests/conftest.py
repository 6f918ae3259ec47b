import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from biofilm.flow import FlowParams  # noqa: E402
from biofilm.linsolve import SolverConfig  # noqa: E402
from biofilm.mesh import MIRROR, Field, GridSpec, local_subdomain, update_ghosts  # noqa: E402
from biofilm.operators import VectorField  # noqa: E402

# tight enough that the iterative solves sit well inside the 1e-8 comparisons
TIGHT = SolverConfig(rtol=1e-13, atol=1e-15, max_it=20000)


def serial_sub(n_intervals: int):
    return local_subdomain(GridSpec.from_intervals(n_intervals))


def make_field(sub, array, ghost=1, bc=MIRROR, name=""):
    f = Field.from_global(sub, array, ghost=ghost, bc=bc, name=name)
    update_ghosts(f)
    return f


def make_velocity(sub, u, v, fp: FlowParams):
    bu, bv = fp.bc()
    vf = VectorField(make_field(sub, u, bc=bu, name="u"), make_field(sub, v, bc=bv, name="v"))
    return vf


def wall_consistent_velocity(grid, fp: FlowParams, seed=0, amp=0.05):
    """Smooth random velocity that matches the wall values exactly."""
    rng = np.random.default_rng(seed)
    X, Y = np.meshgrid(grid.x(), grid.y(), indexing="ij")
    bump = np.sin(np.pi * Y)
    u = fp.bottom_velocity[0] + (fp.lid_velocity[0] - fp.bottom_velocity[0]) * Y
    v = fp.bottom_velocity[1] + (fp.lid_velocity[1] - fp.bottom_velocity[1]) * Y
    u = u + amp * bump * rng.uniform(-1, 1, grid.shape)
    v = v + amp * bump * rng.uniform(-1, 1, grid.shape)
    u[:, 0], u[:, -1] = fp.bottom_velocity[0], fp.lid_velocity[0]
    v[:, 0], v[:, -1] = fp.bottom_velocity[1], fp.lid_velocity[1]
    return u, v


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def wall_pairs(fp: FlowParams):
    """``((bottom_u, lid_u), (bottom_v, lid_v))`` for the oracle ghost images."""
    return ((fp.bottom_velocity[0], fp.lid_velocity[0]), (fp.bottom_velocity[1], fp.lid_velocity[1]))


# --- MPI launcher ----------------------------------------------------------------------

MPIRUN = shutil.which("mpirun")


def clean_env():
    """Environment without the MPI runtime variables of this (initialised) process.

    A launcher that inherits them believes it is itself an MPI child and exits.
    """
    return {k: v for k, v in os.environ.items() if not k.startswith(("OMPI_", "PMIX_", "PRTE_"))}


def mpirun(ranks, *args, timeout=900):
    cmd = [MPIRUN, "--allow-run-as-root", "--oversubscribe", "-n", str(ranks), sys.executable, *args]
    return subprocess.run(cmd, capture_output=True, text=True, timeout=timeout, env=clean_env(),
                          stdin=subprocess.DEVNULL)


# --- acceptance report ------------------------------------------------------------------

_ACCEPTANCE = []


class AcceptanceLog:
    """Collects one result line per acceptance criterion."""

    def record(self, number: int, title: str, passed, detail: str) -> None:
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        line = f"[{status}] criterion {number}: {title} -- {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)


@pytest.fixture
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
