import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from oracles import count_components_bfs

from biofilm.cli import main
from biofilm.driver.config import ParseError, SimConfig, apply_overrides, describe, load_config
from biofilm.driver.diagnostics import Diagnostics, count_components, label_periodic, neck_width
from biofilm.driver.initial import InitialCondition, initial_phi
from biofilm.driver.output import read_diagnostics, read_vtk, snapshot_name, write_vtk
from biofilm.driver.run import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOLVER, Simulation
from biofilm.errors import ConfigError
from biofilm.mesh import GridSpec

HEADER = ("step,time,mass_phi,free_energy,max_div,phi_min,phi_max,nutrient_total,components,"
          "wall_ms,ch_iters,nut_iters,mom_iters,prs_iters")


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- config -------------------------------------------------------------------------


def test_empty_config_gives_scenario_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, "# nothing\n"))
    assert (cfg.nx, cfg.ny, cfg.dt, cfg.steps) == (256, 256, 1.0, 20)
    assert cfg.ch.Gamma1 == cfg.flow.Gamma1 == 33.467
    assert cfg.ch.Gamma2 == 1.25e6 and cfg.ch.stabilizer == 2.5e6
    assert cfg.flow.Re_s == 9.98e-4 and cfg.flow.Re_n == 2.33e-9
    assert cfg.flow.lid_velocity == (0.1, 0.0)
    assert cfg.nutrient.Ds == 2.3 and cfg.nutrient.A == 100.0
    assert cfg.ch.epsilon == 1.0 and cfg.flow.include_R
    assert cfg.threshold == pytest.approx(0.2)


def test_config_keys_and_sections(tmp_path):
    text = """
    grid.n = 32
    dt = 0.5          # inline comment
    Gamma1 = 2.0
    Gamma2 = 100
    ch.advection = central
    flow.lid_velocity = 0.2 0.0
    flow.max_viscosity_ratio = none
    solver.rtol = 1e-9
    solver.pressure.max_it = 77
    ic.cap_centers = 0.3 0.5; 0.7 0.6
    output.formats = csv
    scaling.ranks = 1 2
    """
    cfg = load_config(_write(tmp_path, text))
    assert cfg.nx == cfg.ny == 32 and cfg.dt == 0.5
    assert cfg.ch.Gamma1 == cfg.flow.Gamma1 == 2.0
    assert cfg.ch.stabilizer == 200.0
    assert cfg.ch.advection == "central"
    assert cfg.flow.lid_velocity == (0.2, 0.0) and cfg.flow.max_viscosity_ratio is None
    assert all(s.rtol == 1e-9 for s in cfg.solvers.values())
    assert cfg.solvers["pressure"].max_it == 77 and cfg.solvers["ch"].max_it == 20000
    assert cfg.ic.cap_centers == ((0.3, 0.5), (0.7, 0.6))
    assert cfg.output.formats == ("csv",) and cfg.scaling.ranks == (1, 2)


def test_describe_roundtrips(tmp_path):
    cfg = load_config(_write(tmp_path, "grid.n = 48\nch.stabilizer = 7.5\nic.seed = 3\nflow.viscous = full\n"))
    again = load_config(_write(tmp_path, describe(cfg), "again.cfg"))
    assert describe(again) == describe(cfg)
    assert again.ch.stabilizer == 7.5 and not again.stabilizer_auto


@pytest.mark.parametrize("text, line, col, word", [
    ("dt = -1\n", None, None, "dt"),
    ("steps = 0\n", None, None, "steps"),
    ("\nbogus = 3\n", 2, 1, "bogus"),
    ("dt = abc\n", 1, 6, "dt"),
    ("  grid.n 64\n", 1, 3, "key = value"),
    ("ch.advection = sideways\n", None, None, "advection"),
])
def test_config_errors_name_the_problem(tmp_path, text, line, col, word):
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, text))
    assert word in str(info.value)
    if line is not None:
        assert isinstance(info.value, ParseError)
        assert (info.value.line, info.value.column) == (line, col)


def test_overrides_apply_after_file(tmp_path):
    cfg = load_config(_write(tmp_path, "steps = 5\n"))
    cfg = apply_overrides(cfg, [("steps", "7"), ("mode", "serialcheck")])
    assert cfg.steps == 7 and cfg.mode == "serialcheck"
    with pytest.raises(ConfigError):
        apply_overrides(cfg, [("nope", "1")])


# --- initial condition ----------------------------------------------------------------


def test_mushroom_pair_ic():
    ic = InitialCondition()
    g = GridSpec.from_intervals(128)
    phi = initial_phi(ic, g)
    assert phi.min() == 0.0 and phi.max() == pytest.approx(0.4)
    thr = 0.5 * ic.phi_bulk
    assert count_components(phi, thr) == 1
    # base layer fills the bottom rows, the top rows are empty
    assert np.all(phi[:, 0] == pytest.approx(0.4)) and np.all(phi[:, -1] == 0.0)
    # mirror symmetry of the pair about x = 1/2
    assert np.allclose(phi[1:], phi[1:][::-1])


@pytest.mark.parametrize("field, value", [("phi_neck", 0.5), ("base_height", 1.2), ("smoothing", 0.0),
                                          ("variant", "blob"), ("cap_centers", ((0.5, 0.1),))])
def test_ic_validation(field, value):
    ic = InitialCondition(**{field: value})
    with pytest.raises(ConfigError):
        ic.validate()


def test_uniform_perturbed_is_seeded():
    g = GridSpec.from_intervals(16)
    a = initial_phi(InitialCondition(variant="uniform_perturbed", seed=4), g)
    b = initial_phi(InitialCondition(variant="uniform_perturbed", seed=4), g)
    assert np.array_equal(a, b) and np.abs(a - 0.5).max() <= 0.01


# --- connectivity ------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(6))
def test_component_count_matches_flood_fill(seed):
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0, 1, (20, 15))
    assert count_components(phi, 0.55) == count_components_bfs(phi, 0.55)


def test_components_wrap_across_seam():
    m = np.zeros((10, 6), dtype=bool)
    m[0, 2] = m[9, 2] = True
    assert label_periodic(m)[1] == 1
    m[5, 4] = True
    assert label_periodic(m)[1] == 2


def test_neck_width():
    phi = np.zeros((12, 10))
    phi[:, :2] = 1.0          # base
    phi[3:6, 2:6] = 1.0       # stalk, 3 wide
    phi[4, 4] = 0.0           # narrowed to 2 on row 4
    assert neck_width(phi, 0.5, 2, 6) == 2
    phi[:, 2] = 0.0           # cut the stalk off the base
    assert neck_width(phi, 0.5, 3, 6) == 0


# --- files -----------------------------------------------------------------------------


def test_vtk_roundtrip(tmp_path, rng):
    g = GridSpec(4, 4)
    z = np.zeros(g.shape)
    path = write_vtk(tmp_path / "z.vtk", g, {"phi": z})
    text = path.read_text()
    assert "DIMENSIONS 4 4 1" in text and "POINT_DATA 16" in text
    assert "SCALARS phi double 1\nLOOKUP_TABLE default" in text
    g = GridSpec.from_intervals(6)
    a = rng.normal(size=g.shape)
    write_vtk(tmp_path / "a.vtk", g, {"phi": a, "c": 2 * a})
    dims, spacing, arrays = read_vtk(tmp_path / "a.vtk")
    assert dims == (7, 7) and spacing == (g.dx, g.dy)
    assert np.array_equal(arrays["phi"][:-1], a) and np.array_equal(arrays["phi"][-1], a[0])
    assert np.array_equal(arrays["c"][:-1], 2 * a)


def test_vtk_rejects_wrong_shape(tmp_path):
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "x.vtk", GridSpec(5, 5), {"phi": np.zeros((3, 3))})


def test_diagnostics_header():
    assert ",".join(Diagnostics.header()) == HEADER


def test_simulation_steps_and_diagnostics():
    cfg = SimConfig(nx=16, ny=16, steps=2)
    sim = Simulation(cfg.validate())
    d0 = sim.diagnostics()
    assert d0.step == 0 and d0.components == 1
    d1 = sim.step()
    assert d1.step == 1 and d1.time == 1.0 and d1.ch_iters > 0 and d1.prs_iters > 0
    assert d1.max_div <= 1e-7
    fields = sim.fields()
    assert set(fields) == {"phi", "c", "p", "u", "v"}
    assert np.all(fields["u"][:, -1] == 0.1)


# --- CLI ----------------------------------------------------------------------------------


SMALL = "grid.n = 16\nsteps = 2\noutput.every = 1\n"


def test_cli_simulate_writes_outputs(tmp_path):
    cfgp = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["--config", str(cfgp), "--output", str(out)]) == EXIT_OK
    rows = read_diagnostics(out / "diagnostics.csv")
    assert (out / "diagnostics.csv").read_text().splitlines()[0] == HEADER
    assert [int(r["step"]) for r in rows] == [0, 1, 2]
    for k in range(3):
        assert (out / snapshot_name(k)).exists()
    dims, _, arrays = read_vtk(out / snapshot_name(2))
    assert dims == (17, 17) and set(arrays) == {"phi", "c", "pressure", "u", "v"}
    assert load_config(out / "config.txt").nx == 16


def test_cli_steps_flag_and_override(tmp_path):
    cfgp = _write(tmp_path, SMALL)
    out = tmp_path / "o2"
    code = main(["--config", str(cfgp), "--output", str(out), "--steps", "1",
                 "--override", "output.formats=csv"])
    assert code == EXIT_OK
    assert len(read_diagnostics(out / "diagnostics.csv")) == 2
    assert not list(out.glob("*.vtk"))


def test_cli_config_error(tmp_path, capsys):
    cfgp = _write(tmp_path, "grid.n = 16\nbogus = 1\n")
    assert main(["--config", str(cfgp)]) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["--config", str(_write(tmp_path, SMALL)), "--override", "dt"]) == EXIT_CONFIG


def test_cli_solver_failure(tmp_path):
    cfgp = _write(tmp_path, SMALL + "solver.max_it = 1\nsolver.rtol = 1e-14\n")
    out = tmp_path / "fail"
    assert main(["--config", str(cfgp), "--output", str(out)]) == EXIT_SOLVER
    # the initial state is still on disk
    assert len(read_diagnostics(out / "diagnostics.csv")) == 1
    assert (out / snapshot_name(0)).exists()


def test_cli_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfgp = _write(tmp_path, SMALL)
    assert main(["--config", str(cfgp), "--output", str(blocker / "sub")]) == EXIT_IO


def test_cli_module_entry(tmp_path):
    cfgp = _write(tmp_path, SMALL)
    res = subprocess.run([sys.executable, "-m", "biofilm.cli", "--config", str(cfgp), "--output",
                          str(tmp_path / "m"), "--steps", "1"], capture_output=True, text=True,
                         env={**os.environ, "OMPI_MCA_rmaps_base_oversubscribe": "1"})
    assert res.returncode == EXIT_OK, res.stderr
    with open(tmp_path / "m" / "diagnostics.csv") as fh:
        assert len(list(csv.reader(fh))) == 3
