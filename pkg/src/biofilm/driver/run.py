"""Outer time loop, serial-check mode and the strong-scaling harness."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..errors import BiofilmError, ConfigError, DomainError, StepError
from ..flow import FlowState, flow_step, max_interior_divergence
from ..mesh import Field, gather, global_reduce, integrate, local_subdomain
from ..parallel import SerialComm, world
from ..transport import PhiHistory, ch_step, free_energy, nutrient_step
from .config import SimConfig, describe
from .diagnostics import Diagnostics, connected_components, nutrient_total
from .initial import build_initial_condition
from .output import DiagnosticsWriter, write_snapshot

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_IO = 3


class Simulation:
    """Collective state of one run; every rank holds its own block."""

    def __init__(self, cfg: SimConfig, comm=None):
        self.cfg = cfg
        self.comm = comm if comm is not None else SerialComm()
        self.sub = local_subdomain(cfg.grid, self.comm)
        hist, c, flow = build_initial_condition(cfg.ic, self.sub, cfg.flow)
        self.hist: PhiHistory = hist
        self.c: Field = c
        self.c_prev: Field = c
        self.flow: FlowState = flow
        self.step_index = 0
        self.time = 0.0

    @property
    def phi(self) -> Field:
        return self.hist.phi_curr

    def step(self) -> Diagnostics:
        """Advance one step: CH, nutrient, then flow, and return the diagnostics."""
        cfg, dt, s = self.cfg, self.cfg.dt, self.cfg.solvers
        t0 = time.perf_counter()
        phi_next, r_ch = ch_step(self.hist, self.flow.v, self.c, cfg.ch, dt, s["ch"])
        c_next, r_nut = nutrient_step(self.c, self.hist, phi_next, self.flow.v, cfg.nutrient, dt,
                                      s["nutrient"], c_prev=self.c_prev)
        phi_star = self.hist.extrapolated()
        flow, r_flow = flow_step(self.flow, phi_next, cfg.flow, dt, s["momentum"],
                                 phi_star=phi_star, pressure_solver=s["pressure"])
        wall_ms = 1e3 * (time.perf_counter() - t0)
        self.hist = self.hist.advance(phi_next)
        self.c_prev, self.c = self.c, c_next
        self.flow = flow
        self.step_index += 1
        self.time = self.step_index * dt
        return self.diagnostics(wall_ms, (r_ch.iterations, r_nut.iterations,
                                          r_flow.momentum.iterations, r_flow.pressure.iterations))

    def diagnostics(self, wall_ms: float = 0.0, iters=(0, 0, 0, 0)) -> Diagnostics:
        phi = self.phi
        return Diagnostics(
            step=self.step_index,
            time=self.time,
            mass_phi=integrate(phi),
            free_energy=free_energy(phi, self.cfg.ch),
            max_div=max_interior_divergence(self.flow.v),
            phi_min=global_reduce(phi, "min"),
            phi_max=global_reduce(phi, "max"),
            nutrient_total=nutrient_total(phi, self.c),
            components=connected_components(phi, self.cfg.threshold),
            wall_ms=wall_ms,
            ch_iters=iters[0],
            nut_iters=iters[1],
            mom_iters=iters[2],
            prs_iters=iters[3],
        )

    def fields(self) -> dict:
        """Global arrays of every output field (rank 0; None elsewhere)."""
        named = {"phi": self.phi, "c": self.c, "p": self.flow.p, "u": self.flow.v.u, "v": self.flow.v.v}
        return {k: gather(f) for k, f in named.items()}

    def snapshot(self, directory) -> None:
        write_snapshot(self.flow, self.phi, self.c, self.step_index, directory, self.cfg.dt)


def _is_root(comm) -> bool:
    return comm.rank == 0


def _agree(comm, ok: bool) -> bool:
    """True on every rank only if ``ok`` holds on every rank."""
    if comm.size == 1:
        return ok
    return all(comm.allgather(ok))


def _prepare_output(cfg: SimConfig, comm) -> bool:
    ok = True
    if _is_root(comm):
        try:
            out = Path(cfg.output.directory)
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.txt").write_text(describe(cfg))
        except OSError as exc:
            log.error("cannot prepare output directory %s: %s", cfg.output.directory, exc)
            ok = False
    return _agree(comm, ok)


def simulate(cfg: SimConfig, comm=None) -> int:
    """Run the time loop with output; returns an exit code."""
    comm = comm if comm is not None else world()
    if not _prepare_output(cfg, comm):
        return EXIT_IO
    sim = Simulation(cfg, comm)
    root = _is_root(comm)
    vtk = "vtk" in cfg.output.formats
    every = cfg.output.every
    try:
        writer = DiagnosticsWriter(cfg.output.directory, active=root and "csv" in cfg.output.formats)
    except OSError as exc:
        log.error("cannot open diagnostics file: %s", exc)
        writer = None
    if not _agree(comm, writer is not None):
        return EXIT_IO
    status = EXIT_OK
    try:
        with writer:
            writer.write(sim.diagnostics())
            if vtk:
                sim.snapshot(cfg.output.directory)
            for _ in range(cfg.steps):
                try:
                    d = sim.step()
                except (StepError, DomainError) as exc:
                    if root:
                        log.error("step %d failed: %s", sim.step_index + 1, exc)
                    status = EXIT_SOLVER
                    break
                writer.write(d)
                if root:
                    log.info("step %d t=%g mass=%.12g comps=%d its=%d/%d/%d/%d %.0f ms",
                             d.step, d.time, d.mass_phi, d.components, d.ch_iters, d.nut_iters,
                             d.mom_iters, d.prs_iters, d.wall_ms)
                if vtk and every and d.step % every == 0 and d.step != cfg.steps:
                    sim.snapshot(cfg.output.directory)
            # the last completed state is always kept, also after a failure
            if vtk:
                sim.snapshot(cfg.output.directory)
    except OSError as exc:
        log.error("write failed: %s", exc)
        return EXIT_IO
    return status


# --- serial check ----------------------------------------------------------------


@dataclass
class SerialCheckReport:
    ranks: int
    steps: int
    max_diff: dict
    iterations_equal: bool

    @property
    def worst(self) -> float:
        return max(self.max_diff.values())


def run_steps(cfg: SimConfig, comm, steps: int):
    """Advance ``steps`` steps and return ``(gathered fields, iteration rows)``."""
    sim = Simulation(cfg, comm)
    iters = []
    for _ in range(steps):
        d = sim.step()
        iters.append((d.ch_iters, d.nut_iters, d.mom_iters, d.prs_iters))
    return sim.fields(), iters


def serial_check(cfg: SimConfig, comm=None) -> SerialCheckReport | None:
    """Compare the distributed run against a single-rank rerun on rank 0.

    All ranks run the decomposed problem; rank 0 then repeats it alone and
    reports the max-norm field differences (None on the other ranks).
    """
    comm = comm if comm is not None else world()
    fields, iters = run_steps(cfg, comm, cfg.steps)
    report = None
    if _is_root(comm):
        ref_fields, ref_iters = run_steps(cfg, SerialComm(), cfg.steps)
        diff = {k: float(np.max(np.abs(fields[k] - ref_fields[k]))) for k in fields}
        report = SerialCheckReport(comm.size, cfg.steps, diff, iters == ref_iters)
    comm.Barrier()
    return report


def serial_check_main(cfg: SimConfig, comm=None, tol: float = 1e-8) -> int:
    comm = comm if comm is not None else world()
    if not _prepare_output(cfg, comm):
        return EXIT_IO
    try:
        rep = serial_check(cfg, comm)
    except (StepError, DomainError) as exc:
        log.error("serial check failed: %s", exc)
        return EXIT_SOLVER
    if rep is None:
        return EXIT_OK
    lines = [f"ranks {rep.ranks} steps {rep.steps}"]
    lines += [f"{k} {v:.3e}" for k, v in rep.max_diff.items()]
    lines.append(f"iterations_equal {rep.iterations_equal}")
    ok = rep.worst <= tol and rep.iterations_equal
    lines.append("PASS" if ok else "FAIL")
    try:
        (Path(cfg.output.directory) / "serialcheck.txt").write_text("\n".join(lines) + "\n")
    except OSError as exc:
        log.error("cannot write serial-check report: %s", exc)
        return EXIT_IO
    print("\n".join(lines))
    return EXIT_OK if ok else EXIT_SOLVER


# --- strong scaling ----------------------------------------------------------------


SCALING_HEADER = ["ranks", "grid", "steps", "wall_ms_per_step", "speedup", "efficiency"]


def timed_steps(cfg: SimConfig, comm, steps: int) -> float:
    """Mean wall time per step in ms (max over ranks); setup and I/O are untimed."""
    sim = Simulation(cfg, comm)
    comm.Barrier()
    t0 = time.perf_counter()
    for _ in range(steps):
        sim.step()
    comm.Barrier()
    elapsed = time.perf_counter() - t0
    if comm.size > 1:
        elapsed = max(comm.allgather(elapsed))
    return 1e3 * elapsed / steps


def scaling_rows(results: dict) -> list[dict]:
    """``{(grid, ranks): ms_per_step}`` -> rows with speedup and efficiency vs 1 rank."""
    rows = []
    for grid in sorted({g for g, _ in results}):
        base = results.get((grid, 1))
        for ranks in sorted(r for g, r in results if g == grid):
            ms = results[(grid, ranks)]
            speedup = base / ms if base else float("nan")
            rows.append({"ranks": ranks, "grid": grid, "steps": None, "wall_ms_per_step": ms,
                         "speedup": speedup, "efficiency": speedup / ranks})
    return rows


def scaling_harness(cfg: SimConfig, comm=None) -> list[dict] | None:
    """Time ``scaling.steps`` steps for every grid and rank count.

    Sub-communicators of the launched world are split off for each rank count,
    so one launch with ``max(scaling.ranks)`` processes covers the whole sweep.
    Returns the rows on rank 0 and None elsewhere.
    """
    comm = comm if comm is not None else world()
    results = {}
    for grid in cfg.scaling.grids:
        gcfg = replace(cfg, nx=grid, ny=grid)
        for ranks in cfg.scaling.ranks:
            if ranks > comm.size:
                if _is_root(comm):
                    log.warning("skipping %d ranks: only %d launched", ranks, comm.size)
                continue
            color = 0 if comm.rank < ranks else 1
            sub = comm.Split(color, comm.rank)
            ms = None
            if color == 0:
                ms = timed_steps(gcfg, sub, cfg.scaling.steps)
            if sub is not comm:
                sub.Free()
            comm.Barrier()
            if comm.size > 1:
                ms = comm.bcast(ms, root=0)
            results[(grid, ranks)] = ms
    if not _is_root(comm):
        return None
    rows = scaling_rows(results)
    for r in rows:
        r["steps"] = cfg.scaling.steps
    return rows


def write_scaling_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SCALING_HEADER)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def scaling_main(cfg: SimConfig, comm=None) -> int:
    comm = comm if comm is not None else world()
    if not _prepare_output(cfg, comm):
        return EXIT_IO
    try:
        rows = scaling_harness(cfg, comm)
    except (StepError, DomainError) as exc:
        log.error("scaling run failed: %s", exc)
        return EXIT_SOLVER
    if rows is None:
        return EXIT_OK
    try:
        write_scaling_csv(rows, Path(cfg.output.directory) / "scaling.csv")
    except OSError as exc:
        log.error("cannot write scaling.csv: %s", exc)
        return EXIT_IO
    for r in rows:
        print(f"grid {r['grid']} ranks {r['ranks']}: {r['wall_ms_per_step']:.1f} ms/step "
              f"speedup {r['speedup']:.2f} efficiency {r['efficiency']:.2f}")
    return EXIT_OK


def run(cfg: SimConfig, comm=None) -> int:
    """Dispatch on ``cfg.mode``; returns the process exit code."""
    try:
        cfg.validate()
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    if cfg.mode == "scaling":
        return scaling_main(cfg, comm)
    if cfg.mode == "serialcheck":
        return serial_check_main(cfg, comm)
    try:
        return simulate(cfg, comm)
    except BiofilmError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
