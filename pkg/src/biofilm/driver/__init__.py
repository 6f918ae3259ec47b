"""Configuration, initial conditions, time loop, diagnostics, output and scaling."""
from .config import SimConfig, apply_overrides, load_config
from .diagnostics import Diagnostics, connected_components, count_components, neck_width
from .initial import InitialCondition, build_initial_condition
from .output import read_vtk, write_snapshot, write_vtk
from .run import Simulation, run, scaling_harness, serial_check

__all__ = [
    "SimConfig", "load_config", "apply_overrides", "Diagnostics", "connected_components",
    "count_components", "neck_width", "InitialCondition", "build_initial_condition",
    "read_vtk", "write_snapshot", "write_vtk", "Simulation", "run", "scaling_harness",
    "serial_check",
]
