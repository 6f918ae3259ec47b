"""Run the default scenario and save the gathered fields and iteration counts.

Usage: scenario_probe.py N STEPS OUT.npz
"""
import sys

import numpy as np

from biofilm.driver.config import SimConfig
from biofilm.driver.run import run_steps
from biofilm.parallel import world

n, steps, out = int(sys.argv[1]), int(sys.argv[2]), sys.argv[3]
comm = world()
cfg = SimConfig(nx=n, ny=n, steps=steps).validate()
fields, iters = run_steps(cfg, comm, steps)
if comm.rank == 0:
    np.savez(out, iterations=np.array(iters), **fields)
