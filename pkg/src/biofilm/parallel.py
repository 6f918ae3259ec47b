"""Thin communicator wrapper around mpi4py with a serial fallback."""
from __future__ import annotations

import numpy as np

try:
    from mpi4py import MPI
except ImportError:  # pragma: no cover - mpi4py is optional at runtime
    MPI = None


class SerialComm:
    """Single-process stand-in implementing the subset of the MPI API we use."""

    rank = 0
    size = 1

    def Get_rank(self):
        return 0

    def Get_size(self):
        return 1

    def Sendrecv(self, sendbuf, dest, sendtag=0, recvbuf=None, source=0, recvtag=0):
        recvbuf[...] = sendbuf

    def allgather(self, obj):
        return [obj]

    def gather(self, obj, root=0):
        return [obj]

    def bcast(self, obj, root=0):
        return obj

    def Barrier(self):
        pass

    def Split(self, color, key=0):
        return self

    def Free(self):
        pass


def world():
    """Return the process-wide communicator (``COMM_WORLD`` or a serial stub)."""
    if MPI is None:
        return SerialComm()
    return MPI.COMM_WORLD


def self_comm():
    if MPI is None:
        return SerialComm()
    return MPI.COMM_SELF


def fixed_order_sum(comm, value: float) -> float:
    """Sum one float per rank, always accumulated in rank order.

    ``allreduce`` leaves the association order to the MPI library; gathering the
    partials and summing them left to right keeps reruns bitwise reproducible.
    """
    if comm.size == 1:
        return float(value)
    parts = comm.allgather(float(value))
    total = 0.0
    for p in parts:
        total += p
    return total


def fixed_order_sum_many(comm, values) -> np.ndarray:
    """Vector version of :func:`fixed_order_sum` (one collective for many sums)."""
    values = np.asarray(values, dtype=float)
    if comm.size == 1:
        return values.copy()
    parts = comm.allgather(values)
    total = np.zeros_like(values)
    for p in parts:
        total += p
    return total


def global_max(comm, value: float) -> float:
    if comm.size == 1:
        return float(value)
    return float(max(comm.allgather(float(value))))

