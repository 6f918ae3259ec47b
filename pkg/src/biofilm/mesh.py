"""Structured grid, block decomposition and ghost-layer bookkeeping.

The domain is the unit square. Nodes sit at ``(i*dx, j*dy)``; the x direction is
periodic, so column ``nx-1`` is the same physical column as column 0 and only the
``nx-1`` unique columns are stored. The y direction ends in physical walls at
``j = 0`` and ``j = ny-1``, both of which are stored nodes.

Arrays are indexed ``[i, j]`` (x first).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, DecompositionError
from .parallel import SerialComm, global_max

MAX_GHOST = 2


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs at least 4 nodes per direction, got {self.nx}x{self.ny}")

    @classmethod
    def from_intervals(cls, nx_intervals: int, ny_intervals: Optional[int] = None) -> "GridSpec":
        ny_intervals = nx_intervals if ny_intervals is None else ny_intervals
        return cls(nx_intervals + 1, ny_intervals + 1)

    @property
    def dx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def dy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def mx(self) -> int:
        """Number of unique (stored) columns."""
        return self.nx - 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.mx, self.ny)

    @property
    def size(self) -> int:
        return self.mx * self.ny

    def x(self) -> np.ndarray:
        return np.arange(self.mx) * self.dx

    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.dy

    def row_weights(self) -> np.ndarray:
        """Trapezoid weights in y: the wall rows carry half a cell."""
        w = np.ones(self.ny)
        w[0] = w[-1] = 0.5
        return w


@dataclass(frozen=True)
class Subdomain:
    grid: GridSpec
    rank: int
    dims: tuple[int, int]
    coords: tuple[int, int]
    i_lo: int
    i_hi: int
    j_lo: int
    j_hi: int
    west: int
    east: int
    south: Optional[int]
    north: Optional[int]
    comm: object = field(default=None, compare=False, repr=False)

    @property
    def nx(self) -> int:
        return self.i_hi - self.i_lo

    @property
    def ny(self) -> int:
        return self.j_hi - self.j_lo

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def at_south_wall(self) -> bool:
        return self.south is None

    @property
    def at_north_wall(self) -> bool:
        return self.north is None

    def x(self) -> np.ndarray:
        return np.arange(self.i_lo, self.i_hi) * self.grid.dx

    def y(self) -> np.ndarray:
        return np.arange(self.j_lo, self.j_hi) * self.grid.dy

    def mesh(self, ext: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates of the owned block grown by ``ext`` nodes on every side."""
        i = np.arange(self.i_lo - ext, self.i_hi + ext)
        j = np.arange(self.j_lo - ext, self.j_hi + ext)
        return np.meshgrid(i * self.grid.dx, j * self.grid.dy, indexing="ij")

    def row_weights(self) -> np.ndarray:
        return self.grid.row_weights()[self.j_lo:self.j_hi]

    def with_comm(self, comm) -> "Subdomain":
        return dataclasses.replace(self, comm=comm)


def _split(n: int, parts: int) -> list[tuple[int, int]]:
    base, extra = divmod(n, parts)
    bounds = []
    lo = 0
    for k in range(parts):
        hi = lo + base + (1 if k < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def rank_grid(spec: GridSpec, ranks: int) -> tuple[int, int]:
    """Choose ``(px, py)``: nearest to square, then least halo, then more ranks in x."""
    if ranks < 1:
        raise DecompositionError(f"need at least one rank, got {ranks}")
    if ranks > spec.mx and ranks > spec.ny:
        raise DecompositionError(f"{ranks} ranks exceed the {spec.mx}x{spec.ny} node grid")
    candidates = []
    for px in range(1, ranks + 1):
        if ranks % px:
            continue
        py = ranks // px
        # every block must be able to fill a full ghost layer from its neighbour
        if px > 1 and spec.mx // px < MAX_GHOST:
            continue
        if py > 1 and spec.ny // py < MAX_GHOST:
            continue
        cuts_x = px if px > 1 else 0  # periodic seam becomes a cut once split
        halo = cuts_x * spec.ny + (py - 1) * spec.mx
        candidates.append((abs(px - py), halo, -px, px, py))
    if not candidates:
        raise DecompositionError(
            f"cannot split a {spec.mx}x{spec.ny} grid over {ranks} ranks with ghost width {MAX_GHOST}"
        )
    candidates.sort()
    return candidates[0][3], candidates[0][4]


def decompose(spec: GridSpec, ranks: int) -> list[Subdomain]:
    px, py = rank_grid(spec, ranks)
    xs = _split(spec.mx, px)
    ys = _split(spec.ny, py)
    subs = []
    for cy in range(py):
        for cx in range(px):
            rank = cy * px + cx
            subs.append(
                Subdomain(
                    grid=spec,
                    rank=rank,
                    dims=(px, py),
                    coords=(cx, cy),
                    i_lo=xs[cx][0],
                    i_hi=xs[cx][1],
                    j_lo=ys[cy][0],
                    j_hi=ys[cy][1],
                    west=cy * px + (cx - 1) % px,
                    east=cy * px + (cx + 1) % px,
                    south=None if cy == 0 else (cy - 1) * px + cx,
                    north=None if cy == py - 1 else (cy + 1) * px + cx,
                )
            )
    return subs


def local_subdomain(spec: GridSpec, comm=None) -> Subdomain:
    comm = SerialComm() if comm is None else comm
    return decompose(spec, comm.size)[comm.rank].with_comm(comm)


# --- ghost policies -------------------------------------------------------


@dataclass(frozen=True)
class EvenMirror:
    """Zero normal derivative: ``f(-k) = f(k)`` about the wall node."""


@dataclass(frozen=True)
class Dirichlet:
    """Wall node pinned to ``value``; ghosts reflect oddly about it.

    ``f(-k) = 2*value - f(k)``, so a centred difference at the wall reads the
    one-sided slope towards the interior and normal fluxes are antisymmetric.
    """

    value: float = 0.0


MIRROR = EvenMirror()


class Field:
    """Rank-local scalar array over owned nodes plus a ghost frame."""

    def __init__(self, sub: Subdomain, ghost: int = 1, name: str = "", bc=MIRROR, data=None):
        if ghost not in (1, 2):
            raise ContractError(f"ghost width must be 1 or 2, got {ghost}")
        self.sub = sub
        self.ghost = ghost
        self.name = name
        if isinstance(bc, tuple):
            self.south_bc, self.north_bc = bc
        else:
            self.south_bc = self.north_bc = bc
        shape = (sub.nx + 2 * ghost, sub.ny + 2 * ghost)
        if data is None:
            self.data = np.zeros(shape)
        else:
            if data.shape != shape:
                raise ContractError(f"data shape {data.shape} does not match layout {shape}")
            self.data = data

    @property
    def bc(self):
        return (self.south_bc, self.north_bc)

    @property
    def owned(self) -> np.ndarray:
        g = self.ghost
        return self.data[g:-g, g:-g]

    @owned.setter
    def owned(self, values):
        g = self.ghost
        self.data[g:-g, g:-g] = values

    def block(self, i0: int, i1: int, j0: int, j1: int) -> np.ndarray:
        """View of the rectangle ``[i0,i1) x [j0,j1)`` in owned-relative indices."""
        g = self.ghost
        if i0 < -g or j0 < -g or i1 > self.sub.nx + g or j1 > self.sub.ny + g:
            raise ContractError(f"block [{i0},{i1})x[{j0},{j1}) exceeds ghost width {g}")
        return self.data[g + i0:g + i1, g + j0:g + j1]

    def shifted(self, di: int, dj: int, ext=0) -> np.ndarray:
        """Values at ``node + (di, dj)`` for every node of the owned block grown by ``ext``.

        ``ext`` is either one growth for both directions or an ``(ex, ey)`` pair.
        """
        ex, ey = (ext, ext) if isinstance(ext, int) else ext
        return self.block(di - ex, self.sub.nx + di + ex, dj - ey, self.sub.ny + dj + ey)

    def like(self, name: Optional[str] = None, ghost: Optional[int] = None, bc=None) -> "Field":
        return Field(
            self.sub,
            self.ghost if ghost is None else ghost,
            self.name if name is None else name,
            self.bc if bc is None else bc,
        )

    def copy(self, name: Optional[str] = None) -> "Field":
        f = self.like(name)
        f.data[...] = self.data
        return f

    def with_values(self, owned: np.ndarray, name: Optional[str] = None) -> "Field":
        f = self.like(name)
        f.owned = owned
        return f

    @classmethod
    def from_global(cls, sub: Subdomain, array: np.ndarray, **kw) -> "Field":
        """Scatter-free construction: every rank slices its block from a global array."""
        array = np.asarray(array, dtype=float)
        if array.shape != sub.grid.shape:
            raise ContractError(f"global array {array.shape} does not match grid {sub.grid.shape}")
        f = cls(sub, **kw)
        f.owned = array[sub.i_lo:sub.i_hi, sub.j_lo:sub.j_hi]
        return f

    @classmethod
    def from_function(cls, sub: Subdomain, fn: Callable, **kw) -> "Field":
        f = cls(sub, **kw)
        x, y = sub.mesh()
        f.owned = np.broadcast_to(fn(x, y), x.shape)
        return f

    def __repr__(self):
        return f"Field({self.name!r}, block={self.sub.shape}, ghost={self.ghost})"


# --- communication ----------------------------------------------------------

_TAG_E, _TAG_W, _TAG_N, _TAG_S = 11, 12, 13, 14


def _comm(sub: Subdomain):
    return sub.comm if sub.comm is not None else SerialComm()


def halo_exchange(f: Field) -> Field:
    """Fill ghost cells that mirror another block's owned nodes (neighbours and periodic seam).

    Exchanges x first (owned rows only) and then y over the full padded width, so
    corner ghosts arrive as well. Ghost rows beyond a physical wall are left alone.
    """
    _exchange_many([f])
    return f


def halo_exchange_many(fields) -> None:
    widths = {f.ghost for f in fields}
    if len(widths) > 1:
        raise ContractError(f"fields exchanged together must share a ghost width, got {sorted(widths)}")
    _exchange_many(fields)


def _exchange_many(fields) -> None:
    for f in fields:
        _exchange_x(f)
    for f in fields:
        _exchange_y(f)


def _exchange_x(f: Field) -> None:
    sub, g, d = f.sub, f.ghost, f.data
    n = sub.nx
    rows = slice(g, g + sub.ny)
    if sub.dims[0] == 1:
        d[0:g, rows] = d[n:n + g, rows]
        d[n + g:n + 2 * g, rows] = d[g:2 * g, rows]
        return
    comm = _comm(sub)
    recv = np.empty((g, sub.ny))
    # eastward: my east edge goes to the east neighbour's west ghosts
    comm.Sendrecv(np.ascontiguousarray(d[n:n + g, rows]), dest=sub.east, sendtag=_TAG_E,
                  recvbuf=recv, source=sub.west, recvtag=_TAG_E)
    d[0:g, rows] = recv
    comm.Sendrecv(np.ascontiguousarray(d[g:2 * g, rows]), dest=sub.west, sendtag=_TAG_W,
                  recvbuf=recv, source=sub.east, recvtag=_TAG_W)
    d[n + g:n + 2 * g, rows] = recv


def _exchange_y(f: Field) -> None:
    sub, g, d = f.sub, f.ghost, f.data
    if sub.dims[1] == 1:
        return
    m = sub.ny
    comm = _comm(sub)
    width = d.shape[0]
    recv = np.empty((width, g))
    null = _proc_null(comm)
    north = null if sub.north is None else sub.north
    south = null if sub.south is None else sub.south
    comm.Sendrecv(np.ascontiguousarray(d[:, m:m + g]), dest=north, sendtag=_TAG_N,
                  recvbuf=recv, source=south, recvtag=_TAG_N)
    if sub.south is not None:
        d[:, 0:g] = recv
    comm.Sendrecv(np.ascontiguousarray(d[:, g:2 * g]), dest=south, sendtag=_TAG_S,
                  recvbuf=recv, source=north, recvtag=_TAG_S)
    if sub.north is not None:
        d[:, m + g:m + 2 * g] = recv


def _proc_null(comm):
    try:
        from mpi4py import MPI
        return MPI.PROC_NULL
    except ImportError:  # pragma: no cover
        return -1


def fill_physical_ghosts(f: Field) -> Field:
    """Apply the wall policies to ghost rows beyond ``y = 0`` and ``y = 1``.

    Mirror sources may sit in the inner halo when a block is thinner than the
    ghost width, so this must run after :func:`halo_exchange`.
    """
    sub, g = f.sub, f.ghost
    if sub.at_south_wall:
        _fill_edge(f, f.south_bc, wall=g, step=-1)
    if sub.at_north_wall:
        _fill_edge(f, f.north_bc, wall=g + sub.ny - 1, step=1)
    return f


def _fill_edge(f: Field, policy, wall: int, step: int) -> None:
    d, g = f.data, f.ghost
    if policy is None:
        raise ContractError(f"field {f.name!r} has no ghost policy on a wall edge")
    if isinstance(policy, Dirichlet):
        d[:, wall] = policy.value
        for k in range(1, g + 1):
            d[:, wall + step * k] = 2.0 * policy.value - d[:, wall - step * k]
    elif isinstance(policy, EvenMirror):
        for k in range(1, g + 1):
            d[:, wall + step * k] = d[:, wall - step * k]
    else:
        raise ContractError(f"unknown ghost policy {policy!r}")


def update_ghosts(*fields: Field) -> None:
    """Halo exchange followed by the wall fill, for each field."""
    for f in fields:
        _exchange_x(f)
    for f in fields:
        _exchange_y(f)
    for f in fields:
        fill_physical_ghosts(f)


# --- reductions -------------------------------------------------------------


# Global sums are accumulated over a fixed tiling of the grid: 8-column by
# 32-row tiles (row 0 on its own, so that tiles start at 1 + 32k). Subdomain
# boundaries of power-of-two splits fall on tile boundaries, which makes every
# reduction bitwise independent of the partition.
SUM_TILE_X = 8
SUM_TILE_Y = 32


def _tiling(grid: GridSpec) -> tuple[int, int]:
    tx = next(t for t in (SUM_TILE_X, 4, 2, 1) if grid.mx % t == 0)
    ty = next(t for t in (SUM_TILE_Y, 16, 8, 4, 2, 1) if (grid.ny - 1) % t == 0)
    return tx, ty


def _tile_extent(sub: Subdomain, tx: int, ty: int):
    """Tile index ranges covering the owned block, plus the padded node ranges."""
    ix0, ix1 = sub.i_lo // tx, -(-sub.i_hi // tx)
    if sub.j_lo == 0:
        iy0 = 0
    else:
        iy0 = 1 + (sub.j_lo - 1) // ty
    iy1 = 1 + -(-(sub.j_hi - 1) // ty)
    j0 = 0 if iy0 == 0 else 1 + (iy0 - 1) * ty
    j1 = 1 + (iy1 - 1) * ty
    return ix0, ix1, iy0, iy1, ix0 * tx, ix1 * tx, j0, j1


def _tile_dots(sub: Subdomain, V: np.ndarray, w: np.ndarray):
    """Per-tile partial dot products ``V[r] . w``, shaped ``(..., tiles_x, tiles_y, r)``."""
    tx, ty = _tiling(sub.grid)
    ix0, ix1, iy0, iy1, i0, i1, j0, j1 = _tile_extent(sub, tx, ty)
    if (i0, i1, j0, j1) != (sub.i_lo, sub.i_hi, sub.j_lo, sub.j_hi):
        # unaligned block: pad with zeros (deterministic, no longer partition-free)
        pv = np.zeros(V.shape[:-2] + (i1 - i0, j1 - j0))
        pw = np.zeros(w.shape[:-2] + (i1 - i0, j1 - j0))
        sl = (Ellipsis, slice(sub.i_lo - i0, sub.i_hi - i0), slice(sub.j_lo - j0, sub.j_hi - j0))
        pv[sl] = V
        pw[sl] = w
        V, w = pv, pw
    ni, nj = w.shape[-2:]
    first = 1 if iy0 == 0 else 0
    nseg = (nj - first) // ty
    Vs = V[..., first:].reshape(V.shape[:-1] + (nseg, ty))
    ws = w[..., first:].reshape(w.shape[:-1] + (nseg, 1, ty))
    if V.shape[0] == 1:
        # fixed-length sums along contiguous segments do not depend on the address
        seg = (Vs[0] * ws[..., 0, :]).sum(axis=-1)[..., None]
    else:
        # one small matrix-vector product per contiguous column segment
        seg = np.matmul(ws, np.moveaxis(Vs, 0, -1))[..., 0, :]
    if first:
        row0 = np.moveaxis(V[..., 0] * w[..., 0], 0, -1)
        seg = np.concatenate([row0[..., None, :], seg], axis=-2)
    seg = seg.reshape(seg.shape[:-3] + (ni // tx, tx) + seg.shape[-2:])
    acc = seg[..., 0, :, :].copy()
    for k in range(1, tx):
        acc += seg[..., k, :, :]
    return ix0, ix1, iy0, iy1, acc


def global_dots(sub: Subdomain, V: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``[sum(V[r] * w) for r]`` over all ranks, independent of the partition.

    ``V`` is shaped ``(r, ..., ni, nj)`` and ``w`` like ``V[0]``.
    """
    tx, ty = _tiling(sub.grid)
    part = _tile_dots(sub, V, w)
    acc = part[-1]
    comm = _comm(sub)
    if comm.size == 1:
        full = acc
    else:
        parts = comm.allgather(part)
        ntx = sub.grid.mx // tx
        nty = 1 + (sub.grid.ny - 1) // ty
        full = np.zeros(acc.shape[:-3] + (ntx, nty, acc.shape[-1]))
        for ix0, ix1, iy0, iy1, a in parts:
            full[..., ix0:ix1, iy0:iy1, :] += a
    r = full.shape[-1]
    return np.ascontiguousarray(full.reshape(-1, r).T).sum(axis=1)


def global_sums(sub: Subdomain, arrays) -> np.ndarray:
    """Sums of distributed arrays shaped ``(..., ni, nj)``, independent of the partition."""
    return np.array([global_dots(sub, np.asarray(a, dtype=float)[None], np.ones(np.shape(a)))[0]
                     for a in arrays])


def global_sum(sub: Subdomain, a) -> float:
    return float(global_sums(sub, [a])[0])


def global_reduce(f: Field, kind: str = "sum") -> float:
    comm = _comm(f.sub)
    if kind == "sum":
        return global_sum(f.sub, f.owned)
    if kind == "max":
        return global_max(comm, float(np.max(f.owned)))
    if kind == "min":
        return -global_max(comm, float(-np.min(f.owned)))
    raise ValueError(f"unknown reduction {kind!r}")


def integrate(f: Field) -> float:
    """Trapezoid-in-y quadrature over the unit square (exact for constants)."""
    sub = f.sub
    return global_sum(sub, f.owned * sub.row_weights()[None, :]) * sub.grid.dx * sub.grid.dy


def gather(f: Field, root: int = 0) -> Optional[np.ndarray]:
    """Assemble the global owned array on ``root`` (None elsewhere)."""
    return gather_array(f.sub, f.owned, root)


def gather_array(sub: Subdomain, owned: np.ndarray, root: int = 0) -> Optional[np.ndarray]:
    comm = _comm(sub)
    if comm.size == 1:
        return np.array(owned, copy=True)
    parts = comm.gather((sub.i_lo, sub.i_hi, sub.j_lo, sub.j_hi, np.ascontiguousarray(owned)), root=root)
    if comm.rank != root:
        return None
    out = np.empty(sub.grid.shape)
    for i0, i1, j0, j1, block in parts:
        out[i0:i1, j0:j1] = block
    return out


def allgather_array(sub: Subdomain, owned: np.ndarray) -> np.ndarray:
    comm = _comm(sub)
    full = gather_array(sub, owned, root=0)
    if comm.size == 1:
        return full
    return comm.bcast(full, root=0)
