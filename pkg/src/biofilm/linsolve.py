"""Distributed stencil matrices, restarted GMRES and Jacobi preconditioning."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import sparse

from .errors import AssemblyError, NotConverged, PreconditionerError
from .mesh import MAX_GHOST, Field, Subdomain, global_dots, global_sum, global_sums, halo_exchange_many
from .stencil import Stencil, owned_region


@dataclass
class SolverConfig:
    rtol: float = 1e-8
    atol: float = 1e-12
    max_it: int = 500
    restart: int = 30
    pc: str = "jacobi"
    nullspace: str = "none"

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.restart < 1 or self.max_it < 1:
            raise ValueError("restart and max_it must be at least 1")
        if self.pc not in ("jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.pc!r}")
        if self.nullspace not in ("none", "constants", "parity"):
            raise ValueError(f"unknown null space {self.nullspace!r}")


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    rhs_norm: float = 0.0
    target: float = 0.0


class StencilMatrix:
    """Sparse operator stored as per-node offset coefficients, one block per component pair.

    ``blocks[(r, c)][(di, dj)]`` is an array over owned nodes giving the weight of
    component ``c`` at ``node + (di, dj)`` in row component ``r``. Offsets crossing
    a rank boundary or the periodic seam are resolved through the halo; offsets
    beyond a physical wall must have been folded away before assembly.
    """

    def __init__(self, sub: Subdomain, ncomp: int = 1):
        self.sub = sub
        self.ncomp = ncomp
        self.blocks: dict[tuple[int, int], dict[tuple[int, int], np.ndarray]] = {}
        self._plan = None
        self._work = None

    # -- construction --------------------------------------------------------

    def set_block(self, r: int, c: int, entries) -> None:
        if isinstance(entries, Stencil):
            if entries.region != owned_region(self.sub):
                raise AssemblyError("stencil must cover exactly the owned block")
            entries = entries.entries
        block = {}
        for off, coef in entries.items():
            if max(abs(off[0]), abs(off[1])) > MAX_GHOST:
                raise AssemblyError(f"offset {off} exceeds ghost width {MAX_GHOST}")
            coef = np.broadcast_to(np.asarray(coef, dtype=float), self.sub.shape)
            if np.any(coef):
                block[tuple(off)] = np.array(coef)
        _check_walls(self.sub, block)
        self.blocks[(r, c)] = block
        self._plan = None

    def pin_rows(self, r: int, mask: np.ndarray) -> None:
        """Turn the rows selected by ``mask`` (owned-shape bool) into identity rows."""
        for (rr, c), block in self.blocks.items():
            if rr != r:
                continue
            for off, coef in block.items():
                coef[mask] = 0.0
        diag = self.blocks.setdefault((r, r), {})
        d = diag.get((0, 0), np.zeros(self.sub.shape))
        d[mask] = 1.0
        diag[(0, 0)] = d
        for key in list(self.blocks):
            self.blocks[key] = {o: c for o, c in self.blocks[key].items() if np.any(c)}
        self._plan = None

    @property
    def radius(self) -> int:
        r = 0
        for block in self.blocks.values():
            for di, dj in block:
                r = max(r, abs(di), abs(dj))
        return r

    def diagonal(self) -> np.ndarray:
        d = np.zeros((self.ncomp,) + self.sub.shape)
        for r in range(self.ncomp):
            block = self.blocks.get((r, r), {})
            if (0, 0) in block:
                d[r] = block[(0, 0)]
        return d

    # -- application ---------------------------------------------------------

    def _prepare(self):
        g = max(1, self.radius)
        self._work = [Field(self.sub, g, f"work{c}") for c in range(self.ncomp)]
        n, m = self.sub.shape
        ext = (n + 2 * g) * (m + 2 * g)
        ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
        rows, cols, vals = [], [], []
        # local CSR against the ghost-extended input vector
        for (r, c), block in sorted(self.blocks.items()):
            for (di, dj), coef in sorted(block.items()):
                rows.append((r * n * m + ii * m + jj).ravel())
                cols.append((c * ext + (ii + g + di) * (m + 2 * g) + (jj + g + dj)).ravel())
                vals.append(coef.ravel())
        if rows:
            rows, cols, vals = (np.concatenate(a) for a in (rows, cols, vals))
        self._plan = sparse.csr_matrix((vals, (rows, cols)), shape=(self.ncomp * n * m, self.ncomp * ext))

    def apply(self, x: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        """``y = A x`` on stacked owned arrays of shape ``(ncomp, nx, ny)``."""
        if self._plan is None:
            self._prepare()
        work = self._work
        for c in range(self.ncomp):
            work[c].owned = x[c]
        halo_exchange_many(work)
        xe = np.concatenate([w.data.ravel() for w in work])
        y = (self._plan @ xe).reshape(x.shape)
        if out is not None:
            out[...] = y
            return out
        return y

    # -- inspection ----------------------------------------------------------

    def to_dense(self) -> np.ndarray:
        """Global dense matrix (every rank gets a copy); for tests and small grids only."""
        grid = self.sub.grid
        mx, ny = grid.shape
        N = mx * ny
        dense = np.zeros((self.ncomp * N, self.ncomp * N))
        ii, jj = np.meshgrid(np.arange(self.sub.i_lo, self.sub.i_hi),
                             np.arange(self.sub.j_lo, self.sub.j_hi), indexing="ij")
        for (r, c), block in self.blocks.items():
            for (di, dj), coef in block.items():
                nz = coef != 0.0
                rows = r * N + ii[nz] * ny + jj[nz]
                cols = c * N + ((ii[nz] + di) % mx) * ny + (jj[nz] + dj)
                np.add.at(dense, (rows, cols), coef[nz])
        comm = self.sub.comm
        if comm is not None and comm.size > 1:
            parts = comm.allgather(dense)
            dense = sum(parts[1:], parts[0])
        return dense


def _check_walls(sub: Subdomain, block) -> None:
    jl = np.arange(sub.ny)
    for (di, dj), coef in block.items():
        target = jl + dj
        bad = np.zeros(sub.ny, dtype=bool)
        if sub.at_south_wall:
            bad |= target < 0
        if sub.at_north_wall:
            bad |= target > sub.ny - 1
        if np.any(bad) and np.any(coef[:, bad]):
            raise AssemblyError(f"offset {(di, dj)} reaches past a physical wall; fold it first")


def fold_mirror(sub: Subdomain, stencil: Stencil) -> Stencil:
    """Eliminate ghost reads beyond the walls using even reflection ``f(-k) = f(k)``."""
    out = Stencil(stencil.region)
    jl = np.arange(stencil.region[2], stencil.region[3])
    ny = sub.ny
    for (di, dj), coef in stencil.entries.items():
        target = jl + dj
        new_dj = np.full_like(target, dj)
        if sub.at_south_wall:
            low = target < 0
            new_dj[low] = -target[low] - jl[low]
        if sub.at_north_wall:
            high = target > ny - 1
            new_dj[high] = 2 * (ny - 1) - target[high] - jl[high]
        for d in np.unique(new_dj):
            cols = new_dj == d
            key = (di, int(d))
            part = np.zeros_like(coef)
            part[:, cols] = coef[:, cols]
            out.entries[key] = out.entries[key] + part
    return out


def assemble(sub: Subdomain, rows: Iterable) -> StencilMatrix:
    """Build a scalar matrix from ``((i, j), [(di, dj, value), ...])`` rows (INSERT semantics).

    ``(i, j)`` are global node indices and must be owned by this rank; each row may
    be given once. Wall ghost elimination is the caller's job.
    """
    entries: dict[tuple[int, int], np.ndarray] = {}
    seen = set()
    for (i, j), row in rows:
        if (i, j) in seen:
            raise AssemblyError(f"row {(i, j)} assembled twice")
        seen.add((i, j))
        if not (sub.i_lo <= i < sub.i_hi and sub.j_lo <= j < sub.j_hi):
            raise AssemblyError(f"row {(i, j)} is not owned by rank {sub.rank}")
        li, lj = i - sub.i_lo, j - sub.j_lo
        for di, dj, value in row:
            if max(abs(di), abs(dj)) > MAX_GHOST:
                raise AssemblyError(f"offset {(di, dj)} exceeds ghost width {MAX_GHOST}")
            if not 0 <= j + dj < sub.grid.ny:
                raise AssemblyError(f"row {(i, j)} offset {(di, dj)} crosses a physical wall")
            arr = entries.setdefault((di, dj), np.zeros(sub.shape))
            arr[li, lj] += value
    A = StencilMatrix(sub)
    A.set_block(0, 0, entries)
    return A


def matvec(A: StencilMatrix, x: Field) -> Field:
    y = Field(x.sub, x.ghost, "Ax", x.bc)
    y.owned = A.apply(x.owned[None])[0]
    return y


def jacobi_apply(A: StencilMatrix, r: Field) -> Field:
    d = A.diagonal()[0]
    if np.any(d == 0.0):
        raise PreconditionerError("zero diagonal entry")
    z = r.like("jacobi")
    z.owned = r.owned / d
    return z


# --- null spaces ------------------------------------------------------------


def nullspace_project(b: Field) -> Field:
    """Remove the mean over unique nodes (the constant null-space component)."""
    total = global_sum(b.sub, b.owned)
    out = b.copy(b.name)
    out.owned = b.owned - total / b.sub.grid.size
    return out


class NullSpace:
    """Orthonormal basis of a known null space, projected out with one collective."""

    def __init__(self, sub: Subdomain, ncomp: int, kind: str):
        self.sub = sub
        self.kind = kind
        self.basis: list[np.ndarray] = []
        if kind == "none":
            return
        ii, jj = np.meshgrid(np.arange(sub.i_lo, sub.i_hi), np.arange(sub.j_lo, sub.j_hi), indexing="ij")
        modes = [np.ones(sub.shape)]
        if kind == "parity":
            modes.append((-1.0) ** jj)
            if sub.grid.mx % 2 == 0:
                modes.append((-1.0) ** ii)
                modes.append((-1.0) ** (ii + jj))
        for m in modes:
            vec = np.broadcast_to(m, (ncomp,) + sub.shape).copy()
            for e in self.basis:
                vec -= global_sum(sub, e * vec) * e
            norm = math.sqrt(global_sum(sub, vec * vec))
            if norm > 1e-10:
                self.basis.append(vec / norm)

    def project(self, x: np.ndarray) -> np.ndarray:
        if not self.basis:
            return x
        coefs = global_sums(self.sub, [e * x for e in self.basis])
        x = x.copy()
        for c, e in zip(coefs, self.basis):
            x -= c * e
        return x


# --- GMRES ------------------------------------------------------------------


# reorthogonalise when a Gram-Schmidt pass shrinks the vector below this fraction
_REORTH = 1.0 / math.sqrt(2.0)


class _Space:
    """Inner products over the stacked owned arrays of every rank."""

    def __init__(self, sub: Subdomain):
        self.sub = sub

    def dot(self, a, b) -> float:
        return float(global_dots(self.sub, a[None], b)[0])

    def norm(self, a) -> float:
        return math.sqrt(max(self.dot(a, a), 0.0))


def _as_stack(b) -> tuple[np.ndarray, bool]:
    if isinstance(b, Field):
        return b.owned[None].copy(), True
    return np.stack([f.owned for f in b]), False


def gmres_solve(
    A: StencilMatrix,
    b,
    cfg: SolverConfig,
    x0=None,
    raise_on_failure: bool = True,
    system: str = "",
):
    """Left-preconditioned restarted GMRES with reorthogonalised classical Gram-Schmidt.

    ``b`` is a Field (scalar systems) or a sequence of Fields (one per component).
    The preconditioned residual drives the Arnoldi cycles; convergence is only
    declared once the true residual satisfies ``max(rtol*|b|, atol)``.

    Returns ``(x, report)`` shaped like ``b``. A run that exhausts ``max_it``
    raises :class:`NotConverged` carrying the report and iterate unless
    ``raise_on_failure`` is False.
    """
    sub = A.sub
    space = _Space(sub)
    bvec, scalar = _as_stack(b)
    ns = NullSpace(sub, A.ncomp, cfg.nullspace)
    bvec = ns.project(bvec)

    if cfg.pc == "jacobi":
        diag = A.diagonal()
        if np.any(diag == 0.0):
            raise PreconditionerError("zero diagonal entry in Jacobi preconditioner")
        inv_d = 1.0 / diag

        def prec(v):
            return v * inv_d
    else:

        def prec(v):
            return v

    x = np.zeros_like(bvec) if x0 is None else ns.project(_as_stack(x0)[0])
    bnorm = space.norm(bvec)
    target = max(cfg.rtol * bnorm, cfg.atol)
    if bnorm == 0.0:
        x[...] = 0.0
        report = SolveReport(0, 0.0, True, 0.0, target)
        return _wrap(x, b, scalar), report

    pbnorm = space.norm(prec(bvec))
    ptarget = max(cfg.rtol * pbnorm, cfg.atol * pbnorm / bnorm)
    it = 0
    true_res = space.norm(bvec - A.apply(x))
    converged = true_res <= target
    m = cfg.restart
    while not converged and it < cfg.max_it:
        r = prec(bvec - A.apply(x))
        beta = space.norm(r)
        if beta <= ptarget:
            # preconditioned residual already small but true residual is not
            ptarget = beta * min(0.5, target / max(true_res, 1e-300))
        V = np.empty((m + 1,) + r.shape)
        V[0] = r / beta
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        k = 0
        breakdown = False
        while k < m and it < cfg.max_it:
            w = prec(A.apply(V[k]))
            # classical Gram-Schmidt with one batched reduction per pass; a second
            # pass only when the first cancelled most of w
            for _ in range(2):
                h = global_dots(sub, V[: k + 1], w)
                for i in range(k + 1):
                    w -= h[i] * V[i]
                H[: k + 1, k] += h
                hnorm = space.norm(w)
                # |w| before the pass, from |w|^2 = |h|^2 + |w - Vh|^2
                if hnorm > _REORTH * math.sqrt(hnorm**2 + float(h @ h)):
                    break
            H[k + 1, k] = hnorm
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = math.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                breakdown = True
                break
            cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            hk1 = H[k + 1, k]
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            it += 1
            k += 1
            if abs(g[k]) <= ptarget or hk1 <= 1e-14 * beta:
                breakdown = hk1 <= 1e-14 * beta
                break
            V[k] = w / hk1
        if k > 0:
            y = np.linalg.solve(np.triu(H[:k, :k]), g[:k])
            # explicit loop: the update must not depend on the local array length
            for i in range(k):
                x += y[i] * V[i]
        x = ns.project(x)
        true_res = space.norm(bvec - A.apply(x))
        converged = true_res <= target
        if breakdown and not converged:
            break
    report = SolveReport(it, true_res, converged, bnorm, target)
    out = _wrap(x, b, scalar)
    if not converged and raise_on_failure:
        raise NotConverged(report, out, system)
    return out, report


def _wrap(x: np.ndarray, b, scalar: bool):
    if scalar:
        f = b.like("x")
        f.owned = x[0]
        return f
    out = []
    for c, bf in enumerate(b):
        f = bf.like("x")
        f.owned = x[c]
        out.append(f)
    return out
