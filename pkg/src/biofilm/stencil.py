"""Node-wise stencil algebra used to assemble composite operators.

A :class:`Stencil` is the linear map ``(S f)(n) = sum_o c_o(n) f(n + o)`` for the
nodes ``n`` of a rectangular region given in owned-relative indices (the region
may reach into the ghost frame). Composition multiplies stencils the way the
corresponding field operators are chained, so a fourth-order operator such as
``div(M grad(lap))`` comes out as one radius-2 stencil with node-dependent
coefficients. Offsets may point beyond a physical wall; they are folded onto
mirror images when the stencil is turned into a matrix.
"""
from __future__ import annotations

from collections import defaultdict

import numpy as np

from .mesh import Field


def grow(region, by: int = 1):
    i0, i1, j0, j1 = region
    return (i0 - by, i1 + by, j0 - by, j1 + by)


def owned_region(sub):
    return (0, sub.nx, 0, sub.ny)


class Stencil:
    # let ``array * stencil`` reach __rmul__ instead of numpy broadcasting
    __array_ufunc__ = None

    def __init__(self, region, entries=None):
        self.region = tuple(region)
        self.entries = defaultdict(self._zeros)
        if entries:
            for off, c in entries.items():
                self.entries[off] = np.broadcast_to(c, self.shape).astype(float)

    @property
    def shape(self):
        i0, i1, j0, j1 = self.region
        return (i1 - i0, j1 - j0)

    def _zeros(self):
        return np.zeros(self.shape)

    @property
    def radius(self) -> int:
        if not self.entries:
            return 0
        return max(max(abs(di), abs(dj)) for di, dj in self.entries)

    @classmethod
    def identity(cls, region, scale=1.0):
        return cls(region, {(0, 0): scale})

    def copy(self):
        return Stencil(self.region, {o: c.copy() for o, c in self.entries.items()})

    def __add__(self, other):
        self._check_region(other)
        out = self.copy()
        for o, c in other.entries.items():
            out.entries[o] = out.entries[o] + c
        return out

    def __neg__(self):
        return Stencil(self.region, {o: -c for o, c in self.entries.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scale):
        """Left multiplication by a scalar or a node array over the region."""
        scale = np.asarray(scale, dtype=float)
        return Stencil(self.region, {o: scale * c for o, c in self.entries.items()})

    __rmul__ = __mul__

    def _check_region(self, other):
        if other.region != self.region:
            raise ValueError(f"region mismatch {self.region} vs {other.region}")

    def restrict(self, region):
        i0, i1, j0, j1 = self.region
        k0, k1, l0, l1 = region
        if k0 < i0 or l0 < j0 or k1 > i1 or l1 > j1:
            raise ValueError(f"{region} is not inside {self.region}")
        sl = (slice(k0 - i0, k1 - i0), slice(l0 - j0, l1 - j0))
        return Stencil(region, {o: c[sl] for o, c in self.entries.items()})

    def compose(self, inner: "Stencil") -> "Stencil":
        """``self o inner``; ``inner`` must cover this region grown by ``self.radius``."""
        i0, i1, j0, j1 = self.region
        k0, k1, l0, l1 = inner.region
        r = self.radius
        if k0 > i0 - r or l0 > j0 - r or k1 < i1 + r or l1 < j1 + r:
            raise ValueError(f"inner stencil region {inner.region} too small for {self.region} at radius {r}")
        out = Stencil(self.region)
        ni, nj = self.shape
        for (ai, aj), ca in self.entries.items():
            si, sj = i0 + ai - k0, j0 + aj - l0
            for (bi, bj), cb in inner.entries.items():
                key = (ai + bi, aj + bj)
                out.entries[key] = out.entries[key] + ca * cb[si:si + ni, sj:sj + nj]
        return out

    def apply(self, f: Field) -> np.ndarray:
        """Evaluate on a ghosted field (used to cross-check assembled operators)."""
        i0, i1, j0, j1 = self.region
        out = np.zeros(self.shape)
        for (di, dj), c in self.entries.items():
            out += c * f.block(i0 + di, i1 + di, j0 + dj, j1 + dj)
        return out


# --- building blocks ------------------------------------------------------


def central_x(region, h: float) -> Stencil:
    return Stencil(region, {(1, 0): 0.5 / h, (-1, 0): -0.5 / h})


def central_y(region, h: float) -> Stencil:
    return Stencil(region, {(0, 1): 0.5 / h, (0, -1): -0.5 / h})


def div_grad(region, coeff: Field | float, dx: float, dy: float, scale_x=1.0, scale_y=1.0,
             floor=None) -> Stencil:
    """Compact conservative ``div(a grad .)`` with arithmetic face means of ``a``.

    ``scale_x``/``scale_y`` multiply the x- and y-face fluxes separately (used for
    the ``2*eta`` normal-stress faces of the momentum operator); ``floor`` clips
    the face coefficients from below.
    """
    shape = (region[1] - region[0], region[3] - region[2])
    if isinstance(coeff, Field):
        i0, i1, j0, j1 = region
        a = coeff.block(i0 - 1, i1 + 1, j0 - 1, j1 + 1)
        c = a[1:-1, 1:-1]
        ae = 0.5 * (c + a[2:, 1:-1])
        aw = 0.5 * (c + a[:-2, 1:-1])
        an = 0.5 * (c + a[1:-1, 2:])
        as_ = 0.5 * (c + a[1:-1, :-2])
    else:
        ae = aw = an = as_ = np.full(shape, float(coeff))
    if floor is not None:
        ae, aw, an, as_ = (np.maximum(a, floor) for a in (ae, aw, an, as_))
    ex = scale_x / dx**2
    ey = scale_y / dy**2
    return Stencil(
        region,
        {
            (1, 0): ex * ae,
            (-1, 0): ex * aw,
            (0, 1): ey * an,
            (0, -1): ey * as_,
            (0, 0): -(ex * (ae + aw) + ey * (an + as_)),
        },
    )


def laplace(region, dx: float, dy: float) -> Stencil:
    return div_grad(region, 1.0, dx, dy)


def node_values(f: Field, region) -> np.ndarray:
    i0, i1, j0, j1 = region
    return f.block(i0, i1, j0, j1)
