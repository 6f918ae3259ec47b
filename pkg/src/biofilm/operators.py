"""Second-order central finite differences on ghosted fields.

Every operator reads ghost values (the caller exchanges and fills them first)
and returns a new field holding results on owned nodes only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoefficientError, ContractError
from .mesh import MIRROR, Dirichlet, Field


@dataclass
class VectorField:
    u: Field
    v: Field

    def __post_init__(self):
        if self.u.sub is not self.v.sub or self.u.ghost != self.v.ghost:
            raise ContractError("vector components must share subdomain and ghost width")

    @property
    def sub(self):
        return self.u.sub

    def copy(self) -> "VectorField":
        return VectorField(self.u.copy(), self.v.copy())

    def __iter__(self):
        yield self.u
        yield self.v


@dataclass
class Tensor:
    """Node-wise 2x2 tensor; each entry is an array over the evaluated block."""

    xx: np.ndarray
    xy: np.ndarray
    yx: np.ndarray
    yy: np.ndarray


def _out(like: Field, values: np.ndarray, name: str, bc=MIRROR) -> Field:
    f = Field(like.sub, 1, name, bc)
    f.owned = values
    return f


def _need(f: Field, width: int) -> None:
    if f.ghost < width:
        raise ContractError(f"{f.name or 'field'} needs ghost width {width}, has {f.ghost}")


def dx_c(f: Field, ext=0) -> np.ndarray:
    """Centred x-derivative on the owned block grown by ``ext``."""
    return (f.shifted(1, 0, ext) - f.shifted(-1, 0, ext)) / (2.0 * f.sub.grid.dx)


def dy_c(f: Field, ext=0) -> np.ndarray:
    return (f.shifted(0, 1, ext) - f.shifted(0, -1, ext)) / (2.0 * f.sub.grid.dy)


def grad(f: Field) -> VectorField:
    _need(f, 1)
    return VectorField(_out(f, dx_c(f), "dfdx"), _out(f, dy_c(f), "dfdy"))


def div(vf: VectorField) -> Field:
    _need(vf.u, 1)
    return _out(vf.u, dx_c(vf.u) + dy_c(vf.v), "div")


def laplacian(f: Field) -> Field:
    _need(f, 1)
    h = f.sub.grid
    c = f.shifted(0, 0)
    lap = (f.shifted(1, 0) - 2.0 * c + f.shifted(-1, 0)) / h.dx**2
    lap += (f.shifted(0, 1) - 2.0 * c + f.shifted(0, -1)) / h.dy**2
    return _out(f, lap, "lap")


def face_means(a: Field) -> tuple[np.ndarray, ...]:
    """Arithmetic face coefficients ``(east, west, north, south)`` around each owned node."""
    c = a.shifted(0, 0)
    return (
        0.5 * (c + a.shifted(1, 0)),
        0.5 * (c + a.shifted(-1, 0)),
        0.5 * (c + a.shifted(0, 1)),
        0.5 * (c + a.shifted(0, -1)),
    )


def div_coeff_grad(a: Field, f: Field, require_positive: bool = False, floor=None) -> Field:
    """Conservative ``div(a grad f)`` with arithmetic-mean face coefficients.

    ``floor`` clips face coefficients from below (degenerate mobilities).
    """
    _need(a, 1)
    _need(f, 1)
    h = f.sub.grid
    ae, aw, an, as_ = face_means(a)
    if floor is not None:
        ae, aw, an, as_ = (np.maximum(c, floor) for c in (ae, aw, an, as_))
    if require_positive and min(ae.min(), aw.min(), an.min(), as_.min()) <= 0.0:
        raise CoefficientError("non-positive face coefficient in div(a grad f)")
    c = f.shifted(0, 0)
    out = (ae * (f.shifted(1, 0) - c) - aw * (c - f.shifted(-1, 0))) / h.dx**2
    out += (an * (f.shifted(0, 1) - c) - as_ * (c - f.shifted(0, -1))) / h.dy**2
    return _out(f, out, "div_a_grad")


def advect(f: Field, vf: VectorField) -> Field:
    """Conservative central ``div(f v)``."""
    _need(f, 1)
    _need(vf.u, 1)
    h = f.sub.grid
    fu_e = f.shifted(1, 0) * vf.u.shifted(1, 0)
    fu_w = f.shifted(-1, 0) * vf.u.shifted(-1, 0)
    fv_n = f.shifted(0, 1) * vf.v.shifted(0, 1)
    fv_s = f.shifted(0, -1) * vf.v.shifted(0, -1)
    return _out(f, (fu_e - fu_w) / (2.0 * h.dx) + (fv_n - fv_s) / (2.0 * h.dy), "advect")


def convective_derivative(vf: VectorField) -> VectorField:
    """``(v . grad) v`` component-wise with central differences."""
    u, v = vf.u, vf.v
    _need(u, 1)
    uc, vc = u.owned, v.owned
    cu = uc * dx_c(u) + vc * dy_c(u)
    cv = uc * dx_c(v) + vc * dy_c(v)
    return VectorField(_out(u, cu, "conv_u"), _out(v, cv, "conv_v"))


def rate_of_strain(vf: VectorField, ext: int = 0) -> Tensor:
    """``D = (grad v + grad v^T) / 2`` on the owned block grown by ``ext``."""
    _need(vf.u, ext + 1)
    ux, uy = dx_c(vf.u, ext), dy_c(vf.u, ext)
    vx, vy = dx_c(vf.v, ext), dy_c(vf.v, ext)
    off = 0.5 * (uy + vx)
    return Tensor(ux, off, off.copy(), vy)


def tensor_div(t: Tensor, sub) -> tuple[np.ndarray, np.ndarray]:
    """Centred divergence of a tensor sampled on the owned block grown by one node."""
    h = sub.grid
    n, m = sub.nx, sub.ny

    def ddx(a):
        return (a[2:n + 2, 1:m + 1] - a[0:n, 1:m + 1]) / (2.0 * h.dx)

    def ddy(a):
        return (a[1:n + 1, 2:m + 2] - a[1:n + 1, 0:m]) / (2.0 * h.dy)

    return ddx(t.xx) + ddy(t.xy), ddx(t.yx) + ddy(t.yy)


def phase_stress_div(phi: Field, gamma1: float) -> VectorField:
    """``div(gamma1 grad(phi) grad(phi))`` with the outer product taken node-wise."""
    _need(phi, 2)
    px, py = dx_c(phi, 1), dy_c(phi, 1)
    t = Tensor(gamma1 * px * px, gamma1 * px * py, gamma1 * py * px, gamma1 * py * py)
    fx, fy = tensor_div(t, phi.sub)
    return VectorField(_out(phi, fx, "phase_stress_x"), _out(phi, fy, "phase_stress_y"))


def viscous_stress_div(eta: Field, vf: VectorField) -> VectorField:
    """``div(2 eta D(v))`` for a variable viscosity.

    Same-direction second derivatives use compact face differences (they damp the
    grid-scale mode); the mixed terms are centred differences of centred
    differences. This is the discretisation the implicit momentum matrix uses.
    """
    _need(eta, 1)
    _need(vf.u, 1)
    h = eta.sub.grid
    u, v = vf.u, vf.v
    ee, ew, en, es = face_means(eta)
    uc, vc = u.shifted(0, 0), v.shifted(0, 0)
    fx = 2.0 * (ee * (u.shifted(1, 0) - uc) - ew * (uc - u.shifted(-1, 0))) / h.dx**2
    fx += (en * (u.shifted(0, 1) - uc) - es * (uc - u.shifted(0, -1))) / h.dy**2
    fy = (ee * (v.shifted(1, 0) - vc) - ew * (vc - v.shifted(-1, 0))) / h.dx**2
    fy += 2.0 * (en * (v.shifted(0, 1) - vc) - es * (vc - v.shifted(0, -1))) / h.dy**2
    # mixed terms: d/dy(eta dv/dx) and d/dx(eta du/dy)
    q = eta.shifted(0, 0, (0, 1)) * dx_c(v, (0, 1))
    r = eta.shifted(0, 0, (1, 0)) * dy_c(u, (1, 0))
    fx += (q[:, 2:] - q[:, :-2]) / (2.0 * h.dy)
    fy += (r[2:, :] - r[:-2, :]) / (2.0 * h.dx)
    return VectorField(_out(u, fx, "visc_x"), _out(v, fy, "visc_y"))


def viscous_transpose_div(eta: Field, vf: VectorField) -> VectorField:
    """``div(eta grad(v)^T)``: the part of ``div(2 eta D(v))`` beyond ``div(eta grad v)``.

    Uses the same face and mixed differences as :func:`viscous_stress_div`, so the
    two parts add up to it exactly.
    """
    _need(eta, 1)
    _need(vf.u, 1)
    h = eta.sub.grid
    u, v = vf.u, vf.v
    ee, ew, en, es = face_means(eta)
    uc, vc = u.shifted(0, 0), v.shifted(0, 0)
    fx = (ee * (u.shifted(1, 0) - uc) - ew * (uc - u.shifted(-1, 0))) / h.dx**2
    fy = (en * (v.shifted(0, 1) - vc) - es * (vc - v.shifted(0, -1))) / h.dy**2
    q = eta.shifted(0, 0, (0, 1)) * dx_c(v, (0, 1))
    r = eta.shifted(0, 0, (1, 0)) * dy_c(u, (1, 0))
    fx += (q[:, 2:] - q[:, :-2]) / (2.0 * h.dy)
    fy += (r[2:, :] - r[:-2, :]) / (2.0 * h.dx)
    return VectorField(_out(u, fx, "visc_t_x"), _out(v, fy, "visc_t_y"))


def velocity_bc(lid=(0.0, 0.0), bottom=(0.0, 0.0)):
    """Ghost policies for the two velocity components given wall velocities."""
    return (
        (Dirichlet(bottom[0]), Dirichlet(lid[0])),
        (Dirichlet(bottom[1]), Dirichlet(lid[1])),
    )
