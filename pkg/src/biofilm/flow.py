"""Projection-method momentum step: intermediate velocity, pressure, correction.

The pressure equation is ``-div(grad p / rho) = div u*`` and the correction is
``v = u* + grad p / rho``, so ``p`` holds ``dt`` times the physical pressure.
Both divergence and gradient are the centred collocated operators; the pressure
matrix is their composition, which makes the divergence of the corrected field
at interior rows equal to the linear-solve residual.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NotConverged, StepError
from .linsolve import SolverConfig, StencilMatrix, fold_mirror, gmres_solve
from .mesh import Field, update_ghosts
from .operators import (
    VectorField,
    convective_derivative,
    dx_c,
    dy_c,
    div_coeff_grad,
    phase_stress_div,
    velocity_bc,
    viscous_stress_div,
    viscous_transpose_div,
)
from .stencil import Stencil, central_x, central_y, div_grad, grow, laplace, node_values, owned_region


VISCOUS_MODES = ("full", "split", "reference")


@dataclass
class FlowParams:
    Re_s: float = 9.98e-4
    Re_n: float = 2.33e-9
    Gamma1: float = 33.467
    rho_n_ratio: float = 1.0
    rho_s_ratio: float = 1.0
    lid_velocity: tuple = (0.1, 0.0)
    bottom_velocity: tuple = (0.0, 0.0)
    include_R: bool = True
    # "full": variable-viscosity stress implicit; "split": div(eta grad u)
    # implicit per component, the transpose part explicit; "reference": constant
    # solvent viscosity implicit, excess explicit in R
    viscous: str = "full"
    theta: float = 0.5
    # optional ceiling on (network viscosity)/(solvent viscosity) in the implicit operator
    max_viscosity_ratio: float | None = None

    def __post_init__(self):
        for name in ("Re_s", "Re_n", "rho_n_ratio", "rho_s_ratio"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.viscous not in VISCOUS_MODES:
            raise ValueError(f"viscous must be one of {VISCOUS_MODES}, got {self.viscous!r}")
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0.5, 1], got {self.theta}")
        if self.max_viscosity_ratio is not None and not self.max_viscosity_ratio >= 1.0:
            raise ValueError(f"max_viscosity_ratio must be at least 1, got {self.max_viscosity_ratio}")
        self.lid_velocity = tuple(float(x) for x in self.lid_velocity)
        self.bottom_velocity = tuple(float(x) for x in self.bottom_velocity)

    @property
    def re_a_ref(self) -> float:
        """Reference Reynolds number (pure solvent)."""
        return self.Re_s

    def bc(self):
        return velocity_bc(self.lid_velocity, self.bottom_velocity)


@dataclass
class FlowState:
    v: VectorField
    v_prev: VectorField
    p: Field
    u_star: VectorField | None = None

    @classmethod
    def at_rest(cls, sub, fp: FlowParams) -> "FlowState":
        """Zero interior velocity with the wall rows at their Dirichlet values."""
        v = zero_velocity(sub, fp)
        return cls(v, v.copy(), Field(sub, 1, "p"))

    def extrapolated(self) -> VectorField:
        out = self.v.copy()
        for o, a, b in zip(out, self.v, self.v_prev):
            o.owned = 1.5 * a.owned - 0.5 * b.owned
        update_ghosts(*out)
        return out


def zero_velocity(sub, fp: FlowParams) -> VectorField:
    bu, bv = fp.bc()
    v = VectorField(Field(sub, 1, "u", bu), Field(sub, 1, "v", bv))
    update_ghosts(v.u, v.v)
    return v


def averaged_density(phi: Field, fp: FlowParams) -> Field:
    out = Field(phi.sub, 1, "rho")
    out.data[...] = (1.0 - phi.data[_core(phi, 1)]) * fp.rho_s_ratio + phi.data[_core(phi, 1)] * fp.rho_n_ratio
    return out


def averaged_inverse_reynolds(phi: Field, fp: FlowParams) -> Field:
    out = Field(phi.sub, 1, "inv_re")
    out.data[...] = phi.data[_core(phi, 1)] / fp.Re_n + (1.0 - phi.data[_core(phi, 1)]) / fp.Re_s
    return out


def effective_inverse_reynolds(phi: Field, fp: FlowParams) -> Field:
    """``1/Re_a`` for the implicit operator (ghosts filled).

    Clipped below at the smaller pure-phase value, since extrapolated fractions
    slightly outside [0, 1] would otherwise make it negative, and above at the
    optional viscosity-ratio ceiling.
    """
    eta = averaged_inverse_reynolds(phi, fp)
    np.maximum(eta.data, min(1.0 / fp.Re_s, 1.0 / fp.Re_n), out=eta.data)
    if fp.max_viscosity_ratio is not None:
        np.minimum(eta.data, fp.max_viscosity_ratio / fp.Re_s, out=eta.data)
    return eta


def _core(f: Field, ghost: int):
    """Slice of ``f.data`` covering the owned block plus ``ghost`` layers."""
    k = f.ghost - ghost
    if k < 0:
        raise ValueError(f"field has ghost {f.ghost}, need {ghost}")
    return (slice(k, f.data.shape[0] - k), slice(k, f.data.shape[1] - k))


def assemble_R(phi: Field, v: VectorField, fp: FlowParams, re_a_ref: float) -> VectorField:
    """``-div(G1 grad phi grad phi) + div(2 (1/Re_a - 1/re_a_ref) D(v))``."""
    ps = phase_stress_div(phi, fp.Gamma1)
    excess = averaged_inverse_reynolds(phi, fp)
    excess.data -= 1.0 / re_a_ref
    if np.any(excess.owned != 0.0):
        visc = viscous_stress_div(excess, v)
        ps.u.owned = visc.u.owned - ps.u.owned
        ps.v.owned = visc.v.owned - ps.v.owned
    else:
        ps.u.owned = -ps.u.owned
        ps.v.owned = -ps.v.owned
    ps.u.name, ps.v.name = "R_x", "R_y"
    return ps


# --- intermediate velocity ------------------------------------------------------


def viscous_stencils(eta, sub, coupled: bool = True):
    """Blocks of ``div(2 eta D(u))`` as stencils on owned nodes.

    ``eta`` is a Field (variable) or a float; a float gives the reference-mode
    operator ``eta * lap`` without cross terms. ``coupled=False`` keeps only
    ``div(eta grad u)`` per component.
    """
    h = sub.grid
    reg = owned_region(sub)
    if not isinstance(eta, Field):
        lap = float(eta) * laplace(reg, h.dx, h.dy)
        return {(0, 0): lap, (1, 1): lap.copy()}
    if not coupled:
        d = div_grad(reg, eta, h.dx, h.dy)
        return {(0, 0): d, (1, 1): d.copy()}
    big = grow(reg, 1)
    e = node_values(eta, big)
    return {
        (0, 0): div_grad(reg, eta, h.dx, h.dy, scale_x=2.0),
        (1, 1): div_grad(reg, eta, h.dx, h.dy, scale_y=2.0),
        (0, 1): central_y(reg, h.dy).compose(e * central_x(big, h.dx)),
        (1, 0): central_x(reg, h.dx).compose(e * central_y(big, h.dy)),
    }


def wall_rows(sub) -> np.ndarray:
    mask = np.zeros(sub.shape, dtype=bool)
    if sub.at_south_wall:
        mask[:, 0] = True
    if sub.at_north_wall:
        mask[:, -1] = True
    return mask


def momentum_system(state: FlowState, phi_star: Field, R: VectorField, fp: FlowParams, dt: float):
    """Matrix and right-hand sides of the intermediate-velocity step."""
    sub = phi_star.sub
    reg = owned_region(sub)
    rho = averaged_density(phi_star, fp)
    inv_rho = 1.0 / rho.owned
    if fp.viscous == "reference":
        eta = 1.0 / fp.re_a_ref
    else:
        eta = effective_inverse_reynolds(phi_star, fp)
    blocks = viscous_stencils(eta, sub, coupled=fp.viscous == "full")
    th = fp.theta
    mask = wall_rows(sub)
    # wall rows become identity rows, so their stencils never leave the domain
    scale = np.where(mask, 0.0, -th * inv_rho)
    A = StencilMatrix(sub, 2)
    for (r, c), st in blocks.items():
        lhs = scale * st
        if r == c:
            lhs = lhs + Stencil.identity(reg, 1.0 / dt)
        A.set_block(r, c, lhs)
    A.pin_rows(0, mask)
    A.pin_rows(1, mask)

    vn = state.v
    vstar = state.extrapolated()
    if fp.viscous == "full":
        visc = viscous_stress_div(eta, vn)
        vx, vy = visc.u.owned, visc.v.owned
    elif fp.viscous == "split":
        vx = div_coeff_grad(eta, vn.u).owned
        vy = div_coeff_grad(eta, vn.v).owned
        # lagged rather than extrapolated: extrapolating a term this stiff is unstable
        tr = viscous_transpose_div(eta, vn)
        R = VectorField(R.u.with_values(R.u.owned + tr.u.owned), R.v.with_values(R.v.owned + tr.v.owned))
    else:
        vx = eta * _lap(vn.u)
        vy = eta * _lap(vn.v)
    conv = convective_derivative(vstar)
    rhs = []
    walls = (fp.bottom_velocity, fp.lid_velocity)
    for k, (vc, vis, cv, rc) in enumerate(zip(vn, (vx, vy), conv, R)):
        b = vn.u.like("mom_rhs")
        vals = vc.owned / dt - cv.owned + inv_rho * ((1.0 - th) * vis + rc.owned)
        if sub.at_south_wall:
            vals[:, 0] = walls[0][k]
        if sub.at_north_wall:
            vals[:, -1] = walls[1][k]
        b.owned = vals
        rhs.append(b)
    return A, rhs


def _lap(f: Field) -> np.ndarray:
    h = f.sub.grid
    c = f.shifted(0, 0)
    return (f.shifted(1, 0) - 2 * c + f.shifted(-1, 0)) / h.dx**2 + (f.shifted(0, 1) - 2 * c + f.shifted(0, -1)) / h.dy**2


def intermediate_velocity(state: FlowState, phi: Field, R: VectorField, fp: FlowParams, dt: float,
                          solver: SolverConfig | None = None):
    """Solve for the provisional velocity ``u*``; returns ``(u_star, report)``."""
    solver = solver or SolverConfig()
    A, rhs = momentum_system(state, phi, R, fp, dt)
    # solve for the increment over v^n (see transport._solve_increment)
    x0 = np.stack([state.v.u.owned, state.v.v.owned])
    r0 = np.stack([b.owned for b in rhs]) - A.apply(x0)
    res = [b.with_values(r) for b, r in zip(rhs, r0)]
    try:
        d, rep = gmres_solve(A, res, solver, system="momentum")
    except NotConverged as exc:
        raise StepError(str(exc), exc.report) from exc
    out = state.v.copy()
    out.u.name, out.v.name = "u_star", "v_star"
    for o, x, dd in zip(out, x0, d):
        o.owned = x + dd.owned
    _pin(out, fp)
    update_ghosts(out.u, out.v)
    return out, rep


def _pin(vf: VectorField, fp: FlowParams) -> None:
    sub = vf.sub
    for k, comp in enumerate(vf):
        if sub.at_south_wall:
            comp.owned[:, 0] = fp.bottom_velocity[k]
        if sub.at_north_wall:
            comp.owned[:, -1] = fp.lid_velocity[k]


# --- pressure -------------------------------------------------------------------


def pressure_operator(rho: Field) -> StencilMatrix:
    """Symmetric ``-W div(grad p / rho)`` with centred div and grad (radius 2).

    ``W`` halves the wall rows. ``rho`` must carry current ghosts.
    """
    sub = rho.sub
    h = sub.grid
    reg = owned_region(sub)
    big = grow(reg, 1)
    inv = 1.0 / node_values(rho, big)
    op = central_x(reg, h.dx).compose(inv * central_x(big, h.dx))
    op = op + central_y(reg, h.dy).compose(inv * central_y(big, h.dy))
    w = sub.row_weights()[None, :]
    A = StencilMatrix(sub)
    A.set_block(0, 0, fold_mirror(sub, (-w) * op))
    return A


def pressure_rhs(u_star: VectorField) -> Field:
    sub = u_star.sub
    b = Field(sub, 1, "prs_rhs")
    b.owned = sub.row_weights()[None, :] * (dx_c(u_star.u) + dy_c(u_star.v))
    return b


def pressure_poisson(u_star: VectorField, rho: Field, solver: SolverConfig | None = None):
    """Zero-mean pressure for the projection; returns ``(p, report)``.

    The operator annihilates constants and the grid-scale parity modes of the
    collocated centred Laplacian; all of them are projected out of both the
    right-hand side and the solution.
    """
    solver = replace(solver or SolverConfig(), nullspace="parity")
    if rho.owned.min() <= 0.0:
        raise ValueError("density must be positive")
    A = pressure_operator(rho)
    b = pressure_rhs(u_star)
    try:
        x, rep = gmres_solve(A, b, solver, system="pressure")
    except NotConverged as exc:
        raise StepError(str(exc), exc.report) from exc
    p = Field(rho.sub, 1, "p")
    p.owned = x.owned
    update_ghosts(p)
    return p, rep


def velocity_correction(u_star: VectorField, p: Field, rho: Field, fp: FlowParams | None = None) -> VectorField:
    """``v = u* + grad p / rho`` with wall rows restored to their Dirichlet values."""
    out = u_star.copy()
    inv = 1.0 / rho.owned
    out.u.owned = u_star.u.owned + inv * dx_c(p)
    out.v.owned = u_star.v.owned + inv * dy_c(p)
    if fp is not None:
        _pin(out, fp)
    else:
        _restore_walls(out, u_star)
    out.u.name, out.v.name = "u", "v"
    update_ghosts(out.u, out.v)
    return out


def _restore_walls(out: VectorField, ref: VectorField) -> None:
    sub = out.sub
    for o, r in zip(out, ref):
        if sub.at_south_wall:
            o.owned[:, 0] = r.owned[:, 0]
        if sub.at_north_wall:
            o.owned[:, -1] = r.owned[:, -1]


def divergence(vf: VectorField) -> np.ndarray:
    """Centred divergence on owned nodes (ghosts must be current)."""
    return dx_c(vf.u) + dy_c(vf.v)


def max_interior_divergence(vf: VectorField) -> float:
    """Max ``|div_h v|`` over nodes off the wall rows, reduced over ranks."""
    from .parallel import global_max

    d = np.abs(divergence(vf))
    d[wall_rows(vf.sub)] = 0.0
    comm = vf.sub.comm
    local = float(d.max()) if d.size else 0.0
    return local if comm is None else global_max(comm, local)


@dataclass
class FlowReports:
    momentum: object = None
    pressure: object = None


def flow_step(state: FlowState, phi: Field, fp: FlowParams, dt: float,
              solver: SolverConfig | None = None, phi_star: Field | None = None,
              pressure_solver: SolverConfig | None = None):
    """One projection step; returns ``(new_state, FlowReports)``.

    ``phi`` is the network fraction at the new level (density of the pressure
    equation); ``phi_star`` the extrapolated level for the momentum coefficients
    and ``R`` (defaults to ``phi``). Both need ghost width 2.
    """
    solver = solver or SolverConfig()
    phi_star = phi if phi_star is None else phi_star
    vstar = state.extrapolated()
    if fp.include_R:
        if fp.viscous != "reference":
            # the whole viscous stress is implicit, so only the phase stress remains
            R = _phase_only(phi_star, fp)
        else:
            R = assemble_R(phi_star, vstar, fp, fp.re_a_ref)
    else:
        R = _zeros_like(state.v)
    u_star, rep_m = intermediate_velocity(state, phi_star, R, fp, dt, solver)
    rho = averaged_density(phi, fp)
    p, rep_p = pressure_poisson(u_star, rho, pressure_solver or solver)
    v_new = velocity_correction(u_star, p, rho, fp)
    new = FlowState(v_new, state.v, p, u_star)
    return new, FlowReports(rep_m, rep_p)


def _phase_only(phi: Field, fp: FlowParams) -> VectorField:
    ps = phase_stress_div(phi, fp.Gamma1)
    ps.u.owned = -ps.u.owned
    ps.v.owned = -ps.v.owned
    return ps


def _zeros_like(vf: VectorField) -> VectorField:
    return VectorField(Field(vf.sub, 1, "R_x"), Field(vf.sub, 1, "R_y"))
