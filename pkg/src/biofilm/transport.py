"""Time steps for the network volume fraction and the nutrient concentration.

Both steps assemble one linear system per call and solve it with the shared
GMRES layer. Fluxes are conservative so that, with production off, the
trapezoid-weighted sum of the network fraction is preserved to round-off.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NotConverged, StepError
from .linsolve import SolverConfig, StencilMatrix, fold_mirror, gmres_solve
from .mesh import Field, _comm, global_sums, update_ghosts
from .operators import VectorField, advect, div_coeff_grad, laplacian
from .parallel import global_max
from .stencil import Stencil, div_grad, grow, laplace, owned_region


@dataclass
class ChParams:
    Gamma1: float = 33.467
    Gamma2: float = 1.25e6
    Lambda: float = 1e-10
    mu: float = 0.14
    Kc: float = 0.15
    epsilon: float = 1.0
    # optional second-order stabiliser S(phi_cn - phi*) added to the chemical potential
    stabilizer: float = 0.0
    theta: float = 0.5
    # weight of phi^{n+1} in the advection term (0: fully explicit at phi*)
    advection_theta: float = 0.0
    # "central" node-product fluxes or first-order "upwind" face fluxes
    advection: str = "central"

    def __post_init__(self):
        for name in ("Gamma1", "Gamma2", "Lambda", "Kc"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("mu", "epsilon", "stabilizer"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0.5, 1], got {self.theta}")
        if not 0.0 <= self.advection_theta <= 1.0:
            raise ValueError(f"advection_theta must lie in [0, 1], got {self.advection_theta}")
        if self.advection not in ("central", "upwind"):
            raise ValueError(f"advection must be 'central' or 'upwind', got {self.advection!r}")


@dataclass
class NutrientParams:
    Ds: float = 2.3
    A: float = 100.0
    theta: float = 0.5
    # 0 keeps the strict check; a positive value clips the solvent fraction from below
    solvent_floor: float = 0.0

    def __post_init__(self):
        if not self.Ds > 0:
            raise ValueError(f"Ds must be positive, got {self.Ds}")
        if self.A < 0:
            raise ValueError(f"A must be non-negative, got {self.A}")
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0.5, 1], got {self.theta}")
        if not 0.0 <= self.solvent_floor < 1.0:
            raise ValueError(f"solvent_floor must lie in [0, 1), got {self.solvent_floor}")


@dataclass
class PhiHistory:
    """Network fraction at the two latest time levels (ghost width 2)."""

    phi_prev: Field
    phi_curr: Field

    @classmethod
    def start(cls, phi: Field) -> "PhiHistory":
        # first step bootstraps with phi* = phi^0
        return cls(_ghosted(phi, 2), _ghosted(phi, 2))

    def extrapolated(self) -> Field:
        out = self.phi_curr.like("phi_star", ghost=2)
        out.owned = 1.5 * self.phi_curr.owned - 0.5 * self.phi_prev.owned
        update_ghosts(out)
        return out

    def advance(self, phi_next: Field) -> "PhiHistory":
        return PhiHistory(self.phi_curr, _ghosted(phi_next, 2))


def _ghosted(f: Field, ghost: int, name=None) -> Field:
    out = Field(f.sub, ghost, name or f.name, f.bc)
    out.owned = f.owned
    update_ghosts(out)
    return out


def bulk_potential_derivative(phi, Gamma2):
    """Derivative of ``Gamma2 * phi^2 (1 - phi)^2``."""
    return 2.0 * Gamma2 * phi * (1.0 - phi) * (1.0 - 2.0 * phi)


def chemical_potential(phi: Field, p: ChParams) -> Field:
    lap = laplacian(phi)
    out = lap.like("chem_pot")
    out.owned = -p.Gamma1 * lap.owned + bulk_potential_derivative(phi.owned, p.Gamma2)
    return out


def free_energy(phi: Field, p: ChParams) -> float:
    """Discrete free energy with trapezoid weights in y.

    The gradient part is a sum of squared face differences: each node owns its
    east face (periodic) and its north face (absent on the top wall). This is the
    energy whose decay the compact Laplacian reproduces exactly.
    """
    sub = phi.sub
    h = sub.grid
    w = sub.row_weights()
    c = phi.shifted(0, 0)
    gx = (phi.shifted(1, 0) - c) / h.dx
    gy = (phi.shifted(0, 1) - c) / h.dy
    if sub.at_north_wall:
        gy[:, -1] = 0.0
    dens = p.Gamma2 * c**2 * (1.0 - c) ** 2 + 0.5 * p.Gamma1 * gx**2
    parts = global_sums(sub, [dens * w[None, :], 0.5 * p.Gamma1 * gy**2])
    return float(parts[0] + parts[1]) * h.dx * h.dy


def monod(c, Kc):
    return c / (Kc + c)


def growth_rate(phi: Field, c: Field, p: ChParams) -> Field:
    """Network production ``eps * mu * phi * c / (Kc + c)``."""
    cc = c.owned
    # collective check, so every rank raises together
    if -global_max(_comm(c.sub), float(-cc.min())) + p.Kc <= 0.0:
        raise DomainError("nutrient concentration at or below -Kc")
    out = Field(phi.sub, 1, "growth")
    out.owned = p.epsilon * p.mu * phi.owned * monod(cc, p.Kc)
    return out


# --- Cahn-Hilliard -------------------------------------------------------------


def advection_stencil(v: VectorField, scheme: str = "central") -> Stencil:
    """Conservative ``div(f v)`` as a stencil acting on ``f`` (wall offsets unfolded).

    ``central`` differences the node products ``f v``; ``upwind`` uses face
    velocities ``(v_node + v_neighbour)/2`` and takes ``f`` from the upstream
    node. With mirror ghosts for ``f`` and odd ghosts for the normal velocity,
    both give zero net flux through the walls.
    """
    sub = v.sub
    h = sub.grid
    reg = owned_region(sub)
    if scheme == "upwind":
        uc, vc = v.u.shifted(0, 0), v.v.shifted(0, 0)
        ae = 0.5 * (uc + v.u.shifted(1, 0)) / h.dx
        aw = 0.5 * (uc + v.u.shifted(-1, 0)) / h.dx
        an = 0.5 * (vc + v.v.shifted(0, 1)) / h.dy
        as_ = 0.5 * (vc + v.v.shifted(0, -1)) / h.dy
        pos, neg = (lambda a: np.maximum(a, 0.0)), (lambda a: np.minimum(a, 0.0))
        return Stencil(reg, {
            (0, 0): pos(ae) - neg(aw) + pos(an) - neg(as_),
            (1, 0): neg(ae),
            (-1, 0): -pos(aw),
            (0, 1): neg(an),
            (0, -1): -pos(as_),
        })
    return Stencil(reg, {
        (1, 0): v.u.shifted(1, 0) / (2.0 * h.dx),
        (-1, 0): -v.u.shifted(-1, 0) / (2.0 * h.dx),
        (0, 1): v.v.shifted(0, 1) / (2.0 * h.dy),
        (0, -1): -v.v.shifted(0, -1) / (2.0 * h.dy),
    })


def ch_operator(phi_star: Field, p: ChParams):
    """Folded stencils ``C = div(M grad lap)`` and ``K = div(M grad)`` on owned nodes."""
    sub = phi_star.sub
    h = sub.grid
    reg = owned_region(sub)
    mob = phi_star.like("mobility")
    mob.data[...] = p.Lambda * phi_star.data
    K = div_grad(reg, mob, h.dx, h.dy, floor=0.0)
    C = K.compose(laplace(grow(reg, 1), h.dx, h.dy))
    return fold_mirror(sub, C), fold_mirror(sub, K), mob


def ch_system(hist: PhiHistory, v: VectorField, c: Field, p: ChParams, dt: float,
              growth: bool = True):
    """Matrix and right-hand side of one network-fraction step.

    ``phi^{n+1}/dt + th*G1*C phi^{n+1} - th*S*K phi^{n+1} =
    phi^n/dt - (1-th)*G1*C phi^n + (1-th)*S*K phi^n
    + K[f'(phi*) - S phi*] - div(phi* v) + g(phi*, c)``
    with ``C`` and ``K`` frozen at ``phi*``.
    """
    sub = hist.phi_curr.sub
    phi_n = hist.phi_curr
    phi_star = hist.extrapolated()
    C, K, mob = ch_operator(phi_star, p)
    th, S, G1 = p.theta, p.stabilizer, p.Gamma1
    reg = owned_region(sub)
    lhs = Stencil.identity(reg, 1.0 / dt) + (th * G1) * C - (th * S) * K
    ta = p.advection_theta
    adv = advection_stencil(v, p.advection)
    if ta > 0.0:
        lhs = lhs + ta * fold_mirror(sub, adv)
    A = StencilMatrix(sub)
    A.set_block(0, 0, lhs)

    # explicit part, evaluated with field operators
    lap = laplacian(phi_n)
    update_ghosts(lap)
    c4 = div_coeff_grad(mob, lap, floor=0.0).owned
    fb = phi_star.like("fbulk", ghost=1)
    fb.owned = bulk_potential_derivative(phi_star.owned, p.Gamma2)
    if S:
        fb.owned = fb.owned + S * ((1.0 - th) * phi_n.owned - phi_star.owned)
    update_ghosts(fb)
    rhs = phi_n.owned / dt - (1.0 - th) * G1 * c4 + div_coeff_grad(mob, fb, floor=0.0).owned
    explicit = phi_n if ta > 0.0 else phi_star
    if p.advection == "central":
        rhs -= (1.0 - ta) * advect(explicit, v).owned
    elif ta < 1.0:
        rhs -= (1.0 - ta) * adv.apply(explicit)
    if growth and p.epsilon > 0:
        rhs += growth_rate(phi_star, c, p).owned
    b = Field(sub, 1, "ch_rhs")
    b.owned = rhs
    return A, b


def ch_step(hist: PhiHistory, v: VectorField, c: Field, p: ChParams, dt: float,
            solver: SolverConfig | None = None, growth: bool = True):
    """Advance the network fraction one step; returns ``(phi_next, report)``."""
    solver = solver or SolverConfig()
    A, b = ch_system(hist, v, c, p, dt, growth)
    x, rep = _solve_increment(A, b, hist.phi_curr, solver, "cahn-hilliard", conserve=True)
    phi = Field(hist.phi_curr.sub, 2, "phi")
    phi.owned = x
    update_ghosts(phi)
    return phi, rep


def _solve_increment(A, b: Field, x0: Field, solver, system, conserve=False):
    """Solve ``A x = b`` for the increment ``x - x0``.

    The tolerance then applies to the change over the step rather than to the
    ``x/dt``-dominated right-hand side. With ``conserve`` set, a uniform shift
    makes the weighted residual sum vanish, so the conserved sum does not drift
    at the level of the solver tolerance.
    """
    r = b.like("increment_rhs")
    r.owned = b.owned - A.apply(x0.owned[None])[0]
    try:
        d, rep = gmres_solve(A, r, solver, system=system)
    except NotConverged as exc:
        raise StepError(str(exc), exc.report) from exc
    x = x0.owned + d.owned
    # a zero increment keeps x0 exactly (uniform states stay bitwise fixed)
    if conserve and global_max(_comm(b.sub), float(np.any(d.owned))) > 0.0:
        sub = b.sub
        w = sub.row_weights()[None, :]
        res = b.owned - A.apply(x[None])[0]
        a1 = A.apply(np.ones((1,) + sub.shape))[0]
        total = global_sums(sub, [w * res, w * a1])
        x = x + total[0] / total[1]
    return x, rep


# --- nutrient ------------------------------------------------------------------


def nutrient_system(c: Field, hist: PhiHistory, phi_next: Field, v: VectorField,
                    p: NutrientParams, dt: float, c_prev: Field | None = None):
    """Matrix and right-hand side of the nutrient step.

    ``(s1 c1 - s0 c0)/dt + div(c* v s_h) - div(Ds s_h grad c_cn) = -A n_h c_cn``
    where ``s`` is the solvent fraction, ``n`` the network fraction and ``_h``
    the half-level average.
    """
    sub = c.sub
    h = sub.grid
    n0 = hist.phi_curr.owned
    n1 = phi_next.owned
    s0, s1 = 1.0 - n0, 1.0 - n1
    nh = 0.5 * (n0 + n1)
    sh = 1.0 - nh
    if p.solvent_floor > 0.0:
        s0, s1, sh = (np.maximum(a, p.solvent_floor) for a in (s0, s1, sh))
        nh = np.clip(nh, 0.0, 1.0)
    for s, label in ((s0, "n"), (s1, "n+1"), (sh, "n+1/2")):
        if -global_max(_comm(sub), float(-s.min())) <= 0.0:
            raise DomainError(f"solvent fraction non-positive at level {label}")
    th = p.theta
    diff = Field(sub, 1, "Ds_s")
    diff.owned = p.Ds * sh
    update_ghosts(diff)
    reg = owned_region(sub)
    L = fold_mirror(sub, div_grad(reg, diff, h.dx, h.dy))
    diag = s1 / dt + th * p.A * nh
    A = StencilMatrix(sub)
    A.set_block(0, 0, Stencil(reg, {(0, 0): diag}) - th * L)

    cg = _ghosted(c, 1)
    cp = cg if c_prev is None else c_prev
    cstar = Field(sub, 1, "c_flux")
    cstar.owned = (1.5 * c.owned - 0.5 * cp.owned) * sh
    update_ghosts(cstar)
    rhs = (s0 / dt - (1.0 - th) * p.A * nh) * c.owned
    rhs += (1.0 - th) * div_coeff_grad(diff, cg).owned
    rhs -= advect(cstar, v).owned
    b = Field(sub, 1, "nut_rhs")
    b.owned = rhs
    return A, b


def nutrient_step(c: Field, hist: PhiHistory, phi_next: Field, v: VectorField,
                  p: NutrientParams, dt: float, solver: SolverConfig | None = None,
                  c_prev: Field | None = None):
    """Advance the nutrient one step; returns ``(c_next, report)``."""
    solver = solver or SolverConfig()
    A, b = nutrient_system(c, hist, phi_next, v, p, dt, c_prev)
    x, rep = _solve_increment(A, b, c, solver, "nutrient")
    out = Field(c.sub, 1, "c", c.bc)
    out.owned = x
    update_ghosts(out)
    return out, rep
