"""Initial network-fraction profiles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..flow import FlowParams, FlowState
from ..mesh import Field, Subdomain, update_ghosts
from ..transport import PhiHistory

VARIANTS = ("mushroom_pair", "base_layer", "uniform_perturbed")


@dataclass
class InitialCondition:
    variant: str = "mushroom_pair"
    base_height: float = 0.15
    phi_bulk: float = 0.4
    phi_neck: float = 0.2
    cap_centers: tuple = ((0.25, 0.55), (0.75, 0.55))
    cap_radius: float = 0.12
    neck_width: float = 0.08
    smoothing: float = 0.01
    # uniform_perturbed
    phi_mean: float = 0.5
    amplitude: float = 0.01
    seed: int = 0
    c_init: float = 1.0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"ic.variant: unknown variant {self.variant!r}")
        if not 0.0 < self.phi_neck <= self.phi_bulk < 1.0:
            raise ConfigError("ic.phi_neck/ic.phi_bulk: need 0 < phi_neck <= phi_bulk < 1")
        if not 0.0 < self.base_height < 1.0:
            raise ConfigError("ic.base_height: must lie inside (0, 1)")
        if self.smoothing <= 0.0:
            raise ConfigError("ic.smoothing: must be positive")
        if self.cap_radius <= 0.0 or self.neck_width <= 0.0:
            raise ConfigError("ic.cap_radius/ic.neck_width: must be positive")
        for cx, cy in self.cap_centers:
            if not (0.0 <= cx <= 1.0 and self.cap_radius <= cy <= 1.0 - self.cap_radius):
                raise ConfigError(f"ic.cap_centers: cap at ({cx}, {cy}) leaves the domain")
            if cy <= self.base_height:
                raise ConfigError(f"ic.cap_centers: cap at ({cx}, {cy}) sits inside the base layer")
        if self.amplitude < 0.0:
            raise ConfigError("ic.amplitude: must be non-negative")


# the tanh blend is truncated at this many smoothing widths
_BLEND_CUTOFF = 3.0


def _smooth_step(d, width):
    """0 -> 1 as the signed distance ``d`` (positive inside) crosses zero.

    A tanh profile rescaled to reach exactly 0 and 1 at three widths from the
    interface, so plateaus hold their nominal values.
    """
    t = np.clip(d / width, -_BLEND_CUTOFF, _BLEND_CUTOFF)
    return 0.5 * (1.0 + np.tanh(t) / np.tanh(_BLEND_CUTOFF))


def _periodic_dx(x, cx):
    d = np.abs(x - cx)
    return np.minimum(d, 1.0 - d)


def phi_profile(ic: InitialCondition, x, y):
    """Network fraction at points ``(x, y)`` (global arrays)."""
    if ic.variant == "uniform_perturbed":
        raise ValueError("uniform_perturbed is generated on the grid, not pointwise")
    w = ic.smoothing
    base = _smooth_step(ic.base_height - y, w)
    phi = ic.phi_bulk * base
    if ic.variant == "base_layer":
        return phi
    for cx, cy in ic.cap_centers:
        dxp = _periodic_dx(x, cx)
        cap = _smooth_step(ic.cap_radius - np.hypot(dxp, y - cy), w)
        # the neck runs from inside the base to the cap centre
        inside_x = 0.5 * ic.neck_width - dxp
        inside_y = np.minimum(y - 0.5 * ic.base_height, cy - y)
        neck = _smooth_step(np.minimum(inside_x, inside_y), w)
        phi = np.maximum(phi, ic.phi_neck * neck)
        phi = np.maximum(phi, ic.phi_bulk * cap)
    return phi


def initial_phi(ic: InitialCondition, grid) -> np.ndarray:
    """Global network fraction on the unique nodes ``(mx, ny)``."""
    ic.validate()
    if ic.variant == "uniform_perturbed":
        rng = np.random.default_rng(ic.seed)
        noise = rng.uniform(-1.0, 1.0, size=(grid.mx, grid.ny))
        return ic.phi_mean + ic.amplitude * noise
    x = grid.x()[: grid.mx]
    y = grid.y()
    X, Y = np.meshgrid(x, y, indexing="ij")
    return phi_profile(ic, X, Y)


def build_initial_condition(ic: InitialCondition, sub: Subdomain, fp: FlowParams):
    """Return ``(PhiHistory, c, FlowState)`` for the local block."""
    glob = initial_phi(ic, sub.grid)
    phi = Field(sub, 2, "phi")
    phi.owned = glob[sub.i_lo:sub.i_hi, sub.j_lo:sub.j_hi]
    update_ghosts(phi)
    c = Field(sub, 1, "c")
    c.owned = ic.c_init
    update_ghosts(c)
    return PhiHistory.start(phi), c, FlowState.at_rest(sub, fp)
