"""Per-step diagnostics and biofilm connectivity analysis."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage

from ..mesh import Field, gather, integrate

# 4-connectivity
_CROSS = ndimage.generate_binary_structure(2, 1)


def label_periodic(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 4-connected regions of ``mask[i, j]``, periodic in ``i``.

    Returns ``(labels, count)`` with labels renumbered ``1..count``.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_CROSS)
    if n == 0 or mask.shape[0] < 2:
        return labels, n
    parent = list(range(n + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    first, last = labels[0], labels[-1]
    for a, b in zip(first, last):
        if a and b:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(k) for k in range(n + 1)])
    uniq = np.unique(roots[1:])
    remap = np.zeros(n + 1, dtype=int)
    remap[1:] = np.searchsorted(uniq, roots[1:]) + 1
    return remap[labels], len(uniq)


def count_components(phi_global: np.ndarray, threshold: float) -> int:
    return label_periodic(phi_global >= threshold)[1]


def connected_components(phi: Field, threshold: float) -> int:
    """Component count of ``{phi >= threshold}`` over the whole grid (all ranks get it)."""
    glob = gather(phi, root=0)
    comm = phi.sub.comm
    n = count_components(glob, threshold) if glob is not None else 0
    if comm is not None and comm.size > 1:
        n = comm.bcast(n, root=0)
    return n


def neck_width(phi_global: np.ndarray, threshold: float, y_lo: int, y_hi: int) -> int:
    """Narrowest horizontal extent of the attached biofilm between two rows.

    Counts, per row ``j`` in ``[y_lo, y_hi)``, the above-threshold nodes of the
    component touching the bottom wall and returns the minimum; 0 once detached.
    """
    labels, n = label_periodic(phi_global >= threshold)
    if n == 0:
        return 0
    base = set(np.unique(labels[:, 0])) - {0}
    attached = np.isin(labels, list(base))
    return int(attached[:, y_lo:y_hi].sum(axis=0).min())


@dataclass
class Diagnostics:
    step: int
    time: float
    mass_phi: float
    free_energy: float
    max_div: float
    phi_min: float
    phi_max: float
    nutrient_total: float
    components: int
    wall_ms: float
    ch_iters: int
    nut_iters: int
    mom_iters: int
    prs_iters: int

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


def nutrient_total(phi: Field, c: Field) -> float:
    """Weighted integral of ``(1 - phi) c``."""
    f = c.like("sc", ghost=1)
    f.owned = (1.0 - phi.owned) * c.owned
    return integrate(f)
