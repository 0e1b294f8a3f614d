"""Safe-set geometry: unions of convex regions cut out by half-spaces.

The safe side of every stored half-space is {z : c'z <= d}.  Scenario files
may declare faces with sense "ge"; those are negated on load so the rest of
the code never sees the other convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog


@dataclass(frozen=True)
class HalfSpace:
    c: np.ndarray
    d: float

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 1 or not np.any(c != 0.0):
            raise ValueError("half-space normal must be a nonzero vector")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(self.d))

    @property
    def n(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class ConvexRegion:
    """Intersection of half-spaces; ``name`` is only for diagnostics."""

    half_spaces: tuple
    name: str = ""

    def __post_init__(self):
        hs = tuple(self.half_spaces)
        if not hs:
            raise ValueError("region needs at least one half-space")
        n = hs[0].n
        if any(h.n != n for h in hs):
            raise ValueError("half-space dimensions disagree within a region")
        object.__setattr__(self, "half_spaces", hs)

    @property
    def n_l(self) -> int:
        return len(self.half_spaces)

    @property
    def n(self) -> int:
        return self.half_spaces[0].n

    def face_matrix(self):
        """(C, d) with safe points satisfying C z <= d row-wise."""
        c = np.stack([h.c for h in self.half_spaces])
        d = np.array([h.d for h in self.half_spaces])
        return c, d


@dataclass(frozen=True)
class SafeSet:
    regions: tuple = field(default_factory=tuple)

    def __post_init__(self):
        regions = tuple(self.regions)
        if not regions:
            raise ValueError("safe set needs at least one region")
        n = regions[0].n
        if any(r.n != n for r in regions):
            raise ValueError("region dimensions disagree")
        object.__setattr__(self, "regions", regions)

    @property
    def n_o(self) -> int:
        return len(self.regions)

    @property
    def n(self) -> int:
        return self.regions[0].n


def contains(region: ConvexRegion, z: np.ndarray) -> bool:
    z = np.asarray(z, dtype=float)
    if z.shape != (region.n,):
        raise ValueError(f"point has shape {z.shape}, region lives in R^{region.n}")
    c, d = region.face_matrix()
    return bool(np.all(c @ z <= d))


def contains_any(safe_set: SafeSet, z: np.ndarray) -> bool:
    return any(contains(r, z) for r in safe_set.regions)


def membership_mask(safe_set: SafeSet, pts: np.ndarray) -> np.ndarray:
    """Vectorized union membership for an (N, n) batch of points."""
    pts = np.asarray(pts, dtype=float)
    inside = np.zeros(pts.shape[0], dtype=bool)
    for region in safe_set.regions:
        c, d = region.face_matrix()
        inside |= np.all(pts @ c.T <= d, axis=1)
    return inside


def min_signed_margin(safe_set: SafeSet, z: np.ndarray) -> float:
    """max over regions of min over faces of (d - c'z)/||c||; > 0 iff z is safe
    with slack, 0 on the boundary."""
    z = np.asarray(z, dtype=float)
    if z.shape != (safe_set.n,):
        raise ValueError(f"point has shape {z.shape}, safe set lives in R^{safe_set.n}")
    best = -np.inf
    for region in safe_set.regions:
        c, d = region.face_matrix()
        margins = (d - c @ z) / np.linalg.norm(c, axis=1)
        best = max(best, float(margins.min()))
    return best


def allocate_risk(delta_s: float, n_l: int) -> float:
    """Uniform union-bound split of the step risk across a region's faces."""
    if not 0.0 < delta_s < 1.0:
        raise ValueError(f"delta_s must lie in (0,1), got {delta_s}")
    if n_l < 1:
        raise ValueError(f"n_l must be positive, got {n_l}")
    return delta_s / n_l


def region_is_empty(region: ConvexRegion, tol: float = 1e-9) -> bool:
    """Feasibility LP over the face constraints; used to fail fast on load.

    Minimizes 0 subject to C z <= d with free variables; infeasible LP means
    the region is empty.
    """
    c_mat, d = region.face_matrix()
    n = region.n
    res = linprog(c=np.zeros(n), A_ub=c_mat, b_ub=d + tol,
                  bounds=[(None, None)] * n, method="highs")
    return not res.success
