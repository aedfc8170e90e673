"""Sets of thin-plane nodes: extraction, topology, and metric comparisons."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .solver import SolverDomain

__all__ = [
    "ThinSet",
    "ThinSetPair",
    "SetReport",
    "EtaBar",
    "extract_thin_sets",
    "consistency_tau_c",
    "default_tau_c",
    "connected_components",
    "hausdorff",
    "hausdorff_points",
    "star_shaped",
    "convexity_check",
    "eta_bar",
    "distance_grid",
    "raster_boundary",
    "ball_raster",
    "set_report",
]


@dataclass(frozen=True, eq=False)
class ThinSet:
    domain: SolverDomain
    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if m.shape != self.domain.thin_shape:
            raise ValueError(f"mask shape {m.shape} does not match the plane {self.domain.thin_shape}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    def __len__(self):
        return int(self.mask.sum())

    def __bool__(self):
        return bool(self.mask.any())

    def __eq__(self, other):
        return isinstance(other, ThinSet) and self.domain == other.domain and np.array_equal(self.mask, other.mask)

    def __or__(self, other):
        return ThinSet(self.domain, self.mask | other.mask)

    def __and__(self, other):
        return ThinSet(self.domain, self.mask & other.mask)

    def __sub__(self, other):
        return ThinSet(self.domain, self.mask & ~other.mask)

    def issubset(self, other):
        return not np.any(self.mask & ~other.mask)

    def indices(self):
        return np.argwhere(self.mask)

    def points(self):
        """Physical coordinates of the member nodes, shape ``(len, n)``."""
        return -self.domain.L + self.domain.h * self.indices().astype(float)

    def complement(self):
        return ThinSet(self.domain, ~self.mask)

    @classmethod
    def from_function(cls, domain, predicate):
        return cls(domain, predicate(*domain.plane_coords()))


class ThinSetPair(NamedTuple):
    contact: ThinSet
    positivity: ThinSet

    @property
    def unclassified(self):
        """Nodes in neither set (above the obstacle band yet not positive)."""
        return ThinSet(self.contact.domain, ~(self.contact.mask | self.positivity.mask))


def consistency_tau_c(spec):
    """``10 h^2 (1 + max |L'_h phi|)`` over interior plane nodes."""
    d = spec.domain
    phi = spec.obstacle
    inner = (slice(1, -1),) * d.n
    lap = -2.0 * d.n * phi[inner]
    for ax in range(d.n):
        for s in (-1, 1):
            idx = [slice(1, -1)] * d.n
            idx[ax] = slice(1 + s, phi.shape[ax] - 1 + s)
            lap = lap + phi[tuple(idx)]
    lap = lap / d.h**2
    finite = np.isfinite(lap)
    worst = float(np.abs(lap[finite]).max()) if finite.any() else 0.0
    return 10.0 * d.h**2 * (1.0 + worst)


def default_tau_c(spec):
    """Contact band ``100 * tol``; projected sweeps leave contact nodes exactly on the obstacle."""
    return 100.0 * spec.tol


def extract_thin_sets(field, spec, tau_c=None):
    """Contact ``{u - phi <= tau_c}`` and positivity ``{u > tau_c}`` on the plane."""
    if field.domain != spec.domain:
        raise ValueError("field and spec live on different grids")
    if tau_c is None:
        tau_c = default_tau_c(spec)
    elif tau_c == "consistency":
        tau_c = consistency_tau_c(spec)
    if not tau_c > 0:
        raise ValueError("tau_c must be positive")
    u = field.plane
    contact = ThinSet(spec.domain, (u - spec.obstacle) <= tau_c)
    positivity = ThinSet(spec.domain, u > tau_c)
    return ThinSetPair(contact, positivity)


def connected_components(s):
    """4-connected components ordered by their first node in C order."""
    if not s:
        return []
    structure = ndimage.generate_binary_structure(s.domain.n, 1)
    labels, count = ndimage.label(s.mask, structure=structure)
    flat = labels.ravel()
    first = {}
    for pos in np.flatnonzero(flat):
        first.setdefault(flat[pos], pos)
    order = sorted(range(1, count + 1), key=lambda lab: first[lab])
    return [ThinSet(s.domain, labels == lab) for lab in order]


def hausdorff_points(a, b):
    """Exact Hausdorff distance between two finite point sets."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("Hausdorff distance needs two nonempty sets")
    dab = cKDTree(b).query(a)[0].max()
    dba = cKDTree(a).query(b)[0].max()
    return float(max(dab, dba))


def hausdorff(a, b):
    if not a or not b:
        raise ValueError("Hausdorff distance needs two nonempty sets")
    return hausdorff_points(a.points(), b.points())


def _segment_distance(points, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def star_shaped(s, center=None, forgive=1):
    """Discrete ray test for star-shapedness about ``center``.

    For every member node, each grid node within ``h/2`` of the segment from
    ``center`` to it must also be a member.  Up to ``forgive`` misses per ray
    are tolerated: rasterised star-shaped sets produce single-node staircase
    defects along oblique rays.
    """
    if not s:
        raise ValueError("star-shape test needs a nonempty set")
    d = s.domain
    center = np.zeros(d.n) if center is None else np.asarray(center, dtype=float).reshape(d.n)
    h = d.h
    mask = s.mask
    reach = 0.5 * h * (1 + 1e-9)
    for p in s.points():
        lo = np.floor((np.minimum(center, p) - reach + d.L) / h).astype(int)
        hi = np.ceil((np.maximum(center, p) + reach + d.L) / h).astype(int)
        lo = np.clip(lo, 0, d.dims[0] - 1)
        hi = np.clip(hi, 0, d.dims[0] - 1)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d.n)
        pts = -d.L + h * idx
        near = _segment_distance(pts, center, p) <= reach
        missing = ~mask[tuple(idx[near].T)]
        if missing.sum() > forgive:
            return False
    return True


def _hull_mask(s):
    d = s.domain
    pts = s.points()
    coords = np.stack([c.ravel() for c in d.plane_coords()], axis=1)
    tol = 1e-9 * d.h
    if d.n == 1 or len(pts) == 1:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        inside = np.all((coords >= lo - tol) & (coords <= hi + tol), axis=1)
        return inside.reshape(d.thin_shape), True
    try:
        hull = ConvexHull(pts)
    except QhullError:
        # collinear members: the hull is the segment between the extremes
        c0 = pts.mean(axis=0)
        _, _, vt = np.linalg.svd(pts - c0)
        t = (pts - c0) @ vt[0]
        a, b = c0 + t.min() * vt[0], c0 + t.max() * vt[0]
        inside = _segment_distance(coords, a, b) <= tol
        return inside.reshape(d.thin_shape), True
    inside = np.all(coords @ hull.equations[:, :-1].T + hull.equations[:, -1] <= tol, axis=1)
    return inside.reshape(d.thin_shape), False


def convexity_check(s):
    """True iff ``s`` fills the raster of its convex hull up to one boundary layer."""
    if not s:
        raise ValueError("convexity test needs a nonempty set")
    hull, thin = _hull_mask(s)
    missing = hull & ~s.mask
    if thin:
        return not missing.any()
    layer = hull & ~ndimage.binary_erosion(hull, structure=ndimage.generate_binary_structure(s.domain.n, 1))
    return not np.any(missing & ~layer)


def raster_boundary(s):
    """Member nodes with a 4-neighbour outside the set (or off the grid)."""
    structure = ndimage.generate_binary_structure(s.domain.n, 1)
    inner = ndimage.binary_erosion(s.mask, structure=structure, border_value=0)
    return ThinSet(s.domain, s.mask & ~inner)


def ball_raster(domain, center=None, radius=1.0):
    center = np.zeros(domain.n) if center is None else np.asarray(center, dtype=float)
    coords = domain.plane_coords()
    r2 = sum((c - c0) ** 2 for c, c0 in zip(coords, center))
    return ThinSet(domain, r2 <= radius**2 * (1 + 1e-12) + 1e-15)


def distance_grid(points, domain, chunk=4096):
    """Exact Euclidean distance from every plane node to a finite point set."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.size == 0:
        raise ValueError("points must be nonempty")
    if points.shape[1] != domain.n:
        raise ValueError(f"points must have dimension {domain.n}")
    coords = np.stack([c.ravel() for c in domain.plane_coords()], axis=1)
    out = np.empty(len(coords))
    for start in range(0, len(coords), chunk):
        block = coords[start:start + chunk]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
        out[start:start + chunk] = np.sqrt(d2.min(axis=1))
    return out.reshape(domain.thin_shape)


@dataclass(frozen=True)
class EtaBar:
    value: float
    fallback: bool
    qualifying: int


def eta_bar(points, g, eps, boundary=None, zero_set=None):
    """Threshold ``inf { g(x) : dist(x, {g <= 0}) > eps }`` on a sampled ball.

    ``points``/``g`` sample the closed unit ball.  The sublevel set is the
    sampled ``{g <= 0}``, augmented by ``zero_set`` points when the exact zero
    set is known (e.g. for a distance function).  ``boundary`` marks samples
    on the sphere; by default those with ``|x| >= 1 - spacing``.  When no
    sample qualifies, the minimum over all samples is returned with
    ``fallback=True``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    g = np.asarray(g, dtype=float).ravel()
    if len(g) != len(points):
        raise ValueError("one value of g per point is required")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if boundary is None:
        r = np.linalg.norm(points, axis=1)
        spacing = cKDTree(points).query(points, k=2)[0][:, 1].max() if len(points) > 1 else 0.0
        boundary = r >= r.max() - spacing
    if np.any(g[boundary] <= 0):
        raise ValueError("g must be positive on the boundary of the ball")
    sub = points[g <= 0]
    if zero_set is not None:
        sub = np.vstack([sub, np.atleast_2d(np.asarray(zero_set, dtype=float))])
    if len(sub):
        dist = cKDTree(sub).query(points)[0]
    else:
        dist = np.full(len(points), np.inf)
    qualify = dist > eps
    if not qualify.any():
        return EtaBar(float(g.min()), True, 0)
    return EtaBar(float(g[qualify].min()), False, int(qualify.sum()))


@dataclass(frozen=True)
class SetReport:
    component_count: int
    bounding_boxes: list
    hausdorff: dict
    star_shaped: bool | None
    center: tuple | None
    convex: bool | None


def set_report(s, center=None, against=None):
    """Summary of a thin set; ``against`` maps names to sets for Hausdorff distances."""
    comps = connected_components(s)
    boxes = []
    for c in comps:
        pts = c.points()
        boxes.append((pts.min(axis=0).tolist(), pts.max(axis=0).tolist()))
    dists = {name: hausdorff(s, other) for name, other in (against or {}).items()} if s else {}
    star = star_shaped(s, center) if s else None
    return SetReport(
        component_count=len(comps),
        bounding_boxes=boxes,
        hausdorff=dists,
        star_shaped=star,
        center=None if center is None else tuple(float(c) for c in center),
        convex=convexity_check(s) if s else None,
    )
