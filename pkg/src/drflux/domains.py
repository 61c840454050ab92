"""Domains (periodic boxes, simple polygons) and axis-aligned regions.

Distances, nearest boundary points and point location for polygons are
computed exactly by enumerating edges.  Everything is vectorised over a
leading batch axis: points are arrays of shape ``(..., d)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BoundaryError, DomainError, ParameterError

TIE_TOL = 1e-12


def unit_ball_volume(k):
    """Lebesgue measure of the unit ball in R^k (1 for k = 0)."""
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


def _elementary_symmetric(values):
    e = [1.0]
    for v in values:
        e = [1.0] + [e[j] + v * e[j - 1] for j in range(1, len(e))] + [v * e[-1]]
    return e


def steiner_volume(sides, radius):
    """Volume of the closed ``radius``-neighbourhood of a box with ``sides``."""
    sides = list(sides)
    m = len(sides)
    if m == 0:
        return 1.0
    e = _elementary_symmetric(sides)
    return sum(unit_ball_volume(k) * radius**k * e[m - k] for k in range(m + 1))


# --------------------------------------------------------------------------
# Regions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box, optionally thickened by ``radius``.

    ``Box(lo, hi).expand(eps)`` is the closed tubular neighbourhood
    ``closure(A + B_eps)`` of the box ``A = [lo, hi]``.
    """

    lower: tuple
    upper: tuple
    radius: float = 0.0

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ParameterError("box corners have different dimensions")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ParameterError(f"degenerate box {lo} - {hi}")
        if self.radius < 0:
            raise ParameterError("box radius must be nonnegative")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dimension(self):
        return len(self.lower)

    @property
    def sides(self):
        return tuple(b - a for a, b in zip(self.lower, self.upper))

    def expand(self, eps):
        return Box(self.lower, self.upper, self.radius + float(eps))

    def bounds(self):
        """Bounding box of the (thickened) region as two arrays."""
        lo = np.asarray(self.lower) - self.radius
        hi = np.asarray(self.upper) + self.radius
        return lo, hi

    @property
    def volume(self):
        return steiner_volume(self.sides, self.radius)

    def core_distance(self, x):
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        return np.sqrt(np.sum(gap * gap, axis=-1))

    def contains(self, x):
        if self.radius == 0.0:
            x = np.asarray(x, dtype=float)
            return np.all((x >= np.asarray(self.lower)) & (x <= np.asarray(self.upper)), axis=-1)
        return self.core_distance(x) <= self.radius

    def section_measure(self, axis, c):
        """(d-1)-dimensional measure of the section ``{x_axis = c}``."""
        lo, hi = self.lower[axis], self.upper[axis]
        s = max(lo - c, c - hi, 0.0)
        if s > self.radius:
            return 0.0
        r = math.sqrt(max(self.radius**2 - s**2, 0.0))
        others = [side for k, side in enumerate(self.sides) if k != axis]
        return steiner_volume(others, r)

    def to_json(self):
        return {"lower": list(self.lower), "upper": list(self.upper), "radius": self.radius}


# --------------------------------------------------------------------------
# Domains
# --------------------------------------------------------------------------


class PeriodicBox:
    """Periodic box ``[lower, lower + side)^d`` with d in {1, 2, 3}."""

    kind = "periodic_box"
    periodic = True

    def __init__(self, dimension, side, lower=None):
        if dimension not in (1, 2, 3):
            raise ParameterError(f"periodic box dimension must be 1, 2 or 3, got {dimension}")
        side = float(side)
        if not math.isfinite(side) or side <= 0:
            raise ParameterError(f"periodic box side must be finite and positive, got {side}")
        self.dimension = int(dimension)
        self.side = side
        if lower is None:
            lower = -side / 2
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (self.dimension,)).copy()
        self.lower = lower
        self.upper = lower + side

    def __repr__(self):
        return f"PeriodicBox(dimension={self.dimension}, side={self.side}, lower={self.lower.tolist()})"

    @property
    def volume(self):
        return self.side**self.dimension

    @property
    def half_width(self):
        return self.side / 2

    def bounds(self):
        return self.lower.copy(), self.upper.copy()

    def as_box(self):
        return Box(self.lower, self.upper)

    def wrap(self, x):
        x = np.asarray(x, dtype=float)
        return self.lower + np.mod(x - self.lower, self.side)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1], dtype=bool)

    def distance(self, x):
        """Distance to the faces of the fundamental cell (no wrap)."""
        x = np.asarray(x, dtype=float)
        d = np.minimum(x - self.lower, self.upper - x)
        return np.min(d, axis=-1)

    def to_json(self):
        return {"kind": self.kind, "dimension": self.dimension, "side": self.side,
                "lower": self.lower.tolist()}


class WholeSpace:
    """All of R^d; used by the linear and constant catalog fields."""

    kind = "whole_space"
    periodic = False

    def __init__(self, dimension):
        if dimension not in (1, 2, 3):
            raise ParameterError(f"unsupported dimension {dimension}")
        self.dimension = int(dimension)

    def __repr__(self):
        return f"WholeSpace({self.dimension})"

    @property
    def volume(self):
        return math.inf

    @property
    def half_width(self):
        return math.inf

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1], dtype=bool)

    def to_json(self):
        return {"kind": self.kind, "dimension": self.dimension}


class Polygon:
    """Simple polygon in the plane, vertices stored counterclockwise."""

    kind = "polygon"
    dimension = 2
    periodic = False

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ParameterError("polygon vertices must be an (n, 2) array")
        if len(v) >= 2 and np.allclose(v[0], v[-1]):
            v = v[:-1]
        if len(v) < 3:
            raise ParameterError("a polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise ParameterError("polygon vertices must be finite")
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if abs(area) < 1e-14:
            raise ParameterError("polygon has zero area")
        if area < 0:
            v = v[::-1].copy()
        self.vertices = v
        if not self._is_simple():
            raise ParameterError("polygon is self-intersecting")
        self.a = v
        self.b = np.roll(v, -1, axis=0)
        t = self.b - self.a
        self.lengths = np.linalg.norm(t, axis=1)
        if np.any(self.lengths == 0):
            raise ParameterError("polygon has repeated vertices")
        self.tangents = t / self.lengths[:, None]
        # interior lies to the left of a counterclockwise edge
        self.normals = np.stack([-self.tangents[:, 1], self.tangents[:, 0]], axis=1)
        self.area = abs(area)

    def __repr__(self):
        return f"Polygon({self.vertices.tolist()})"

    @classmethod
    def unit_square(cls):
        return cls([(0, 0), (1, 0), (1, 1), (0, 1)])

    @classmethod
    def rectangle(cls, lower, upper):
        (x0, y0), (x1, y1) = lower, upper
        return cls([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])

    @classmethod
    def l_shape(cls):
        return cls([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])

    @classmethod
    def from_json(cls, source):
        """Load ``{"vertices": [[x, y], ...]}`` from a path, string or dict."""
        if isinstance(source, dict):
            data = source
        else:
            p = Path(source)
            data = json.loads(p.read_text()) if p.exists() else json.loads(source)
        verts = data["vertices"] if isinstance(data, dict) else data
        return cls(verts)

    def to_json(self):
        return {"kind": self.kind, "vertices": self.vertices.tolist()}

    @property
    def volume(self):
        return self.area

    @property
    def perimeter(self):
        return float(self.lengths.sum())

    @property
    def n_edges(self):
        return len(self.vertices)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def half_width(self):
        """Inradius upper bound used to reject absurd mollification scales."""
        lo, hi = self.bounds()
        return float(np.min(hi - lo)) / 2

    def _is_simple(self):
        v = self.vertices
        n = len(v)
        for i in range(n):
            p1, p2 = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or j == (i + 1) % n:
                    continue
                q1, q2 = v[j], v[(j + 1) % n]
                if _segments_intersect(p1, p2, q1, q2):
                    return False
        return True

    # -- geometry ----------------------------------------------------------

    def _edge_projection(self, x):
        """Per-edge projection parameter and squared distance, shape (..., n)."""
        x = np.asarray(x, dtype=float)[..., None, :]
        rel = x - self.a
        s = np.sum(rel * self.tangents, axis=-1)
        sc = np.clip(s, 0.0, self.lengths)
        foot = self.a + sc[..., None] * self.tangents
        d2 = np.sum((x - foot) ** 2, axis=-1)
        return s, sc, foot, d2

    def distance(self, x):
        """Exact distance to the boundary (min over edges)."""
        _, _, _, d2 = self._edge_projection(x)
        return np.sqrt(np.min(d2, axis=-1))

    def nearest(self, x):
        """Nearest boundary point, its edge index and a uniqueness flag.

        Ties closer than ``TIE_TOL`` are resolved in favour of the lowest
        edge index.  Two edges sharing the nearest point (a vertex) count as
        the same point and do not break uniqueness.
        """
        _, _, foot, d2 = self._edge_projection(x)
        d = np.sqrt(d2)
        idx = np.argmin(d, axis=-1)
        dmin = np.take_along_axis(d, idx[..., None], axis=-1)
        best = np.take_along_axis(foot, idx[..., None, None], axis=-2)[..., 0, :]
        close = d <= dmin + TIE_TOL
        same_point = np.linalg.norm(foot - best[..., None, :], axis=-1) <= TIE_TOL
        unique = ~np.any(close & ~same_point, axis=-1)
        return best, idx, unique

    def contains(self, x, strict=True):
        """Point-in-polygon test (crossing number); boundary points are outside if strict."""
        x = np.asarray(x, dtype=float)
        px, py = x[..., 0][..., None], x[..., 1][..., None]
        ax, ay = self.a[:, 0], self.a[:, 1]
        bx, by = self.b[:, 0], self.b[:, 1]
        cond = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = ax + (py - ay) * (bx - ax) / (by - ay)
        crossings = np.sum(cond & (px < xint), axis=-1)
        inside = crossings % 2 == 1
        on_boundary = self.distance(x) <= TIE_TOL
        if strict:
            return inside & ~on_boundary
        return inside | on_boundary

    def require_inside(self, x):
        if not np.all(self.contains(x)):
            raise DomainError("point outside the polygon interior")

    def require_interior_point(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(self.distance(x) <= TIE_TOL):
            raise BoundaryError("point lies on the boundary")
        if not np.all(self.contains(x)):
            raise DomainError("point outside the polygon")

    def is_vertex(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        return bool(np.min(np.linalg.norm(self.vertices - x, axis=1)) <= tol)

    def edge_of(self, x, tol=1e-9):
        """Index of the edge containing boundary point ``x`` (ValueError if none)."""
        _, _, _, d2 = self._edge_projection(x)
        d = np.sqrt(d2)
        i = int(np.argmin(d))
        if d[i] > tol:
            raise BoundaryError("point is not on the boundary")
        return i

    def sample_boundary(self, n_per_edge=1, exclude_vertices=True):
        """Evenly spaced boundary points, vertices excluded by default."""
        pts, edges = [], []
        for i in range(self.n_edges):
            if exclude_vertices:
                ts = (np.arange(n_per_edge) + 0.5) / n_per_edge
            else:
                ts = np.arange(n_per_edge) / n_per_edge
            for t in ts:
                pts.append(self.a[i] + t * (self.b[i] - self.a[i]))
                edges.append(i)
        return np.array(pts), np.array(edges)


def _orient(p, q, r):
    return np.sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))


def _on_segment(p, q, r):
    return min(p[0], r[0]) <= q[0] <= max(p[0], r[0]) and min(p[1], r[1]) <= q[1] <= max(p[1], r[1])


def _segments_intersect(p1, p2, q1, q2):
    o1, o2 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    o3, o4 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(p1, q1, p2):
        return True
    if o2 == 0 and _on_segment(p1, q2, p2):
        return True
    if o3 == 0 and _on_segment(q1, p1, q2):
        return True
    if o4 == 0 and _on_segment(q1, p2, q2):
        return True
    return False


def domain_from_json(data):
    kind = data.get("kind", "polygon" if "vertices" in data else "periodic_box")
    if kind == "polygon":
        return Polygon(data["vertices"])
    if kind == "periodic_box":
        return PeriodicBox(data["dimension"], data["side"], data.get("lower"))
    if kind == "whole_space":
        return WholeSpace(data["dimension"])
    raise ParameterError(f"unknown domain kind {kind!r}")
