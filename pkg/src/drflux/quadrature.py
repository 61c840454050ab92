"""Quadrature rules: masked-ball midpoint rules, composite Gauss panels, disks.

All rules return ``(nodes, weights)`` with ``nodes`` of shape ``(m, d)``.
Integrals are plain weighted sums (``weights @ values``), which numpy
evaluates with pairwise summation in a fixed order, so results are
bit-reproducible for identical inputs.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import ParameterError

DEFAULT_BALL_POINTS = {1: 128, 2: 96, 3: 48}


class Integral(NamedTuple):
    value: object
    error: float


def midpoint_1d(lo, hi, n):
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5), np.full(n, h)


@lru_cache(maxsize=64)
def _gauss_legendre(order):
    return np.polynomial.legendre.leggauss(order)


def gauss_panels(lo, hi, n_panels=64, order=4, breaks=()):
    """Composite Gauss-Legendre rule on [lo, hi] split at ``breaks``.

    The interval is cut into ``n_panels`` equal panels and additionally at
    every break point inside (lo, hi), so integrands with jumps at the
    breaks are integrated panel-wise smooth.
    """
    edges = np.linspace(lo, hi, n_panels + 1)
    b = np.asarray([x for x in breaks if lo < x < hi], dtype=float)
    if b.size:
        edges = np.unique(np.concatenate([edges, b]))
        # drop slivers created by near-coincident cuts
        keep = np.concatenate([[True], np.diff(edges) > 1e-14 * max(1.0, hi - lo)])
        edges = edges[keep]
        edges[-1] = hi
    g, w = _gauss_legendre(order)
    a, c = edges[:-1, None], edges[1:, None]
    half = (c - a) / 2
    nodes = (a + c) / 2 + half * g
    weights = half * w
    return nodes.ravel(), weights.ravel()


def tensor_rule(axes):
    """Tensor product of 1-D rules given as a list of (nodes, weights)."""
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.ones(nodes.shape[0])
    for wg in wgrids:
        weights = weights * wg.ravel()
    return nodes, weights


def _as_counts(n, d):
    if n is None:
        n = DEFAULT_BALL_POINTS.get(d, 32)
    counts = tuple(int(v) for v in np.broadcast_to(np.asarray(n), (d,)))
    if any(c < 2 for c in counts):
        raise ParameterError("quadrature needs at least 2 points per axis")
    return counts


@lru_cache(maxsize=256)
def _ball_rule_cached(d, counts, radius, box, frame):
    half = np.full(d, radius) if box is None else np.asarray(box, dtype=float)
    axes = [midpoint_1d(-h, h, c) for h, c in zip(half, counts)]
    w_nodes, weights = tensor_rule(axes)
    if frame is None:
        nodes = w_nodes
    else:
        q = np.asarray(frame, dtype=float).reshape(d, d)
        nodes = w_nodes @ q.T
    mask = np.sum(nodes * nodes, axis=1) < radius * radius
    nodes = np.ascontiguousarray(nodes[mask])
    weights = np.ascontiguousarray(weights[mask])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def ball_rule(d, n=None, radius=1.0, box=None, frame=None):
    """Tensor midpoint rule on a box masked to the open ball ``|z| < radius``.

    ``box`` gives per-axis half-widths of the sampled box (default: the
    ball's bounding cube); ``frame`` is an orthogonal matrix whose columns
    are the box axes.  The grid is symmetric under ``z -> -z``.
    """
    counts = _as_counts(n, d)
    box_key = None if box is None else tuple(float(b) for b in np.atleast_1d(box))
    frame_key = None if frame is None else tuple(np.asarray(frame, dtype=float).ravel().tolist())
    return _ball_rule_cached(int(d), counts, float(radius), box_key, frame_key)


def ball_integrate(f, d, n=None, radius=1.0, box=None, frame=None, estimate_error=True):
    """Integrate ``f`` over the ball of given radius.

    ``f`` maps an ``(m, d)`` array of nodes to ``(m,)`` or ``(m, k)`` values.
    The error estimate is the difference with the same rule at half the
    resolution.
    """
    counts = _as_counts(n, d)
    nodes, weights = ball_rule(d, counts, radius, box, frame)
    value = weights @ np.asarray(f(nodes))
    if not estimate_error:
        return Integral(value, float("nan"))
    coarse = tuple(max(2, c // 2) for c in counts)
    cn, cw = ball_rule(d, coarse, radius, box, frame)
    coarse_value = cw @ np.asarray(f(cn))
    err = float(np.max(np.abs(np.asarray(value) - np.asarray(coarse_value))))
    return Integral(value, err)


def disk_rule(center, radius, n_r=64, n_theta=64, start_angle=0.0, span=2 * np.pi):
    """Polar midpoint rule on a disk sector (area weights)."""
    r = radius * (np.arange(n_r) + 0.5) / n_r
    dr = radius / n_r
    th = start_angle + span * (np.arange(n_theta) + 0.5) / n_theta
    dth = span / n_theta
    R, TH = np.meshgrid(r, th, indexing="ij")
    nodes = np.stack([center[0] + R * np.cos(TH), center[1] + R * np.sin(TH)], axis=-1).reshape(-1, 2)
    weights = (R * dr * dth).ravel()
    return nodes, weights


def sphere_rule(d, n_angles=32):
    """Symmetric direction set on the unit sphere with equal weights summing to its area."""
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        th = 2 * np.pi * np.arange(n_angles) / n_angles
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        return dirs, np.full(n_angles, 2 * np.pi / n_angles)
    if d == 3:
        # Fibonacci half-sphere mirrored through the origin
        m = max(n_angles // 2, 4)
        k = np.arange(m) + 0.5
        zc = k / m
        phi = np.pi * (1 + 5**0.5) * k
        rho = np.sqrt(1 - zc**2)
        half = np.stack([rho * np.cos(phi), rho * np.sin(phi), zc], axis=1)
        dirs = np.concatenate([half, -half])
        return dirs, np.full(2 * m, 4 * np.pi / (2 * m))
    raise ParameterError(f"unsupported dimension {d}")


@lru_cache(maxsize=32)
def _row_rule(d, n_rows):
    """Midpoint rows over the unit (d-1)-ball and their chord half-lengths."""
    if d == 1:
        return np.zeros((1, 0)), np.ones(1), np.ones(1)
    axes = [midpoint_1d(-1.0, 1.0, n_rows) for _ in range(d - 1)]
    rows, w = tensor_rule(axes)
    r2 = np.sum(rows * rows, axis=1)
    keep = r2 < 1
    return rows[keep], w[keep], np.sqrt(1 - r2[keep])


DEFAULT_ROWS = {1: 1, 2: 48, 3: 24}


def chord_ball_rule(d, axis=-1, breaks=None, n_rows=None, n_panels=2, order=8):
    """Unit-ball rule made of chords along ``axis``, split at ``breaks``.

    The other axes carry a midpoint rule (rows, symmetric under reflection);
    along each chord ``[-c, c]`` a composite Gauss-Legendre rule is used,
    additionally cut at the per-point break coordinates ``breaks`` of shape
    ``(m, K)``.  Integrands with a jump across a hyperplane normal to
    ``axis`` are thus integrated piecewise smooth.

    Returns ``(nodes, weights)`` of shapes ``(N, d), (N,)`` without breaks
    and ``(m, N, d), (m, N)`` with breaks.
    """
    axis = axis % d
    n_rows = DEFAULT_ROWS[d] if n_rows is None else n_rows
    rows, wr, c = _row_rule(d, n_rows)
    g, w = _gauss_legendre(order)
    # reference composite rule on [0, 1]
    pe = np.linspace(0.0, 1.0, n_panels + 1)
    s = ((pe[:-1, None] + pe[1:, None]) / 2 + (pe[1:, None] - pe[:-1, None]) / 2 * g).ravel()
    sw = ((pe[1:, None] - pe[:-1, None]) / 2 * w).ravel()
    R = len(c)
    if breaks is None:
        edges = np.stack([-c, c], axis=-1)[None]  # (1, R, 2)
    else:
        b = np.asarray(breaks, dtype=float)
        b = b.reshape(b.shape[0], -1)
        inner = np.clip(b[:, None, :], -c[None, :, None], c[None, :, None])
        inner = np.sort(inner, axis=-1)
        m = b.shape[0]
        edges = np.concatenate([np.broadcast_to(-c[None, :, None], (m, R, 1)), inner,
                                np.broadcast_to(c[None, :, None], (m, R, 1))], axis=-1)
    a, bnd = edges[..., :-1], edges[..., 1:]
    along = a[..., None] + (bnd - a)[..., None] * s  # (m, R, K+1, P*G)
    wts = (bnd - a)[..., None] * sw * wr[None, :, None, None]
    m = along.shape[0]
    along = along.reshape(m, -1)
    wts = wts.reshape(m, -1)
    nq = along.shape[1] // R
    nodes = np.empty((m, along.shape[1], d))
    others = [k for k in range(d) if k != axis]
    for j, k in enumerate(others):
        nodes[..., k] = np.repeat(rows[:, j], nq)[None, :]
    nodes[..., axis] = along
    if breaks is None:
        return nodes[0], wts[0]
    return nodes, wts


@lru_cache(maxsize=16)
def polar_ball_rule(d, n_r=48, n_angles=32, radial_breaks=()):
    """Gauss-Legendre in the radius times a symmetric sphere rule.

    Accurate for radial weights with steep but smooth profiles (the angular
    trapezoid rule is spectral for smooth periodic integrands).  The radial
    rule is cut at ``radial_breaks``, each piece keeping ``n_r`` nodes.
    """
    g, w = _gauss_legendre(n_r)
    edges = np.unique(np.concatenate([[0.0, 1.0], [b for b in radial_breaks if 0 < b < 1]]))
    a, c = edges[:-1, None], edges[1:, None]
    r = ((a + c) / 2 + (c - a) / 2 * g).ravel()
    wr = ((c - a) / 2 * w).ravel() * r ** (d - 1)
    dirs, wd = sphere_rule(d, n_angles)
    nodes = (r[:, None, None] * dirs[None]).reshape(-1, d)
    weights = (wr[:, None] * wd[None]).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights
