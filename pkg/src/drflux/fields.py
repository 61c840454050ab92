"""Velocity fields: analytic catalog, grid samples, increments, mollification
and discrete variation measures.

Fields are immutable; evaluation is a pure function of the stored data.
Points are arrays of shape ``(..., d)`` and values have shape ``(..., k)``.

Piecewise-constant catalog fields carry their jump set explicitly as a list
of :class:`JumpPlane` objects (all normal to one axis), so that quadrature
rules can be split at the discontinuities and variation measures can be
integrated exactly from the jump geometry.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .domains import Box, PeriodicBox, Polygon, WholeSpace, domain_from_json
from .errors import DomainError, ParameterError
from .quadrature import chord_ball_rule, gauss_panels, midpoint_1d, polar_ball_rule, tensor_rule

SMOOTH = "smooth"
BV = "BV_Linf"
BESOV_HALF = "Linf_B1/2"
UNCLASSIFIED = "none"
DECLARED_CLASSES = (SMOOTH, BV, BESOV_HALF, UNCLASSIFIED)

LABEL_GRAD = "|grad u|"
LABEL_SYM = "|sym grad u|"
LABEL_DIR = "|z.grad u|"

DIV_TOL = 1e-6


def sign(x):
    """Sign with the convention sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


@dataclass(frozen=True)
class JumpPlane:
    """Hyperplane ``{x_axis = position}`` across which u jumps by ``jump = u+ - u-``."""

    axis: int
    position: float
    jump: tuple

    @property
    def normal(self):
        return self.axis


@dataclass
class VariationMeasure:
    """Discrete measure: atoms with nonnegative weights."""

    locations: np.ndarray
    weights: np.ndarray
    label: str
    matrices: np.ndarray | None = None

    @property
    def total(self):
        return float(np.sum(self.weights))

    def __len__(self):
        return len(self.weights)


# --------------------------------------------------------------------------
# Base class
# --------------------------------------------------------------------------


class VelocityField:
    """Common interface of analytic and grid fields."""

    domain = None
    dimension: int
    components: int
    declared_class: str = UNCLASSIFIED
    divergence_free: bool = False
    name: str = "field"
    jumps: tuple = ()
    piecewise_constant: bool = False
    sup_bound: float | None = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise ParameterError(f"expected points of dimension {self.dimension}, got shape {x.shape}")
        dom = self.domain
        if isinstance(dom, PeriodicBox):
            x = dom.wrap(x)
        elif isinstance(dom, Polygon):
            if not np.all(dom.contains(x, strict=False)):
                raise DomainError("evaluation point outside the polygon")
        return self._eval(x)

    evaluate = __call__

    def _eval(self, x):
        raise NotImplementedError

    def gradient(self, x):
        """``G[..., j, i] = d_i u^j`` by central differences (overridden when known)."""
        x = np.asarray(x, dtype=float)
        h = 1e-6
        d = self.dimension
        g = np.empty(x.shape[:-1] + (self.components, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            g[..., :, i] = (self(x + e) - self(x - e)) / (2 * h)
        return g

    @property
    def has_jumps(self):
        return len(self.jumps) > 0

    @property
    def jump_axis(self):
        return self.jumps[0].axis if self.jumps else None

    def jump_images(self, lo, hi, closed=True):
        """All jump planes (with periodic images) in [lo, hi], or (lo, hi) if not ``closed``."""
        inside = (lambda p: lo <= p <= hi) if closed else (lambda p: lo < p < hi)
        out = []
        period = self.domain.side if isinstance(self.domain, PeriodicBox) else None
        for jp in self.jumps:
            if period is None:
                if inside(jp.position):
                    out.append(jp)
                continue
            k0 = math.floor((lo - jp.position) / period)
            k1 = math.ceil((hi - jp.position) / period)
            for k in range(k0, k1 + 1):
                p = jp.position + k * period
                if inside(p):
                    out.append(JumpPlane(jp.axis, p, jp.jump))
        return out

    def sup_norm(self, region=None, n=64):
        """``||u||_inf`` (exact for catalog fields, sampled otherwise)."""
        if self.sup_bound is not None:
            return float(self.sup_bound)
        if region is None:
            lo, hi = self.domain.bounds()
        else:
            lo, hi = region.bounds()
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dimension)
        if isinstance(self.domain, Polygon):
            pts = pts[self.domain.contains(pts, strict=False)]
        return float(np.max(np.linalg.norm(self(pts), axis=-1)))

    def describe(self):
        return {"name": self.name, "dimension": self.dimension, "declared_class": self.declared_class,
                "divergence_free": self.divergence_free, "domain": self.domain.to_json()}


# --------------------------------------------------------------------------
# Analytic fields
# --------------------------------------------------------------------------


class AnalyticField(VelocityField):
    """Closed-form field, optionally with known gradient and jump planes."""

    def __init__(self, name, domain, evaluator, components=None, gradient=None, jumps=(),
                 declared_class=SMOOTH, divergence_free=False, sup_bound=None, params=None,
                 constant_gradient=None):
        self.name = name
        self.domain = domain
        self.dimension = domain.dimension
        self.components = self.dimension if components is None else components
        self._evaluator = evaluator
        self._gradient = gradient
        self.jumps = tuple(jumps)
        if len({j.axis for j in self.jumps}) > 1:
            raise ParameterError("all jump planes must be normal to the same axis")
        if declared_class not in DECLARED_CLASSES:
            raise ParameterError(f"unknown declared class {declared_class!r}")
        self.declared_class = declared_class
        self.divergence_free = bool(divergence_free)
        self.sup_bound = sup_bound
        self.params = dict(params or {})
        self.constant_gradient = None if constant_gradient is None else np.asarray(constant_gradient, float)
        # catalog jump fields are constant between their jump planes
        self.piecewise_constant = bool(self.jumps) and gradient is None

    def __repr__(self):
        return f"AnalyticField({self.name!r}, {self.params})"

    def _eval(self, x):
        return self._evaluator(x)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.constant_gradient is not None:
            return np.broadcast_to(self.constant_gradient, x.shape[:-1] + self.constant_gradient.shape).copy()
        if self._gradient is not None:
            if isinstance(self.domain, PeriodicBox):
                x = self.domain.wrap(x)
            return self._gradient(x)
        if self.jumps:
            # piecewise constant away from the jump set
            return np.zeros(x.shape[:-1] + (self.components, self.dimension))
        return super().gradient(x)

    def describe(self):
        out = super().describe()
        out["params"] = _jsonable(self.params)
        return out


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _shear_layer(side=2.0):
    dom = PeriodicBox(2, side)

    def ev(x):
        out = np.zeros(x.shape)
        out[..., 0] = sign(x[..., 1])
        return out

    # u = (sign y, 0): jump +2 at y = 0, jump -2 where the wrap brings y back to -side/2
    jumps = [JumpPlane(1, 0.0, (2.0, 0.0)), JumpPlane(1, -side / 2, (-2.0, 0.0))]
    return AnalyticField("shear_layer", dom, ev, jumps=jumps, declared_class=BV, divergence_free=True,
                         sup_bound=1.0, params={"side": side})


def _burgers_shock(side=2.0):
    dom = PeriodicBox(1, side)

    def ev(x):
        return -sign(x)

    jumps = [JumpPlane(0, 0.0, (-2.0,)), JumpPlane(0, -side / 2, (2.0,))]
    return AnalyticField("burgers_shock", dom, ev, jumps=jumps, declared_class=BV, divergence_free=False,
                         sup_bound=1.0, params={"side": side})


def _poly_stream():
    dom = Polygon.unit_square()

    def ev(p):
        x, y = p[..., 0], p[..., 1]
        return np.stack([x * (1 - x) * (1 - 2 * y), -(1 - 2 * x) * y * (1 - y)], axis=-1)

    def grad(p):
        x, y = p[..., 0], p[..., 1]
        g = np.empty(p.shape[:-1] + (2, 2))
        g[..., 0, 0] = (1 - 2 * x) * (1 - 2 * y)
        g[..., 0, 1] = -2 * x * (1 - x)
        g[..., 1, 0] = 2 * y * (1 - y)
        g[..., 1, 1] = -(1 - 2 * x) * (1 - 2 * y)
        return g

    # |u|^2 is maximised at the midpoints of the edges: |u| = 1/4
    return AnalyticField("poly_stream", dom, ev, gradient=grad, declared_class=SMOOTH, divergence_free=True,
                         sup_bound=0.25)


def _taylor_green():
    dom = PeriodicBox(2, 2 * math.pi, lower=0.0)

    def ev(p):
        x, y = p[..., 0], p[..., 1]
        return np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], axis=-1)

    def grad(p):
        x, y = p[..., 0], p[..., 1]
        g = np.empty(p.shape[:-1] + (2, 2))
        g[..., 0, 0] = np.cos(x) * np.cos(y)
        g[..., 0, 1] = -np.sin(x) * np.sin(y)
        g[..., 1, 0] = np.sin(x) * np.sin(y)
        g[..., 1, 1] = -np.cos(x) * np.cos(y)
        return g

    return AnalyticField("taylor_green", dom, ev, gradient=grad, declared_class=SMOOTH, divergence_free=True,
                         sup_bound=1.0)


def _linear(M, domain=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ParameterError("linear field matrix must be square")
    dom = domain or WholeSpace(M.shape[0])
    return AnalyticField("linear", dom, lambda x: x @ M.T, constant_gradient=M, declared_class=SMOOTH,
                         divergence_free=abs(np.trace(M)) <= 1e-14, params={"M": M.tolist()})


def _constant(c, domain=None):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    dom = domain or WholeSpace(len(c))

    def ev(x):
        return np.broadcast_to(c, x.shape[:-1] + c.shape).copy()

    return AnalyticField("constant", dom, ev, constant_gradient=np.zeros((len(c), dom.dimension)),
                         declared_class=SMOOTH, divergence_free=True, sup_bound=float(np.linalg.norm(c)),
                         params={"c": c.tolist()})


CATALOG = {
    "shear_layer": "u = (sign y, 0) on a periodic box of side L (default 2); divergence-free, BV and bounded",
    "burgers_shock": "u = -sign x on a periodic interval of length L (default 2); compressible, BV and bounded",
    "poly_stream": "u = (d2 psi, -d1 psi), psi = x(1-x)y(1-y) on the unit square; divergence-free, tangent",
    "taylor_green": "u = (sin x cos y, -cos x sin y) on the periodic box [0, 2 pi)^2; smooth",
    "linear": "u = M x on R^d (parameter M)",
    "constant": "u = c on R^d or on a supplied domain (parameter c)",
}


def catalog(name, **params):
    """Catalog field by name; see :data:`CATALOG`."""
    domain = params.pop("domain", None)
    if isinstance(domain, dict):
        domain = domain_from_json(domain)
    if name == "shear_layer":
        return _shear_layer(**params)
    if name == "burgers_shock":
        return _burgers_shock(**params)
    if name == "poly_stream":
        return _poly_stream(**params)
    if name == "taylor_green":
        return _taylor_green(**params)
    if name == "linear":
        return _linear(params.get("M"), domain)
    if name == "constant":
        return _constant(params.get("c"), domain)
    raise ParameterError(f"unknown catalog field {name!r}; known: {sorted(CATALOG)}")


# --------------------------------------------------------------------------
# Grid fields
# --------------------------------------------------------------------------


class GridField(VelocityField):
    """Cell-centred samples on a uniform grid, multilinear interpolation.

    ``values`` has shape ``shape + (components,)``; cell centres are at
    ``lower + spacing * (i + 1/2)``.  On periodic boxes the interpolation
    wraps around; elsewhere it extrapolates linearly from the outermost
    cells.
    """

    def __init__(self, domain, spacing, values, lower=None, name="grid", declared_class=UNCLASSIFIED,
                 divergence_free=False):
        values = np.asarray(values, dtype=float)
        self.domain = domain
        self.dimension = domain.dimension
        if values.ndim != self.dimension + 1:
            raise ParameterError("grid values must have shape grid_shape + (components,)")
        if not np.all(np.isfinite(values)):
            raise ParameterError("grid samples must be finite")
        spacing = float(spacing)
        if not spacing > 0:
            raise ParameterError("grid spacing must be positive")
        self.spacing = spacing
        self.values = values
        self.values.setflags(write=False)
        self.shape = values.shape[:-1]
        self.components = values.shape[-1]
        if lower is None:
            lower = domain.bounds()[0]
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (self.dimension,)).copy()
        self.name = name
        self.declared_class = declared_class
        self.divergence_free = bool(divergence_free)
        centres = [self.lower[i] + spacing * (np.arange(n) + 0.5) for i, n in enumerate(self.shape)]
        self.centres = centres
        if isinstance(domain, PeriodicBox):
            padded = values
            for ax in range(self.dimension):
                padded = np.concatenate([padded.take([-1], axis=ax), padded, padded.take([0], axis=ax)], axis=ax)
            coords = [np.concatenate([[c[0] - spacing], c, [c[-1] + spacing]]) for c in centres]
            self._interp = RegularGridInterpolator(coords, padded, method="linear")
        else:
            self._interp = RegularGridInterpolator(centres, values, method="linear", bounds_error=False,
                                                   fill_value=None)
        if self.divergence_free:
            res = self.divergence_residual()
            limit = DIV_TOL * self.max_abs / spacing
            if res > limit:
                raise ParameterError(f"declared divergence-free grid has discrete divergence {res:.3e} "
                                     f"above the tolerance {limit:.3e}")

    def __repr__(self):
        return f"GridField({self.name!r}, shape={self.shape}, spacing={self.spacing})"

    @property
    def max_abs(self):
        return float(np.max(np.linalg.norm(self.values, axis=-1)))

    def sup_norm(self, region=None, n=64):
        return self.max_abs

    def _eval(self, x):
        flat = x.reshape(-1, self.dimension)
        out = self._interp(flat)
        return out.reshape(x.shape[:-1] + (self.components,))

    def cell_centres(self):
        grids = np.meshgrid(*self.centres, indexing="ij")
        return np.stack(grids, axis=-1)

    def cell_gradients(self):
        """Centred-difference gradients ``G[..., j, i]`` at every cell (interior for non-periodic)."""
        h = self.spacing
        v = self.values
        g = np.empty(self.shape + (self.components, self.dimension))
        for i in range(self.dimension):
            if isinstance(self.domain, PeriodicBox):
                g[..., :, i] = (np.roll(v, -1, axis=i) - np.roll(v, 1, axis=i)) / (2 * h)
            else:
                g[..., :, i] = np.gradient(v, h, axis=i)
        return g

    def interior_mask(self):
        mask = np.ones(self.shape, dtype=bool)
        if isinstance(self.domain, PeriodicBox):
            return mask
        for ax in range(self.dimension):
            idx = [slice(None)] * self.dimension
            idx[ax] = [0, -1]
            mask[tuple(idx)] = False
        return mask

    def divergence_residual(self):
        if self.components != self.dimension:
            return math.inf
        g = self.cell_gradients()
        div = np.trace(g, axis1=-2, axis2=-1)
        return float(np.max(np.abs(div[self.interior_mask()]))) if div.size else 0.0

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = self.cell_gradients()
        coords = self.centres
        flat = g.reshape(self.shape + (-1,))
        interp = RegularGridInterpolator(coords, flat, method="nearest", bounds_error=False, fill_value=None)
        if isinstance(self.domain, PeriodicBox):
            x = self.domain.wrap(x)
        out = interp(x.reshape(-1, self.dimension))
        return out.reshape(x.shape[:-1] + (self.components, self.dimension))

    def describe(self):
        out = super().describe()
        out.update({"spacing": self.spacing, "shape": list(self.shape)})
        return out


def sample(field, spacing, name=None, declared_class=None, divergence_free=None):
    """Sample an analytic field at the cell centres of its (bounded) domain."""
    dom = field.domain
    if isinstance(dom, WholeSpace):
        raise ParameterError("cannot sample a field on all of R^d; give it a bounded domain")
    lo, hi = dom.bounds()
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = np.rint((hi - lo) / spacing).astype(int)
    if np.any(np.abs(n * spacing - (hi - lo)) > 1e-9 * np.max(hi - lo)):
        raise ParameterError("spacing must divide the domain side lengths")
    centres = [lo[i] + spacing * (np.arange(n[i]) + 0.5) for i in range(dom.dimension)]
    pts = np.stack(np.meshgrid(*centres, indexing="ij"), axis=-1)
    vals = field._eval(pts)
    return GridField(dom, spacing, vals, lower=lo, name=name or f"{field.name}_grid",
                     declared_class=field.declared_class if declared_class is None else declared_class,
                     divergence_free=field.divergence_free if divergence_free is None else divergence_free)


# -- grid file formats --------------------------------------------------------


def write_grid(field, path):
    """Write a JSON header plus a sibling little-endian float64 binary file."""
    path = Path(path)
    data_path = path.with_suffix(".bin")
    header = {
        "dimension": field.dimension,
        "side": [float(n * field.spacing) for n in field.shape],
        "spacing": field.spacing,
        "components": field.components,
        "shape": list(field.shape),
        "lower": field.lower.tolist(),
        "domain": field.domain.to_json(),
        "declared_class": field.declared_class,
        "divergence_free": field.divergence_free,
        "data": data_path.name,
    }
    blocks = [np.ascontiguousarray(field.values[..., c]).astype("<f8").ravel() for c in range(field.components)]
    data_path.write_bytes(np.concatenate(blocks).tobytes())
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def read_grid(path):
    """Read a grid written by :func:`write_grid` (or a CSV, by extension)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"grid file not found: {path}")
    if path.suffix.lower() == ".csv":
        return read_grid_csv(path)
    header = json.loads(path.read_text())
    shape = tuple(header["shape"])
    comps = int(header["components"])
    data_path = path.parent / header["data"]
    if not data_path.exists():
        raise FileNotFoundError(f"grid data file not found: {data_path}")
    raw = np.frombuffer(data_path.read_bytes(), dtype="<f8")
    n = int(np.prod(shape))
    if raw.size != n * comps:
        raise ParameterError(f"grid data has {raw.size} values, expected {n * comps}")
    values = np.stack([raw[c * n:(c + 1) * n].reshape(shape) for c in range(comps)], axis=-1)
    dom = domain_from_json(header["domain"]) if "domain" in header else _box_domain(header)
    return GridField(dom, header["spacing"], values, lower=header.get("lower"),
                     name=path.stem, declared_class=header.get("declared_class", UNCLASSIFIED),
                     divergence_free=header.get("divergence_free", False))


def _box_domain(header):
    side = header["side"]
    side = side[0] if isinstance(side, list) else side
    return PeriodicBox(header["dimension"], side, header.get("lower"))


def write_grid_csv(field, path):
    pts = field.cell_centres().reshape(-1, field.dimension)
    vals = field.values.reshape(-1, field.components)
    names = [f"x{i + 1}" for i in range(field.dimension)] + [f"u{j + 1}" for j in range(field.components)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for p, v in zip(pts, vals):
            w.writerow([repr(float(a)) for a in p] + [repr(float(b)) for b in v])
    return Path(path)


def read_grid_csv(path, domain=None, divergence_free=False):
    """CSV variant: header ``x1..xd,u1..uk``, one row per cell centre."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], np.array(rows[1:], dtype=float)
    d = sum(1 for h in head if h.startswith("x"))
    coords = [np.unique(body[:, i]) for i in range(d)]
    spacing = float(coords[0][1] - coords[0][0]) if len(coords[0]) > 1 else 1.0
    shape = tuple(len(c) for c in coords)
    idx = [np.rint((body[:, i] - coords[i][0]) / spacing).astype(int) for i in range(d)]
    values = np.empty(shape + (body.shape[1] - d,))
    values[tuple(idx)] = body[:, d:]
    lower = np.array([c[0] - spacing / 2 for c in coords])
    if domain is None:
        domain = PeriodicBox(d, shape[0] * spacing, lower)
    return GridField(domain, spacing, values, lower=lower, name=Path(path).stem,
                     divergence_free=divergence_free)


# --------------------------------------------------------------------------
# Increments and mollification
# --------------------------------------------------------------------------


def increment(u, x, xi):
    """``delta_xi u(x) = u(x + xi) - u(x)``."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if isinstance(u.domain, Polygon):
        if not np.all(u.domain.contains(x + xi)) or not np.all(u.domain.contains(x)):
            raise DomainError("increment leaves the polygon interior")
    return u(x + xi) - u(x)


@dataclass(frozen=True)
class ZRule:
    """Resolution of z-integrals over the unit ball.

    Jump fields use chords along the jump axis (``n_rows`` midpoint rows,
    ``n_panels`` Gauss panels of ``order`` nodes per piece); smooth fields
    with radial kernels use the polar rule (``n_radial`` x ``n_angles``).
    """

    n_rows: int | None = None
    n_panels: int = 2
    order: int = 8
    n_radial: int = 32
    n_angles: int = 16


DEFAULT_ZRULE = ZRule()


def jump_breaks(u, xa, eps):
    """Per-point z-coordinates along the jump axis where ``u(x + eps z)`` jumps.

    Returns an ``(m, K)`` array; entries equal to 1 mean "no jump".
    """
    lo, hi = float(np.min(xa)) - eps, float(np.max(xa)) + eps
    planes = np.array([jp.position for jp in u.jump_images(lo, hi)])
    if planes.size == 0:
        return np.ones((len(xa), 1))
    b = (planes[None, :] - xa[:, None]) / eps
    b = np.where(np.abs(b) < 1, b, 1.0)
    b = np.sort(b, axis=1)
    k = max(1, int(np.max(np.sum(b < 1, axis=1))))
    return b[:, :k]


def z_groups(u, kernel, eps, x, zrule=DEFAULT_ZRULE, skip_jump_free=False):
    """Group the points ``x`` by shared z-rule; yields ``(indices, nodes, weights)``.

    For jump fields the chord rule depends on x only through its row of
    breaks, so points with equal rows share nodes.  With ``skip_jump_free``
    groups of a piecewise-constant field that see no jump are omitted.
    """
    d = u.dimension
    kb = tuple(getattr(kernel, "profile_breaks", ()))
    # in one dimension |z| is the chord coordinate, so profile breaks are planar cuts
    extra = np.array([s * b for b in kb for s in (-1.0, 1.0)]) if d == 1 else np.empty(0)
    if not u.has_jumps:
        if kernel.is_radial and d > 1:
            nodes, w = polar_ball_rule(d, zrule.n_radial, zrule.n_angles, kb)
        elif extra.size:
            nodes, w = chord_ball_rule(d, 0, extra[None], zrule.n_rows, zrule.n_panels, zrule.order)
            nodes, w = nodes[0], w[0]
        else:
            nodes, w = chord_ball_rule(d, d - 1, None, zrule.n_rows, zrule.n_panels, zrule.order)
        yield np.arange(len(x)), nodes, w
        return
    axis = u.jump_axis
    br = jump_breaks(u, x[:, axis], eps)
    rows, inv = np.unique(br, axis=0, return_inverse=True)
    inv = inv.ravel()
    cuts = rows
    if extra.size:
        cuts = np.concatenate([rows, np.broadcast_to(extra, (len(rows), extra.size))], axis=1)
    nodes_u, w_u = chord_ball_rule(d, axis, cuts, zrule.n_rows, zrule.n_panels, zrule.order)
    order = np.argsort(inv, kind="stable")
    starts = np.searchsorted(inv[order], np.arange(len(rows) + 1))
    for r in range(len(rows)):
        if skip_jump_free and u.piecewise_constant and np.all(rows[r] >= 1.0):
            continue
        idx = order[starts[r]:starts[r + 1]]
        if idx.size:
            yield idx, nodes_u[r], w_u[r]


CHUNK_NODES = 2_000_000


def _chunks(m, per_point):
    size = max(1, CHUNK_NODES // max(per_point, 1))
    for s in range(0, m, size):
        yield slice(s, min(m, s + size))


class MollifiedField(VelocityField):
    """``u_eps(x) = int rho(z) u(x + eps z) dz`` evaluated lazily by quadrature."""

    def __init__(self, u, kernel, eps, zrule=DEFAULT_ZRULE):
        eps = float(eps)
        if not eps > 0:
            raise ParameterError("mollification scale must be positive")
        if eps >= u.domain.half_width:
            raise ParameterError(f"mollification scale {eps} exceeds the domain half-width")
        self.u = u
        self.kernel = kernel
        self.eps = eps
        self.zrule = zrule
        self.domain = u.domain
        self.dimension = u.dimension
        self.components = u.components
        self.declared_class = SMOOTH
        self.divergence_free = u.divergence_free
        self.name = f"{u.name}_mollified"
        self.sup_bound = u.sup_bound

    def _check(self, x):
        if isinstance(self.domain, Polygon):
            if np.any(self.domain.distance(x) <= self.eps) or not np.all(self.domain.contains(x)):
                raise DomainError("mollified field is only defined at distance > eps from the boundary")

    def moments(self, x, want=("value",)):
        """``u_eps``, ``(u (x) u)_eps`` and ``grad u_eps`` at x (as requested).

        ``grad`` follows ``G[..., j, i] = d_i u^j_eps = -(1/eps) int d_i rho(z) u^j(x + eps z) dz``.
        """
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        x = x.reshape(-1, self.dimension)
        self._check(x)
        k, d = self.components, self.dimension
        out = {}
        if "value" in want:
            out["value"] = np.zeros((len(x), k))
        if "product" in want:
            out["product"] = np.zeros((len(x), k, k))
        if "grad" in want:
            out["grad"] = np.zeros((len(x), k, d))
        for idx, nodes, w in z_groups(self.u, self.kernel, self.eps, x, self.zrule):
            rho = self.kernel(nodes) * w
            # discrete renormalisation: constants are reproduced to rounding
            rho = rho / np.sum(rho)
            grad = self.kernel.gradient(nodes) * w[:, None] if "grad" in want else None
            for sl in _chunks(len(idx), len(w)):
                pts = idx[sl]
                s = self.u(x[pts, None, :] + self.eps * nodes[None])
                if "value" in want:
                    out["value"][pts] = np.einsum("q,pqk->pk", rho, s)
                if "product" in want:
                    out["product"][pts] = np.einsum("q,pqj,pqk->pjk", rho, s, s)
                if "grad" in want:
                    out["grad"][pts] = -np.einsum("qi,pqj->pji", grad, s) / self.eps
        return {key: v.reshape(shape + v.shape[1:]) for key, v in out.items()}

    def __call__(self, x):
        return self.moments(x, ("value",))["value"]

    def _eval(self, x):
        return self(x)

    def product(self, x):
        return self.moments(x, ("product",))["product"]

    def gradient(self, x):
        return self.moments(x, ("grad",))["grad"]

    def to_grid(self, spacing):
        if not isinstance(self.domain, PeriodicBox):
            raise ParameterError("grid sampling of a mollified field needs a periodic box")
        lo, hi = self.domain.bounds()
        n = np.rint((hi - lo) / spacing).astype(int)
        centres = [lo[i] + spacing * (np.arange(n[i]) + 0.5) for i in range(self.dimension)]
        pts = np.stack(np.meshgrid(*centres, indexing="ij"), axis=-1)
        vals = self(pts)
        return GridField(self.domain, spacing, vals, lower=lo, name=self.name, declared_class=SMOOTH)


def mollify(u, kernel, eps, spacing=None, zrule=DEFAULT_ZRULE):
    """Mollify ``u`` at scale ``eps``; returns a lazy field or, with ``spacing``, a grid."""
    m = MollifiedField(u, kernel, eps, zrule)
    return m if spacing is None else m.to_grid(spacing)


# --------------------------------------------------------------------------
# Spatial quadrature over regions
# --------------------------------------------------------------------------


def region_rule(u, region, n=256, breaks=(), n_panels=64, order=4):
    """Spatial rule over a (possibly thickened) box for the field ``u``.

    Jump fields use composite Gauss panels along the jump axis, cut at the
    jump positions and at any extra ``breaks``; other axes (and fields
    without jumps) use the midpoint rule with ``n`` points per axis.
    """
    lo, hi = region.bounds()
    d = region.dimension
    axes = []
    for ax in range(d):
        if u.has_jumps and ax == u.jump_axis:
            cuts = [jp.position for jp in u.jump_images(lo[ax], hi[ax])] + list(breaks)
            axes.append(gauss_panels(lo[ax], hi[ax], n_panels, order, cuts))
        else:
            axes.append(midpoint_1d(lo[ax], hi[ax], n))
    nodes, weights = tensor_rule(axes)
    if region.radius > 0:
        keep = region.contains(nodes)
        nodes, weights = nodes[keep], weights[keep]
    return nodes, weights


def region_integral(u, region, f, n=256, breaks=()):
    nodes, weights = region_rule(u, region, n, breaks)
    return float(weights @ f(nodes))


# --------------------------------------------------------------------------
# Variation measures and increment estimates
# --------------------------------------------------------------------------


def _sym(J, n):
    A = np.outer(J, n)
    return 0.5 * (A + A.T)


def _section_atoms(region, axis, position, n=64):
    """Midpoint atoms covering the section ``{x_axis = position}`` of the region."""
    d = region.dimension
    total = region.section_measure(axis, position)
    if total == 0.0:
        return np.zeros((0, d)), np.zeros(0)
    if d == 1:
        return np.array([[position]]), np.array([1.0])
    lo, hi = region.bounds()
    others = [k for k in range(d) if k != axis]
    axes = [midpoint_1d(lo[k], hi[k], n) for k in others]
    pts, w = tensor_rule(axes)
    full = np.empty((len(pts), d))
    full[:, others] = pts
    full[:, axis] = position
    keep = region.contains(full)
    full, w = full[keep], w[keep]
    if w.sum() == 0:
        return np.zeros((0, d)), np.zeros(0)
    return full, w * (total / w.sum())


def _frobenius(G):
    return np.sqrt(np.sum(G * G, axis=(-2, -1)))


def total_variation(u, region, label=LABEL_GRAD, z=None, n=None, closed=False):
    """Discrete variation measure of ``u`` over the open region, or its closure.

    ``closed`` decides whether jump planes lying exactly on the region
    boundary are counted.  Piecewise-constant catalog fields are integrated exactly over their
    jump planes; smooth analytic fields use the closed-form gradient on a
    midpoint grid; grid fields use centred differences times cell volume.
    """
    if label not in (LABEL_GRAD, LABEL_SYM, LABEL_DIR):
        raise ParameterError(f"unknown variation label {label!r}")
    if label == LABEL_DIR:
        if z is None:
            raise ParameterError("directional variation needs a direction z")
        z = np.atleast_1d(np.asarray(z, dtype=float))
    d = u.dimension

    def density(G):
        if label == LABEL_GRAD:
            return _frobenius(G)
        if label == LABEL_SYM:
            return _frobenius(0.5 * (G + np.swapaxes(G, -1, -2)))
        return np.linalg.norm(G @ z, axis=-1)

    if u.has_jumps and isinstance(u, AnalyticField):
        lo, hi = region.bounds()
        a = u.jump_axis
        locs, wts, mats = [], [], []
        for jp in u.jump_images(lo[a], hi[a], closed):
            nvec = np.zeros(d)
            nvec[jp.axis] = 1.0
            J = np.asarray(jp.jump, dtype=float)
            G = np.outer(J, nvec)
            dens = float(density(G[None])[0])
            p, w = _section_atoms(region, jp.axis, jp.position)
            if len(w) == 0:
                continue
            locs.append(p)
            wts.append(w * dens)
            mats.append(np.broadcast_to(G / np.linalg.norm(G), (len(w),) + G.shape))
        if not locs:
            return VariationMeasure(np.zeros((0, d)), np.zeros(0), label, np.zeros((0, u.components, d)))
        return VariationMeasure(np.concatenate(locs), np.concatenate(wts), label, np.concatenate(mats))

    if isinstance(u, AnalyticField) and u.constant_gradient is not None:
        G = u.constant_gradient
        dens = float(density(G[None])[0])
        pts, w = _cells(region, n or 32)
        w = w * (region.volume / w.sum())
        fro = np.linalg.norm(G)
        M = G / fro if fro > 0 else G
        weights = w * dens
        return VariationMeasure(pts, weights, label, np.broadcast_to(M, (len(w),) + G.shape))

    if isinstance(u, GridField):
        G = u.cell_gradients().reshape(-1, u.components, d)
        pts = u.cell_centres().reshape(-1, d)
        keep = region.contains(pts) & u.interior_mask().ravel()
        G, pts = G[keep], pts[keep]
        w = np.full(len(pts), u.spacing**d)
    else:
        pts, w = _cells(region, n or {1: 1024, 2: 256, 3: 48}[d])
        w = w * (region.volume / w.sum())
        G = u.gradient(pts)
    dens = density(G)
    fro = _frobenius(G)
    keep = fro > 1e-12 * max(float(np.max(fro)) if fro.size else 0.0, 1e-300)
    M = np.zeros_like(G)
    M[keep] = G[keep] / fro[keep][:, None, None]
    return VariationMeasure(pts[keep], (w * dens)[keep], label, M[keep])


def _cells(region, n):
    lo, hi = region.bounds()
    axes = [midpoint_1d(a, b, n) for a, b in zip(lo, hi)]
    pts, w = tensor_rule(axes)
    if region.radius > 0:
        keep = region.contains(pts)
        pts, w = pts[keep], w[keep]
    return pts, w


@dataclass
class IncrementReport:
    lhs: float
    rhs: float
    passed: bool
    lhs_bd: float
    rhs_bd: float
    passed_bd: bool
    tol: float

    def to_json(self):
        return dict(self.__dict__)


def verify_increment_bound(u, region, z, eps, tol=0.01, n=256):
    """Check the BV and BD increment estimates on the region.

    ``lhs = int_A |delta_{eps z} u|`` against ``eps |z . grad u|((A)_eps)``
    and ``int_A |z . delta_{eps z} u|`` against ``eps |z|^2 |sym grad u|((A)_eps)``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if np.linalg.norm(z) > 1 + 1e-12:
        raise ParameterError("increment direction must satisfy |z| <= 1")
    if not isinstance(region, Box):
        raise ParameterError("increment estimates are evaluated on box regions")
    shift = eps * z
    extra = []
    if u.has_jumps:
        lo, hi = region.bounds()
        a = u.jump_axis
        extra = [jp.position - shift[a] for jp in u.jump_images(lo[a] - eps, hi[a] + eps)]
    nodes, weights = region_rule(u, region, n, extra)
    if isinstance(u.domain, Polygon):
        if not np.all(u.domain.contains(nodes + shift)):
            raise DomainError("shifted region leaves the polygon")
    delta = u(nodes + shift) - u(nodes)
    lhs = float(weights @ np.linalg.norm(delta, axis=-1))
    big = region.expand(eps)
    rhs = eps * total_variation(u, big, LABEL_DIR, z=z, closed=True).total
    report = {"lhs": lhs, "rhs": rhs, "passed": lhs <= rhs * (1 + tol) + 1e-12}
    if u.components == u.dimension:
        lhs_bd = float(weights @ np.abs(delta @ z))
        rhs_bd = eps * float(z @ z) * total_variation(u, big, LABEL_SYM, closed=True).total
        ok_bd = lhs_bd <= rhs_bd * (1 + tol) + 1e-12
    else:
        lhs_bd, rhs_bd, ok_bd = float("nan"), float("nan"), True
    return IncrementReport(lhs, rhs, bool(report["passed"]), lhs_bd, rhs_bd, bool(ok_bd), tol)
