"""Mollified energy flux, its pairings, directional flux tables and Hoelder moduli.

``D_eps[u](x) = 1/(4 eps) int grad rho(z) . delta u |delta u|^2 dz`` with
``delta u = u(x + eps z) - u(x)``.  The z-integral uses chord rules along
the jump axis of piecewise-constant fields, cut at the per-point jump
crossing, so the discontinuous integrand is integrated piecewise smooth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .domains import Box, PeriodicBox, Polygon, WholeSpace
from .errors import DomainError, KernelValidationError, ParameterError
from .fields import (
    DEFAULT_ZRULE,
    LABEL_SYM,
    MollifiedField,
    ZRule,
    _chunks,
    jump_breaks,
    region_rule,
    total_variation,
    z_groups,
)
from .kernels import sphere_area, validate
from .quadrature import midpoint_1d, sphere_rule, tensor_rule


# --------------------------------------------------------------------------
# Test functions
# --------------------------------------------------------------------------


class TestFunction:
    """``phi(x) = (1 - |x - c|^2 / r^2)_+^k``: nonnegative, max 1, support the closed ball."""

    __test__ = False  # not a pytest class

    def __init__(self, center, radius, k=2, domain=None):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if not self.radius > 0:
            raise ParameterError("test function radius must be positive")
        if int(k) != k or k < 1:
            raise ParameterError("test function smoothness order must be an integer >= 1")
        self.k = int(k)
        self.dimension = len(self.center)
        self.boundary_gap = math.inf
        if isinstance(domain, Polygon):
            gap = float(domain.distance(self.center)) - self.radius
            if gap <= 0 or not domain.contains(self.center):
                raise DomainError("test function support must lie inside the polygon")
            self.boundary_gap = gap

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        s = 1 - np.sum((x - self.center) ** 2, axis=-1) / self.radius**2
        return np.clip(s, 0, None) ** self.k

    @property
    def sup(self):
        return 1.0

    def support_box(self):
        return Box(self.center - self.radius, self.center + self.radius)

    def describe(self):
        return {"center": self.center.tolist(), "radius": self.radius, "k": self.k}

    def __repr__(self):
        return f"TestFunction({self.center.tolist()}, {self.radius}, k={self.k})"


# --------------------------------------------------------------------------
# D_eps
# --------------------------------------------------------------------------


def require_valid(kernel):
    """Validate once per kernel object; raise with the report on failure."""
    report = getattr(kernel, "_validation", None)
    if report is None:
        report = validate(kernel)
        try:
            kernel._validation = report
        except AttributeError:
            pass
    if not report.passed:
        raise KernelValidationError("kernel failed validation and cannot be used for flux", report)
    if kernel.support_radius > 1 + 1e-12:
        raise KernelValidationError("flux kernels must be supported in the unit ball", report)
    return report


def _check_region(u, x, eps):
    if isinstance(u.domain, Polygon):
        if np.any(u.domain.distance(x) <= eps) or not np.all(u.domain.contains(x)):
            raise DomainError("flux sample points must lie at distance > eps from the boundary")


def _check_eps(u, eps):
    eps = float(eps)
    if not eps > 0:
        raise ParameterError("eps must be positive")
    if eps >= u.domain.half_width:
        raise ParameterError(f"eps = {eps} exceeds the domain half-width {u.domain.half_width}")
    return eps


def _z_integral(u, kernel, eps, x, integrand, zrule=DEFAULT_ZRULE):
    """``sum_q w_q integrand(grad rho(z_q), delta_q)`` at every x (chunked)."""
    x = np.asarray(x, dtype=float).reshape(-1, u.dimension)
    ux = u(x)
    result = np.zeros(len(x))
    for idx, nodes, w in z_groups(u, kernel, eps, x, zrule, skip_jump_free=True):
        g = kernel.gradient(nodes)
        for sl in _chunks(len(idx), len(w)):
            pts = idx[sl]
            delta = u(x[pts, None, :] + eps * nodes[None]) - ux[pts, None, :]
            result[pts] = integrand(g[None], delta) @ w
    return result


def _dr_integrand(g, delta):
    return np.sum(g * delta, axis=-1) * np.sum(delta * delta, axis=-1)


def D_eps_field(u, kernel, eps, x, zrule=DEFAULT_ZRULE):
    """Mollified flux ``D_eps[u]`` at the sample points ``x`` (shape (m, d))."""
    eps = _check_eps(u, eps)
    require_valid(kernel)
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    x = x.reshape(-1, u.dimension)
    _check_region(u, x, eps)
    return (_z_integral(u, kernel, eps, x, _dr_integrand, zrule) / (4 * eps)).reshape(shape)


def _band_breaks(u, region, eps, kernel=None):
    """Extra spatial cuts resolving the eps-band around each jump plane."""
    if not u.has_jumps:
        return []
    lo, hi = region.bounds()
    a = u.jump_axis
    offsets = [j / 4 for j in range(-4, 5)]
    if kernel is not None and kernel.dimension == 1:
        offsets += [s * b for b in kernel.profile_breaks for s in (-1, 1)]
    return [jp.position + t * eps for jp in u.jump_images(lo[a] - eps, hi[a] + eps) for t in offsets]


@dataclass
class FluxTotal:
    signed: float
    absolute: float
    eps: float

    def to_json(self):
        return {"signed": self.signed, "absolute": self.absolute, "eps": self.eps}


def total_flux(u, kernel, eps, region, n=256, zrule=DEFAULT_ZRULE):
    """Signed and absolute integrals of ``D_eps[u]`` over a box region."""
    nodes, w = region_rule(u, region, n, _band_breaks(u, region, eps, kernel))
    D = D_eps_field(u, kernel, eps, nodes, zrule)
    return FluxTotal(float(w @ D), float(w @ np.abs(D)), float(eps))


def pairing(u, kernel, eps, phi, n=256, zrule=DEFAULT_ZRULE):
    """``<D_eps[u], phi>``."""
    region = phi.support_box()
    nodes, w = region_rule(u, region, n, _band_breaks(u, region, eps, kernel))
    wphi = w * phi(nodes)
    keep = wphi > 0
    D = D_eps_field(u, kernel, eps, nodes[keep], zrule)
    return float(wphi[keep] @ D)


# --------------------------------------------------------------------------
# Convergence in eps
# --------------------------------------------------------------------------


@dataclass
class FluxReport:
    kernel: dict
    eps: list
    totals: list
    absolute: list
    pairings: list | None
    differences: list
    cauchy_residuals: list
    order: float | None
    extrapolate: float
    cauchy: bool
    field: str = ""

    def to_json(self):
        return dict(self.__dict__)


def richardson(eps, values):
    """Extrapolate ``values(eps) -> eps = 0`` from the last three entries.

    Returns ``(limit, order)``.  The order is estimated from the ratio of
    successive differences; nearly constant sequences return the last value.
    """
    v = np.asarray(values, dtype=float)
    e = np.asarray(eps, dtype=float)
    if len(v) < 2:
        return float(v[-1]), None
    scale = max(float(np.max(np.abs(v))), 1e-300)
    d1 = v[-1] - v[-2]
    if abs(d1) <= 1e-12 * scale:
        return float(v[-1]), None
    if len(v) >= 3:
        d0 = v[-2] - v[-3]
        ratio = e[-2] / e[-1]
        if abs(d0) > 1e-12 * scale and d0 * d1 > 0 and abs(d1) < abs(d0):
            p = math.log(abs(d0 / d1)) / math.log(e[-3] / e[-2])
            p = min(max(p, 0.5), 6.0)
            return float(v[-1] + d1 / (ratio**p - 1)), float(p)
    return float(v[-1]), None


def flux_convergence(u, kernel, eps_list, region=None, phi=None, n=256, zrule=DEFAULT_ZRULE):
    """Totals per eps, successive differences and a Richardson extrapolate."""
    eps = [_check_eps(u, e) for e in eps_list]
    if len(eps) < 4:
        raise ParameterError("flux convergence needs at least 4 scales")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ParameterError("eps list must be strictly decreasing")
    if region is None and phi is None:
        raise ParameterError("give a region or a test function")
    totals, absolute, pairs = [], [], []
    for e in eps:
        if region is not None:
            t = total_flux(u, kernel, e, region, n, zrule)
            totals.append(t.signed)
            absolute.append(t.absolute)
        if phi is not None:
            pairs.append(pairing(u, kernel, e, phi, n, zrule))
    seq = totals if region is not None else pairs
    diffs = [b - a for a, b in zip(seq, seq[1:])]
    limit, order = richardson(eps, seq)
    resid = [abs(x) for x in diffs[-2:]]
    scale = max(max(abs(s) for s in seq), 1e-12)
    cauchy = resid[-1] <= resid[0] + 1e-9 * scale or resid[-1] <= 1e-9 * scale
    return FluxReport(kernel.descriptor(), eps, totals or pairs, absolute or [abs(p) for p in pairs],
                      pairs or None, diffs, resid, order, limit, bool(cauchy), getattr(u, "name", ""))


# --------------------------------------------------------------------------
# Directional flux
# --------------------------------------------------------------------------


def default_z_grid(d, n_radii=17, n_angles=32):
    """Symmetric z grid on the closed unit ball, with ``z = 0`` first.

    d = 1: 33 equispaced points; d = 2: ``n_radii`` radii (including 0)
    times ``n_angles`` angles; d = 3: Cartesian 17^3 lattice.
    """
    if d == 1:
        return {"kind": "line", "points": np.linspace(-1, 1, 33)[:, None]}
    if d == 2:
        r = np.linspace(0.0, 1.0, n_radii)
        th = 2 * np.pi * np.arange(n_angles) / n_angles
        return {"kind": "polar", "radii": r, "angles": th}
    if d == 3:
        g = np.linspace(-1, 1, 17)
        return {"kind": "cartesian", "axes": [g, g, g]}
    raise ParameterError(f"unsupported dimension {d}")


def _grid_points(grid):
    kind = grid["kind"]
    if kind == "line":
        return grid["points"]
    if kind == "polar":
        r, th = grid["radii"], grid["angles"]
        R, TH = np.meshgrid(r, th, indexing="ij")
        return np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1).reshape(-1, 2)
    if kind == "cartesian":
        g = np.meshgrid(*grid["axes"], indexing="ij")
        return np.stack(g, axis=-1).reshape(-1, 3)
    raise ParameterError(f"unknown z grid kind {kind!r}")


def _T_vectors(u, x, ux, shift, eps):
    delta = u(x + shift) - ux
    return delta * np.sum(delta * delta, axis=-1, keepdims=True) / eps


def _support_rule(u, phi, eps, shifts_a):
    """Spatial rule over supp(phi), cut at the jumps and at ``p - shift``."""
    region = phi.support_box()
    extra = []
    if u.has_jumps:
        lo, hi = region.bounds()
        a = u.jump_axis
        planes = [jp.position for jp in u.jump_images(lo[a] - 1, hi[a] + 1)]
        extra = [p - s for p in planes for s in shifts_a]
    return region_rule(u, region, 256, extra)


@dataclass
class DirectionalFluxTable:
    grid: dict
    z: np.ndarray
    V: np.ndarray
    eps: float
    phi: dict
    odd_residual: float
    field: str = ""
    _interp: object = dc_field(default=None, repr=False)

    @property
    def dimension(self):
        return self.z.shape[1]

    def __call__(self, z):
        """Linear interpolation of V at arbitrary points of the closed unit ball."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        kind = self.grid["kind"]
        if kind == "line":
            return np.stack([np.interp(z[:, 0], self.z[:, 0], self.V[:, j]) for j in range(self.V.shape[1])], -1)
        if kind == "polar":
            r, th = self.grid["radii"], self.grid["angles"]
            if self._interp is None:
                Vg = self.V.reshape(len(r), len(th), -1)
                Vg = np.concatenate([Vg, Vg[:, :1]], axis=1)
                self._interp = RegularGridInterpolator((r, np.append(th, 2 * np.pi)), Vg)
            rr = np.minimum(np.linalg.norm(z, axis=1), 1.0)
            tt = np.mod(np.arctan2(z[:, 1], z[:, 0]), 2 * np.pi)
            return self._interp(np.stack([rr, tt], axis=1))
        if self._interp is None:
            axes = self.grid["axes"]
            Vg = self.V.reshape(tuple(len(a) for a in axes) + (-1,))
            self._interp = RegularGridInterpolator(tuple(axes), Vg)
        return self._interp(np.clip(z, -1, 1))

    def rows(self):
        return [(tuple(float(c) for c in zz), tuple(float(c) for c in v)) for zz, v in zip(self.z, self.V)]


def directional_flux(u, eps, phi, grid=None):
    """``V(z) = int T_{eps,z}(x) phi(x) dx`` with ``T = delta |delta|^2 / eps``."""
    eps = _check_eps(u, eps)
    d = u.dimension
    grid = grid or default_z_grid(d)
    zs = _grid_points(grid)
    if d == 3:
        keep = np.linalg.norm(zs, axis=1) <= 1 + math.sqrt(3) / 8
    else:
        keep = np.ones(len(zs), dtype=bool)
    V = np.zeros((len(zs), u.components))
    for i, z in enumerate(zs):
        if not keep[i] or not np.any(z):
            continue  # V(0) = 0 exactly: the increment is empty
        shift = eps * z
        a = u.jump_axis if u.has_jumps else 0
        nodes, w = _support_rule(u, phi, eps, [shift[a]])
        wphi = w * phi(nodes)
        m = wphi > 0
        x = nodes[m]
        _check_region(u, np.concatenate([x, x + shift]), 0.0)
        V[i] = wphi[m] @ _T_vectors(u, x, u(x), shift, eps)
    # odd residual over the symmetric grid
    key = {tuple(np.round(z, 12)): k for k, z in enumerate(zs)}
    odd = 0.0
    for k, z in enumerate(zs):
        j = key.get(tuple(np.round(-z, 12)))
        if j is not None and keep[k] and keep[j]:
            odd = max(odd, float(np.max(np.abs(V[k] + V[j]))))
    return DirectionalFluxTable(grid, zs, V, eps, phi.describe(), odd, getattr(u, "name", ""))


def reconstruct_pairing(table, kernel):
    """``(1/4) int grad rho(z) . V(z) dz`` from a directional flux table."""
    if table.dimension != kernel.dimension:
        raise ParameterError("table and kernel dimensions differ")
    val = kernel.integrate(lambda z: np.sum(kernel.gradient(z) * table(z), axis=-1), estimate_error=False)
    return 0.25 * float(val.value)


def reconstruct_scale(table, kernel):
    """``(1/4) int |grad rho| |V| dz``: natural magnitude for comparing pairings."""
    val = kernel.integrate(lambda z: np.linalg.norm(kernel.gradient(z), axis=-1) * np.linalg.norm(table(z), axis=-1),
                           estimate_error=False)
    return 0.25 * float(val.value)


def _sphere_flux(table, r, n_angles=256):
    """``int_{dB_r} V . n_in dH^{d-1}`` (inward normal)."""
    d = table.dimension
    if d == 1:
        pts = np.array([[r], [-r]])
        V = table(pts)
        return float(-(V[0, 0] - V[1, 0]))
    dirs, w = sphere_rule(d, n_angles)
    V = table(r * dirs)
    return float(-(r ** (d - 1)) * np.sum(w * np.sum(V * dirs, axis=1)))


def radial_formula(table, kernel, n_r=400):
    """``-(1/4) int_0^1 rho_rad'(r) (int_{dB_r} V . n_in) dr`` for radial kernels."""
    if not kernel.is_radial:
        raise ParameterError("the radial formula needs a radial kernel")
    r, w = midpoint_1d(0.0, 1.0, n_r)
    vals = np.array([_sphere_flux(table, ri) for ri in r])
    return float(-0.25 * np.sum(w * kernel.profile_derivative(r) * vals))


def indicator_formula(table):
    """Limit of the radial formula for ``rho -> 1_{B_1} / omega_d``."""
    d = table.dimension
    omega = math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    return _sphere_flux(table, 1.0) / (4 * omega)


# --------------------------------------------------------------------------
# Hoelder continuity in z
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HolderExponents:
    p: float
    p_conj: float
    alpha: "Fraction"
    beta: "Fraction"


def holder_exponents(p):
    """``alpha_p = max(1/p, 1/(2p'))`` and ``beta_p = min(1/p', (p+1)/(2p))``."""
    p = float(p)
    if not p > 1 or math.isinf(p):
        raise ParameterError("Hoelder exponents need 1 < p < infinity")
    from fractions import Fraction

    try:
        fp = Fraction(p).limit_denominator(10**6)
        q = fp / (fp - 1)
        alpha = max(1 / fp, 1 / (2 * q))
        beta = min(1 / q, (fp + 1) / (2 * fp))
        return HolderExponents(p, float(q), alpha, beta)
    except ZeroDivisionError:  # pragma: no cover - excluded by the range check
        raise ParameterError("invalid exponent") from None


HOLDER_FORMS = ("BV", "Linf_B1/2", "besov")


def _form_denominator(form, z1, z2, p=None):
    dz = float(np.linalg.norm(z1 - z2))
    a1, a2 = float(np.linalg.norm(z1)), float(np.linalg.norm(z2))
    if form == "BV":
        return dz
    if form == "Linf_B1/2":
        return math.sqrt(dz) * (math.sqrt(a1) + math.sqrt(a2))
    if form == "besov":
        ex = holder_exponents(p)
        return dz ** float(ex.alpha) * (a1 ** float(ex.beta) + a2 ** float(ex.beta))
    raise ParameterError(f"unknown Hoelder form {form!r}; known: {HOLDER_FORMS}")


@dataclass
class HolderReport:
    form: str
    eps: float
    differences: list
    ratios: list
    constant: float

    @property
    def max_ratio(self):
        return self.constant

    def to_json(self):
        return dict(self.__dict__)


def holder_modulus(u, eps, phi, pairs, form="BV", p=None):
    """``||T_{eps,z1} - T_{eps,z2}||_{L^1(supp phi)}`` and its ratio to the bound form."""
    eps = _check_eps(u, eps)
    diffs, ratios = [], []
    for z1, z2 in pairs:
        z1 = np.atleast_1d(np.asarray(z1, dtype=float))
        z2 = np.atleast_1d(np.asarray(z2, dtype=float))
        a = u.jump_axis if u.has_jumps else 0
        nodes, w = _support_rule(u, phi, eps, [eps * z1[a], eps * z2[a]])
        inside = np.sum((nodes - phi.center) ** 2, axis=-1) < phi.radius**2
        x, w = nodes[inside], w[inside]
        ux = u(x)
        T1 = _T_vectors(u, x, ux, eps * z1, eps)
        T2 = _T_vectors(u, x, ux, eps * z2, eps)
        diff = float(w @ np.linalg.norm(T1 - T2, axis=-1))
        den = _form_denominator(form, z1, z2, p)
        diffs.append(diff)
        ratios.append(diff / den if den > 0 else (0.0 if diff == 0 else math.inf))
    return HolderReport(form, eps, diffs, ratios, max(ratios) if ratios else 0.0)


# --------------------------------------------------------------------------
# Reynolds-stress flux, kinetic energy, BD bound
# --------------------------------------------------------------------------


def reynolds_flux(u, kernel, eps, phi, n=256, zrule=DEFAULT_ZRULE):
    """``<R_eps : grad u_eps, phi>`` with ``R_eps = u_eps (x) u_eps - (u (x) u)_eps``.

    For piecewise-constant fields both factors vanish wherever the eps-ball
    sees no jump, so those points are dropped before mollifying.
    """
    require_valid(kernel)
    m = MollifiedField(u, kernel, eps, zrule)
    region = phi.support_box()
    nodes, w = region_rule(u, region, n, _band_breaks(u, region, eps, kernel))
    wphi = w * phi(nodes)
    keep = wphi > 0
    if u.has_jumps and u.piecewise_constant:
        keep &= np.any(jump_breaks(u, nodes[:, u.jump_axis], eps) < 1.0, axis=1)
    x, wphi = nodes[keep], wphi[keep]
    if len(x) == 0:
        return 0.0
    mom = m.moments(x, ("value", "product", "grad"))
    ue = mom["value"]
    R = ue[..., :, None] * ue[..., None, :] - mom["product"]
    return float(wphi @ np.sum(R * mom["grad"], axis=(-2, -1)))


def kinetic_energy(u, region=None, n=512):
    """``(1/2) int |u|^2`` over the domain (or over a box region)."""
    dom = u.domain
    if region is None:
        if isinstance(dom, WholeSpace):
            raise ParameterError("kinetic energy on R^d needs a bounded region")
        if isinstance(dom, PeriodicBox):
            region = dom.as_box()
        else:
            lo, hi = dom.bounds()
            region = Box(lo, hi)
    nodes, w = region_rule(u, region, n)
    if isinstance(dom, Polygon):
        keep = dom.contains(nodes, strict=False)
        nodes, w = nodes[keep], w[keep]
    return 0.5 * float(w @ np.sum(u(nodes) ** 2, axis=-1))


@dataclass
class BDBound:
    lhs: float
    rhs: float
    passed: bool


def bd_bound(u, kernel, eps, region, n=256):
    """``int_O |D_eps| <= C ||u||^2 |sym grad u|((O)_eps) int_0^1 |rho'| r^d dr`` with ``C = |S^{d-1}|``.

    The 1/4 of the flux is cancelled by ``|delta u|^2 <= 4 ||u||^2``; a single
    shock of height ``2 ||u||`` attains the bound.
    """
    if not kernel.is_radial:
        raise ParameterError("the BD bound is stated for radial kernels")
    d = u.dimension
    lhs = total_flux(u, kernel, eps, region, n).absolute
    r, w = midpoint_1d(0.0, 1.0, 4000)
    moment = float(np.sum(w * np.abs(kernel.profile_derivative(r)) * r**d))
    tv = total_variation(u, region.expand(eps), LABEL_SYM, closed=True).total
    rhs = sphere_area(d) * u.sup_norm() ** 2 * tv * moment
    return BDBound(lhs, rhs, lhs <= rhs * 1.01 + 1e-12)


def spatial_grid(region, n):
    lo, hi = region.bounds()
    return tensor_rule([midpoint_1d(a, b, n) for a, b in zip(lo, hi)])
