"""Admissible mollification kernels.

A kernel is an even, nonnegative, unit-mass function with compact support.
Concrete representations:

* :class:`RadialKernel` -- standard bump, polynomial bump, smoothed indicator
* :class:`TensorKernel` -- product of 1-D bumps with per-axis widths
* :class:`FlowAveragedKernel` -- time average of a base kernel pulled back
  along the inverse flow of an odd vector field
* :class:`RescaledKernel` -- ``R^d rho(R z)``
* :class:`FunctionKernel` -- user-supplied callables (used for checks)

Every kernel exposes ``__call__`` and ``gradient`` on batches of points of
shape ``(m, d)`` and a ``quadrature()`` description of the rule that
resolves it (support radius, support box, frame, points per axis).
"""

from __future__ import annotations

import hashlib
import math
import threading
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate, special

from .errors import ParameterError
from .flows import FlowField
from .quadrature import DEFAULT_BALL_POINTS, Integral, ball_integrate, polar_ball_rule

CLASS_K = "K"
CLASS_RAD = "K_rad"
CLASS_C = "K_c"
CLASS_W = "K_W"

EVEN_TOL = 1e-8
NEG_TOL = 1e-12
FD_STEP = 1e-5


def sphere_area(d):
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def _check_points(z, d):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != d:
        raise ParameterError(f"expected points of dimension {d}, got shape {z.shape}")
    return z


@dataclass
class KernelReport:
    even_residual: float
    min_value: float
    mass_error: float
    mass_tolerance: float
    support_ok: bool
    passed: bool

    def to_json(self):
        return asdict(self)


class Kernel:
    """Base class; subclasses implement ``_value`` and ``_gradient``."""

    dimension: int
    class_tag: str = CLASS_K
    support_radius: float = 1.0
    # radii where the profile has a steep transition; quadrature cuts there
    profile_breaks: tuple = ()

    def __call__(self, z):
        z = _check_points(z, self.dimension)
        return self._value(z)

    def gradient(self, z):
        z = _check_points(z, self.dimension)
        return self._gradient(z)

    def value_and_gradient(self, z):
        return self(z), self.gradient(z)

    def _gradient(self, z):
        return fd_gradient(self._value, z)

    # -- quadrature description ------------------------------------------

    def quadrature(self):
        """Rule parameters resolving this kernel: dict(n, radius, box, frame)."""
        return {"n": DEFAULT_BALL_POINTS.get(self.dimension, 32), "radius": self.support_radius,
                "box": None, "frame": None}

    def integrate(self, f, estimate_error=True):
        q = self.quadrature()
        return ball_integrate(f, self.dimension, q["n"], q["radius"], q["box"], q["frame"],
                              estimate_error=estimate_error)

    def mass(self):
        return self.integrate(lambda z: self(z))

    def validate(self):
        return validate(self)

    @property
    def is_radial(self):
        return False

    def descriptor(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.descriptor()})"


def fd_gradient(value, z, step=FD_STEP):
    """Central-difference gradient of a batched scalar function."""
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    g = np.empty_like(z)
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        g[..., j] = (value(z + e) - value(z - e)) / (2 * step)
    return g


# --------------------------------------------------------------------------
# Radial bumps
# --------------------------------------------------------------------------


def _std_profile(r):
    out = np.zeros_like(r)
    m = r < 1
    out[m] = np.exp(-1.0 / (1.0 - r[m] ** 2))
    return out


def _std_derivative(r):
    out = np.zeros_like(r)
    m = r < 1
    s = 1.0 - r[m] ** 2
    out[m] = np.exp(-1.0 / s) * (-2.0 * r[m]) / s**2
    return out


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3 - 2 * s)


def _smoothstep_prime(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 6 * s * (1 - s), 0.0)


class RadialKernel(Kernel):
    """``rho(z) = c * profile(|z|)`` supported in the closed unit ball."""

    class_tag = CLASS_K
    support_radius = 1.0

    def __init__(self, dimension, profile="standard", k=2, delta=0.1):
        if dimension not in (1, 2, 3):
            raise ParameterError(f"unsupported dimension {dimension}")
        self.dimension = int(dimension)
        self.profile = profile
        if profile == "standard":
            self._f, self._df = _std_profile, _std_derivative
            self.params = {}
        elif profile == "polynomial":
            if int(k) != k or k < 1:
                raise ParameterError(f"polynomial bump exponent must be an integer >= 1, got {k}")
            k = int(k)
            self._f = lambda r, k=k: np.where(r < 1, np.clip(1 - r * r, 0, None) ** k, 0.0)
            self._df = lambda r, k=k: np.where(r < 1, -2 * k * r * np.clip(1 - r * r, 0, None) ** (k - 1), 0.0)
            self.params = {"k": k}
        elif profile == "indicator_smoothed":
            delta = float(delta)
            if not 0 < delta <= 1:
                raise ParameterError(f"smoothing width must lie in (0, 1], got {delta}")
            self._f = lambda r, dl=delta: _smoothstep((1 - r) / dl)
            self._df = lambda r, dl=delta: -_smoothstep_prime((1 - r) / dl) / dl
            self.params = {"delta": delta}
            if delta < 1:
                self.profile_breaks = (1.0 - delta,)
        else:
            raise ParameterError(f"unknown radial profile {profile!r}")
        raw = sphere_area(self.dimension) * integrate.quad(
            lambda r: float(self._f(np.array([r]))[0]) * r ** (self.dimension - 1), 0, 1,
            epsabs=1e-15, epsrel=1e-13, limit=200)[0]
        if not raw > 0 or not math.isfinite(raw):
            raise ParameterError("kernel profile is not normalizable")
        self.constant = 1.0 / raw

    @property
    def is_radial(self):
        return True

    @property
    def class_tags(self):
        return (CLASS_K, CLASS_RAD)

    def integrate(self, f, estimate_error=True):
        # a steep profile transition is resolved by a polar rule cut at the
        # transition radius; the Cartesian ball rule would smear it out
        if not self.profile_breaks or self.dimension > 2:
            return super().integrate(f, estimate_error)
        nodes, w = polar_ball_rule(self.dimension, 48, 256, self.profile_breaks)
        value = w @ np.asarray(f(nodes))
        if not estimate_error:
            return Integral(value, float("nan"))
        cn, cw = polar_ball_rule(self.dimension, 24, 128, self.profile_breaks)
        return Integral(value, float(np.max(np.abs(np.asarray(value) - cw @ np.asarray(f(cn))))))

    def profile_value(self, r):
        return self.constant * self._f(np.asarray(r, dtype=float))

    def profile_derivative(self, r):
        """``rho_rad'(r)``."""
        return self.constant * self._df(np.asarray(r, dtype=float))

    def _value(self, z):
        r = np.sqrt(np.sum(z * z, axis=-1))
        return self.constant * self._f(r)

    def _gradient(self, z):
        r = np.sqrt(np.sum(z * z, axis=-1))
        dr = self.constant * self._df(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0, dr / r, 0.0)
        return scale[..., None] * z

    def value_and_gradient(self, z):
        z = _check_points(z, self.dimension)
        r = np.sqrt(np.sum(z * z, axis=-1))
        if self.profile == "standard":
            val = np.zeros_like(r)
            scale = np.zeros_like(r)
            m = r < 1
            s = 1.0 - r[m] ** 2
            e = self.constant * np.exp(-1.0 / s)
            val[m] = e
            scale[m] = -2.0 * e / s**2
            return val, scale[..., None] * z
        return self._value(z), self._gradient(z)

    def descriptor(self):
        kind = {"standard": "standard_radial", "polynomial": "polynomial_radial",
                "indicator_smoothed": "indicator_smoothed"}[self.profile]
        return {"kind": kind, "params": dict(self.params), "d": self.dimension}


def polynomial_constant(d, k):
    """Closed-form normalisation of ``(1 - |z|^2)^k`` on the unit ball of R^d."""
    return special.gamma(d / 2 + k + 1) / (math.pi ** (d / 2) * special.gamma(k + 1))


# --------------------------------------------------------------------------
# Tensor bumps
# --------------------------------------------------------------------------


_STD_1D = 1.0 / integrate.quad(lambda s: math.exp(-1.0 / (1.0 - s * s)), -1, 1, epsabs=1e-15, epsrel=1e-13)[0]


class TensorKernel(Kernel):
    """Product of 1-D standard bumps of half-widths ``widths``.

    The support box ``prod [-w_i, w_i]`` must fit in the closed unit ball.
    """

    class_tag = CLASS_K

    def __init__(self, dimension, widths=None):
        self.dimension = int(dimension)
        if widths is None:
            widths = [1.0 / math.sqrt(self.dimension)] * self.dimension
        w = np.asarray(widths, dtype=float)
        if w.shape != (self.dimension,) or np.any(w <= 0):
            raise ParameterError("tensor bump needs one positive width per axis")
        if np.sum(w * w) > 1 + 1e-12:
            raise ParameterError("tensor bump support box must fit in the unit ball")
        self.widths = w
        self.support_radius = 1.0

    def _factors(self, z):
        s = z / self.widths
        inside = np.abs(s) < 1
        q = np.where(inside, 1 - s * s, 1.0)
        f = np.where(inside, _STD_1D * np.exp(-1.0 / q) / self.widths, 0.0)
        df = np.where(inside, f * (-2 * s / q**2) / self.widths, 0.0)
        return f, df

    def _value(self, z):
        f, _ = self._factors(z)
        return np.prod(f, axis=-1)

    def _gradient(self, z):
        f, df = self._factors(z)
        g = np.empty_like(z)
        for j in range(self.dimension):
            others = np.prod(np.delete(f, j, axis=-1), axis=-1)
            g[..., j] = df[..., j] * others
        return g

    def quadrature(self):
        n = DEFAULT_BALL_POINTS.get(self.dimension, 32)
        return {"n": n, "radius": 1.0, "box": tuple(self.widths), "frame": None}

    def descriptor(self):
        return {"kind": "tensor", "params": {"widths": self.widths.tolist()}, "d": self.dimension}


# --------------------------------------------------------------------------
# User-supplied kernels
# --------------------------------------------------------------------------


class FunctionKernel(Kernel):
    """Kernel from plain callables; gradient falls back to central differences."""

    def __init__(self, dimension, value, gradient=None, support_radius=1.0, class_tag=CLASS_K, name="custom"):
        self.dimension = int(dimension)
        self._fn = value
        self._grad_fn = gradient
        self.support_radius = float(support_radius)
        self.class_tag = class_tag
        self.name = name

    def _value(self, z):
        return np.asarray(self._fn(z), dtype=float)

    def _gradient(self, z):
        if self._grad_fn is None:
            return fd_gradient(self._value, z)
        return np.asarray(self._grad_fn(z), dtype=float)

    def descriptor(self):
        return {"kind": "custom", "params": {"name": self.name}, "d": self.dimension}


# --------------------------------------------------------------------------
# Flow-averaged kernels
# --------------------------------------------------------------------------


def _batch_key(z):
    z = np.ascontiguousarray(z)
    return (z.shape, hashlib.blake2b(z.tobytes(), digest_size=16).hexdigest())


class _BatchCache:
    """Small thread-safe LRU of (value, gradient) keyed by the exact query batch."""

    def __init__(self, maxsize=6):
        self._data = OrderedDict()
        self._lock = threading.Lock()
        self.maxsize = maxsize

    def get(self, key):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
        return None

    def put(self, key, value):
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)


def time_nodes(T, n_steps=None):
    """Trapezoid nodes and weights on [0, T] with max(64, ceil(16 T)) steps."""
    if n_steps is None:
        n_steps = max(64, int(math.ceil(16 * T)))
    t = np.linspace(0.0, T, n_steps + 1)
    w = np.full(n_steps + 1, T / n_steps)
    w[0] *= 0.5
    w[-1] *= 0.5
    return t, w


class FlowAveragedKernel(Kernel):
    """``rho_T(z) = c_T * int_0^T theta(X_t^{-1}(z)) dt`` (trapezoid in time).

    ``c_T = 1/T`` for divergence-free flows and ``a / (exp(a T) - 1)`` for
    constant divergence ``a``.  Linear flows are exactly odd in floating
    point, so their kernels are exactly even; nonlinear flows are
    symmetrised as ``(rho(z) + rho(-z)) / 2``.
    """

    class_tag = CLASS_C

    def __init__(self, base, flow, T, n_steps=None, points_per_width=10, max_points=4_000_000):
        if T <= 0:
            raise ParameterError("time horizon must be positive")
        if base.dimension != flow.dimension:
            raise ParameterError("base kernel and flow have different dimensions")
        self.base = base
        self.flow = flow
        self.T = float(T)
        self.dimension = base.dimension
        self.times, self.weights = time_nodes(self.T, n_steps)
        self.n_steps = len(self.times) - 1
        a = flow.divergence
        self.analytic_prefactor = 1.0 / self.T if abs(a) < 1e-14 else a / math.expm1(a * self.T)
        # Normalise with the same trapezoid weights used for the time average,
        # so the discrete kernel has exactly the mass of theta.
        self.prefactor = 1.0 / float(np.sum(self.weights * np.exp(a * self.times)))
        self.symmetrize = not flow.is_linear
        self.support_radius_bound = math.exp(flow.lipschitz * self.T) * base.support_radius
        self.points_per_width = points_per_width
        self.max_points = max_points
        self._cache = _BatchCache()
        if flow.is_linear:
            self._inverse_mats = [flow.flow_matrix(-t) for t in self.times]
            self._forward_mats = [flow.flow_matrix(t) for t in self.times]
        else:
            self._inverse_mats = None
            self._forward_mats = None
        self._geometry = self._support_geometry()
        self.support_radius = self._geometry["radius"]

    # -- geometry of the support -------------------------------------------

    def _support_geometry(self):
        d = self.dimension
        rb = self.base.support_radius
        if self.flow.is_linear:
            F = np.stack(self._forward_mats)
            P = np.stack(self._inverse_mats)
            radius = rb * float(np.max(np.linalg.norm(F, ord=2, axis=(1, 2))))
            best = None
            frames = [np.eye(d)]
            U = np.linalg.svd(F[-1])[0]
            frames.append(U)
            for Q in frames:
                # half-width of union of ellipses along frame axis q_i: max_k |F_k^T q_i|
                half = rb * np.max(np.linalg.norm(np.einsum("kji,jl->kil", F, Q), axis=1), axis=0)
                # chord of {|P_k z| < rb} along q_i: 2 rb / |P_k q_i|
                chord = 2 * rb / np.max(np.linalg.norm(P @ Q, axis=1), axis=0)
                counts = self._counts(half, chord)
                if best is None or np.prod(counts) < np.prod(best[2]):
                    best = (Q, half, counts)
            Q, half, counts = best
            frame = None if np.allclose(Q, np.eye(d)) else Q
            return {"radius": radius, "box": np.minimum(half, radius), "frame": frame, "n": counts}
        # nonlinear flows: push a dense sample of the base support forward
        rng = np.random.default_rng(12345)
        w = rng.normal(size=(4000, d))
        w = rb * w / np.linalg.norm(w, axis=1, keepdims=True)
        w = np.concatenate([w, w * 0.5])
        pts = [w]
        for t, x in self.flow_series(w):
            pts.append(x)
        allp = np.concatenate(pts)
        radius = min(1.1 * float(np.max(np.linalg.norm(allp, axis=1))), self.support_radius_bound)
        half = np.minimum(1.1 * np.max(np.abs(allp), axis=0), radius)
        # chord estimate from the inverse-flow Jacobian at the sampled points
        probe = allp[:: max(1, len(allp) // 400)]
        stretch = np.ones(d)
        for t, _ in zip(self.times[:: max(1, len(self.times) // 16)], range(10**9)):
            for j in range(d):
                e = np.zeros(d)
                e[j] = 1e-5
                col = (self.flow.flow(-t, probe + e) - self.flow.flow(-t, probe - e)) / 2e-5
                stretch[j] = max(stretch[j], float(np.max(np.linalg.norm(col, axis=1))))
        chord = 2 * rb / stretch
        return {"radius": radius, "box": half, "frame": None, "n": self._counts(half, chord)}

    def flow_series(self, w):
        t_prev, x = 0.0, np.asarray(w, dtype=float)
        for t in self.times[1:]:
            x = self.flow.flow(t - t_prev, x)
            t_prev = t
            yield t, x

    def _counts(self, half, chord):
        n = np.ceil(self.points_per_width * 2 * np.asarray(half) / np.asarray(chord)).astype(int)
        n = np.clip(n, DEFAULT_BALL_POINTS.get(self.dimension, 32), 4096)
        total = float(np.prod(n.astype(float)))
        if total > self.max_points:
            n = np.maximum((n * (self.max_points / total) ** (1 / len(n))).astype(int), 16)
        n += n % 2
        return tuple(int(v) for v in n)

    def quadrature(self):
        g = self._geometry
        box = None if g["box"] is None else tuple(float(b) for b in g["box"])
        return {"n": g["n"], "radius": g["radius"], "box": box, "frame": g["frame"]}

    # -- evaluation --------------------------------------------------------

    def _raw_value_and_gradient(self, z, need_grad=True):
        base = self.base
        val = np.zeros(z.shape[:-1])
        grad = np.zeros(z.shape) if need_grad else None
        if self.flow.is_linear:
            for P, w in zip(self._inverse_mats, self.weights):
                y = z @ P.T
                if need_grad:
                    v, g = base.value_and_gradient(y)
                    grad += w * (g @ P)
                else:
                    v = base(y)
                val += w * v
        else:
            for (t, y), w in zip(self.flow.inverse_flow_series(self.times, z), self.weights):
                val += w * base(y)
        val *= self.prefactor
        if need_grad:
            grad *= self.prefactor
        return val, grad

    def _sym_value(self, z):
        v, _ = self._raw_value_and_gradient(z, need_grad=False)
        if self.symmetrize:
            vm, _ = self._raw_value_and_gradient(-z, need_grad=False)
            v = 0.5 * (v + vm)
        return v

    def value_and_gradient(self, z):
        z = _check_points(z, self.dimension)
        key = _batch_key(z)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.flow.is_linear:
            v, g = self._raw_value_and_gradient(z)
        else:
            v = self._sym_value(z)
            g = fd_gradient(self._sym_value, z)
        self._cache.put(key, (v, g))
        return v, g

    def _value(self, z):
        hit = self._cache.get(_batch_key(z))
        if hit is not None:
            return hit[0]
        if self.flow.is_linear:
            return self._raw_value_and_gradient(z, need_grad=False)[0]
        return self._sym_value(z)

    def _gradient(self, z):
        return self.value_and_gradient(z)[1]

    def descriptor(self):
        return {"kind": "flow_averaged", "d": self.dimension,
                "params": {"base": self.base.descriptor(), "flow": self.flow.to_json(),
                           "T": self.T, "n_steps": self.n_steps}}


# --------------------------------------------------------------------------
# Rescaling and normalisation wrappers
# --------------------------------------------------------------------------


class RescaledKernel(Kernel):
    """``R^d * inner(R z)``: maps a kernel supported in B_R into B_1."""

    class_tag = CLASS_W

    def __init__(self, inner, R):
        R = float(R)
        if not R > 0 or R < inner.support_radius * (1 - 1e-12):
            raise ParameterError(f"rescale factor {R} is smaller than the support radius "
                                 f"{inner.support_radius}")
        self.inner = inner
        self.R = R
        self.dimension = inner.dimension
        self.support_radius = inner.support_radius / R
        if R == 1.0:
            self.class_tag = inner.class_tag

    def _value(self, z):
        return self.R**self.dimension * self.inner(self.R * z)

    def _gradient(self, z):
        return self.R ** (self.dimension + 1) * self.inner.gradient(self.R * z)

    def value_and_gradient(self, z):
        z = _check_points(z, self.dimension)
        v, g = self.inner.value_and_gradient(self.R * z)
        return self.R**self.dimension * v, self.R ** (self.dimension + 1) * g

    def quadrature(self):
        q = dict(self.inner.quadrature())
        q["radius"] = q["radius"] / self.R
        if q["box"] is not None:
            q["box"] = tuple(b / self.R for b in q["box"])
        return q

    def descriptor(self):
        return {"kind": "rescaled", "d": self.dimension,
                "params": {"inner": self.inner.descriptor(), "R": self.R}}


class ScaledKernel(Kernel):
    """``factor * inner``; used to renormalise numerically built kernels."""

    def __init__(self, inner, factor):
        self.inner = inner
        self.factor = float(factor)
        self.dimension = inner.dimension
        self.support_radius = inner.support_radius
        self.class_tag = inner.class_tag
        self.profile_breaks = inner.profile_breaks

    def _value(self, z):
        return self.factor * self.inner(z)

    def _gradient(self, z):
        return self.factor * self.inner.gradient(z)

    def value_and_gradient(self, z):
        v, g = self.inner.value_and_gradient(z)
        return self.factor * v, self.factor * g

    def quadrature(self):
        return self.inner.quadrature()

    def integrate(self, f, estimate_error=True):
        return self.inner.integrate(f, estimate_error)

    @property
    def is_radial(self):
        return self.inner.is_radial

    def descriptor(self):
        return {"kind": "scaled", "d": self.dimension,
                "params": {"inner": self.inner.descriptor(), "factor": self.factor}}


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------


BUMP_KINDS = ("standard_radial", "polynomial_radial", "tensor", "indicator_smoothed")


def make_bump(kind="standard_radial", params=None, d=2):
    """Build one of the analytic kernels by name."""
    params = dict(params or {})
    if kind == "standard_radial":
        return RadialKernel(d, "standard")
    if kind == "polynomial_radial":
        return RadialKernel(d, "polynomial", k=params.get("k", 2))
    if kind == "indicator_smoothed":
        return RadialKernel(d, "indicator_smoothed", delta=params.get("delta", 0.1))
    if kind == "tensor":
        return TensorKernel(d, params.get("widths"))
    raise ParameterError(f"unknown kernel kind {kind!r}; known: {BUMP_KINDS}")


def gradient(kernel, z):
    return kernel.gradient(z)


def rescale(kernel, R):
    """``R^d rho(R z)``; identity for ``R = 1``."""
    if float(R) == 1.0:
        if kernel.support_radius > 1 + 1e-12:
            raise ParameterError("rescale factor is smaller than the support radius")
        return kernel
    return RescaledKernel(kernel, R)


def normalized(kernel):
    """Divide by the numerically computed mass; returns (kernel, mass)."""
    m = kernel.mass()
    return ScaledKernel(kernel, 1.0 / float(m.value)), m


def _symmetric_samples(d, radius, n=100, seed=2024):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(4 * n, d))
    pts = pts[np.sum(pts * pts, axis=1) < 1][:n] * radius
    return np.concatenate([pts, -pts])


def validate(kernel):
    """Evenness, nonnegativity, unit mass and support checks."""
    d = kernel.dimension
    R = kernel.support_radius
    S = _symmetric_samples(d, R)
    half = len(S) // 2
    vals = kernel(S)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    even = float(np.max(np.abs(vals[:half] - vals[half:]))) / scale
    q = kernel.quadrature()
    grid_pts = []
    from .quadrature import ball_rule

    nodes, _ = ball_rule(d, tuple(max(8, c // 4) for c in np.broadcast_to(q["n"], (d,))),
                         q["radius"], q["box"], q["frame"])
    grid_pts.append(nodes)
    min_value = float(min(np.min(vals), np.min(kernel(nodes))))
    m = kernel.mass()
    mass_error = abs(float(m.value) - 1.0)
    mass_tol = max(1e-6, 4 * m.error)
    if kernel.class_tag in (CLASS_K, CLASS_W):
        limit = 1.0
    else:
        limit = R
    rng = np.random.default_rng(7)
    dirs = rng.normal(size=(200, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    shell = dirs * (limit * rng.uniform(1.0, 1.5, size=(200, 1)))
    support_ok = bool(np.all(kernel(shell) == 0.0)) and R <= limit * (1 + 1e-12)
    passed = even <= EVEN_TOL and min_value >= -NEG_TOL and mass_error <= mass_tol and support_ok
    return KernelReport(even, min_value, mass_error, mass_tol, support_ok, bool(passed))


def kernel_from_descriptor(desc):
    """Inverse of ``Kernel.descriptor()`` for serialisable kernels."""
    kind = desc["kind"]
    params = desc.get("params", {})
    d = int(desc.get("d", 2))
    if kind in BUMP_KINDS:
        return make_bump(kind, params, d)
    if kind == "flow_averaged":
        return FlowAveragedKernel(kernel_from_descriptor(params["base"]), FlowField.from_json(params["flow"]),
                                  params["T"], params.get("n_steps"))
    if kind == "rescaled":
        return RescaledKernel(kernel_from_descriptor(params["inner"]), params["R"])
    if kind == "scaled":
        return ScaledKernel(kernel_from_descriptor(params["inner"]), params["factor"])
    raise ParameterError(f"cannot rebuild kernel of kind {kind!r}")
