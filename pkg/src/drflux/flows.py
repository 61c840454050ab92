"""Odd Lipschitz vector fields on R^d and their flow maps.

Flows are integrated with fixed-step classical RK4.  For linear fields the
RK4 step is itself a matrix (the degree-4 Taylor polynomial of ``h M``), so
the integrator is applied as matrix powers; the exact matrix exponential is
kept alongside as an independent cross-check.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm

from .errors import ParameterError

BASE_STEP = 1e-2


def _twist(z):
    r2 = np.sum(z * z, axis=-1, keepdims=True)
    return np.concatenate([-z[..., 1:2] * r2, z[..., 0:1] * r2], axis=-1)


def _cubic_shear(z):
    out = np.zeros_like(z)
    out[..., 0] = z[..., 1] ** 3
    return out


# name -> (dimension, evaluator, Lipschitz bound along orbits from B_1, divergence)
CATALOG_FLOWS = {
    "twist": (2, _twist, 3.0, 0.0),
    "cubic_shear": (2, _cubic_shear, 3.0, 0.0),
}


class FlowField:
    """An odd Lipschitz vector field with constant divergence.

    Build with :meth:`from_matrix` (``eta(z) = M z``) or :meth:`from_catalog`.
    """

    def __init__(self, evaluator, dimension, lipschitz, divergence, matrix=None, name=None):
        lipschitz = float(lipschitz)
        if not math.isfinite(lipschitz) or lipschitz < 0:
            raise ParameterError(f"Lipschitz estimate must be finite and >= 0, got {lipschitz}")
        self._evaluator = evaluator
        self.dimension = int(dimension)
        self.lipschitz = lipschitz
        self.divergence = float(divergence)
        self.matrix = None if matrix is None else np.array(matrix, dtype=float)
        self.name = name
        self.odd = True

    @classmethod
    def from_matrix(cls, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != M.shape[1]:
            raise ParameterError("flow matrix must be square")
        lip = float(np.linalg.norm(M, 2))
        return cls(lambda z: z @ M.T, M.shape[0], lip, float(np.trace(M)), matrix=M)

    @classmethod
    def from_catalog(cls, name):
        try:
            d, fn, lip, div = CATALOG_FLOWS[name]
        except KeyError:
            raise ParameterError(f"unknown flow field {name!r}; known: {sorted(CATALOG_FLOWS)}") from None
        return cls(fn, d, lip, div, name=name)

    @property
    def variant(self):
        return "matrix" if self.matrix is not None else "catalog"

    @property
    def is_linear(self):
        return self.matrix is not None

    @property
    def is_homogeneous(self):
        """1-homogeneity (needed by the rescaling identity)."""
        return self.matrix is not None

    def __call__(self, z):
        return self._evaluator(np.asarray(z, dtype=float))

    def __repr__(self):
        if self.matrix is not None:
            return f"FlowField.from_matrix({self.matrix.tolist()})"
        return f"FlowField.from_catalog({self.name!r})"

    def to_json(self):
        if self.matrix is not None:
            return {"matrix": self.matrix.tolist()}
        return {"catalog": self.name}

    @classmethod
    def from_json(cls, data):
        if "matrix" in data:
            return cls.from_matrix(data["matrix"])
        return cls.from_catalog(data["catalog"])

    # -- integration -------------------------------------------------------

    @property
    def max_step(self):
        if self.lipschitz == 0:
            return BASE_STEP
        return BASE_STEP * min(1.0, 1.0 / self.lipschitz)

    def _substeps(self, dt):
        m = max(1, int(math.ceil(abs(dt) / self.max_step - 1e-9)))
        return m, dt / m

    def rk4_matrix(self, h):
        """One RK4 step for the linear field as a matrix."""
        A = h * self.matrix
        d = self.dimension
        P = np.eye(d)
        term = np.eye(d)
        for k in range(1, 5):
            term = term @ A / k
            P = P + term
        return P

    def _rk4_step(self, z, h):
        f = self._evaluator
        k1 = f(z)
        k2 = f(z + 0.5 * h * k1)
        k3 = f(z + 0.5 * h * k2)
        k4 = f(z + h * k3)
        return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def flow(self, t, z):
        """``X_t(z)``; negative ``t`` integrates backwards (inverse flow)."""
        z = np.asarray(z, dtype=float)
        if t == 0:
            return z.copy()
        m, h = self._substeps(t)
        if self.matrix is not None:
            P = np.linalg.matrix_power(self.rk4_matrix(h), m)
            return z @ P.T
        out = z
        for _ in range(m):
            out = self._rk4_step(out, h)
        return out

    def flow_exact(self, t, z):
        """Exact flow of a linear field via the matrix exponential."""
        if self.matrix is None:
            raise ParameterError("exact flow is only available for matrix fields")
        return np.asarray(z, dtype=float) @ expm(t * self.matrix).T

    def flow_matrix(self, t):
        """RK4 propagator of the linear field over time ``t``."""
        if self.matrix is None:
            raise ParameterError("flow matrix is only available for matrix fields")
        if t == 0:
            return np.eye(self.dimension)
        m, h = self._substeps(t)
        return np.linalg.matrix_power(self.rk4_matrix(h), m)

    def inverse_flow_series(self, times, z):
        """``X_t^{-1}(z)`` for each of the increasing ``times``.

        Yields ``(t, points)`` pairs, integrating backwards once through all
        the times.
        """
        z = np.asarray(z, dtype=float)
        current = z
        t_prev = 0.0
        for t in times:
            dt = t - t_prev
            if dt < 0:
                raise ParameterError("times must be increasing")
            if dt > 0:
                if self.matrix is not None:
                    current = current @ self.flow_matrix(-dt).T
                else:
                    m, h = self._substeps(-dt)
                    for _ in range(m):
                        current = self._rk4_step(current, h)
            t_prev = t
            yield t, current

    def jacobian(self, t):
        """Closed-form Jacobian determinant ``exp(a t)`` of the flow."""
        return math.exp(self.divergence * t)

    def jacobian_numeric(self, t, z, step=1e-5):
        """Determinant of a central-difference Jacobian of the numerical flow."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        d = self.dimension
        J = np.empty(z.shape[:-1] + (d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            J[..., :, j] = (self.flow(t, z + e) - self.flow(t, z - e)) / (2 * step)
        return np.linalg.det(J)

    def odd_residual(self, z):
        z = np.asarray(z, dtype=float)
        return float(np.max(np.abs(self(-z) + self(z))))

    def divergence_samples(self, z, step=1e-5):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        div = np.zeros(z.shape[:-1])
        for j in range(self.dimension):
            e = np.zeros(self.dimension)
            e[j] = step
            div += (self(z + e)[..., j] - self(z - e)[..., j]) / (2 * step)
        return div
