import math

import numpy as np
import pytest

from drflux.errors import ParameterError
from drflux.flows import FlowField
from drflux.kernels import (
    FlowAveragedKernel,
    FunctionKernel,
    kernel_from_descriptor,
    make_bump,
    normalized,
    polynomial_constant,
    rescale,
    validate,
)
from drflux.quadrature import ball_integrate

KINDS = ("standard_radial", "polynomial_radial", "tensor", "indicator_smoothed")


@pytest.mark.parametrize("d", [1, 2, 3])
def test_standard_bump_valid(d):
    rep = validate(make_bump("standard_radial", d=d))
    assert rep.passed, rep


@pytest.mark.parametrize("kind", KINDS)
def test_all_kinds_valid_in_2d(kind):
    assert validate(make_bump(kind, d=2)).passed


def test_polynomial_constant_closed_form():
    # (1 - r^2)^2 on the unit disk integrates to pi/3
    assert polynomial_constant(2, 2) == pytest.approx(3 / math.pi, rel=1e-12)


def test_polynomial_gradient_value():
    k = make_bump("polynomial_radial", d=2)
    np.testing.assert_allclose(k.gradient(np.array([[0.5, 0.0]])), [[-4.5 / math.pi, 0.0]], rtol=1e-10)


def test_odd_perturbation_fails_validation():
    base = make_bump("standard_radial", d=2)
    odd = FunctionKernel(2, lambda z: (1 + z[..., 0]) * base(z))
    rep = validate(odd)
    assert rep.even_residual > 1e-2 and not rep.passed


def test_ball_integrate_examples():
    assert ball_integrate(lambda z: np.ones(len(z)), 2).value == pytest.approx(math.pi, rel=1e-3)
    assert abs(ball_integrate(lambda z: z[:, 0], 2).value) < 1e-10
    assert ball_integrate(lambda z: 1 - np.sum(z * z, axis=1), 2).value == pytest.approx(math.pi / 2, rel=1e-3)


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_moment_identities(kind):
    k = make_bump(kind, d=2)
    g = k.integrate(lambda z: k.gradient(z)[:, 0]).value
    assert abs(g) < 1e-6
    m = k.integrate(lambda z: np.sum(k.gradient(z) * z, axis=1)).value
    assert m == pytest.approx(-2.0, rel=1e-3)


@pytest.mark.parametrize("kind", ["standard_radial", "polynomial_radial", "tensor"])
def test_gradient_matches_finite_differences(kind):
    k = make_bump(kind, d=2)
    rng = np.random.default_rng(1)
    z = rng.uniform(-0.6, 0.6, size=(100, 2))
    h = 1e-6
    fd = np.stack([(k(z + h * e) - k(z - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
    np.testing.assert_allclose(k.gradient(z), fd, atol=1e-6 * max(1.0, float(np.max(np.abs(fd)))))


def test_rescale_identity_and_mass():
    k = make_bump("standard_radial", d=2)
    assert rescale(k, 1.0) is k
    r3 = rescale(k, 3.0)
    assert r3.class_tag == "K_W"
    assert float(r3.mass().value) == pytest.approx(1.0, abs=1e-8)
    r = rescale(k, 2.0)
    z = np.random.default_rng(2).uniform(-0.4, 0.4, size=(10, 2))
    np.testing.assert_array_equal(rescale(r, 1.0)(z), r(z))


def test_rescale_below_support_rejected():
    rho = FlowAveragedKernel(make_bump("standard_radial", d=2), FlowField.from_matrix([[0, 1], [0, 0]]), 2.0)
    assert rho.support_radius > 1
    with pytest.raises(ParameterError):
        rescale(rho, 1.0)
    fitted = rescale(rho, rho.support_radius)
    assert validate(fitted).support_ok


def test_flow_averaged_identity_flow_is_base():
    base = make_bump("standard_radial", d=2)
    rho = FlowAveragedKernel(base, FlowField.from_matrix(np.zeros((2, 2))), 3.0)
    z = np.random.default_rng(3).uniform(-0.7, 0.7, size=(50, 2))
    np.testing.assert_allclose(rho(z), base(z), rtol=1e-12)


@pytest.mark.parametrize("M", [[[0, 1], [0, 0]], [[1, 0], [0, -1]], [[1, 0], [0, 1]]])
def test_flow_averaged_mass(M):
    rho = FlowAveragedKernel(make_bump("standard_radial", d=2), FlowField.from_matrix(M), 2.0)
    assert float(rho.mass().value) == pytest.approx(1.0, abs=1e-3)
    assert validate(rho).passed


def test_flow_averaged_analytic_prefactor():
    rho = FlowAveragedKernel(make_bump("standard_radial", d=2), FlowField.from_matrix(np.eye(2)), 1.0)
    assert rho.analytic_prefactor == pytest.approx(2 / math.expm1(2.0))
    assert rho.prefactor == pytest.approx(rho.analytic_prefactor, rel=1e-3)


def test_normalized_kernel_has_unit_mass():
    k, m = normalized(make_bump("indicator_smoothed", d=2))
    assert float(k.mass().value) == pytest.approx(1.0, abs=1e-6)


def test_descriptor_roundtrip():
    rho = rescale(FlowAveragedKernel(make_bump("tensor", d=2), FlowField.from_matrix([[0, 1], [0, 0]]), 1.0), 2.5)
    again = kernel_from_descriptor(rho.descriptor())
    z = np.random.default_rng(4).uniform(-0.5, 0.5, size=(20, 2))
    np.testing.assert_allclose(again(z), rho(z), rtol=1e-12)


def test_unknown_kind():
    with pytest.raises(ParameterError):
        make_bump("gaussian", d=2)
