import math

import numpy as np
import pytest
from scipy import integrate

from drflux.domains import Box
from drflux.errors import KernelValidationError, ParameterError
from drflux.fields import catalog
from drflux.flux import (
    D_eps_field,
    TestFunction,
    bd_bound,
    directional_flux,
    flux_convergence,
    holder_modulus,
    kinetic_energy,
    pairing,
    radial_formula,
    reconstruct_pairing,
    reynolds_flux,
    richardson,
    total_flux,
)
from drflux.kernels import FunctionKernel, make_bump

M = np.array([[1.0, 0.5], [0.0, -0.3]])


@pytest.fixture(scope="module")
def bump2():
    return make_bump("standard_radial", d=2)


def test_constant_field_has_zero_flux(bump2):
    u = catalog("constant", c=[0.4, -1.0])
    x = np.random.default_rng(0).uniform(-1, 1, size=(20, 2))
    np.testing.assert_array_equal(D_eps_field(u, bump2, 0.1, x), 0.0)


@pytest.mark.parametrize("kind", ["standard_radial", "polynomial_radial", "tensor"])
def test_shear_pointwise_flux_vanishes(kind):
    u = catalog("shear_layer")
    x = np.stack([np.linspace(-0.5, 0.5, 21), np.linspace(-0.08, 0.08, 21)], axis=1)
    assert np.max(np.abs(D_eps_field(u, make_bump(kind, d=2), 0.1, x))) < 1e-12


def test_linear_field_flux_matches_closed_form(bump2):
    """Oracle: adaptive scipy quadrature of (eps^2/4) int grad rho(z) . Mz |Mz|^2 over the disk."""
    eps = 0.2
    u = catalog("linear", M=M)

    def integrand(y, x):
        z = np.array([x, y])
        Mz = M @ z
        return float(bump2.gradient(z[None])[0] @ Mz) * float(Mz @ Mz)

    exact = eps**2 / 4 * integrate.dblquad(integrand, -1, 1, lambda x: -math.sqrt(1 - x * x),
                                           lambda x: math.sqrt(1 - x * x), epsabs=1e-12)[0]
    x = np.array([[0.0, 0.0], [3.0, -2.0], [-1.5, 0.7]])
    got = D_eps_field(u, bump2, eps, x)
    np.testing.assert_allclose(got, exact, rtol=1e-6, atol=1e-12)
    assert abs(exact) > 1e-4


def test_invalid_kernel_is_rejected(bump2):
    odd = FunctionKernel(2, lambda z: (1 + z[..., 0]) * bump2(z))
    with pytest.raises(KernelValidationError) as info:
        D_eps_field(catalog("shear_layer"), odd, 0.1, np.zeros((1, 2)))
    assert info.value.report is not None


@pytest.mark.parametrize("kind", ["standard_radial", "polynomial_radial", "indicator_smoothed"])
def test_burgers_total_is_two(kind):
    u = catalog("burgers_shock")
    k = make_bump(kind, d=1)
    for eps in (0.2, 0.05):
        assert total_flux(u, k, eps, Box([-0.5], [0.5])).signed == pytest.approx(2.0, rel=1e-3)


def test_taylor_green_flux_decays_quadratically(bump2):
    u = catalog("taylor_green")
    region = Box([1.0, 1.0], [2.0, 2.0])
    eps = np.array([0.2, 0.1, 0.05])
    tot = np.array([total_flux(u, bump2, e, region, n=48).absolute for e in eps])
    slope = np.polyfit(np.log(eps), np.log(tot), 1)[0]
    assert slope >= 1.9


def test_flux_convergence_burgers():
    u = catalog("burgers_shock")
    rep = flux_convergence(u, make_bump("polynomial_radial", d=1), [0.2, 0.1, 0.05, 0.025], Box([-0.5], [0.5]))
    assert rep.extrapolate == pytest.approx(2.0, rel=1e-6)
    assert rep.cauchy


def test_flux_convergence_kernel_independence_on_shear():
    u = catalog("shear_layer")
    region = Box([-0.25, -0.25], [0.25, 0.25])
    ext = [flux_convergence(u, make_bump(kind, d=2), [0.2, 0.1, 0.05, 0.025], region, n=64).extrapolate
           for kind in ("standard_radial", "tensor")]
    assert max(abs(e) for e in ext) < 1e-10


@pytest.mark.parametrize("eps", [[0.2, 0.1, 0.05], [0.2, 0.1, 0.1, 0.05], [0.05, 0.1, 0.2, 0.4]])
def test_flux_convergence_rejects_bad_schedules(eps):
    with pytest.raises(ParameterError):
        flux_convergence(catalog("burgers_shock"), make_bump("standard_radial", d=1), eps, Box([-0.5], [0.5]))


def test_richardson_recovers_linear_limit():
    eps = [0.4, 0.2, 0.1, 0.05]
    limit, order = richardson(eps, [3 + 2 * e for e in eps])
    assert limit == pytest.approx(3.0, rel=1e-12)
    assert order == pytest.approx(1.0)


def test_directional_flux_structure():
    u = catalog("shear_layer")
    table = directional_flux(u, 0.05, TestFunction([0.0, 0.0], 0.5))
    assert np.all(table.V[np.all(table.z == 0, axis=1)] == 0)
    assert table.odd_residual < 1e-10
    np.testing.assert_array_equal(table.V[:, 1], 0.0)


def test_reconstruction_matches_direct_pairing_for_linear_field(bump2):
    u = catalog("linear", M=M)
    phi = TestFunction([0.3, -0.2], 0.4)
    eps = 0.1
    table = directional_flux(u, eps, phi)
    direct = pairing(u, bump2, eps, phi, n=96)
    assert reconstruct_pairing(table, bump2) == pytest.approx(direct, rel=1e-2)
    assert radial_formula(table, bump2) == pytest.approx(direct, rel=1e-2)


def test_holder_modulus_trivial_and_linear():
    u = catalog("linear", M=M)
    phi = TestFunction([0.0, 0.0], 0.5)
    eps = 0.1
    z1, z2 = np.array([0.3, 0.4]), np.array([-0.5, 0.1])
    assert holder_modulus(u, eps, phi, [(z1, z1)]).differences == [0.0]
    # T_{eps,z} = eps^2 Mz |Mz|^2 is constant in x
    T = lambda z: eps**2 * (M @ z) * float((M @ z) @ (M @ z))
    exact = np.linalg.norm(T(z1) - T(z2)) * math.pi * phi.radius**2
    got = holder_modulus(u, eps, phi, [(z1, z2)]).differences[0]
    assert got == pytest.approx(exact, rel=1e-2)


def test_holder_modulus_shear_bounded():
    u = catalog("shear_layer")
    phi = TestFunction([0.0, 0.0], 0.5)
    rng = np.random.default_rng(3)
    pairs = [(a, b) for a, b in rng.uniform(-0.7, 0.7, size=(10, 2, 2))]
    bound = 24 * u.sup_norm() ** 2 * 2 * (2 * phi.radius + 0.2)
    for eps in (0.1, 0.05):
        assert holder_modulus(u, eps, phi, pairs).max_ratio <= bound


def test_reynolds_flux_constant_and_smooth(bump2):
    phi = TestFunction([1.0, 0.6], 0.5)
    assert reynolds_flux(catalog("constant", c=[1.0, 2.0]), bump2, 0.1, phi, n=32) == pytest.approx(0.0, abs=1e-12)
    tg = catalog("taylor_green")
    vals = [abs(reynolds_flux(tg, bump2, e, phi, n=48)) for e in (0.2, 0.1)]
    assert vals[1] < vals[0] / 3


def test_kinetic_energy_examples():
    assert kinetic_energy(catalog("constant", c=[1.0, 2.0]), Box([0, 0], [2, 1])) == pytest.approx(5.0)
    assert kinetic_energy(catalog("shear_layer")) == pytest.approx(2.0)
    assert kinetic_energy(catalog("taylor_green")) == pytest.approx(math.pi**2, rel=1e-6)


def test_bd_bound_is_attained_by_a_shock():
    rep = bd_bound(catalog("burgers_shock"), make_bump("standard_radial", d=1), 0.1, Box([-0.5], [0.5]))
    assert rep.passed
    assert rep.lhs == pytest.approx(rep.rhs, rel=1e-3)


def test_bd_bound_holds_on_smooth_field(bump2):
    assert bd_bound(catalog("taylor_green"), bump2, 0.1, Box([1.0, 1.0], [2.0, 2.0]), n=48).passed


def test_test_function_properties():
    phi = TestFunction([0.0, 0.0], 0.5)
    assert phi(np.zeros(2)) == 1.0
    assert phi(np.array([0.5, 0.0])) == 0.0
    with pytest.raises(ParameterError):
        TestFunction([0.0], -1.0)
