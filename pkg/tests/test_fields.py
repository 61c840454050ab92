import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drflux.domains import Box, PeriodicBox, Polygon
from drflux.errors import DomainError, ParameterError
from drflux.fields import (
    LABEL_DIR,
    LABEL_GRAD,
    LABEL_SYM,
    GridField,
    catalog,
    increment,
    mollify,
    read_grid,
    read_grid_csv,
    sample,
    total_variation,
    verify_increment_bound,
    write_grid,
    write_grid_csv,
)
from drflux.kernels import make_bump


@pytest.fixture(scope="module")
def shear():
    return catalog("shear_layer")


@pytest.fixture(scope="module")
def bump2():
    return make_bump("standard_radial", d=2)


def test_shear_evaluation(shear):
    np.testing.assert_array_equal(shear(np.array([0.3, -0.2])), [-1.0, 0.0])
    np.testing.assert_array_equal(shear(np.array([0.3, 0.0])), [1.0, 0.0])


def test_periodic_wrap(shear):
    np.testing.assert_array_equal(shear(np.array([2.3, 1.8])), shear(np.array([0.3, -0.2])))


def test_constant_everywhere():
    u = catalog("constant", c=[0.5, -1.5])
    x = np.random.default_rng(0).normal(size=(20, 2)) * 10
    np.testing.assert_array_equal(u(x), np.broadcast_to([0.5, -1.5], (20, 2)))


def test_unknown_catalog_name():
    with pytest.raises(ParameterError):
        catalog("vortex_street")


def test_polygon_outside_point_raises():
    with pytest.raises(DomainError):
        catalog("poly_stream")(np.array([1.5, 0.5]))


def test_poly_stream_tangent_on_boundary():
    u = catalog("poly_stream")
    assert abs(u(np.array([0.0, 0.5]))[0]) == 0.0
    assert abs(u(np.array([0.5, 1.0]))[1]) == 0.0


def test_grid_interpolation_of_linear_field(tmp_path):
    lin = catalog("linear", M=[[0, 1], [-1, 0]], domain=PeriodicBox(2, 2.0))
    h = 1 / 64
    pts_axis = -1 + h * (np.arange(128) + 0.5)
    X, Y = np.meshgrid(pts_axis, pts_axis, indexing="ij")
    vals = np.stack([Y, -X], axis=-1)
    g = GridField(Box([-1, -1], [1, 1]), h, vals, divergence_free=True)
    np.testing.assert_allclose(g(np.array([0.25, 0.25])), [0.25, -0.25], atol=1e-3)
    assert lin.divergence_free


def test_grid_rejects_nonfinite():
    vals = np.zeros((4, 4, 2))
    vals[1, 1, 0] = np.nan
    with pytest.raises(ParameterError):
        GridField(Box([0, 0], [1, 1]), 0.25, vals)


def test_grid_divergence_invariant():
    h = 0.1
    x = h * (np.arange(10) + 0.5)
    X, Y = np.meshgrid(x, x, indexing="ij")
    compressible = np.stack([X, Y], axis=-1)
    with pytest.raises(ParameterError):
        GridField(Box([0, 0], [1, 1]), h, compressible, divergence_free=True)


def test_grid_roundtrip_binary_and_csv(tmp_path):
    tg = catalog("taylor_green")
    g = sample(tg, 2 * np.pi / 32, divergence_free=True)
    write_grid(g, tmp_path / "tg.json")
    back = read_grid(tmp_path / "tg.json")
    np.testing.assert_array_equal(back.values, g.values)
    write_grid_csv(g, tmp_path / "tg.csv")
    back_csv = read_grid_csv(tmp_path / "tg.csv", domain=tg.domain)
    np.testing.assert_allclose(back_csv.values, g.values, rtol=0, atol=1e-15)


def test_missing_grid_file_names_path(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(FileNotFoundError, match="nope.json"):
        read_grid(missing)


def test_increment_examples(shear):
    np.testing.assert_array_equal(increment(shear, np.array([0.0, -0.1]), np.array([0.0, 0.3])), [2.0, 0.0])
    np.testing.assert_array_equal(increment(shear, np.array([0.4, 0.4]), np.zeros(2)), [0.0, 0.0])
    M = np.array([[1.0, 2.0], [3.0, -1.0]])
    lin = catalog("linear", M=M)
    xi = np.array([0.3, -0.7])
    np.testing.assert_allclose(increment(lin, np.array([5.0, 1.0]), xi), M @ xi, atol=1e-14)


def test_increment_leaving_polygon():
    with pytest.raises(DomainError):
        increment(catalog("poly_stream"), np.array([0.9, 0.5]), np.array([0.2, 0.0]))


def test_mollify_constant_and_linear(bump2):
    c = catalog("constant", c=[1.0, 2.0])
    np.testing.assert_allclose(mollify(c, bump2, 0.1)(np.array([[0.3, 0.2]])), [[1.0, 2.0]], atol=1e-12)
    M = np.array([[0.0, 1.0], [-2.0, 0.5]])
    lin = catalog("linear", M=M)
    x = np.array([[0.3, -0.4], [1.0, 2.0]])
    np.testing.assert_allclose(mollify(lin, bump2, 0.2)(x), x @ M.T, atol=1e-10)


def test_mollified_shear_vanishes_on_sheet(shear, bump2):
    v = mollify(shear, bump2, 0.1)(np.array([[0.3, 0.0]]))
    assert abs(v[0, 0]) < 1e-12


def test_mollified_shear_matches_direct_quadrature(shear, bump2):
    """Independent oracle: 1-D integral of the kernel marginal across the sheet."""
    from scipy.integrate import quad

    eps, y = 0.1, 0.05
    marginal = lambda s: quad(lambda t: float(bump2(np.array([t, s]))), -np.sqrt(1 - s * s), np.sqrt(1 - s * s))[0]
    # u_eps = P(z2 > -y/eps) - P(z2 < -y/eps)
    below = quad(marginal, -1, -y / eps)[0]
    expected = 1 - 2 * below
    got = mollify(shear, bump2, eps)(np.array([[0.3, y]]))[0, 0]
    # the default z-rule uses midpoint rows across the chords, good to ~1e-5
    assert abs(got - expected) < 2e-5


def test_mollify_rejects_large_eps(shear, bump2):
    with pytest.raises(ParameterError):
        mollify(shear, bump2, 1.5)


def test_mollify_polygon_restriction(bump2):
    m = mollify(catalog("poly_stream"), bump2, 0.1)
    m(np.array([[0.5, 0.5]]))
    with pytest.raises(DomainError):
        m(np.array([[0.05, 0.5]]))


def test_total_variation_examples(shear):
    for L in (0.5, 1.0):
        assert total_variation(shear, Box([-L, -L], [L, L]), LABEL_GRAD).total == pytest.approx(4 * L, rel=1e-12)
    assert total_variation(shear, Box([-1, -1], [1, 1]), LABEL_DIR, z=[1.0, 0.0]).total == 0.0
    c = catalog("constant", c=[1.0, 1.0])
    assert total_variation(c, Box([-1, -1], [1, 1]), LABEL_GRAD).total == 0.0


def test_total_variation_weights_nonnegative():
    tg = catalog("taylor_green")
    nu = total_variation(tg, Box([0, 0], [2, 2]), LABEL_SYM)
    assert np.all(nu.weights >= 0)
    assert nu.total == pytest.approx(np.sum(nu.weights))


def test_increment_bound_shear_example():
    u = catalog("shear_layer", side=4.0)
    rep = verify_increment_bound(u, Box([-1, -1], [1, 1]), [0.0, 1.0], 0.1)
    assert rep.lhs == pytest.approx(0.4, rel=1e-9)
    assert rep.rhs == pytest.approx(0.44, rel=1e-9)
    assert rep.passed


def test_increment_bound_linear_closed_form():
    M = np.array([[0.2, 1.0], [0.0, -0.2]])
    u = catalog("linear", M=M)
    z = np.array([0.6, 0.8])
    region = Box([0, 0], [1, 1])
    rep = verify_increment_bound(u, region, z, 0.1)
    assert rep.lhs == pytest.approx(np.linalg.norm(M @ z) * 0.1, rel=1e-9)
    assert rep.passed and rep.passed_bd


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-0.9, 0.9), y=st.floats(-0.9, 0.9), dy=st.floats(-0.5, 0.5))
def test_shear_increment_is_jump_or_zero(x, y, dy):
    u = catalog("shear_layer")
    d = increment(u, np.array([x, y]), np.array([0.0, dy]))
    assert d[1] == 0.0 and d[0] in (-2.0, 0.0, 2.0)
