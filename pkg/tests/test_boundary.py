import math

import numpy as np
import pytest

from drflux import boundary as bd
from drflux.domains import Polygon
from drflux.errors import BoundaryError, ParameterError, RefusalError
from drflux.fields import catalog
from drflux.flux import TestFunction
from drflux.kernels import make_bump

SQ = Polygon.unit_square()
L = Polygon.l_shape()


def test_distance_examples():
    assert bd.distance(SQ, np.array([0.5, 0.5])) == pytest.approx(0.5)
    assert bd.distance(SQ, np.array([0.1, 0.5])) == pytest.approx(0.1)
    # the edge x = 1 only spans 1 <= y <= 2, so (0.9, 0.9) is nearest to the reflex vertex (1, 1)
    assert bd.distance(L, np.array([0.9, 0.9])) == pytest.approx(math.sqrt(0.02), rel=1e-12)
    assert bd.distance(L, np.array([0.9, 1.5])) == pytest.approx(0.1, rel=1e-12)


def test_distance_matches_shapely():
    from shapely.geometry import Point
    from shapely.geometry import Polygon as ShapelyPolygon

    ring = ShapelyPolygon(L.vertices).exterior
    x = np.random.default_rng(1).uniform(0, 2, size=(400, 2))
    x = x[L.contains(x)]
    np.testing.assert_allclose(bd.distance(L, x), [ring.distance(Point(p)) for p in x], atol=1e-12)


def test_distance_gradient_examples():
    g, unique = bd.distance_gradient(SQ, np.array([0.1, 0.5]))
    np.testing.assert_allclose(g, [1.0, 0.0])
    assert unique
    g, unique = bd.distance_gradient(SQ, np.array([0.5, 0.5]))
    assert not unique
    np.testing.assert_allclose(g, [0.0, 1.0])  # edge 0 is the bottom edge, inward normal +e2


def test_distance_gradient_on_boundary_raises():
    with pytest.raises(BoundaryError):
        bd.distance_gradient(SQ, np.array([0.0, 0.5]))


def test_unit_gradient_at_random_points():
    x = np.random.default_rng(0).uniform(0, 2, size=(20000, 2))
    x = x[L.contains(x)][:10000]
    g, _ = bd.distance_gradient(L, x)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-12)


def test_cutoff_gradient_examples():
    eps = 0.1
    wedge = bd.CutoffFamily(SQ, eps, "wedge")
    np.testing.assert_allclose(bd.cutoff_gradient(wedge, np.array([0.09, 0.5])), [10.0, 0.0])
    for variant in bd.VARIANTS:
        fam = bd.CutoffFamily(SQ, eps, variant)
        np.testing.assert_array_equal(bd.cutoff_gradient(fam, np.array([0.3, 0.5])), [0.0, 0.0])
    annular = bd.CutoffFamily(SQ, eps, "annular")
    np.testing.assert_allclose(bd.cutoff_gradient(annular, np.array([0.15, 0.5])), [10.0, 0.0])
    with pytest.raises(ParameterError):
        bd.CutoffFamily(SQ, eps, "gaussian")


def test_cutoff_gradient_mass_is_perimeter():
    eps = 0.01
    assert bd.cutoff_gradient_mass(SQ, eps) == pytest.approx(4.0, rel=0.02)
    # exact band areas over eps: 4(1 - eps) for the wedge, 4(1 - 3 eps) for the annulus
    assert bd.cutoff_gradient_mass(SQ, eps) == pytest.approx(4 * (1 - eps), rel=1e-12)
    assert bd.cutoff_gradient_mass(SQ, eps, "annular") == pytest.approx(4 * (1 - 3 * eps), rel=1e-12)


def test_band_rule_volume_matches_shapely():
    """Band volumes equal the area lost by an inward buffer (rounded at the reflex corner)."""
    from shapely.geometry import Polygon as ShapelyPolygon

    eps = 0.05
    for dom in (L, Polygon([(0, 0), (3, 0), (1, 2)])):
        body = ShapelyPolygon(dom.vertices)
        exact = body.area - body.buffer(-eps, join_style="round", quad_segs=512).area
        assert bd.band_rule(dom, 0.0, eps).volume == pytest.approx(exact, rel=1e-7)


def test_boundary_flux_examples():
    zero = catalog("constant", c=[0.0, 0.0], domain=SQ)
    assert bd.boundary_flux(zero, SQ, 0.05) == 0.0
    one = catalog("constant", c=[1.0, 0.0], domain=SQ)
    assert bd.boundary_flux(one, SQ, 0.01) == pytest.approx(2.0, rel=0.02)
    ps = catalog("poly_stream")
    flux = [bd.boundary_flux(ps, SQ, e) for e in (0.1, 0.05, 0.025)]
    assert flux[0] > flux[1] > flux[2] > 0


def test_poly_stream_flux_against_direct_quadrature():
    """Oracle: the bottom quarter of the band, where d = y and |u . grad d| = |1 - 2x| y (1 - y).

    The y-integral is closed form; the x-integral is done by scipy quad
    split at the kinks.  The four quarters are congruent.
    """
    from scipy.integrate import quad

    eps = 0.1
    inner = lambda h: h * h / 2 - h**3 / 3
    f = lambda x: abs(1 - 2 * x) * inner(min(x, 1 - x, eps)) / eps
    quarter = sum(quad(f, a, b, epsabs=1e-14)[0] for a, b in [(0, eps), (eps, 0.5), (0.5, 1 - eps), (1 - eps, 1)])
    assert bd.boundary_flux(catalog("poly_stream"), SQ, eps) == pytest.approx(4 * quarter, rel=1e-9)


def test_normal_trace_examples():
    zero = catalog("constant", c=[0.0, 0.0], domain=SQ)
    rep = bd.normal_trace(zero, SQ, np.array([0.5, 0.0]))
    assert all(a == 0.0 for a in rep.averages)
    one = catalog("constant", c=[1.0, 0.0], domain=SQ)
    rep = bd.normal_trace(one, SQ, np.array([0.0, 0.5]))
    np.testing.assert_allclose(rep.signed_averages, math.pi / 2, rtol=1e-6)
    ps = catalog("poly_stream")
    avg = bd.normal_trace(ps, SQ, np.array([0.5, 0.0])).averages
    assert all(b < a for a, b in zip(avg[1:], avg[2:]))


def test_normal_trace_flags_vertices_and_checks_radii():
    one = catalog("constant", c=[1.0, 0.0], domain=SQ)
    rep = bd.normal_trace(one, SQ, np.array([0.0, 0.0]))
    assert rep.vertex and all(math.isnan(a) for a in rep.averages)
    with pytest.raises(ParameterError):
        bd.normal_trace(one, SQ, np.array([0.5, 0.0]), radii=[0.1, 0.2])


def test_minkowski_examples():
    seg = bd.boundary_segments(SQ, [0])
    assert bd.minkowski_content(SQ, seg, 1e-3) == pytest.approx(1 + math.pi * 1e-3 / 2, rel=1e-4)
    assert bd.minkowski_content(SQ, bd.boundary_segments(SQ), 1e-3) == pytest.approx(4.0, rel=0.01)
    assert bd.minkowski_content(SQ, seg, 1e-3, "interior") == pytest.approx(1.0, rel=1e-3)
    assert bd.minkowski_content(L, bd.boundary_segments(L), 1e-3) == pytest.approx(8.0, rel=0.01)
    rect = Polygon.rectangle((0, 0), (3, 0.5))
    assert bd.minkowski_content(rect, bd.boundary_segments(rect), 1e-3) == pytest.approx(7.0, rel=0.01)


def test_energy_check_poly_stream():
    rep = bd.energy_conservation_check(catalog("poly_stream"), [0.1, 0.05, 0.025],
                                       TestFunction([0.5, 0.5], 0.3, domain=SQ),
                                       make_bump("standard_radial", d=2), horizons=(1.0, 10.0))
    assert rep.verdict == "consistent with conservation"
    assert rep.interior_certificate <= 1e-2
    assert rep.boundary_flux[-1] < rep.boundary_flux[0]
    for f, b in zip(rep.energy_flux, rep.energy_flux_bound):
        assert f <= b + 1e-15


def test_energy_check_shear_skips_boundary():
    rep = bd.energy_conservation_check(catalog("shear_layer"), [], TestFunction([0.0, 0.0], 0.5),
                                       make_bump("standard_radial", d=2), horizons=(1.0, 10.0))
    assert rep.boundary_skipped and rep.eps == []
    assert rep.interior.certificates[-1] < rep.interior.certificates[0]


def test_energy_check_refuses_crossing_field():
    with pytest.raises(RefusalError):
        bd.energy_conservation_check(catalog("constant", c=[1.0, 0.0], domain=SQ), [0.1, 0.05],
                                     TestFunction([0.5, 0.5], 0.3, domain=SQ), make_bump("standard_radial", d=2))
