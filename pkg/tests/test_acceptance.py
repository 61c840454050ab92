"""Acceptance criteria 1-12.  Each test records one pass/fail line (see conftest)."""

import math

import numpy as np
import pytest

from drflux import boundary as bd
from drflux import cli
from drflux.domains import Box, Polygon
from drflux.fields import catalog, verify_increment_bound
from drflux.flux import (
    TestFunction,
    directional_flux,
    flux_convergence,
    holder_exponents,
    holder_modulus,
    pairing,
    reconstruct_pairing,
    reconstruct_scale,
    reynolds_flux,
    total_flux,
)
from drflux.kernels import make_bump
from drflux.optimize import conservation_report, flow_averaged_kernel, objective
from drflux.scenario import read_csv

SHEAR_M = np.array([[0.0, 1.0], [0.0, 0.0]])
EPS4 = (0.2, 0.1, 0.05, 0.025)


def test_criterion_01_alberti_bound(criterion):
    theta = make_bump("standard_radial", d=2)
    worst, details = -math.inf, []
    for T in (1, 2, 5, 10):
        obj = objective(flow_averaged_kernel(theta, SHEAR_M, T), SHEAR_M)
        margin = obj.value - (2 / T + 5 * obj.error)
        worst = max(worst, margin)
        details.append(f"T={T}: {obj.value:.4f} <= {2 / T:.3f}")
    criterion(1, worst <= 0, "; ".join(details))


def test_criterion_02_divergence_case(criterion):
    a = 2.0
    eye = np.eye(2)
    fixed = [objective(make_bump(kind, d=2), eye).value
             for kind in ("standard_radial", "polynomial_radial", "tensor", "indicator_smoothed")]
    theta = make_bump("standard_radial", d=2)
    rho = {T: objective(flow_averaged_kernel(theta, eye, T), eye) for T in (1, 2, 5)}
    lower_ok = min(fixed + [r.value for r in rho.values()]) >= a - 1e-3
    upper_ok = all(r.value <= a * (1 + math.exp(a * T)) / abs(math.expm1(a * T)) + 5 * r.error
                   for T, r in rho.items())
    converged = abs(rho[5].value - a) <= 0.01 * a
    detail = (f"min fixed-kernel objective {min(fixed):.4f}; rho_T objectives "
              + ", ".join(f"T={T}: {r.value:.5f}" for T, r in rho.items()))
    criterion(2, lower_ok and upper_ok and converged, detail)


def test_criterion_03_compressible_dissipation(criterion):
    u = catalog("burgers_shock")
    region = Box([-0.5], [0.5])
    values = {}
    for kind in ("standard_radial", "polynomial_radial", "indicator_smoothed"):
        k = make_bump(kind, d=1)
        values[kind] = [total_flux(u, k, e, region).signed for e in EPS4]
    allv = np.array(list(values.values()))
    within = bool(np.all(np.abs(allv - 2) <= 0.02))
    spread = float(np.max((allv.max(axis=0) - allv.min(axis=0)) / 2))
    criterion(3, within and spread <= 0.01,
              f"totals in [{allv.min():.5f}, {allv.max():.5f}] (target 2 +- 1%), kernel spread {spread:.2e}")


def test_criterion_04_incompressible_conservation(criterion):
    u = catalog("shear_layer")
    region = Box([-0.5, -0.5], [0.5, 0.5])
    tol = 1e-3 * u.sup_norm() ** 3 * region.volume
    worst = 0.0
    for kind in ("standard_radial", "polynomial_radial", "tensor"):
        k = make_bump(kind, d=2)
        for e in EPS4:
            worst = max(worst, abs(total_flux(u, k, e, region).signed))
    phi = TestFunction([0.0, 0.0], 0.5)
    rep = conservation_report(u, phi, make_bump("standard_radial", d=2), (1.0, 50.0))
    ratio = rep.certificates[-1] / rep.certificates[0]
    criterion(4, worst <= tol and ratio <= 0.05,
              f"max |total flux| {worst:.1e} (tol {tol:.0e}); certificate T=50/T=1 = {ratio:.4f} (target <= 0.05)")


def test_criterion_05_directional_structure(criterion):
    u = catalog("shear_layer")
    phi = TestFunction([0.0, 0.0], 0.5)
    table = directional_flux(u, 0.025, phi)
    # Phi = int phi(x1, 0) dx1 = r * 16/15 for k = 2
    big_phi = phi.radius * 16 / 15
    oracle = np.stack([8 * table.z[:, 1] * big_phi, np.zeros(len(table.z))], axis=1)
    scale = float(np.max(np.abs(oracle)))
    match = float(np.max(np.abs(table.V - oracle))) / scale
    v0_exact = bool(np.all(table.V[0] == 0.0) and np.all(table.z[0] == 0.0))
    odd_ok = table.odd_residual <= 10 * 1e-10 * scale
    rng = np.random.default_rng(5)
    pairs = []
    while len(pairs) < 50:
        z = rng.uniform(-1, 1, size=(2, 2))
        if np.all(np.linalg.norm(z, axis=1) <= 1):
            pairs.append((z[0], z[1]))
    bound = 12 * u.sup_norm() ** 2 * 2 * (2 * phi.radius + 0.2)
    maxima = [holder_modulus(u, e, phi, pairs, "BV").max_ratio for e in (0.1, 0.05, 0.025)]
    holder_ok = max(maxima) <= bound and max(maxima) <= 2 * min(maxima)
    criterion(5, match <= 0.02 and v0_exact and odd_ok and holder_ok,
              f"max |V - (8 z2 Phi, 0)| / max|V| = {match:.2e}; V(0)=0 exact: {v0_exact}; "
              f"odd residual {table.odd_residual:.1e}; BV Hoelder max ratios {[round(m, 3) for m in maxima]}")


def test_criterion_06_holder_exponents(criterion):
    from fractions import Fraction as F

    got = {p: holder_exponents(p) for p in (2, 3, 4)}
    want = {2: (F(1, 2), F(1, 2)), 3: (F(1, 3), F(2, 3)), 4: (F(3, 8), F(5, 8))}
    ok = all((got[p].alpha, got[p].beta) == want[p] for p in want)
    criterion(6, ok, ", ".join(f"p={p}: ({got[p].alpha}, {got[p].beta})" for p in got))


def _increment_cases():
    sq = Polygon.unit_square()
    return [
        ("shear_layer", catalog("shear_layer"), [Box([-0.5, -0.5], [0.5, 0.5]), Box([-0.3, -0.8], [0.4, 0.1]),
                                                 Box([0.1, 0.2], [0.6, 0.7])]),
        ("burgers_shock", catalog("burgers_shock"), [Box([-0.5], [0.5]), Box([-0.9], [0.2]), Box([0.1], [0.7])]),
        ("poly_stream", catalog("poly_stream"), [Box([0.3, 0.3], [0.7, 0.7]), Box([0.25, 0.4], [0.5, 0.75]),
                                                 Box([0.5, 0.2], [0.75, 0.45])]),
        ("taylor_green", catalog("taylor_green"), [Box([1, 1], [2, 2]), Box([0.5, 2.5], [2.5, 3.5]),
                                                   Box([3, 0.2], [4.5, 1.7])]),
        ("linear", catalog("linear", M=[[0.3, 1.0], [-0.5, -0.3]]),
         [Box([-1, -1], [1, 1]), Box([0, 0], [0.5, 2]), Box([2, -3], [3, -1])]),
        ("constant", catalog("constant", c=[0.7, -0.2], domain=sq), [Box([0.3, 0.3], [0.7, 0.7]),
                                                                      Box([0.2, 0.4], [0.5, 0.6]),
                                                                      Box([0.45, 0.2], [0.8, 0.5])]),
    ]


def _directions(d):
    if d == 1:
        return [np.array([s]) for s in (1, -1, 0.75, -0.75, 0.5, -0.5, 0.25, -0.25)]
    ang = np.arange(8) * np.pi / 4 + 0.1
    return [np.array([math.cos(a), math.sin(a)]) * (1.0 if i % 2 == 0 else 0.6) for i, a in enumerate(ang)]


def test_criterion_07_increment_estimates(criterion):
    failures, checked, worst = [], 0, 0.0
    for name, u, regions in _increment_cases():
        for region in regions:
            for z in _directions(u.dimension):
                for e in (0.1, 0.05, 0.025):
                    rep = verify_increment_bound(u, region, z, e, n=128)
                    checked += 1
                    if rep.rhs > 0:
                        worst = max(worst, rep.lhs / rep.rhs)
                    if not (rep.lhs <= rep.rhs * 1.01 + 1e-12 and rep.passed_bd):
                        failures.append((name, region, z, e, rep))
    criterion(7, not failures, f"{checked} cases, {len(failures)} failures, worst lhs/rhs {worst:.4f}")


def test_criterion_08_boundary_machinery(criterion):
    sq = Polygon.unit_square()
    mink = bd.minkowski_content(sq, bd.boundary_segments(sq), 1e-3)
    ps = catalog("poly_stream")
    flux = [bd.boundary_flux(ps, sq, e) for e in (0.1, 0.05, 0.025, 0.0125)]
    ratio = flux[-1] / flux[0]
    pts, _ = sq.sample_boundary(2)
    monotone = True
    for p in pts:
        avg = bd.normal_trace(ps, sq, p).averages[-4:]
        monotone &= all(b < a for a, b in zip(avg, avg[1:]))
    one = catalog("constant", c=[1.0, 0.0], domain=sq)
    flux_one = bd.boundary_flux(one, sq, 0.0125)
    ok = abs(mink - 4) <= 0.04 and ratio <= 0.05 and monotone and abs(flux_one - 2) <= 0.04
    criterion(8, ok, f"Minkowski {mink:.5f}; poly_stream flux ratio {ratio:.4f} (target <= 0.05); "
                     f"trace averages monotone at 8 points: {monotone}; u=(1,0) flux {flux_one:.4f}")


def test_criterion_09_distance_geometry(criterion):
    rng = np.random.default_rng(9)
    lip_ok, grad_ok = True, True
    lshape = Polygon.l_shape()
    tri = Polygon([(0, 0), (3, 0), (1, 2)])
    for dom in (Polygon.unit_square(), lshape, tri):
        lo, hi = dom.bounds()
        x = rng.uniform(lo, hi, size=(40000, 2))
        x = x[dom.contains(x)][:10000]
        y = rng.uniform(lo, hi, size=(40000, 2))
        y = y[dom.contains(y)][:len(x)]
        lip_ok &= bool(np.all(np.abs(bd.distance(dom, x) - bd.distance(dom, y))
                              <= np.linalg.norm(x - y, axis=1) + 1e-10))
        g, _ = bd.distance_gradient(dom, x)
        grad_ok &= bool(np.all(np.abs(np.linalg.norm(g, axis=1) - 1) <= 1e-10))
    radii = [2.0**-k for k in range(3, 8)]
    dev_ok, worst = True, 0.0
    for dom in (Polygon.unit_square(), lshape, tri):
        mids = (dom.a + dom.b) / 2
        for m in mids:
            dev = bd.normal_deviation(dom, m, radii)
            worst = max(worst, max(dev))
            dev_ok &= all(b <= a + 1e-12 for a, b in zip(dev, dev[1:]))
    criterion(9, lip_ok and grad_ok and dev_ok,
              f"1-Lipschitz {lip_ok}; |grad d|=1 {grad_ok}; edge-midpoint deviation nonincreasing {dev_ok} "
              f"(max {worst:.1e})")


def test_criterion_10_cet_equivalence(criterion):
    u = catalog("burgers_shock")
    k = make_bump("standard_radial", d=1)
    phi = TestFunction([0.0], 0.5)
    eps = [0.2, 0.1, 0.05, 0.025]
    dr = flux_convergence(u, k, eps, phi=phi).extrapolate
    rey = [reynolds_flux(u, k, e, phi) for e in eps]
    from drflux.flux import richardson

    rey_limit, _ = richardson(eps, rey)
    rel = abs(rey_limit - dr) / abs(dr)
    criterion(10, rel <= 0.05, f"Reynolds-stress flux {rey_limit:.4f} vs mollified flux {dr:.4f} "
                               f"(relative gap {rel:.3f}, target <= 0.05)")


def test_criterion_11_reconstruction(criterion):
    cases = [(catalog("shear_layer"), TestFunction([0.0, 0.0], 0.5), 0.05, 2),
             (catalog("burgers_shock"), TestFunction([0.0], 0.5), 0.05, 1)]
    rows, ok = [], True
    for u, phi, eps, d in cases:
        table = directional_flux(u, eps, phi)
        for kind in ("standard_radial", "polynomial_radial"):
            k = make_bump(kind, d=d)
            direct = pairing(u, k, eps, phi)
            rec = reconstruct_pairing(table, k)
            scale = max(abs(direct), reconstruct_scale(table, k))
            good = abs(rec - direct) <= 0.01 * scale
            ok &= good
            rows.append(f"{u.name}/{kind}: {rec:.4g} vs {direct:.4g}")
    criterion(11, ok, "; ".join(rows))


def test_criterion_12_determinism(criterion, tmp_path):
    scenarios = {
        "det_flux": '{"id": "det_flux", "field": "burgers_shock", "pipeline": "flux", '
                    '"kernels": ["standard_radial", "polynomial_radial"]}',
        "det_boundary": '{"id": "det_boundary", "field": "poly_stream", "pipeline": "boundary", '
                        '"eps": [0.1, 0.05, 0.025, 0.0125]}',
    }
    blobs = {"a": {}, "b": {}}
    codes = []
    for name, text in scenarios.items():
        path = tmp_path / f"{name}.json"
        path.write_text(text)
        for run in blobs:
            out = tmp_path / run
            codes.append(cli.main(["run", str(path), "--deterministic", "--out", str(out)]))
            for f in sorted((out / name).glob("*.csv")):
                blobs[run][f"{name}/{f.name}"] = f.read_bytes()
    same = blobs["a"] == blobs["b"] and len(blobs["a"]) >= 3
    roundtrip = all(read_csv(tmp_path / "a" / name) for name in blobs["a"])
    criterion(12, same and roundtrip and codes == [0] * 4,
              f"{len(blobs['a'])} CSV files byte-identical across two runs: {same}")


@pytest.mark.parametrize("p", [1, 0.5])
def test_holder_exponents_reject_p_le_one(p):
    from drflux.errors import ParameterError

    with pytest.raises(ParameterError):
        holder_exponents(p)
