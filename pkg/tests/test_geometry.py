import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from glfield.geometry import (JacobianDomainError, LevelSetQuery, OutOfChartError, Window,
                              constant, distance_functions, holder, level_sets, linear_x1,
                              make_profile, shifted_linear)
from glfield.grid import DomainGrid
from glfield.reference import THETA0


def test_disk_boundary_coords_radial(disk):
    s, t = disk.boundary_coords(np.array([[0.9, 0.0]]))
    assert t[0] == pytest.approx(0.1, abs=1e-10)
    assert np.allclose(disk.gamma(s), [[1.0, 0.0]], atol=1e-10)


def test_disk_boundary_point_has_zero_depth(disk):
    p = np.array([[np.cos(1.3), np.sin(1.3)]])
    _, t = disk.boundary_coords(p)
    assert t[0] == pytest.approx(0.0, abs=1e-12)


def test_outside_tubular_neighbourhood_raises(disk):
    with pytest.raises(OutOfChartError):
        disk.boundary_coords(np.array([[0.0, 0.0]]))


def test_orientation_and_unit_speed(wobbly):
    s = np.linspace(0, wobbly.boundary_length, 400, endpoint=False)
    tan, nu = wobbly.tangent(s), wobbly.normal(s)
    det = tan[:, 0] * nu[:, 1] - tan[:, 1] * nu[:, 0]
    assert np.allclose(det, 1.0)
    ds = 1e-5
    speed = np.linalg.norm(wobbly.gamma(s + ds) - wobbly.gamma(s - ds), axis=1) / (2 * ds)
    assert np.max(np.abs(speed - 1.0)) < 1e-8
    assert np.allclose(wobbly.gamma(s + wobbly.boundary_length), wobbly.gamma(s), atol=1e-12)
    # the inward normal points inside
    p = wobbly.gamma(s) + 1e-3 * nu
    assert np.all(wobbly.contains(p[:, 0], p[:, 1]))


def test_curvature_matches_finite_differences(wobbly):
    s = np.linspace(0, wobbly.boundary_length, 50, endpoint=False)
    d = 1e-3
    g = [wobbly.gamma(s + k * d) for k in (-2, -1, 0, 1, 2)]
    g1 = (g[0] - 8 * g[1] + 8 * g[3] - g[4]) / (12 * d)
    g2 = (-g[0] + 16 * g[1] - 30 * g[2] + 16 * g[3] - g[4]) / (12 * d * d)
    k_fd = (g1[:, 0] * g2[:, 1] - g1[:, 1] * g2[:, 0]) / np.linalg.norm(g1, axis=1) ** 3
    assert np.max(np.abs(k_fd - wobbly.curvature(s))) < 1e-6


def test_jacobian(disk, wobbly):
    assert disk.jacobian(0.0, 0.1) == pytest.approx(0.9)
    s = np.linspace(0, wobbly.boundary_length, 200)
    assert np.allclose(wobbly.jacobian(s, np.zeros_like(s)), 1.0)
    assert np.all(wobbly.jacobian(s, np.full_like(s, wobbly.tubular_width)) > 0)
    with pytest.raises(JacobianDomainError):
        disk.jacobian(0.0, -0.01)
    with pytest.raises(JacobianDomainError):
        disk.jacobian(0.0, disk.tubular_width * 1.01)


def test_tubular_width_of_disk(disk):
    # injectivity is lost at the centre, halved for safety
    assert disk.tubular_width == pytest.approx(0.5, abs=1e-3)


def _foot_by_bisection(dom, x):
    """Foot point by nested bisection: outer on depth t, inner on the normal line."""
    s_grid = np.linspace(0, dom.boundary_length, 4000, endpoint=False)
    d = np.linalg.norm(dom.gamma(s_grid) - x, axis=1)
    s0 = s_grid[np.argmin(d)]
    step = dom.boundary_length / 4000

    def orth(s):
        return float(np.dot(x - dom.gamma(np.array([s]))[0], dom.tangent(np.array([s]))[0]))
    s = brentq(orth, s0 - 2 * step, s0 + 2 * step, xtol=1e-14)
    return s, float(np.linalg.norm(x - dom.gamma(np.array([s]))[0]))


def test_round_trip_against_bisection_oracle(wobbly, rng):
    s = rng.uniform(0, wobbly.boundary_length, 20)
    t = rng.uniform(0, 0.95 * wobbly.tubular_width, 20)
    pts = wobbly.tubular(s, t)
    s2, t2 = wobbly.boundary_coords(pts)
    for p, a, b in zip(pts, s2, t2):
        so, to = _foot_by_bisection(wobbly, p)
        assert b == pytest.approx(to, abs=1e-9)
        assert wobbly.arc_distance(a, so) < 1e-8


def test_round_trip_thousand_points(wobbly, rng):
    s = rng.uniform(0, wobbly.boundary_length, 1000)
    t = rng.uniform(0, 0.99 * wobbly.tubular_width, 1000)
    pts = wobbly.tubular(s, t)
    s2, t2 = wobbly.boundary_coords(pts)
    assert np.max(np.linalg.norm(wobbly.tubular(s2, t2) - pts, axis=1)) < 1e-7


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0.0, 0.45))
def test_round_trip_property_disk(theta, t):
    from glfield.geometry import StarDomain
    disk = StarDomain.disk()
    s = theta  # unit circle: arc length equals angle
    p = disk.tubular(np.array([s]), np.array([t]))
    s2, t2 = disk.boundary_coords(p)
    assert np.allclose(disk.tubular(s2, t2), p, atol=1e-8)
    assert t2[0] == pytest.approx(t, abs=1e-9)


@pytest.fixture(scope="module")
def grid40(disk):
    return DomainGrid(disk, 1 / 40)


def test_level_sets_trivial_and_monotone(grid40):
    one = constant(1.0)
    v = level_sets(one, LevelSetQuery(2.0, "bulk"), grid40)
    w = level_sets(one, LevelSetQuery(2.0, "omega"), grid40)
    assert v.mask.all() and not w.mask.any() and w.measure == 0.0
    f = linear_x1()
    prev_v, prev_w = None, None
    for eps in (0.1, 0.3, 0.5, 0.9):
        v = level_sets(f, LevelSetQuery(eps, "bulk"), grid40).mask
        w = level_sets(f, LevelSetQuery(eps, "omega"), grid40).mask
        if prev_v is not None:
            assert np.all(v[prev_v]) and not np.any(w & ~prev_w)
        prev_v, prev_w = v, w


def test_level_set_measure_against_quadrature(grid40):
    # |{|x1| > 1/2} in the unit disk| by Gauss-Legendre quadrature in x1
    xs, ws = np.polynomial.legendre.leggauss(200)
    x = 0.75 + 0.25 * xs
    exact = 2 * np.sum(0.25 * ws * 2 * np.sqrt(1 - x * x))
    m = level_sets(linear_x1(), LevelSetQuery(0.5, "omega"), grid40).measure
    assert m == pytest.approx(exact, abs=2 * grid40.h)


def test_boundary_level_set_arc_length(grid40):
    eps = THETA0 * 0.9
    m = level_sets(linear_x1(), LevelSetQuery(eps, "boundary"), grid40, theta0=THETA0).measure
    # |cos s| <= 0.9 on the unit circle
    exact = 4 * (np.pi / 2 - np.arccos(0.9))
    assert m == pytest.approx(exact, abs=1e-2)


def test_level_set_query_validation():
    with pytest.raises(ValueError):
        LevelSetQuery(0.0)
    with pytest.raises(ValueError):
        LevelSetQuery(1.0, "sideways")


def test_distance_functions_example(grid40):
    d = distance_functions(linear_x1(), 0.5, grid40)
    i = np.argmin(np.hypot(grid40.x - 0.8, grid40.y))
    assert d.t[i] == pytest.approx(0.2, abs=grid40.h / 4)
    assert d.zeta[i] == pytest.approx(0.3, abs=grid40.h / 4)
    m = d.omega & np.isfinite(d.zeta)
    assert np.all(d.t[m] <= d.zeta[m] + 1e-12)
    assert np.all(d.t[~d.omega] == 0) and np.all(d.zeta[~d.omega] == 0)


def test_distance_functions_empty_and_degenerate(grid40, disk):
    d = distance_functions(linear_x1(), 2.0, grid40)
    assert not d.t.any() and not d.zeta.any()
    d = distance_functions(constant(1.0), 0.5, grid40)
    assert d.degenerate
    assert np.allclose(d.zeta[d.omega], disk.diameter)


def test_betas(disk):
    for c in (1.0, -2.5):
        b0, b1 = constant(c).betas(disk)
        assert b0 == pytest.approx(abs(c)) and b1 == pytest.approx(abs(c))
    for prof in (linear_x1(), shifted_linear(0.3), holder(0.2, 0.5)):
        b0, b1 = prof.betas(disk)
        assert b1 <= b0
    b0, b1 = shifted_linear(0.3).betas(disk)
    assert b0 == pytest.approx(1.3, abs=1e-3)


def test_holder_quotient_bounded(disk):
    assert linear_x1().holder_quotient(disk) <= 1.0 + 1e-9
    assert holder(0.0, 0.5).holder_quotient(disk) <= 2.0


def test_tabulated_profile(tmp_path, disk):
    x = np.linspace(-1, 1, 21)
    X, Y = np.meshgrid(x, x)
    p = tmp_path / "b0.csv"
    with open(p, "w") as fh:
        fh.write("x1,x2,B0\n")
        for a, b in zip(X.ravel(), Y.ravel()):
            fh.write(f"{a},{b},{2 * a + b}\n")
    prof = make_profile({"kind": "tabulated", "path": str(p)})
    assert prof(0.33, -0.21) == pytest.approx(2 * 0.33 - 0.21)


def test_window_containment(disk):
    assert Window((0.0, 0.0), 0.5).contained_in(disk)
    assert not Window((0.8, 0.0), 0.3).contained_in(disk)
    assert Window((1.0, 0.0), 0.1, "boundary").contained_in(disk)
    with pytest.raises(ValueError):
        Window((0, 0), -1.0)
