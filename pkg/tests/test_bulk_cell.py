import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glfield.bulk_cell import (CellProblem, GCurve, GEstimate, cell_energy, cell_functional,
                               check_monotone, fit_inverse_r, g_estimate)
from glfield.lattice import covariant_laplacian, rdot


def test_problem_validation():
    with pytest.raises(ValueError):
        CellProblem(b=0.5, r=0.5)
    with pytest.raises(ValueError):
        CellProblem(b=4.0, r=8, h=0.125)  # h sqrt(b) = 0.25
    with pytest.raises(ValueError):
        CellProblem(b=0.5, r=8.1)
    with pytest.raises(ValueError):
        CellProblem(b=0.5, r=8, bc="periodic")


def test_large_b_cell_energy_vanishes():
    res = cell_energy(CellProblem(1.2, 16, "dirichlet"), restarts=1)
    assert res.energy <= 0.0
    assert abs(res.per_area) < 0.02


def test_zero_field_dirichlet_cell():
    res = cell_energy(CellProblem(0.0, 16, "dirichlet"), restarts=1)
    assert -0.5 < res.per_area < -0.4
    small = cell_energy(CellProblem(0.0, 8, "dirichlet"), restarts=1)
    assert res.per_area < small.per_area  # approaches -1/2 as r grows


@pytest.mark.parametrize("b", [0.0, 0.5, 1.0, 1.5])
def test_neumann_below_dirichlet(b):
    eD = cell_energy(CellProblem(b, 8, "dirichlet"), restarts=1).energy
    eN = cell_energy(CellProblem(b, 8, "neumann"), restarts=1).energy
    assert eN <= eD + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 1.5))
def test_cell_gauge_invariance(seed, b):
    p = CellProblem(b, 4, "neumann")
    rng = np.random.default_rng(seed)
    k = rng.uniform(-1, 1, 4)

    def chi(x, y):
        return k[0] * np.sin(x + k[1] * y) + k[2] * x * y + k[3] * np.cos(2 * y)
    lat, f1 = cell_functional(p)
    _, f2 = cell_functional(p, gauge_shift=chi)
    u = rng.standard_normal(lat.x.size) + 1j * rng.standard_normal(lat.x.size)
    e1 = f1.energy(u)
    e2 = f2.energy(np.exp(1j * chi(lat.x, lat.y)) * u)
    assert abs(e1 - e2) <= 1e-12 * abs(e1)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_cell_gradient_finite_differences(seed):
    lat, f = cell_functional(CellProblem(0.7, 4))
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(lat.x.size) + 1j * rng.standard_normal(lat.x.size)
    d = rng.standard_normal(u.size) + 1j * rng.standard_normal(u.size)
    eps = 1e-5
    fd = (f.energy(u + eps * d) - f.energy(u - eps * d)) / (2 * eps)
    assert fd == pytest.approx(rdot(f.gradient(u), d), rel=1e-6)


@pytest.mark.parametrize("b", [0.5, 1.0, 1.5])
def test_dirichlet_quadratic_part_spectral_bound(b):
    import scipy.sparse.linalg as spla
    p = CellProblem(b, 8, "dirichlet")
    lat, f = cell_functional(p)
    free = np.nonzero(~lat.boundary)[0]
    L = (b * f.L)[free][:, free].tocsc()
    M = np.diag(lat.weights[free])
    lam = spla.eigsh(L, k=1, M=M, sigma=-1.0, which="LM", return_eigenvectors=False)[0]
    assert lam >= b * (1 - 5 * p.h * np.sqrt(b))


def _gradient_flow_energy(b, r, h, steps=60000):
    """Independent oracle: explicit preconditioned gradient flow on a 2D array.

    Uses the symmetric gauge with link phases 0.5 * (-y dx + x dy) at edge midpoints,
    Dirichlet boundary, trapezoid weights (all interior nodes have weight h^2).
    """
    n = int(round(r / h)) + 1
    c = -r / 2 + h * np.arange(n)
    X, Y = np.meshgrid(c, c, indexing="ij")
    thx = 0.5 * (-(Y[:-1] + Y[1:]) / 2 * h)  # x-edges: dx = h, dy = 0
    thy = 0.5 * ((X[:, :-1] + X[:, 1:]) / 2 * h)
    ex, ey = np.exp(-1j * thx), np.exp(-1j * thy)
    u = np.ones((n, n), complex)
    u[0, :] = u[-1, :] = u[:, 0] = u[:, -1] = 0
    inner = np.zeros((n, n), bool)
    inner[1:-1, 1:-1] = True
    w = h * h

    def energy_grad(u):
        dx = u[1:] * ex - u[:-1]
        dy = u[:, 1:] * ey - u[:, :-1]
        p = np.abs(u) ** 2
        e = b * (np.sum(np.abs(dx) ** 2) + np.sum(np.abs(dy) ** 2)) + w * np.sum(
            (-p + 0.5 * p * p)[inner])
        g = np.zeros_like(u)
        g[1:] += 2 * b * np.conj(ex) * dx
        g[:-1] -= 2 * b * dx
        g[:, 1:] += 2 * b * np.conj(ey) * dy
        g[:, :-1] -= 2 * b * dy
        g += 2 * w * (p - 1) * u
        return e, np.where(inner, g, 0)
    tau = 0.9 / (8 * b + 2 * w * 2)
    for _ in range(steps):
        e, g = energy_grad(u)
        u = u - tau * g
    return energy_grad(u)[0]


def test_gradient_flow_oracle():
    b, r, h = 0.5, 4, 0.125
    lat, f = cell_functional(CellProblem(b, r, "dirichlet", h))
    free = ~lat.boundary
    from glfield.lattice import minimize_ncg
    u0 = np.where(free, 1.0, 0.0).astype(complex)
    ncg = minimize_ncg(f, u0, free=free, rel_tol=1e-13, res_tol=1e-10)
    oracle = _gradient_flow_energy(b, r, h)
    assert ncg.energy == pytest.approx(oracle, rel=1e-6)


def test_fit_inverse_r_recovers_exact_model():
    r = np.array([8.0, 12.0, 16.0])
    g, c, res = fit_inverse_r(r, -0.3 + 0.7 / r)
    assert g == pytest.approx(-0.3) and c == pytest.approx(0.7) and res < 1e-14


def test_g_estimate_endpoints():
    e0 = g_estimate(0.0, restarts=1, with_neumann=False)
    assert e0.g == pytest.approx(-0.5, abs=0.02)
    assert e0.lower <= e0.g <= e0.upper
    e15 = g_estimate(1.5, r_grid=(8, 12, 16), restarts=1, with_neumann=False)
    assert abs(e15.g) < 0.01


def _est(b, g, lo, hi):
    return GEstimate(b=b, g=g, lower=lo, upper=hi, slope=0, residual=0, r_grid=[8, 12, 16],
                     per_area=[])


def test_curve_interpolation_and_csv(tmp_path):
    c = GCurve([_est(0.25, -0.25, -0.26, -0.2), _est(0.5, -0.11, -0.12, -0.08)], [8, 12, 16])
    assert c(0.0) == pytest.approx(-0.5)
    assert c(1.0) == 0.0 and c(3.0) == 0.0
    assert c(0.375) == pytest.approx(-0.18)
    p = tmp_path / "g.csv"
    c.to_csv(p)
    back = GCurve.from_csv(p)
    assert np.array_equal(back.g, c.g) and np.array_equal(back.b, c.b)
    header = p.read_text().splitlines()[0]
    assert header == "b,g,lower,upper,r_used,iterations"


def test_check_monotone_flags_decrease_beyond_overlap():
    ok = [_est(0.0, -0.5, -0.5, -0.49), _est(0.5, -0.1, -0.11, -0.08)]
    bad = [_est(0.0, -0.1, -0.11, -0.09), _est(0.5, -0.3, -0.31, -0.29)]
    assert check_monotone(ok) == []
    assert check_monotone(bad) == [(0.0, 0.5)]


def test_shipped_reference_curve():
    from glfield.reference import g_reference
    c = g_reference()
    assert c(0.0) == pytest.approx(-0.5, abs=0.02)
    assert np.all(np.diff(c.g) >= -1e-9)
    assert np.all(c.g <= 0) and np.all(c.g >= -0.5 - 1e-9)
