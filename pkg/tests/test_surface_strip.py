import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import glfield.surface_strip as ss
from glfield.lattice import rdot
from glfield.reference import THETA0
from glfield.surface_strip import (EsurfCurve, EsurfEstimate, StripProblem, TruncationError,
                                   d_energy, strip_decay_integral, strip_functional)


@pytest.mark.parametrize("kw", [dict(R=4), dict(T=4), dict(h=0.1), dict(b=0.0)])
def test_problem_validation(kw):
    base = dict(b=1.2, R=8)
    with pytest.raises(ValueError):
        StripProblem(**{**base, **kw})


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_strip_gauge_invariance_and_gradient(seed):
    p = StripProblem(1.2, 8, h=0.05)
    rng = np.random.default_rng(seed)
    k = rng.uniform(-1, 1, 3)

    def chi(x, y):
        return k[0] * np.sin(x) * y + k[1] * np.cos(y) + k[2] * x

    lat, _, _, f1 = strip_functional(p)
    _, _, _, f2 = strip_functional(p, gauge_shift=chi)
    u = rng.standard_normal(lat.x.size) + 1j * rng.standard_normal(lat.x.size)
    e1 = f1.energy(u)
    assert f2.energy(np.exp(1j * chi(lat.x, lat.y)) * u) == pytest.approx(e1, rel=1e-12)
    d = rng.standard_normal(u.size) + 1j * rng.standard_normal(u.size)
    eps = 1e-5
    fd = (f1.energy(u + eps * d) - f1.energy(u - eps * d)) / (2 * eps)
    assert fd == pytest.approx(rdot(f1.gradient(u), d), rel=1e-6)


@pytest.fixture(scope="module")
def sol12():
    return d_energy(StripProblem(1.2, 8), restarts=1)


def test_strip_energy_in_surface_regime(sol12):
    assert -0.06 < sol12.per_length < -0.035
    assert sol12.sup_modulus() <= 1.0 + 5 * 0.05
    Ts = [t for t, _ in sol12.T_history]
    assert Ts[0] == 8 and all(b == 2 * a for a, b in zip(Ts, Ts[1:]))
    assert abs(sol12.T_history[-1][1] - sol12.T_history[-2][1]) < 1e-4 * max(
        1, abs(sol12.energy))


def test_decay_integral_is_finite(sol12):
    v = strip_decay_integral(sol12)
    assert np.isfinite(v) and v > 0
    assert strip_decay_integral(sol12, tau_min=6.0) < v


def test_above_third_critical_field_is_normal():
    sol = d_energy(StripProblem(1.75, 8), restarts=1)
    assert sol.energy == 0.0


def test_truncation_cap(monkeypatch):
    monkeypatch.setattr(ss, "T_CAP", 8.0)
    with pytest.raises(TruncationError):
        d_energy(StripProblem(1.75, 8), restarts=1)


def _est(b, v):
    return EsurfEstimate(b=b, esurf=v, upper=v, m_fit=0.1, residual=0.0, R_grid=[8, 12, 16],
                         per_length=[])


def test_curve_evaluation_and_csv(tmp_path):
    c = EsurfCurve([_est(1.0, -0.11), _est(1.2, -0.05), _est(1.4, -0.02)], [8, 12, 16],
                   THETA0)
    assert np.isnan(c(0.9))
    assert c(1.0) == pytest.approx(-0.11)
    assert c(1.1) == pytest.approx(-0.08)
    assert c(1 / THETA0) == 0.0 and c(2.5) == 0.0
    assert c.is_monotone()
    path = tmp_path / "es.csv"
    c.to_csv(path)
    back = EsurfCurve.from_csv(path, THETA0)
    assert np.array_equal(back.values, c.values) and np.array_equal(back.b, c.b)
    assert not EsurfCurve([_est(1.0, -0.01), _est(1.2, -0.05)], [8], THETA0).is_monotone()
