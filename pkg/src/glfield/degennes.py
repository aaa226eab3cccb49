"""De Gennes constant: the lowest ground energy of the half-line oscillator.

For a shift ``xi`` the operator ``-u'' + (t - xi)**2 u`` on ``(0, inf)`` with a
Neumann condition at ``t = 0`` has a lowest eigenvalue ``mu(xi)``; the de
Gennes constant is ``inf_xi mu(xi)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal
from scipy.optimize import minimize_scalar


class Theta0Error(RuntimeError):
    """Raised when the computed constant leaves the admissible interval (1/2, 1)."""


@dataclass(frozen=True)
class HalfLineProblem:
    xi: float
    truncation: float = 12.0
    spacing: float = 5e-3

    def __post_init__(self):
        if self.truncation < self.xi + 8.0:
            raise ValueError(
                f"truncation T={self.truncation} must satisfy T >= xi + 8 (xi={self.xi})")
        if not 0.0 < self.spacing <= 0.01:
            raise ValueError(f"spacing must lie in (0, 0.01], got {self.spacing}")


@dataclass
class Theta0Result:
    theta0: float
    xi_star: float
    convergence_log: list[tuple[float, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta0": self.theta0,
            "xi_star": self.xi_star,
            "convergence_log": [
                {"h": h, "T": T, "value": v} for h, T, v in self.convergence_log],
        }


def _tridiagonal(xi: float, T: float, h: float):
    """Symmetrized variational finite-difference matrix on nodes t_i = i*h, i < N.

    The quadratic form sum |u_{i+1}-u_i|^2/h + sum m_i (t_i-xi)^2 u_i^2 with lumped
    mass m_0 = h/2, m_i = h gives the natural condition at 0; u(T) = 0.
    """
    n = int(round(T / h))
    t = h * np.arange(n)
    mass = np.full(n, h)
    mass[0] = 0.5 * h
    diag = np.full(n, 2.0 / h)
    diag[0] = 1.0 / h
    diag += mass * (t - xi) ** 2
    off = np.full(n - 1, -1.0 / h)
    scale = 1.0 / np.sqrt(mass)
    return diag * scale**2, off * scale[:-1] * scale[1:]


def mu(xi: float, T: float = 12.0, h: float = 5e-3) -> float:
    """Lowest eigenvalue of the truncated half-line problem.

    Computed by Sturm-sequence bisection (LAPACK ``stebz``) on the symmetric
    tridiagonal matrix, to an absolute tolerance of 1e-12.
    """
    HalfLineProblem(xi, T, h)
    d, e = _tridiagonal(xi, T, h)
    w = eigvalsh_tridiagonal(d, e, select="i", select_range=(0, 0),
                             lapack_driver="stebz", tol=1e-12)
    if w.size != 1 or not np.isfinite(w[0]):
        raise RuntimeError(f"eigensolve failed for xi={xi}")
    return float(w[0])


def _minimize_mu(T: float, h: float, xtol: float = 1e-5):
    xs = np.arange(0.0, 3.0 + 1e-12, 0.05)
    vals = np.array([mu(x, max(T, x + 8.0), h) for x in xs])
    i = int(np.argmin(vals))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
    res = minimize_scalar(lambda x: mu(x, max(T, x + 8.0), h), bracket=(lo, xs[i], hi),
                          method="golden", tol=xtol / max(xs[i], 1.0))
    return float(res.x), float(res.fun)


def theta0(hs=(4e-3, 2e-3, 1e-3), T: float = 12.0) -> Theta0Result:
    """Scan, refine by golden section, then Richardson-extrapolate in h**2.

    ``hs`` must be three spacings in ratio 2 (coarse to fine).
    """
    hs = tuple(sorted(hs, reverse=True))
    if len(hs) != 3:
        raise ValueError("Richardson extrapolation needs exactly three spacings")
    log = []
    xi_star, _ = _minimize_mu(T, hs[-1])
    values = []
    for h in hs:
        # mu is stationary at xi_star, so re-optimizing per h only moves the value at O(dxi^2)
        v = mu(xi_star, T, h)
        values.append(v)
        log.append((h, T, v))
    r = hs[0] / hs[1]
    v1 = values[1] + (values[1] - values[0]) / (r**2 - 1)
    v2 = values[2] + (values[2] - values[1]) / (r**2 - 1)
    value = v2 + (v2 - v1) / (r**4 - 1)
    log.append((0.0, T, value))
    if not 0.5 < value < 1.0:
        raise Theta0Error(f"Theta0 = {value} violates 1/2 < Theta0 < 1")
    return Theta0Result(theta0=float(value), xi_star=xi_star, convergence_log=log)


# --- independent oracle: RK4 shooting ------------------------------------

def _shoot(xi: np.ndarray, lam: np.ndarray, T: float, dt: float) -> np.ndarray:
    """u(T) for u'' = ((t-xi)^2 - lam) u, u(0)=1, u'(0)=0, batched with RK4."""
    u = np.ones_like(lam)
    v = np.zeros_like(lam)
    n = int(round(T / dt))
    t = 0.0
    for _ in range(n):
        q0 = (t - xi) ** 2 - lam
        qh = (t + 0.5 * dt - xi) ** 2 - lam
        q1 = (t + dt - xi) ** 2 - lam
        k1u, k1v = v, q0 * u
        k2u, k2v = v + 0.5 * dt * k1v, qh * (u + 0.5 * dt * k1u)
        k3u, k3v = v + 0.5 * dt * k2v, qh * (u + 0.5 * dt * k2u)
        k4u, k4v = v + dt * k3v, q1 * (u + dt * k3u)
        u = u + dt / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
        v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        t += dt
    return u


def shooting_mu(xi, T: float = 9.0, dt: float = 2e-3, lo: float = 0.3, hi: float = 1.5,
                iters: int = 8) -> np.ndarray:
    """Lowest eigenvalue by shooting: bracket the sign change of u(T), then secant."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    a = np.full_like(xi, lo)
    b = np.full_like(xi, hi)
    for _ in range(14):
        m = 0.5 * (a + b)
        um = _shoot(xi, m, T, dt)
        below = um > 0  # no node yet: eigenvalue lies above m
        a = np.where(below, m, a)
        b = np.where(below, b, m)
    fa, fb = _shoot(xi, a, T, dt), _shoot(xi, b, T, dt)
    for _ in range(iters):
        done = fb == fa
        c = np.where(done, b, b - fb * (b - a) / np.where(done, 1.0, fb - fa))
        fc = _shoot(xi, c, T, dt)
        a, fa, b, fb = b, fb, c, fc
        if np.all(np.abs(b - a) < 1e-13):
            break
    return b


def theta0_shooting(T: float = 9.0, dt: float = 2e-3) -> tuple[float, float]:
    """Independent estimate of (Theta0, xi*) by shooting plus a parabola fit in xi."""
    xs = np.linspace(0.5, 1.1, 13)
    vals = shooting_mu(xs, T, dt)
    i = int(np.argmin(vals))
    fine = np.linspace(xs[i] - 0.03, xs[i] + 0.03, 7)
    fv = shooting_mu(fine, T, dt)
    c = np.polyfit(fine - xs[i], fv, 4)
    roots = np.roots(np.polyder(c))
    roots = roots[np.isreal(roots)].real
    roots = roots[np.abs(roots) <= 0.03]
    x = roots[np.argmin(np.polyval(c, roots))]
    return float(np.polyval(c, x)), float(x + xs[i])
