"""Link-variable discretization and the nonlinear conjugate gradient minimizer.

All three energies in the package (bulk cell, half-plane strip, full
Ginzburg-Landau on a domain) share one discrete structure: complex node values
``u``, node area weights ``w``, and edges ``(j, k)`` carrying a conductance
``c`` and a link phase ``theta`` (the line integral of the scaled vector
potential along the edge). The covariant difference on an edge is
``u_k exp(-i theta) - u_j``, which makes the kinetic term exactly invariant
under ``u -> exp(i chi) u, theta -> theta + chi_k - chi_j``.

With the phases frozen the energy

    kinetic * sum_e c_e |u_k e^{-i theta_e} - u_j|^2
        + alpha * sum_n w_n (-|u_n|^2 + |u_n|^4 / 2)

is a quartic polynomial along any line, so the line search is exact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Iteration cap reached; ``best`` carries the last (lowest-energy) iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


def covariant_laplacian(n: int, edges: np.ndarray, conductance: np.ndarray,
                        phases: np.ndarray) -> sp.csr_matrix:
    """Hermitian matrix ``L`` with ``u^H L u = sum_e c_e |u_k e^{-i theta_e} - u_j|^2``."""
    j, k = edges[:, 0], edges[:, 1]
    off = -conductance * np.exp(-1j * phases)
    rows = np.concatenate([j, k, j, k])
    cols = np.concatenate([j, k, k, j])
    vals = np.concatenate([conductance, conductance, off, np.conj(off)]).astype(complex)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def edge_differences(u: np.ndarray, edges: np.ndarray, phases: np.ndarray) -> np.ndarray:
    return u[edges[:, 1]] * np.exp(-1j * phases) - u[edges[:, 0]]


def rdot(a: np.ndarray, b: np.ndarray) -> float:
    """Real inner product of complex vectors viewed as pairs (Re, Im)."""
    return float(np.vdot(a, b).real)


@dataclass
class QuarticFunctional:
    """Frozen-phase energy ``kinetic * u^H L u + alpha * sum w (-|u|^2 + |u|^4/2)``."""

    L: sp.csr_matrix
    weights: np.ndarray
    kinetic: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        self._diag = np.real(self.L.diagonal())
        self._factor = None

    def factorized_preconditioner(self, shift: float = 1.0):
        """Sparse LU of ``2 kinetic L + 2 alpha shift W``, a fixed Hermitian PD operator."""
        if self._factor is None:
            import scipy.sparse.linalg as spla
            M = 2.0 * self.kinetic * self.L + sp.diags(
                2.0 * self.alpha * shift * self.weights + 1e-300)
            self._factor = spla.splu(M.tocsc().astype(complex))
        return self._factor.solve

    def parts(self, u, Lu=None):
        Lu = self.L @ u if Lu is None else Lu
        kin = self.kinetic * float(np.vdot(u, Lu).real)
        p = np.abs(u) ** 2
        lin = -self.alpha * float(np.dot(self.weights, p))
        quart = 0.5 * self.alpha * float(np.dot(self.weights, p * p))
        return kin, lin, quart

    def energy(self, u, Lu=None) -> float:
        return sum(self.parts(u, Lu))

    def gradient(self, u, Lu=None) -> np.ndarray:
        """Complex gradient dE/dRe u + i dE/dIm u (equals 2 dE/d conj(u))."""
        Lu = self.L @ u if Lu is None else Lu
        return 2.0 * self.kinetic * Lu + 2.0 * self.alpha * self.weights * (
            np.abs(u) ** 2 - 1.0) * u

    def residual(self, u, g=None) -> np.ndarray:
        """Pointwise Euler-Lagrange residual ``|g| / (2 w)`` in equation units."""
        g = self.gradient(u) if g is None else g
        w = np.where(self.weights > 0, self.weights, np.inf)
        return np.abs(g) / (2.0 * w)

    def preconditioner(self, u) -> np.ndarray:
        return 2.0 * self.kinetic * self._diag + 2.0 * self.alpha * self.weights * (
            np.abs(u) ** 2 + 1.0)

    def line_polynomial(self, u, d, slope, Ld=None):
        """Coefficients (c4, c3, c2, c1, c0 = 0) of ``E(u + t d) - E(u)`` in ``t``."""
        Ld = self.L @ d if Ld is None else Ld
        p = np.abs(u) ** 2
        q = 2.0 * (np.conj(u) * d).real
        r = np.abs(d) ** 2
        w = self.weights
        a = self.alpha
        c2 = self.kinetic * float(np.vdot(d, Ld).real) + a * float(
            np.dot(w, -r + 0.5 * (q * q + 2 * p * r)))
        c3 = a * float(np.dot(w, q * r))
        c4 = 0.5 * a * float(np.dot(w, r * r))
        return np.array([c4, c3, c2, slope, 0.0])


def exact_line_step(coeffs) -> float:
    """Global minimizer over t >= 0 of a quartic with positive leading term."""
    deriv = np.polyder(coeffs)
    roots = np.roots(deriv)
    roots = roots[np.abs(roots.imag) < 1e-9 * (1 + np.abs(roots.real))].real
    roots = roots[roots > 0]
    if roots.size == 0:
        return 0.0
    vals = np.polyval(coeffs, roots)
    return float(roots[np.argmin(vals)])


@dataclass
class MinimizeResult:
    u: np.ndarray
    energy: float
    iterations: int
    residual: float
    converged: bool
    energy_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)


def minimize_ncg(fun: QuarticFunctional, u0: np.ndarray, *, res_tol: float | None = None,
                 rel_tol: float = 1e-10, window: int = 50, maxiter: int = 20000,
                 free: np.ndarray | None = None, raise_on_fail: bool = True,
                 history: int = 0, refresh: int = 200,
                 precondition: str = "jacobi",
                 energy_scale: float = 0.0) -> MinimizeResult:
    """Preconditioned Polak-Ribiere+ conjugate gradient with exact line search.

    Converged when the relative energy change over the last ``window``
    iterations is below ``rel_tol`` and, if ``res_tol`` is given, the sup-norm
    Euler-Lagrange residual is below it. ``free`` masks the nodes allowed to
    move. ``L u`` is updated incrementally and recomputed every ``refresh``
    iterations. ``precondition`` is ``"jacobi"`` (diagonal) or ``"lu"`` (sparse
    factorization of the frozen quadratic part). ``energy_scale`` floors the
    denominator of the relative change, so states drifting slowly towards zero
    energy still terminate.
    """
    u = np.array(u0, dtype=complex)
    mask = np.ones(u.shape, bool) if free is None else np.asarray(free, bool)
    if precondition == "lu":
        solve = fun.factorized_preconditioner()

        def apply_prec(grad, u):
            return solve(grad) * mask
    else:
        def apply_prec(grad, u):
            return grad / fun.preconditioner(u)
    Lu = fun.L @ u
    energy = fun.energy(u, Lu)
    energies = [energy]
    g = fun.gradient(u, Lu) * mask
    s = apply_prec(g, u)
    d = -s
    gs_old = rdot(g, s)
    res = float(np.max(fun.residual(u, g)[mask])) if mask.any() else 0.0
    residuals = [res]
    res_ok = res_tol is None or res < res_tol
    it = 0
    converged = False
    while it < maxiter:
        slope = rdot(g, d)
        if slope >= 0:
            d = -s
            slope = rdot(g, d)
        if slope == 0.0:
            converged = True
            break
        Ld = fun.L @ d
        coeffs = fun.line_polynomial(u, d, slope, Ld)
        t = exact_line_step(coeffs)
        if t == 0.0:
            d = -s
            Ld = fun.L @ d
            coeffs = fun.line_polynomial(u, d, rdot(g, d), Ld)
            t = exact_line_step(coeffs)
            if t == 0.0:
                converged = res_ok
                break
        u = u + t * d
        it += 1
        if it % refresh == 0:
            Lu = fun.L @ u
            energy = fun.energy(u, Lu)
        else:
            Lu = Lu + t * Ld
            energy = energy + float(np.polyval(coeffs, t))
        energies.append(energy)
        g_new = fun.gradient(u, Lu) * mask
        s_new = apply_prec(g_new, u)
        res = float(np.max(fun.residual(u, g_new)[mask])) if mask.any() else 0.0
        residuals.append(res)
        res_ok = res_tol is None or res < res_tol
        gs_new = rdot(g_new, s_new)
        beta = max(0.0, (gs_new - rdot(g_new, s)) / gs_old) if gs_old > 0 else 0.0
        d = -s_new + beta * d
        g, s, gs_old = g_new, s_new, gs_new
        if res_ok and len(energies) > window:
            e0, e1 = energies[-1 - window], energies[-1]
            if abs(e1 - e0) <= rel_tol * max(abs(e1), energy_scale, 1e-300):
                converged = True
                break
        if res_tol is not None and res < 1e-3 * res_tol:
            converged = True
            break
    energy = fun.energy(u)
    energies[-1] = energy
    keep = history if history > 0 else len(energies)
    out = MinimizeResult(u=u, energy=energy, iterations=it, residual=res,
                         converged=converged, energy_history=energies[-keep:],
                         residual_history=residuals[-keep:])
    if not converged and raise_on_fail:
        raise ConvergenceError(
            f"NCG hit the iteration cap {maxiter}: energy {energy:.12g}, "
            f"residual {res:.3e}", best=out)
    return out
