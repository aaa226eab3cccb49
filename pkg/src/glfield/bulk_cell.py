"""Bulk energy g(b) from Dirichlet/Neumann minimization on growing squares.

The cell functional is ``b |(grad - i A0) u|^2 - |u|^2 + |u|^4 / 2`` on the
square ``Q_r = (-r/2, r/2)^2`` with ``A0 = (-x2, x1) / 2``. Energies per unit
area converge to ``g(b)`` from above like ``C / r`` (Dirichlet), which is what
:func:`g_estimate` fits.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .lattice import (ConvergenceError, QuarticFunctional, covariant_laplacian,
                      minimize_ncg)

log = logging.getLogger(__name__)

Boundary = Literal["dirichlet", "neumann"]


class ExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CellProblem:
    b: float
    r: float
    bc: Boundary = "dirichlet"
    h: float = 0.125

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("b must be >= 0")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.h * np.sqrt(self.b) > 0.2 + 1e-12:
            raise ValueError(f"h*sqrt(b) = {self.h * np.sqrt(self.b):.3f} exceeds 0.2")
        if self.bc not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        n = self.r / self.h
        if abs(n - round(n)) > 1e-9:
            raise ValueError("r must be an integer multiple of h")


@dataclass
class SquareLattice:
    """Nodes of a square grid with trapezoidal (half-cell) weights on the boundary."""

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    edges: np.ndarray
    conductance: np.ndarray
    boundary: np.ndarray
    shape: tuple

    @classmethod
    def rectangle(cls, xmin: float, xmax: float, ymin: float, ymax: float, h: float):
        nx = int(round((xmax - xmin) / h)) + 1
        ny = int(round((ymax - ymin) / h)) + 1
        X, Y = np.meshgrid(xmin + h * np.arange(nx), ymin + h * np.arange(ny), indexing="ij")
        idx = np.arange(nx * ny).reshape(nx, ny)
        wx = np.full(nx, h)
        wx[[0, -1]] = h / 2
        wy = np.full(ny, h)
        wy[[0, -1]] = h / 2
        weights = np.outer(wx, wy).ravel()
        # conductance = dual face length / edge length
        ex = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
        cx = np.broadcast_to(wy / h, (nx - 1, ny)).ravel()
        ey = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
        cy = np.broadcast_to((wx / h)[:, None], (nx, ny - 1)).ravel()
        bd = np.zeros((nx, ny), bool)
        bd[[0, -1], :] = True
        bd[:, [0, -1]] = True
        return cls(x=X.ravel(), y=Y.ravel(), weights=weights,
                   edges=np.concatenate([ex, ey]), conductance=np.concatenate([cx, cy]),
                   boundary=bd.ravel(), shape=(nx, ny))

    @classmethod
    def square(cls, side: float, h: float):
        return cls.rectangle(-side / 2, side / 2, -side / 2, side / 2, h)

    def symmetric_gauge_phases(self, field: float = 1.0) -> np.ndarray:
        """Exact line integrals of ``field * A0`` along every edge."""
        j, k = self.edges[:, 0], self.edges[:, 1]
        xm = 0.5 * (self.x[j] + self.x[k])
        ym = 0.5 * (self.y[j] + self.y[k])
        dx = self.x[k] - self.x[j]
        dy = self.y[k] - self.y[j]
        return field * 0.5 * (-ym * dx + xm * dy)


@dataclass
class CellResult:
    problem: CellProblem
    energy: float
    density: np.ndarray
    restart_energies: list
    iterations: int

    @property
    def per_area(self) -> float:
        return self.energy / self.problem.r**2


def cell_functional(p: CellProblem, gauge_shift=None):
    lat = SquareLattice.square(p.r, p.h)
    phases = lat.symmetric_gauge_phases()
    if gauge_shift is not None:
        chi = gauge_shift(lat.x, lat.y)
        phases = phases + chi[lat.edges[:, 1]] - chi[lat.edges[:, 0]]
    L = covariant_laplacian(lat.x.size, lat.edges, lat.conductance, phases)
    return lat, QuarticFunctional(L, lat.weights, kinetic=p.b, alpha=1.0)


def cell_energy(p: CellProblem, restarts: int = 3, seed: int = 0, noise: float = 0.01,
                maxiter: int = 40000, res_tol: float | None = None) -> CellResult:
    """Minimize the discrete cell functional from ``1 + noise`` starts; keep the lowest."""
    lat, fun = cell_functional(p)
    free = ~lat.boundary if p.bc == "dirichlet" else np.ones(lat.x.size, bool)
    rng = np.random.default_rng(seed)
    best = None
    energies = []
    iters = 0
    for _ in range(restarts):
        u0 = (1.0 + noise * rng.standard_normal(lat.x.size)).astype(complex)
        u0[~free] = 0.0
        try:
            res = minimize_ncg(fun, u0, res_tol=res_tol, free=free, maxiter=maxiter,
                               energy_scale=float(p.r) ** 2)
        except ConvergenceError as err:
            raise ConvergenceError(f"cell solve b={p.b} r={p.r} bc={p.bc}: {err}",
                                   best=err.best) from None
        energies.append(res.energy)
        iters += res.iterations
        if best is None or res.energy < best.energy:
            best = res
    energy = best.energy
    if energy > 0.0:
        # the normal state u = 0 is always admissible
        energy, best.u = 0.0, np.zeros_like(best.u)
    dens = (np.abs(best.u) ** 2).reshape(lat.shape)
    return CellResult(problem=p, energy=energy, density=dens,
                      restart_energies=energies, iterations=iters)


@dataclass
class GEstimate:
    b: float
    g: float
    lower: float
    upper: float
    slope: float
    residual: float
    r_grid: list
    per_area: list
    neumann_per_area: list = field(default_factory=list)
    iterations: int = 0


def fit_inverse_r(r, e_per_area):
    """Least-squares fit ``e/r^2 = g + c/r``; returns g, c and the rms residual."""
    r = np.asarray(r, float)
    y = np.asarray(e_per_area, float)
    A = np.stack([np.ones_like(r), 1.0 / r], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return float(coef[0]), float(coef[1]), resid


def g_estimate(b: float, r_grid=(8, 12, 16), h: float = 0.125, with_neumann: bool = True,
               restarts: int = 3, seed: int = 0) -> GEstimate:
    """Extrapolate ``e_D(b, r) / r^2`` to ``r -> inf``.

    The bracket's upper end ``min_r e_D / r^2`` is a rigorous upper bound on g;
    the lower end is the fit minus its residual.
    """
    r_grid = sorted(r_grid)
    if len(r_grid) < 3 or min(r_grid) <= 1:
        raise ValueError("r_grid needs at least three values, all > 1")
    eD, eN, iters = [], [], 0
    for r in r_grid:
        res = cell_energy(CellProblem(b, r, "dirichlet", h), restarts=restarts, seed=seed)
        eD.append(res.per_area)
        iters += res.iterations
        if with_neumann:
            resN = cell_energy(CellProblem(b, r, "neumann", h), restarts=restarts, seed=seed)
            eN.append(resN.per_area)
            iters += resN.iterations
    g, c, resid = fit_inverse_r(r_grid, eD)
    g = min(g, 0.0) if g > 0 else g
    upper = min(eD)
    lower = min(g - resid, upper)
    if abs(g) > 1e-3 and resid > 0.1 * abs(g):
        warnings.warn(f"g({b}) extrapolation unreliable: residual {resid:.2e}",
                      ExtrapolationWarning)
    return GEstimate(b=b, g=g, lower=lower, upper=upper, slope=c, residual=resid,
                     r_grid=list(r_grid), per_area=eD, neumann_per_area=eN,
                     iterations=iters)


@dataclass
class GCurve:
    samples: list
    r_grid: list
    violations: list = field(default_factory=list)

    @property
    def b(self):
        return np.array([s.b for s in self.samples])

    @property
    def g(self):
        return np.array([s.g for s in self.samples])

    def __call__(self, b):
        """Piecewise-linear interpolation; g = 0 beyond b = 1, g(0) = -1/2."""
        bs = np.concatenate([[0.0], self.b, [1.0]])
        gs = np.concatenate([[-0.5], self.g, [0.0]])
        order = np.argsort(bs, kind="stable")
        bs, gs = bs[order], gs[order]
        bs, idx = np.unique(bs, return_index=True)
        gs = gs[idx]
        b = np.asarray(b, float)
        return np.where(b >= 1.0, 0.0, np.interp(np.minimum(b, 1.0), bs, gs))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["b", "g", "lower", "upper", "r_used", "iterations"])
            for s in self.samples:
                wr.writerow([repr(s.b), repr(s.g), repr(s.lower), repr(s.upper),
                             " ".join(str(r) for r in s.r_grid), s.iterations])

    @classmethod
    def from_csv(cls, path):
        samples = []
        with open(path) as fh:
            for row in csv.DictReader(fh):
                rs = [float(v) for v in row["r_used"].split()]
                samples.append(GEstimate(b=float(row["b"]), g=float(row["g"]),
                                         lower=float(row["lower"]), upper=float(row["upper"]),
                                         slope=float("nan"), residual=float("nan"),
                                         r_grid=rs, per_area=[],
                                         iterations=int(row["iterations"])))
        return cls(samples=samples, r_grid=samples[0].r_grid if samples else [])


def check_monotone(samples) -> list:
    """Pairs (b_i, b_{i+1}) where g decreases by more than the bracket overlap allows."""
    bad = []
    for a, c in zip(samples, samples[1:]):
        if a.lower > c.upper + 1e-12 and a.g > c.g:
            bad.append((a.b, c.b))
    return bad


def g_curve(b_samples=(0.0, 0.25, 0.5, 0.75, 1.0, 1.2, 1.5), r_grid=(8, 12, 16),
            h: float = 0.125, restarts: int = 3, seed: int = 0) -> GCurve:
    b_samples = list(b_samples)
    if b_samples != sorted(b_samples) or min(b_samples) < 0 or max(b_samples) > 1.5:
        raise ValueError("b_samples must be ascending within [0, 1.5]")
    samples = [g_estimate(b, r_grid, h=h, restarts=restarts, seed=seed) for b in b_samples]
    curve = GCurve(samples=samples, r_grid=list(r_grid))
    curve.violations = check_monotone(samples)
    for s in samples:
        if not -0.5 - 1e-9 <= s.g <= 1e-9:
            curve.violations.append(("range", s.b))
        for r, d, n in zip(s.r_grid, s.per_area, s.neumann_per_area):
            if d < n:
                curve.violations.append(("dirichlet_below_neumann", s.b, r))
        if abs(s.g) > 1e-3 and s.residual > 0.1 * abs(s.g):
            curve.violations.append(("fit_residual", s.b))
    return curve
