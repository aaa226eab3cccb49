"""Measurements on converged states: decay, windowed L^4 averages, T_b pairing."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .geometry import Window, distance_functions
from .gl_solver import DiscreteState, GLProblem
from .lattice import edge_differences

ALPHA_GRID = tuple(np.round(np.arange(0.0, 0.6001, 0.05), 2))


class PreconditionError(ValueError):
    pass


def _g_curve():
    from .reference import g_reference
    return g_reference()


def _esurf_curve():
    from .reference import esurf_reference
    return esurf_reference()


def _theta0():
    from .reference import THETA0
    return THETA0


@dataclass(frozen=True)
class DecayProbe:
    kappa: float
    b: float
    mu: float = 0.1
    alpha_grid: tuple = ALPHA_GRID
    cap: float = 10.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")

    @property
    def H(self):
        return self.b * self.kappa

    @property
    def lam(self):
        return self.kappa / self.H + self.mu

    def beta(self, theta0=None):
        theta0 = _theta0() if theta0 is None else theta0
        return self.lam / theta0


def node_kinetic_density(state: DiscreteState, prob: GLProblem) -> np.ndarray:
    """Integrated |(grad - i kappa H A) psi|^2, each edge split evenly between its ends."""
    g = prob.grid
    D = edge_differences(state.psi, g.edges, prob.phases(state.a))
    e = 0.5 * g.conductance * np.abs(D) ** 2
    return (np.bincount(g.edges[:, 0], e, g.n_nodes) + np.bincount(g.edges[:, 1], e, g.n_nodes))


def _fit_rate(dens, s, bin_width=0.5, floor=1e-13):
    """Decay rate a with |psi|^2 ~ exp(-2 a s), from log bin means."""
    if s.size == 0:
        return float("nan")
    edges = np.arange(0.0, s.max() + bin_width, bin_width)
    idx = np.digitize(s, edges)
    xs, ys = [], []
    for k in np.unique(idx):
        m = idx == k
        v = dens[m].mean()
        if v > floor:
            xs.append(s[m].mean())
            ys.append(np.log(v))
    if len(xs) < 3:
        return float("nan")
    slope = np.polyfit(xs, ys, 1)[0]
    return float(-0.5 * slope)


def _weighted_decay(state, prob, probe, dist, region, extra=None):
    g = prob.grid
    kH = prob.kH
    rho = np.abs(state.psi) ** 2
    integrand = g.weights * rho + node_kinetic_density(state, prob) / kH
    sk = np.sqrt(kH)
    vals = []
    for a in probe.alpha_grid:
        w = np.exp(2.0 * a * sk * dist[region])
        vals.append(float(np.dot(integrand[region], w)))
    kI = [probe.kappa * v for v in vals]
    ok = [a for a, v in zip(probe.alpha_grid, kI) if v <= probe.cap]
    total = float(np.dot(g.weights, rho))
    out = {
        "alpha_grid": list(map(float, probe.alpha_grid)),
        "integral": vals,
        "kappa_integral": kI,
        "alpha_max_under_cap": float(max(ok)) if ok else None,
        "fitted_rate": _fit_rate(rho[region], sk * dist[region]),
        "total_mass": total,
        "degenerate": False,
    }
    if extra:
        out.update(extra)
    return out


def _empty(probe, **extra):
    z = [0.0] * len(probe.alpha_grid)
    out = {"alpha_grid": list(map(float, probe.alpha_grid)), "integral": z,
           "kappa_integral": z, "alpha_max_under_cap": float(max(probe.alpha_grid)),
           "fitted_rate": float("nan"), "degenerate": True}
    out.update(extra)
    return out


def interior_decay(state: DiscreteState, prob: GLProblem, probe: DecayProbe) -> dict:
    """Agmon-weighted integral on omega(lambda) away from its boundary, over the alpha grid."""
    g = prob.grid
    dfun = distance_functions(prob.field, probe.lam, g)
    if not dfun.omega.any():
        return _empty(probe, reason="omega(lambda) is empty", far_mass_fraction=0.0)
    sk = np.sqrt(prob.kH)
    region = dfun.omega & (dfun.t >= 1.0 / sk)
    rho = np.abs(state.psi) ** 2
    total = float(np.dot(g.weights, rho))
    far = dfun.omega & (dfun.t >= 3.0 / sk)
    frac = float(np.dot(g.weights[far], rho[far]) / total) if total > 0 else 0.0
    return _weighted_decay(state, prob, probe, dfun.t, region,
                           {"lambda": probe.lam, "far_mass_fraction": frac})


def boundary_decay(state: DiscreteState, prob: GLProblem, probe: DecayProbe,
                   theta0: float | None = None) -> dict:
    """Same with the weight zeta_beta, plus the |psi|^2 mass in the thin boundary strip."""
    g = prob.grid
    beta = probe.beta(theta0)
    dfun = distance_functions(prob.field, beta, g)
    sk = np.sqrt(prob.kH)
    rho = np.abs(state.psi) ** 2
    strip = dfun.omega & (g.t < 1.0 / sk)
    strip_mass = float(np.dot(g.weights[strip], rho[strip]))
    if not dfun.omega.any():
        return _empty(probe, reason="omega(beta) is empty", beta=beta, strip_mass=0.0)
    if dfun.degenerate:
        return _empty(probe, reason="omega(beta) has no interior boundary", beta=beta,
                      strip_mass=strip_mass)
    region = dfun.omega & (dfun.zeta >= 1.0 / sk)
    return _weighted_decay(state, prob, probe, dfun.zeta, region,
                           {"beta": beta, "strip_mass": strip_mass})


def strip_mass_fraction(state: DiscreteState, prob: GLProblem, width: float,
                        where: Callable) -> float:
    """Share of the boundary-strip |psi|^2 mass located where ``where(x, y)`` holds."""
    g = prob.grid
    strip = g.t < width
    rho = g.weights * np.abs(state.psi) ** 2
    tot = float(rho[strip].sum())
    if tot == 0.0:
        return float("nan")
    sel = strip & where(g.x, g.y)
    return float(rho[sel].sum() / tot)


def mass_fraction(state: DiscreteState, prob: GLProblem, mask: np.ndarray, power: int = 2):
    w = prob.grid.weights * np.abs(state.psi) ** power
    tot = float(w.sum())
    return float(w[mask].sum() / tot) if tot > 0 else float("nan")


@dataclass
class WindowReport:
    center: tuple
    ell: float
    mean_psi4: float
    target: float
    local_energy: float
    normalized_energy: float
    energy_target: float
    hypotheses_met: bool
    notes: list = field(default_factory=list)

    @property
    def error(self) -> float:
        return abs(self.mean_psi4 - self.target)

    def to_dict(self):
        d = asdict(self)
        d["error"] = self.error
        return d


def bulk_window_report(state: DiscreteState, prob: GLProblem, x0, rho: float = 0.75,
                       g_curve=None) -> WindowReport:
    """Mean |psi|^4 over Q_{2l}(x0), l = kappa^{-rho}, against -2 g(b |B0(x0)|).

    Raises :class:`PreconditionError` if the window leaves the domain. Whether
    ``|B0(x0)| < 1/b`` and ``dist(x0, boundary) >= 4 l`` hold is reported in
    ``hypotheses_met`` rather than enforced.
    """
    g_curve = _g_curve() if g_curve is None else g_curve
    kappa, b = prob.cfg.kappa, prob.cfg.b
    ell = kappa ** (-rho)
    win = Window(center=tuple(map(float, x0)), halfwidth=ell, kind="interior")
    if not win.contained_in(prob.domain):
        raise PreconditionError(f"window around {x0} with half-width {ell:.4g} leaves the domain")
    grid = prob.grid
    mask = win.mask(grid)
    area = float(grid.weights[mask].sum())
    p4 = np.abs(state.psi[mask]) ** 4
    mean4 = float(np.dot(grid.weights[mask], p4) / area)
    bb = b * abs(float(prob.field(x0[0], x0[1])))
    gval = float(g_curve(bb))
    e = prob.local_energy(state, mask)
    notes = []
    dist = float(prob.domain.distance_to_boundary(np.array([x0[0]]), np.array([x0[1]]))[0])
    ok = True
    if not bb < 1.0:
        ok = False
        notes.append("b|B0(x0)| >= 1")
    if dist < 4 * ell:
        ok = False
        notes.append(f"dist(x0, boundary) = {dist:.3g} < 4 l = {4 * ell:.3g}")
    return WindowReport(center=tuple(map(float, x0)), ell=ell, mean_psi4=mean4,
                        target=-2.0 * gval, local_energy=e,
                        normalized_energy=e / (kappa**2 * area), energy_target=gval,
                        hypotheses_met=ok, notes=notes)


@dataclass
class SurfaceReport:
    x0: tuple
    s0: float
    ell: float
    scaled_l4: float
    target_l4: float
    scaled_energy: float
    target_energy: float

    @property
    def l4_rel_error(self):
        return abs(self.scaled_l4 - self.target_l4) / abs(self.target_l4) \
            if self.target_l4 else float("nan")

    @property
    def energy_rel_error(self):
        return abs(self.scaled_energy - self.target_energy) / abs(self.target_energy) \
            if self.target_energy else float("nan")

    def to_dict(self):
        d = asdict(self)
        d["l4_rel_error"] = self.l4_rel_error
        d["energy_rel_error"] = self.energy_rel_error
        return d


def surface_window_report(state: DiscreteState, prob: GLProblem, s0: float,
                          rho: float = 0.85, esurf_curve=None, margin: float = 0.0,
                          enforce: bool = True) -> SurfaceReport:
    """Scaled boundary L^4 and local energy on V_{x0}(l) = Phi((s0 - l, s0 + l) x (0, l)).

    ``x0 = gamma(s0)``. Requires ``1 + margin <= b |B0(x0)| < 1/Theta0`` unless
    ``enforce`` is false.
    """
    curve = _esurf_curve() if esurf_curve is None else esurf_curve
    dom = prob.domain
    kappa, b = prob.cfg.kappa, prob.cfg.b
    x0 = dom.gamma(np.array([s0]))[0]
    bb = b * abs(float(prob.field(x0[0], x0[1])))
    if enforce and not (1.0 + margin <= bb < 1.0 / curve.theta0):
        raise PreconditionError(f"b|B0(x0)| = {bb:.4g} outside [1 + {margin}, 1/Theta0)")
    ell = kappa ** (-rho)
    grid = prob.grid
    mask = (dom.arc_distance(grid.s, s0) < ell) & (grid.t < ell)
    l4 = float(np.dot(grid.weights[mask], np.abs(state.psi[mask]) ** 4))
    e1 = prob.local_energy(state, mask)
    es = float(curve(bb)) if bb >= 1.0 else float("nan")
    root = np.sqrt(1.0 / bb) if bb > 0 else float("nan")
    return SurfaceReport(x0=tuple(map(float, x0)), s0=float(s0), ell=ell,
                         scaled_l4=kappa / (2 * ell) * l4, target_l4=-2.0 * root * es,
                         scaled_energy=e1 / (2 * ell), target_energy=kappa * root * es)


def tb_pairing(state: DiscreteState, prob: GLProblem, testfn: Callable, esurf_curve=None,
               t0: float | None = None, n_boundary: int = 4096, tol: float = 1e-12):
    """``(kappa int |psi|^4 phi, T_b(phi))``.

    ``testfn(x, y)`` must vanish outside the band of width ``t0`` where
    ``1 < b |B0|`` at the foot point is below ``1/Theta0``; a
    :class:`PreconditionError` is raised otherwise.
    """
    curve = _esurf_curve() if esurf_curve is None else esurf_curve
    dom = prob.domain
    t0 = dom.tubular_width if t0 is None else t0
    grid = prob.grid
    b, kappa = prob.cfg.b, prob.cfg.kappa
    phi = np.asarray(testfn(grid.x, grid.y), float)
    supp = np.abs(phi) > tol
    if np.any(supp):
        foot = dom.gamma(grid.s[supp])
        band = b * np.abs(prob.field(foot[:, 0], foot[:, 1]))
        bad = (grid.t[supp] >= t0) | (band <= 1.0) | (band >= 1.0 / curve.theta0)
        if np.any(bad):
            raise PreconditionError("test function support leaves the surface band")
    lhs = kappa * float(np.dot(grid.weights, np.abs(state.psi) ** 4 * phi))
    s = np.linspace(0.0, dom.boundary_length, n_boundary, endpoint=False)
    p = dom.gamma(s)
    bb = b * np.abs(prob.field(p[:, 0], p[:, 1]))
    ph = np.asarray(testfn(p[:, 0], p[:, 1]), float)
    inband = (bb > 1.0) & (bb < 1.0 / curve.theta0)
    vals = np.zeros(n_boundary)
    vals[inband] = np.sqrt(1.0 / bb[inband]) * curve(bb[inband]) * ph[inband]
    rhs = -2.0 * float(vals.sum() * dom.boundary_length / n_boundary)
    return lhs, rhs
