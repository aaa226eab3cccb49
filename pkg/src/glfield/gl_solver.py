"""Minimization of the full Ginzburg-Landau energy on a star domain.

Discrete energy, with ``theta_e = kappa H a_e`` and ``a_e`` the line integral
of ``A`` along edge ``e``:

    sum_e c_e |psi_k e^{-i theta_e} - psi_j|^2
      + kappa^2 sum_n w_n (-|psi_n|^2 + |psi_n|^4 / 2)
      + (kappa H)^2 sum_p W_p ((curl a)_p / h^2 - B_p)^2

``B_p`` is the plaquette curl of the reference potential ``F``, which is
``B0`` at the centre of every uncut plaquette; on cut plaquettes this choice
keeps ``(0, F)`` an exact zero-energy critical point.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import FieldProfile, StarDomain, Window
from .grid import DomainGrid, compute_F
from .lattice import (ConvergenceError, QuarticFunctional, covariant_laplacian,
                      edge_differences, minimize_ncg)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GLConfig:
    kappa: float
    b: float
    mode: Literal["frozen_A", "coupled"] = "frozen_A"
    grid_h: float = 1.0 / 160
    restarts: int = 1
    rel_tol: float = 1e-10
    el_tol: float = 1e-5
    seed: int = 0
    noise: float = 0.01
    maxiter: int = 200000
    max_outer: int = 60

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.b <= 0:
            raise ValueError("b must be positive")
        if self.mode not in ("frozen_A", "coupled"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    @property
    def H(self) -> float:
        return self.b * self.kappa

    @property
    def kH(self) -> float:
        return self.kappa * self.H

    def check_resolution(self, beta0: float):
        if self.grid_h * np.sqrt(self.kH * beta0) > 0.5 + 1e-12:
            raise ValueError(
                f"grid_h={self.grid_h} does not resolve the magnetic length "
                f"(h sqrt(kappa H beta0) = {self.grid_h * np.sqrt(self.kH * beta0):.3f} > 0.5)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DiscreteState:
    psi: np.ndarray
    a: np.ndarray
    grid_h: float

    def copy(self) -> "DiscreteState":
        return DiscreteState(self.psi.copy(), self.a.copy(), self.grid_h)


@dataclass
class EnergyBreakdown:
    total: float
    kinetic: float
    condensation: float
    field: float
    local: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"total": self.total, "kinetic": self.kinetic,
                "condensation": self.condensation, "field": self.field,
                "local": {str(k): v for k, v in self.local.items()}}


class GLProblem:
    """Discretized functional for one (config, field, domain) triple."""

    def __init__(self, cfg: GLConfig, field: FieldProfile, domain: StarDomain,
                 grid: DomainGrid | None = None, check: bool = True):
        self.cfg = cfg
        self.field = field
        self.domain = domain
        self.grid = grid if grid is not None else DomainGrid(domain, cfg.grid_h)
        if check:
            cfg.check_resolution(field.betas(domain, h=max(self.grid.h, 0.01))[0])
        ref = compute_F(field, domain, self.grid)
        self.F = ref.a
        self.Bp = ref.plaquette_field
        self.kappa = cfg.kappa
        self.kH = cfg.kH
        g = self.grid
        self._CtWC = None
        self._incidence = None

    # --- pieces -----------------------------------------------------------
    def phases(self, a):
        return self.kH * a[self.grid.kin_to_a]

    def functional(self, a) -> QuarticFunctional:
        g = self.grid
        L = covariant_laplacian(g.n_nodes, g.edges, g.conductance, self.phases(a))
        return QuarticFunctional(L, g.weights, kinetic=1.0, alpha=self.kappa**2)

    def curl_mismatch(self, a):
        return (self.grid.curl @ a) / self.grid.h**2 - self.Bp

    def field_energy(self, a) -> float:
        m = self.curl_mismatch(a)
        return self.kH**2 * float(np.dot(self.grid.plaq_weights, m * m))

    def breakdown(self, state: DiscreteState, windows=()) -> EnergyBreakdown:
        g = self.grid
        D = edge_differences(state.psi, g.edges, self.phases(state.a))
        kin_e = g.conductance * np.abs(D) ** 2
        p = np.abs(state.psi) ** 2
        cond_n = self.kappa**2 * g.weights * (-p + 0.5 * p * p)
        kin = float(kin_e.sum())
        cond = float(cond_n.sum())
        fld = self.field_energy(state.a)
        local = {}
        for w in windows:
            m = w.mask(g)
            local[w] = self._local_energy(m, kin_e, cond_n)
        return EnergyBreakdown(total=kin + cond + fld, kinetic=kin, condensation=cond,
                               field=fld, local=local)

    def _local_energy(self, mask, kin_e, cond_n) -> float:
        """Energy density restricted to nodes in ``mask``; edge terms split between ends."""
        g = self.grid
        j, k = g.edges[:, 0], g.edges[:, 1]
        share = 0.5 * (mask[j].astype(float) + mask[k].astype(float))
        return float(np.dot(share, kin_e) + cond_n[mask].sum())

    def local_energy(self, state: DiscreteState, mask) -> float:
        g = self.grid
        D = edge_differences(state.psi, g.edges, self.phases(state.a))
        p = np.abs(state.psi) ** 2
        return self._local_energy(mask, g.conductance * np.abs(D) ** 2,
                                  self.kappa**2 * g.weights * (-p + 0.5 * p * p))

    def energy(self, state: DiscreteState) -> float:
        return self.breakdown(state).total

    def gradient_psi(self, state: DiscreteState):
        return self.functional(state.a).gradient(state.psi)

    def gradient_a(self, state: DiscreteState):
        """dE/da on every A-edge."""
        g = self.grid
        th = self.phases(state.a)
        zk = state.psi[g.edges[:, 1]] * np.exp(-1j * th)
        D = zk - state.psi[g.edges[:, 0]]
        kin = 2.0 * self.kH * g.conductance * np.imag(np.conj(D) * zk)
        out = np.zeros(g.n_a)
        np.add.at(out, g.kin_to_a, kin)
        m = self.curl_mismatch(state.a)
        out += 2.0 * self.kH**2 / g.h**2 * (g.curl.T @ (g.plaq_weights * m))
        return out

    def zero_state(self) -> DiscreteState:
        return DiscreteState(np.zeros(self.grid.n_nodes, complex), self.F.copy(), self.grid.h)

    # --- the A-block -------------------------------------------------------
    def _a_step(self, state: DiscreteState, iters: int = 8, tol: float = 1e-12):
        """Damped Newton steps on ``a`` with ``psi`` frozen."""
        g = self.grid
        if self._CtWC is None:
            self._CtWC = (g.curl.T @ sp.diags(g.plaq_weights) @ g.curl).tocsc() / g.h**4
        e0 = self.energy(state)
        for _ in range(iters):
            grad = self.gradient_a(state)
            th = self.phases(state.a)
            curv = g.conductance * np.real(
                np.conj(state.psi[g.edges[:, 0]]) * state.psi[g.edges[:, 1]] * np.exp(-1j * th))
            diag = np.zeros(g.n_a)
            np.add.at(diag, g.kin_to_a, np.maximum(curv, 0.0))
            P = 2.0 * self.kH**2 * (self._CtWC + sp.diags(diag + 1e-6))
            step = -spla.spsolve(P.tocsc(), grad)
            slope = float(np.dot(grad, step))
            if slope >= 0:
                step, slope = -grad, -float(np.dot(grad, grad))
            t = 1.0
            while t > 1e-8:
                trial = DiscreteState(state.psi, state.a + t * step, state.grid_h)
                e1 = self.energy(trial)
                if e1 <= e0 + 1e-4 * t * slope:
                    break
                t *= 0.5
            else:
                break
            state = trial
            if abs(e0 - e1) <= tol * max(abs(e1), 1e-300):
                e0 = e1
                break
            e0 = e1
        return state, e0


@dataclass
class SolveInfo:
    restart_energies: list
    iterations: int
    residual: float
    converged: bool
    wall_time: float
    outer_iterations: int = 0
    residual_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _initial_psi(cfg: GLConfig, n: int, rng) -> np.ndarray:
    # real noise keeps B0 -> -B0 runs exact complex conjugates of each other
    return (1.0 + cfg.noise * rng.standard_normal(n)).astype(complex)


def minimize(cfg: GLConfig, field: FieldProfile, domain: StarDomain, *,
             problem: GLProblem | None = None, init: DiscreteState | None = None,
             windows=()):
    """Return ``(state, breakdown, info)`` for the lowest-energy restart.

    Raises :class:`ConvergenceError` carrying the best state when a restart
    hits the iteration cap.
    """
    t_start = time.perf_counter()
    prob = problem if problem is not None else GLProblem(cfg, field, domain)
    g = prob.grid
    rng = np.random.default_rng(cfg.seed)
    res_tol = cfg.el_tol * cfg.kappa**2
    scale = cfg.kappa**2 * g.area
    best, best_e, energies, iters, outer = None, np.inf, [], 0, 0
    last_hist = []
    for r in range(cfg.restarts):
        if init is not None and r == 0:
            state = init.copy()
        else:
            state = DiscreteState(_initial_psi(cfg, g.n_nodes, rng), prob.F.copy(), g.h)
        if cfg.mode == "frozen_A":
            try:
                res = minimize_ncg(prob.functional(state.a), state.psi, res_tol=res_tol,
                                   rel_tol=cfg.rel_tol, maxiter=cfg.maxiter,
                                   energy_scale=scale, history=10)
            except ConvergenceError as err:
                st = DiscreteState(err.best.u, state.a, g.h)
                raise ConvergenceError(f"GL solve kappa={cfg.kappa} b={cfg.b}: {err}",
                                       best=st) from None
            state.psi = res.u
            iters += res.iterations
            last_hist = res.residual_history
        else:
            state, n_it, n_out, last_hist = _coupled(prob, state, res_tol, scale)
            iters += n_it
            outer += n_out
        e = prob.energy(state)
        energies.append(e)
        if e < best_e:
            best, best_e = state, e
    if best_e > 0.0:
        best = prob.zero_state()
    bd = prob.breakdown(best, windows)
    resid = el_residual(best, prob)
    info = SolveInfo(restart_energies=energies, iterations=iters,
                     residual=resid["psi_sup"], converged=True,
                     wall_time=time.perf_counter() - t_start, outer_iterations=outer,
                     residual_history=list(last_hist))
    return best, bd, info


def _coupled(prob: GLProblem, state: DiscreteState, res_tol: float, scale: float):
    cfg = prob.cfg
    e_prev = prob.energy(state)
    iters = 0
    hist = []
    for outer in range(1, cfg.max_outer + 1):
        try:
            res = minimize_ncg(prob.functional(state.a), state.psi, res_tol=res_tol,
                               rel_tol=cfg.rel_tol, maxiter=cfg.maxiter, energy_scale=scale,
                               history=10)
        except ConvergenceError as err:
            raise ConvergenceError(f"coupled psi-block: {err}",
                                   best=DiscreteState(err.best.u, state.a, state.grid_h)) from None
        iters += res.iterations
        hist = res.residual_history
        state = DiscreteState(res.u, state.a, state.grid_h)
        state, e = prob._a_step(state)
        r = el_residual(state, prob)
        done = abs(e - e_prev) <= cfg.rel_tol * max(abs(e), scale) and \
            r["psi_sup"] < res_tol and r["ampere_sup"] < res_tol
        e_prev = e
        if done:
            return state, iters, outer, hist
    raise ConvergenceError(f"coupled solve did not converge in {cfg.max_outer} sweeps",
                           best=state)


def el_residual(state: DiscreteState, prob: GLProblem) -> dict:
    """Sup and L2 norms of the discrete Euler-Lagrange residuals.

    ``psi`` is the first equation (in units of its own terms, so comparable with
    ``kappa^2``), ``ampere`` the second (per unit edge length, divided by
    ``2 (kappa H)^2``). The ``*_bc`` entries restrict them to cut boundary
    cells, where the natural boundary conditions live.
    """
    g = prob.grid
    fun = prob.functional(state.a)
    r1 = fun.residual(state.psi)
    ga = prob.gradient_a(state)
    r2 = np.abs(ga) / (2.0 * prob.kH**2 * g.h * g.h)
    cut_nodes = g.weights < g.h**2 * (1 - 1e-12)
    cut_plaq = ~g.plaq_interior
    cut_edges = np.zeros(g.n_a, bool)
    cut_edges[np.unique(g.curl[np.nonzero(cut_plaq)[0]].indices)] = True

    def sup(v, m=None):
        v = v if m is None else v[m]
        return float(v.max()) if v.size else 0.0
    return {
        "psi_sup": sup(r1), "psi_l2": float(np.sqrt(np.dot(g.weights, r1 * r1))),
        "psi_bc_sup": sup(r1, cut_nodes),
        "ampere_sup": sup(r2), "ampere_l2": float(np.sqrt(np.sum(r2 * r2) * g.h * g.h)),
        "ampere_bc_sup": sup(r2, cut_edges),
    }


def _incidence(prob: GLProblem):
    """Signed edge-node incidence on the lattice nodes touched by A-edges."""
    g = prob.grid
    N = g.N
    tail = g.a_tail[:, 0] * N + g.a_tail[:, 1]
    head = g.a_head[:, 0] * N + g.a_head[:, 1]
    nodes, inv = np.unique(np.concatenate([tail, head]), return_inverse=True)
    m = g.n_a
    rows = np.concatenate([np.arange(m), np.arange(m)])
    D = sp.csr_matrix((np.concatenate([-np.ones(m), np.ones(m)]), (rows, inv)),
                      shape=(m, nodes.size))
    return D, nodes


def _coulomb_potential(prob: GLProblem, a):
    """Node potential phi with ``D^T (a + D phi) = 0`` (discrete div-free, zero flux out)."""
    if prob._incidence is None:
        D, nodes = _incidence(prob)
        Lg = (D.T @ D).tocsr()
        ncomp, labels = sp.csgraph.connected_components(Lg, directed=False)
        pins = np.array([np.nonzero(labels == c)[0][0] for c in range(ncomp)])
        keep = np.setdiff1d(np.arange(nodes.size), pins)
        solve = spla.factorized(Lg[keep][:, keep].tocsc())
        prob._incidence = (D, nodes, keep, solve)
    D, nodes, keep, solve = prob._incidence
    rhs = -(D.T @ a)
    phi = np.zeros(nodes.size)
    phi[keep] = solve(rhs[keep])
    if not np.all(np.isfinite(phi)):
        raise RuntimeError("Coulomb-gauge Poisson solve failed")
    return phi, D, nodes


def gauge_transform(state: DiscreteState, prob: GLProblem, phi_lattice) -> DiscreteState:
    """``psi -> e^{i kappa H phi} psi``, ``a -> a + grad phi`` for lattice-node ``phi``."""
    g = prob.grid
    da = g.gradient_line_integrals(phi_lattice)
    phi_nodes = phi_lattice[g.ij[:, 0], g.ij[:, 1]]
    return DiscreteState(np.exp(1j * prob.kH * phi_nodes) * state.psi, state.a + da,
                         state.grid_h)


def gauge_fix(state: DiscreteState, prob: GLProblem) -> DiscreteState:
    """Coulomb gauge: discretely divergence free with zero flux through the boundary."""
    phi, D, nodes = _coulomb_potential(prob, state.a)
    g = prob.grid
    lat = np.zeros(g.N * g.N)
    lat[nodes] = phi
    return gauge_transform(state, prob, lat.reshape(g.N, g.N))


def divergence_sup(state: DiscreteState, prob: GLProblem) -> float:
    return float(np.max(np.abs(prob.grid.divergence(state.a))))


def a_minus_f_check(state: DiscreteState, prob: GLProblem) -> dict:
    """sup |A - F| over active nodes after removing the gauge part of ``a - F``."""
    diff = state.a - prob.F
    if not np.any(diff):
        return {"sup": 0.0, "kappa_scaled": 0.0}
    phi, D, _ = _coulomb_potential(prob, diff)
    diff = diff + D @ phi
    d1, d2 = prob.grid.node_average(diff)
    sup = float(np.nanmax(np.hypot(d1, d2)))
    return {"sup": sup, "kappa_scaled": prob.kappa * sup}


# --- linear spectral checks -------------------------------------------------

@dataclass
class SpectralReport:
    B: float
    bc: str
    ground: float
    bound: float
    holds: bool
    ratio: float

    def to_dict(self):
        return asdict(self)


def magnetic_ground_energy(B: float, domain: StarDomain, bc: str = "dirichlet",
                           h: float = 1.0 / 40, grid: DomainGrid | None = None) -> float:
    """Lowest eigenvalue of the discrete ``-(grad - i B A0)^2``, ``A0 = (-x2, x1)/2``."""
    g = grid if grid is not None else DomainGrid(domain, h)
    x, y = g.x, g.y
    j, k = g.edges[:, 0], g.edges[:, 1]
    # exact line integral of a linear potential along a straight edge
    th = B * 0.5 * (-(y[j] + y[k]) * 0.5 * (x[k] - x[j]) + (x[j] + x[k]) * 0.5 * (y[k] - y[j]))
    L = covariant_laplacian(g.n_nodes, g.edges, g.conductance, th).tocsc()
    w = g.weights.copy()
    if bc == "dirichlet":
        free = g.weights >= g.h**2 * (1 - 1e-12)
        nb_ok = np.ones(g.n_nodes, bool)
        # a Dirichlet node must have all four lattice neighbours active
        deg = np.bincount(np.concatenate([j, k]), minlength=g.n_nodes)
        nb_ok &= deg == 4
        free &= nb_ok
        idx = np.nonzero(free)[0]
        L = L[idx][:, idx]
        w = w[idx]
    elif bc != "neumann":
        raise ValueError("bc must be 'dirichlet' or 'neumann'")
    M = sp.diags(w).tocsc()
    sigma = -1.0
    vals = spla.eigsh(L, k=1, M=M, sigma=sigma, which="LM", return_eigenvectors=False,
                      tol=1e-12)
    return float(np.min(vals.real))


def spectral_bounds_check(B: float, domain: StarDomain, bc: str = "dirichlet",
                          h: float = 1.0 / 40, theta0: float | None = None,
                          C_hat: float | None = None) -> SpectralReport:
    """Compare the ground energy with ``|B|(1 - 10 h sqrt|B|)`` or ``Theta0 |B| - C |B|^{3/4}``."""
    if abs(B) < 1:
        raise ValueError("|B| must be >= 1")
    lam = magnetic_ground_energy(B, domain, bc, h)
    aB = abs(B)
    if bc == "dirichlet":
        bound = aB * (1.0 - 10.0 * h * np.sqrt(aB))
        ratio = lam / aB
    else:
        if theta0 is None:
            from .reference import THETA0
            theta0 = THETA0
        c = max(0.0, (theta0 * aB - lam) / aB**0.75) if C_hat is None else C_hat
        bound = theta0 * aB - c * aB**0.75
        ratio = lam / (theta0 * aB)
    return SpectralReport(B=B, bc=bc, ground=lam, bound=float(bound),
                          holds=bool(lam >= bound - 1e-9 * aB), ratio=float(ratio))
