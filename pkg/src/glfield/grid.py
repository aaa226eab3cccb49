"""Cut-cell square lattice on a star domain and the reference potential F.

Nodes sit on ``h * Z^2``. A node carries the area of its dual cell that lies
in the domain, an edge carries the fraction of its dual face inside the
domain (its conductance), and a plaquette carries its own area fraction. The
vector potential lives on the edges of every plaquette that touches a
kinetic edge, stored as line integrals.

The reference potential is ``F = grad-perp f`` with ``-Laplace f = B0`` and
``f = 0`` on the boundary. ``f`` is stored at plaquette centres, so that edge
values are differences of ``f`` and the plaquette circulation is the
five-point Laplacian of ``f``: the discrete curl of ``F`` equals ``B0`` at
interior plaquette centres to round-off, and ``F`` is exactly divergence
free. Cut plaquettes are closed by linear extrapolation to the boundary
along the ray from the nearest interior plaquette.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .geometry import FieldProfile, StarDomain

_NODE_SUB = 8
_FACE_SUB = 16


class PoissonSolveError(RuntimeError):
    pass


def _fraction_inside(domain, cx, cy, hx, hy, n):
    """Fraction of the boxes ``[cx +- hx/2] x [cy +- hy/2]`` inside, by n x n midpoint sampling."""
    if cx.size == 0:
        return np.zeros(0)
    ox = ((np.arange(n) + 0.5) / n - 0.5) * hx
    oy = ((np.arange(n) + 0.5) / n - 0.5) * hy
    X = cx[:, None, None] + ox[None, :, None]
    Y = cy[:, None, None] + oy[None, None, :]
    inside = domain.level(X, Y) < 0
    return inside.reshape(cx.size, -1).mean(axis=1)


def _classify(domain, cx, cy, size, hx, hy, n):
    """Area fractions, supersampling only near the boundary."""
    lev = domain.level(cx, cy)
    frac = np.where(lev < 0, 1.0, 0.0)
    near = np.abs(lev) < 2.0 * size
    frac[near] = _fraction_inside(domain, cx[near], cy[near], hx, hy, n)
    return frac


class DomainGrid:
    """Masked staircase lattice with cut-cell weights.

    Attributes of interest: ``x, y, weights`` on active nodes, ``edges`` and
    ``conductance`` for the kinetic term (active-node indices), ``a_edges``
    (all vector-potential edges, as lattice-node index pairs), ``kin_to_a``
    (position of each kinetic edge in ``a_edges``), ``curl`` (sparse
    plaquette circulation operator on ``a_edges``) and ``plaq_weights``.
    """

    def __init__(self, domain: StarDomain, h: float):
        if h <= 0:
            raise ValueError("h must be positive")
        self.domain = domain
        self.h = float(h)
        rmax = float(np.max(domain.radius(np.linspace(0, 2 * np.pi, 2048, endpoint=False))))
        half = int(np.ceil(rmax / h)) + 3
        self.N = N = 2 * half + 1
        self.origin = -half * h
        c = self.origin + h * np.arange(N)
        self.coords = c
        I, J = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        X, Y = c[I], c[J]

        node_frac = _classify(domain, X.ravel(), Y.ravel(), h, h, h, _NODE_SUB).reshape(N, N)
        # conductance of x-edge (i,j)-(i+1,j): dual face is the vertical segment x = x_i + h/2
        fx = np.zeros((N - 1, N))
        fx[:] = _classify(domain, (X[:-1] + 0.5 * h).ravel(), Y[:-1].ravel(), h,
                          1e-12, h, _FACE_SUB).reshape(N - 1, N)
        fy = _classify(domain, X[:, :-1].ravel(), (Y[:, :-1] + 0.5 * h).ravel(), h,
                       h, 1e-12, _FACE_SUB).reshape(N, N - 1)
        active = node_frac >= 0.01
        ex_ok = (fx > 0) & active[:-1] & active[1:]
        ey_ok = (fy > 0) & active[:, :-1] & active[:, 1:]
        has_edge = np.zeros((N, N), bool)
        has_edge[:-1] |= ex_ok
        has_edge[1:] |= ex_ok
        has_edge[:, :-1] |= ey_ok
        has_edge[:, 1:] |= ey_ok
        active &= has_edge
        ex_ok &= active[:-1] & active[1:]
        ey_ok &= active[:, :-1] & active[:, 1:]

        self.active_mask = active
        self.node_index = -np.ones((N, N), int)
        self.node_index[active] = np.arange(int(active.sum()))
        self.ij = np.argwhere(active)
        self.x = X[active]
        self.y = Y[active]
        self.weights = node_frac[active] * h * h

        # lattice-wide edge numbering: x-edges first, then y-edges
        nx_e = (N - 1) * N
        self._nx_e = nx_e

        def xid(i, j):
            return i * N + j

        def yid(i, j):
            return nx_e + i * (N - 1) + j

        ki, kj = np.nonzero(ex_ok)
        li, lj = np.nonzero(ey_ok)
        kin_ids = np.concatenate([xid(ki, kj), yid(li, lj)])
        self.edges = np.concatenate([
            np.stack([self.node_index[ki, kj], self.node_index[ki + 1, kj]], 1),
            np.stack([self.node_index[li, lj], self.node_index[li, lj + 1]], 1)])
        self.conductance = np.concatenate([fx[ki, kj], fy[li, lj]])

        # plaquettes touching a kinetic edge
        touch = np.zeros((N - 1, N - 1), bool)
        touch[ki[kj < N - 1], kj[kj < N - 1]] = True
        touch[ki[kj > 0], kj[kj > 0] - 1] = True
        touch[li[li < N - 1], lj[li < N - 1]] = True
        touch[li[li > 0] - 1, lj[li > 0]] = True
        PI, PJ = np.nonzero(touch)
        pcx = c[PI] + 0.5 * h
        pcy = c[PJ] + 0.5 * h
        pfrac = _classify(domain, pcx, pcy, h, h, h, _NODE_SUB)
        self.plaq_ij = np.stack([PI, PJ], 1)
        self.plaq_x, self.plaq_y = pcx, pcy
        self.plaq_weights = pfrac * h * h
        corners_in = np.ones(PI.size, bool)
        for di in (0, 1):
            for dj in (0, 1):
                corners_in &= domain.level(c[PI + di], c[PJ + dj]) < 0
        self.plaq_interior = (pfrac == 1.0) & corners_in

        # vector-potential edges: every edge of a touched plaquette
        p_edges = np.stack([xid(PI, PJ), yid(PI + 1, PJ), xid(PI, PJ + 1), yid(PI, PJ)], 1)
        a_ids = np.unique(np.concatenate([p_edges.ravel(), kin_ids]))
        self.a_ids = a_ids
        pos = {int(e): n for n, e in enumerate(a_ids)}
        self.kin_to_a = np.array([pos[int(e)] for e in kin_ids], int)
        signs = np.array([1.0, 1.0, -1.0, -1.0])
        rows = np.repeat(np.arange(PI.size), 4)
        cols = np.array([pos[int(e)] for e in p_edges.ravel()], int)
        self.curl = sp.csr_matrix((np.tile(signs, PI.size), (rows, cols)),
                                  shape=(PI.size, a_ids.size))
        # lattice endpoints of each A-edge
        is_x = a_ids < nx_e
        ai = np.where(is_x, a_ids // N, (a_ids - nx_e) // (N - 1))
        aj = np.where(is_x, a_ids % N, (a_ids - nx_e) % (N - 1))
        self.a_is_x = is_x
        self.a_tail = np.stack([ai, aj], 1)
        self.a_head = np.stack([ai + is_x, aj + (~is_x)], 1)

    # --- convenience ---------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return self.x.size

    @property
    def n_a(self) -> int:
        return self.a_ids.size

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def edge_midpoints(self):
        """Midpoints and unit direction flag (True for x-edges) of every A-edge."""
        c = self.coords
        tx, ty = c[self.a_tail[:, 0]], c[self.a_tail[:, 1]]
        hx, hy = c[self.a_head[:, 0]], c[self.a_head[:, 1]]
        return 0.5 * (tx + hx), 0.5 * (ty + hy), self.a_is_x

    def line_integrals(self, A):
        """Midpoint-rule line integrals of a vector field ``A(x, y) -> (A1, A2)`` on A-edges."""
        mx, my, is_x = self.edge_midpoints()
        a1, a2 = A(mx, my)
        return self.h * np.where(is_x, a1, a2)

    def gradient_line_integrals(self, phi_lattice):
        """Exact line integrals of a gradient given by lattice-node values."""
        t, hd = self.a_tail, self.a_head
        return phi_lattice[hd[:, 0], hd[:, 1]] - phi_lattice[t[:, 0], t[:, 1]]

    def lattice_values(self, fn):
        X, Y = np.meshgrid(self.coords, self.coords, indexing="ij")
        return fn(X, Y)

    @cached_property
    def boundary_st(self):
        """Foot-point arc length ``s`` and distance ``t`` (>= 0) for every active node."""
        s, t = self.domain.foot_point(np.stack([self.x, self.y], 1))
        return s, np.maximum(t, 0.0)

    @property
    def s(self):
        return self.boundary_st[0]

    @property
    def t(self):
        return self.boundary_st[1]

    def node_average(self, a):
        """Node vector field from edge line integrals: mean of the adjacent edges / h."""
        N = self.N
        sx = np.zeros((N, N))
        cx = np.zeros((N, N))
        sy = np.zeros((N, N))
        cy = np.zeros((N, N))
        for store, cnt, sel in ((sx, cx, self.a_is_x), (sy, cy, ~self.a_is_x)):
            t, hd = self.a_tail[sel], self.a_head[sel]
            np.add.at(store, (t[:, 0], t[:, 1]), a[sel])
            np.add.at(store, (hd[:, 0], hd[:, 1]), a[sel])
            np.add.at(cnt, (t[:, 0], t[:, 1]), 1)
            np.add.at(cnt, (hd[:, 0], hd[:, 1]), 1)
        act = self.active_mask
        with np.errstate(invalid="ignore", divide="ignore"):
            return (sx[act] / cx[act]) / self.h, (sy[act] / cy[act]) / self.h

    def divergence(self, a):
        """Net outflow of the edge field at every lattice node touched by an A-edge."""
        N = self.N
        div = np.zeros((N, N))
        np.add.at(div, (self.a_tail[:, 0], self.a_tail[:, 1]), a)
        np.add.at(div, (self.a_head[:, 0], self.a_head[:, 1]), -a)
        return div


@dataclass
class ReferencePotential:
    a: np.ndarray
    f: np.ndarray
    plaquette_field: np.ndarray
    ghost_count: int


def compute_F(field: FieldProfile, domain: StarDomain, grid: DomainGrid) -> ReferencePotential:
    """Edge line integrals of F = grad-perp f, ``-Laplace f = B0``, ``f = 0`` on the boundary."""
    h = grid.h
    N = grid.N
    PI, PJ = grid.plaq_ij[:, 0], grid.plaq_ij[:, 1]
    # unknowns: touched plaquettes plus their four neighbours
    need = np.zeros((N + 1, N + 1), bool)  # padded by one for index -1
    for di, dj in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
        need[PI + di + 1, PJ + dj + 1] = True
    UI, UJ = np.nonzero(need)
    UI, UJ = UI - 1, UJ - 1
    idx = -np.ones((N + 1, N + 1), int)
    idx[UI + 1, UJ + 1] = np.arange(UI.size)
    cxs = grid.origin + h * (UI + 0.5)
    cys = grid.origin + h * (UJ + 0.5)

    interior = np.zeros((N + 1, N + 1), bool)
    interior[PI[grid.plaq_interior] + 1, PJ[grid.plaq_interior] + 1] = True
    is_int = interior[UI + 1, UJ + 1]

    rows, cols, vals = [], [], []
    rhs = np.zeros(UI.size)
    n_int = np.nonzero(is_int)[0]
    rhs[n_int] = h * h * field(cxs[n_int], cys[n_int])
    rows.append(n_int)
    cols.append(n_int)
    vals.append(np.full(n_int.size, 4.0))
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = idx[UI[n_int] + di + 1, UJ[n_int] + dj + 1]
        if np.any(nb < 0):
            raise PoissonSolveError("interior plaquette with a missing neighbour")
        rows.append(n_int)
        cols.append(nb)
        vals.append(np.full(n_int.size, -1.0))

    ghosts = np.nonzero(~is_int)[0]
    if n_int.size == 0:
        raise PoissonSolveError("grid too coarse: no interior plaquettes")
    tree = cKDTree(np.stack([cxs[n_int], cys[n_int]], 1))
    _, near = tree.query(np.stack([cxs[ghosts], cys[ghosts]], 1))
    anchors = n_int[near]
    lam = np.empty(ghosts.size)
    for n, (g, p) in enumerate(zip(ghosts, anchors)):
        px, py = cxs[p], cys[p]
        dx, dy = cxs[g] - px, cys[g] - py

        def lev(t):
            return float(domain.level(px + t * dx, py + t * dy))
        hi = 1.0
        while lev(hi) < 0:
            hi *= 2.0
        lam[n] = brentq(lev, 0.0, hi, xtol=1e-13)
    # f(boundary point) = (1 - lam) f_p + lam f_q = 0
    rows += [ghosts, ghosts]
    cols += [ghosts, anchors]
    vals += [lam, 1.0 - lam]
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(UI.size, UI.size))
    try:
        f = spla.spsolve(M.tocsc(), rhs)
    except RuntimeError as err:  # singular factor
        raise PoissonSolveError(str(err)) from err
    if not np.all(np.isfinite(f)) or np.linalg.norm(M @ f - rhs) > 1e-10 * max(
            1.0, np.linalg.norm(rhs)):
        raise PoissonSolveError("stream-function solve did not reach 1e-10")

    F = np.full((N + 1, N + 1), np.nan)
    F[UI + 1, UJ + 1] = f
    t, hd, is_x = grid.a_tail, grid.a_head, grid.a_is_x
    i, j = t[:, 0], t[:, 1]
    # x-edge (i,j): plaquette above (i,j) minus below (i,j-1)
    ax = F[i + 1, j + 1] - F[i + 1, j]
    # y-edge (i,j): plaquette left (i-1,j) minus right (i,j)
    ay = F[i, j + 1] - F[i + 1, j + 1]
    a = np.where(is_x, ax, ay)
    if not np.all(np.isfinite(a)):
        raise PoissonSolveError("reference potential undefined on some edge")
    pf = (grid.curl @ a) / (h * h)
    return ReferencePotential(a=a, f=F[1:, 1:], plaquette_field=pf, ghost_count=int(ghosts.size))
