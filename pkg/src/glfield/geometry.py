"""Star-shaped domains, applied field profiles and the sets built from them.

A domain is ``{x : |x| < r(theta(x))}`` for a smooth positive 2*pi-periodic
radius ``r``. The boundary is parametrized counterclockwise by arc length, with
``nu`` the inward unit normal so that ``det(gamma', nu) = 1``. Everything
geometric (arc length, curvature, tubular coordinates) is computed from a
trigonometric interpolant of ``r`` sampled at ``n_modes`` points.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.spatial import cKDTree


class OutOfChartError(ValueError):
    """Point lies outside the tubular neighbourhood where boundary coordinates exist."""


class JacobianDomainError(ValueError):
    pass


class StarDomain:
    """Smooth star-shaped domain given by its radius function ``r(theta)``."""

    def __init__(self, radius: Callable[[np.ndarray], np.ndarray], n_modes: int = 256,
                 name: str = "star"):
        self.name = name
        self._radius_fn = radius
        th = 2 * np.pi * np.arange(n_modes) / n_modes
        rs = np.asarray(radius(th), float) * np.ones(n_modes)
        if np.any(rs <= 0):
            raise ValueError("radius function must be positive")
        self._coef = np.fft.rfft(rs) / n_modes
        self._coef[1:] *= 2.0
        if n_modes % 2 == 0:
            self._coef[-1] /= 2.0
        self._k = np.arange(self._coef.size)
        self.n_modes = n_modes
        # arc length table on a fine theta grid (periodic trapezoid is spectral)
        self._th_tab = 2 * np.pi * np.arange(4 * n_modes + 1) / (4 * n_modes)
        self._gl_x, self._gl_w = np.polynomial.legendre.leggauss(6)
        seg = self._gauss(self._th_tab[:-1], self._th_tab[1:])
        self._s_tab = np.concatenate([[0.0], np.cumsum(seg)])
        self.boundary_length = float(self._s_tab[-1])
        self._tree_s = np.linspace(0, self.boundary_length, 8 * n_modes, endpoint=False)
        self._tree = cKDTree(self.gamma(self._tree_s))
        self.tubular_width = self._find_tubular_width()

    # --- constructors -----------------------------------------------------
    @classmethod
    def disk(cls, radius: float = 1.0):
        return cls(lambda th: np.full_like(th, radius), n_modes=64, name=f"disk({radius})")

    @classmethod
    def fourier(cls, a0: float = 1.0, terms=((2, 0.1, 0.0),), n_modes: int = 128):
        """``r = a0 + sum a cos(k theta + phase)`` for ``(k, a, phase)`` in ``terms``."""
        terms = tuple(tuple(t) for t in terms)

        def r(th):
            out = np.full_like(th, a0, dtype=float)
            for k, a, ph in terms:
                out = out + a * np.cos(k * th + ph)
            return out
        return cls(r, n_modes=n_modes, name=f"fourier({a0}, {terms})")

    # --- radius and its theta derivatives ---------------------------------
    def radius(self, th, deriv: int = 0):
        th = np.asarray(th, float)
        c = self._coef * (1j * self._k) ** deriv
        flat = th.ravel()
        out = np.empty(flat.shape)
        step = max(1, 2**22 // self._k.size)
        for i in range(0, flat.size, step):
            out[i:i + step] = np.real(np.exp(1j * np.multiply.outer(flat[i:i + step], self._k)) @ c)
        return out.reshape(th.shape)

    def _point(self, th, deriv=0):
        r0 = self.radius(th)
        c, s = np.cos(th), np.sin(th)
        if deriv == 0:
            return np.stack([r0 * c, r0 * s], axis=-1)
        r1 = self.radius(th, 1)
        if deriv == 1:
            return np.stack([r1 * c - r0 * s, r1 * s + r0 * c], axis=-1)
        r2 = self.radius(th, 2)
        return np.stack([r2 * c - 2 * r1 * s - r0 * c, r2 * s + 2 * r1 * c - r0 * s], axis=-1)

    def _speed(self, th):
        return np.linalg.norm(self._point(th, 1), axis=-1)

    # --- arc-length parametrization ------------------------------------------
    def theta_of_s(self, s):
        s = np.mod(np.asarray(s, float), self.boundary_length)
        th = np.interp(s, self._s_tab, self._th_tab)
        for _ in range(3):
            # refine with the exact speed: ds/dtheta = |P'(theta)|
            L = self.boundary_length
            diff = np.mod(self._s_of_theta(th) - s + 0.5 * L, L) - 0.5 * L
            th = th - diff / self._speed(th)
        return th

    def _s_of_theta(self, th):
        th = np.mod(th, 2 * np.pi)
        i = np.clip(np.searchsorted(self._th_tab, th) - 1, 0, self._th_tab.size - 2)
        t0 = self._th_tab[i]
        return self._s_tab[i] + self._gauss(t0, th)

    def _gauss(self, a, b):
        """Gauss-Legendre arc length between parameters ``a`` and ``b``."""
        a, b = np.asarray(a, float), np.asarray(b, float)
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes = mid[..., None] + half[..., None] * self._gl_x
        return half * (self._speed(nodes) @ self._gl_w)

    def gamma(self, s):
        return self._point(self.theta_of_s(s))

    def tangent(self, s):
        th = self.theta_of_s(s)
        d = self._point(th, 1)
        return d / np.linalg.norm(d, axis=-1)[..., None]

    def normal(self, s):
        """Inward unit normal, the tangent rotated by +90 degrees."""
        t = self.tangent(s)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def curvature(self, s):
        th = self.theta_of_s(s)
        d1, d2 = self._point(th, 1), self._point(th, 2)
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return cross / np.linalg.norm(d1, axis=-1) ** 3

    # --- inside test and distances ----------------------------------------
    def level(self, x, y):
        """Negative inside, positive outside: ``|x| - r(theta(x))``."""
        x, y = np.asarray(x, float), np.asarray(y, float)
        th = np.arctan2(y, x)
        return np.hypot(x, y) - np.asarray(self._radius_fn(th), float) * np.ones_like(th)

    def contains(self, x, y):
        return self.level(x, y) < 0

    @property
    def diameter(self) -> float:
        pts = self.gamma(np.linspace(0, self.boundary_length, 720, endpoint=False))
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        return float(d.max())

    @property
    def area(self) -> float:
        th = 2 * np.pi * np.arange(4096) / 4096
        return float(0.5 * np.mean(self.radius(th) ** 2) * 2 * np.pi)

    def tubular(self, s, t):
        """The map Phi(s, t) = gamma(s) + t nu(s)."""
        s, t = np.asarray(s, float), np.asarray(t, float)
        return self.gamma(s) + t[..., None] * self.normal(s)

    def foot_point(self, pts, newton_steps: int = 8):
        """Nearest boundary arc-length ``s`` and signed distance (positive inside)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        _, idx = self._tree.query(pts)
        th = self.theta_of_s(self._tree_s[idx])
        for _ in range(newton_steps):
            P, P1, P2 = self._point(th), self._point(th, 1), self._point(th, 2)
            diff = pts - P
            f = np.sum(diff * P1, axis=-1)
            fp = -np.sum(P1 * P1, axis=-1) + np.sum(diff * P2, axis=-1)
            step = np.where(fp != 0, f / np.where(fp == 0, 1, fp), 0.0)
            th = th - step
        s = np.mod(self._s_of_theta(np.mod(th, 2 * np.pi)), self.boundary_length)
        dist = np.linalg.norm(pts - self._point(th), axis=-1)
        sign = np.where(self.contains(pts[:, 0], pts[:, 1]), 1.0, -1.0)
        return s, sign * dist

    def distance_to_boundary(self, x, y):
        pts = np.stack([np.ravel(x), np.ravel(y)], axis=-1)
        _, t = self.foot_point(pts)
        return t.reshape(np.shape(x))

    def _find_tubular_width(self) -> float:
        kmax = float(np.max(self.curvature(self._tree_s[::4])))
        hi = 1.0 / kmax if kmax > 0 else self.diameter
        hi = min(hi, 0.5 * self.diameter)
        s = self._tree_s[::4]
        P, nu = self.gamma(s), self.normal(s)

        def injective(t):
            pts = P + t * nu
            d, _ = self._tree.query(pts)
            return bool(np.all(d >= t * (1 - 1e-3) - 1e-9))
        lo = 0.0
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if injective(mid):
                lo = mid
            else:
                hi = mid
        return 0.5 * lo

    def boundary_coords(self, pts):
        """(s, t) with Phi(s, t) = x; raises OutOfChartError outside ``t < t0``."""
        s, t = self.foot_point(pts)
        if np.any(t < -1e-12) or np.any(t >= self.tubular_width):
            raise OutOfChartError(
                f"point(s) outside tubular neighbourhood of width {self.tubular_width:.4g}")
        return s, np.maximum(t, 0.0)

    def jacobian(self, s, t):
        """a(s, t) = 1 - t k(s), defined for t in [0, t0]."""
        t = np.asarray(t, float)
        if np.any(t < 0) or np.any(t > self.tubular_width):
            raise JacobianDomainError(f"t outside [0, {self.tubular_width:.4g}]")
        out = 1.0 - t * self.curvature(s)
        return out

    def arc_distance(self, s1, s2):
        d = np.mod(np.asarray(s1) - np.asarray(s2), self.boundary_length)
        return np.minimum(d, self.boundary_length - d)

    def to_dict(self) -> dict:
        return {"name": self.name, "boundary_length": self.boundary_length,
                "tubular_width": self.tubular_width}


# --- applied field profiles -------------------------------------------------

@dataclass
class FieldProfile:
    """Applied field ``B0`` with its declared Holder exponent."""

    evaluate: Callable
    holder_alpha: float = 1.0
    name: str = "custom"
    zero_set: str | None = None
    exact_beta: tuple | None = None

    def __call__(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return np.asarray(self.evaluate(x, y), float) * np.ones(np.broadcast(x, y).shape)

    def negated(self) -> "FieldProfile":
        f = self.evaluate
        return FieldProfile(lambda x, y: -f(x, y), self.holder_alpha, f"-{self.name}",
                            self.zero_set, self.exact_beta)

    def betas(self, domain: StarDomain, h: float = 0.01, oversample: int = 10):
        """Sampled (beta0, beta1): sup |B0| over the closed domain and over the boundary."""
        R = domain.diameter
        c = np.arange(-R, R + h, h)
        X, Y = np.meshgrid(c, c, indexing="ij")
        inside = domain.contains(X, Y)
        nb = int(oversample * domain.boundary_length / h)
        bp = domain.gamma(np.linspace(0, domain.boundary_length, nb, endpoint=False))
        b1 = float(np.max(np.abs(self(bp[:, 0], bp[:, 1]))))
        b0 = float(np.max(np.abs(self(X[inside], Y[inside])), initial=0.0))
        return max(b0, b1), b1

    def assumption_ok(self, domain: StarDomain) -> bool:
        """beta1 >= beta0 > 0, checked per theorem rather than enforced."""
        b0, b1 = self.betas(domain)
        return b0 > 0 and b1 >= b0 - 1e-9

    def holder_quotient(self, domain: StarDomain, n_pairs: int = 20000, seed: int = 0):
        rng = np.random.default_rng(seed)
        R = domain.diameter / 2
        pts = rng.uniform(-R, R, size=(4 * n_pairs, 2))
        pts = pts[domain.contains(pts[:, 0], pts[:, 1])]
        n = pts.shape[0] // 2
        p, q = pts[:n], pts[n:2 * n]
        d = np.linalg.norm(p - q, axis=1)
        num = np.abs(self(p[:, 0], p[:, 1]) - self(q[:, 0], q[:, 1]))
        return float(np.max(num / np.maximum(d, 1e-12) ** self.holder_alpha))


def constant(c: float = 1.0) -> FieldProfile:
    return FieldProfile(lambda x, y: np.full(np.broadcast(x, y).shape, float(c)), 1.0,
                        f"constant({c})", None, (abs(c), abs(c)))


def linear_x1() -> FieldProfile:
    return FieldProfile(lambda x, y: x + 0.0 * y, 1.0, "linear_x1", "x1 = 0")


def shifted_linear(c: float) -> FieldProfile:
    return FieldProfile(lambda x, y: x + c + 0.0 * y, 1.0, f"shifted_linear({c})",
                        f"x1 = {-c}")


def holder(c: float, alpha: float) -> FieldProfile:
    return FieldProfile(lambda x, y: np.sign(x) * np.abs(x) ** alpha + c + 0.0 * y, alpha,
                        f"holder({c}, {alpha})")


def tabulated(path, holder_alpha: float = 1.0) -> FieldProfile:
    """Field from a CSV with columns x1, x2, B0 (scattered, linearly interpolated)."""
    with open(path) as fh:
        rows = [(float(r["x1"]), float(r["x2"]), float(r["B0"])) for r in csv.DictReader(fh)]
    arr = np.array(rows)
    lin = LinearNDInterpolator(arr[:, :2], arr[:, 2])
    near = NearestNDInterpolator(arr[:, :2], arr[:, 2])

    def ev(x, y):
        v = lin(x, y)
        return np.where(np.isnan(v), near(x, y), v)
    return FieldProfile(ev, holder_alpha, f"tabulated({path})")


PROFILES = {"constant": constant, "linear_x1": linear_x1, "shifted_linear": shifted_linear,
            "holder": holder, "tabulated": tabulated}


def make_profile(spec) -> FieldProfile:
    """Build a profile from ``{"kind": name, **params}`` or a bare name."""
    if isinstance(spec, FieldProfile):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind not in PROFILES:
        raise ValueError(f"unknown field profile {kind!r}")
    return PROFILES[kind](**spec)


def make_domain(spec) -> StarDomain:
    if isinstance(spec, StarDomain):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "disk":
        return StarDomain.disk(**spec)
    if kind == "fourier":
        return StarDomain.fourier(**spec)
    raise ValueError(f"unknown domain {kind!r}")


# --- level sets, windows, distance functions --------------------------------

@dataclass(frozen=True)
class LevelSetQuery:
    epsilon: float
    kind: Literal["bulk", "boundary", "omega"] = "bulk"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.kind not in ("bulk", "boundary", "omega"):
            raise ValueError(f"unknown level-set kind {self.kind!r}")


@dataclass
class LevelSet:
    mask: np.ndarray
    measure: float


def level_sets(field: FieldProfile, q: LevelSetQuery, grid, theta0: float | None = None,
               n_boundary: int = 4096) -> LevelSet:
    """Indicator of V(eps), V^bnd(eps) or omega(eps) and its measure.

    ``grid`` is a :class:`glfield.grid.DomainGrid`. Bulk/omega masks are over grid
    nodes with area measured by the node weights; the boundary kind is over an
    ``n_boundary``-point arc-length grid with its measure in arc length.
    """
    if q.kind == "boundary":
        if theta0 is None:
            from .reference import THETA0
            theta0 = THETA0
        dom = grid.domain
        s = np.linspace(0, dom.boundary_length, n_boundary, endpoint=False)
        p = dom.gamma(s)
        mask = theta0 * np.abs(field(p[:, 0], p[:, 1])) <= q.epsilon
        return LevelSet(mask=mask, measure=float(mask.sum() * dom.boundary_length / n_boundary))
    b = np.abs(field(grid.x, grid.y))
    mask = b <= q.epsilon if q.kind == "bulk" else b > q.epsilon
    return LevelSet(mask=mask, measure=float(np.sum(grid.weights[mask])))


@dataclass
class DistanceFunctions:
    t: np.ndarray
    zeta: np.ndarray
    degenerate: bool
    omega: np.ndarray


def distance_functions(field: FieldProfile, lam: float, grid,
                       refine: int = 4) -> DistanceFunctions:
    """t_lambda = dist(x, boundary of omega(lambda)), zeta = dist to its interior part.

    Both vanish outside omega(lambda). The interior part of the boundary,
    ``Omega ∩ ∂omega``, is the level curve ``|B0| = lambda`` inside the domain,
    sampled on a ``refine``-times finer grid by linear interpolation along
    grid lines. When it is empty zeta is set to the domain diameter and the
    result is flagged degenerate.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    dom = grid.domain
    x, y = grid.x, grid.y
    absb = np.abs(field(x, y))
    omega = absb > lam
    t = np.zeros_like(x)
    zeta = np.zeros_like(x)
    if not omega.any():
        return DistanceFunctions(t, zeta, False, omega)
    curve = _level_curve_points(field, lam, dom, grid.h / refine)
    dist_bd = np.maximum(dom.distance_to_boundary(x[omega], y[omega]), 0.0)
    if curve.shape[0] == 0:
        degenerate = True
        dz = np.full(dist_bd.shape, dom.diameter)
    else:
        degenerate = False
        dz, _ = cKDTree(curve).query(np.stack([x[omega], y[omega]], axis=1))
    zeta[omega] = dz
    t[omega] = np.minimum(dz, dist_bd)
    return DistanceFunctions(t, zeta, degenerate, omega)


def _level_curve_points(field, lam, dom, h):
    R = 0.5 * dom.diameter + 2 * h
    c = np.arange(-R, R + h / 2, h)
    X, Y = np.meshgrid(c, c, indexing="ij")
    F = np.abs(field(X, Y)) - lam
    pts = []
    for axis in (0, 1):
        a = F.take(np.arange(F.shape[axis] - 1), axis=axis)
        b = F.take(np.arange(1, F.shape[axis]), axis=axis)
        cross = (a * b < 0)
        frac = np.where(cross, a / np.where(cross, a - b, 1.0), 0.0)
        Xa = X.take(np.arange(X.shape[axis] - 1), axis=axis)
        Ya = Y.take(np.arange(Y.shape[axis] - 1), axis=axis)
        if axis == 0:
            px, py = Xa + frac * h, Ya
        else:
            px, py = Xa, Ya + frac * h
        pts.append(np.stack([px[cross], py[cross]], axis=1))
    pts = np.concatenate(pts) if pts else np.zeros((0, 2))
    if pts.size:
        pts = pts[dom.contains(pts[:, 0], pts[:, 1])]
    return pts


@dataclass(frozen=True)
class Window:
    """Interior square Q_{2l}(x0) or boundary patch {arc dist < l, depth < 2l}."""

    center: tuple
    halfwidth: float
    kind: Literal["interior", "boundary"] = "interior"

    def __post_init__(self):
        if self.halfwidth <= 0:
            raise ValueError("halfwidth must be positive")
        if self.kind not in ("interior", "boundary"):
            raise ValueError(f"unknown window kind {self.kind!r}")

    def contained_in(self, domain: StarDomain) -> bool:
        if self.kind == "boundary":
            _, t = domain.foot_point(np.array([self.center]))
            return abs(float(t[0])) < 1e-8
        cx, cy = self.center
        l = self.halfwidth
        edge = np.linspace(-l, l, 41)
        xs = np.concatenate([cx + edge, cx + edge, np.full(41, cx - l), np.full(41, cx + l)])
        ys = np.concatenate([np.full(41, cy - l), np.full(41, cy + l), cy + edge, cy + edge])
        return bool(np.all(domain.level(xs, ys) <= 0))

    def mask(self, grid, depth_factor: float = 2.0):
        if self.kind == "interior":
            cx, cy = self.center
            return (np.abs(grid.x - cx) < self.halfwidth) & (np.abs(grid.y - cy) < self.halfwidth)
        s0, _ = grid.domain.foot_point(np.array([self.center]))
        return (grid.domain.arc_distance(grid.s, s0[0]) < self.halfwidth) & (
            grid.t < depth_factor * self.halfwidth)
