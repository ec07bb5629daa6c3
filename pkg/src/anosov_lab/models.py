"""Example systems on the mapping torus of a 2x2 toral automorphism.

Points are stored as float arrays of shape (N, 3) holding (y1, y2, t) with
every coordinate in [0, 1).  The mapping torus is glued by
(y, 1) ~ (A y mod 1, 0), so moving up through t = 1 applies the fiber map once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    ClosedFormUnavailable,
    ConeViolation,
    DegenerateFixedPoint,
    ModelError,
    NonInvertibleRoof,
)

FAMILIES = ("cat_suspension", "da_suspension", "product_skew")
ROOF_KINDS = ("constant", "sinusoidal", "piecewise_linear")

FD_STEP = 2.0**-20  # nearest power of two to 1e-6: exact shifts, no cancellation noise
KNOT_SKIP = 1e-4


def wrap01(x):
    """Reduce to [0, 1); guards against x - floor(x) rounding up to 1.0."""
    out = np.asarray(x, dtype=float) - np.floor(x)
    return np.where(out >= 1.0, 0.0, out)


def wrap_half(x):
    return np.asarray(x, dtype=float) - np.round(x)


def _as_points(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[-1] != 3:
        raise ValueError(f"points must have 3 coordinates, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# points


@dataclass(frozen=True)
class MappingTorusPoint:
    y: tuple[float, float]
    t: float

    def __post_init__(self):
        y = tuple(float(v) for v in wrap01(np.asarray(self.y, dtype=float)))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", float(wrap01(self.t)))

    def as_array(self) -> np.ndarray:
        return np.array([self.y[0], self.y[1], self.t])

    @classmethod
    def from_array(cls, arr) -> "MappingTorusPoint":
        a = np.asarray(arr, dtype=float).reshape(3)
        return cls((a[0], a[1]), a[2])

    def __str__(self) -> str:
        return format_point(self)


def format_point(p) -> str:
    a = p.as_array() if isinstance(p, MappingTorusPoint) else np.asarray(p, dtype=float)
    return f"({a[0]:.12g},{a[1]:.12g};{a[2]:.12g})"


def parse_point(text: str) -> MappingTorusPoint:
    body = text.strip()
    if not (body.startswith("(") and body.endswith(")") and ";" in body):
        raise ValueError(f"bad point literal {text!r}; expected (y1,y2;t)")
    ys, t = body[1:-1].split(";")
    y1, y2 = ys.split(",")
    return MappingTorusPoint((float(y1), float(y2)), float(t))


# ---------------------------------------------------------------------------
# fiber maps


def _int_matrix(entries) -> np.ndarray:
    m = np.asarray(entries)
    if m.shape != (2, 2):
        raise ModelError(f"matrix must be 2x2, got shape {m.shape}")
    if not np.all(np.equal(np.mod(m, 1), 0)):
        raise ModelError("matrix entries must be integers")
    return m.astype(np.int64)


@dataclass(frozen=True)
class LinearFiberMap:
    """Linear map of T^2 given by an integer matrix with determinant +-1."""

    entries: tuple[tuple[int, int], tuple[int, int]]

    is_linear = True

    def __post_init__(self):
        m = _int_matrix(self.entries)
        object.__setattr__(self, "entries", tuple(tuple(int(v) for v in row) for row in m))
        if abs(round(np.linalg.det(m))) != 1:
            raise ModelError(f"|det A| must be 1, got det={np.linalg.det(m):.6g}")

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.array(self.entries, dtype=np.int64)

    @cached_property
    def det(self) -> int:
        (a, b), (c, d) = self.entries
        return a * d - b * c

    @cached_property
    def inverse_matrix(self) -> np.ndarray:
        (a, b), (c, d) = self.entries
        return self.det * np.array([[d, -b], [-c, a]], dtype=np.int64)

    def power_matrix(self, n: int) -> np.ndarray:
        base = self.matrix if n >= 0 else self.inverse_matrix
        return np.linalg.matrix_power(base, abs(int(n)))

    def lift(self, y, n: int = 1) -> np.ndarray:
        """Lifted n-th iterate on R^2 (no reduction mod 1)."""
        y = np.asarray(y, dtype=float)
        if n == 0:
            return y.copy()
        return y @ self.power_matrix(n).T.astype(float)

    def jacobian(self, y, n: int = 1) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        m = self.power_matrix(n).astype(float)
        return np.broadcast_to(m, y.shape[:-1] + (2, 2)).copy()

    def remainder_bound(self, y, n: int, radius) -> np.ndarray:
        """Taylor remainder of the lifted map: zero for linear maps."""
        return np.zeros(np.asarray(y).reshape(-1, 2).shape[0])

    def abs_lipschitz(self, n: int) -> np.ndarray:
        return np.abs(self.power_matrix(n)).astype(float)

    @property
    def linear_part(self) -> "LinearFiberMap":
        return self


IDENTITY_FIBER = LinearFiberMap(((1, 0), (0, 1)))


@dataclass(frozen=True)
class ToralAutomorphism(LinearFiberMap):
    """Hyperbolic toral automorphism with its eigen-data."""

    def __post_init__(self):
        super().__post_init__()
        tr = self.entries[0][0] + self.entries[1][1]
        if abs(tr) <= 2:
            raise ModelError(f"|trace A| must exceed 2 for hyperbolicity, got trace={tr}")

    @cached_property
    def _eigen(self):
        (a, b), (c, d) = self.entries
        tr, det = a + d, self.det
        disc = math.sqrt(tr * tr - 4 * det)
        roots = sorted([(tr + disc) / 2, (tr - disc) / 2], key=abs)
        lam_s, lam_u = roots

        def vec(lam):
            if b != 0:
                v = np.array([float(b), lam - a])
            else:
                v = np.array([lam - d, float(c)])
            v = v / np.linalg.norm(v)
            if v[np.flatnonzero(np.abs(v) > 1e-15)[0]] < 0:
                v = -v
            return v

        return lam_u, lam_s, vec(lam_u), vec(lam_s)

    @property
    def lambda_u(self) -> float:
        return self._eigen[0]

    @property
    def lambda_s(self) -> float:
        return self._eigen[1]

    @property
    def v_u(self) -> np.ndarray:
        return self._eigen[2].copy()

    @property
    def v_s(self) -> np.ndarray:
        return self._eigen[3].copy()

    @cached_property
    def eigenbasis(self) -> np.ndarray:
        """Columns v_u, v_s."""
        return np.column_stack([self._eigen[2], self._eigen[3]])

    @cached_property
    def eigenbasis_inv(self) -> np.ndarray:
        return np.linalg.inv(self.eigenbasis)


CAT_MAP = ToralAutomorphism(((2, 1), (1, 1)))


def _bump(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 1.0, (1.0 - np.minimum(x, 1.0)) ** 4, 0.0)


def _bump_prime(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 1.0, -4.0 * (1.0 - np.minimum(x, 1.0)) ** 3, 0.0)


@dataclass(frozen=True)
class DAMap:
    """Derived-from-Anosov modification of a toral automorphism at the origin.

    In eigen-coordinates (u, s) about the nearest lattice point the map is
    (u, s) -> (lambda_u u, s (lambda_s + strength * beta(|(u, s)| / radius)))
    with beta(x) = (1 - x)^4 on [0, 1].  The default strength makes the stable
    multiplier at the origin equal to +1.5, so the origin becomes a source.
    """

    base_matrix: ToralAutomorphism
    bump_radius: float = 0.18
    bump_strength: float | None = None
    bump_center: tuple[float, float] = (0.0, 0.0)

    is_linear = False

    def __post_init__(self):
        if not isinstance(self.base_matrix, ToralAutomorphism):
            object.__setattr__(self, "base_matrix", ToralAutomorphism(self.base_matrix))
        if tuple(self.bump_center) != (0.0, 0.0):
            raise ModelError("the DA bump must be centered at the fixed point (0,0)")
        if not (0.0 < self.bump_radius < 0.35):
            raise ModelError(f"bump_radius must lie in (0, 0.35), got {self.bump_radius}")
        if self.bump_strength is None:
            object.__setattr__(self, "bump_strength", 1.5 - self.base_matrix.lambda_s)
        if self.bump_strength <= 0:
            raise ModelError("bump_strength must be positive")
        ls = self.base_matrix.lambda_s
        if abs(ls + self.bump_strength) <= 1.0:
            raise ModelError("origin is not repelling: |lambda_s + strength| <= 1")
        # the stable coordinate map s -> s (ls + mu beta) must stay monotone
        x = np.linspace(0.0, 1.0, 20001)
        slope = ls + self.bump_strength * (_bump(x) + x * _bump_prime(x))
        if slope.min() <= 0:
            raise ModelError(
                f"bump_strength {self.bump_strength:.4g} folds the stable coordinate "
                f"(min slope {slope.min():.4g}); the DA map would not be invertible"
            )

    @property
    def linear_part(self) -> ToralAutomorphism:
        return self.base_matrix

    @property
    def matrix(self) -> np.ndarray:
        return self.base_matrix.matrix

    def _local(self, y):
        """Offset from the nearest lattice point and its eigen-coordinates."""
        d = y - np.round(y)
        us = d @ self.base_matrix.eigenbasis_inv.T
        return d, us[..., 0], us[..., 1]

    def _step(self, y):
        A = self.base_matrix
        _, u, s = self._local(y)
        rho = np.sqrt(u * u + s * s) / self.bump_radius
        extra = self.bump_strength * _bump(rho) * s
        return y @ A.matrix.T.astype(float) + extra[..., None] * A.v_s

    def _step_inverse(self, y):
        A = self.base_matrix
        y0 = y @ A.inverse_matrix.T.astype(float)
        _, u, s_lin = self._local(y0)
        target = A.lambda_s * s_lin
        near = (u * u + s_lin * s_lin) < (self.bump_radius * 1.0001) ** 2
        s = s_lin.copy()
        if np.any(near):
            un, tn = u[near], target[near]
            lo = tn / (A.lambda_s + self.bump_strength)
            hi = tn / A.lambda_s
            lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                rho = np.sqrt(un * un + mid * mid) / self.bump_radius
                val = mid * (A.lambda_s + self.bump_strength * _bump(rho))
                up = val < tn
                lo = np.where(up, mid, lo)
                hi = np.where(up, hi, mid)
            s[near] = 0.5 * (lo + hi)
        return y0 + (s - s_lin)[..., None] * A.v_s

    def lift(self, y, n: int = 1) -> np.ndarray:
        out = np.asarray(y, dtype=float).copy()
        step = self._step if n > 0 else self._step_inverse
        for _ in range(abs(int(n))):
            out = step(out)
        return out

    def _jac1(self, y):
        A = self.base_matrix
        _, u, s = self._local(y)
        r = self.bump_radius
        rho = np.sqrt(u * u + s * s)
        x = rho / r
        grad_u = A.eigenbasis_inv[0]
        grad_s = A.eigenbasis_inv[1]
        with np.errstate(invalid="ignore", divide="ignore"):
            grad_x = (u[..., None] * grad_u + s[..., None] * grad_s) / (rho[..., None] * r)
        grad_x = np.where(rho[..., None] > 0, grad_x, 0.0)
        grad = self.bump_strength * (
            _bump(x)[..., None] * grad_s + (s * _bump_prime(x))[..., None] * grad_x
        )
        J = np.broadcast_to(A.matrix.astype(float), u.shape + (2, 2)).copy()
        J += A.v_s[:, None] * grad[..., None, :]
        return J

    def jacobian(self, y, n: int = 1) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        J = np.broadcast_to(np.eye(2), y.shape[:-1] + (2, 2)).copy()
        cur = y.copy()
        if n >= 0:
            for _ in range(n):
                J = self._jac1(cur) @ J
                cur = self._step(cur)
        else:
            for _ in range(-n):
                prev = self._step_inverse(cur)
                J = np.linalg.inv(self._jac1(prev)) @ J
                cur = prev
        return J

    @cached_property
    def _second_derivative_bounds(self) -> tuple[float, float]:
        """Measured sup of |D^2 g| and |D^2 g^{-1}| over the bump region (x1.5 safety)."""
        A = self.base_matrix
        r = self.bump_radius
        g = np.linspace(-1.05 * r, 1.05 * r, 241)
        uu, ss = np.meshgrid(g, g, indexing="ij")
        pts = np.stack([uu.ravel(), ss.ravel()], axis=1) @ A.eigenbasis.T
        h = 1e-6

        def measure(jac, base):
            tot = np.zeros(len(base))
            for e in np.eye(2):
                dj = (jac(base + h * e) - jac(base - h * e)) / (2 * h)
                tot += np.sum(dj * dj, axis=(1, 2))
            return float(np.sqrt(tot.max()))

        fwd = measure(self._jac1, pts)
        img = self._step(pts)
        inv = measure(lambda z: np.linalg.inv(self._jac1(self._step_inverse(z))), img)
        return 1.5 * fwd, 1.5 * inv

    @cached_property
    def _abs_jac_sup(self) -> np.ndarray:
        r = self.bump_radius
        g = np.linspace(-r, r, 161)
        uu, ss = np.meshgrid(g, g, indexing="ij")
        pts = np.stack([uu.ravel(), ss.ravel()], axis=1) @ self.base_matrix.eigenbasis.T
        J = np.abs(self._jac1(pts)).max(axis=0)
        Ji = np.abs(np.linalg.inv(self._jac1(pts))).max(axis=0)
        lin = np.abs(self.base_matrix.matrix).astype(float)
        lin_i = np.abs(self.base_matrix.inverse_matrix).astype(float)
        return np.stack([np.maximum(J, lin) * 1.05, np.maximum(Ji, lin_i) * 1.05])

    def _near(self, y, margin) -> np.ndarray:
        _, u, s = self._local(y)
        scale = float(np.linalg.norm(self.base_matrix.eigenbasis_inv, 2))
        reach = self.bump_radius + 1.1 * scale * np.asarray(margin) + 1e-9
        return u * u + s * s <= reach * reach

    def remainder_bound(self, y, n: int, radius) -> np.ndarray:
        """Per-point bound on |g^n(c+h) - g^n(c) - Dg^n(c) h| over |h| <= radius.

        Composes one-step Taylor bounds: e' = |Dg(c_k)| e + M2 rho_k^2 / 2 with
        rho_{k+1} = Lip * rho_k + e, where a step adds no curvature term when
        the ball around c_k misses the bump.
        """
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        fwd = n > 0
        m2 = self._second_derivative_bounds[0 if fwd else 1]
        lip = float(np.linalg.norm(self._abs_jac_sup[0 if fwd else 1], 2))
        step = self._step if fwd else self._step_inverse
        cur = y.copy()
        rho = np.full(len(y), float(radius))
        err = np.zeros(len(y))
        for _ in range(abs(int(n))):
            src = cur if fwd else step(cur)
            J = self._jac1(cur) if fwd else np.linalg.inv(self._jac1(src))
            jn = np.linalg.norm(J, ord=2, axis=(1, 2))
            curv = np.where(self._near(src, rho * (1.0 if fwd else lip)), 0.5 * m2 * rho**2, 0.0)
            err = jn * err + curv
            cur = src if not fwd else step(cur)
            rho = lip * rho + err
        return err

    def abs_lipschitz(self, n: int) -> np.ndarray:
        step = self._abs_jac_sup[0 if n > 0 else 1]
        out = np.eye(2)
        for _ in range(abs(n)):
            out = step @ out
        return out


# ---------------------------------------------------------------------------
# roofs and the center return map


@dataclass(frozen=True)
class RoofDiscretization:
    """Roof function tau(t) = 1 + h(t) depending on the center coordinate only."""

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ROOF_KINDS:
            raise ModelError(f"roof kind must be one of {ROOF_KINDS}, got {self.kind!r}")
        if self.kind == "constant":
            (c,) = self.params
            if not c > 0:
                raise ModelError(f"constant roof must be positive, got {c}")
        elif self.kind == "sinusoidal":
            alpha, k = self.params
            if int(k) != k or k < 1:
                raise ModelError(f"sinusoidal k must be a positive integer, got {k}")
            if alpha < 0 or alpha >= 1.0:
                raise ModelError(f"sinusoidal alpha must lie in [0, 1), got {alpha}")
            if alpha >= 1.0 / (2 * math.pi * k):
                raise NonInvertibleRoof(
                    f"alpha={alpha} >= 1/(2 pi k)={1 / (2 * math.pi * k):.6g}: "
                    "t + tau(t) is not monotone, the discretized map is not invertible"
                )
            object.__setattr__(self, "params", (float(alpha), int(k)))
        else:
            knots = tuple((float(a), float(b)) for a, b in self.params)
            ts = np.array([a for a, _ in knots])
            hs = np.array([b for _, b in knots])
            if len(knots) < 2 or np.any(np.diff(ts) <= 0) or ts[0] < 0 or ts[-1] >= 1:
                raise ModelError("piecewise_linear knots need >= 2 strictly increasing t_i in [0,1)")
            if np.any(1.0 + hs <= 0):
                raise ModelError("piecewise_linear roof must stay positive (1 + h_i > 0)")
            slopes = np.diff(np.append(hs, hs[0])) / np.diff(np.append(ts, ts[0] + 1.0))
            if np.any(1.0 + slopes <= 0):
                raise NonInvertibleRoof(
                    f"piecewise_linear slope {slopes.min():.6g} <= -1: "
                    "t + tau(t) is not monotone"
                )
            object.__setattr__(self, "params", knots)

    @classmethod
    def constant(cls, c: float = 1.0) -> "RoofDiscretization":
        return cls("constant", (float(c),))

    @classmethod
    def sinusoidal(cls, alpha: float, k: int) -> "RoofDiscretization":
        return cls("sinusoidal", (alpha, k))

    @classmethod
    def piecewise_linear(cls, knots: Sequence[tuple[float, float]]) -> "RoofDiscretization":
        return cls("piecewise_linear", tuple(knots))

    @cached_property
    def _pl(self):
        ts = np.array([a for a, _ in self.params])
        hs = np.array([b for _, b in self.params])
        ts_ext = np.concatenate([ts - 1.0, ts, ts + 1.0])
        hs_ext = np.concatenate([hs, hs, hs])
        return ts, hs, ts_ext, hs_ext

    def tau(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.params[0])
        if self.kind == "sinusoidal":
            alpha, k = self.params
            return 1.0 + alpha * np.sin(2 * np.pi * k * t)
        _, _, ts_ext, hs_ext = self._pl
        return 1.0 + np.interp(wrap01(t), ts_ext, hs_ext)

    def dtau(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(t)
        if self.kind == "sinusoidal":
            alpha, k = self.params
            return 2 * np.pi * k * alpha * np.cos(2 * np.pi * k * t)
        _, _, ts_ext, hs_ext = self._pl
        slopes = np.diff(hs_ext) / np.diff(ts_ext)
        idx = np.clip(np.searchsorted(ts_ext, wrap01(t), side="right") - 1, 0, len(slopes) - 1)
        return slopes[idx]

    @property
    def tau_min(self) -> float:
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "sinusoidal":
            return 1.0 - self.params[0]
        return 1.0 + min(b for _, b in self.params)

    @property
    def tau_max(self) -> float:
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "sinusoidal":
            return 1.0 + self.params[0]
        return 1.0 + max(b for _, b in self.params)

    @property
    def knots(self) -> np.ndarray:
        if self.kind != "piecewise_linear":
            return np.empty(0)
        return self._pl[0]

    def lift(self, u):
        """Lifted center map U(u) = u + tau(u mod 1); increasing, U(u+1) = U(u) + 1."""
        u = np.asarray(u, dtype=float)
        return u + self.tau(wrap01(u))

    def lift_inverse(self, v):
        v = np.asarray(v, dtype=float)
        lo = v - self.tau_max
        hi = v - self.tau_min
        if self.tau_max == self.tau_min:
            return lo.copy()
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            up = self.lift(mid) < v
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CircleMap:
    """c(t) = (t + tau(t)) mod 1."""

    roof: RoofDiscretization

    def __call__(self, t):
        return wrap01(self.roof.lift(t))

    def derivative(self, t):
        return 1.0 + self.roof.dtau(t)

    def inverse(self, t):
        return wrap01(self.roof.lift_inverse(np.asarray(t, dtype=float) + math.ceil(self.roof.tau_max)))


def center_return_map(roof: RoofDiscretization) -> CircleMap:
    return CircleMap(roof)


def fixed_points(c: CircleMap, n_cells: int = 1024) -> list[tuple[float, float]]:
    """Fixed points of the center return map with their multipliers, sorted by t."""
    roof = c.roof
    grid = np.arange(n_cells + 1) / n_cells
    m_lo = math.ceil(roof.tau_min - 1e-12)
    m_hi = math.floor(roof.tau_max + 1e-12)
    roots: list[float] = []
    for m in range(m_lo, m_hi + 1):
        # fixed points of c are the solutions of tau(t) = m
        F = roof.tau(grid) - m
        if np.all(F == 0):
            raise DegenerateFixedPoint("center return map is the identity; every t is a fixed point")
        for i in range(n_cells):
            a, b = grid[i], grid[i + 1]
            fa, fb = F[i], F[i + 1]
            if fa == 0:
                roots.append(a)
                continue
            if fb == 0 or fa * fb > 0:
                continue
            for _ in range(100):
                mid = 0.5 * (a + b)
                fm = float(roof.tau(mid) - m)
                if fm == 0:
                    a = b = mid
                    break
                if fa * fm < 0:
                    b = mid
                else:
                    a, fa = mid, fm
            roots.append(0.5 * (a + b))
    roots = sorted(float(wrap01(r)) for r in roots)
    uniq: list[float] = []
    for r in roots:
        if not uniq or min(abs(r - uniq[-1]), 1 - abs(r - uniq[-1])) > 1e-9:
            uniq.append(r)
    if len(uniq) > 1 and min(abs(uniq[0] - uniq[-1]), 1 - abs(uniq[0] - uniq[-1])) <= 1e-9:
        uniq.pop()
    out = []
    for r in uniq:
        if roof.kind == "piecewise_linear" and np.any(np.abs(roof.knots - r) < 1e-12):
            mult = float((c.roof.lift(r + FD_STEP) - c.roof.lift(r - FD_STEP)) / (2 * FD_STEP))
        else:
            mult = float(c.derivative(r))
        if abs(mult - 1.0) < 1e-8:
            raise DegenerateFixedPoint(f"fixed point t={r:.12g} has multiplier {mult:.12g}")
        out.append((r, mult))
    return out


def classify_fixed_point(multiplier: float) -> str:
    return "attracting" if abs(multiplier) < 1 else "repelling"


# ---------------------------------------------------------------------------
# discretized maps


def _fiber_power(fiber, y, n) -> np.ndarray:
    """Lifted g^n(y) with a per-point integer exponent array n."""
    n = np.asarray(n)
    out = np.empty_like(y)
    for v in np.unique(n):
        m = n == v
        out[m] = fiber.lift(y[m], int(v))
    return out


def flow_array(pts, s, gluing) -> np.ndarray:
    """Suspension flow by time s (scalar or per-point) for points in an (N, 3) array."""
    pts = _as_points(pts)
    u = pts[:, 2] + np.asarray(s, dtype=float)
    n = np.floor(u).astype(np.int64)
    out = np.empty_like(pts)
    out[:, 2] = u - n
    if gluing is None:
        out[:, :2] = pts[:, :2]
    else:
        out[:, :2] = _fiber_power(gluing, pts[:, :2], n)
    out[:, :2] = wrap01(out[:, :2])
    # u - n can round to 1.0 for tiny negative u
    hit = out[:, 2] >= 1.0
    if np.any(hit):
        out[hit, 2] = 0.0
        if gluing is not None:
            out[hit, :2] = wrap01(gluing.lift(out[hit, :2], 1))
    return out


@dataclass(frozen=True)
class DiscretizedMap:
    """f(p) = flow(p, tau(p)) for suspensions; f(y, t) = (g y, c(t)) for skew products."""

    base: LinearFiberMap | DAMap
    roof: RoofDiscretization
    family: str
    qi_constants: tuple[float, float] | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.family == "cat_suspension" and not isinstance(self.base, ToralAutomorphism):
            raise ModelError("cat_suspension needs a hyperbolic ToralAutomorphism base")
        if self.family == "da_suspension" and not isinstance(self.base, DAMap):
            raise ModelError("da_suspension needs a DAMap base")

    @property
    def fiber(self):
        return self.base

    @property
    def gluing(self):
        """Fiber map applied when a center orbit crosses t = 1 (None for skew products)."""
        return None if self.family == "product_skew" else self.base

    @property
    def automorphism(self) -> LinearFiberMap:
        return self.base.linear_part

    @property
    def l_min(self) -> float:
        return self.roof.tau_min

    @property
    def L_max(self) -> float:
        return self.roof.tau_max

    def with_qi_constants(self, l: float, L: float) -> "DiscretizedMap":
        return replace(self, qi_constants=(float(l), float(L)))

    # -- point maps on (N,3) arrays

    def flow(self, pts, s) -> np.ndarray:
        if self.family == "product_skew":
            pts = _as_points(pts)
            out = pts.copy()
            out[:, 2] = wrap01(pts[:, 2] + np.asarray(s, dtype=float))
            return out
        return flow_array(pts, s, self.gluing)

    def forward(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        if self.family == "product_skew":
            out = np.empty_like(pts)
            out[:, :2] = wrap01(self.base.lift(pts[:, :2], 1))
            out[:, 2] = wrap01(self.roof.lift(pts[:, 2]))
            return out
        return flow_array(pts, self.roof.tau(pts[:, 2]), self.gluing)

    def backward(self, pts) -> np.ndarray:
        pts = _as_points(pts)
        tau0 = float(self.roof.tau(0.0))
        # the lifted center map sends [0,1) onto [tau0, tau0+1)
        m = np.ceil(tau0 - pts[:, 2]).astype(np.int64)
        t = self.roof.lift_inverse(pts[:, 2] + m)
        out = np.empty_like(pts)
        if self.family == "product_skew":
            out[:, :2] = wrap01(self.base.lift(pts[:, :2], -1))
            out[:, 2] = wrap01(t)
            return out
        wraps = np.floor(t).astype(np.int64)
        out[:, 2] = t - wraps
        out[:, :2] = wrap01(_fiber_power(self.base, pts[:, :2], wraps - m))
        return out

    def iterate(self, pts, n: int) -> np.ndarray:
        out = _as_points(pts).copy()
        step = self.forward if n >= 0 else self.backward
        for _ in range(abs(n)):
            out = step(out)
        return out

    def wrap_count(self, pts) -> np.ndarray:
        """Number of times f moves each point up through t = 1."""
        pts = _as_points(pts)
        return np.floor(pts[:, 2] + self.roof.tau(pts[:, 2])).astype(np.int64)

    def chart_difference(self, q, p) -> np.ndarray:
        """q - p expressed in the local chart at p (gluing-aware, minimal image)."""
        q = _as_points(q)
        p = _as_points(p)
        dt = q[:, 2] - p[:, 2]
        yq = q[:, :2].copy()
        if self.gluing is not None:
            up = dt > 0.5
            down = dt < -0.5
            if np.any(up):
                yq[up] = self.gluing.lift(yq[up], -1)
            if np.any(down):
                yq[down] = self.gluing.lift(yq[down], 1)
        out = np.empty_like(q)
        out[:, :2] = wrap_half(yq - p[:, :2])
        out[:, 2] = wrap_half(dt)
        return out

    def chart_shift(self, p, v) -> np.ndarray:
        """Point at p + v in the chart at p, reduced to canonical form."""
        p = _as_points(p)
        v = np.broadcast_to(np.asarray(v, dtype=float), p.shape)
        base = p.copy()
        base[:, :2] = wrap01(p[:, :2] + v[:, :2])
        return self.flow(base, v[:, 2])

    def jacobian(self, p, inverse: bool = False, h: float = FD_STEP) -> np.ndarray:
        """Central finite-difference Jacobian (N,3,3) of apply (or apply_inverse)."""
        p = _as_points(p)
        fn = self.backward if inverse else self.forward
        img = fn(p)
        J = np.empty((len(p), 3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            plus = fn(self.chart_shift(p, e))
            minus = fn(self.chart_shift(p, -e))
            J[:, :, j] = (self.chart_difference(plus, img) - self.chart_difference(minus, img)) / (2 * h)
        return J


def cat_suspension(roof: RoofDiscretization, A=CAT_MAP) -> DiscretizedMap:
    A = A if isinstance(A, ToralAutomorphism) else ToralAutomorphism(A)
    return DiscretizedMap(A, roof, "cat_suspension")


def da_suspension(
    roof: RoofDiscretization, A=CAT_MAP, bump_radius: float = 0.18, bump_strength: float | None = None
) -> DiscretizedMap:
    A = A if isinstance(A, ToralAutomorphism) else ToralAutomorphism(A)
    return DiscretizedMap(DAMap(A, bump_radius, bump_strength), roof, "da_suspension")


def product_skew(roof: RoofDiscretization, g=CAT_MAP) -> DiscretizedMap:
    if not isinstance(g, (LinearFiberMap, DAMap)):
        g = LinearFiberMap(g)
    return DiscretizedMap(g, roof, "product_skew")


def identity_stub() -> DiscretizedMap:
    """The identity map of T^3, exposed as a skew product for testing the box machinery."""
    return DiscretizedMap(IDENTITY_FIBER, RoofDiscretization.constant(1.0), "product_skew")


# ---------------------------------------------------------------------------
# point-level operations


def _gluing_of(A):
    if A is None:
        return CAT_MAP
    if isinstance(A, DiscretizedMap):
        return A.gluing
    if isinstance(A, (LinearFiberMap, DAMap)):
        return A
    return ToralAutomorphism(A)


def flow(p: MappingTorusPoint, s: float, A=CAT_MAP) -> MappingTorusPoint:
    out = flow_array(p.as_array(), s, _gluing_of(A))
    return MappingTorusPoint.from_array(out[0])


def apply(f: DiscretizedMap, p: MappingTorusPoint) -> MappingTorusPoint:
    return MappingTorusPoint.from_array(f.forward(p.as_array())[0])


def apply_inverse(f: DiscretizedMap, p: MappingTorusPoint) -> MappingTorusPoint:
    return MappingTorusPoint.from_array(f.backward(p.as_array())[0])


def splitting_at(f: DiscretizedMap, p: MappingTorusPoint | None = None):
    """Unit vectors (v_s, v_c, v_u) in (y1, y2, t) coordinates."""
    if f.family == "da_suspension":
        raise ClosedFormUnavailable(
            "the DA fiber map has no closed-form unstable direction near the bump; use the cone check"
        )
    A = f.base
    if not isinstance(A, ToralAutomorphism):
        raise ClosedFormUnavailable("fiber map is not hyperbolic")
    v_s = np.append(A.v_s, 0.0)
    v_u = np.append(A.v_u, 0.0)
    return v_s, np.array([0.0, 0.0, 1.0]), v_u


@dataclass
class ConeReport:
    passed: bool
    cone_angle: float
    n_samples: int
    n_iters: int
    min_unstable_growth: float
    max_stable_contraction: float
    center_rate_range: tuple[float, float]
    max_unstable_angle_ratio: float
    max_stable_angle_ratio: float
    witness: tuple[float, float, float] | None = None
    failure: str | None = None

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "cone_angle": self.cone_angle,
            "n_samples": self.n_samples,
            "n_iters": self.n_iters,
            "min_unstable_growth": self.min_unstable_growth,
            "max_stable_contraction": self.max_stable_contraction,
            "center_rate_range": list(self.center_rate_range),
            "max_unstable_angle_ratio": self.max_unstable_angle_ratio,
            "max_stable_angle_ratio": self.max_stable_angle_ratio,
            "witness": None if self.witness is None else format_point(self.witness),
            "failure": self.failure,
        }


def _cone_vectors(axis: np.ndarray, angle: float, n_phi: int = 16) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    b1 = np.cross(axis, helper)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(axis, b1)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    side = np.cos(phi)[:, None] * b1 + np.sin(phi)[:, None] * b2
    return math.cos(angle) * axis + math.sin(angle) * side


def _angle_to(vecs: np.ndarray, axis: np.ndarray) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    cosv = np.abs(vecs @ axis) / np.linalg.norm(vecs, axis=-1)
    return np.arccos(np.clip(cosv, -1.0, 1.0))


def verify_partial_hyperbolicity(
    f: DiscretizedMap,
    cone_angle: float = 0.3,
    n_samples: int = 200,
    n_iters: int = 5,
    growth_margin: float = 0.01,
    seed: int = 0,
    raise_on_violation: bool = True,
) -> ConeReport:
    """Cone-field test of the splitting with finite-difference Jacobians.

    Cones are taken around the linear eigendirections of the fiber automorphism.
    """
    A = f.automorphism
    if not isinstance(A, ToralAutomorphism):
        raise ClosedFormUnavailable("fiber map has no hyperbolic linear part")
    ax_u = np.append(A.v_u, 0.0)
    ax_s = np.append(A.v_s, 0.0)
    cone_u = _cone_vectors(ax_u, cone_angle)
    cone_s = _cone_vectors(ax_s, cone_angle)
    rng = np.random.default_rng(seed)
    pts = rng.random((n_samples, 3))
    if f.roof.kind == "piecewise_linear":
        knots = f.roof.knots
        d = np.abs(wrap_half(pts[:, 2][:, None] - knots[None, :])).min(axis=1)
        pts = pts[d > KNOT_SKIP]
    min_growth = np.inf
    max_contr = 0.0
    max_ratio_u = 0.0
    max_ratio_s = 0.0
    witness = None
    failure = None
    orbit = pts.copy()
    for it in range(max(n_iters, 1)):
        J = f.jacobian(orbit)
        Ji = f.jacobian(orbit, inverse=True)
        img_u = np.einsum("nij,kj->nki", J, cone_u)
        ang_u = _angle_to(img_u, ax_u) / cone_angle
        img_s = np.einsum("nij,kj->nki", Ji, cone_s)
        ang_s = _angle_to(img_s, ax_s) / cone_angle
        growth = np.linalg.norm(img_u, axis=-1).min(axis=1)
        contr = np.linalg.norm(np.einsum("nij,j->ni", J, ax_s), axis=-1)
        max_ratio_u = max(max_ratio_u, float(ang_u.max()))
        max_ratio_s = max(max_ratio_s, float(ang_s.max()))
        min_growth = min(min_growth, float(growth.min()))
        max_contr = max(max_contr, float(contr.max()))
        if failure is None:
            bad_u = np.flatnonzero(ang_u.max(axis=1) >= 1.0)
            bad_s = np.flatnonzero(ang_s.max(axis=1) > 1.0)
            bad_g = np.flatnonzero(growth < 1.0 + growth_margin)
            for name, bad in (("unstable cone", bad_u), ("stable cone", bad_s), ("unstable growth", bad_g)):
                if len(bad):
                    failure = f"{name} violated at iterate {it}"
                    witness = tuple(float(v) for v in orbit[bad[0]])
                    break
        if it + 1 < n_iters:
            orbit = f.forward(orbit)
    rates = 1.0 + f.roof.dtau(np.linspace(0, 1, 4097))
    crate = (float(rates.min()), float(rates.max()))
    report = ConeReport(
        passed=failure is None,
        cone_angle=cone_angle,
        n_samples=len(pts),
        n_iters=n_iters,
        min_unstable_growth=min_growth,
        max_stable_contraction=max_contr,
        center_rate_range=crate,
        max_unstable_angle_ratio=max_ratio_u,
        max_stable_angle_ratio=max_ratio_s,
        witness=witness,
        failure=failure,
    )
    if failure is not None and raise_on_violation:
        raise ConeViolation(f"{failure} (witness {format_point(witness)})", witness=witness)
    return report


# ---------------------------------------------------------------------------
# center segments


@dataclass(frozen=True)
class CenterSegment:
    base: MappingTorusPoint
    length: float
    orientation: int = 1
    gluing: object = field(default=CAT_MAP, repr=False, compare=False)

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("center segment length must be >= 0")
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")

    def at(self, s) -> MappingTorusPoint | np.ndarray:
        """Point at arc parameter s (scalar -> point, array -> (N,3) array)."""
        if np.ndim(s) == 0:
            return MappingTorusPoint.from_array(
                flow_array(self.base.as_array(), self.orientation * float(s), self.gluing)[0]
            )
        s = np.asarray(s, dtype=float)
        base = np.broadcast_to(self.base.as_array(), (len(s), 3))
        return flow_array(base, self.orientation * s, self.gluing)

    @property
    def end(self) -> MappingTorusPoint:
        return self.at(self.length)

    def sample(self, n: int = 33) -> np.ndarray:
        return self.at(np.linspace(0.0, self.length, n))


def center_segment(p: MappingTorusPoint, length: float, orientation: int = 1, A=CAT_MAP) -> CenterSegment:
    gl = _gluing_of(A)
    return CenterSegment(p, float(length), int(orientation), gl if gl is not None else IDENTITY_FIBER)
