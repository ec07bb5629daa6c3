"""Global sections from a pair of disjoint minimal unstable laminations.

The chain is theta (relative distance to the two closed gap sets), the
circle-valued rho built from it, a smoothed copy mu, and the center-orbit
average lambda of mu over a window of length 4L.  A positive derivative of
lambda along center orbits makes lambda^-1(0) a section; at finite
resolution we check this on sampled orbits and on box faces.

Circle-valued fields live on box centers of a full cover.  mu is evaluated
between nodes by a uniform cubic B-spline in t (C2 along center orbits, with
nodes across t = 1 read through the gluing) times a bilinear fiber
interpolant; rho is piecewise constant on boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .boxes import BoxCover, face_adjacency
from .errors import (
    BranchMismatch,
    DegenerateDistance,
    InconsistentPipeline,
    LiftDiscontinuity,
    NonTransverseCrossing,
    PreconditionViolation,
    SmoothingDriftTooLarge,
)
from .laminations import A_CLOSED, A_TO_B, B_CLOSED, B_TO_A, GapDecomposition
from .models import DiscretizedMap, wrap01, wrap_half

BRANCH_TOL = 1e-9
JUMP_LIMIT = 0.4
SMOOTHING_DRIFT = 0.1
QUAD_STEP = 0.01
CHECK_STEP = 0.0025
FD_STEP_ORBIT = 1e-3
CHUNK_POINTS = 1 << 20


# ---------------------------------------------------------------------------
# circle fields


@njit(cache=True)
def _spline_eval(vals, y, yp, ym, t):
    n1, n2, nt = vals.shape
    out = np.empty(len(t))
    wt = np.empty(4)
    for p in range(len(t)):
        x = t[p] * nt - 0.5
        k0 = int(np.floor(x))
        u = x - k0
        wt[0] = (1 - u) ** 3 / 6
        wt[1] = (3 * u**3 - 6 * u**2 + 4) / 6
        wt[2] = (-3 * u**3 + 3 * u**2 + 3 * u + 1) / 6
        wt[3] = u**3 / 6
        ref = -1.0
        acc = 0.0
        for a in range(4):
            kk = k0 - 1 + a
            if kk < 0:
                z0, z1, layer = ym[p, 0], ym[p, 1], kk + nt
            elif kk >= nt:
                z0, z1, layer = yp[p, 0], yp[p, 1], kk - nt
            else:
                z0, z1, layer = y[p, 0], y[p, 1], kk
            fx = z0 * n1 - 0.5
            fy = z1 * n2 - 0.5
            i0 = int(np.floor(fx))
            j0 = int(np.floor(fy))
            ax = fx - i0
            ay = fy - j0
            for di in range(2):
                wi = ax if di else 1 - ax
                ii = (i0 + di) % n1
                for dj in range(2):
                    wj = ay if dj else 1 - ay
                    jj = (j0 + dj) % n2
                    v = vals[ii, jj, layer]
                    if ref < 0:
                        ref = v
                    v = v - np.floor(v - ref + 0.5)
                    acc += wt[a] * wi * wj * v
        out[p] = acc - np.floor(acc)
    return out


@dataclass(eq=False)
class CircleField:
    """Circle-valued field on the boxes of a full cover.

    kind is "boxes" (piecewise constant), "spline" (smooth interpolant of the
    nodal values), "function" (exact callable on (N, 3) points) or "average"
    (center-orbit average of another field).
    """

    grid: np.ndarray  # (n_boxes,) values in [0, 1)
    cover: BoxCover
    f: DiscretizedMap = field(repr=False)
    kind: str = "boxes"
    func: Callable | None = field(default=None, repr=False)
    source: "CircleField | None" = field(default=None, repr=False)
    four_L: float = 0.0
    step: float = QUAD_STEP
    lift_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_function(cls, f: DiscretizedMap, cover: BoxCover, fn) -> "CircleField":
        grid = wrap01(fn(cover.centers(np.arange(cover.n_boxes))))
        return cls(grid, cover, f, "function", fn)

    @classmethod
    def constant(cls, f: DiscretizedMap, cover: BoxCover, c: float) -> "CircleField":
        return cls.from_function(f, cover, lambda p: np.full(len(p), float(c)))

    def evaluate(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        if self.kind == "boxes":
            return self.grid[self.cover.box_of(pts)]
        if self.kind == "function":
            return wrap01(self.func(pts))
        if self.kind == "spline":
            return self._spline(pts)
        if self.kind == "average":
            return _orbit_average(self.source, pts, self.four_L, self.step)
        raise ValueError(f"unknown field kind {self.kind!r}")

    def _spline(self, pts):
        g = self.f.gluing
        y = wrap01(pts[:, :2])
        if g is None:
            yp = ym = y
        else:
            yp = wrap01(g.lift(y, 1))
            ym = wrap01(g.lift(y, -1))
        vals = self.grid.reshape(self.cover.resolution)
        return _spline_eval(vals, y, yp, ym, wrap01(pts[:, 2]))

    def orbit_lift(self, pts, s) -> np.ndarray:
        """Lifted values along center orbits: (N, len(s)), nearest-branch unwrapped from s[0].

        Raises LiftDiscontinuity when consecutive values are ambiguous (jump >= 0.4).
        """
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        s = np.asarray(s, dtype=float)
        out = np.empty((len(pts), len(s)))
        rows = max(1, CHUNK_POINTS // max(len(s), 1))
        for a in range(0, len(pts), rows):
            p = pts[a : a + rows]
            q = self.f.flow(np.repeat(p, len(s), axis=0), np.tile(s, len(p)))
            v = self.evaluate(q).reshape(len(p), len(s))
            d = wrap_half(np.diff(v, axis=1))
            if d.size and np.abs(d).max() >= JUMP_LIMIT:
                raise LiftDiscontinuity(
                    f"lift jump {np.abs(d).max():.3f} along a center orbit; the grid is too coarse"
                )
            out[a : a + rows, 0] = v[:, 0]
            out[a : a + rows, 1:] = v[:, :1] + np.cumsum(d, axis=1)
        return out


# ---------------------------------------------------------------------------
# theta and rho


def build_theta(gaps: GapDecomposition) -> np.ndarray:
    """theta = d(A_closed) / (d(A_closed) + d(A'_closed)), box-graph distance times box diameter."""
    if not gaps.is_partition():
        raise PreconditionViolation("gap labels do not partition the boxes")
    cov = gaps.cover
    if not cov.is_full:
        raise PreconditionViolation("sections are built on a full cover")
    n = cov.n_boxes
    a, b = face_adjacency(gaps.f, cov)
    w = np.full(len(a), cov.diameter)
    graph = coo_matrix((w, (a, b)), shape=(n, n)).tocsr()
    src_a = gaps.boxes[gaps.labels == A_CLOSED]
    src_b = gaps.boxes[gaps.labels == B_CLOSED]
    if len(src_a) == 0 or len(src_b) == 0:
        raise PreconditionViolation("both closed gap sets must be non-empty")
    da = dijkstra(graph, indices=src_a, min_only=True)
    db = dijkstra(graph, indices=src_b, min_only=True)
    tot = da + db
    if np.any(tot == 0):
        bad = int(np.flatnonzero(tot == 0)[0])
        raise DegenerateDistance(f"box {bad} is at distance 0 from both closed sets")
    if not np.all(np.isfinite(tot)):
        raise DegenerateDistance("some boxes are not connected to both closed sets")
    return da / tot


def build_rho(theta: np.ndarray, gaps: GapDecomposition, f: DiscretizedMap | None = None) -> CircleField:
    """rho = theta/2 on the A-side closed set, 1 - theta/2 on the A'-side one; equal on the overlap."""
    labels_full = np.full(gaps.cover.n_boxes, -1, dtype=np.int64)
    labels_full[gaps.boxes] = gaps.labels
    first = np.isin(labels_full, (A_CLOSED, A_TO_B, B_CLOSED))
    second = np.isin(labels_full, (B_CLOSED, B_TO_A, A_CLOSED))
    r1 = wrap01(theta / 2)
    r2 = wrap01(1.0 - theta / 2)
    both = first & second
    mismatch = np.abs(wrap_half(r1[both] - r2[both]))
    if mismatch.size and mismatch.max() > BRANCH_TOL:
        w = int(np.flatnonzero(both)[int(np.argmax(mismatch))])
        raise BranchMismatch(f"rho branches differ by {mismatch.max():.3g} at box {w}", witness=w)
    rho = np.where(first, r1, r2)
    return CircleField(rho, gaps.cover, f if f is not None else gaps.f, "boxes")


def branch_discrepancy(theta: np.ndarray, gaps: GapDecomposition) -> float:
    closed = np.zeros(gaps.cover.n_boxes, dtype=bool)
    closed[gaps.boxes[np.isin(gaps.labels, (A_CLOSED, B_CLOSED))]] = True
    d = np.abs(wrap_half(theta[closed] / 2 - (1.0 - theta[closed] / 2)))
    return float(d.max()) if d.size else 0.0


# ---------------------------------------------------------------------------
# winding


def _orbit_nodes(length: float, step: float) -> np.ndarray:
    n = max(1, int(np.ceil(length / step)))
    return np.linspace(0.0, length, n + 1)


def lifted_increments(field: CircleField, four_L: float, samples, step: float | None = None) -> np.ndarray:
    cov = field.cover
    step = min(cov.diameter, 0.5 * float(cov.widths[2])) if step is None else step
    s = _orbit_nodes(four_L, step)
    lift = field.orbit_lift(samples, s)
    return lift[:, -1] - lift[:, 0]


def winding_check(f: DiscretizedMap, rho: CircleField, fourL: float, samples, step: float | None = None) -> float:
    """Minimum over samples of the lifted increment of rho over a center arc of length fourL."""
    if rho.f is not f:
        rho = CircleField(rho.grid, rho.cover, f, rho.kind, rho.func, rho.source, rho.four_L, rho.step)
    return float(lifted_increments(rho, fourL, samples, step).min())


def winding_numbers(field: CircleField, samples, step: float | None = None) -> np.ndarray:
    """Rounded lifted increment over one unit of center time."""
    return np.rint(lifted_increments(field, 1.0, samples, step)).astype(np.int64)


# ---------------------------------------------------------------------------
# smoothing


def _kernel(half: int, scale: float, width: float) -> np.ndarray:
    off = np.arange(-half, half + 1) * scale
    w = np.cos(np.pi * off / width) ** 2
    return w / w.sum()


def smooth_mu(rho: CircleField, width: float) -> CircleField:
    """Separable periodic-bump convolution of rho in lifted coordinates, returned as a spline field."""
    cov = rho.cover
    if width < 2 * cov.diameter:
        raise PreconditionViolation(f"width {width:.4g} is below two box diameters ({2 * cov.diameter:.4g})")
    n1, n2, nt = cov.resolution
    w = cov.widths
    vals = rho.grid.copy()
    # fiber axes: plain periodic rolls
    for axis in (0, 1):
        half = int(np.floor(0.5 * width / w[axis]))
        ker = _kernel(half, w[axis], width)
        v3 = vals.reshape(n1, n2, nt)
        acc = np.zeros_like(v3)
        for m, c in zip(range(-half, half + 1), ker):
            acc += c * wrap_half(np.roll(v3, -m, axis=axis) - v3)
        vals = wrap01(v3 + acc).reshape(-1)
    # center axis: neighbors found by flowing the box center, so the seam uses the gluing
    half = int(np.floor(0.5 * width / w[2]))
    ker = _kernel(half, w[2], width)
    centers = cov.centers(np.arange(cov.n_boxes))
    acc = np.zeros_like(vals)
    for m, c in zip(range(-half, half + 1), ker):
        nb = cov.box_of(rho.f.flow(centers, m * w[2])) if m else np.arange(cov.n_boxes)
        acc += c * wrap_half(vals[nb] - vals)
    vals = wrap01(vals + acc)
    mu = CircleField(vals, cov, rho.f, "spline")
    drift = float(np.abs(wrap_half(mu.evaluate(centers) - rho.grid)).max())
    mu.lift_cache["drift"] = drift
    if drift > SMOOTHING_DRIFT:
        raise SmoothingDriftTooLarge(f"smoothed field drifts {drift:.3f} from rho (limit {SMOOTHING_DRIFT})")
    return mu


# ---------------------------------------------------------------------------
# Schwartzman average


def _orbit_average(mu: CircleField, pts, four_L: float, step: float) -> np.ndarray:
    """Composite midpoint rule for (1/4L) * integral_0^4L of the lifted mu along center orbits, mod 1."""
    n = max(1, int(np.ceil(four_L / step)))
    h = four_L / n
    s = np.concatenate([[0.0], (np.arange(n) + 0.5) * h])
    lift = mu.orbit_lift(pts, s)
    return wrap01(lift[:, 1:].mean(axis=1))


def schwartzman_lambda(mu: CircleField, flow: DiscretizedMap, fourL: float, step: float = QUAD_STEP) -> CircleField:
    """lambda(x) = (1/4L) * integral of mu along the center orbit of x over [0, 4L], mod 1."""
    if fourL <= 0:
        raise ValueError("fourL must be positive")
    if step > QUAD_STEP:
        raise ValueError(f"quadrature step must be <= {QUAD_STEP}")
    if mu.f is not flow:
        mu = CircleField(mu.grid, mu.cover, flow, mu.kind, mu.func, mu.source, mu.four_L, mu.step)
    cov = mu.cover
    centers = cov.centers(np.arange(cov.n_boxes))
    grid = _orbit_average(mu, centers, fourL, step)
    return CircleField(grid, cov, flow, "average", source=mu, four_L=float(fourL), step=step)


def derivative_along_orbits(lam: CircleField, samples, h: float = FD_STEP_ORBIT, step: float = CHECK_STEP):
    """d/dt of lambda along the center orbit at each sample, two ways.

    Returns (closed_form, finite_difference): the closed form is
    (mu(psi(x, 4L)) - mu(x)) / 4L with mu lifted along the orbit; the finite
    difference is a central difference of lambda itself with step h.
    """
    if lam.kind != "average":
        raise PreconditionViolation("derivative check needs a lambda field built by schwartzman_lambda")
    mu, four_L = lam.source, lam.four_L
    pts = np.asarray(samples, dtype=float).reshape(-1, 3)
    s = _orbit_nodes(four_L, step)
    lift = mu.orbit_lift(pts, s)
    closed = (lift[:, -1] - lift[:, 0]) / four_L
    plus = _orbit_average(mu, lam.f.flow(pts, h), four_L, step)
    minus = _orbit_average(mu, lam.f.flow(pts, -h), four_L, step)
    fd = wrap_half(plus - minus) / (2 * h)
    return closed, fd


# ---------------------------------------------------------------------------
# section extraction


@dataclass(eq=False)
class SectionCandidate:
    boxes: np.ndarray
    min_derivative: float
    crossing_counts: np.ndarray
    decreasing_crossings: int = 0
    cover: BoxCover | None = field(default=None, repr=False)

    @property
    def hit_fraction(self) -> float:
        if len(self.crossing_counts) == 0:
            return 0.0
        return float(np.mean(self.crossing_counts >= 1))


def _orbit_lambda(lam: CircleField, pts, length: float = 1.0):
    """Lifted lambda along each orbit for s in [0, length] by a sliding window over mu's nodes.

    The last column is evaluated exactly at s = length.
    """
    mu, four_L = lam.source, lam.four_L
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    n = max(1, int(np.ceil(four_L / lam.step)))
    h = four_L / n
    m = int(np.floor(length / h))
    nodes = np.concatenate([[0.0], (np.arange(n + m) + 0.5) * h])
    lift = mu.orbit_lift(pts, nodes)[:, 1:]
    csum = np.concatenate([np.zeros((len(lift), 1)), np.cumsum(lift, axis=1)], axis=1)
    window = (csum[:, n : n + m + 1] - csum[:, : m + 1]) / n
    end = _orbit_average(mu, lam.f.flow(pts, length), four_L, lam.step)
    end = window[:, -1] + wrap_half(end - window[:, -1])
    s = np.append(np.arange(m + 1) * h, length)
    return s, np.concatenate([window, end[:, None]], axis=1)


def extract_section(lam: CircleField, flow: DiscretizedMap, samples=None, n_samples: int = 1000, seed: int = 0):
    """Boxes where lambda passes through 0 along the center direction, plus per-orbit crossing counts."""
    grid_only = lam.kind != "average"
    cov = lam.cover
    centers = cov.centers(np.arange(cov.n_boxes))
    nxt = cov.box_of(flow.flow(centers, float(cov.widths[2])))
    v0 = lam.grid
    d = wrap_half(v0[nxt] - v0)
    crosses = (v0 + d >= 1.0) | (v0 + d < 0.0)
    # the zero sits at fraction z of the way from this center to the next
    z = np.where(d > 0, (1.0 - v0) / np.where(d == 0, 1, d), -v0 / np.where(d == 0, 1, d))
    boxes = np.unique(np.where(z < 0.5, np.arange(cov.n_boxes), nxt)[crosses])
    down_faces = int(np.count_nonzero(crosses & (d < 0)))
    if samples is None:
        samples = np.random.default_rng(seed).random((n_samples, 3))
    pts = np.asarray(samples, dtype=float).reshape(-1, 3)
    if grid_only:
        step = 0.5 * float(cov.widths[2])
        s = _orbit_nodes(1.0, step)
        vals = lam.orbit_lift(pts, s)
    else:
        s, vals = _orbit_lambda(lam, pts, 1.0)
    # count crossings on the half-open window [0, length)
    fl = np.floor(vals)
    fl[:, -1] = np.ceil(vals[:, -1]) - 1
    up = np.diff(fl, axis=1)
    counts_up = np.clip(up, 0, None).sum(axis=1).astype(np.int64)
    counts_down = np.clip(-up, 0, None).sum(axis=1).astype(np.int64)
    deriv = np.diff(vals, axis=1) / np.diff(s)[None, :]
    both = (counts_up > 0) & (counts_down > 0)
    if np.any(both):
        raise NonTransverseCrossing(f"{int(both.sum())} sampled orbits cross lambda = 0 in both directions")
    cand = SectionCandidate(
        boxes=boxes,
        min_derivative=float(deriv.min()),
        crossing_counts=counts_up - counts_down,
        decreasing_crossings=int(counts_down.sum()) + down_faces,
        cover=cov,
    )
    return cand


# ---------------------------------------------------------------------------
# verdict


VERDICTS = ("SectionCertified", "UniqueLamination", "UnresolvedAtResolution")


@dataclass
class Verdict:
    kind: str
    laminations: int
    bounds: dict
    section: SectionCandidate | None = field(default=None, repr=False)
    advice: str = ""

    def to_dict(self) -> dict:
        out = {"verdict": self.kind, "laminations": self.laminations, "bounds": dict(self.bounds)}
        if self.advice:
            out["advice"] = self.advice
        if self.section is not None:
            out["section_boxes"] = int(len(self.section.boxes))
            out["section_hit_fraction"] = self.section.hit_fraction
        return out


def section_checks(bounds: dict) -> dict:
    """Pass/fail of each inequality the section argument needs, from recorded bounds."""
    four_L = bounds.get("four_L", float("nan"))
    return {
        "winding_gt_1": bounds.get("min_winding_increment", -np.inf) > 1.0,
        "derivative_gt_inv_4L": bounds.get("min_derivative", -np.inf) > 1.0 / four_L,
        "derivative_identity": bounds.get("derivative_identity_gap", np.inf) <= 1e-4,
        "all_orbits_cross": bounds.get("section_hit_fraction", 0.0) >= 1.0,
        "same_direction": bounds.get("decreasing_crossings", 1) == 0,
    }


def global_section_verdict(
    f: DiscretizedMap,
    n_laminations: int,
    bounds: dict,
    section: SectionCandidate | None = None,
    resolved: bool = True,
    refinement_exhausted: bool = False,
    advice: str = "",
) -> Verdict:
    """Combine the pipeline's bounds into one verdict.

    SectionCertified needs at least two laminations and every section check;
    one lamination gives UniqueLamination.  Two or more laminations without a
    section after the last refinement is a contradiction and raises.
    """
    if not resolved or n_laminations == 0:
        return Verdict("UnresolvedAtResolution", n_laminations, bounds, section,
                       advice or "refine the grid: the laminations are not separated at this resolution")
    if n_laminations == 1:
        return Verdict("UniqueLamination", 1, bounds, None)
    checks = section_checks(bounds)
    bounds = dict(bounds)
    bounds["checks"] = checks
    if section is not None and all(checks.values()):
        return Verdict("SectionCertified", n_laminations, bounds, section)
    failed = [k for k, ok in checks.items() if not ok]
    if refinement_exhausted:
        raise InconsistentPipeline(
            f"{n_laminations} laminations but no certified section after the last refinement (failed: {failed})"
        )
    return Verdict("UnresolvedAtResolution", n_laminations, bounds, section,
                   advice or f"refine the grid (failed checks: {', '.join(failed)})")
