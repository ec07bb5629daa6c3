"""Unstable laminations at finite resolution and the center-direction predicates built on them.

A lamination is stored as box occupancy of a long unstable curve.  The curve is
kept as a bag of short polyline pieces in lifted fiber coordinates that all
share one center coordinate t (for the suspension families the unstable
direction is tangent to the fibers).  Each step maps every piece, densifies
it so consecutive points are at most half a box apart, cuts it back into
short pieces and keeps one piece per fiber box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .boxes import BoxCover, face_adjacency, shell
from .chainrec import MorseDecomposition
from .errors import (
    AmbiguousLabel,
    LocalProductFailure,
    NoHitWithinBudget,
    PreconditionViolation,
)
from .models import (
    CenterSegment,
    DiscretizedMap,
    IDENTITY_FIBER,
    MappingTorusPoint,
    ToralAutomorphism,
    wrap01,
)

PIECE_POINTS = 4
HIT_TOL = 1e-6
HIT_BUDGET = 10.0
HOLONOMY_DELTA = 0.05
TUBE_RADIUS = 0.25
MIN_COVERAGE = 0.95  # half the fiber injectivity radius

LABELS = ("A_closed", "A_to_A'", "A'_closed", "A'_to_A")
A_CLOSED, A_TO_B, B_CLOSED, B_TO_A = range(4)


# ---------------------------------------------------------------------------
# unstable segments


def _unstable_direction(f: DiscretizedMap) -> np.ndarray:
    A = f.automorphism
    if not isinstance(A, ToralAutomorphism):
        raise PreconditionViolation("fiber map has no unstable direction")
    return A.v_u.copy()


def _fiber_power_of(f: DiscretizedMap, t: float) -> int:
    """Power of the fiber map applied by one step of f to the fiber at t."""
    if f.family == "product_skew":
        return 1
    return int(np.floor(t + float(f.roof.tau(t))))


@dataclass(frozen=True)
class UnstableSegment:
    base: MappingTorusPoint
    direction: np.ndarray
    half_length: float

    def __post_init__(self):
        if self.half_length < 0:
            raise ValueError("half_length must be >= 0")
        d = np.asarray(self.direction, dtype=float)
        object.__setattr__(self, "direction", d / np.linalg.norm(d))

    def point(self, s) -> np.ndarray:
        """Points base + s * half_length * direction for s in [-1, 1], as an (N, 3) array."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty((len(s), 3))
        out[:, :2] = wrap01(np.asarray(self.base.y) + s[:, None] * self.half_length * self.direction)
        out[:, 2] = self.base.t
        return out

    def endpoints(self) -> np.ndarray:
        return self.point([-1.0, 1.0])

    def apply(self, f: DiscretizedMap) -> "UnstableSegment":
        A = f.automorphism
        if not f.base.is_linear or not isinstance(A, ToralAutomorphism):
            raise PreconditionViolation("the growth law needs a linear hyperbolic fiber map")
        w = _fiber_power_of(f, self.base.t)
        img = MappingTorusPoint.from_array(f.forward(self.base.as_array())[0])
        return UnstableSegment(img, A.v_u, self.half_length * abs(A.lambda_u) ** w)


def unstable_segment(f: DiscretizedMap, p: MappingTorusPoint, half_length: float) -> UnstableSegment:
    return UnstableSegment(p, _unstable_direction(f), float(half_length))


# ---------------------------------------------------------------------------
# lamination approximation


@dataclass(eq=False)
class LaminationApprox:
    boxes: np.ndarray
    seed: MappingTorusPoint
    iterations: int
    cover: BoxCover
    f: DiscretizedMap = field(repr=False)
    center: float = 0.0  # center coordinate of the final curve
    points: np.ndarray | None = field(default=None, repr=False)
    class_id: int | None = None
    resolved: bool = True
    hausdorff: float = 0.0
    seed_in_terminal: bool | None = None
    converged: bool = False
    coverage: float = 1.0  # fraction of the class boxes inside the inflated lamination

    @property
    def n_boxes(self) -> int:
        return len(self.boxes)

    def mask(self) -> np.ndarray:
        return self.cover.mask(self.boxes)

    def inflated(self) -> np.ndarray:
        """Boxes plus their one-box shell."""
        return shell(self.f, self.cover, self.boxes)

    def inflated_mask(self) -> np.ndarray:
        return self.cover.mask(self.inflated())

    def fiber_cells(self) -> np.ndarray:
        """Distinct (i, j) fiber cells occupied, as an (N, 2) array."""
        i, j, _ = self.cover.unravel(self.boxes)
        return np.unique(np.stack([i, j], axis=1), axis=0)

    def project(self, cover: BoxCover) -> "LaminationApprox":
        """The same lamination re-covered by the boxes of another cover."""
        pts = self.cover.centers(self.boxes)
        boxes = np.unique(cover.box_of(pts))
        return LaminationApprox(
            boxes, self.seed, self.iterations, cover, self.f, self.center, self.points,
            self.class_id, self.resolved, self.hausdorff, self.seed_in_terminal, self.converged, self.coverage,
        )

    def invariance_defect(self) -> int:
        """Boxes of image(boxes) outside boxes plus one-box shell (0 when invariant at resolution)."""
        from .boxes import image_boxes

        _, tgt = image_boxes(self.f, self.cover, self.boxes)
        return int(np.count_nonzero(~self.inflated_mask()[np.unique(tgt)]))

    def saturation_defect(self, extra_iters: int = 2) -> int:
        """New boxes gained by growing the curve further, outside boxes plus shell."""
        more = lamination_approx(self.f, self.seed, self.iterations + extra_iters, self.cover, stop_at_fixpoint=False)
        return int(np.count_nonzero(~self.inflated_mask()[more.boxes]))


class _Curve:
    """A bag of polyline pieces in one fiber, lifted coordinates, shape (P, PIECE_POINTS, 2)."""

    def __init__(self, f: DiscretizedMap, cover: BoxCover, pieces: np.ndarray, t: float):
        self.f = f
        self.cover = cover
        self.pieces = pieces
        self.t = float(t)
        self.spacing = 0.5 * float(min(cover.widths[:2]))

    def boxes(self) -> np.ndarray:
        pts = self.pieces.reshape(-1, 2)
        full = np.empty((len(pts), 3))
        full[:, :2] = pts
        full[:, 2] = self.t
        return np.unique(self.cover.box_of(full))

    def _map(self, y: np.ndarray, w: int) -> np.ndarray:
        if w == 0:
            return y
        return self.f.base.lift(y, w)

    def step(self):
        f = self.f
        w = _fiber_power_of(f, self.t)
        t_new = float(f.forward(np.array([[0.0, 0.0, self.t]]))[0, 2])
        P, M, _ = self.pieces.shape
        img = self._map(self.pieces.reshape(-1, 2), w).reshape(P, M, 2)
        gap = np.linalg.norm(np.diff(img, axis=1), axis=2).max() if P else 0.0
        q = max(1, int(np.ceil(gap / self.spacing)))
        if q > 1:
            # densify in the source and map again so pieces stay true images
            s = np.linspace(0.0, M - 1, (M - 1) * q + 1)
            lo = np.minimum(np.floor(s).astype(int), M - 2)
            frac = (s - lo)[None, :, None]
            src = self.pieces[:, lo] * (1 - frac) + self.pieces[:, lo + 1] * frac
            img = self._map(src.reshape(-1, 2), w).reshape(P, -1, 2)
            # cut into q pieces of M points sharing endpoints
            starts = np.arange(q) * (M - 1)
            img = np.stack([img[:, a : a + M] for a in starts], axis=1).reshape(-1, M, 2)
        self.t = t_new
        self.pieces = img - np.floor(img[:, :1, :])
        return self

    def reanchor(self):
        n1, n2, _ = self.cover.resolution
        first = wrap01(self.pieces[:, 0, :])
        cell = np.minimum((first * [n1, n2]).astype(np.int64), [n1 - 1, n2 - 1])
        key = cell[:, 0] * n2 + cell[:, 1]
        _, keep = np.unique(key, return_index=True)
        self.pieces = self.pieces[np.sort(keep)]
        return self


def lamination_approx(
    f: DiscretizedMap,
    seed: MappingTorusPoint,
    n_iters: int,
    cover: BoxCover,
    terminal_boxes=None,
    stop_at_fixpoint: bool = True,
) -> LaminationApprox:
    """Box occupancy of f^n applied to the unstable segment of one box diameter at seed.

    Stops after n_iters steps, or earlier once the occupancy is unchanged and the
    center coordinate has settled to within a thousandth of a layer.
    """
    if n_iters < 0:
        raise ValueError("n_iters must be >= 0")
    v = _unstable_direction(f)
    diam = cover.diameter
    sp = 0.5 * float(min(cover.widths[:2]))
    n_pts = max(PIECE_POINTS, int(np.ceil(2 * diam / sp)) + 1)
    # chop into pieces sharing endpoints
    n_pieces = max(1, int(np.ceil((n_pts - 1) / (PIECE_POINTS - 1))))
    s_fine = np.linspace(-diam, diam, n_pieces * (PIECE_POINTS - 1) + 1)
    line = np.asarray(seed.y)[None, :] + s_fine[:, None] * v[None, :]
    pieces = np.stack(
        [line[a * (PIECE_POINTS - 1) : a * (PIECE_POINTS - 1) + PIECE_POINTS] for a in range(n_pieces)]
    )
    curve = _Curve(f, cover, pieces, seed.t)
    occ = curve.boxes()
    layer = float(cover.widths[2])
    done = 0
    converged = False
    for it in range(n_iters):
        t_before = curve.t
        curve.step().reanchor()
        new = curve.boxes()
        done = it + 1
        moved = abs(((curve.t - t_before) + 0.5) % 1.0 - 0.5)
        same = len(new) == len(occ) and np.array_equal(new, occ)
        occ = new
        if stop_at_fixpoint and same and moved < 1e-3 * layer:
            converged = True
            break
    in_term = None
    if terminal_boxes is not None:
        in_term = bool(cover.mask(terminal_boxes)[cover.box_of(seed.as_array())[0]])
    pts = np.empty((curve.pieces.shape[0] * curve.pieces.shape[1], 3))
    pts[:, :2] = wrap01(curve.pieces.reshape(-1, 2))
    pts[:, 2] = curve.t
    return LaminationApprox(
        boxes=occ,
        seed=seed,
        iterations=done,
        cover=cover,
        f=f,
        center=curve.t,
        points=pts,
        seed_in_terminal=in_term,
        converged=converged,
    )


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Hausdorff distance between two point clouds on the unit 3-torus (seam twist ignored)."""
    if len(a) == 0 or len(b) == 0:
        return float("inf")
    ta = cKDTree(wrap01(a), boxsize=1.0)
    tb = cKDTree(wrap01(b), boxsize=1.0)
    return float(max(tb.query(wrap01(a))[0].max(), ta.query(wrap01(b))[0].max()))


def _seed_points(cover: BoxCover, boxes: np.ndarray, n: int) -> list[MappingTorusPoint]:
    """n seeds spread over the class, ordered by center layer first so they differ in t when possible."""
    i, j, k = cover.unravel(boxes)
    order = np.lexsort((j, i, k))
    pick = np.unique(np.linspace(0, len(boxes) - 1, n).round().astype(int))
    return [MappingTorusPoint.from_array(c) for c in cover.centers(boxes[order[pick]])]


def minimal_laminations(
    f: DiscretizedMap,
    m: MorseDecomposition,
    cover: BoxCover | None = None,
    n_seeds: int = 5,
    n_iters: int = 40,
) -> list[LaminationApprox]:
    """One lamination per terminal class; resolved=False when the seeds disagree.

    Seeds are spread over the class boxes.  The class is declared to carry a
    single minimal lamination at this resolution when every pair of seed
    occupancies is within two box diameters in Hausdorff distance and the
    inflated lamination covers at least MIN_COVERAGE of the class.
    """
    cover = m.graph.cover if cover is None else cover
    out = []
    tol = 2.0 * cover.diameter
    for c in m.terminal:
        boxes = m.classes[c]
        seeds = _seed_points(cover, boxes, n_seeds)
        runs = [lamination_approx(f, s, n_iters, cover, terminal_boxes=boxes) for s in seeds]
        clouds = [cover.centers(r.boxes) for r in runs]
        worst = 0.0
        for a in range(len(runs)):
            for b in range(a + 1, len(runs)):
                worst = max(worst, hausdorff_distance(clouds[a], clouds[b]))
        lam = runs[0]
        lam.class_id = int(c)
        lam.hausdorff = worst
        lam.coverage = float(lam.inflated_mask()[boxes].mean())
        lam.resolved = worst <= tol and lam.coverage >= MIN_COVERAGE
        out.append(lam)
    return out


# ---------------------------------------------------------------------------
# center marching


def _in_mask(cover: BoxCover, mask: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return mask[cover.box_of(pts)]


def march_step(cover: BoxCover) -> float:
    return min(cover.diameter / 4, 0.5 * float(cover.widths[2]))


def march_to_mask(
    f: DiscretizedMap,
    cover: BoxCover,
    mask: np.ndarray,
    pts: np.ndarray,
    orientation: int = 1,
    step: float | None = None,
    budget: float = HIT_BUDGET,
    tol: float = HIT_TOL,
) -> np.ndarray:
    """Arc length along the center orbit until each point first enters mask (inf if never within budget).

    Marches in steps of a quarter box diameter (capped at half a box in t so a
    one-layer slab is never stepped over), then bisects the entry to tol.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    step = march_step(cover) if step is None else step
    n = len(pts)
    hit = np.full(n, np.inf)
    inside = _in_mask(cover, mask, pts)
    hit[inside] = 0.0
    live = np.flatnonzero(~inside)
    s = 0.0
    while len(live) and s < budget:
        s_next = min(s + step, budget)
        q = f.flow(pts[live], orientation * s_next)
        got = _in_mask(cover, mask, q)
        if np.any(got):
            rows = live[got]
            lo = np.full(len(rows), s)
            hi = np.full(len(rows), s_next)
            base = pts[rows]
            while np.max(hi - lo) > tol:
                mid = 0.5 * (lo + hi)
                inn = _in_mask(cover, mask, f.flow(base, orientation * mid))
                hi = np.where(inn, mid, hi)
                lo = np.where(inn, lo, mid)
            hit[rows] = hi
            live = live[~got]
        s = s_next
    return hit


def march_to_masks(
    f: DiscretizedMap,
    cover: BoxCover,
    masks,
    pts: np.ndarray,
    orientation: int = 1,
    budget: float = HIT_BUDGET,
    tol: float | None = None,
) -> np.ndarray:
    """First-entry arc lengths for several masks in one march: (N, len(masks)), inf when missed."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    step = march_step(cover)
    tol = step if tol is None else tol
    code = np.zeros(cover.n_boxes, dtype=np.uint8)
    for b, m in enumerate(masks):
        code |= m.astype(np.uint8) << b
    nb = len(masks)
    full = (1 << nb) - 1
    hit = np.full((len(pts), nb), np.inf)
    seen = code[cover.box_of(pts)]
    for b in range(nb):
        hit[(seen >> b) & 1 == 1, b] = 0.0
    live = np.flatnonzero(seen != full)
    s = 0.0
    while len(live) and s < budget:
        s_next = min(s + step, budget)
        c = code[cover.box_of(f.flow(pts[live], orientation * s_next))]
        new = c & ~seen[live]
        for b in range(nb):
            rows_local = np.flatnonzero((new >> b) & 1)
            if len(rows_local) == 0:
                continue
            rows = live[rows_local]
            lo = np.full(len(rows), s)
            hi = np.full(len(rows), s_next)
            while np.max(hi - lo) > tol:
                mid = 0.5 * (lo + hi)
                inn = (code[cover.box_of(f.flow(pts[rows], orientation * mid))] >> b) & 1 == 1
                hi = np.where(inn, mid, hi)
                lo = np.where(inn, lo, mid)
            hit[rows, b] = hi
        seen[live] |= c
        live = live[seen[live] != full]
        s = s_next
    return hit


def center_hit_lengths(A: LaminationApprox, samples, budget: float = HIT_BUDGET) -> np.ndarray:
    """Per-sample min over both orientations of the arc length to the one-box-inflated lamination."""
    if A.n_boxes == 0:
        raise PreconditionViolation("empty lamination")
    pts = np.asarray(samples, dtype=float).reshape(-1, 3)
    mask = A.inflated_mask()
    fwd = march_to_mask(A.f, A.cover, mask, pts, 1, budget=budget)
    bwd = march_to_mask(A.f, A.cover, mask, pts, -1, budget=budget)
    return np.minimum(fwd, bwd)


def center_hit_length(A: LaminationApprox, samples, budget: float = HIT_BUDGET) -> float:
    """Realized constant L: every sample's center leaf meets the inflated lamination within L."""
    lengths = center_hit_lengths(A, samples, budget)
    if not np.all(np.isfinite(lengths)):
        bad = int(np.argmax(~np.isfinite(lengths)))
        x = np.asarray(samples, dtype=float).reshape(-1, 3)[bad]
        raise NoHitWithinBudget(
            f"center leaf of {MappingTorusPoint.from_array(x)} misses the lamination within length {budget}"
        )
    return float(lengths.max())


def uniform_samples(n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).random((n, 3))


# ---------------------------------------------------------------------------
# quasi-isometric constants


def qi_constants(f: DiscretizedMap, seg_length: float, horizon: int, samples):
    """Largest arc length of f^n(center segment of length seg_length), |n| <= horizon.

    Center arcs are tracked in the lifted center coordinate, where f acts by
    u -> u + tau(u mod 1); arc length is the difference of the lifted endpoints.
    Returns (sup_length, (start point, n)).
    """
    if seg_length < 0:
        raise ValueError("seg_length must be >= 0")
    pts = np.asarray(samples, dtype=float).reshape(-1, 3)
    if seg_length == 0 or len(pts) == 0:
        return 0.0, (MappingTorusPoint.from_array(pts[0]) if len(pts) else None, 0)
    roof = f.roof
    best, arg = -np.inf, (0, 0)
    for direction in (1, -1):
        a = pts[:, 2].copy()
        b = a + seg_length
        for n in range(0, horizon + 1):
            if n > 0:
                if direction > 0:
                    a, b = roof.lift(a), roof.lift(b)
                else:
                    a, b = roof.lift_inverse(a), roof.lift_inverse(b)
                # keep numbers small; lifted differences are shift invariant
                sh = np.floor(a)
                a, b = a - sh, b - sh
            length = b - a
            i = int(np.argmax(length))
            if length[i] > best:
                best, arg = float(length[i]), (i, direction * n)
    return best, (MappingTorusPoint.from_array(pts[arg[0]]), arg[1])


def lamination_distance(A: LaminationApprox, B: LaminationApprox) -> float:
    """Distance between the two box sets, measured between box closures (>= 0)."""
    ca = A.cover.centers(A.boxes)
    cb = B.cover.centers(B.boxes)
    tb = cKDTree(wrap01(cb), boxsize=1.0)
    d = float(tb.query(wrap01(ca))[0].min())
    return max(0.0, d - A.cover.diameter)


# ---------------------------------------------------------------------------
# first hit map


def first_hits(A: LaminationApprox | None, B: LaminationApprox, pts, budget: float = HIT_BUDGET):
    """Vectorized first hit of the inflated B along the forward center orbit: (S(x) array, l_S array)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    lengths = march_to_mask(B.f, B.cover, B.inflated_mask(), pts, 1, budget=budget)
    if not np.all(np.isfinite(lengths)):
        raise NoHitWithinBudget(f"{int(np.sum(~np.isfinite(lengths)))} orbits never reach the target lamination")
    return B.f.flow(pts, lengths), lengths


def first_hit(x: MappingTorusPoint, B: LaminationApprox, budget: float = HIT_BUDGET):
    """First point of the inflated B on the forward center leaf of x, and the arc length to it."""
    S, l = first_hits(None, B, x.as_array(), budget)
    return MappingTorusPoint.from_array(S[0]), float(l[0])


def semicontinuity_probe(A: LaminationApprox, B: LaminationApprox, n: int = 1000, seed: int = 0, terms: int = 6):
    """min over sequences x_n -> x on A of (liminf l_S(x_n) - l_S(x)).

    Sequences approach x along the unstable direction, which keeps them on A.
    """
    rng = np.random.default_rng(seed)
    base = A.points[rng.integers(0, len(A.points), n)]
    v = _unstable_direction(A.f)
    eps = A.cover.diameter * 2.0 ** -np.arange(1, terms + 1)
    seq = np.repeat(base, terms, axis=0)
    seq[:, :2] = wrap01(seq[:, :2] + np.tile(eps, n)[:, None] * v)
    _, l0 = first_hits(A, B, base)
    _, ln = first_hits(A, B, seq)
    ln = ln.reshape(n, terms)
    liminf = ln[:, terms // 2 :].min(axis=1)
    return float((liminf - l0).min())


# ---------------------------------------------------------------------------
# gap decomposition


@dataclass(eq=False)
class GapDecomposition:
    cover: BoxCover
    labels: np.ndarray  # per active box, index into LABELS
    ambiguous: np.ndarray  # per active box, bool
    L_measured: float
    S_table: np.ndarray  # rows (x1, x2, xt, S1, S2, St, l_S)
    open_contacts: int
    boxes: np.ndarray = field(repr=False, default=None)
    f: DiscretizedMap | None = field(repr=False, default=None)

    @property
    def ambiguous_fraction(self) -> float:
        return float(self.ambiguous.mean()) if len(self.ambiguous) else 0.0

    def label_names(self) -> list[str]:
        return [LABELS[i] for i in self.labels]

    def counts(self) -> dict:
        return {name: int(np.count_nonzero(self.labels == i)) for i, name in enumerate(LABELS)}

    def is_partition(self) -> bool:
        return len(self.labels) == self.cover.n_active and bool(np.all((self.labels >= 0) & (self.labels < 4)))

    def mask_of(self, label: int) -> np.ndarray:
        return self.cover.mask(self.boxes[self.labels == label])


def gap_decomposition(
    A: LaminationApprox,
    B: LaminationApprox,
    cover: BoxCover | None = None,
    n_table: int = 200,
    strict: bool = False,
    budget: float = HIT_BUDGET,
    seed: int = 0,
) -> GapDecomposition:
    """Label every box of cover by the laminations met along its center leaf.

    Backward hit of A and forward hit of B (no other hit in between) gives
    A_to_A'; the mirror case gives A'_to_A; arcs from a lamination back to the
    same lamination, and the lamination boxes themselves, are closed labels.
    """
    cover = A.cover if cover is None else cover
    f = A.f
    Ac = A.project(cover) if A.cover is not cover else A
    Bc = B.project(cover) if B.cover is not cover else B
    ma, mb = Ac.mask(), Bc.mask()
    if np.any(ma & mb):
        raise PreconditionViolation("laminations overlap at this resolution")
    boxes = cover.active_indices
    pts = cover.centers(boxes)
    ia, ib = Ac.inflated_mask(), Bc.inflated_mask()
    fw = march_to_masks(f, cover, [ma, mb, ia, ib], pts, 1, budget)
    bw = march_to_masks(f, cover, [ma, mb, ia, ib], pts, -1, budget)
    fa, fb, ba, bb = fw[:, 0], fw[:, 1], bw[:, 0], bw[:, 1]
    fwd_is_a = fa < fb
    bwd_is_a = ba < bb
    labels = np.empty(len(boxes), dtype=np.int64)
    labels[bwd_is_a & ~fwd_is_a] = A_TO_B
    labels[~bwd_is_a & fwd_is_a] = B_TO_A
    labels[bwd_is_a & fwd_is_a] = A_CLOSED
    labels[~bwd_is_a & ~fwd_is_a] = B_CLOSED
    labels[ma[boxes]] = A_CLOSED
    labels[mb[boxes]] = B_CLOSED
    diam = cover.diameter
    ambiguous = (
        ~np.isfinite(np.minimum(fa, fb))
        | ~np.isfinite(np.minimum(ba, bb))
        | (np.abs(fa - fb) <= diam)
        | (np.abs(ba - bb) <= diam)
    ) & ~(ma[boxes] | mb[boxes])
    if strict and np.any(ambiguous):
        raise AmbiguousLabel(f"{int(ambiguous.sum())} boxes are within one box of both laminations", int(ambiguous.sum()))
    # hit-length constant over the box centers, both laminations (inflated)
    hits = np.minimum(fw[:, 2:], bw[:, 2:])
    if not np.all(np.isfinite(hits)):
        raise NoHitWithinBudget("some center leaves miss a lamination within the budget")
    L = float(hits.max())
    # discrete openness: opposite open labels never share a face
    a, b = face_adjacency(f, cover, boxes)
    loc_a, loc_b = cover.local_index(a), cover.local_index(b)
    ok = ~(ambiguous[loc_a] | ambiguous[loc_b])
    contacts = int(np.count_nonzero(ok & (labels[loc_a] == A_TO_B) & (labels[loc_b] == B_TO_A)))
    # first-hit table on points of A
    rng = np.random.default_rng(seed)
    src = A.points[rng.choice(len(A.points), size=min(n_table, len(A.points)), replace=False)]
    S, lS = first_hits(A, B, src, budget)
    table = np.concatenate([src, S, lS[:, None]], axis=1)
    return GapDecomposition(cover, labels, ambiguous, L, table, contacts, boxes=boxes, f=f)


def convergence_probe(
    A: LaminationApprox, B: LaminationApprox, gaps: GapDecomposition, n: int = 100, seed: int = 1, terms: int = 8
) -> int:
    """Sequences x_n -> x on A: the limit of [x_n, S(x_n)]_c minus [x, S(x)]_c must sit in A'-closed boxes.

    Returns the number of sequences whose tail leaves the A'-closed label (0 expected).
    """
    rng = np.random.default_rng(seed)
    base = A.points[rng.integers(0, len(A.points), n)]
    v = _unstable_direction(A.f)
    eps = A.cover.diameter * 2.0 ** -np.arange(1, terms + 1)
    _, l0 = first_hits(A, B, base)
    seq = np.repeat(base, terms, axis=0)
    seq[:, :2] = wrap01(seq[:, :2] + np.tile(eps, n)[:, None] * v)
    _, ln = first_hits(A, B, seq)
    limit = ln.reshape(n, terms)[:, -1]
    Bg = B if B.cover is gaps.cover else B.project(gaps.cover)
    closed = gaps.mask_of(B_CLOSED) | Bg.inflated_mask()
    bad = 0
    for x, a, b in zip(base, l0, limit):
        lo, hi = min(a, b), max(a, b)
        if hi - lo <= 0:
            continue
        s = np.linspace(lo, hi, 9)
        pts = A.f.flow(np.repeat(x[None], len(s), axis=0), s)
        if not np.all(closed[gaps.cover.box_of(pts)]):
            bad += 1
    return bad


# ---------------------------------------------------------------------------
# holonomy transport


def _lifted_center(f: DiscretizedMap, u: np.ndarray, n: int) -> np.ndarray:
    out = np.asarray(u, dtype=float).copy()
    for _ in range(abs(n)):
        out = f.roof.lift(out) if n > 0 else f.roof.lift_inverse(out)
    return out


def _gluing(f: DiscretizedMap):
    return f.gluing if f.gluing is not None else IDENTITY_FIBER


def holonomy_transport(
    f: DiscretizedMap,
    cseg: CenterSegment,
    ucurve: UnstableSegment,
    delta: float = HOLONOMY_DELTA,
    n_samples: int = 33,
    return_points: bool = False,
    max_pullback: int = 500,
):
    """Slide cseg along the unstable arc from ucurve.base to ucurve.base + half_length * direction.

    Pulls the configuration back until the unstable arc is shorter than delta,
    translates the pulled-back center segment in the fiber by the short arc,
    and pushes the result forward again.  Returns one center segment per
    unstable parameter in {0, 1/(n-1), ..., 1}; with return_points the
    (n_u, n_c, 3) array of pushed-forward center samples is returned too.
    """
    if not np.allclose(ucurve.base.as_array(), cseg.base.as_array(), atol=1e-12):
        raise PreconditionViolation("center segment and unstable curve must share their base point")
    x = np.asarray(cseg.base.as_array(), dtype=float).reshape(1, 3)
    x_end = ucurve.point([1.0])
    n0 = 0
    p, q = x.copy(), x_end.copy()
    while np.linalg.norm(f.chart_difference(q, p)[0, :2]) >= delta:
        n0 += 1
        if n0 > max_pullback:
            raise LocalProductFailure("unstable arc never shrinks below delta under f^-1")
        p, q = f.backward(p), f.backward(q)
    shift = f.chart_difference(q, p)[0, :2]
    # pulled-back center arc in the lifted center coordinate
    s = np.linspace(0.0, cseg.length, n_samples)
    u = x[0, 2] + cseg.orientation * s
    U = _lifted_center(f, u, -n0)
    sigma = U - U[0]
    taus = np.linspace(0.0, 1.0, n_samples)
    out_pts = np.empty((n_samples, n_samples, 3))
    pulled = f.flow(np.repeat(p, n_samples, axis=0), sigma)
    for j, tau in enumerate(taus):
        start = p.copy()
        start[0, :2] = wrap01(p[0, :2] + tau * shift)
        moved = f.flow(np.repeat(start, n_samples, axis=0), sigma)
        dev = np.linalg.norm(f.chart_difference(moved, pulled)[:, :2], axis=1).max()
        if dev > TUBE_RADIUS:
            raise LocalProductFailure(f"transported arc leaves the tube (deviation {dev:.3g})")
        out_pts[j] = f.iterate(moved, n0)
    gl = _gluing(f)
    segs = [
        CenterSegment(MappingTorusPoint.from_array(out_pts[j, 0]), float(cseg.length), cseg.orientation, gl)
        for j in range(n_samples)
    ]
    return (segs, out_pts) if return_points else segs


def holonomy_oracle(f: DiscretizedMap, cseg: CenterSegment, ucurve: UnstableSegment, n_samples: int = 33):
    """Product-structure transport: same t-extent, fiber coordinate shifted along the unstable line."""
    taus = np.linspace(0.0, 1.0, n_samples)
    s = np.linspace(0.0, cseg.length, n_samples)
    pts = np.empty((n_samples, n_samples, 3))
    gl = _gluing(f)
    segs = []
    for j, tau in enumerate(taus):
        b = cseg.base.as_array().reshape(1, 3).copy()
        b[0, :2] = wrap01(b[0, :2] + tau * ucurve.half_length * ucurve.direction)
        seg = CenterSegment(MappingTorusPoint.from_array(b[0]), float(cseg.length), cseg.orientation, gl)
        segs.append(seg)
        pts[j] = f.flow(np.repeat(b, n_samples, axis=0), cseg.orientation * s)
    return segs, pts


def torus_gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Coordinatewise distance on the unit torus (no seam twist), for comparing nearby points."""
    d = np.abs(wrap01(a) - wrap01(b))
    return np.minimum(d, 1.0 - d)
