"""Chain-recurrence engine: transition graphs, Morse decompositions, trapping regions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .boxes import BoxCover, build_cover, image_boxes, shell
from .errors import CertificationFailed, MemoryBudgetExceeded, PreconditionViolation
from .models import DiscretizedMap, ToralAutomorphism
from .scc import class_reach, self_loops, tarjan_scc, unpack_bits

__all__ = [
    "BoxCover",
    "TransitionGraph",
    "MorseDecomposition",
    "CertifiedAttractor",
    "build_cover",
    "build_transition_graph",
    "morse_decomposition",
    "quasi_attractors",
    "refine",
    "soundness_violations",
]

DEFAULT_MEMORY_CAP = 50_000_000


@dataclass(eq=False)
class TransitionGraph:
    f: DiscretizedMap
    cover: BoxCover
    indptr: np.ndarray
    indices: np.ndarray
    bloat_radius: float
    lipschitz: float
    inverse: bool = False
    samples_per_box: int = 9
    sample_escapes: int = 0
    min_full_out_degree: int = 1

    @property
    def n_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        return int(self.indptr[-1])

    @property
    def epsilon(self) -> float:
        """Pseudo-orbit jump size realized by one edge."""
        return self.cover.diameter + 2.0 * self.bloat_radius

    def out_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def successors(self, local: int) -> np.ndarray:
        return self.indices[self.indptr[local] : self.indptr[local + 1]]

    def global_edges(self) -> tuple[np.ndarray, np.ndarray]:
        act = self.cover.active_indices
        src = np.repeat(np.arange(self.n_nodes), self.out_degree())
        return act[src], act[self.indices]


def _lipschitz_estimate(f: DiscretizedMap, inverse: bool) -> float:
    rates = 1.0 + f.roof.dtau(np.linspace(0.0, 1.0, 4097))
    center = 1.0 / rates.min() if inverse else rates.max()
    A = f.automorphism
    if isinstance(A, ToralAutomorphism):
        fiber = 1.0 / abs(A.lambda_s) if inverse else abs(A.lambda_u)
    else:
        fiber = float(np.linalg.norm(A.power_matrix(-1 if inverse else 1), 2))
    if f.family == "da_suspension":
        fiber = max(fiber, float(np.linalg.norm(f.base.abs_lipschitz(-1 if inverse else 1), 2)))
    return float(max(fiber, center))


def _sample_offsets(samples_per_box: int, seed: int) -> np.ndarray:
    """Unit-box offsets: 8 corners, the center, then scrambled Halton points."""
    corners = np.array([[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=float)
    pts = [corners[: min(8, samples_per_box)]]
    if samples_per_box > 8:
        pts.append(np.array([[0.5, 0.5, 0.5]]))
    extra = samples_per_box - 9
    if extra > 0:
        pts.append(qmc.Halton(d=3, scramble=True, seed=seed).random(extra))
    return np.concatenate(pts)


def build_transition_graph(
    f: DiscretizedMap,
    cover: BoxCover,
    samples_per_box: int = 9,
    inverse: bool = False,
    seed: int = 0,
) -> TransitionGraph:
    """Outer approximation of f (or f^-1) on the active boxes of cover.

    Edges go from each box to every box meeting its image enclosure, unioned
    with the boxes hit by sample points; targets outside the active set are
    dropped.
    """
    if samples_per_box < 8:
        raise PreconditionViolation(f"samples_per_box must be >= 8, got {samples_per_box}")
    act = cover.active_indices
    stats: dict = {}
    src, tgt = image_boxes(f, cover, act, inverse=inverse, stats=stats)
    full_deg = np.bincount(src, minlength=len(act))
    # sample images: always inside the enclosure; counted as a self-check
    offs = _sample_offsets(samples_per_box, seed)
    w = cover.widths
    enc_key = src * cover.n_boxes + tgt
    escapes = 0
    s_src, s_tgt = [], []
    step = max(1, 2_000_000 // len(offs))
    mapper = f.backward if inverse else f.forward
    for start in range(0, len(act), step):
        part = np.arange(start, min(len(act), start + step))
        lo = cover.lower_corners(act[part])
        pts = (lo[:, None, :] + offs[None, :, :] * w).reshape(-1, 3)
        img = cover.box_of(mapper(pts))
        rows = np.repeat(part, len(offs))
        key = rows * cover.n_boxes + img
        pos = np.searchsorted(enc_key, key)
        pos = np.minimum(pos, len(enc_key) - 1)
        miss = enc_key[pos] != key
        escapes += int(miss.sum())
        s_src.append(rows[miss])
        s_tgt.append(img[miss])
    if escapes:
        src = np.concatenate([src] + s_src)
        tgt = np.concatenate([tgt] + s_tgt)
    loc = cover.local_index(tgt)
    keep = loc >= 0
    key = np.unique(src[keep] * len(act) + loc[keep])
    s = key // len(act)
    t = key % len(act)
    indptr = np.zeros(len(act) + 1, dtype=np.int64)
    np.cumsum(np.bincount(s, minlength=len(act)), out=indptr[1:])
    return TransitionGraph(
        f=f,
        cover=cover,
        indptr=indptr,
        indices=t.astype(np.int64),
        bloat_radius=float(stats.get("bloat_radius", 0.0)),
        lipschitz=_lipschitz_estimate(f, inverse),
        inverse=inverse,
        samples_per_box=samples_per_box,
        sample_escapes=escapes,
        min_full_out_degree=int(full_deg.min()) if len(full_deg) else 0,
    )


@dataclass(eq=False)
class MorseDecomposition:
    graph: TransitionGraph
    class_of_box: np.ndarray  # per active box, class id or -1
    classes: list  # global box indices per class, sorted
    order: np.ndarray  # order[i, j]: class i reaches class j (i != j)
    terminal: list
    initial: list
    n_scc: int = 0

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def chain_recurrent(self) -> np.ndarray:
        if not self.classes:
            return np.empty(0, np.int64)
        return np.sort(np.concatenate(self.classes))

    def order_pairs(self) -> list[list[int]]:
        a, b = np.nonzero(self.order)
        return [[int(x), int(y)] for x, y in zip(a, b)]

    def hasse_pairs(self) -> list[list[int]]:
        R = self.order
        cover = R & ~((R.astype(np.int64) @ R.astype(np.int64)) > 0)
        a, b = np.nonzero(cover)
        return [[int(x), int(y)] for x, y in zip(a, b)]

    def to_json(self) -> dict:
        term = set(self.terminal)
        init = set(self.initial)
        cov = self.graph.cover
        out = []
        for cid, boxes in enumerate(self.classes):
            i, j, k = cov.unravel(boxes)
            out.append(
                {
                    "id": cid,
                    "boxes": [[int(a), int(b), int(c)] for a, b, c in zip(i, j, k)],
                    "terminal": cid in term,
                    "initial": cid in init,
                }
            )
        return {"classes": out, "order": self.order_pairs()}


def soundness_violations(g: TransitionGraph, n: int = 10_000, seed: int = 0) -> int:
    """Random points x in active boxes whose image box is active but not an edge target."""
    cov = g.cover
    rng = np.random.default_rng(seed)
    act = cov.active_indices
    src_local = rng.integers(0, len(act), size=n)
    pts = cov.lower_corners(act[src_local]) + rng.random((n, 3)) * cov.widths
    img = cov.box_of((g.f.backward if g.inverse else g.f.forward)(pts))
    tgt_local = cov.local_index(img)
    bad = 0
    for s, t in zip(src_local, tgt_local):
        if t >= 0 and not np.any(g.successors(int(s)) == t):
            bad += 1
    return bad


def _transitive_closure(R: np.ndarray) -> np.ndarray:
    R = R.copy()
    n = len(R)
    for k in range(n):
        R |= R[:, k : k + 1] & R[k : k + 1, :]
    return R


def morse_decomposition(g: TransitionGraph) -> MorseDecomposition:
    n = g.n_nodes
    comp, ncomp = tarjan_scc(g.indptr, g.indices, n)
    sizes = np.bincount(comp, minlength=ncomp)
    loops = self_loops(g.indptr, g.indices, n)
    is_class = sizes > 1
    is_class[comp[loops]] = True
    first = np.full(ncomp, n, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(n))
    class_comps = np.flatnonzero(is_class)
    class_comps = class_comps[np.argsort(first[class_comps], kind="stable")]
    nclass = len(class_comps)
    comp_class = np.full(ncomp, -1, dtype=np.int64)
    comp_class[class_comps] = np.arange(nclass)
    reach = class_reach(g.indptr, g.indices, comp, ncomp, comp_class, nclass)
    R = unpack_bits(reach[class_comps], nclass)
    class_of_box = comp_class[comp]
    act = g.cover.active_indices
    order_idx = np.argsort(class_of_box, kind="stable")
    counts = np.bincount(class_of_box[class_of_box >= 0], minlength=nclass)
    start = n - int((class_of_box >= 0).sum())
    classes = []
    for c in range(nclass):
        classes.append(np.sort(act[order_idx[start : start + counts[c]]]))
        start += counts[c]
    cov = g.cover
    if cov.parent_class is not None and cov.parent_order is not None and nclass:
        # relations between different coarse classes are inherited from the coarse order
        parent = np.array([cov.parent_class[cov.local_index(b[:1])[0]] for b in classes])
        inherited = cov.parent_order.T if g.inverse else cov.parent_order
        R = R | inherited[np.ix_(parent, parent)]
    np.fill_diagonal(R, False)
    R = _transitive_closure(R)
    np.fill_diagonal(R, False)
    terminal = [int(c) for c in range(nclass) if not R[c].any()]
    initial = [int(c) for c in range(nclass) if not R[:, c].any()]
    return MorseDecomposition(g, class_of_box, classes, R, terminal, initial, n_scc=int(ncomp))


@dataclass(eq=False)
class CertifiedAttractor:
    class_id: int
    boxes: np.ndarray
    trapping: np.ndarray
    certified: bool
    rounds: int
    reason: str = ""

    @property
    def volume_fraction(self) -> float:
        return len(self.boxes)


def quasi_attractors(
    g: TransitionGraph,
    m: MorseDecomposition,
    strict: bool = True,
    max_rounds: int = 1000,
    max_shells: int = 8,
) -> list[CertifiedAttractor]:
    """Certify each terminal class by growing a combinatorial trapping region.

    N starts as the class plus its one-box shell and absorbs image boxes until
    it is forward invariant.  If the image then fills all of N, N is thickened
    by another shell and grown again (up to max_shells times).
    """
    f, cov = g.f, g.cover
    term_masks = {c: cov.mask(m.classes[c]) for c in m.terminal}
    out = []
    for c in m.terminal:
        others = np.zeros(cov.n_boxes, dtype=bool)
        for d, mk in term_masks.items():
            if d != c:
                others |= mk
        N = np.zeros(cov.n_boxes, dtype=bool)
        img = np.zeros(cov.n_boxes, dtype=bool)
        seed = m.classes[c]
        ok, reason, rounds = False, "", 0
        for _ in range(max_shells):
            grow = cov.mask(shell(f, cov, seed)) & ~N
            if np.any(grow & others):
                reason = "trapping region meets another terminal class"
                break
            N |= grow
            frontier = np.flatnonzero(grow)
            stalled = False
            while len(frontier):
                rounds += 1
                _, tgt = image_boxes(f, cov, frontier, inverse=g.inverse)
                img[tgt] = True
                new = img & ~N
                if np.any(new & others):
                    reason = "trapping region meets another terminal class"
                    stalled = True
                    break
                if rounds > max_rounds:
                    reason = "trapping region did not stabilize"
                    stalled = True
                    break
                N |= new
                frontier = np.flatnonzero(new)
            if stalled:
                break
            if N.all() or int(img.sum()) < int(N.sum()):
                ok, reason = True, ""
                break
            reason = "image of the region is not a strict subset"
            seed = np.flatnonzero(N)
        if not ok and strict:
            raise CertificationFailed(f"terminal class {c}: {reason}", class_id=c)
        out.append(CertifiedAttractor(c, m.classes[c], np.flatnonzero(N), ok, rounds, reason))
    return out


def refine(
    g: TransitionGraph,
    m: MorseDecomposition,
    axis_factors=(2, 2, 2),
    memory_cap: int = DEFAULT_MEMORY_CAP,
) -> BoxCover:
    """Subdivide the chain-recurrent boxes; children remember their parent class."""
    factors = tuple(int(v) for v in axis_factors)
    if min(factors) < 1:
        raise ValueError("refinement factors must be >= 1")
    cov = g.cover
    cr = [(c, b) for c, b in enumerate(m.classes)]
    n_cr = sum(len(b) for _, b in cr)
    projected = n_cr * math.prod(factors)
    if projected > memory_cap:
        raise MemoryBudgetExceeded(
            f"refinement would create {projected} active boxes (cap {memory_cap})"
        )
    res = tuple(r * s for r, s in zip(cov.resolution, factors))
    if not cr:
        return BoxCover(res, active=np.empty(0, np.int64), depth=cov.depth + 1)
    parents = np.concatenate([b for _, b in cr])
    labels = np.concatenate([np.full(len(b), c, dtype=np.int64) for c, b in cr])
    children = cov.subdivide(parents, factors)
    child_label = np.repeat(labels, math.prod(factors))
    order = np.argsort(children, kind="stable")
    return BoxCover(
        res,
        active=children[order],
        depth=cov.depth + 1,
        parent_class=child_label[order],
        parent_order=m.order.copy(),
    )
