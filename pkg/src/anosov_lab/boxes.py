"""Box covers of the mapping torus and outer enclosures of box images.

Box (i, j, k) of a cover with resolution (n1, n2, nt) is the half-open
product [i/n1, (i+1)/n1) x [j/n2, (j+1)/n2) x [k/nt, (k+1)/nt) and has linear
index (i*n2 + j)*nt + k.

Images are enclosed per box by a first-order Taylor parallelogram in the
fiber (exact for linear fiber maps, padded by a measured second-derivative
remainder otherwise) times the exact image interval of the monotone center
map.  Candidate cells are tested with a separating-axis test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ResolutionTooCoarse
from .models import DiscretizedMap, wrap01, wrap_half

FP_MARGIN = 1e-12
CHUNK = 1 << 17


@dataclass(eq=False)
class BoxCover:
    resolution: tuple[int, int, int]
    active: np.ndarray | None = None
    depth: int = 0
    parent_class: np.ndarray | None = None
    parent_order: np.ndarray | None = None

    def __post_init__(self):
        res = tuple(int(v) for v in self.resolution)
        if len(res) != 3:
            raise ValueError("resolution needs three axis counts")
        if min(res) < 4:
            raise ResolutionTooCoarse(f"every axis needs at least 4 boxes, got {res}")
        self.resolution = res
        if self.active is not None:
            self.active = np.unique(np.asarray(self.active, dtype=np.int64))

    @property
    def n_boxes(self) -> int:
        n1, n2, nt = self.resolution
        return n1 * n2 * nt

    @property
    def is_full(self) -> bool:
        return self.active is None

    @property
    def active_indices(self) -> np.ndarray:
        if self.active is None:
            return np.arange(self.n_boxes, dtype=np.int64)
        return self.active

    @property
    def n_active(self) -> int:
        return self.n_boxes if self.active is None else len(self.active)

    @property
    def widths(self) -> np.ndarray:
        return 1.0 / np.array(self.resolution, dtype=float)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def index(self, i, j, k):
        n1, n2, nt = self.resolution
        return (np.asarray(i, dtype=np.int64) * n2 + j) * nt + k

    def unravel(self, idx):
        n1, n2, nt = self.resolution
        idx = np.asarray(idx, dtype=np.int64)
        k = idx % nt
        ij = idx // nt
        return ij // n2, ij % n2, k

    def box_of(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        n = np.array(self.resolution)
        cell = np.floor(wrap01(pts) * n).astype(np.int64)
        cell = np.minimum(cell, n - 1)
        return self.index(cell[:, 0], cell[:, 1], cell[:, 2])

    def lower_corners(self, idx) -> np.ndarray:
        i, j, k = self.unravel(idx)
        return np.stack([i, j, k], axis=1) * self.widths

    def centers(self, idx) -> np.ndarray:
        return self.lower_corners(idx) + 0.5 * self.widths

    def local_index(self, idx) -> np.ndarray:
        """Position of global indices in the active list (-1 where inactive)."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.active is None:
            return idx.copy()
        pos = np.searchsorted(self.active, idx)
        pos = np.minimum(pos, len(self.active) - 1)
        return np.where(self.active[pos] == idx, pos, -1)

    def subdivide(self, idx, factors) -> np.ndarray:
        """Global indices, at resolution multiplied by factors, of the children of idx."""
        f1, f2, ft = (int(v) for v in factors)
        i, j, k = self.unravel(idx)
        n1, n2, nt = self.resolution
        N2, Nt = n2 * f2, nt * ft
        a, b, c = np.meshgrid(np.arange(f1), np.arange(f2), np.arange(ft), indexing="ij")
        a, b, c = a.ravel(), b.ravel(), c.ravel()
        ci = (i[:, None] * f1 + a[None, :]).ravel()
        cj = (j[:, None] * f2 + b[None, :]).ravel()
        ck = (k[:, None] * ft + c[None, :]).ravel()
        return (ci * N2 + cj) * Nt + ck

    def mask(self, idx) -> np.ndarray:
        m = np.zeros(self.n_boxes, dtype=bool)
        m[np.asarray(idx, dtype=np.int64)] = True
        return m


def build_cover(resolution) -> BoxCover:
    return BoxCover(tuple(resolution))


# ---------------------------------------------------------------------------
# fiber enclosures


def _taylor_cells(img, J, err, half, n1, n2):
    """Cells meeting the parallelograms img + J [-half, half] inflated by err."""
    N = len(img)
    ext = np.abs(J) @ half + err[:, None]
    n = np.array([n1, n2], dtype=float)
    lo = np.floor((img - ext) * n).astype(np.int64)
    hi = np.floor((img + ext) * n).astype(np.int64)
    # an enclosure wider than the torus covers every cell of that axis once
    wide = np.any(hi - lo + 1 >= np.array([n1, n2]), axis=1)
    hi = np.minimum(hi, lo + np.array([n1, n2]) - 1)
    W = hi - lo + 1
    if N == 0:
        e = np.empty(0, np.int64)
        return e, e, e, ext
    rows_out, c1_out, c2_out = [], [], []
    # chunk so that the candidate window stays bounded in memory
    per = max(1, 4_000_000 // max(1, int(W[:, 0].max()) * int(W[:, 1].max())))
    cell_half = 0.5 / n
    for s0 in range(0, N, per):
        sl = slice(s0, s0 + per)
        W1, W2 = int(W[sl, 0].max()), int(W[sl, 1].max())
        a, b = np.meshgrid(np.arange(W1), np.arange(W2), indexing="ij")
        a, b = a.ravel(), b.ravel()
        c1 = lo[sl, 0:1] + a[None, :]
        c2 = lo[sl, 1:2] + b[None, :]
        keep = (c1 <= hi[sl, 0:1]) & (c2 <= hi[sl, 1:2])
        cc1 = (c1 + 0.5) / n1 - img[sl, 0:1]
        cc2 = (c2 + 0.5) / n2 - img[sl, 1:2]
        Js, es = J[sl], err[sl]
        for m in range(2):
            d = Js[:, :, m]
            o = Js[:, :, 1 - m]
            nu = np.stack([-d[:, 1], d[:, 0]], axis=1)
            nu_norm = np.hypot(nu[:, 0], nu[:, 1])
            para = np.abs(nu[:, 0] * o[:, 0] + nu[:, 1] * o[:, 1]) * half[1 - m] + es * nu_norm
            cellp = np.abs(nu[:, 0]) * cell_half[0] + np.abs(nu[:, 1]) * cell_half[1]
            dist = np.abs(nu[:, 0:1] * cc1 + nu[:, 1:2] * cc2)
            keep &= (dist <= (para + cellp)[:, None] * (1 + 1e-12) + 1e-15) | wide[sl, None]
        r, col = np.nonzero(keep)
        rows_out.append(r + s0)
        c1_out.append(c1[r, col])
        c2_out.append(c2[r, col])
    return np.concatenate(rows_out), np.concatenate(c1_out), np.concatenate(c2_out), ext


def fiber_image_cells(fiber, power: int, cy, half, n1: int, n2: int, margin: float = FP_MARGIN, split: bool = True):
    """Fiber cells meeting the enclosure of fiber**power applied to boxes centered at cy.

    Returns (rows, ci, cj, extent) where rows index cy and extent is the per-row
    half-extent vector of the enclosure around the image of the center.
    Boxes whose Taylor remainder exceeds a quarter cell are split into
    sub-boxes and enclosed piecewise.
    """
    cy = np.asarray(cy, dtype=float).reshape(-1, 2)
    half = np.asarray(half, dtype=float)
    N = len(cy)
    radius = float(np.hypot(*half))
    if power == 0 or fiber is None:
        img = cy.copy()
        J = np.broadcast_to(np.eye(2), (N, 2, 2))
        err = np.full(N, margin)
    elif abs(power) > 1 and not getattr(fiber, "is_linear", False):
        return _composed_cells(fiber, power, cy, half, n1, n2, margin)
    else:
        img = fiber.lift(cy, power)
        J = fiber.jacobian(cy, power)
        err = fiber.remainder_bound(cy, power, radius) + margin
    tol = 0.25 / max(n1, n2)
    big = np.flatnonzero(err > tol) if split else np.empty(0, np.int64)
    if len(big) == 0:
        rows, c1, c2, ext = _taylor_cells(img, J, err, half, n1, n2)
        return rows, np.mod(c1, n1), np.mod(c2, n2), ext
    small = np.setdiff1d(np.arange(N), big)
    rows_s, c1_s, c2_s, ext_s = _taylor_cells(img[small], J[small], err[small], half, n1, n2)
    m = int(min(8, max(2, np.ceil(np.sqrt(err[big].max() / tol)))))
    offs = (np.arange(m) + 0.5) / m * 2.0 - 1.0
    oa, ob = np.meshgrid(offs, offs, indexing="ij")
    off = np.stack([oa.ravel(), ob.ravel()], axis=1) * half
    sub = (cy[big][:, None, :] + off[None, :, :]).reshape(-1, 2)
    r_b, ci_b, cj_b, ext_b = fiber_image_cells(fiber, power, sub, half / m, n1, n2, margin, split=False)
    sub_img = fiber.lift(sub, power)
    reach = np.linalg.norm(sub_img - np.repeat(img[big], m * m, axis=0), axis=1) + np.linalg.norm(ext_b, axis=1)
    ext = np.empty((N, 2))
    ext[small] = ext_s
    ext[big] = reach.reshape(-1, m * m).max(axis=1)[:, None] / np.sqrt(2.0)
    rows = np.concatenate([small[rows_s], big[r_b // (m * m)]])
    ci = np.concatenate([np.mod(c1_s, n1), ci_b])
    cj = np.concatenate([np.mod(c2_s, n2), cj_b])
    key = np.unique((rows * n1 + ci) * n2 + cj)
    return key // (n1 * n2), (key // n2) % n1, key % n2, ext


def _composed_cells(fiber, power, cy, half, n1, n2, margin):
    """Enclose a multi-step nonlinear iterate one step at a time through grid cells."""
    sign = 1 if power > 0 else -1
    rows, ci, cj, _ = fiber_image_cells(fiber, sign, cy, half, n1, n2, margin)
    cell_half = 0.5 / np.array([n1, n2], dtype=float)
    for _ in range(abs(power) - 1):
        cells, inv = np.unique(ci * n2 + cj, return_inverse=True)
        centers = np.stack([(cells // n2 + 0.5) / n1, (cells % n2 + 0.5) / n2], axis=1)
        r2, c1, c2, _ = fiber_image_cells(fiber, sign, centers, cell_half, n1, n2, margin)
        order = np.argsort(r2, kind="stable")
        r2, c1, c2 = r2[order], c1[order], c2[order]
        start = np.searchsorted(r2, np.arange(len(cells)))
        count = np.searchsorted(r2, np.arange(len(cells)), side="right") - start
        cnt = count[inv]
        rep = np.repeat(np.arange(len(rows)), cnt)
        ramp = np.arange(int(cnt.sum())) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        pick = np.repeat(start[inv], cnt) + ramp
        key = np.unique((rows[rep] * n1 + c1[pick]) * n2 + c2[pick])
        rows, ci, cj = key // (n1 * n2), (key // n2) % n1, key % n2
    img = fiber.lift(cy, power)
    cc = np.stack([(ci + 0.5) / n1, (cj + 0.5) / n2], axis=1)
    d = np.abs(wrap_half(cc - wrap01(img[rows]))) + cell_half
    ext = np.zeros((len(cy), 2))
    np.maximum.at(ext, rows, d)
    return rows, ci, cj, ext


# ---------------------------------------------------------------------------
# center branches


def center_branches(f: DiscretizedMap, t0, t1, inverse: bool = False, margin: float = FP_MARGIN):
    """Split the center image of [t0, t1] into pieces with a fixed fiber power.

    Returns a list of (rows, fiber_power, a, b) with [a, b] inside [0, 1].
    """
    roof = f.roof
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    skew = f.family == "product_skew"
    out = []
    if not inverse:
        u0 = roof.lift(t0) - margin
        u1 = roof.lift(t1) + margin
        for n in range(int(np.floor(u0.min())), int(np.floor(u1.max())) + 1):
            rows = np.flatnonzero((u0 <= n + 1) & (u1 >= n))
            if len(rows) == 0:
                continue
            a = np.maximum(u0[rows], n) - n
            b = np.minimum(u1[rows], n + 1) - n
            ok = a < 1.0
            rows, a, b = rows[ok], a[ok], b[ok]
            if len(rows):
                out.append((rows, 1 if skew else n, a, b))
        return out
    tau0 = float(roof.tau(0.0))
    lo_m = int(np.floor(tau0 - t1.max())) - 1
    hi_m = int(np.ceil(tau0 + 1 - t0.min())) + 1
    for m in range(lo_m, hi_m + 1):
        v0 = t0 + m - margin
        v1 = t1 + m + margin
        rows = np.flatnonzero((v1 >= tau0) & (v0 <= tau0 + 1))
        if len(rows) == 0:
            continue
        a = roof.lift_inverse(np.maximum(v0[rows], tau0)) - margin
        b = roof.lift_inverse(np.minimum(v1[rows], tau0 + 1)) + margin
        a = np.maximum(a, 0.0)
        b = np.minimum(b, 1.0)
        ok = a < 1.0
        rows, a, b = rows[ok], a[ok], b[ok]
        if len(rows):
            out.append((rows, -1 if skew else -m, a, b))
        # the piece reaching t = 1 continues as t = 0 one wrap higher; the b = 1
        # endpoint is covered by the neighbouring m through the gluing
    return out


def _join(rows_src, frow, ci, cj, klo, khi, n2, nt):
    nk = (khi - klo + 1)[frow]
    total = int(nk.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    rep_row = np.repeat(frow, nk)
    starts = np.cumsum(nk) - nk
    ramp = np.arange(total, dtype=np.int64) - np.repeat(starts, nk)
    k = klo[rep_row] + ramp
    tgt = (np.repeat(ci, nk) * n2 + np.repeat(cj, nk)) * nt + k
    return rows_src[rep_row], tgt


def image_boxes(f: DiscretizedMap, cover: BoxCover, idx, inverse: bool = False, stats: dict | None = None):
    """Enclosure targets (full-grid global indices) of the boxes idx.

    Returns (src_pos, targets) with src_pos indexing into idx.
    """
    idx = np.asarray(idx, dtype=np.int64)
    n1, n2, nt = cover.resolution
    w = cover.widths
    half = 0.5 * w[:2]
    srcs, tgts = [], []
    max_ext = 0.0
    for start in range(0, len(idx), CHUNK):
        part = idx[start : start + CHUNK]
        lo = cover.lower_corners(part)
        cy = lo[:, :2] + half
        t0 = lo[:, 2]
        t1 = lo[:, 2] + w[2]
        for rows, power, a, b in center_branches(f, t0, t1, inverse=inverse):
            frow, ci, cj, ext = fiber_image_cells(f.fiber, power, cy[rows], half, n1, n2)
            klo = np.floor(a * nt).astype(np.int64)
            khi = np.minimum(np.floor(b * nt).astype(np.int64), nt - 1)
            s, t = _join(rows + start, frow, ci, cj, klo, khi, n2, nt)
            srcs.append(s)
            tgts.append(t)
            # zero-width pieces are the glued copy of a seam endpoint, not extra spread
            wide = (b - a) > 1e-9
            if np.any(wide):
                tpart = 0.5 * (b - a)[wide]
                max_ext = max(max_ext, float(np.sqrt((ext[wide] ** 2).sum(axis=1) + tpart**2).max()))
    if stats is not None:
        stats["bloat_radius"] = max(stats.get("bloat_radius", 0.0), max_ext)
    if not srcs:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    src = np.concatenate(srcs)
    tgt = np.concatenate(tgts)
    key = np.unique(src * cover.n_boxes + tgt)
    return key // cover.n_boxes, key % cover.n_boxes


# ---------------------------------------------------------------------------
# neighbourhoods


def _seam_cells(f: DiscretizedMap, cover: BoxCover, idx, up: bool):
    """Boxes on the far side of the t = 1 seam that meet the closed top (or bottom) face."""
    n1, n2, nt = cover.resolution
    w = cover.widths
    half = 0.5 * w[:2]
    cy = cover.lower_corners(idx)[:, :2] + half
    if f.gluing is None:
        fiber, power = None, 0
    else:
        fiber, power = f.gluing, (1 if up else -1)
    rows, ci, cj, _ = fiber_image_cells(fiber, power, cy, half, n1, n2)
    k = 0 if up else nt - 1
    return rows, cover.index(ci, cj, np.full(len(ci), k))


def shell(f: DiscretizedMap, cover: BoxCover, idx) -> np.ndarray:
    """Global indices of every box whose closure meets the closure of a box in idx."""
    idx = np.unique(np.asarray(idx, dtype=np.int64))
    n1, n2, nt = cover.resolution
    i, j, k = cover.unravel(idx)
    out = [idx]
    for dk in (-1, 0, 1):
        kk = k + dk
        ok = (kk >= 0) & (kk < nt)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                out.append(cover.index((i[ok] + di) % n1, (j[ok] + dj) % n2, kk[ok]))
    top = idx[k == nt - 1]
    if len(top):
        out.append(_seam_cells(f, cover, top, up=True)[1])
    bot = idx[k == 0]
    if len(bot):
        out.append(_seam_cells(f, cover, bot, up=False)[1])
    return np.unique(np.concatenate(out))


def face_adjacency(f: DiscretizedMap, cover: BoxCover, idx=None):
    """Symmetric face-adjacency pairs (a, b) of global indices restricted to idx."""
    idx = cover.active_indices if idx is None else np.asarray(idx, dtype=np.int64)
    n1, n2, nt = cover.resolution
    i, j, k = cover.unravel(idx)
    a_list, b_list = [], []
    for di, dj in ((1, 0), (0, 1)):
        a_list.append(idx)
        b_list.append(cover.index((i + di) % n1, (j + dj) % n2, k))
    inner = k < nt - 1
    a_list.append(idx[inner])
    b_list.append(idx[inner] + 1)
    top = idx[k == nt - 1]
    if len(top):
        rows, nb = _seam_cells(f, cover, top, up=True)
        a_list.append(top[rows])
        b_list.append(nb)
    a = np.concatenate(a_list)
    b = np.concatenate(b_list)
    a, b = np.concatenate([a, b]), np.concatenate([b, a])
    mask = cover.mask(idx)
    keep = mask[a] & mask[b] & (a != b)
    key = np.unique(a[keep] * cover.n_boxes + b[keep])
    return key // cover.n_boxes, key % cover.n_boxes
