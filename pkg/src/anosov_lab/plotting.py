"""SVG slices of the computed objects, drawn on the base cover.

Output is byte-stable: fixed hash salt, no date metadata, vector quads only.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .boxes import BoxCover  # noqa: E402
from .laminations import LABELS  # noqa: E402

STYLE = {
    "svg.hashsalt": "anosov-lab",
    "svg.fonttype": "path",
    "font.size": 8,
    "axes.labelsize": 9,
    "figure.dpi": 100,
}
LABEL_COLORS = ["#08589e", "#a8ddb5", "#b2182b", "#fddbc7"]


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _occupancy(cover: BoxCover, base: BoxCover, boxes) -> np.ndarray:
    """Boxes of another cover mapped onto the base grid (by center), as an (n1, n2, nt) bool array."""
    hit = np.zeros(base.n_boxes, dtype=bool)
    if len(boxes):
        hit[base.box_of(cover.centers(np.asarray(boxes)))] = True
    return hit.reshape(base.resolution)


def fiber_slice(p, path: Path) -> Path:
    """Fiber projection of each lamination (or terminal class when none were computed)."""
    base = p.base_cover
    n1, n2, _ = base.resolution
    if p.laminations:
        items = [(f"lamination {lam.class_id}", lam.cover, lam.boxes) for lam in p.laminations]
    else:
        items = [(f"class {a.class_id}", p.graph.cover, a.boxes) for a in p.attractors]
    items = items or [("empty", base, np.empty(0, np.int64))]
    edges1 = np.arange(n1 + 1) / n1
    edges2 = np.arange(n2 + 1) / n2
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(items), figsize=(2.6 * len(items), 2.6), squeeze=False)
        for ax, (title, cov, boxes) in zip(axes[0], items):
            occ = _occupancy(cov, base, boxes).any(axis=2)
            ax.pcolormesh(edges1, edges2, occ.T.astype(float), cmap="Greys", vmin=0, vmax=1)
            ax.set_title(title)
            ax.set_xlabel("y1")
            ax.set_ylabel("y2")
            ax.set_aspect("equal")
        fig.tight_layout()
        return _save(fig, path)


def center_slice(p, path: Path) -> Path:
    """(y1, t) slice at the middle fiber column: terminal classes, and gap labels when available."""
    base = p.base_cover
    n1, n2, nt = base.resolution
    j = n2 // 2
    e1 = np.arange(n1 + 1) / n1
    et = np.arange(nt + 1) / nt
    panels = 2 if p.gaps is not None else 1
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, panels, figsize=(3.2 * panels, 3.2), squeeze=False)
        ax = axes[0][0]
        img = np.zeros((n1, nt))
        if p.levels:
            cov = p.graph.cover
            for a in p.attractors:
                img += _occupancy(cov, base, a.boxes)[:, j, :]
            for r in p.repellers:
                img -= _occupancy(cov, base, r.boxes)[:, j, :]
        ax.pcolormesh(e1, et, img.T, cmap="RdBu_r", vmin=-1, vmax=1)
        ax.set_title("attractors (+) / repellers (-)")
        ax.set_xlabel("y1")
        ax.set_ylabel("t")
        if p.gaps is not None:
            gd = p.gaps
            lab = np.full(base.n_boxes, np.nan)
            lab[base.box_of(gd.cover.centers(gd.boxes))] = gd.labels
            ax = axes[0][1]
            mesh = ax.pcolormesh(e1, et, lab.reshape(n1, n2, nt)[:, j, :].T,
                                 cmap=ListedColormap(LABEL_COLORS), vmin=-0.5, vmax=3.5)
            cb = fig.colorbar(mesh, ax=ax, ticks=range(4))
            cb.ax.set_yticklabels(LABELS)
            ax.set_title("gap labels")
            ax.set_xlabel("y1")
        fig.tight_layout()
        return _save(fig, path)


def section_overlay(p, path: Path) -> Path:
    """lambda on the (y1, t) slice with the extracted section boxes marked."""
    lam = p.fields["lambda"]
    cov = lam.cover
    n1, n2, nt = cov.resolution
    j = n2 // 2
    e1 = np.arange(n1 + 1) / n1
    et = np.arange(nt + 1) / nt
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        vals = lam.grid.reshape(n1, n2, nt)[:, j, :]
        mesh = ax.pcolormesh(e1, et, vals.T, cmap="twilight", vmin=0, vmax=1)
        fig.colorbar(mesh, ax=ax, label="lambda")
        i, jj, k = cov.unravel(p.section.boxes)
        sel = jj == j
        ax.plot((i[sel] + 0.5) / n1, (k[sel] + 0.5) / nt, "k.", ms=2, label="section")
        ax.set_xlabel("y1")
        ax.set_ylabel("t")
        ax.legend(loc="upper right", fontsize=6)
        fig.tight_layout()
        return _save(fig, path)


def plot_pipeline(p, outdir: Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    out = []
    if p.levels:
        out.append(center_slice(p, outdir / "center_slice.svg"))
    if p.attractors or p.laminations:
        out.append(fiber_slice(p, outdir / "fiber_slice.svg"))
    if p.section is not None:
        out.append(section_overlay(p, outdir / "section_overlay.svg"))
    return out
