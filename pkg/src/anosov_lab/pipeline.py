"""Stage orchestration: model -> chain recurrence -> laminations -> section.

Each stage fills a section of ``Pipeline.report`` and keeps its heavy results
on the instance so later stages and the exporters can reuse them.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import laminations as lm
from . import sections as sc
from .boxes import BoxCover, build_cover
from .chainrec import (
    build_transition_graph,
    morse_decomposition,
    quasi_attractors,
    refine,
    soundness_violations,
)
from .config import RunConfig
from .errors import ClosedFormUnavailable, DegenerateFixedPoint, NoHitWithinBudget
from .models import center_return_map, classify_fixed_point, fixed_points, verify_partial_hyperbolicity

SCHEMA = "anosov-lab/1"
COMMANDS = ("model-check", "chain", "attractors", "laminations", "prop1", "gaps", "section", "full")
PREREQS = {
    "model-check": ("model",),
    "chain": ("model", "chain"),
    "attractors": ("model", "chain", "attractors"),
    "laminations": ("model", "chain", "attractors", "laminations"),
    "prop1": ("model", "chain", "attractors", "laminations", "prop1"),
    "gaps": ("model", "chain", "attractors", "laminations", "prop1", "gaps"),
    "section": ("model", "chain", "attractors", "laminations", "prop1", "gaps", "section", "verdict"),
}
PREREQS["full"] = PREREQS["section"]
QI_HORIZON = 50
SOUNDNESS_POINTS = 10_000


def slab_hausdorff(cover: BoxCover, boxes: np.ndarray, t_star: float) -> float:
    """Hausdorff distance between the box centers of a class and the torus slab t = t_star.

    The slab is sampled at the fiber-cell centers of the cover.
    """
    c = cover.centers(boxes)
    dt = np.abs((c[:, 2] - t_star + 0.5) % 1.0 - 0.5)
    n1, n2, _ = cover.resolution
    gi, gj = np.meshgrid((np.arange(n1) + 0.5) / n1, (np.arange(n2) + 0.5) / n2, indexing="ij")
    slab = np.stack([gi.ravel(), gj.ravel(), np.full(gi.size, t_star % 1.0)], axis=1)
    d_slab, _ = cKDTree(c % 1.0, boxsize=1.0).query(slab % 1.0)
    return float(max(dt.max(), d_slab.max()))


def _nearest(ts: list[float], t: float) -> float:
    return min(ts, key=lambda s: abs((t - s + 0.5) % 1.0 - 0.5))


@dataclass(eq=False)
class Pipeline:
    cfg: RunConfig
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.f = self.cfg.build_map()
        self.base_cover = build_cover(self.cfg.resolution)
        self.levels: list = []
        self.attractors: list = []
        self.repellers: list = []
        self.repeller_morse = None
        self.laminations: list = []
        self.samples = None
        self.L = None
        self.gaps = None
        self.fields: dict = {}
        self.section = None
        self.verdict = None
        self.exhausted = False
        self.completed: list[str] = []
        self.timings: dict[str, float] = {}
        self.report = {"schema": SCHEMA, "config": self.cfg.to_dict()}

    # -- helpers ------------------------------------------------------------

    @property
    def graph(self):
        return self.levels[-1][0]

    @property
    def morse(self):
        return self.levels[-1][1]

    @property
    def resolved_laminations(self) -> list:
        return [lam for lam in self.laminations if lam.resolved]

    def all_certified(self) -> bool:
        return all(a.certified for a in self.attractors) and all(r.certified for r in self.repellers)

    def run(self, command: str) -> dict:
        if command not in PREREQS:
            raise ValueError(f"unknown command {command!r}")
        self.report["command"] = command
        for stage in PREREQS[command]:
            if stage not in self.completed:
                t0 = time.perf_counter()
                getattr(self, "stage_" + stage)()
                # wall times stay out of the report so outputs are reproducible byte for byte
                self.timings[stage] = time.perf_counter() - t0
                self.completed.append(stage)
        return self.report

    def exit_code(self) -> int:
        if self.verdict is not None and self.verdict.kind == "UnresolvedAtResolution":
            return 2
        if self.attractors and not self.all_certified():
            return 2
        return 0

    # -- stages -------------------------------------------------------------

    def stage_model(self):
        roof = self.f.roof
        try:
            fps = fixed_points(center_return_map(roof))
            degenerate = None
        except DegenerateFixedPoint as exc:
            fps, degenerate = [], str(exc)
        kinds = [classify_fixed_point(m) for _, m in fps]
        try:
            cone = verify_partial_hyperbolicity(self.f, seed=self.cfg.seed, raise_on_violation=False).to_dict()
        except ClosedFormUnavailable as exc:
            cone = {"passed": None, "failure": f"ClosedFormUnavailable: {exc}"}
        self.fixed = fps
        self.report["model"] = {
            "family": self.f.family,
            "fixed_points": [{"t": t, "multiplier": m, "type": k} for (t, m), k in zip(fps, kinds)],
            "attracting_fixed_points": kinds.count("attracting"),
            "repelling_fixed_points": kinds.count("repelling"),
            "cone_check": cone,
        }
        if degenerate:
            self.report["model"]["degenerate_fixed_points"] = degenerate

    def stage_chain(self):
        cfg = self.cfg
        cov = self.base_cover
        levels = []
        for r in range(cfg.rounds + 1):
            g = build_transition_graph(self.f, cov, cfg.samples_per_box, seed=cfg.seed)
            m = morse_decomposition(g)
            levels.append((g, m))
            if r < cfg.rounds:
                cov = refine(g, m, cfg.factors, cfg.memory_cap)
        self.levels = levels
        g, m = levels[-1]
        n_cr = int(sum(len(b) for b in m.classes))
        self.exhausted = n_cr * math.prod(cfg.factors) > cfg.memory_cap
        self.report["chain"] = {
            "levels": [
                {
                    "resolution": list(g_.cover.resolution),
                    "active_boxes": int(g_.cover.n_active),
                    "edges": g_.n_edges,
                    "box_diameter": g_.cover.diameter,
                    "bloat_radius": g_.bloat_radius,
                    "epsilon": g_.epsilon,
                    "classes": m_.n_classes,
                    "terminal": len(m_.terminal),
                    "sample_escapes": g_.sample_escapes,
                }
                for g_, m_ in levels
            ],
            "classes": m.n_classes,
            "largest_class_fraction": max((len(b) for b in m.classes), default=0) / g.cover.n_active,
            "chain_recurrent_boxes": n_cr,
            "order": m.order_pairs(),
            "soundness_violations": soundness_violations(g, SOUNDNESS_POINTS, cfg.seed),
            "refinement_exhausted": self.exhausted,
        }
        self.report["epsilon"] = g.epsilon
        self.report["box_diameter"] = g.cover.diameter

    def _describe(self, certs, morse, slabs) -> list:
        cov = morse.graph.cover
        out = []
        for a in certs:
            t = cov.centers(a.boxes)[:, 2]
            mean_t = float(np.angle(np.exp(2j * np.pi * t).mean()) / (2 * np.pi) % 1.0)
            row = {
                "class_id": a.class_id,
                "boxes": int(len(a.boxes)),
                "certified": a.certified,
                "trapping_boxes": int(len(a.trapping)),
                "rounds": a.rounds,
                "center_mean": mean_t,
            }
            if a.reason:
                row["reason"] = a.reason
            if slabs:
                slab = _nearest(slabs, mean_t)
                row["slab"] = slab
                row["slab_hausdorff"] = slab_hausdorff(cov, a.boxes, slab)
            out.append(row)
        return out

    def stage_attractors(self):
        g, m = self.levels[-1]
        self.attractors = quasi_attractors(g, m, strict=False)
        gi = build_transition_graph(self.f, g.cover, self.cfg.samples_per_box, inverse=True, seed=self.cfg.seed)
        mi = morse_decomposition(gi)
        self.repeller_morse = mi
        self.repellers = quasi_attractors(gi, mi, strict=False)
        attracting = [t for t, mult in self.fixed if classify_fixed_point(mult) == "attracting"]
        repelling = [t for t, mult in self.fixed if classify_fixed_point(mult) == "repelling"]
        diam = g.cover.diameter
        att = self._describe(self.attractors, m, attracting)
        rep = self._describe(self.repellers, mi, repelling)
        self.report["terminal_classes"] = len(self.attractors)
        self.report["attractors"] = {
            "certified": sum(a.certified for a in self.attractors),
            "classes": att,
            "slab_tolerance": 2 * diam,
        }
        self.report["repellers"] = {
            "certified": sum(r.certified for r in self.repellers),
            "classes": rep,
            "slab_tolerance": 2 * diam,
        }

    def stage_laminations(self):
        g, m = self.levels[-1]
        self.laminations = lm.minimal_laminations(self.f, m)
        rows = []
        for lam in self.laminations:
            rows.append(
                {
                    "class_id": lam.class_id,
                    "resolved": lam.resolved,
                    "boxes": lam.n_boxes,
                    "fiber_cells": int(len(lam.fiber_cells())),
                    "center": lam.center,
                    "seed_hausdorff": lam.hausdorff,
                    "coverage": lam.coverage,
                    "iterations": lam.iterations,
                    "invariance_defect": lam.invariance_defect(),
                }
            )
        self.report["laminations"] = len(self.resolved_laminations)
        self.report["lamination_details"] = {
            "computed": len(self.laminations),
            "hausdorff_tolerance": 2 * g.cover.diameter,
            "items": rows,
        }

    def stage_prop1(self):
        cfg = self.cfg
        self.samples = lm.uniform_samples(cfg.prop1_samples, cfg.seed)
        diam = self.graph.cover.diameter
        per, misses = [], 0
        for lam in self.laminations:
            ls = lm.center_hit_lengths(lam, self.samples, cfg.orbit_length)
            bad = ~np.isfinite(ls)
            misses += int(bad.sum())
            per.append({"class_id": lam.class_id, "L": float(ls[~bad].max()) if (~bad).any() else None,
                        "misses": int(bad.sum())})
        if misses:
            raise NoHitWithinBudget(f"{misses} center leaves miss a lamination within length {cfg.orbit_length}")
        self.L = max(p["L"] for p in per) if per else None
        out = {"samples": len(self.samples), "per_lamination": per, "L": self.L,
               "bound": 1 + 2 * diam, "misses": misses}
        pair = self.resolved_laminations[:2]
        if len(pair) == 2:
            d = lm.lamination_distance(pair[0], pair[1])
            sup, (pt, n) = lm.qi_constants(self.f, d, QI_HORIZON, self.samples[: min(200, len(self.samples))])
            out["qi"] = {"segment_length": d, "horizon": QI_HORIZON, "sup": sup,
                         "witness_iterate": int(n), "bound": 2 * self.L + 2 * diam}
        self.report["L"] = self.L
        self.report["prop1"] = out

    def stage_gaps(self):
        pair = self.resolved_laminations[:2]
        if len(pair) < 2:
            self.report["gaps"] = {"skipped": "fewer than two resolved laminations"}
            return
        cfg = self.cfg
        gd = lm.gap_decomposition(pair[0], pair[1], self.base_cover, n_table=cfg.hit_table,
                                  budget=cfg.orbit_length, seed=cfg.seed)
        self.gaps = gd
        self.report["gaps"] = {
            "laminations": [pair[0].class_id, pair[1].class_id],
            "cover": list(self.base_cover.resolution),
            "counts": gd.counts(),
            "partition": gd.is_partition(),
            "ambiguous": int(gd.ambiguous.sum()),
            "ambiguous_fraction": gd.ambiguous_fraction,
            "open_contacts": gd.open_contacts,
            "L_box_centers": gd.L_measured,
            "max_first_hit_length": float(gd.S_table[:, 6].max()),
            "semicontinuity_violation": lm.semicontinuity_probe(pair[0], pair[1], 200, cfg.seed),
            "convergence_failures": lm.convergence_probe(pair[0], pair[1], gd),
        }

    def stage_section(self):
        self.bounds = {}
        if self.gaps is None:
            self.report["section"] = {"skipped": "no gap decomposition"}
            return
        cfg, gd, f = self.cfg, self.gaps, self.f
        cov = gd.cover
        samples = lm.uniform_samples(cfg.orbit_samples, cfg.seed)
        four_L = 4.0 * self.L
        theta = sc.build_theta(gd)
        rho = sc.build_rho(theta, gd)
        wind = sc.winding_check(f, rho, four_L, samples)
        mu = sc.smooth_mu(rho, cfg.smoothing_width * cov.diameter)
        wind_mu = sc.winding_check(f, mu, four_L, samples)
        lam = sc.schwartzman_lambda(mu, f, four_L, cfg.quadrature_step)
        closed, fd = sc.derivative_along_orbits(lam, samples)
        sec = sc.extract_section(lam, f, samples)
        sub = samples[:100]
        wn = [sc.winding_numbers(x, sub) for x in (rho, mu, lam)]
        self.fields = {"theta": theta, "rho": rho, "mu": mu, "lambda": lam}
        self.section = sec
        self.bounds = {
            "four_L": four_L,
            "min_winding_increment": wind,
            "min_winding_increment_mu": wind_mu,
            "smoothing_drift": mu.lift_cache["drift"],
            "min_derivative": float(closed.min()),
            "inverse_four_L": 1.0 / four_L,
            "derivative_identity_gap": float(np.abs(closed - fd).max()),
            "section_hit_fraction": sec.hit_fraction,
            "decreasing_crossings": sec.decreasing_crossings,
        }
        counts = np.unique(sec.crossing_counts, return_counts=True)
        self.report["section"] = {
            "cover": list(cov.resolution),
            "orbits": len(samples),
            "branch_discrepancy": sc.branch_discrepancy(theta, gd),
            "section_boxes": int(len(sec.boxes)),
            "crossings_per_orbit": {str(int(c)): int(n) for c, n in zip(*counts)},
            "winding_numbers_equal": bool((wn[0] == wn[1]).all() and (wn[1] == wn[2]).all()),
            "winding_numbers": sorted({int(v) for v in wn[2]}),
        }

    def stage_verdict(self):
        resolved = self.all_certified() and all(lam.resolved for lam in self.laminations)
        n = len(self.resolved_laminations)
        advice = ""
        uncert = sum(not a.certified for a in self.attractors + self.repellers)
        if uncert:
            advice = f"refine the grid: {uncert} terminal classes have no certified trapping region at this resolution"
        elif not resolved:
            advice = "refine the grid: the seeds of some class disagree beyond two box diameters"
        self.verdict = sc.global_section_verdict(
            self.f, n, getattr(self, "bounds", {}), self.section,
            resolved=resolved, refinement_exhausted=self.exhausted, advice=advice,
        )
        d = self.verdict.to_dict()
        self.report["verdict"] = d.pop("verdict")
        self.report["bounds"] = d.pop("bounds")
        d.pop("laminations")
        if d:
            self.report["verdict_details"] = d


def run_pipeline(cfg: RunConfig, command: str = "full") -> Pipeline:
    p = Pipeline(cfg)
    p.run(command)
    return p
