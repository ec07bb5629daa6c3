from __future__ import annotations

import numpy as np
import pytest

from anosov_lab.boxes import build_cover, shell
from anosov_lab.chainrec import (
    TransitionGraph,
    build_transition_graph,
    morse_decomposition,
    quasi_attractors,
    refine,
    soundness_violations,
)
from anosov_lab.errors import CertificationFailed, MemoryBudgetExceeded, PreconditionViolation
from anosov_lab.models import RoofDiscretization, cat_suspension, da_suspension, identity_stub

R = RoofDiscretization


def graph_from_edges(n_boxes_res, edges):
    cov = build_cover(n_boxes_res)
    n = cov.n_boxes
    s, t = (np.array(edges, dtype=np.int64).T if edges else (np.empty(0, np.int64),) * 2)
    order = np.lexsort((t, s))
    s, t = s[order], t[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(s, minlength=n), out=indptr[1:])
    return TransitionGraph(identity_stub(), cov, indptr, t, 0.0, 1.0)


def test_single_cycle_is_terminal_and_initial():
    g = graph_from_edges((4, 4, 4), [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)])
    m = morse_decomposition(g)
    assert m.n_classes == 1
    assert m.classes[0].tolist() == [0, 1, 2, 3, 4]
    assert m.terminal == [0] and m.initial == [0]


def test_self_loop_singletons_are_classes():
    g = graph_from_edges((4, 4, 4), [(0, 0), (0, 1), (1, 2), (2, 2)])
    m = morse_decomposition(g)
    assert [c.tolist() for c in m.classes] == [[0], [2]]
    assert m.order_pairs() == [[0, 1]]
    assert m.terminal == [1] and m.initial == [0]


def test_samples_per_box_guard():
    with pytest.raises(PreconditionViolation):
        build_transition_graph(identity_stub(), build_cover((4, 4, 4)), samples_per_box=7)


def test_identity_stub_graph_is_box_plus_shell():
    f = identity_stub()
    cov = build_cover((6, 6, 6))
    g = build_transition_graph(f, cov)
    for b in (0, 77, 200):
        succ = set(g.successors(b).tolist())
        assert b in succ
        assert succ <= set(shell(f, cov, [b]).tolist())


def test_constant_roof_affine_slab_soundness():
    f = cat_suspension(R.constant(1.0))
    cov = build_cover((16, 16, 64))
    g = build_transition_graph(f, cov)
    rng = np.random.default_rng(0)
    b = cov.index(5, 7, 20)  # interior in t: no wrap inside the box
    pts = cov.lower_corners([b]) + rng.random((100, 3)) * cov.widths
    img = cov.box_of(f.forward(pts))
    assert set(img.tolist()) <= set(g.successors(b).tolist())


@pytest.mark.parametrize("fam", [cat_suspension, da_suspension])
def test_soundness_coarse(fam):
    g = build_transition_graph(fam(R.sinusoidal(0.05, 2)), build_cover((16, 16, 32)))
    assert g.out_degree().min() >= 1
    assert g.sample_escapes == 0
    assert soundness_violations(g, 10_000, seed=3) == 0


def test_tau_const_one_chain_class():
    g = build_transition_graph(cat_suspension(R.constant(1.0)), build_cover((16, 16, 64)))
    m = morse_decomposition(g)
    assert m.n_classes == 1
    assert len(m.classes[0]) / g.cover.n_active >= 0.99
    (att,) = quasi_attractors(g, m)
    assert att.certified and len(att.trapping) == g.cover.n_boxes


def test_coarse_k2_certification_fails():
    g = build_transition_graph(cat_suspension(R.sinusoidal(0.05, 2)), build_cover((8, 8, 16)))
    m = morse_decomposition(g)
    with pytest.raises(CertificationFailed):
        quasi_attractors(g, m, strict=True)
    soft = quasi_attractors(g, m, strict=False)
    assert not any(a.certified for a in soft)


def test_graph_is_deterministic():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    a = build_transition_graph(f, build_cover((16, 16, 32)))
    b = build_transition_graph(f, build_cover((16, 16, 32)))
    assert np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)


def test_refine_counts_and_axis_factors():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    g = build_transition_graph(f, build_cover((16, 16, 32)))
    m = morse_decomposition(g)
    n_cr = len(m.chain_recurrent)
    fine = refine(g, m, (2, 2, 2))
    assert fine.n_active <= 8 * n_cr and fine.resolution == (32, 32, 64)
    t_only = refine(g, m, (1, 1, 2))
    assert t_only.resolution == (16, 16, 64) and t_only.n_active == 2 * n_cr
    with pytest.raises(MemoryBudgetExceeded):
        refine(g, m, (2, 2, 2), memory_cap=n_cr)


def test_default_pipeline_levels(pipeline):
    p = pipeline(2, upto="attractors")
    levels = p.levels
    g0, m0 = levels[0]
    assert len(m0.terminal) == 2 and len(m0.initial) == 2
    # chain-recurrent and terminal-class volumes shrink across refinements
    vol = [len(m.chain_recurrent) / g.cover.n_boxes for g, m in levels]
    assert all(a >= b for a, b in zip(vol, vol[1:]))
    term = [sum(len(m.classes[c]) for c in m.terminal) / g.cover.n_boxes for g, m in levels]
    assert all(a >= b for a, b in zip(term, term[1:]))
    # slabs at t = 1/4 and 3/4
    g, m = levels[-1]
    for c, t in zip(m.terminal, (0.25, 0.75)):
        tc = g.cover.centers(m.classes[c])[:, 2]
        assert np.abs(tc - t).max() <= 2 * g.cover.diameter


def test_trapping_sets_disjoint_and_symmetric_counts(pipeline):
    p = pipeline(2, upto="attractors")
    for certs in (p.attractors, p.repellers):
        assert len(certs) == 2
        a, b = (set(c.trapping.tolist()) for c in certs)
        assert not (a & b)
    assert len(p.repellers) == len(p.morse.initial)


def test_da_bump_column_drops_out_under_refinement(pipeline):
    p = pipeline(2, "da_suspension", upto="attractors")
    g, m = p.levels[-1]
    # at the base cover the repelling column is swallowed by box inflation
    assert len(m.terminal) == 2
    for cert in p.attractors:
        assert cert.certified
        i, j, _ = g.cover.unravel(cert.boxes)
        assert not np.any((i == 0) & (j == 0))
        assert len(set(zip(i.tolist(), j.tolist()))) < g.cover.resolution[0] ** 2
