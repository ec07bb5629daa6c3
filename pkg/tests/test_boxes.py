from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anosov_lab.boxes import build_cover, face_adjacency, image_boxes, shell
from anosov_lab.errors import ResolutionTooCoarse
from anosov_lab.models import CAT_MAP, RoofDiscretization, cat_suspension, da_suspension, identity_stub

R = RoofDiscretization


def test_cover_sizes():
    assert build_cover((64, 64, 256)).n_boxes == 1_048_576
    assert build_cover((4, 4, 4)).n_boxes == 64
    with pytest.raises(ResolutionTooCoarse):
        build_cover((3, 4, 4))


@given(st.integers(4, 40), st.integers(4, 40), st.integers(4, 80), st.data())
def test_index_round_trip(n1, n2, nt, data):
    cov = build_cover((n1, n2, nt))
    idx = data.draw(st.integers(0, cov.n_boxes - 1))
    i, j, k = cov.unravel(idx)
    assert cov.index(i, j, k) == idx
    assert cov.box_of(cov.centers([idx]))[0] == idx


def test_boxes_tile_half_open():
    cov = build_cover((4, 4, 4))
    # a point on a shared face belongs to the box on its upper side
    assert cov.unravel(cov.box_of([[0.25, 0.0, 0.0]])[0]) == (1, 0, 0)
    pts = np.random.default_rng(0).random((5000, 3))
    counts = np.bincount(cov.box_of(pts), minlength=64)
    assert counts.sum() == 5000 and counts.min() > 0


def test_top_neighbours_go_through_gluing():
    f = cat_suspension(R.constant(1.0))
    cov = build_cover((4, 4, 4))
    top = cov.index(1, 0, 3)
    a, b = face_adjacency(f, cov)
    up = b[(a == top)]
    i, j, k = cov.unravel(up)
    across = set(zip(i[k == 0].tolist(), j[k == 0].tolist()))
    # the top face y in [1/4,1/2) x [0,1/4) is glued to its image under A at t=0
    # (closed face, so cells touching it along an edge or corner count too)
    g = np.linspace(0.0, 0.25, 41)
    face = np.stack(np.meshgrid(g + 0.25, g), axis=-1).reshape(-1, 2)
    glued = face @ CAT_MAP.matrix.T
    cells = set()
    for dx in (-1e-9, 1e-9):
        for dy in (-1e-9, 1e-9):
            c = np.floor(((glued + [dx, dy]) % 1.0) * 4).astype(int)
            cells |= set(map(tuple, c.tolist()))
    assert cells <= across
    # the enclosure is conservative, but never by more than one cell
    gl = glued % 1.0
    for ci, cj in across:
        c = (np.array([ci, cj]) + 0.5) / 4
        d = np.abs((gl - c + 0.5) % 1.0 - 0.5).max(axis=1)
        assert d.min() <= 0.125 + 0.25 + 1e-9


def test_face_adjacency_symmetric_and_six_regular_in_the_interior():
    f = cat_suspension(R.constant(1.0))
    cov = build_cover((8, 8, 8))
    a, b = face_adjacency(f, cov)
    pairs = set(zip(a.tolist(), b.tolist()))
    assert all((y, x) in pairs for x, y in pairs)
    deg = np.bincount(a, minlength=cov.n_boxes)
    _, _, k = cov.unravel(np.arange(cov.n_boxes))
    assert np.all(deg[(k > 0) & (k < 7)] == 6)


def test_shell_contains_box_and_neighbours():
    f = cat_suspension(R.constant(1.0))
    cov = build_cover((8, 8, 8))
    b = cov.index(3, 3, 3)
    sh = shell(f, cov, [b])
    assert len(sh) == 27 and b in sh


def test_identity_stub_maps_boxes_to_themselves_plus_shell():
    f = identity_stub()
    cov = build_cover((6, 6, 6))
    b = cov.index(2, 3, 2)
    src, tgt = image_boxes(f, cov, [b])
    assert b in tgt
    assert set(tgt.tolist()) <= set(shell(f, cov, [b]).tolist())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_enclosure_soundness_random_points(seed):
    rng = np.random.default_rng(seed)
    for f in (cat_suspension(R.sinusoidal(0.05, 2)), da_suspension(R.sinusoidal(0.05, 2))):
        cov = build_cover((8, 8, 16))
        pts = rng.random((40, 3))
        src_box = cov.box_of(pts)
        img = cov.box_of(f.forward(pts))
        for s, t in zip(src_box, img):
            _, tgt = image_boxes(f, cov, [s])
            assert t in tgt
