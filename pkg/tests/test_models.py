from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anosov_lab.errors import ClosedFormUnavailable, ConeViolation, DegenerateFixedPoint, ModelError, NonInvertibleRoof
from anosov_lab.models import (
    CAT_MAP,
    MappingTorusPoint,
    RoofDiscretization,
    ToralAutomorphism,
    apply,
    apply_inverse,
    cat_suspension,
    center_return_map,
    center_segment,
    classify_fixed_point,
    da_suspension,
    fixed_points,
    flow,
    format_point,
    parse_point,
    product_skew,
    splitting_at,
    verify_partial_hyperbolicity,
    wrap_half,
)

R = RoofDiscretization
unit = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)
points = st.builds(lambda a, b, c: MappingTorusPoint((a, b), c), unit, unit, unit)


def close(p, q, tol):
    d = wrap_half(p.as_array() - q.as_array())
    return np.abs(d).max() < tol


def families():
    roof = R.sinusoidal(0.05, 2)
    return [cat_suspension(roof), da_suspension(roof), product_skew(roof)]


# --- automorphism ---------------------------------------------------------


def test_cat_eigen_data():
    A = CAT_MAP
    assert A.lambda_u == pytest.approx((3 + math.sqrt(5)) / 2, abs=1e-12)
    v = A.v_u / A.v_u[0]
    assert v[1] == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-12)
    assert A.lambda_u * A.lambda_s == pytest.approx(A.det, abs=1e-12)
    M = A.matrix
    assert np.allclose(M @ A.v_u, A.lambda_u * A.v_u, atol=1e-12)
    assert np.allclose(M @ A.v_s, A.lambda_s * A.v_s, atol=1e-12)


@pytest.mark.parametrize("entries", [[[1, 1], [0, 1]], [[2, 0], [0, 1]], [[1, 0], [0, 1]]])
def test_non_hyperbolic_matrix_rejected(entries):
    with pytest.raises(ValueError):
        ToralAutomorphism(entries)


# --- flow -----------------------------------------------------------------


def test_flow_one_wrap():
    q = flow(MappingTorusPoint((0.1, 0.2), 0.7), 0.5)
    assert close(q, MappingTorusPoint((0.4, 0.3), 0.2), 1e-12)


@given(points)
def test_flow_zero_is_identity(p):
    assert close(flow(p, 0.0), p, 1e-15)


@settings(max_examples=100)
@given(points)
def test_flow_round_trip(p):
    assert close(flow(flow(p, 0.3), -0.3), p, 1e-12)


@settings(max_examples=200)
@given(points, st.floats(-3, 3), st.floats(-3, 3))
def test_flow_composition(p, s, r):
    assert close(flow(p, s + r), flow(flow(p, r), s), 1e-12)


@given(unit, unit, st.floats(1e-6, 0.0999))
def test_gluing_consistency(y1, y2, eps):
    q = flow(MappingTorusPoint((y1, y2), 1 - eps), 2 * eps)
    Ay = CAT_MAP.matrix @ np.array([y1, y2]) % 1.0
    assert close(q, MappingTorusPoint(tuple(Ay), eps), 1e-12)


def test_point_text_round_trip():
    p = MappingTorusPoint((0.125, 0.3), 0.75)
    text = format_point(p)
    assert text == "(0.125,0.3;0.75)"
    assert close(parse_point(text), p, 1e-15)


# --- discretized maps -----------------------------------------------------


def test_constant_roof_is_time_one_map():
    f = cat_suspension(R.constant(1.0))
    q = apply(f, MappingTorusPoint((0.1, 0.2), 0.5))
    assert close(q, MappingTorusPoint((0.4, 0.3), 0.5), 1e-12)


def test_sinusoidal_fixes_center_quarter():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    assert f.roof.tau(0.25) == pytest.approx(1.0, abs=1e-15)
    q = apply(f, MappingTorusPoint((0.3, 0.6), 0.25))
    Ay = CAT_MAP.matrix @ np.array([0.3, 0.6]) % 1.0
    assert close(q, MappingTorusPoint(tuple(Ay), 0.25), 1e-12)


def test_composition_identity_pointwise():
    f = cat_suspension(R.sinusoidal(0.05, 3))
    pts = np.random.default_rng(1).random((200, 3))
    expect = f.flow(pts, f.roof.tau(pts[:, 2]))
    assert np.abs(f.chart_difference(f.forward(pts), expect)).max() < 1e-12


def test_product_skew_has_no_monodromy():
    f = product_skew(R.sinusoidal(0.05, 2))
    pts = np.random.default_rng(2).random((100, 3))
    img = f.forward(pts)
    c = center_return_map(f.roof)
    assert np.allclose(img[:, 2], c(pts[:, 2]), atol=1e-12)
    assert np.allclose(img[:, :2], (pts[:, :2] @ CAT_MAP.matrix.T) % 1.0, atol=1e-12)


@pytest.mark.parametrize("f", families(), ids=lambda f: f.family)
def test_invertibility_every_family(f):
    pts = np.random.default_rng(3).random((1000, 3))
    back = f.backward(f.forward(pts))
    assert np.abs(f.chart_difference(back, pts)).max() < 1e-10
    fwd = f.forward(f.backward(pts))
    assert np.abs(f.chart_difference(fwd, pts)).max() < 1e-10


def test_apply_inverse_point_api():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    rng = np.random.default_rng(4)
    for _ in range(100):
        p = MappingTorusPoint.from_array(rng.random(3))
        assert close(apply_inverse(f, apply(f, p)), p, 1e-10)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_alpha_guard(k):
    limit = 1 / (2 * math.pi * k)
    R.sinusoidal(0.999 * limit, k)
    with pytest.raises(NonInvertibleRoof):
        R.sinusoidal(limit, k)


def test_piecewise_linear_roof_monotonicity_guard():
    R.piecewise_linear([(0.0, 0.0), (0.5, 0.2)])
    with pytest.raises(NonInvertibleRoof):
        R.piecewise_linear([(0.0, 0.0), (0.1, -0.5)])


# --- center return map ----------------------------------------------------


def test_fixed_points_k2():
    fps = fixed_points(center_return_map(R.sinusoidal(0.05, 2)))
    ts = [t for t, _ in fps]
    assert ts == pytest.approx([0.0, 0.25, 0.5, 0.75], abs=1e-12)
    kinds = [classify_fixed_point(m) for _, m in fps]
    assert kinds == ["repelling", "attracting", "repelling", "attracting"]
    assert fps[1][1] == pytest.approx(1 - 0.2 * math.pi, abs=1e-12)
    assert fps[0][1] == pytest.approx(1 + 0.2 * math.pi, abs=1e-12)


def test_fixed_points_k1():
    fps = fixed_points(center_return_map(R.sinusoidal(0.05, 1)))
    kinds = {round(t, 9): classify_fixed_point(m) for t, m in fps}
    assert kinds == {0.0: "repelling", 0.5: "attracting"}


def test_identity_center_map_is_degenerate():
    with pytest.raises(DegenerateFixedPoint):
        fixed_points(center_return_map(R.constant(1.0)))


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_fixed_point_count_matches_roof_frequency(k):
    fps = fixed_points(center_return_map(R.sinusoidal(0.03, k)))
    att = [t for t, m in fps if classify_fixed_point(m) == "attracting"]
    assert len(att) == k
    assert att == pytest.approx([(2 * i + 1) / (2 * k) for i in range(k)], abs=1e-12)


# --- splitting and cones --------------------------------------------------


@pytest.mark.parametrize("fam", [cat_suspension, product_skew])
def test_splitting_invariance(fam):
    f = fam(R.sinusoidal(0.05, 2))
    v_s, v_c, v_u = splitting_at(f)
    assert np.allclose(v_c, [0, 0, 1])
    pts = np.random.default_rng(5).random((100, 3))
    J = f.jacobian(pts)
    for v in (v_u, v_s):
        w = J @ v
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        cross = np.abs(w[:, 0] * v[1] - w[:, 1] * v[0]) + np.abs(w[:, 2])
        assert cross.max() < 1e-6


def test_splitting_unavailable_for_da():
    with pytest.raises(ClosedFormUnavailable):
        splitting_at(da_suspension(R.sinusoidal(0.05, 2)))


def test_cone_check_constant_roof():
    f = cat_suspension(R.constant(1.0))
    rep = verify_partial_hyperbolicity(f, cone_angle=0.3)
    assert rep.passed
    # worst vector of the cone grows a little less than the axis
    assert 2.4 < rep.min_unstable_growth <= CAT_MAP.lambda_u + 1e-9
    _, _, v_u = splitting_at(f)
    axis = np.linalg.norm(f.jacobian(np.random.default_rng(6).random((20, 3))) @ v_u, axis=1)
    assert axis == pytest.approx(np.full(20, CAT_MAP.lambda_u), rel=1e-6)


def test_cone_check_isometric_center():
    rep = verify_partial_hyperbolicity(product_skew(R.constant(1.0)), cone_angle=0.3)
    assert rep.passed
    assert rep.center_rate_range == pytest.approx((1.0, 1.0), abs=1e-9)


def test_cone_violation_inside_bump():
    # stable multiplier 1.5 at the origin: the stable cone is no longer contracted there
    f = da_suspension(R.constant(1.0))
    with pytest.raises(ConeViolation) as info:
        verify_partial_hyperbolicity(f, cone_angle=0.3, n_samples=2000)
    y = np.asarray(info.value.witness[:2])
    assert np.linalg.norm(wrap_half(y)) < 0.5


def test_strength_that_folds_is_rejected():
    with pytest.raises(ModelError):
        da_suspension(R.constant(1.0), bump_strength=4.0)


def test_da_origin_is_repelling():
    f = da_suspension(R.constant(1.0))
    J = f.base.jacobian(np.zeros((1, 2)))[0]
    assert np.all(np.abs(np.linalg.eigvals(J)) > 1)
    far = np.array([[0.5, 0.5]])
    assert np.allclose(f.base.lift(far) % 1.0, (far @ CAT_MAP.matrix.T) % 1.0, atol=1e-12)


# --- center segments ------------------------------------------------------


def test_center_segment_examples():
    p = MappingTorusPoint((0.1, 0.2), 0.0)
    seg = center_segment(p, 1.0, +1)
    assert close(seg.end, MappingTorusPoint((0.4, 0.3), 0.0), 1e-12)
    zero = center_segment(p, 0.0, +1)
    assert close(zero.end, p, 1e-15)
    q = center_segment(MappingTorusPoint((0.1, 0.2), 0.7), 1.0, +1).at(0.5)
    assert close(q, MappingTorusPoint((0.4, 0.3), 0.2), 1e-12)
    with pytest.raises(ValueError):
        center_segment(p, -0.1, +1)
