from __future__ import annotations

import numpy as np
import pytest

from anosov_lab.boxes import build_cover
from anosov_lab.errors import InconsistentPipeline, PreconditionViolation
from anosov_lab.laminations import A_CLOSED, B_CLOSED, LaminationApprox, gap_decomposition, uniform_samples
from anosov_lab.models import MappingTorusPoint, RoofDiscretization, cat_suspension, wrap_half
from anosov_lab.sections import (
    CircleField,
    branch_discrepancy,
    build_rho,
    build_theta,
    extract_section,
    global_section_verdict,
    schwartzman_lambda,
    smooth_mu,
    winding_check,
    winding_numbers,
)

R = RoofDiscretization
N = (8, 8, 32)


def layer(f, cov, k):
    i, j = np.meshgrid(np.arange(cov.resolution[0]), np.arange(cov.resolution[1]), indexing="ij")
    b = cov.index(i.ravel(), j.ravel(), np.full(i.size, k))
    c = cov.centers(b)
    return LaminationApprox(np.sort(b), MappingTorusPoint.from_array(c[0]), 0, cov, f, points=c)


@pytest.fixture(scope="module")
def two_layers():
    """Gap decomposition for the fiber layers at t = 1/4 and t = 3/4 on an (8, 8, 32) cover."""
    f = cat_suspension(R.sinusoidal(0.05, 2))
    cov = build_cover(N)
    A, B = layer(f, cov, 8), layer(f, cov, 24)
    return f, cov, gap_decomposition(A, B, n_table=20)


def column(cov, values, i=3, j=5):
    return values[cov.index(np.full(32, i), np.full(32, j), np.arange(32))]


# --- theta and rho --------------------------------------------------------


def test_theta_zero_and_one_on_closed_sets(two_layers):
    _, cov, gd = two_layers
    theta = build_theta(gd)
    assert np.all(theta[gd.boxes[gd.labels == A_CLOSED]] == 0.0)
    assert np.all(theta[gd.boxes[gd.labels == B_CLOSED]] == 1.0)


def test_theta_half_when_equidistant(two_layers):
    _, cov, gd = two_layers
    col = column(cov, build_theta(gd))
    # layers 16 and 0 sit halfway between the two closed layers
    assert col[16] == pytest.approx(0.5, abs=1e-12)
    assert col[0] == pytest.approx(0.5, abs=1e-12)


def test_theta_monotone_between_layers(two_layers):
    _, cov, gd = two_layers
    col = column(cov, build_theta(gd))
    assert np.all(np.diff(col[8:25]) >= -1e-12)
    assert col[8] == 0.0 and col[24] == 1.0


def test_rho_branches_agree_and_wind_once(two_layers):
    f, cov, gd = two_layers
    theta = build_theta(gd)
    assert branch_discrepancy(theta, gd) == pytest.approx(0.0, abs=1e-12)
    rho = build_rho(theta, gd)
    assert np.all(rho.grid[gd.boxes[gd.labels == A_CLOSED]] == 0.0)
    assert np.all(rho.grid[gd.boxes[gd.labels == B_CLOSED]] == 0.5)
    samples = uniform_samples(50, 1)
    assert np.all(winding_numbers(rho, samples) == 1)
    assert winding_check(f, rho, 2.0, samples) > 1.0


def test_theta_needs_full_partition(two_layers):
    _, cov, gd = two_layers
    broken = type(gd)(gd.cover, gd.labels[:-1], gd.ambiguous[:-1], gd.L_measured, gd.S_table, 0,
                      boxes=gd.boxes[:-1], f=gd.f)
    with pytest.raises(PreconditionViolation):
        build_theta(broken)


# --- winding --------------------------------------------------------------


def test_constant_field_has_no_winding():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    cov = build_cover(N)
    c = CircleField.constant(f, cov, 0.3)
    assert winding_check(f, c, 2.0, uniform_samples(20)) == 0.0


@pytest.mark.parametrize("four_L", [0.5, 2.0, 3.7])
def test_roof_coordinate_winds_by_the_window_length(four_L):
    f = cat_suspension(R.sinusoidal(0.05, 2))
    cov = build_cover(N)
    t = CircleField.from_function(f, cov, lambda p: p[:, 2])
    assert winding_check(f, t, four_L, uniform_samples(20)) == pytest.approx(four_L, abs=1e-9)


# --- smoothing ------------------------------------------------------------


def test_smoothing_a_constant_is_a_no_op():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    cov = build_cover(N)
    c = CircleField.constant(f, cov, 0.3)
    mu = smooth_mu(c, 4 * cov.diameter)
    assert np.abs(wrap_half(mu.evaluate(uniform_samples(100)) - 0.3)).max() < 1e-12


def test_smoothing_width_guard():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    cov = build_cover(N)
    with pytest.raises(PreconditionViolation):
        smooth_mu(CircleField.constant(f, cov, 0.3), cov.diameter)


def test_smoothing_keeps_the_winding(two_layers):
    f, cov, gd = two_layers
    mu = smooth_mu(build_rho(build_theta(gd), gd), 4 * cov.diameter)
    assert mu.lift_cache["drift"] < 0.1
    assert np.all(winding_numbers(mu, uniform_samples(50, 2)) == 1)


# --- averaging ------------------------------------------------------------


@pytest.mark.parametrize("L", [0.3, 0.5])
def test_average_of_roof_coordinate_shifts_by_half_window(L):
    f = cat_suspension(R.sinusoidal(0.05, 2))
    cov = build_cover(N)
    t = CircleField.from_function(f, cov, lambda p: p[:, 2])
    lam = schwartzman_lambda(t, f, 4 * L)
    pts = uniform_samples(50, 3)
    want = (pts[:, 2] + 2 * L) % 1.0
    assert np.abs(wrap_half(lam.evaluate(pts) - want)).max() < 1e-9


def test_average_of_constant_is_constant():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    cov = build_cover(N)
    lam = schwartzman_lambda(CircleField.constant(f, cov, 0.7), f, 2.0)
    assert np.abs(wrap_half(lam.evaluate(uniform_samples(30)) - 0.7)).max() < 1e-12
    with pytest.raises(ValueError):
        schwartzman_lambda(CircleField.constant(f, cov, 0.7), f, 0.0)


# --- sections -------------------------------------------------------------


def test_roof_coordinate_section_is_the_bottom_layer():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    cov = build_cover(N)
    t = CircleField.from_function(f, cov, lambda p: p[:, 2])
    sec = extract_section(t, f, n_samples=200)
    _, _, k = cov.unravel(sec.boxes)
    # the zero of t sits on the face between the top and bottom layers
    assert set(k.tolist()) <= {0, cov.resolution[2] - 1}
    assert len(sec.boxes) == cov.resolution[0] * cov.resolution[1]
    assert np.all(sec.crossing_counts == 1) and sec.hit_fraction == 1.0
    assert sec.decreasing_crossings == 0


def test_non_winding_field_gives_no_section():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    cov = build_cover(N)
    sec = extract_section(CircleField.constant(f, cov, 0.4), f, n_samples=100)
    assert len(sec.boxes) == 0 and sec.hit_fraction == 0.0
    bounds = {"four_L": 2.0, "min_winding_increment": 0.0, "min_derivative": 0.0,
              "derivative_identity_gap": 0.0, "section_hit_fraction": 0.0, "decreasing_crossings": 0}
    v = global_section_verdict(f, 2, bounds, sec)
    assert v.kind == "UnresolvedAtResolution" and "winding_gt_1" in v.advice
    with pytest.raises(InconsistentPipeline):
        global_section_verdict(f, 2, bounds, sec, refinement_exhausted=True)


def test_verdict_rules():
    f = cat_suspension(R.sinusoidal(0.05, 2))
    good = {"four_L": 2.0, "min_winding_increment": 1.9, "min_derivative": 0.95,
            "derivative_identity_gap": 1e-9, "section_hit_fraction": 1.0, "decreasing_crossings": 0}
    assert global_section_verdict(f, 1, good).kind == "UniqueLamination"
    assert global_section_verdict(f, 0, good).kind == "UnresolvedAtResolution"
    assert global_section_verdict(f, 2, good, resolved=False).kind == "UnresolvedAtResolution"
    cov = build_cover(N)
    sec = extract_section(CircleField.from_function(f, cov, lambda p: p[:, 2]), f, n_samples=50)
    assert global_section_verdict(f, 2, good, sec).kind == "SectionCertified"
    # derivative exactly at 1/4L is not enough
    tight = dict(good, min_derivative=0.5)
    assert global_section_verdict(f, 2, tight, sec).kind == "UnresolvedAtResolution"


# --- on the default pipeline ----------------------------------------------


def test_k2_section_chain(pipeline):
    p = pipeline(2)
    sec = p.report["section"]
    assert sec["branch_discrepancy"] == pytest.approx(0.0, abs=1e-12)
    assert sec["winding_numbers_equal"] and sec["winding_numbers"] == [1]
    assert p.bounds["smoothing_drift"] < 0.05
    assert p.bounds["min_winding_increment_mu"] > 1.0


def test_k1_is_unique_lamination(pipeline):
    p = pipeline(1)
    assert p.verdict.kind == "UniqueLamination"
    assert p.report["gaps"] == {"skipped": "fewer than two resolved laminations"}
