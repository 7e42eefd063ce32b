import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confseg.conformal import (
    MAX_COMBINATION,
    CalibrationRecord,
    CombinationFunction,
    Nonconformity,
    ThresholdSet,
    attach_stats,
    build_sets,
    calibrate,
    conformal_quantile,
    conformal_rank,
    generalized_calibrate,
    generalized_sets,
    nonconformity,
    risk_control_lambda,
    singleton_values,
    thresholds_from_dict,
    thresholds_to_dict,
)
from confseg.errors import ConfigError, EmptyInputError, ShapeError
from confseg.grid import LabelMask, ScoreImage
from confseg.morphology import Metric, signed_distance_transform
from confseg.scores import TransformKind, TransformSpec

from oracles import quantile_sweep

NEG_INF = float("-inf")
POS_INF = float("inf")

stat_lists = st.lists(
    st.one_of(st.floats(-1e6, 1e6), st.just(NEG_INF)), min_size=1, max_size=50
)
alphas = st.floats(0.001, 0.999)


# --- nonconformity ------------------------------------------------------------

def test_nonconformity_center_pixel_distances():
    bits = np.zeros((3, 3), dtype=bool)
    bits[1, 1] = True
    truth = LabelMask(bits)
    dist = signed_distance_transform(truth, Metric.EUCLIDEAN)
    stats = nonconformity(dist, dist, truth)
    assert stats.tau == -0.5  # best background pixel sits half a pixel outside
    assert stats.gamma == -0.5  # the only foreground pixel sits half a pixel inside


def test_nonconformity_empty_sets():
    ones = LabelMask(np.ones((2, 2), dtype=bool))
    img = ScoreImage(np.array([[1.0, 2.0], [3.0, 4.0]]))
    stats = nonconformity(img, img, ones)
    assert stats.tau == NEG_INF
    assert stats.gamma == -1.0


def test_nonconformity_constant_image():
    truth = LabelMask(np.array([[1, 0], [1, 1]]))
    img = ScoreImage(np.full((2, 2), 3.25))
    assert nonconformity(img, img, truth).tau == 3.25


def test_nonconformity_shape_mismatch():
    with pytest.raises(ShapeError):
        nonconformity(
            ScoreImage(np.zeros((2, 2))),
            ScoreImage(np.zeros((2, 3))),
            LabelMask(np.zeros((2, 2), dtype=bool)),
        )


# --- quantile -------------------------------------------------------------------

def test_quantile_nine_values():
    assert conformal_quantile(list(range(1, 10)), 0.1) == 9


def test_quantile_small_n_is_infinite():
    assert conformal_quantile([1.0, 2.0, 3.0, 4.0], 0.1) == POS_INF


def test_quantile_neg_inf_entries():
    assert conformal_quantile([NEG_INF, NEG_INF, 0.0], 0.5) == NEG_INF


def test_quantile_ties_are_handled_by_order_statistic():
    stats = [2.0, 1.0, 1.0, 1.0, 3.0]
    # rank 5 of 6 -> the 5th smallest; duplicated values shift the rank cut
    assert conformal_quantile(stats, 0.2) == 3.0
    assert conformal_quantile(stats, 0.5) == quantile_sweep(stats, 0.5) == 1.0


def test_quantile_empty():
    with pytest.raises(EmptyInputError):
        conformal_quantile([], 0.1)


def test_quantile_alpha_range():
    with pytest.raises(ValueError):
        conformal_quantile([1.0], 0.0)


def test_rank_avoids_float_ceiling_artifacts():
    # (1 - 0.1) * 10 must round up to 9, not 10, despite 0.1 being
    # slightly above 1/10 in binary.
    assert conformal_rank(9, 0.1) == 9
    assert conformal_rank(200, 0.1) == 181
    assert conformal_rank(200, 0.02) == 197
    assert conformal_rank(200, 0.08) == 185


@settings(max_examples=300, deadline=None)
@given(stat_lists, alphas)
def test_quantile_matches_sweep_oracle(stats, alpha):
    assert conformal_quantile(stats, alpha) == quantile_sweep(stats, alpha)


@settings(max_examples=200, deadline=None)
@given(stat_lists, st.data())
def test_quantile_monotone_in_alpha(stats, data):
    a = data.draw(st.floats(0.01, 0.98))
    b = data.draw(st.floats(a, 0.99))
    # smaller alpha -> larger (more conservative) threshold
    assert conformal_quantile(stats, a) >= conformal_quantile(stats, b)


# --- calibrate -------------------------------------------------------------------

def _record(seed, shape=(6, 6)):
    rng = np.random.default_rng(seed)
    scores = ScoreImage(rng.standard_normal(shape))
    truth = LabelMask(rng.integers(0, 2, size=shape))
    return CalibrationRecord(scores=scores, truth=truth)


def test_calibrate_single_record_half_alpha():
    spec = TransformSpec(TransformKind.SIGMOID)
    record = attach_stats(_record(0), spec, spec)
    thresholds = calibrate([record], 0.5, 0.5)
    assert thresholds.lambda_inner == record.tau
    assert thresholds.lambda_outer == record.gamma
    assert thresholds.n == 1


def test_calibrate_vacuous_when_alpha_too_small():
    stats = [Nonconformity(float(i), float(-i)) for i in range(10)]
    thresholds = calibrate(stats, 0.001, 0.001, alpha_joint=0.001)
    assert thresholds.lambda_inner == POS_INF
    assert thresholds.lambda_outer == POS_INF
    assert thresholds.lambda_joint == POS_INF
    sets = build_sets(
        ScoreImage(np.zeros((2, 2))), ScoreImage(np.zeros((2, 2))), thresholds
    )
    assert not sets.inner.bits.any()
    assert sets.outer.bits.all()


def test_calibrate_requires_stats():
    with pytest.raises(ConfigError):
        calibrate([_record(1)], 0.1, 0.1)


def test_joint_threshold_dominates_marginals():
    rng = np.random.default_rng(7)
    for _ in range(30):
        n = int(rng.integers(3, 40))
        stats = [Nonconformity(float(t), float(g)) for t, g in rng.standard_normal((n, 2))]
        alpha = float(rng.uniform(0.05, 0.5))
        thresholds = calibrate(stats, alpha, alpha, alpha_joint=alpha)
        assert thresholds.lambda_joint >= thresholds.lambda_inner
        assert thresholds.lambda_joint >= thresholds.lambda_outer


# --- build_sets --------------------------------------------------------------------

def test_build_sets_boundary_pixel_excluded():
    fI = ScoreImage(np.array([[1.0, 2.0, 3.0]]))
    thresholds = ThresholdSet(0.1, 2.0, 0.1, -2.0, n=9)
    sets = build_sets(fI, fI, thresholds)
    assert sets.inner.bits.tolist() == [[False, False, True]]  # strict at 2.0
    assert sets.outer.bits.tolist() == [[False, True, True]]  # non-strict at -2.0


def test_build_sets_shared_scale_nesting():
    rng = np.random.default_rng(11)
    for _ in range(25):
        f = ScoreImage(rng.standard_normal((7, 7)) * 3)
        lam = float(rng.uniform(0, 2))
        thresholds = ThresholdSet(0.1, lam, 0.1, lam, n=5)
        sets = build_sets(f, f, thresholds)
        assert not (sets.inner.bits & ~sets.outer.bits).any()


def test_build_sets_joint_requires_lambda():
    thresholds = ThresholdSet(0.1, 0.0, 0.1, 0.0, n=5)
    img = ScoreImage(np.zeros((2, 2)))
    with pytest.raises(ConfigError):
        build_sets(img, img, thresholds, mode="joint")
    with pytest.raises(ConfigError):
        build_sets(img, img, thresholds, mode="bogus")


def test_coverage_event_equals_statistic_comparison():
    rng = np.random.default_rng(13)
    for _ in range(200):
        shape = (int(rng.integers(1, 8)), int(rng.integers(1, 8)))
        fI = ScoreImage(rng.standard_normal(shape))
        fO = ScoreImage(rng.standard_normal(shape))
        truth = LabelMask(rng.integers(0, 2, size=shape))
        lam_i = float(rng.standard_normal())
        lam_o = float(rng.standard_normal())
        sets = build_sets(fI, fO, ThresholdSet(0.1, lam_i, 0.1, lam_o, n=3))
        stats = nonconformity(fI, fO, truth)
        inner_ok = not (sets.inner.bits & ~truth.bits).any()
        outer_ok = not (truth.bits & ~sets.outer.bits).any()
        assert inner_ok == (stats.tau <= lam_i)
        assert outer_ok == (stats.gamma <= lam_o)


def test_larger_lambda_shrinks_inner_grows_outer():
    rng = np.random.default_rng(17)
    f = ScoreImage(rng.standard_normal((9, 9)))
    lambdas = sorted(rng.standard_normal(5))
    previous_inner, previous_outer = None, None
    for lam in lambdas:
        sets = build_sets(f, f, ThresholdSet(0.1, lam, 0.1, lam, n=3))
        if previous_inner is not None:
            assert not (sets.inner.bits & ~previous_inner).any()
            assert not (previous_outer & ~sets.outer.bits).any()
        previous_inner, previous_outer = sets.inner.bits, sets.outer.bits


# --- generalized combination functions ----------------------------------------------

def _fixed_example():
    values = np.arange(1.0, 17.0).reshape(4, 4)
    truth = np.zeros((4, 4), dtype=bool)
    truth[:2, :2] = True
    return ScoreImage(values), LabelMask(truth)


def test_generalized_max_matches_direct_formula():
    rng = np.random.default_rng(19)
    for _ in range(30):
        n = int(rng.integers(1, 20))
        shape = (5, 5)
        images = [ScoreImage(rng.standard_normal(shape)) for _ in range(n)]
        truths = [LabelMask(rng.integers(0, 2, size=shape)) for _ in range(n)]
        alpha = float(rng.uniform(0.05, 0.9))
        got = generalized_calibrate(images, truths, MAX_COMBINATION, "inner", alpha)
        direct = conformal_quantile(
            [
                float(img.values[t.bits].max()) if t.bits.any() else NEG_INF
                for img, t in zip(images, truths)
            ],
            alpha,
        )
        assert got == direct
        got_outer = generalized_calibrate(images, truths, MAX_COMBINATION, "outer", alpha)
        direct_outer = conformal_quantile(
            [
                float((-img.values[~t.bits]).max()) if (~t.bits).any() else NEG_INF
                for img, t in zip(images, truths)
            ],
            alpha,
        )
        assert got_outer == direct_outer


def test_generalized_inner_region_differs_from_tau_convention():
    # The generalized inner statistic aggregates over the foreground while
    # tau aggregates over the background; both are pinned here.
    image, truth = _fixed_example()
    generalized = generalized_calibrate([image], [truth], MAX_COMBINATION, "inner", 0.5)
    assert generalized == 6.0  # max over the 2x2 foreground block
    tau_route = calibrate(
        [nonconformity(image, image, truth)], 0.5, 0.5
    ).lambda_inner
    assert tau_route == 16.0  # max over the background
    assert generalized != tau_route


def test_generalized_sets_with_max_reduce_to_thresholding():
    image, _ = _fixed_example()
    sets = generalized_sets(image, image, MAX_COMBINATION, 6.0, -3.0)
    assert (sets.inner.bits == (image.values > 6.0)).all()
    assert (sets.outer.bits == (-image.values <= -3.0)).all()


def _clipped_sum_combination():
    return CombinationFunction(
        name="clipped-sum",
        combine=lambda region, values: (
            float(np.maximum(values[region], 0.0).sum()) if region.any() else NEG_INF
        ),
        pointwise=lambda values: np.maximum(values, 0.0),
    )


@pytest.mark.parametrize("function", [MAX_COMBINATION, _clipped_sum_combination()])
def test_combination_increasing_property(function):
    rng = np.random.default_rng(23)
    for _ in range(200):
        shape = (int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        values = rng.standard_normal(shape)
        region = rng.random(shape) < rng.uniform(0.1, 0.9)
        if not region.any():
            region[0, 0] = True
        rows, cols = np.nonzero(region)
        pick = int(rng.integers(rows.size))
        single = np.zeros(shape, dtype=bool)
        single[rows[pick], cols[pick]] = True
        assert function.combine(single, values) <= function.combine(region, values)


def test_singleton_values_consistent_with_combine():
    function = _clipped_sum_combination()
    slow = CombinationFunction(function.name, function.combine, pointwise=None)
    rng = np.random.default_rng(29)
    values = rng.standard_normal((4, 5))
    assert np.array_equal(singleton_values(function, values), singleton_values(slow, values))


# --- risk control ----------------------------------------------------------------------

def test_risk_control_examples():
    assert risk_control_lambda(list(range(1, 10)), 0.1) == 9
    assert risk_control_lambda([4.25], 0.6) == 4.25
    assert risk_control_lambda([1.0, 2.0], 0.05) == POS_INF


@settings(max_examples=300, deadline=None)
@given(stat_lists, alphas)
def test_risk_control_equals_quantile(stats, alpha):
    assert risk_control_lambda(stats, alpha) == conformal_quantile(stats, alpha)


# --- serialization ------------------------------------------------------------------------

def test_thresholds_json_round_trip():
    thresholds = ThresholdSet(0.02, POS_INF, 0.08, -1.5, n=42, alpha_joint=0.1, lambda_joint=NEG_INF)
    doc = thresholds_to_dict(thresholds)
    assert doc["lambda_inner"] == "inf"
    assert doc["lambda_joint"] == "-inf"
    assert thresholds_from_dict(doc) == thresholds


def test_thresholds_corrupt_document():
    with pytest.raises(ConfigError):
        thresholds_from_dict({"alpha1": 0.1})
