import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from confseg.errors import ConfigError
from confseg.grid import ScoreImage
from confseg.morphology import Metric, bounding_box_union, signed_distance_transform
from confseg.scores import (
    TransformKind,
    TransformSpec,
    apply_transform,
    predicted_mask,
    sigmoid_transform,
)


def test_sigmoid_at_zero():
    img = sigmoid_transform(ScoreImage(np.zeros((1, 1))))
    assert img.values[0, 0] == 0.5


@given(st.floats(-50, 50))
def test_sigmoid_symmetry(x):
    img = sigmoid_transform(ScoreImage(np.array([[x, -x]])))
    assert img.values[0, 0] == pytest.approx(1.0 - img.values[0, 1], abs=1e-15)


def test_sigmoid_saturates_without_overflow():
    img = sigmoid_transform(ScoreImage(np.array([[-1e4, -10.0, 10.0, 1e4]])))
    values = img.values[0]
    assert (np.diff(values) >= 0).all()
    assert 0.0 <= values[0] < values[-1] <= 1.0
    assert np.isfinite(values).all()


def test_predicted_mask_threshold_rule():
    scores = ScoreImage(np.array([[-1.0, 0.0, 2.0]]))
    assert predicted_mask(scores).bits.tolist() == [[False, False, True]]


def test_predicted_mask_all_negative_empty():
    scores = ScoreImage(np.full((2, 3), -4.0))
    assert not predicted_mask(scores).bits.any()


def test_predicted_mask_zero_threshold_all_ones():
    spec = TransformSpec(TransformKind.SIGMOID, mask_threshold=0.0)
    scores = ScoreImage(np.array([[-30.0, 0.0, 30.0]]))
    assert predicted_mask(scores, spec).bits.all()


def test_predicted_mask_equals_raw_sign_rule():
    rng = np.random.default_rng(5)
    logits = rng.standard_normal((8, 8)) * 4
    mask = predicted_mask(ScoreImage(logits))
    assert (mask.bits == (logits > 0)).all()


def test_mask_threshold_must_be_finite():
    with pytest.raises(ConfigError):
        TransformSpec(TransformKind.SIGMOID, mask_threshold=float("inf"))


def test_identity_transform_returns_input():
    img = ScoreImage(np.arange(6, dtype=float).reshape(2, 3))
    assert apply_transform(img, TransformSpec(TransformKind.IDENTITY)) == img


def test_signed_distance_transform_composition():
    # Logits whose predicted mask is the center pixel of a 3x3 grid.
    logits = np.full((3, 3), -5.0)
    logits[1, 1] = 5.0
    spec = TransformSpec(TransformKind.SIGNED_DISTANCE, metric=Metric.EUCLIDEAN)
    got = apply_transform(ScoreImage(logits), spec)
    expect = signed_distance_transform(predicted_mask(ScoreImage(logits)), Metric.EUCLIDEAN)
    assert got == expect
    assert got.values[1, 1] == 0.5
    assert got.values[0, 0] == -np.sqrt(1.25)


def test_empty_predicted_mask_falls_through_to_sentinel():
    logits = ScoreImage(np.full((4, 4), -9.0))
    for kind in (TransformKind.SIGNED_DISTANCE, TransformKind.BBOX_INNER, TransformKind.BBOX_OUTER):
        values = apply_transform(logits, TransformSpec(kind)).values
        assert (values == -8.0).all()


def _sample_logits(seed, shape=(10, 12)):
    rng = np.random.default_rng(seed)
    blob = np.zeros(shape)
    blob[2:7, 3:9] = 6.0
    return ScoreImage(blob + rng.standard_normal(shape) * 2 - 3.0)


def test_bbox_combined_case_split():
    for seed in range(8):
        scores = _sample_logits(seed)
        combined = apply_transform(scores, TransformSpec(TransformKind.BBOX_COMBINED)).values
        inner = apply_transform(scores, TransformSpec(TransformKind.BBOX_INNER)).values
        outer = apply_transform(scores, TransformSpec(TransformKind.BBOX_OUTER)).values
        on_outer = bounding_box_union(predicted_mask(scores)).rasterize(scores.dims).bits
        assert (combined[on_outer] == np.maximum(inner, 0.0)[on_outer]).all()
        assert (combined[~on_outer] == outer[~on_outer]).all()


def test_bbox_combined_on_one_solid_box():
    logits = np.full((6, 8), -7.0)
    logits[2:5, 1:6] = 7.0
    scores = ScoreImage(logits)
    combined = apply_transform(scores, TransformSpec(TransformKind.BBOX_COMBINED)).values
    inner = apply_transform(scores, TransformSpec(TransformKind.BBOX_INNER)).values
    outer = apply_transform(scores, TransformSpec(TransformKind.BBOX_OUTER)).values
    box = predicted_mask(scores).bits
    # For a solid box the inner and outer unions coincide, so off the box the
    # combined score is the shared signed distance, and on it the inner depth.
    assert np.array_equal(inner, outer)
    assert (combined[~box] == outer[~box]).all()
    assert (combined[box] == inner[box]).all()


def test_box_sandwich_lifted_through_predicted_mask():
    for seed in range(10, 16):
        scores = _sample_logits(seed)
        mask = predicted_mask(scores)
        inner_union = apply_transform(scores, TransformSpec(TransformKind.BBOX_INNER)).values > 0
        outer_vals = apply_transform(scores, TransformSpec(TransformKind.BBOX_OUTER)).values
        assert not (inner_union & ~mask.bits).any()
        assert not (mask.bits & ~(outer_vals > 0)).any()


def test_apply_transform_is_pure():
    scores = _sample_logits(99)
    spec = TransformSpec(TransformKind.BBOX_COMBINED)
    first = apply_transform(scores, spec)
    second = apply_transform(scores, spec)
    assert np.array_equal(first.values, second.values)


def test_transform_spec_json_round_trip():
    spec = TransformSpec(TransformKind.SIGNED_DISTANCE, Metric.CHESSBOARD, 0.25)
    doc = spec.to_dict()
    assert doc == {"kind": "signed-distance", "metric": "chessboard", "mask_threshold": 0.25}
    assert TransformSpec.from_dict(doc) == spec
    with pytest.raises(ConfigError):
        TransformSpec.from_dict({"kind": "nope"})
