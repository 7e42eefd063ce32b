"""Confidence sets for box unions.

The targets for a truth mask are the union of the largest inscribed
boxes and the union of the smallest enclosing boxes of its 4-connected
components; by construction inner_union <= truth <= outer_union as pixel
sets. Treating those unions as the masks to cover, the standard
split-conformal machinery applied to the signed chessboard box scores
gives the chain

    inner set <= inner_union <= truth <= outer_union <= outer set

with marginal probability >= 1 - alpha per side. Concretely the inner
statistic is the maximum of the inner box score over pixels outside the
inner union, and the outer statistic is the maximum of the negated outer
box score over pixels of the outer union.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .conformal import (
    CalibrationRecord,
    ConfidenceSets,
    ThresholdSet,
    build_sets,
    conformal_quantile,
)
from .grid import LabelMask, ScoreImage
from .morphology import (
    BoxSet,
    bounding_box_union,
    box_set_distance,
    inscribed_box_union,
)
from .scores import TransformSpec, predicted_mask

NEG_INF = float("-inf")


@dataclass(frozen=True)
class BoxTargets:
    """Rasterized box unions of a truth mask, plus the boxes themselves."""

    inner_union: LabelMask
    outer_union: LabelMask
    inner_boxes: BoxSet
    outer_boxes: BoxSet


def box_targets(truth: LabelMask) -> BoxTargets:
    """Per-component inscribed and enclosing boxes, 4-connectivity, unioned."""
    inner_boxes = inscribed_box_union(truth)
    outer_boxes = bounding_box_union(truth)
    return BoxTargets(
        inner_union=inner_boxes.rasterize(truth.dims),
        outer_union=outer_boxes.rasterize(truth.dims),
        inner_boxes=inner_boxes,
        outer_boxes=outer_boxes,
    )


def box_score_images(scores: ScoreImage, spec: TransformSpec | None = None) -> tuple[ScoreImage, ScoreImage]:
    """Signed chessboard distances to the predicted inner/outer box unions."""
    mask = predicted_mask(scores, spec)
    return (
        box_set_distance(inscribed_box_union(mask), mask.dims),
        box_set_distance(bounding_box_union(mask), mask.dims),
    )


def box_statistics(
    inner_score: ScoreImage, outer_score: ScoreImage, targets: BoxTargets
) -> tuple[float, float]:
    """(tau, gamma) against the box-union targets; empty regions give -inf."""
    outside_inner = ~targets.inner_union.bits
    tau = float(inner_score.values[outside_inner].max()) if outside_inner.any() else NEG_INF
    on_outer = targets.outer_union.bits
    gamma = float((-outer_score.values[on_outer]).max()) if on_outer.any() else NEG_INF
    return tau, gamma


def bbox_calibrate(
    records: Iterable[CalibrationRecord],
    spec: TransformSpec | None = None,
    alpha1: float = 0.1,
    alpha2: float = 0.1,
) -> ThresholdSet:
    """Calibrate box-score thresholds against the truth box unions."""
    taus, gammas = [], []
    for record in records:
        inner_score, outer_score = box_score_images(record.scores, spec)
        tau, gamma = box_statistics(inner_score, outer_score, box_targets(record.truth))
        taus.append(tau)
        gammas.append(gamma)
    return ThresholdSet(
        alpha1=alpha1,
        lambda_inner=conformal_quantile(taus, alpha1),
        alpha2=alpha2,
        lambda_outer=conformal_quantile(gammas, alpha2),
        n=len(taus),
    )


def bbox_sets(
    raw_scores: ScoreImage,
    thresholds: ThresholdSet,
    spec: TransformSpec | None = None,
) -> ConfidenceSets:
    """inner = {box inner score > lambda_inner}, outer = {-box outer score <= lambda_outer}."""
    inner_score, outer_score = box_score_images(raw_scores, spec)
    return build_sets(inner_score, outer_score, thresholds, mode="marginal")
