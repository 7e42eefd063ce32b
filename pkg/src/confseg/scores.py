"""Score transformations and the predicted mask.

Raw model scores are per-pixel logits. The predicted mask thresholds the
sigmoid of the logits (the two-class softmax of a single logit channel
reduces to the logistic sigmoid). Transformations turn the raw scores
into the images that calibration consumes: the sigmoid itself, the
signed distance to the predicted mask, or signed chessboard distances to
the inscribed/enclosing box unions of the predicted mask's components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .grid import LabelMask, ScoreImage
from .morphology import (
    Metric,
    bounding_box_union,
    box_set_distance,
    inscribed_box_union,
)
from .morphology import signed_distance_transform as _sdt


class TransformKind(Enum):
    IDENTITY = "identity"
    SIGMOID = "sigmoid"
    SIGNED_DISTANCE = "signed-distance"
    BBOX_INNER = "bbox-inner"
    BBOX_OUTER = "bbox-outer"
    BBOX_COMBINED = "bbox-combined"


@dataclass(frozen=True)
class TransformSpec:
    """A score transformation plus the threshold that derives the predicted mask.

    `metric` only applies to SIGNED_DISTANCE; the box transforms always
    use the chessboard metric. `mask_threshold` is on the sigmoid scale.
    """

    kind: TransformKind
    metric: Metric = Metric.EUCLIDEAN
    mask_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not math.isfinite(self.mask_threshold):
            raise ConfigError("mask_threshold must be finite")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "metric": self.metric.value,
            "mask_threshold": self.mask_threshold,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "TransformSpec":
        try:
            kind = TransformKind(doc["kind"])
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad transform kind in {doc!r}") from exc
        try:
            metric = Metric(doc.get("metric", Metric.EUCLIDEAN.value))
        except ValueError as exc:
            raise ConfigError(f"bad metric in {doc!r}") from exc
        return cls(kind=kind, metric=metric, mask_threshold=float(doc.get("mask_threshold", 0.5)))


def sigmoid_transform(scores: ScoreImage) -> ScoreImage:
    """Elementwise logistic 1 / (1 + exp(-x)), saturating without overflow."""
    return ScoreImage(expit(scores.values))


def predicted_mask(scores: ScoreImage, spec: TransformSpec | None = None) -> LabelMask:
    """Pixels whose sigmoid score strictly exceeds the mask threshold."""
    threshold = 0.5 if spec is None else spec.mask_threshold
    return LabelMask(expit(scores.values) > threshold)


def apply_transform(scores: ScoreImage, spec: TransformSpec) -> ScoreImage:
    """Produce the transformed score image for one side of the calibration."""
    if spec.kind is TransformKind.IDENTITY:
        return scores
    if spec.kind is TransformKind.SIGMOID:
        return sigmoid_transform(scores)

    mask = predicted_mask(scores, spec)
    if spec.kind is TransformKind.SIGNED_DISTANCE:
        return _sdt(mask, spec.metric)
    if spec.kind is TransformKind.BBOX_INNER:
        return box_set_distance(inscribed_box_union(mask), mask.dims)
    if spec.kind is TransformKind.BBOX_OUTER:
        return box_set_distance(bounding_box_union(mask), mask.dims)
    if spec.kind is TransformKind.BBOX_COMBINED:
        outer_boxes = bounding_box_union(mask)
        inner_values = box_set_distance(inscribed_box_union(mask), mask.dims).values
        outer_values = box_set_distance(outer_boxes, mask.dims).values
        on_outer = outer_boxes.rasterize(mask.dims).bits
        return ScoreImage(np.where(on_outer, np.maximum(inner_values, 0.0), outer_values))
    raise ValueError(f"unknown transform kind {spec.kind!r}")
