"""Conformal inner/outer confidence sets for image segmentation masks."""

from .errors import (
    ConfigError,
    ConfsegError,
    DataError,
    EmptyInputError,
    FormatError,
    ShapeError,
)
from .grid import (
    GridDims,
    LabelMask,
    Pixel,
    ScoreImage,
    complement,
    count_ones,
    pixels_where,
)
from .fileio import read_mask, read_score_image, write_mask, write_score_image
from .morphology import (
    BoundaryPointSet,
    Box,
    BoxSet,
    Metric,
    bounding_box_union,
    box_set_distance,
    connected_components,
    inscribed_box_union,
    largest_inscribed_box,
    marching_squares_boundary,
    min_bounding_box,
    signed_distance_transform,
)
from .scores import (
    TransformKind,
    TransformSpec,
    apply_transform,
    predicted_mask,
    sigmoid_transform,
)
from .conformal import (
    CalibrationRecord,
    CombinationFunction,
    ConfidenceSets,
    Nonconformity,
    ThresholdSet,
    attach_stats,
    build_sets,
    calibrate,
    conformal_quantile,
    generalized_calibrate,
    generalized_sets,
    nonconformity,
    register_combination,
    risk_control_lambda,
)
from .bbox import BoxTargets, bbox_calibrate, bbox_sets, box_targets
from .harness import (
    SynthConfig,
    ValidationConfig,
    diameter,
    efficiency_metrics,
    evaluate_coverage,
    run_validation,
    synth_generate,
)

__version__ = "0.1.0"
