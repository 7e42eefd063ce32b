"""Split-conformal calibration of inner and outer confidence sets.

Given exchangeable (score image, truth mask) pairs and transformed score
images fI, fO, each calibration image contributes two nonconformity
statistics:

    tau   = max of fI over the background pixels {truth == 0}
    gamma = max of -fO over the foreground pixels {truth == 1}

with the maximum over an empty pixel set defined as -inf. Thresholds are
split-conformal quantiles of these statistics: with n statistics and
level alpha, the threshold is the k-th smallest value where
k = ceil((1 - alpha) * (n + 1)), or +inf when k > n. Confidence sets for
a new image are then

    inner = {v: fI(v) >  lambda_inner}   (contained in the truth
                                          with probability >= 1 - alpha1)
    outer = {v: -fO(v) <= lambda_outer}  (contains the truth
                                          with probability >= 1 - alpha2)

Joint coverage comes either from splitting alpha across the two sides or
from a single threshold on max(tau, gamma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyInputError, ShapeError
from .grid import LabelMask, ScoreImage, same_dims
from .scores import TransformSpec, apply_transform

NEG_INF = float("-inf")
POS_INF = float("inf")


@dataclass(frozen=True)
class Nonconformity:
    """Per-image statistics; -inf marks a statistic over an empty pixel set."""

    tau: float
    gamma: float


@dataclass(frozen=True)
class CalibrationRecord:
    """One (scores, truth) pair, optionally with cached statistics."""

    scores: ScoreImage
    truth: LabelMask
    tau: float | None = None
    gamma: float | None = None


def attach_stats(
    record: CalibrationRecord, spec_inner: TransformSpec, spec_outer: TransformSpec
) -> CalibrationRecord:
    """Return a copy of the record with tau/gamma computed for a transform pair."""
    stats = nonconformity(
        apply_transform(record.scores, spec_inner),
        apply_transform(record.scores, spec_outer),
        record.truth,
    )
    return replace(record, tau=stats.tau, gamma=stats.gamma)


def _region_max(values: np.ndarray, region: np.ndarray) -> float:
    return float(values[region].max()) if region.any() else NEG_INF


def nonconformity(fI_img: ScoreImage, fO_img: ScoreImage, truth: LabelMask) -> Nonconformity:
    """Compute (tau, gamma) for one calibration image.

    Raises ShapeError unless all three inputs share dims.
    """
    same_dims(fI_img, fO_img, truth)
    return Nonconformity(
        tau=_region_max(fI_img.values, ~truth.bits),
        gamma=_region_max(-fO_img.values, truth.bits),
    )


def conformal_rank(n: int, alpha: float) -> int:
    """k = ceil((1 - alpha) * (n + 1)), evaluated in exact rational arithmetic.

    Floating-point ceil((1-alpha)*(n+1)) can land on the wrong integer
    (e.g. alpha=0.1, n=9 must give 9, not 10), so the product is formed
    from the exact binary value of alpha.
    """
    return math.ceil((1 - Fraction(alpha)) * (n + 1))


def conformal_quantile(stats: Sequence[float], alpha: float) -> float:
    """Split-conformal threshold: the k-th smallest statistic, or +inf.

    Parameters
    ----------
    stats : sequence of float
        Calibration statistics; -inf entries are allowed and sort below
        every real.
    alpha : float in (0, 1)
        Miscoverage level.

    Returns
    -------
    float
        The k-th smallest value with k = ceil((1-alpha)(n+1)), which is
        exactly inf{lambda : #(stats <= lambda) >= k}; +inf when k > n.
    """
    n = len(stats)
    if n == 0:
        raise EmptyInputError("no calibration statistics")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    k = conformal_rank(n, alpha)
    if k > n:
        return POS_INF
    return float(np.sort(np.asarray(stats, dtype=np.float64))[k - 1])


@dataclass(frozen=True)
class ThresholdSet:
    """Calibrated thresholds with the levels and sample size that produced them."""

    alpha1: float
    lambda_inner: float
    alpha2: float
    lambda_outer: float
    n: int
    alpha_joint: float | None = None
    lambda_joint: float | None = None


def calibrate(
    records: Iterable[CalibrationRecord | Nonconformity],
    alpha1: float,
    alpha2: float,
    alpha_joint: float | None = None,
) -> ThresholdSet:
    """Quantile the cached statistics of the records.

    Accepts CalibrationRecords with attached stats or bare Nonconformity
    values. When alpha_joint is given, a single joint threshold is also
    computed from max(tau, gamma).
    """
    taus, gammas = [], []
    for record in records:
        if record.tau is None or record.gamma is None:
            raise ConfigError("record has no cached statistics; attach_stats first")
        taus.append(record.tau)
        gammas.append(record.gamma)
    lambda_joint = None
    if alpha_joint is not None:
        lambda_joint = conformal_quantile(
            [max(t, g) for t, g in zip(taus, gammas)], alpha_joint
        )
    return ThresholdSet(
        alpha1=alpha1,
        lambda_inner=conformal_quantile(taus, alpha1),
        alpha2=alpha2,
        lambda_outer=conformal_quantile(gammas, alpha2),
        n=len(taus),
        alpha_joint=alpha_joint,
        lambda_joint=lambda_joint,
    )


@dataclass(frozen=True)
class ConfidenceSets:
    inner: LabelMask
    outer: LabelMask


def build_sets(
    fI_img: ScoreImage,
    fO_img: ScoreImage,
    thresholds: ThresholdSet,
    mode: str = "marginal",
) -> ConfidenceSets:
    """Threshold transformed scores into inner/outer masks.

    The inner comparison is strict, the outer is not. "marginal" and
    "weighted-joint" both use the two marginal thresholds (the weighted
    variant differs only in how its levels were chosen); "joint" applies
    the single joint threshold to both sides.
    """
    same_dims(fI_img, fO_img)
    if mode in ("marginal", "weighted-joint"):
        lambda_inner, lambda_outer = thresholds.lambda_inner, thresholds.lambda_outer
    elif mode == "joint":
        if thresholds.lambda_joint is None:
            raise ConfigError("joint mode requires a joint threshold")
        lambda_inner = lambda_outer = thresholds.lambda_joint
    else:
        raise ConfigError(f"unknown set construction mode {mode!r}")
    return ConfidenceSets(
        inner=LabelMask(fI_img.values > lambda_inner),
        outer=LabelMask(-fO_img.values <= lambda_outer),
    )


# --- generalized combination functions ------------------------------------

@dataclass(frozen=True)
class CombinationFunction:
    """Set-to-scalar aggregator C(region, image) that is increasing:
    C({v}, X) <= C(A, X) whenever v is in A.

    `combine` maps (boolean region, value array) to a float, with empty
    regions mapping to -inf. `pointwise`, when given, returns C({v}, X)
    for every pixel at once; otherwise singletons are evaluated one by one.
    """

    name: str
    combine: Callable[[np.ndarray, np.ndarray], float]
    pointwise: Callable[[np.ndarray], np.ndarray] | None = None


MAX_COMBINATION = CombinationFunction(
    name="max",
    combine=lambda region, values: _region_max(values, region),
    pointwise=lambda values: values,
)

COMBINATIONS: dict[str, CombinationFunction] = {"max": MAX_COMBINATION}


def register_combination(function: CombinationFunction) -> None:
    COMBINATIONS[function.name] = function


def singleton_values(function: CombinationFunction, values: np.ndarray) -> np.ndarray:
    """C({v}, X) for every pixel v."""
    if function.pointwise is not None:
        return np.asarray(function.pointwise(values), dtype=np.float64)
    out = np.empty_like(values, dtype=np.float64)
    region = np.zeros_like(values, dtype=bool)
    for row in range(values.shape[0]):
        for col in range(values.shape[1]):
            region[row, col] = True
            out[row, col] = function.combine(region, values)
            region[row, col] = False
    return out


def generalized_calibrate(
    images: Sequence[ScoreImage],
    truths: Sequence[LabelMask],
    function: CombinationFunction,
    side: str,
    alpha: float,
) -> float:
    """Threshold from combination statistics over fixed truth regions.

    The inner statistic aggregates the transformed inner scores over the
    foreground {truth == 1}; the outer statistic aggregates the negated
    transformed outer scores over the background {truth == 0}. Note this
    foreground/background pairing is the opposite of the tau/gamma
    convention used by `nonconformity`; the two are deliberately kept as
    distinct code paths and produce different thresholds in general.
    """
    if side not in ("inner", "outer"):
        raise ConfigError(f"side must be 'inner' or 'outer', got {side!r}")
    if len(images) != len(truths):
        raise ShapeError("images and truths differ in length")
    stats = []
    for image, truth in zip(images, truths):
        same_dims(image, truth)
        if side == "inner":
            stats.append(function.combine(truth.bits, image.values))
        else:
            stats.append(function.combine(~truth.bits, -image.values))
    return conformal_quantile(stats, alpha)


def generalized_sets(
    fI_img: ScoreImage,
    fO_img: ScoreImage,
    function: CombinationFunction,
    lambda_inner: float,
    lambda_outer: float,
) -> ConfidenceSets:
    """Sets from per-pixel singleton combinations: inner strict, outer not."""
    same_dims(fI_img, fO_img)
    return ConfidenceSets(
        inner=LabelMask(singleton_values(function, fI_img.values) > lambda_inner),
        outer=LabelMask(singleton_values(function, -fO_img.values) <= lambda_outer),
    )


# --- risk-control cross-check ----------------------------------------------

def risk_control_lambda(taus: Sequence[float], alpha1: float) -> float:
    """Threshold from the risk-control sweep; always equals the quantile.

    Sweeps candidate thresholds over the sorted statistics and returns
    the smallest one whose empirical miscoverage rate
    (1/n) * #(tau > lambda) stays below alpha1 - (1 - alpha1)/n, with the
    comparison done in exact rational arithmetic. The result provably
    equals conformal_quantile(taus, alpha1); this is asserted on every
    call as a cross-check of both implementations.
    """
    n = len(taus)
    if n == 0:
        raise EmptyInputError("no calibration statistics")
    if not 0.0 < alpha1 < 1.0:
        raise ValueError(f"alpha1 must be in (0, 1), got {alpha1}")
    budget = Fraction(alpha1) - (1 - Fraction(alpha1)) / n
    result = POS_INF
    for candidate in sorted(taus):
        exceed = sum(1 for t in taus if t > candidate)
        if Fraction(exceed, n) <= budget:
            result = candidate
            break
    quantile = conformal_quantile(taus, alpha1)
    if result != quantile:
        raise AssertionError(
            f"risk-control threshold {result} disagrees with quantile {quantile}"
        )
    return result


# --- JSON round-trip --------------------------------------------------------

def _lambda_to_json(value: float | None) -> Any:
    if value is None:
        return None
    if value == POS_INF:
        return "inf"
    if value == NEG_INF:
        return "-inf"
    return value


def _lambda_from_json(value: Any) -> float | None:
    if value is None:
        return None
    if value == "inf":
        return POS_INF
    if value == "-inf":
        return NEG_INF
    return float(value)


def thresholds_to_dict(
    thresholds: ThresholdSet,
    transform_inner: TransformSpec | None = None,
    transform_outer: TransformSpec | None = None,
) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "alpha1": thresholds.alpha1,
        "lambda_inner": _lambda_to_json(thresholds.lambda_inner),
        "alpha2": thresholds.alpha2,
        "lambda_outer": _lambda_to_json(thresholds.lambda_outer),
        "alpha_joint": thresholds.alpha_joint,
        "lambda_joint": _lambda_to_json(thresholds.lambda_joint),
        "n": thresholds.n,
    }
    if transform_inner is not None:
        doc["transform_inner"] = transform_inner.to_dict()
    if transform_outer is not None:
        doc["transform_outer"] = transform_outer.to_dict()
    return doc


def thresholds_from_dict(doc: dict[str, Any]) -> ThresholdSet:
    try:
        lambda_inner = _lambda_from_json(doc["lambda_inner"])
        lambda_outer = _lambda_from_json(doc["lambda_outer"])
        if lambda_inner is None or lambda_outer is None:
            raise ValueError("marginal thresholds must not be null")
        return ThresholdSet(
            alpha1=float(doc["alpha1"]),
            lambda_inner=lambda_inner,
            alpha2=float(doc["alpha2"]),
            lambda_outer=lambda_outer,
            n=int(doc["n"]),
            alpha_joint=None if doc.get("alpha_joint") is None else float(doc["alpha_joint"]),
            lambda_joint=_lambda_from_json(doc.get("lambda_joint")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"corrupt thresholds document: {exc}") from exc
