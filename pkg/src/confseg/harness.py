"""Synthetic data and resampling validation of the coverage guarantees.

The generator draws i.i.d. (scores, truth) pairs: the truth is a union
of random disks, and the raw score logits are a sharpness multiple of
the truth's signed Euclidean distance plus a smooth Gaussian noise field
(white noise filtered with a separable kernel, so the nonconformity
statistics have continuous distributions). I.i.d. pairs are in
particular exchangeable, which is all the guarantees need.

Validation repeatedly splits a dataset into calibration and test halves,
calibrates thresholds on one and measures empirical coverage and
efficiency on the other. Everything is a pure function of (dataset,
config): per-trial RNG streams are derived from the root seed by
counter, and aggregation is order-independent, so reports are identical
under any thread count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from .conformal import (
    CalibrationRecord,
    ConfidenceSets,
    Nonconformity,
    calibrate,
    nonconformity,
)
from .bbox import box_score_images, box_statistics, box_targets
from .errors import ConfigError
from .grid import GridDims, LabelMask, ScoreImage, same_dims
from .morphology import Metric, signed_distance_transform
from .scores import TransformKind, TransformSpec, apply_transform

HISTOGRAM_BINS = np.linspace(0.0, 1.0, 101)


# --- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic (scores, truth) generator.

    Identical configs produce bit-identical datasets: image i is drawn
    from its own RNG stream seeded by (seed, i).
    """

    dims: GridDims = GridDims(64, 64)
    n_images: int = 400
    disk_count: tuple[int, int] = (1, 3)
    disk_radius: tuple[float, float] = (5.0, 16.0)
    noise_amplitude: float = 3.0
    noise_correlation: float = 6.0
    link_sharpness: float = 0.5
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "dims": [self.dims.height, self.dims.width],
            "n_images": self.n_images,
            "disk_count": list(self.disk_count),
            "disk_radius": list(self.disk_radius),
            "noise_amplitude": self.noise_amplitude,
            "noise_correlation": self.noise_correlation,
            "link_sharpness": self.link_sharpness,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SynthConfig":
        defaults = cls()
        dims = doc.get("dims")
        return cls(
            dims=GridDims(*dims) if dims else defaults.dims,
            n_images=int(doc.get("n_images", defaults.n_images)),
            disk_count=tuple(doc.get("disk_count", defaults.disk_count)),
            disk_radius=tuple(doc.get("disk_radius", defaults.disk_radius)),
            noise_amplitude=float(doc.get("noise_amplitude", defaults.noise_amplitude)),
            noise_correlation=float(doc.get("noise_correlation", defaults.noise_correlation)),
            link_sharpness=float(doc.get("link_sharpness", defaults.link_sharpness)),
            seed=int(doc.get("seed", defaults.seed)),
        )


def _smooth_field(white: np.ndarray, correlation: float) -> np.ndarray:
    """Filter white noise with a separable Gaussian kernel, unit output variance."""
    if correlation <= 0:
        return white
    radius = max(1, math.ceil(4 * correlation))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / correlation) ** 2)
    kernel /= kernel.sum()
    smoothed = convolve1d(white, kernel, axis=0, mode="reflect")
    smoothed = convolve1d(smoothed, kernel, axis=1, mode="reflect")
    return smoothed / (kernel * kernel).sum()


def _synth_image(cfg: SynthConfig, index: int) -> CalibrationRecord:
    rng = np.random.default_rng([cfg.seed, index])
    height, width = cfg.dims.shape()
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    bits = np.zeros((height, width), dtype=bool)
    n_disks = int(rng.integers(cfg.disk_count[0], cfg.disk_count[1], endpoint=True))
    for _ in range(n_disks):
        center_row = rng.uniform(0, height - 1)
        center_col = rng.uniform(0, width - 1)
        radius = rng.uniform(cfg.disk_radius[0], cfg.disk_radius[1])
        bits |= (rows - center_row) ** 2 + (cols - center_col) ** 2 <= radius * radius
    truth = LabelMask(bits)
    field = _smooth_field(rng.standard_normal((height, width)), cfg.noise_correlation)
    logits = (
        cfg.link_sharpness * signed_distance_transform(truth, Metric.EUCLIDEAN).values
        + cfg.noise_amplitude * field
    )
    return CalibrationRecord(scores=ScoreImage(logits), truth=truth)


def synth_generate(cfg: SynthConfig) -> list[CalibrationRecord]:
    """Draw cfg.n_images i.i.d. (scores, truth) records."""
    return [_synth_image(cfg, i) for i in range(cfg.n_images)]


# --- per-image metrics --------------------------------------------------------

def evaluate_coverage(sets: ConfidenceSets, truth: LabelMask) -> tuple[bool, bool]:
    """(inner set contained in truth, truth contained in outer set)."""
    same_dims(sets.inner, sets.outer, truth)
    inner_ok = not (sets.inner.bits & ~truth.bits).any()
    outer_ok = not (truth.bits & ~sets.outer.bits).any()
    return inner_ok, outer_ok


def _diameter_bits(bits: np.ndarray) -> float:
    rows = np.nonzero(bits.any(axis=1))[0]
    if rows.size == 0:
        return 0.0
    # The farthest pair always uses a row's extreme columns, so reduce to those.
    first = bits[rows].argmax(axis=1)
    last = bits.shape[1] - 1 - bits[rows, ::-1].argmax(axis=1)
    pr = np.concatenate([rows, rows]).astype(np.float64)
    pc = np.concatenate([first, last]).astype(np.float64)
    dr = pr[:, None] - pr[None, :]
    dc = pc[:, None] - pc[None, :]
    return float(np.sqrt(dr * dr + dc * dc).max())


def diameter(mask: LabelMask) -> float:
    """Largest Euclidean distance between set pixel centers; 0 if fewer than 2."""
    return _diameter_bits(mask.bits)


@dataclass(frozen=True)
class EfficiencyRow:
    """Size metrics of one (sets, truth) pair; ratios are None when the truth
    has zero diameter."""

    inner_ratio: float | None
    outer_ratio: float | None
    under_prop: float
    over_prop: float


def efficiency_metrics(sets: ConfidenceSets, truth: LabelMask) -> EfficiencyRow:
    dims = same_dims(sets.inner, sets.outer, truth)
    truth_diam = _diameter_bits(truth.bits)
    inner_ratio = outer_ratio = None
    if truth_diam > 0:
        inner_ratio = _diameter_bits(sets.inner.bits) / truth_diam
        outer_ratio = _diameter_bits(sets.outer.bits) / truth_diam
    return EfficiencyRow(
        inner_ratio=inner_ratio,
        outer_ratio=outer_ratio,
        under_prop=float((truth.bits & ~sets.inner.bits).sum()) / dims.count,
        over_prop=float((sets.outer.bits & ~truth.bits).sum()) / dims.count,
    )


# --- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class ValidationConfig:
    n_cal: int
    n_test: int
    n_trials: int
    alphas: tuple[float, ...] = (0.1,)
    transform_inner: TransformSpec = TransformSpec(TransformKind.SIGMOID)
    transform_outer: TransformSpec = TransformSpec(TransformKind.SIGNED_DISTANCE)
    mode: str = "marginal"  # marginal | weighted-joint | joint
    weighting: tuple[float, float] | None = None
    target: str = "mask"  # mask | bbox-chain
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.mode not in ("marginal", "weighted-joint", "joint"):
            raise ConfigError(f"unknown validation mode {self.mode!r}")
        if self.mode == "weighted-joint" and self.weighting is None:
            raise ConfigError("weighted-joint mode needs a (alpha1, alpha2) weighting")
        if self.target not in ("mask", "bbox-chain"):
            raise ConfigError(f"unknown validation target {self.target!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_cal": self.n_cal,
            "n_test": self.n_test,
            "n_trials": self.n_trials,
            "alphas": list(self.alphas),
            "transform_inner": self.transform_inner.to_dict(),
            "transform_outer": self.transform_outer.to_dict(),
            "mode": self.mode,
            "weighting": None if self.weighting is None else list(self.weighting),
            "target": self.target,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class PreparedDataset:
    """Transformed scores and cached per-image statistics for one transform pair."""

    fI: np.ndarray  # (n, h, w) float64
    fO: np.ndarray
    truth: np.ndarray  # (n, h, w) bool
    taus: np.ndarray
    gammas: np.ndarray
    truth_diam: np.ndarray
    inner_target: np.ndarray | None = None  # bbox-chain targets, (n, h, w) bool
    outer_target: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.truth.shape[0]


def prepare_dataset(
    records: Sequence[CalibrationRecord],
    spec_inner: TransformSpec,
    spec_outer: TransformSpec,
    target: str = "mask",
) -> PreparedDataset:
    """Apply the transform pair to every record and cache the statistics."""
    fI_list, fO_list, truth_list, taus, gammas = [], [], [], [], []
    inner_targets: list[np.ndarray] = []
    outer_targets: list[np.ndarray] = []
    if target == "bbox-chain":
        kinds = (spec_inner.kind, spec_outer.kind)
        if kinds != (TransformKind.BBOX_INNER, TransformKind.BBOX_OUTER):
            raise ConfigError("bbox-chain target requires the bbox-inner/bbox-outer transforms")
    for record in records:
        if target == "bbox-chain":
            fI_img, fO_img = box_score_images(record.scores, spec_inner)
            targets = box_targets(record.truth)
            tau, gamma = box_statistics(fI_img, fO_img, targets)
            inner_targets.append(targets.inner_union.bits)
            outer_targets.append(targets.outer_union.bits)
        else:
            fI_img = apply_transform(record.scores, spec_inner)
            fO_img = apply_transform(record.scores, spec_outer)
            stats = nonconformity(fI_img, fO_img, record.truth)
            tau, gamma = stats.tau, stats.gamma
        fI_list.append(fI_img.values)
        fO_list.append(fO_img.values)
        truth_list.append(record.truth.bits)
        taus.append(tau)
        gammas.append(gamma)
    truth = np.stack(truth_list)
    return PreparedDataset(
        fI=np.stack(fI_list),
        fO=np.stack(fO_list),
        truth=truth,
        taus=np.asarray(taus),
        gammas=np.asarray(gammas),
        truth_diam=np.asarray([_diameter_bits(bits) for bits in truth]),
        inner_target=np.stack(inner_targets) if inner_targets else None,
        outer_target=np.stack(outer_targets) if outer_targets else None,
    )


@dataclass(frozen=True)
class TrialRow:
    trial: int
    alpha: float
    side: str  # inner | outer | joint
    coverage: float
    mean_inner_ratio: float | None
    mean_outer_ratio: float | None
    under_prop: float
    over_prop: float
    ratio_skipped: int


@dataclass(frozen=True)
class ValidationReport:
    config: dict[str, Any]
    rows: list[TrialRow]
    aggregates: list[dict[str, Any]]
    histograms: list[dict[str, Any]]

    def coverage_mean(self, alpha: float, side: str) -> float:
        for entry in self.aggregates:
            if entry["alpha"] == alpha and entry["side"] == side:
                return entry["coverage_mean"]
        raise KeyError(f"no aggregate for alpha={alpha}, side={side}")

    def metric_mean(self, alpha: float, key: str) -> float:
        for entry in self.aggregates:
            if entry["alpha"] == alpha:
                return entry[key]
        raise KeyError(f"no aggregate for alpha={alpha}")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "aggregates": self.aggregates,
            "trials": [
                {
                    "trial": row.trial,
                    "alpha": row.alpha,
                    "side": row.side,
                    "coverage": row.coverage,
                    "mean_inner_ratio": row.mean_inner_ratio,
                    "mean_outer_ratio": row.mean_outer_ratio,
                    "under_prop": row.under_prop,
                    "over_prop": row.over_prop,
                    "ratio_skipped": row.ratio_skipped,
                }
                for row in self.rows
            ],
            "histograms": self.histograms,
        }


def _evaluate_split(
    prepared: PreparedDataset,
    test: np.ndarray,
    lambda_inner: float,
    lambda_outer: float,
    target: str,
) -> tuple[np.ndarray, np.ndarray, dict[str, Any]]:
    """Coverage booleans and mean efficiency metrics over one test subset."""
    fI_t = prepared.fI[test]
    fO_t = prepared.fO[test]
    truth_t = prepared.truth[test]
    inner = fI_t > lambda_inner
    outer = (-fO_t) <= lambda_outer
    if target == "bbox-chain":
        inner_tg = prepared.inner_target[test]
        outer_tg = prepared.outer_target[test]
        inner_ok = ~(inner & ~inner_tg).any((1, 2)) & ~(inner_tg & ~truth_t).any((1, 2))
        outer_ok = ~(truth_t & ~outer_tg).any((1, 2)) & ~(outer_tg & ~outer).any((1, 2))
    else:
        inner_ok = ~(inner & ~truth_t).any((1, 2))
        outer_ok = ~(truth_t & ~outer).any((1, 2))

    pixel_count = truth_t.shape[1] * truth_t.shape[2]
    under = (truth_t & ~inner).sum((1, 2)) / pixel_count
    over = (outer & ~truth_t).sum((1, 2)) / pixel_count
    inner_ratios, outer_ratios = [], []
    skipped = 0
    for j in range(test.size):
        truth_diam = prepared.truth_diam[test[j]]
        if truth_diam > 0:
            inner_ratios.append(_diameter_bits(inner[j]) / truth_diam)
            outer_ratios.append(_diameter_bits(outer[j]) / truth_diam)
        else:
            skipped += 1
    metrics = {
        "mean_inner_ratio": float(np.mean(inner_ratios)) if inner_ratios else None,
        "mean_outer_ratio": float(np.mean(outer_ratios)) if outer_ratios else None,
        "under_prop": float(under.mean()),
        "over_prop": float(over.mean()),
        "ratio_skipped": skipped,
    }
    return inner_ok, outer_ok, metrics


def _run_trial(prepared: PreparedDataset, config: ValidationConfig, trial: int) -> list[TrialRow]:
    rng = np.random.default_rng([config.seed, trial])
    perm = rng.permutation(prepared.n)
    cal = perm[: config.n_cal]
    test = perm[config.n_cal : config.n_cal + config.n_test]
    stats_cal = [Nonconformity(float(prepared.taus[i]), float(prepared.gammas[i])) for i in cal]

    def rows_for(
        thresholds_inner: float,
        thresholds_outer: float,
        alpha_by_side: dict[str, float],
    ) -> list[TrialRow]:
        inner_ok, outer_ok, metrics = _evaluate_split(
            prepared, test, thresholds_inner, thresholds_outer, config.target
        )
        coverage = {
            "inner": float(inner_ok.mean()),
            "outer": float(outer_ok.mean()),
            "joint": float((inner_ok & outer_ok).mean()),
        }
        return [
            TrialRow(
                trial=trial,
                alpha=alpha,
                side=side,
                coverage=coverage[side],
                **metrics,
            )
            for side, alpha in alpha_by_side.items()
        ]

    rows: list[TrialRow] = []
    if config.mode == "weighted-joint":
        alpha1, alpha2 = config.weighting
        thresholds = calibrate(stats_cal, alpha1, alpha2)
        rows.extend(
            rows_for(
                thresholds.lambda_inner,
                thresholds.lambda_outer,
                {"inner": alpha1, "outer": alpha2, "joint": alpha1 + alpha2},
            )
        )
    else:
        for alpha in config.alphas:
            if config.mode == "joint":
                thresholds = calibrate(stats_cal, alpha, alpha, alpha_joint=alpha)
                rows.extend(
                    rows_for(
                        thresholds.lambda_joint,
                        thresholds.lambda_joint,
                        {"inner": alpha, "outer": alpha, "joint": alpha},
                    )
                )
            else:
                thresholds = calibrate(stats_cal, alpha, alpha)
                rows.extend(
                    rows_for(
                        thresholds.lambda_inner,
                        thresholds.lambda_outer,
                        {"inner": alpha, "outer": alpha},
                    )
                )
    return rows


def run_validation(
    records: Sequence[CalibrationRecord] | None,
    config: ValidationConfig,
    prepared: PreparedDataset | None = None,
) -> ValidationReport:
    """Repeatedly split, calibrate and evaluate; aggregate over trials.

    The report is a pure function of (records, config); trials may run on
    several threads without changing a byte of it.
    """
    if prepared is None:
        if records is None:
            raise ConfigError("run_validation needs records or a prepared dataset")
        prepared = prepare_dataset(
            records, config.transform_inner, config.transform_outer, config.target
        )
    if config.n_cal + config.n_test > prepared.n:
        raise ConfigError(
            f"need n_cal + n_test <= {prepared.n}, got {config.n_cal} + {config.n_test}"
        )
    if config.n_cal < 1 or config.n_test < 1 or config.n_trials < 1:
        raise ConfigError("n_cal, n_test and n_trials must all be positive")

    workers = config.threads if config.threads > 0 else None
    if config.threads == 1:
        per_trial = [_run_trial(prepared, config, t) for t in range(config.n_trials)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(
                pool.map(lambda t: _run_trial(prepared, config, t), range(config.n_trials))
            )
    rows = [row for trial_rows in per_trial for row in trial_rows]

    keys: list[tuple[float, str]] = []
    for row in rows:
        if (row.alpha, row.side) not in keys:
            keys.append((row.alpha, row.side))
    aggregates, histograms = [], []
    for alpha, side in keys:
        group = [row for row in rows if row.alpha == alpha and row.side == side]
        coverages = np.asarray([row.coverage for row in group])
        inner_ratios = [row.mean_inner_ratio for row in group if row.mean_inner_ratio is not None]
        outer_ratios = [row.mean_outer_ratio for row in group if row.mean_outer_ratio is not None]
        aggregates.append(
            {
                "alpha": alpha,
                "side": side,
                "coverage_mean": float(coverages.mean()),
                "mean_inner_ratio": float(np.mean(inner_ratios)) if inner_ratios else None,
                "mean_outer_ratio": float(np.mean(outer_ratios)) if outer_ratios else None,
                "under_prop": float(np.mean([row.under_prop for row in group])),
                "over_prop": float(np.mean([row.over_prop for row in group])),
                "n_trials": len(group),
            }
        )
        counts, _ = np.histogram(coverages, bins=HISTOGRAM_BINS)
        histograms.append(
            {
                "alpha": alpha,
                "side": side,
                "bin_edges": [float(edge) for edge in HISTOGRAM_BINS],
                "counts": [int(count) for count in counts],
            }
        )
    return ValidationReport(
        config=config.to_dict(),
        rows=rows,
        aggregates=aggregates,
        histograms=histograms,
    )


# --- report files ---------------------------------------------------------------

_CSV_COLUMNS = (
    "trial",
    "alpha",
    "side",
    "coverage",
    "mean_inner_ratio",
    "mean_outer_ratio",
    "under_prop",
    "over_prop",
)


def _csv_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report_json(report: ValidationReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n")


def write_report_csv(report: ValidationReport, path: str | Path) -> None:
    lines = [",".join(_CSV_COLUMNS)]
    for row in report.rows:
        lines.append(
            ",".join(
                _csv_cell(value)
                for value in (
                    row.trial,
                    row.alpha,
                    row.side,
                    row.coverage,
                    row.mean_inner_ratio,
                    row.mean_outer_ratio,
                    row.under_prop,
                    row.over_prop,
                )
            )
        )
    for entry in report.aggregates:
        lines.append(
            ",".join(
                _csv_cell(value)
                for value in (
                    "mean",
                    entry["alpha"],
                    entry["side"],
                    entry["coverage_mean"],
                    entry["mean_inner_ratio"],
                    entry["mean_outer_ratio"],
                    entry["under_prop"],
                    entry["over_prop"],
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_histograms_csv(report: ValidationReport, out_dir: str | Path) -> list[Path]:
    """One (bin_left, bin_right, count) file per (alpha, side)."""
    out_dir = Path(out_dir)
    written = []
    for hist in report.histograms:
        path = out_dir / f"hist_alpha{hist['alpha']}_{hist['side']}.csv"
        edges = hist["bin_edges"]
        lines = ["bin_left,bin_right,count"]
        lines.extend(
            f"{repr(edges[i])},{repr(edges[i + 1])},{hist['counts'][i]}"
            for i in range(len(hist["counts"]))
        )
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
