"""Command line entry points.

Subcommands: synth | calibrate | predict | validate | bbox-targets.
Exit codes: 0 success, 2 config or format problem, 3 missing input file,
4 empty calibration set.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

import jsonschema

from .bbox import bbox_calibrate, box_targets
from .conformal import (
    CalibrationRecord,
    attach_stats,
    build_sets,
    calibrate,
    thresholds_from_dict,
    thresholds_to_dict,
)
from .errors import (
    ConfigError,
    ConfsegError,
    DataError,
    EmptyInputError,
    FormatError,
    ShapeError,
)
from .fileio import read_mask, read_score_image, write_mask, write_score_image
from .grid import count_ones
from .harness import (
    SynthConfig,
    ValidationConfig,
    evaluate_coverage,
    run_validation,
    synth_generate,
    write_histograms_csv,
    write_report_csv,
    write_report_json,
)
from .scores import TransformKind, TransformSpec, apply_transform

_TRANSFORM_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": [kind.value for kind in TransformKind]},
        "metric": {"enum": ["euclidean", "chessboard"]},
        "mask_threshold": {"type": "number"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_ALPHA_SCHEMA = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}

_SYNTH_SCHEMA = {
    "type": "object",
    "properties": {
        "dims": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 2,
            "maxItems": 2,
        },
        "n_images": {"type": "integer", "minimum": 0},
        "disk_count": {
            "type": "array",
            "items": {"type": "integer", "minimum": 0},
            "minItems": 2,
            "maxItems": 2,
        },
        "disk_radius": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": 2,
            "maxItems": 2,
        },
        "noise_amplitude": {"type": "number", "minimum": 0},
        "noise_correlation": {"type": "number", "minimum": 0},
        "link_sharpness": {"type": "number"},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}

_DATASET_SCHEMA = {
    "type": "object",
    "properties": {"manifest": {"type": "string"}},
    "required": ["manifest"],
    "additionalProperties": False,
}

_CALIBRATE_SCHEMA = {
    "type": "object",
    "properties": {
        "dataset": _DATASET_SCHEMA,
        "transform_inner": _TRANSFORM_SCHEMA,
        "transform_outer": _TRANSFORM_SCHEMA,
        "alpha1": _ALPHA_SCHEMA,
        "alpha2": _ALPHA_SCHEMA,
        "alpha_joint": _ALPHA_SCHEMA,
        "mode": {"enum": ["marginal", "weighted-joint", "joint"]},
        "target": {"enum": ["mask", "bbox"]},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
    },
    "required": ["dataset", "alpha1", "alpha2"],
    "additionalProperties": False,
}

_VALIDATION_SCHEMA = {
    "type": "object",
    "properties": {
        "n_cal": {"type": "integer", "minimum": 1},
        "n_test": {"type": "integer", "minimum": 1},
        "n_trials": {"type": "integer", "minimum": 1},
        "alphas": {"type": "array", "items": _ALPHA_SCHEMA, "minItems": 1},
        "mode": {"enum": ["marginal", "weighted-joint", "joint"]},
        "weighting": {
            "type": "array",
            "items": _ALPHA_SCHEMA,
            "minItems": 2,
            "maxItems": 2,
        },
        "target": {"enum": ["mask", "bbox-chain"]},
    },
    "required": ["n_cal", "n_test", "n_trials"],
    "additionalProperties": False,
}

_VALIDATE_SCHEMA = {
    "type": "object",
    "properties": {
        "preset": {"enum": ["marginal-90", "weighted-joint-90"]},
        "synth": _SYNTH_SCHEMA,
        "dataset": _DATASET_SCHEMA,
        "validation": _VALIDATION_SCHEMA,
        "transform_inner": _TRANSFORM_SCHEMA,
        "transform_outer": _TRANSFORM_SCHEMA,
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
    },
    "required": ["validation"],
    "additionalProperties": False,
}

_DEFAULT_TRANSFORMS = {
    "transform_inner": {"kind": "sigmoid"},
    "transform_outer": {"kind": "signed-distance", "metric": "euclidean"},
}

PRESETS: dict[str, dict[str, Any]] = {
    "marginal-90": {
        "validation": {"alphas": [0.1], "mode": "marginal"},
        **_DEFAULT_TRANSFORMS,
    },
    "weighted-joint-90": {
        "validation": {"mode": "weighted-joint", "weighting": [0.02, 0.08]},
        **_DEFAULT_TRANSFORMS,
    },
}


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _load_config(path: str, schema: dict[str, Any]) -> dict[str, Any]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    preset_name = doc.get("preset")
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {preset_name!r}")
        merged = _merge(PRESETS[preset_name], {k: v for k, v in doc.items() if k != "preset"})
        merged["preset"] = preset_name
        doc = merged
    jsonschema.validate(doc, schema)
    return doc


def _resolve_out(args: argparse.Namespace, config: dict[str, Any] | None = None) -> Path:
    out = args.out or (config or {}).get("out")
    if not out:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_manifest_records(manifest_path: Path) -> list[CalibrationRecord]:
    doc = json.loads(manifest_path.read_text())
    pairs = doc.get("pairs")
    if not isinstance(pairs, list):
        raise FormatError(f"{manifest_path}: manifest has no 'pairs' list")
    base = manifest_path.parent
    records = []
    for pair in pairs:
        if not isinstance(pair, dict) or "scores" not in pair or "mask" not in pair:
            raise FormatError(f"{manifest_path}: manifest pair {pair!r} needs 'scores' and 'mask'")
        records.append(
            CalibrationRecord(
                scores=read_score_image(base / pair["scores"]),
                truth=read_mask(base / pair["mask"]),
            )
        )
    return records


def _transform_pair(config: dict[str, Any]) -> tuple[TransformSpec, TransformSpec]:
    inner = TransformSpec.from_dict(config.get("transform_inner", _DEFAULT_TRANSFORMS["transform_inner"]))
    outer = TransformSpec.from_dict(config.get("transform_outer", _DEFAULT_TRANSFORMS["transform_outer"]))
    return inner, outer


def cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config(args.config, _SYNTH_SCHEMA)
    if args.seed is not None:
        config = dict(config, seed=args.seed)
    out_dir = _resolve_out(args, config)
    cfg = SynthConfig.from_dict(config)
    pairs = []
    for i, record in enumerate(synth_generate(cfg)):
        scores_name = f"scores_{i:04d}.cseg"
        mask_name = f"mask_{i:04d}.pgm"
        write_score_image(record.scores, out_dir / scores_name)
        write_mask(record.truth, out_dir / mask_name)
        pairs.append({"scores": scores_name, "mask": mask_name})
    manifest = {
        "dims": [cfg.dims.height, cfg.dims.width],
        "seed": cfg.seed,
        "pairs": pairs,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"synth: wrote {len(pairs)} (scores, mask) pairs to {out_dir}")
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    config = _load_config(args.config, _CALIBRATE_SCHEMA)
    out_dir = _resolve_out(args, config)
    records = _load_manifest_records(Path(config["dataset"]["manifest"]))
    if not records:
        raise EmptyInputError("manifest lists no calibration pairs")
    spec_inner, spec_outer = _transform_pair(config)
    alpha1, alpha2 = config["alpha1"], config["alpha2"]
    bbox_pair = (spec_inner.kind, spec_outer.kind) == (
        TransformKind.BBOX_INNER,
        TransformKind.BBOX_OUTER,
    )
    target = config.get("target", "bbox" if bbox_pair else "mask")
    if target == "bbox":
        if not bbox_pair:
            raise ConfigError("target 'bbox' requires the bbox-inner/bbox-outer transforms")
        thresholds = bbox_calibrate(records, spec_inner, alpha1, alpha2)
    else:
        with_stats = [attach_stats(r, spec_inner, spec_outer) for r in records]
        thresholds = calibrate(with_stats, alpha1, alpha2, config.get("alpha_joint"))
    doc = thresholds_to_dict(thresholds, spec_inner, spec_outer)
    (out_dir / "thresholds.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(
        f"calibrate: n={thresholds.n} alpha1={alpha1} lambda_inner={thresholds.lambda_inner}"
        f" alpha2={alpha2} lambda_outer={thresholds.lambda_outer}"
        + (
            f" alpha_joint={thresholds.alpha_joint} lambda_joint={thresholds.lambda_joint}"
            if thresholds.alpha_joint is not None
            else ""
        )
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    doc = json.loads(Path(args.thresholds).read_text())
    if "transform_inner" not in doc or "transform_outer" not in doc:
        raise ConfigError("thresholds document is missing its transforms")
    thresholds = thresholds_from_dict(doc)
    spec_inner = TransformSpec.from_dict(doc["transform_inner"])
    spec_outer = TransformSpec.from_dict(doc["transform_outer"])
    scores = read_score_image(args.scores)
    sets = build_sets(
        apply_transform(scores, spec_inner),
        apply_transform(scores, spec_outer),
        thresholds,
        mode="joint" if thresholds.lambda_joint is not None else "marginal",
    )
    out_dir = _resolve_out(args)
    write_mask(sets.inner, out_dir / "inner.pgm")
    write_mask(sets.outer, out_dir / "outer.pgm")
    line = f"predict: inner_area={count_ones(sets.inner)} outer_area={count_ones(sets.outer)}"
    if args.truth:
        truth = read_mask(args.truth)
        inner_ok, outer_ok = evaluate_coverage(sets, truth)
        line += f" inner_ok={str(inner_ok).lower()} outer_ok={str(outer_ok).lower()}"
    print(line)
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    config = _load_config(args.config, _VALIDATE_SCHEMA)
    if ("synth" in config) == ("dataset" in config):
        raise ConfigError("config needs exactly one of 'synth' or 'dataset'")
    out_dir = _resolve_out(args, config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)

    if "synth" in config:
        synth_doc = dict(config["synth"])
        synth_doc.setdefault("seed", seed)
        records = synth_generate(SynthConfig.from_dict(synth_doc))
    else:
        records = _load_manifest_records(Path(config["dataset"]["manifest"]))

    spec_inner, spec_outer = _transform_pair(config)
    validation = config["validation"]
    vcfg = ValidationConfig(
        n_cal=validation["n_cal"],
        n_test=validation["n_test"],
        n_trials=validation["n_trials"],
        alphas=tuple(validation.get("alphas", [0.1])),
        transform_inner=spec_inner,
        transform_outer=spec_outer,
        mode=validation.get("mode", "marginal"),
        weighting=tuple(validation["weighting"]) if "weighting" in validation else None,
        target=validation.get("target", "mask"),
        seed=seed,
        threads=args.threads,
    )
    if vcfg.weighting is not None and not 0 < sum(vcfg.weighting) < 1:
        raise ConfigError("weighting levels must sum to a value in (0, 1)")
    report = run_validation(records, vcfg)
    write_report_json(report, out_dir / "report.json")
    write_report_csv(report, out_dir / "report.csv")
    write_histograms_csv(report, out_dir)
    for entry in report.aggregates:
        print(
            f"validate: alpha={entry['alpha']} side={entry['side']}"
            f" coverage={entry['coverage_mean']:.4f}"
        )
    return 0


def cmd_bbox_targets(args: argparse.Namespace) -> int:
    truth = read_mask(args.mask)
    targets = box_targets(truth)
    out_dir = _resolve_out(args)
    write_mask(targets.inner_union, out_dir / "inner_boxes.pgm")
    write_mask(targets.outer_union, out_dir / "outer_boxes.pgm")
    doc = {
        "inner": [list(box) for box in targets.inner_boxes.boxes],
        "outer": [list(box) for box in targets.outer_boxes.boxes],
    }
    (out_dir / "boxes.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"bbox-targets: {len(targets.inner_boxes.boxes)} component(s)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confseg",
        description="Conformal inner/outer confidence sets for segmentation masks.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides the config's 'out')")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument(
        "--threads", type=int, default=1, help="worker threads for validation, 0 = auto"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p_synth.add_argument("--config", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_cal = sub.add_parser("calibrate", parents=[common], help="calibrate thresholds on a dataset")
    p_cal.add_argument("--config", required=True)
    p_cal.set_defaults(func=cmd_calibrate)

    p_pred = sub.add_parser("predict", parents=[common], help="build confidence sets for a score map")
    p_pred.add_argument("--thresholds", required=True)
    p_pred.add_argument("--scores", required=True)
    p_pred.add_argument("--truth", help="optional truth mask for coverage reporting")
    p_pred.set_defaults(func=cmd_predict)

    p_val = sub.add_parser("validate", parents=[common], help="run the resampling validation")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)

    p_bt = sub.add_parser("bbox-targets", parents=[common], help="dump box-union targets of a mask")
    p_bt.add_argument("--mask", required=True)
    p_bt.set_defaults(func=cmd_bbox_targets)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if getattr(args, "seed", None) is not None and args.seed < 0:
            raise ConfigError("seed must be non-negative")
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return 3
    except EmptyInputError as exc:
        print(f"error: empty calibration: {exc}", file=sys.stderr)
        return 4
    except (
        ConfigError,
        FormatError,
        DataError,
        ShapeError,
        json.JSONDecodeError,
        jsonschema.ValidationError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
