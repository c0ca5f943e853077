"""Command-line surface: analyze, augment, eval, bench, report.

Every option can also be supplied through an environment variable named
ROADBENCH_<OPTION> (dashes become underscores); explicit flags win. Each
command echoes its effective configuration to <out>/run_config.json so a
result directory is self-describing. The echo deliberately omits the
output path and worker count: neither may influence the produced bytes,
and leaving them out lets identical runs be compared tree-to-tree.

Exit codes: 0 success, 2 usage or input error, 3 partial failure (some
images failed but the run produced output).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, TypeVar

import cv2
import numpy as np
import yaml

from .augment import LabeledImage, apply_pipeline, load_spec
from .backend import (
    DetectorBackend,
    DoublePassBackend,
    ExternalProcessBackend,
    FixedLatencyBackend,
    OracleBackend,
    load_predictions,
    run_benchmark,
    write_predictions,
)
from .dataset import (
    ClassTaxonomy,
    GroundTruthSet,
    compute_stats,
    find_image_files,
    integrity_report,
    read_manifest,
    scan_dataset,
    write_label_file,
)
from .errors import ConfigError, IoFailure, ToolkitError
from .evaluation import AP_MODES, EvalSettings, per_class_report, unknown_image_ids
from .reports import (
    REPORT_FORMATS,
    eval_report_from_json,
    eval_report_to_json,
    fmt_metric,
    render_bench_summary,
    render_class_frequency_svg,
    render_confusion_csv,
    render_diagnostics,
    render_eval_table,
    render_report,
    render_size_heatmap_svg,
    render_timings_csv,
    stats_to_json,
)

ENV_PREFIX = "ROADBENCH_"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARTIAL = 3

BACKEND_KINDS = ("external", "oracle", "fixed")

T = TypeVar("T")


# ---------------------------------------------------------------------------
# option resolution: flag > environment variable > built-in default


def _resolve(args: argparse.Namespace, dest: str, convert: Callable[[str], T], fallback):
    value = getattr(args, dest, None)
    if value is not None:
        return value
    env_name = ENV_PREFIX + dest.upper()
    raw = os.environ.get(env_name)
    if raw is None:
        return fallback
    try:
        return convert(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {env_name}: {raw!r}") from exc


def _resolve_flag(args: argparse.Namespace, dest: str) -> bool:
    if getattr(args, dest, False):
        return True
    raw = os.environ.get(ENV_PREFIX + dest.upper(), "")
    return raw.strip().lower() in ("1", "true", "yes", "on")


def _require(value: Optional[T], flag: str) -> T:
    if value is None:
        env_name = ENV_PREFIX + flag.lstrip("-").upper().replace("-", "_")
        raise ConfigError(f"missing required option {flag} (or {env_name})")
    return value


def _choice(name: str, allowed: Sequence[str]) -> Callable[[str], str]:
    def convert(raw: str) -> str:
        if raw not in allowed:
            raise ConfigError(f"{name} must be one of {', '.join(allowed)}; got {raw!r}")
        return raw

    return convert


def _conf_law(raw: str):
    """Either a single confidence value or `low,high` for a uniform range."""
    parts = [p.strip() for p in str(raw).split(",")]
    if len(parts) == 1:
        return float(parts[0])
    if len(parts) == 2:
        return (float(parts[0]), float(parts[1]))
    raise ConfigError(f"confidence law must be `value` or `low,high`, got {raw!r}")


# ---------------------------------------------------------------------------
# training manifest (recorded metadata only)


@dataclass(frozen=True)
class TrainingManifest:
    """Hyperparameters of the training run that produced the detector.

    Purely descriptive: the toolkit never trains anything, but carrying
    these values into run_config.json keeps results traceable to the
    model they came from.
    """

    learning_rate: float
    warmup_iterations: float
    momentum: float
    epochs: int
    batch_size: int
    optimizer: str = "AdamW"
    image_size: Optional[int] = None

    def __post_init__(self):
        numerics = {
            "learning_rate": self.learning_rate,
            "warmup_iterations": self.warmup_iterations,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
        }
        if self.image_size is not None:
            numerics["image_size"] = self.image_size
        for name, value in numerics.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
                raise ConfigError(f"manifest field {name} must be a positive number, got {value!r}")
        if not isinstance(self.optimizer, str) or not self.optimizer.strip():
            raise ConfigError("manifest field optimizer must be a non-empty string")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "warmup_iterations": self.warmup_iterations,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer,
            "image_size": self.image_size,
        }


def load_training_manifest(path: str | Path) -> TrainingManifest:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read training manifest {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"training manifest {path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"training manifest {path} must be a mapping")
    known = {f: data[f] for f in TrainingManifest.__dataclass_fields__ if f in data}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"training manifest {path} has unknown fields: {', '.join(unknown)}")
    missing = [
        f
        for f in ("learning_rate", "warmup_iterations", "momentum", "epochs", "batch_size")
        if f not in known
    ]
    if missing:
        raise ConfigError(f"training manifest {path} is missing fields: {', '.join(missing)}")
    return TrainingManifest(**known)


# ---------------------------------------------------------------------------
# shared command plumbing


def _load_taxonomy(args) -> tuple[ClassTaxonomy, Optional[str]]:
    path = _resolve(args, "taxonomy", str, None)
    if path is None:
        return ClassTaxonomy.default(), None
    return ClassTaxonomy.from_file(path), path


def _load_manifest(args) -> Optional[TrainingManifest]:
    path = _resolve(args, "manifest", str, None)
    return load_training_manifest(path) if path is not None else None


def _out_dir(args) -> Path:
    out = _require(_resolve(args, "out", str, None), "--out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _echo_config(
    out_dir: Path, command: str, config: dict, manifest: Optional[TrainingManifest]
) -> None:
    payload: dict = {"command": command, "config": config}
    if manifest is not None:
        payload["training_manifest"] = manifest.to_dict()
    _write_text(out_dir / "run_config.json", json.dumps(payload, indent=2) + "\n")


def load_labeled_images(gt: GroundTruthSet, images_dir: str | Path) -> tuple[list[LabeledImage], list[tuple[str, str]]]:
    """Decode pixels for every annotated image; failures are returned, not raised."""
    paths = find_image_files(images_dir)
    loaded: list[LabeledImage] = []
    failures: list[tuple[str, str]] = []
    for image_id in gt.image_ids():
        path = paths.get(image_id)
        if path is None:
            failures.append((image_id, "no image file"))
            continue
        raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if raw is None:
            failures.append((image_id, f"cannot decode {path}"))
            continue
        pixels = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
        loaded.append(LabeledImage(image_id, pixels, list(gt.images[image_id].boxes)))
    return loaded, failures


def _placeholder_images(gt: GroundTruthSet) -> list[LabeledImage]:
    """Stand-in pixel data for backends that only consume annotations."""
    blank = np.zeros((8, 8, 3), dtype=np.uint8)
    return [
        LabeledImage(image_id, blank.copy(), list(gt.images[image_id].boxes))
        for image_id in gt.image_ids()
    ]


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    labels = _require(_resolve(args, "labels", str, None), "--labels")
    images = _resolve(args, "images", str, None)
    rarity = _resolve(args, "rarity", int, 10)
    dims_path = _resolve(args, "image_dims", str, None)
    taxonomy, taxonomy_path = _load_taxonomy(args)
    manifest = _load_manifest(args)
    out_dir = _out_dir(args)

    dims = read_manifest(dims_path) if dims_path else None
    gt, diags = scan_dataset(images, labels, taxonomy, dims)
    stats = compute_stats(gt)
    findings = [*diags, *integrity_report(gt, rarity)]

    _write_text(out_dir / "stats.json", stats_to_json(stats, taxonomy.names))
    _write_text(out_dir / "integrity.txt", render_diagnostics(findings))
    _write_text(out_dir / "class_frequency.svg", render_class_frequency_svg(stats, taxonomy.names))
    _write_text(out_dir / "bbox_size_heatmap.svg", render_size_heatmap_svg(stats))
    _echo_config(
        out_dir,
        "analyze",
        {
            "labels": labels,
            "images": images,
            "taxonomy": taxonomy_path,
            "image_dims": dims_path,
            "rarity": rarity,
        },
        manifest,
    )
    print(f"images={stats.image_count} instances={stats.total_instances} findings={len(findings)}")
    return EXIT_OK


def cmd_augment(args) -> int:
    labels = _require(_resolve(args, "labels", str, None), "--labels")
    images = _require(_resolve(args, "images", str, None), "--images")
    spec_path = _require(_resolve(args, "spec", str, None), "--spec")
    seed = _resolve(args, "seed", int, None)
    workers = _resolve(args, "workers", int, 1)
    taxonomy, taxonomy_path = _load_taxonomy(args)
    manifest = _load_manifest(args)
    out_dir = _out_dir(args)

    spec = load_spec(spec_path)
    if seed is not None:
        spec = replace(spec, seed=seed)
    gt, _ = scan_dataset(images, labels, taxonomy)
    imgs, load_failures = load_labeled_images(gt, images)
    outputs, report = apply_pipeline(imgs, spec, workers=workers)

    images_out = out_dir / "images"
    labels_out = out_dir / "labels"
    images_out.mkdir(exist_ok=True)
    labels_out.mkdir(exist_ok=True)
    for img in outputs:
        target = images_out / f"{img.image_id}.png"
        if not cv2.imwrite(str(target), cv2.cvtColor(img.pixels, cv2.COLOR_RGB2BGR)):
            raise IoFailure(f"failed to write {target}")
        write_label_file(labels_out / f"{img.image_id}.txt", img.boxes)

    _write_text(out_dir / "pipeline_report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    _echo_config(
        out_dir,
        "augment",
        {
            "labels": labels,
            "images": images,
            "taxonomy": taxonomy_path,
            "spec": spec.to_dict(),
        },
        manifest,
    )
    for step in report.steps:
        print(f"{step.step}: dropped_boxes={step.dropped_boxes} dropped_images={step.dropped_images}")
    print(f"wrote {len(outputs)} images")
    for image_id, reason in load_failures:
        print(f"failed {image_id}: {reason}", file=sys.stderr)
    for error in report.errors:
        print(f"failed {error['image_id']} at {error['step']}: {error['error']}", file=sys.stderr)
    return EXIT_PARTIAL if load_failures or report.errors else EXIT_OK


def cmd_eval(args) -> int:
    labels = _require(_resolve(args, "labels", str, None), "--labels")
    predictions = _require(_resolve(args, "predictions", str, None), "--predictions")
    conf = _resolve(args, "conf", float, 0.25)
    iou_threshold = _resolve(args, "iou", float, 0.45)
    ap_mode = _resolve(args, "ap_mode", _choice("--ap-mode", AP_MODES), "coco101")
    taxonomy, taxonomy_path = _load_taxonomy(args)
    manifest = _load_manifest(args)
    out_dir = _out_dir(args)

    gt, _ = scan_dataset(None, labels, taxonomy)
    dets = load_predictions(predictions, taxonomy)
    unknown = unknown_image_ids(dets, gt)
    if unknown:
        raise ConfigError(
            "predictions reference images absent from ground truth: " + ", ".join(unknown)
        )

    settings = EvalSettings(conf_threshold=conf, iou_threshold=iou_threshold, ap_mode=ap_mode)
    report = per_class_report(dets, gt, settings)
    _write_text(out_dir / "report.json", eval_report_to_json(report))
    _write_text(out_dir / "report.txt", render_eval_table(report))
    _write_text(out_dir / "confusion.csv", render_confusion_csv(report))
    _echo_config(
        out_dir,
        "eval",
        {
            "labels": labels,
            "predictions": predictions,
            "taxonomy": taxonomy_path,
            "settings": settings.to_dict(),
        },
        manifest,
    )
    overall = report.overall
    print(
        f"{overall.name} {overall.instances} {fmt_metric(overall.precision)}"
        f" {fmt_metric(overall.recall)} {fmt_metric(overall.map50)} {fmt_metric(overall.map50_95)}"
    )
    print(f"mAP50 = {overall.map50:.4f}")
    return EXIT_OK


def _build_backend(args, gt: GroundTruthSet, taxonomy: ClassTaxonomy, images: Optional[str]) -> tuple[DetectorBackend, dict]:
    kind = _require(_resolve(args, "backend", _choice("--backend", BACKEND_KINDS), None), "--backend")
    config: dict = {"backend": kind}
    backend: DetectorBackend
    if kind == "external":
        command = _require(_resolve(args, "command", str, None), "--command")
        backend = ExternalProcessBackend(command, taxonomy, images_dir=images)
        config["command"] = command
    elif kind == "oracle":
        drop_rate = _resolve(args, "drop_rate", float, 0.0)
        jitter = _resolve(args, "jitter", float, 0.0)
        conf_law = _resolve(args, "conf_law", _conf_law, 1.0)
        seed = _resolve(args, "seed", int, 0)
        backend = OracleBackend(gt, drop_rate=drop_rate, jitter=jitter, conf_law=conf_law, seed=seed)
        config.update(
            {"drop_rate": drop_rate, "jitter": jitter, "conf_law": conf_law, "seed": seed}
        )
    else:
        latency_ms = _resolve(args, "latency_ms", float, 10.0)
        backend = FixedLatencyBackend(inference_ms=latency_ms)
        config["latency_ms"] = latency_ms
    if _resolve_flag(args, "double_pass"):
        merge_iou = _resolve(args, "merge_iou", float, 0.5)
        backend = DoublePassBackend(backend, merge_iou)
        config.update({"double_pass": True, "merge_iou": merge_iou})
    return backend, config


def cmd_bench(args) -> int:
    labels = _require(_resolve(args, "labels", str, None), "--labels")
    images = _resolve(args, "images", str, None)
    warmup = _resolve(args, "warmup", int, 0)
    taxonomy, taxonomy_path = _load_taxonomy(args)
    manifest = _load_manifest(args)
    out_dir = _out_dir(args)

    gt, _ = scan_dataset(images, labels, taxonomy)
    backend, backend_config = _build_backend(args, gt, taxonomy, images)
    if images is not None:
        imgs, load_failures = load_labeled_images(gt, images)
    else:
        if backend_config["backend"] == "external":
            raise ConfigError("--backend external needs --images to stage real files")
        imgs, load_failures = _placeholder_images(gt), []
    if not imgs:
        raise ConfigError("no images to benchmark")
    if warmup < 0 or warmup >= len(imgs):
        raise ConfigError(f"warmup {warmup} leaves no samples out of {len(imgs)} images")

    result = run_benchmark(backend, imgs, warmup=warmup)
    _write_text(out_dir / "timings.csv", render_timings_csv(result.records))
    _write_text(out_dir / "summary.txt", render_bench_summary(result.summary))
    _write_text(out_dir / "summary.json", json.dumps(result.summary.to_dict(), indent=2) + "\n")
    write_predictions(result.detections, out_dir / "predictions")
    _echo_config(
        out_dir,
        "bench",
        {
            "labels": labels,
            "images": images,
            "taxonomy": taxonomy_path,
            "warmup": warmup,
            **backend_config,
        },
        manifest,
    )
    print(render_bench_summary(result.summary), end="")
    for image_id, reason in load_failures:
        print(f"failed {image_id}: {reason}", file=sys.stderr)
    for image_id, reason in result.failures:
        print(f"failed {image_id}: {reason}", file=sys.stderr)
    return EXIT_PARTIAL if load_failures or result.failures else EXIT_OK


def cmd_report(args) -> int:
    source = Path(args.input)
    format_name = _resolve(args, "format", str, "table")
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read report {source}: {exc}") from exc
    report = eval_report_from_json(text)
    document = render_report(report, format_name)
    sys.stdout.write(document)
    out = _resolve(args, "out", str, None)
    if out is not None:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        suffix = {"table": "txt", "structured": "json", "csv": "csv", "svg": "svg"}[format_name]
        _write_text(out_dir / f"report.{suffix}", document)
        _echo_config(
            out_dir,
            "report",
            {"input": str(source), "format": format_name},
            _load_manifest(args),
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="output directory (created if missing)")
    parser.add_argument(
        "--taxonomy", help="class-name file, one per line; defaults to the built-in road classes"
    )
    parser.add_argument(
        "--manifest", help="training-run metadata YAML, echoed into run_config.json"
    )
    parser.add_argument("--workers", type=int, help="worker threads for per-image work")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roadbench",
        description="Dataset analysis, augmentation, evaluation, and latency benchmarking "
        "for object detectors.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("analyze", help="dataset statistics, integrity findings, and charts")
    p.add_argument("--labels", help="directory of label files")
    p.add_argument("--images", help="directory of image files (optional)")
    p.add_argument("--image-dims", dest="image_dims", help="image dimension manifest file")
    p.add_argument("--rarity", type=int, help="instance count below which a class is flagged rare")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("augment", help="run a seeded augmentation pipeline over a dataset")
    p.add_argument("--labels", help="directory of label files")
    p.add_argument("--images", help="directory of image files")
    p.add_argument("--spec", help="augmentation pipeline YAML")
    p.add_argument("--seed", type=int, help="override the seed recorded in the spec")
    _add_common(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval", help="score prediction files against ground truth")
    p.add_argument("--labels", help="directory of label files")
    p.add_argument("--predictions", help="directory of prediction files")
    p.add_argument("--conf", type=float, help="confidence cut for P/R and confusion (default 0.25)")
    p.add_argument("--iou", type=float, help="IoU threshold for P/R and confusion (default 0.45)")
    p.add_argument("--ap-mode", dest="ap_mode", choices=AP_MODES, help="AP interpolation rule")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure per-stage detector latency")
    p.add_argument("--labels", help="directory of label files")
    p.add_argument("--images", help="directory of image files (required for external backends)")
    p.add_argument("--backend", choices=BACKEND_KINDS, help="detector backend to benchmark")
    p.add_argument("--command", help="external detector argv with {input_list} and {output_dir}")
    p.add_argument("--latency-ms", dest="latency_ms", type=float, help="fixed backend sleep time")
    p.add_argument("--drop-rate", dest="drop_rate", type=float, help="oracle: fraction of boxes dropped")
    p.add_argument("--jitter", type=float, help="oracle: box coordinate noise amplitude")
    p.add_argument("--conf-law", dest="conf_law", type=_conf_law, help="oracle: confidence value or low,high range")
    p.add_argument("--seed", type=int, help="oracle noise seed")
    p.add_argument("--warmup", type=int, help="leading images excluded from the summary")
    p.add_argument("--double-pass", dest="double_pass", action="store_true", help="mirror second pass with detection fusion")
    p.add_argument("--merge-iou", dest="merge_iou", type=float, help="IoU needed to fuse double-pass detections")
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="re-render a structured report document")
    p.add_argument("input", help="report.json produced by eval")
    p.add_argument("--format", help=f"one of {', '.join(REPORT_FORMATS)}")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
