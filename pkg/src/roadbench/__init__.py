"""Model-agnostic benchmarking toolkit for road-object detection datasets.

Ingests YOLO-format labels, runs seeded label-consistent augmentation,
scores detector outputs (mAP, per-class P/R, confusion matrix), and
measures staged inference latency for pluggable detector backends.
"""

from .augment import (
    AugmentationSpec,
    Blur,
    Grayscale,
    LabeledImage,
    MedianBlur,
    Mosaic4,
    Perspective,
    RandomScale,
    RandomTranslate,
    Resize,
    apply_pipeline,
    load_spec,
    mosaic4,
    save_spec,
)
from .backend import (
    BenchmarkResult,
    BenchmarkSummary,
    Detection,
    DetectionSet,
    DetectorBackend,
    DoublePassBackend,
    double_pass_refine,
    ExternalProcessBackend,
    FilePredictionsBackend,
    FixedLatencyBackend,
    OracleBackend,
    StageStats,
    TimingRecord,
    load_predictions,
    run_benchmark,
    summarize_timings,
    write_predictions,
)
from .dataset import (
    ClassTaxonomy,
    DatasetStats,
    Diagnostic,
    GroundTruthSet,
    ImageAnnotations,
    compute_stats,
    integrity_report,
    scan_dataset,
)
from .errors import ToolkitError
from .evaluation import (
    EvalReport,
    EvalSettings,
    average_precision,
    confusion_matrix,
    map_at,
    map_range,
    match_greedy,
    per_class_report,
    pr_curve,
)
from .geometry import AbsBox, ImageDims, NormBox, iou
from .reports import eval_report_from_json, eval_report_to_json, render_report

__version__ = "0.1.0"

__all__ = [
    "AbsBox",
    "AugmentationSpec",
    "BenchmarkResult",
    "BenchmarkSummary",
    "Blur",
    "ClassTaxonomy",
    "DatasetStats",
    "Detection",
    "DetectionSet",
    "DetectorBackend",
    "Diagnostic",
    "DoublePassBackend",
    "double_pass_refine",
    "EvalReport",
    "EvalSettings",
    "ExternalProcessBackend",
    "FilePredictionsBackend",
    "FixedLatencyBackend",
    "Grayscale",
    "GroundTruthSet",
    "ImageAnnotations",
    "ImageDims",
    "LabeledImage",
    "MedianBlur",
    "Mosaic4",
    "NormBox",
    "OracleBackend",
    "Perspective",
    "RandomScale",
    "RandomTranslate",
    "Resize",
    "StageStats",
    "TimingRecord",
    "ToolkitError",
    "apply_pipeline",
    "average_precision",
    "compute_stats",
    "confusion_matrix",
    "eval_report_from_json",
    "eval_report_to_json",
    "integrity_report",
    "iou",
    "load_predictions",
    "load_spec",
    "map_at",
    "map_range",
    "match_greedy",
    "mosaic4",
    "per_class_report",
    "pr_curve",
    "render_report",
    "run_benchmark",
    "save_spec",
    "scan_dataset",
    "summarize_timings",
    "write_predictions",
]
