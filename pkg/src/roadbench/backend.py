"""Pluggable detector backends, prediction-file I/O, and the latency harness.

A backend turns a labeled image into scored detections plus a per-stage
timing record. The toolkit never runs a neural network itself; it wraps
whatever produces detections: a directory of prediction files, an
external command, or the synthetic oracle used by the test suite.

Prediction file grammar, one detection per line::

    <class_id> <confidence> <cx> <cy> <w> <h>

Same lexical rules as label files, confidence first after the class.
Timing sidecar grammar, one line per image::

    <image_id> <preprocess_ms> <inference_ms> <postprocess_ms>
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import cv2
import numpy as np

from .augment import LabeledImage, mirror_image
from .dataset import ClassTaxonomy, GroundTruthSet
from .errors import (
    ClassOutOfRange,
    ConfidenceOutOfRange,
    CoordOutOfRange,
    IoFailure,
    MalformedLine,
    MissingOutput,
    NonZeroExit,
    SpawnFailure,
)
from .geometry import NormBox, flip_horizontal, iou, norm_corners
from .seeding import keyed_rng

SIDECAR_FILENAME = "timings.txt"


@dataclass(frozen=True)
class Detection:
    """One scored detector output."""

    class_index: int
    confidence: float
    box: NormBox

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class DetectionSet:
    """Detections keyed by image id."""

    images: dict[str, list[Detection]] = field(default_factory=dict)

    def image_ids(self) -> list[str]:
        return sorted(self.images)

    def for_image(self, image_id: str) -> list[Detection]:
        return self.images.get(image_id, [])

    def total(self) -> int:
        return sum(len(d) for d in self.images.values())


@dataclass(frozen=True)
class TimingRecord:
    """Per-image stage durations in milliseconds."""

    image_id: str
    preprocess_ms: float
    inference_ms: float
    postprocess_ms: float

    def __post_init__(self):
        for value in (self.preprocess_ms, self.inference_ms, self.postprocess_ms):
            if value < 0.0:
                raise ValueError(f"negative stage duration {value}")


class DetectorBackend:
    """Detector interface: one image in, detections and timings out.

    Implementations must either be stateless between calls or synchronize
    internally; the file and oracle backends are deterministic.
    """

    def detect(self, image: LabeledImage) -> tuple[list[Detection], TimingRecord]:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# prediction file I/O


def parse_prediction_line(line: str, taxonomy_size: int) -> Detection:
    """Parse one prediction line, range-checking every field."""
    fields_ = line.split()
    if len(fields_) != 6:
        raise MalformedLine(f"expected 6 fields, got {len(fields_)}: {line!r}")
    try:
        class_index = int(fields_[0])
    except ValueError as exc:
        raise MalformedLine(f"class id {fields_[0]!r} is not an integer") from exc
    try:
        confidence, cx, cy, w, h = (float(f) for f in fields_[1:])
    except ValueError as exc:
        raise MalformedLine(f"non-numeric field in {line!r}") from exc
    if not 0 <= class_index < taxonomy_size:
        raise ClassOutOfRange(f"class {class_index} outside [0, {taxonomy_size})")
    if not 0.0 <= confidence <= 1.0:
        raise ConfidenceOutOfRange(f"confidence {confidence} outside [0, 1]")
    for value in (cx, cy, w, h):
        if not 0.0 <= value <= 1.0:
            raise CoordOutOfRange(f"coordinate {value} outside [0, 1] in {line!r}")
    if w == 0.0 or h == 0.0:
        raise CoordOutOfRange(f"zero-size box in {line!r}")
    return Detection(class_index, confidence, NormBox(cx, cy, w, h))


def format_prediction_line(det: Detection) -> str:
    b = det.box
    return f"{det.class_index} {det.confidence:.6f} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}"


def load_predictions(path: Union[str, Path], taxonomy: ClassTaxonomy) -> DetectionSet:
    """Load per-image prediction files (`<image_id>.txt`) from a directory.

    Parse failures raise with file and line context; an empty file simply
    yields an empty detection list for that image.
    """
    directory = Path(path)
    if not directory.is_dir():
        raise IoFailure(f"predictions directory {directory} does not exist")
    det_set = DetectionSet()
    for file_path in sorted(directory.glob("*.txt")):
        if file_path.name == SIDECAR_FILENAME:
            continue
        det_set.images[file_path.stem] = _parse_prediction_file(file_path, len(taxonomy))
    return det_set


def _parse_prediction_file(file_path: Path, taxonomy_size: int) -> list[Detection]:
    dets: list[Detection] = []
    try:
        text = file_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read predictions {file_path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            dets.append(parse_prediction_line(line, taxonomy_size))
        except (MalformedLine, ClassOutOfRange, ConfidenceOutOfRange, CoordOutOfRange) as exc:
            raise type(exc)(f"{file_path}:{line_no}: {exc}") from exc
    return dets


def write_predictions(det_set: DetectionSet, directory: Union[str, Path]) -> None:
    """Write one prediction file per image; inverse of load_predictions."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for image_id in det_set.image_ids():
        lines = [format_prediction_line(d) for d in det_set.images[image_id]]
        (directory / f"{image_id}.txt").write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8"
        )


def parse_timing_sidecar(path: Path) -> dict[str, TimingRecord]:
    records: dict[str, TimingRecord] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields_ = line.split()
        if len(fields_) != 4:
            raise MalformedLine(f"{path}:{line_no}: expected 4 fields, got {len(fields_)}")
        try:
            records[fields_[0]] = TimingRecord(
                fields_[0], float(fields_[1]), float(fields_[2]), float(fields_[3])
            )
        except ValueError as exc:
            raise MalformedLine(f"{path}:{line_no}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# backends


class FilePredictionsBackend(DetectorBackend):
    """Serves detections from an already-loaded prediction set."""

    def __init__(self, predictions: DetectionSet):
        self.predictions = predictions

    def detect(self, image: LabeledImage) -> tuple[list[Detection], TimingRecord]:
        start = time.perf_counter()
        dets = list(self.predictions.for_image(image.image_id))
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        return dets, TimingRecord(image.image_id, 0.0, elapsed_ms, 0.0)


class OracleBackend(DetectorBackend):
    """Synthetic detector that degrades ground truth in a seeded way.

    Emits the ground-truth boxes for the image id, minus random drops,
    with optional coordinate jitter and confidences from conf_law (a
    constant, or a (lo, hi) tuple sampled uniformly). With all noise at
    zero and confidence 1 the output is identical to the ground truth,
    which pins downstream metrics at exactly 1.0.
    """

    def __init__(
        self,
        gt: GroundTruthSet,
        drop_rate: float = 0.0,
        jitter: float = 0.0,
        conf_law: Union[float, tuple[float, float]] = 1.0,
        seed: int = 0,
    ):
        if not 0.0 <= drop_rate <= 1.0:
            raise ValueError(f"drop_rate {drop_rate} outside [0, 1]")
        if not 0.0 <= jitter <= 1.0:
            raise ValueError(f"jitter {jitter} outside [0, 1]")
        self.gt = gt
        self.drop_rate = drop_rate
        self.jitter = jitter
        self.conf_law = conf_law
        self.seed = seed

    def _confidence(self, rng: np.random.Generator) -> float:
        if isinstance(self.conf_law, tuple):
            lo, hi = self.conf_law
            return float(rng.uniform(lo, hi))
        return float(self.conf_law)

    def detect(self, image: LabeledImage) -> tuple[list[Detection], TimingRecord]:
        start = time.perf_counter()
        rng = keyed_rng(self.seed, image.image_id)
        record = self.gt.images.get(image.image_id)
        boxes = record.boxes if record is not None else []
        dets: list[Detection] = []
        for class_index, box in boxes:
            if self.drop_rate > 0.0 and rng.random() < self.drop_rate:
                continue
            if self.jitter > 0.0:
                cx = box.cx + rng.uniform(-self.jitter, self.jitter) * box.w
                cy = box.cy + rng.uniform(-self.jitter, self.jitter) * box.h
                w = box.w * (1.0 + rng.uniform(-self.jitter, self.jitter))
                h = box.h * (1.0 + rng.uniform(-self.jitter, self.jitter))
                box = NormBox(
                    min(max(cx, 0.0), 1.0),
                    min(max(cy, 0.0), 1.0),
                    min(w, 1.0),
                    min(h, 1.0),
                )
            dets.append(Detection(class_index, self._confidence(rng), box))
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        return dets, TimingRecord(image.image_id, 0.0, elapsed_ms, 0.0)


class FixedLatencyBackend(DetectorBackend):
    """Fake backend that sleeps a fixed inference time; for harness checks."""

    def __init__(
        self,
        inference_ms: float,
        preprocess_ms: float = 0.0,
        postprocess_ms: float = 0.0,
        detections: Optional[Callable[[LabeledImage], list[Detection]]] = None,
    ):
        self.inference_ms = inference_ms
        self.preprocess_ms = preprocess_ms
        self.postprocess_ms = postprocess_ms
        self.detections = detections

    def detect(self, image: LabeledImage) -> tuple[list[Detection], TimingRecord]:
        start = time.perf_counter()
        if self.inference_ms > 0.0:
            time.sleep(self.inference_ms / 1000.0)
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        dets = self.detections(image) if self.detections is not None else []
        return dets, TimingRecord(image.image_id, self.preprocess_ms, elapsed_ms, self.postprocess_ms)


class ExternalProcessBackend(DetectorBackend):
    """Runs an external detector command over image files.

    The command is an argv template; every occurrence of ``{input_list}``
    is replaced by the path of a text file listing one image path per
    line, and ``{output_dir}`` by a directory where the command must write
    ``<image_id>.txt`` prediction files (and may write a ``timings.txt``
    sidecar). Exit code 0 means success.

    When a sidecar row exists for an image it wins over harness
    measurements; otherwise preprocess (staging the image file) and
    postprocess (parsing the outputs) are measured here and the spawn
    wall-clock is split evenly across the batch as inference time.
    """

    def __init__(
        self,
        command: Union[str, Sequence[str]],
        taxonomy: ClassTaxonomy,
        images_dir: Optional[Union[str, Path]] = None,
    ):
        self.argv_template = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv_template:
            raise ValueError("empty detector command")
        self.taxonomy = taxonomy
        self.images_dir = Path(images_dir) if images_dir is not None else None

    def detect(self, image: LabeledImage) -> tuple[list[Detection], TimingRecord]:
        return self.detect_many([image])[0]

    def detect_many(
        self, images: Sequence[LabeledImage]
    ) -> list[tuple[list[Detection], TimingRecord]]:
        with tempfile.TemporaryDirectory(prefix="roadbench-ext-") as tmp:
            tmp_path = Path(tmp)
            staging = tmp_path / "in"
            output_dir = tmp_path / "out"
            staging.mkdir()
            output_dir.mkdir()

            pre_ms: dict[str, float] = {}
            paths: list[Path] = []
            for img in images:
                start = time.perf_counter()
                paths.append(self._stage_image(img, staging))
                pre_ms[img.image_id] = (time.perf_counter() - start) * 1000.0

            input_list = tmp_path / "input_list.txt"
            input_list.write_text("".join(str(p) + "\n" for p in paths), encoding="utf-8")

            argv = [
                token.replace("{input_list}", str(input_list)).replace(
                    "{output_dir}", str(output_dir)
                )
                for token in self.argv_template
            ]
            spawn_start = time.perf_counter()
            try:
                proc = subprocess.run(argv, capture_output=True, text=True)
            except OSError as exc:
                raise SpawnFailure(f"cannot spawn {argv[0]!r}: {exc}") from exc
            wall_ms = (time.perf_counter() - spawn_start) * 1000.0
            if proc.returncode != 0:
                raise NonZeroExit(proc.returncode, proc.stderr)

            sidecar_path = output_dir / SIDECAR_FILENAME
            sidecar = parse_timing_sidecar(sidecar_path) if sidecar_path.exists() else {}

            share_ms = wall_ms / len(images)
            results: list[tuple[list[Detection], TimingRecord]] = []
            missing: list[str] = []
            for img in images:
                pred_path = output_dir / f"{img.image_id}.txt"
                if not pred_path.exists():
                    missing.append(img.image_id)
                    continue
                post_start = time.perf_counter()
                dets = _parse_prediction_file(pred_path, len(self.taxonomy))
                post_ms = (time.perf_counter() - post_start) * 1000.0
                timing = sidecar.get(img.image_id) or TimingRecord(
                    img.image_id, pre_ms[img.image_id], share_ms, post_ms
                )
                results.append((dets, timing))
            if missing:
                raise MissingOutput(f"no prediction file for image(s): {', '.join(missing)}")
            return results

    def _stage_image(self, img: LabeledImage, staging: Path) -> Path:
        if self.images_dir is not None:
            for suffix in (".png", ".jpg", ".jpeg", ".bmp", ".webp"):
                existing = self.images_dir / f"{img.image_id}{suffix}"
                if existing.exists():
                    return existing
        path = staging / f"{img.image_id}.png"
        ok = cv2.imwrite(str(path), cv2.cvtColor(img.pixels, cv2.COLOR_RGB2BGR))
        if not ok:
            raise IoFailure(f"failed to encode staging image {path}")
        return path


class DoublePassBackend(DetectorBackend):
    """Runs the wrapped backend on the image and its horizontal mirror.

    Pass-two boxes are un-mirrored back into the original frame, then the
    union is fused greedily: in descending confidence order, detections of
    the same class *from the opposite pass* with IoU >= merge_iou against
    the current seed collapse into one confidence-weighted average box
    carrying the maximum confidence. Fusion never merges two detections of
    the same pass, so a crowded scene the detector resolved correctly stays
    resolved. Stage timings of both passes are summed.
    """

    def __init__(self, inner: DetectorBackend, merge_iou: float = 0.5):
        if merge_iou <= 0.0:
            raise ValueError(f"merge_iou must be positive, got {merge_iou}")
        self.inner = inner
        self.merge_iou = merge_iou

    def detect(self, image: LabeledImage) -> tuple[list[Detection], TimingRecord]:
        dets_a, timing_a = self.inner.detect(image)
        dets_b_mirrored, timing_b = self.inner.detect(mirror_image(image))
        dets_b = [
            Detection(d.class_index, d.confidence, flip_horizontal(d.box))
            for d in dets_b_mirrored
        ]
        fused = fuse_detections(
            list(dets_a) + dets_b,
            self.merge_iou,
            groups=[0] * len(dets_a) + [1] * len(dets_b),
        )
        timing = TimingRecord(
            image.image_id,
            timing_a.preprocess_ms + timing_b.preprocess_ms,
            timing_a.inference_ms + timing_b.inference_ms,
            timing_a.postprocess_ms + timing_b.postprocess_ms,
        )
        return fused, timing


def fuse_detections(
    dets: Sequence[Detection],
    merge_iou: float,
    groups: Optional[Sequence[int]] = None,
) -> list[Detection]:
    """Greedy confidence-ordered fusion of overlapping same-class detections.

    With merge_iou > 1 nothing can fuse and the result is the plain union.
    When groups are given, a seed only absorbs detections from a different
    group: each pass of a detector is assumed deduplicated already, so two
    boxes it deliberately kept apart must never collapse into one.
    """
    if groups is not None and len(groups) != len(dets):
        raise ValueError(f"got {len(groups)} group labels for {len(dets)} detections")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    used = [False] * len(dets)
    fused: list[Detection] = []
    for i in order:
        if used[i]:
            continue
        used[i] = True
        seed = dets[i]
        seed_corners = norm_corners(seed.box)
        cluster = [seed]
        for j in order:
            if used[j] or dets[j].class_index != seed.class_index:
                continue
            if groups is not None and groups[j] == groups[i]:
                continue
            if iou(norm_corners(dets[j].box), seed_corners) >= merge_iou:
                used[j] = True
                cluster.append(dets[j])
        if len(cluster) == 1:
            fused.append(seed)
            continue
        total = sum(d.confidence for d in cluster)
        box = NormBox(
            sum(d.confidence * d.box.cx for d in cluster) / total,
            sum(d.confidence * d.box.cy for d in cluster) / total,
            sum(d.confidence * d.box.w for d in cluster) / total,
            sum(d.confidence * d.box.h for d in cluster) / total,
        )
        fused.append(Detection(seed.class_index, seed.confidence, box))
    return fused


# construction helpers mirroring the operation names used elsewhere


def oracle_detector(
    gt: GroundTruthSet,
    drop_rate: float = 0.0,
    jitter: float = 0.0,
    conf_law: Union[float, tuple[float, float]] = 1.0,
    seed: int = 0,
) -> OracleBackend:
    return OracleBackend(gt, drop_rate=drop_rate, jitter=jitter, conf_law=conf_law, seed=seed)


def external_detector(
    command: Union[str, Sequence[str]],
    taxonomy: ClassTaxonomy,
    images_dir: Optional[Union[str, Path]] = None,
) -> ExternalProcessBackend:
    return ExternalProcessBackend(command, taxonomy, images_dir=images_dir)


def double_pass_refine(backend: DetectorBackend, merge_iou: float = 0.5) -> DoublePassBackend:
    return DoublePassBackend(backend, merge_iou)


# ---------------------------------------------------------------------------
# latency harness


@dataclass(frozen=True)
class StageStats:
    """Summary statistics for one pipeline stage, in milliseconds."""

    mean: float
    median: float
    p95: float
    minimum: float
    maximum: float

    @classmethod
    def from_samples(cls, samples: Sequence[float]) -> "StageStats":
        if not samples:
            return cls(0.0, 0.0, 0.0, 0.0, 0.0)
        arr = np.asarray(samples, dtype=np.float64)
        return cls(
            mean=float(arr.mean()),
            median=float(np.median(arr)),
            p95=float(np.percentile(arr, 95)),
            minimum=float(arr.min()),
            maximum=float(arr.max()),
        )

    def to_dict(self) -> dict:
        return {
            "mean_ms": self.mean,
            "median_ms": self.median,
            "p95_ms": self.p95,
            "min_ms": self.minimum,
            "max_ms": self.maximum,
        }


@dataclass(frozen=True)
class BenchmarkSummary:
    """Per-stage latency statistics over the measured (post-warmup) images."""

    preprocess: StageStats
    inference: StageStats
    postprocess: StageStats
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "preprocess": self.preprocess.to_dict(),
            "inference": self.inference.to_dict(),
            "postprocess": self.postprocess.to_dict(),
        }


@dataclass
class BenchmarkResult:
    detections: DetectionSet
    records: list[TimingRecord]
    summary: BenchmarkSummary
    failures: list[tuple[str, str]] = field(default_factory=list)


def summarize_timings(records: Sequence[TimingRecord]) -> BenchmarkSummary:
    """Order-invariant per-stage summary of timing records."""
    return BenchmarkSummary(
        preprocess=StageStats.from_samples([r.preprocess_ms for r in records]),
        inference=StageStats.from_samples([r.inference_ms for r in records]),
        postprocess=StageStats.from_samples([r.postprocess_ms for r in records]),
        sample_count=len(records),
    )


def run_benchmark(
    backend: DetectorBackend,
    images: Sequence[LabeledImage],
    warmup: int = 0,
) -> BenchmarkResult:
    """Run the backend over every image, timing each call.

    The first `warmup` successful images are excluded from the summary to
    skip cold-start effects; their detections and records are still
    returned. Per-image backend errors are collected, not raised, and the
    summary covers successful images only.
    """
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    if warmup >= len(images):
        raise ValueError(f"warmup {warmup} must be smaller than image count {len(images)}")
    detections = DetectionSet()
    records: list[TimingRecord] = []
    failures: list[tuple[str, str]] = []
    for img in images:
        try:
            dets, timing = backend.detect(img)
        except Exception as exc:  # per-image isolation; summary covers successes
            failures.append((img.image_id, f"{type(exc).__name__}: {exc}"))
            continue
        detections.images[img.image_id] = dets
        records.append(timing)
    summary = summarize_timings(records[warmup:])
    return BenchmarkResult(detections, records, summary, failures)
