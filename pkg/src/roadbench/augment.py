"""Deterministic, seeded, label-consistent image augmentation.

Every random draw comes from a counter-based stream keyed by
(pipeline seed, image id, step index), so the same spec applied to the
same inputs produces bit-identical outputs regardless of worker count or
processing order. Geometric steps move labels through the exact same
transform as the pixels (corner warp, clip, visibility filter);
photometric steps never touch labels.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import cv2
import numpy as np
import yaml

from .errors import ConfigError, DegenerateTransform, KernelTooLarge
from .geometry import ImageDims, NormBox, abs_to_norm, clip_box, norm_to_abs, warp_box
from .seeding import keyed_rng


@dataclass
class LabeledImage:
    """An 8-bit RGB image with its normalized box annotations."""

    image_id: str
    pixels: np.ndarray  # uint8, height x width x 3
    boxes: list[tuple[int, NormBox]] = field(default_factory=list)

    def __post_init__(self):
        px = self.pixels
        if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be uint8 HxWx3, got {px.dtype} {px.shape}")

    @property
    def dims(self) -> ImageDims:
        return ImageDims(self.pixels.shape[1], self.pixels.shape[0])


def _check_probability(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"step probability {p} outside [0, 1]")


def _check_kernel(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"filter kernel must be odd and >= 1, got {k}")


@dataclass(frozen=True)
class Resize:
    width: int
    height: int
    probability: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"resize target must be >= 1, got {self.width}x{self.height}")
        _check_probability(self.probability)


@dataclass(frozen=True)
class Blur:
    kernel: int = 3
    probability: float = 1.0

    def __post_init__(self):
        _check_kernel(self.kernel)
        _check_probability(self.probability)


@dataclass(frozen=True)
class MedianBlur:
    kernel: int = 3
    probability: float = 1.0

    def __post_init__(self):
        _check_kernel(self.kernel)
        _check_probability(self.probability)


@dataclass(frozen=True)
class Grayscale:
    probability: float = 1.0

    def __post_init__(self):
        _check_probability(self.probability)


@dataclass(frozen=True)
class Perspective:
    max_corner_jitter: float = 0.05
    probability: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.max_corner_jitter < 0.5:
            raise ConfigError(f"corner jitter {self.max_corner_jitter} outside [0, 0.5)")
        _check_probability(self.probability)


@dataclass(frozen=True)
class RandomScale:
    lo: float = 0.9
    hi: float = 1.1
    probability: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.lo <= self.hi:
            raise ConfigError(f"scale range [{self.lo}, {self.hi}] invalid")
        _check_probability(self.probability)


@dataclass(frozen=True)
class RandomTranslate:
    max_dx: float = 0.1
    max_dy: float = 0.1
    probability: float = 1.0

    def __post_init__(self):
        if self.max_dx < 0.0 or self.max_dy < 0.0:
            raise ConfigError("translate limits must be >= 0")
        _check_probability(self.probability)


@dataclass(frozen=True)
class Mosaic4:
    probability: float = 1.0

    def __post_init__(self):
        _check_probability(self.probability)


Step = Union[Resize, Blur, MedianBlur, Grayscale, Perspective, RandomScale, RandomTranslate, Mosaic4]

_STEP_TYPES: dict[str, type] = {
    "resize": Resize,
    "blur": Blur,
    "median_blur": MedianBlur,
    "grayscale": Grayscale,
    "perspective": Perspective,
    "random_scale": RandomScale,
    "random_translate": RandomTranslate,
    "mosaic4": Mosaic4,
}
_STEP_NAMES = {cls: name for name, cls in _STEP_TYPES.items()}


@dataclass(frozen=True)
class AugmentationSpec:
    """Ordered augmentation steps plus the seed and visibility floor."""

    steps: tuple[Step, ...]
    seed: int = 0
    min_visibility: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.min_visibility <= 1.0:
            raise ConfigError(f"min_visibility {self.min_visibility} outside [0, 1]")

    def to_dict(self) -> dict:
        steps = []
        for step in self.steps:
            entry: dict = {"type": _STEP_NAMES[type(step)]}
            for f in fields(step):
                value = getattr(step, f.name)
                if f.name == "probability" and value == 1.0:
                    continue
                entry[f.name] = value
            steps.append(entry)
        return {"seed": self.seed, "min_visibility": self.min_visibility, "steps": steps}

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentationSpec":
        if not isinstance(data, dict):
            raise ConfigError("augmentation spec must be a mapping")
        known = {"seed", "min_visibility", "steps"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown spec keys: {sorted(unknown)}")
        raw_steps = data.get("steps", [])
        if not isinstance(raw_steps, list):
            raise ConfigError("spec 'steps' must be a list")
        steps = []
        for i, raw in enumerate(raw_steps):
            if not isinstance(raw, dict) or "type" not in raw:
                raise ConfigError(f"step {i} must be a mapping with a 'type' key")
            step_type = raw["type"]
            if step_type not in _STEP_TYPES:
                raise ConfigError(f"step {i}: unknown type {step_type!r}")
            params = {k: v for k, v in raw.items() if k != "type"}
            try:
                steps.append(_STEP_TYPES[step_type](**params))
            except TypeError as exc:
                raise ConfigError(f"step {i} ({step_type}): {exc}") from exc
        seed = data.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError(f"seed must be an integer, got {seed!r}")
        return cls(
            steps=tuple(steps),
            seed=seed,
            min_visibility=float(data.get("min_visibility", 0.1)),
        )


def load_spec(path: str | Path) -> AugmentationSpec:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read spec file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"spec file {path} is not valid YAML: {exc}") from exc
    return AugmentationSpec.from_dict(data or {})


def save_spec(spec: AugmentationSpec, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(spec.to_dict(), sort_keys=False), encoding="utf-8")


def step_rng(seed: int, image_id: str, step_index: int) -> np.random.Generator:
    """Counter-based random stream for one (image, step) pair.

    Keying by content rather than call order is what makes pipeline output
    independent of scheduling and worker count.
    """
    return keyed_rng(seed, image_id, step_index)


# ---------------------------------------------------------------------------
# photometric steps (labels never change)


def resize_with_labels(img: LabeledImage, target: ImageDims) -> LabeledImage:
    """Bilinear resample; normalization absorbs a pure resize, labels stay put."""
    if img.dims == target:
        return LabeledImage(img.image_id, img.pixels.copy(), list(img.boxes))
    resized = cv2.resize(img.pixels, (target.width, target.height), interpolation=cv2.INTER_LINEAR)
    return LabeledImage(img.image_id, resized, list(img.boxes))


def blur(img: LabeledImage, kernel: int) -> LabeledImage:
    """Box-mean filter per channel with edge-replicate padding."""
    _require_kernel_fits(img, kernel)
    if kernel == 1:
        return LabeledImage(img.image_id, img.pixels.copy(), list(img.boxes))
    out = cv2.blur(img.pixels, (kernel, kernel), borderType=cv2.BORDER_REPLICATE)
    return LabeledImage(img.image_id, out, list(img.boxes))


def median_blur(img: LabeledImage, kernel: int) -> LabeledImage:
    """Median filter per channel with edge-replicate padding."""
    _require_kernel_fits(img, kernel)
    if kernel == 1:
        return LabeledImage(img.image_id, img.pixels.copy(), list(img.boxes))
    out = cv2.medianBlur(np.ascontiguousarray(img.pixels), kernel)
    return LabeledImage(img.image_id, out, list(img.boxes))


def _require_kernel_fits(img: LabeledImage, kernel: int) -> None:
    if kernel % 2 == 0 or kernel < 1:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    dims = img.dims
    if kernel > min(dims.width, dims.height):
        raise KernelTooLarge(f"kernel {kernel} exceeds image extent {dims.width}x{dims.height}")


_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def grayscale(img: LabeledImage) -> LabeledImage:
    """Replace RGB with luma replicated to 3 channels; idempotent."""
    y = np.rint(img.pixels.astype(np.float64) @ _LUMA)
    y = np.clip(y, 0, 255).astype(np.uint8)
    return LabeledImage(img.image_id, np.repeat(y[:, :, None], 3, axis=2), list(img.boxes))


# ---------------------------------------------------------------------------
# geometric steps


def homography_from_corners(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 projective matrix mapping four src points onto four dst points."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("need exactly four 2D point correspondences")
    a = np.zeros((8, 8), dtype=np.float64)
    b = np.zeros(8, dtype=np.float64)
    for i in range(4):
        x, y = src[i]
        u, v = dst[i]
        a[2 * i] = [x, y, 1, 0, 0, 0, -x * u, -y * u]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -x * v, -y * v]
        b[2 * i] = u
        b[2 * i + 1] = v
    try:
        coeffs = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateTransform(f"corner correspondence is singular: {exc}") from exc
    return np.append(coeffs, 1.0).reshape(3, 3)


def sample_perspective_matrix(
    dims: ImageDims, max_corner_jitter: float, rng: np.random.Generator
) -> np.ndarray:
    """Homography induced by jittering each image corner uniformly in +/- jitter * dims."""
    w, h = float(dims.width), float(dims.height)
    src = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])
    dst = src.copy()
    for i in range(4):
        dst[i, 0] += rng.uniform(-max_corner_jitter * w, max_corner_jitter * w)
        dst[i, 1] += rng.uniform(-max_corner_jitter * h, max_corner_jitter * h)
    return homography_from_corners(src, dst)


def sample_affine_matrix(
    dims: ImageDims,
    scale_lo: float,
    scale_hi: float,
    max_dx: float,
    max_dy: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Random scale about the image center followed by a random translation."""
    s = rng.uniform(scale_lo, scale_hi)
    dx = rng.uniform(-max_dx, max_dx) * dims.width
    dy = rng.uniform(-max_dy, max_dy) * dims.height
    cx, cy = dims.width / 2.0, dims.height / 2.0
    return np.array(
        [
            [s, 0.0, cx - s * cx + dx],
            [0.0, s, cy - s * cy + dy],
            [0.0, 0.0, 1.0],
        ]
    )


def transform_boxes(
    boxes: Sequence[tuple[int, NormBox]],
    matrix: np.ndarray,
    dims: ImageDims,
    min_visibility: float,
) -> list[tuple[int, NormBox]]:
    """Map boxes through a projective transform: warp corners, clip, filter.

    A box is dropped when its clipped area falls below min_visibility of
    the warped (pre-clip) area.
    """
    out: list[tuple[int, NormBox]] = []
    for class_index, box in boxes:
        warped = warp_box(norm_to_abs(box, dims), matrix)
        clipped = clip_box(warped, dims)
        if clipped is None:
            continue
        if clipped.area / warped.area < min_visibility:
            continue
        out.append((class_index, abs_to_norm(clipped, dims)))
    return out


def warp_image_and_labels(
    img: LabeledImage, matrix: np.ndarray, min_visibility: float
) -> LabeledImage:
    """Warp pixels (bilinear, black fill) and labels by the same homography."""
    dims = img.dims
    pixels = cv2.warpPerspective(
        img.pixels,
        matrix,
        (dims.width, dims.height),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=(0, 0, 0),
    )
    boxes = transform_boxes(img.boxes, matrix, dims, min_visibility)
    return LabeledImage(img.image_id, pixels, boxes)


def perspective_with_labels(
    img: LabeledImage,
    max_corner_jitter: float,
    min_visibility: float,
    rng: np.random.Generator,
) -> LabeledImage:
    """Random perspective warp. Retries once on a degenerate corner draw."""
    if max_corner_jitter == 0.0:
        return LabeledImage(img.image_id, img.pixels.copy(), list(img.boxes))
    for attempt in range(2):
        matrix = sample_perspective_matrix(img.dims, max_corner_jitter, rng)
        try:
            return warp_image_and_labels(img, matrix, min_visibility)
        except DegenerateTransform:
            if attempt == 1:
                raise
    raise AssertionError("unreachable")


def scale_translate_with_labels(
    img: LabeledImage,
    scale_lo: float,
    scale_hi: float,
    max_dx: float,
    max_dy: float,
    min_visibility: float,
    rng: np.random.Generator,
) -> LabeledImage:
    """Random affine scale/translate applied to pixels and labels alike."""
    if scale_lo == scale_hi == 1.0 and max_dx == 0.0 and max_dy == 0.0:
        return LabeledImage(img.image_id, img.pixels.copy(), list(img.boxes))
    matrix = sample_affine_matrix(img.dims, scale_lo, scale_hi, max_dx, max_dy, rng)
    return warp_image_and_labels(img, matrix, min_visibility)


def mosaic4(
    imgs: Sequence[LabeledImage],
    target: ImageDims,
    rng: np.random.Generator,
    min_visibility: float = 0.1,
    pivot: Optional[tuple[float, float]] = None,
    image_id: Optional[str] = None,
) -> LabeledImage:
    """Composite four images around a pivot, remapping labels into the target.

    The pivot is sampled uniformly in the central [0.25, 0.75]^2 region
    unless given explicitly. Inputs land in TL, TR, BL, BR quadrant order,
    each stretched to fill its quadrant.
    """
    if len(imgs) != 4:
        raise ValueError(f"mosaic needs exactly 4 images, got {len(imgs)}")
    if target.width < 2 or target.height < 2:
        raise ValueError("mosaic target must be at least 2x2")
    if pivot is None:
        pivot = (rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75))
    px = min(max(int(round(pivot[0] * target.width)), 1), target.width - 1)
    py = min(max(int(round(pivot[1] * target.height)), 1), target.height - 1)

    quadrants = (
        (0, 0, px, py),
        (px, 0, target.width, py),
        (0, py, px, target.height),
        (px, py, target.width, target.height),
    )
    canvas = np.zeros((target.height, target.width, 3), dtype=np.uint8)
    boxes: list[tuple[int, NormBox]] = []
    for img, (x0, y0, x1, y1) in zip(imgs, quadrants):
        qw, qh = x1 - x0, y1 - y0
        canvas[y0:y1, x0:x1] = cv2.resize(img.pixels, (qw, qh), interpolation=cv2.INTER_LINEAR)
        for class_index, b in img.boxes:
            remapped = NormBox(
                (x0 + b.cx * qw) / target.width,
                (y0 + b.cy * qh) / target.height,
                b.w * qw / target.width,
                b.h * qh / target.height,
            )
            pre_clip = norm_to_abs(remapped, target)
            clipped = clip_box(pre_clip, target)
            if clipped is None:
                continue
            if clipped.area / pre_clip.area < min_visibility:
                continue
            boxes.append((class_index, abs_to_norm(clipped, target)))
    if image_id is None:
        image_id = f"{imgs[0].image_id}_mosaic"
    return LabeledImage(image_id, canvas, boxes)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class StepReport:
    step: str
    applied: int = 0
    dropped_boxes: int = 0
    dropped_images: int = 0

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "applied": self.applied,
            "dropped_boxes": self.dropped_boxes,
            "dropped_images": self.dropped_images,
        }


@dataclass
class PipelineReport:
    steps: list[StepReport] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    @property
    def failed_image_ids(self) -> list[str]:
        return sorted({e["image_id"] for e in self.errors})

    def to_dict(self) -> dict:
        return {"steps": [s.to_dict() for s in self.steps], "errors": self.errors}


def _gate(step: Step, rng: np.random.Generator) -> bool:
    if step.probability >= 1.0:
        return True
    return bool(rng.random() < step.probability)


def _apply_step(img: LabeledImage, step: Step, min_visibility: float, rng: np.random.Generator) -> LabeledImage:
    if isinstance(step, Resize):
        return resize_with_labels(img, ImageDims(step.width, step.height))
    if isinstance(step, Blur):
        return blur(img, step.kernel)
    if isinstance(step, MedianBlur):
        return median_blur(img, step.kernel)
    if isinstance(step, Grayscale):
        return grayscale(img)
    if isinstance(step, Perspective):
        return perspective_with_labels(img, step.max_corner_jitter, min_visibility, rng)
    if isinstance(step, RandomScale):
        return scale_translate_with_labels(img, step.lo, step.hi, 0.0, 0.0, min_visibility, rng)
    if isinstance(step, RandomTranslate):
        return scale_translate_with_labels(img, 1.0, 1.0, step.max_dx, step.max_dy, min_visibility, rng)
    raise AssertionError(f"unhandled step type {type(step).__name__}")


def apply_pipeline(
    imgs: Sequence[LabeledImage],
    spec: AugmentationSpec,
    workers: int = 1,
) -> tuple[list[LabeledImage], PipelineReport]:
    """Run every step of the spec, in order, over the image stream.

    Images are processed in sorted-id order. Per-image step failures are
    recorded and drop that image from the stream without aborting the
    rest. Mosaic steps consume consecutive groups of four; a remainder of
    fewer than four images is dropped and counted in the step report.
    """
    stream = sorted(imgs, key=lambda im: im.image_id)
    report = PipelineReport()

    for step_index, step in enumerate(spec.steps):
        step_name = _STEP_NAMES[type(step)]
        step_report = StepReport(step=step_name)

        if isinstance(step, Mosaic4):
            groups = [stream[i : i + 4] for i in range(0, len(stream) - 3, 4)]
            leftover = len(stream) % 4
            if leftover:
                step_report.dropped_images += leftover
            next_stream: list[LabeledImage] = []
            for group in groups:
                group_key = "|".join(im.image_id for im in group)
                rng = step_rng(spec.seed, group_key, step_index)
                if not _gate(step, rng):
                    next_stream.extend(group)
                    continue
                target = group[0].dims
                out = mosaic4(
                    group,
                    target,
                    rng,
                    min_visibility=spec.min_visibility,
                    image_id=f"{group[0].image_id}_mosaic",
                )
                step_report.applied += 1
                step_report.dropped_boxes += sum(len(im.boxes) for im in group) - len(out.boxes)
                next_stream.append(out)
            stream = next_stream
        else:

            def work(img: LabeledImage):
                rng = step_rng(spec.seed, img.image_id, step_index)
                if not _gate(step, rng):
                    return img, None
                try:
                    return _apply_step(img, step, spec.min_visibility, rng), None
                except Exception as exc:  # recorded per image, stream continues
                    return None, f"{type(exc).__name__}: {exc}"

            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(work, stream))
            else:
                results = [work(img) for img in stream]

            next_stream = []
            for img, (out, error) in zip(stream, results):
                if error is not None:
                    report.errors.append(
                        {"image_id": img.image_id, "step": step_name, "error": error}
                    )
                    continue
                if out is not img:
                    step_report.applied += 1
                    step_report.dropped_boxes += len(img.boxes) - len(out.boxes)
                next_stream.append(out)
            stream = next_stream

        report.steps.append(step_report)

    return stream, report


def mirror_image(img: LabeledImage) -> LabeledImage:
    """Horizontal mirror of pixels and annotations together."""
    flipped = np.ascontiguousarray(img.pixels[:, ::-1, :])
    boxes = [(c, NormBox(1.0 - b.cx, b.cy, b.w, b.h)) for c, b in img.boxes]
    return LabeledImage(img.image_id, flipped, boxes)
