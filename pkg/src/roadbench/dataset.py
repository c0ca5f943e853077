"""YOLO-format label ingestion, dataset indexing, and distribution statistics.

Label grammar, one object per line::

    <class_id> <cx> <cy> <w> <h>

ASCII, space-separated, '.'-decimal, newline-terminated; class_id is a
base-10 integer and the four coordinates are normalized to [0, 1].
Malformed lines are skipped with diagnostics rather than aborting a scan,
since real dataset dumps contain noise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .errors import ClassOutOfRange, ConfigError, CoordOutOfRange, IoFailure, MalformedLine
from .geometry import ImageDims, NormBox

# Bangladeshi road-object taxonomy, 13 classes, indices stable.
DEFAULT_CLASS_NAMES = (
    "auto-rickshaw",
    "bicycle",
    "bus",
    "car",
    "cart-vehicle",
    "construction-vehicle",
    "motorbike",
    "person",
    "priority-vehicle",
    "three-wheeler",
    "train",
    "truck",
    "wheelchair",
)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")

SIZE_HIST_BINS = 64


def canonical_class_name(name: str) -> str:
    """Lowercase and map space/hyphen/underscore runs to a single hyphen.

    Dataset sources spell class names inconsistently ("auto rickshaw" vs
    "auto-rickshaw"); lookups go through this canonical form.
    """
    return re.sub(r"[\s_-]+", "-", name.strip().lower())


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class-name list; index equals position."""

    names: tuple[str, ...]

    def __post_init__(self):
        canon = [canonical_class_name(n) for n in self.names]
        if len(set(canon)) != len(canon):
            raise ConfigError("taxonomy contains duplicate class names")
        if any(not n for n in canon):
            raise ConfigError("taxonomy contains an empty class name")

    @classmethod
    def default(cls) -> "ClassTaxonomy":
        return cls(DEFAULT_CLASS_NAMES)

    @classmethod
    def from_file(cls, path: str | Path) -> "ClassTaxonomy":
        """One class name per line, index = 0-based line number."""
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read taxonomy file {path}: {exc}") from exc
        names = [ln.strip() for ln in lines if ln.strip()]
        if not names:
            raise ConfigError(f"taxonomy file {path} is empty")
        return cls(tuple(names))

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.names) + "\n", encoding="utf-8")

    def index_of(self, name: str) -> int:
        canon = canonical_class_name(name)
        for i, n in enumerate(self.names):
            if canonical_class_name(n) == canon:
                return i
        raise KeyError(name)

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)


@dataclass(frozen=True)
class Diagnostic:
    """One non-fatal finding from scanning or integrity checking."""

    code: str
    message: str
    image_id: Optional[str] = None
    path: Optional[str] = None
    line_no: Optional[int] = None

    def render(self) -> str:
        where = ""
        if self.path is not None:
            where = f" [{self.path}" + (f":{self.line_no}]" if self.line_no else "]")
        elif self.image_id is not None:
            where = f" [{self.image_id}]"
        return f"{self.code}: {self.message}{where}"


@dataclass
class ImageAnnotations:
    """Ground truth for one image: identity, dimensions, labeled boxes."""

    image_id: str
    dims: Optional[ImageDims]
    boxes: list[tuple[int, NormBox]] = field(default_factory=list)


@dataclass
class GroundTruthSet:
    """Labeled images keyed by image id, plus the taxonomy they index into."""

    taxonomy: ClassTaxonomy
    images: dict[str, ImageAnnotations] = field(default_factory=dict)

    def image_ids(self) -> list[str]:
        return sorted(self.images)

    def total_instances(self) -> int:
        return sum(len(rec.boxes) for rec in self.images.values())

    def class_counts(self) -> list[int]:
        counts = [0] * len(self.taxonomy)
        for rec in self.images.values():
            for class_index, _ in rec.boxes:
                counts[class_index] += 1
        return counts


@dataclass
class DatasetStats:
    """Distribution statistics over a ground-truth set.

    size_hist is a SIZE_HIST_BINS x SIZE_HIST_BINS count grid over
    normalized (w, h) in [0, 1]^2; objects_per_image maps an object count
    to the number of images holding exactly that many.
    """

    image_count: int
    class_counts: list[int]
    size_hist: np.ndarray
    objects_per_image: dict[int, int]

    @property
    def total_instances(self) -> int:
        return sum(self.class_counts)


def parse_label_line(line: str, taxonomy_size: int) -> tuple[int, NormBox]:
    """Parse one label line into (class index, NormBox).

    Raises MalformedLine on bad field count or non-numeric fields,
    ClassOutOfRange when the index is outside [0, taxonomy_size), and
    CoordOutOfRange when a coordinate leaves [0, 1] or w/h is zero.
    """
    fields = line.split()
    if len(fields) != 5:
        raise MalformedLine(f"expected 5 fields, got {len(fields)}: {line!r}")
    try:
        class_index = int(fields[0])
    except ValueError as exc:
        raise MalformedLine(f"class id {fields[0]!r} is not an integer") from exc
    try:
        cx, cy, w, h = (float(f) for f in fields[1:])
    except ValueError as exc:
        raise MalformedLine(f"non-numeric coordinate in {line!r}") from exc
    if not 0 <= class_index < taxonomy_size:
        raise ClassOutOfRange(f"class {class_index} outside [0, {taxonomy_size})")
    for value in (cx, cy, w, h):
        if not 0.0 <= value <= 1.0:
            raise CoordOutOfRange(f"coordinate {value} outside [0, 1] in {line!r}")
    if w == 0.0 or h == 0.0:
        raise CoordOutOfRange(f"zero-size box in {line!r}")
    return class_index, NormBox(cx, cy, w, h)


def format_label_line(class_index: int, box: NormBox) -> str:
    """Emit the canonical 6-decimal label line (no trailing newline)."""
    return f"{class_index} {box.cx:.6f} {box.cy:.6f} {box.w:.6f} {box.h:.6f}"


def read_label_file(
    path: Path, taxonomy_size: int, image_id: Optional[str] = None
) -> tuple[list[tuple[int, NormBox]], list[Diagnostic]]:
    """Read a label file, skipping bad lines and reporting them."""
    boxes: list[tuple[int, NormBox]] = []
    diags: list[Diagnostic] = []
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read label file {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            boxes.append(parse_label_line(line, taxonomy_size))
        except (MalformedLine, ClassOutOfRange, CoordOutOfRange) as exc:
            diags.append(
                Diagnostic(
                    code=type(exc).__name__,
                    message=str(exc),
                    image_id=image_id,
                    path=str(path),
                    line_no=line_no,
                )
            )
    return boxes, diags


def write_label_file(path: Path, boxes: Iterable[tuple[int, NormBox]]) -> None:
    lines = [format_label_line(c, b) for c, b in boxes]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_manifest(path: str | Path) -> dict[str, ImageDims]:
    """Read an image-dimension manifest: `<image_id> <width> <height>` per line."""
    dims: dict[str, ImageDims] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 3:
            raise MalformedLine(f"manifest line {line_no}: expected 3 fields, got {len(fields)}")
        try:
            dims[fields[0]] = ImageDims(int(fields[1]), int(fields[2]))
        except ValueError as exc:
            raise MalformedLine(f"manifest line {line_no}: {exc}") from exc
    return dims


def read_image_dims(path: Path) -> ImageDims:
    """Image dimensions from the file header, without decoding pixels."""
    try:
        with Image.open(path) as im:
            width, height = im.size
    except OSError as exc:
        raise IoFailure(f"cannot read image {path}: {exc}") from exc
    return ImageDims(width, height)


def find_image_files(images_dir: str | Path) -> dict[str, Path]:
    """Map image id (file stem) to path for every image file in a directory."""
    found: dict[str, Path] = {}
    for path in sorted(Path(images_dir).iterdir()):
        if path.suffix.lower() in IMAGE_SUFFIXES and path.is_file():
            found[path.stem] = path
    return found


def scan_dataset(
    images_dir: Optional[str | Path],
    labels_dir: str | Path,
    taxonomy: ClassTaxonomy,
    manifest: Optional[dict[str, ImageDims]] = None,
) -> tuple[GroundTruthSet, list[Diagnostic]]:
    """Build a ground-truth index from a label directory.

    Labels pair with images by file stem. When images_dir is given, every
    image yields an entry (empty annotation list if its label file is
    missing) and dimensions come from image headers; label files without a
    matching image are reported as orphans. When images_dir is None the
    entries come from the label files themselves and dimensions come from
    the manifest, if any — evaluation does not need pixels.

    Per-file parse problems become diagnostics, never exceptions; the
    returned set is sorted by image id and independent of filesystem
    enumeration order.
    """
    labels_dir = Path(labels_dir)
    if not labels_dir.is_dir():
        raise IoFailure(f"labels directory {labels_dir} does not exist")
    manifest = manifest or {}

    label_files = {p.stem: p for p in sorted(labels_dir.glob("*.txt")) if p.is_file()}
    gt = GroundTruthSet(taxonomy=taxonomy)
    diags: list[Diagnostic] = []

    if images_dir is not None:
        images_dir = Path(images_dir)
        if not images_dir.is_dir():
            raise IoFailure(f"images directory {images_dir} does not exist")
        images = find_image_files(images_dir)
        for image_id in sorted(images):
            try:
                dims = read_image_dims(images[image_id])
            except IoFailure as exc:
                diags.append(Diagnostic("UnreadableImage", str(exc), image_id, str(images[image_id])))
                continue
            label_path = label_files.get(image_id)
            if label_path is None:
                diags.append(Diagnostic("MissingLabelFile", "image has no label file", image_id))
                boxes: list[tuple[int, NormBox]] = []
            else:
                boxes, file_diags = read_label_file(label_path, len(taxonomy), image_id)
                diags.extend(file_diags)
            gt.images[image_id] = ImageAnnotations(image_id, dims, boxes)
        for stem in sorted(set(label_files) - set(images)):
            diags.append(
                Diagnostic("OrphanLabelFile", "label file has no matching image", stem, str(label_files[stem]))
            )
    else:
        for image_id in sorted(label_files):
            boxes, file_diags = read_label_file(label_files[image_id], len(taxonomy), image_id)
            diags.extend(file_diags)
            gt.images[image_id] = ImageAnnotations(image_id, manifest.get(image_id), boxes)

    return gt, diags


def compute_stats(gt: GroundTruthSet) -> DatasetStats:
    """Per-class counts, normalized (w, h) size histogram, objects-per-image histogram."""
    ws: list[float] = []
    hs: list[float] = []
    objects_per_image: dict[int, int] = {}
    for image_id in gt.image_ids():
        boxes = gt.images[image_id].boxes
        objects_per_image[len(boxes)] = objects_per_image.get(len(boxes), 0) + 1
        for _, box in boxes:
            ws.append(box.w)
            hs.append(box.h)
    hist, _, _ = np.histogram2d(
        np.asarray(ws, dtype=np.float64),
        np.asarray(hs, dtype=np.float64),
        bins=SIZE_HIST_BINS,
        range=[[0.0, 1.0], [0.0, 1.0]],
    )
    return DatasetStats(
        image_count=len(gt.images),
        class_counts=gt.class_counts(),
        size_hist=hist.astype(np.int64),
        objects_per_image=objects_per_image,
    )


def integrity_report(gt: GroundTruthSet, rarity_threshold: int = 10) -> list[Diagnostic]:
    """Non-fatal dataset quality findings.

    Flags boxes whose implied corners extend beyond the frame, exact
    duplicate annotations within an image, images with no annotations, and
    classes whose instance count is positive but below rarity_threshold.
    """
    diags: list[Diagnostic] = []
    for image_id in gt.image_ids():
        rec = gt.images[image_id]
        if not rec.boxes:
            diags.append(Diagnostic("EmptyImage", "image has no annotations", image_id))
        seen: set[tuple[int, float, float, float, float]] = set()
        for class_index, box in rec.boxes:
            key = (class_index, box.cx, box.cy, box.w, box.h)
            if key in seen:
                diags.append(
                    Diagnostic(
                        "DuplicateBox",
                        f"exact duplicate of class {class_index} box at ({box.cx}, {box.cy})",
                        image_id,
                    )
                )
            seen.add(key)
            if (
                box.cx - box.w / 2 < 0.0
                or box.cy - box.h / 2 < 0.0
                or box.cx + box.w / 2 > 1.0
                or box.cy + box.h / 2 > 1.0
            ):
                diags.append(
                    Diagnostic(
                        "BoxOutsideFrame",
                        f"class {class_index} box extends beyond the frame before clipping",
                        image_id,
                    )
                )
    for class_index, count in enumerate(gt.class_counts()):
        if 0 < count < rarity_threshold:
            diags.append(
                Diagnostic(
                    "RareClass",
                    f"class '{gt.taxonomy.names[class_index]}' has only {count} instance(s)",
                )
            )
    return diags
