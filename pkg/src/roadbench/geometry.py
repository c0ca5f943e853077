"""Bounding-box primitives: coordinate forms, IoU, clipping, and projective warps.

Boxes are closed intervals over continuous coordinates; area is
(x2 - x1) * (y2 - y1) with no "+1" pixel convention, so IoU values do not
depend on image resolution. All functions here are pure and safe to call
from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateTransform


@dataclass(frozen=True)
class ImageDims:
    """Pixel dimensions of an image."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dims must be >= 1, got {self.width}x{self.height}")


@dataclass(frozen=True)
class NormBox:
    """Axis-aligned box in normalized center form (YOLO convention).

    cx, cy locate the center and w, h the extent, all as fractions of the
    image dimensions. The implied corners cx +/- w/2, cy +/- h/2 may fall
    outside [0, 1]; clipping happens downstream in absolute coordinates.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center ({self.cx}, {self.cy}) outside [0, 1]")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box size ({self.w}, {self.h}) outside (0, 1]")


@dataclass(frozen=True)
class AbsBox:
    """Axis-aligned box in absolute corner form, continuous pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate corner box ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def norm_to_abs(box: NormBox, dims: ImageDims) -> AbsBox:
    """Convert a normalized center-form box to absolute corner form."""
    half_w = box.w * dims.width / 2.0
    half_h = box.h * dims.height / 2.0
    cx = box.cx * dims.width
    cy = box.cy * dims.height
    return AbsBox(cx - half_w, cy - half_h, cx + half_w, cy + half_h)


def abs_to_norm(box: AbsBox, dims: ImageDims) -> NormBox:
    """Convert an absolute corner-form box to normalized center form.

    Exact inverse of :func:`norm_to_abs` up to float rounding.
    """
    w = (box.x2 - box.x1) / dims.width
    h = (box.y2 - box.y1) / dims.height
    cx = (box.x1 + box.x2) / 2.0 / dims.width
    cy = (box.y1 + box.y2) / 2.0 / dims.height
    return NormBox(cx, cy, w, h)


def iou(a: AbsBox, b: AbsBox) -> float:
    """Intersection-over-union of two corner-form boxes, in [0, 1].

    Symmetric; 0 for disjoint boxes. A zero-area union (two degenerate
    boxes) is defined as IoU 0 so no division-by-zero branch leaks upward.
    """
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def clip_box(box: AbsBox, dims: ImageDims) -> Optional[AbsBox]:
    """Clamp a box to the image frame; returns None when nothing remains."""
    x1 = min(max(box.x1, 0.0), float(dims.width))
    y1 = min(max(box.y1, 0.0), float(dims.height))
    x2 = min(max(box.x2, 0.0), float(dims.width))
    y2 = min(max(box.y2, 0.0), float(dims.height))
    if x1 >= x2 or y1 >= y2:
        return None
    return AbsBox(x1, y1, x2, y2)


def box_corners(box: AbsBox) -> np.ndarray:
    """The four corners as a (4, 2) array in TL, TR, BR, BL order."""
    return np.array(
        [
            [box.x1, box.y1],
            [box.x2, box.y1],
            [box.x2, box.y2],
            [box.x1, box.y2],
        ],
        dtype=np.float64,
    )


def warp_box(box: AbsBox, matrix: np.ndarray) -> AbsBox:
    """Image of a box under a 3x3 projective transform.

    Transforms all four corners (homogeneous divide) and returns their
    axis-aligned enclosure, the standard convention for detection
    augmentation. Raises DegenerateTransform when a corner's homogeneous
    w component drops to <= 1e-9.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    corners = box_corners(box)
    ones = np.ones((4, 1), dtype=np.float64)
    projected = np.hstack([corners, ones]) @ m.T
    ws = projected[:, 2]
    if np.any(ws <= 1e-9):
        raise DegenerateTransform(f"corner homogeneous w <= 1e-9 (min {ws.min():.3e})")
    xs = projected[:, 0] / ws
    ys = projected[:, 1] / ws
    return AbsBox(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))


def flip_horizontal(box: NormBox) -> NormBox:
    """Mirror a normalized box across the vertical image axis."""
    return NormBox(1.0 - box.cx, box.cy, box.w, box.h)


def norm_corners(box: NormBox) -> AbsBox:
    """Corner form of a normalized box over the unit square.

    IoU is invariant under independent x/y scaling, so same-image boxes
    can be compared in this form without knowing pixel dimensions.
    """
    return AbsBox(
        box.cx - box.w / 2.0,
        box.cy - box.h / 2.0,
        box.cx + box.w / 2.0,
        box.cy + box.h / 2.0,
    )
