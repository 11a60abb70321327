"""Integer box algebra shared by the detector, tracker and track manager.

Boxes are corner + size with a half-open pixel extent ``[x, x+w) x [y, y+h)``.
Overlap quantities are computed in exact integer arithmetic; ``iou`` divides
once at the very end.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidConfig, OutOfFrame

QVGA_WIDTH = 320
QVGA_HEIGHT = 240


@dataclass(frozen=True, slots=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def translate(self, dx: int, dy: int) -> BoundingBox:
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def to_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, values) -> BoundingBox:
        x, y, w, h = (int(v) for v in values)
        return cls(x, y, w, h)

    @classmethod
    def from_corners(cls, x1: int, y1: int, x2: int, y2: int) -> BoundingBox:
        return cls(x1, y1, x2 - x1, y2 - y1)


@dataclass(frozen=True, slots=True)
class FrameDims:
    width: int = QVGA_WIDTH
    height: int = QVGA_HEIGHT

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidConfig(f"frame dims must be positive, got {self.width}x{self.height}")

    @property
    def pixels(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        """numpy (rows, cols) shape."""
        return (self.height, self.width)


def area(b: BoundingBox) -> int:
    return b.w * b.h


def intersection_area(a: BoundingBox, b: BoundingBox) -> int:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def border_distance(b: BoundingBox, dims: FrameDims) -> int:
    """Smallest gap between the box and any of the four frame edges."""
    return min(b.x, b.y, dims.width - b.x2, dims.height - b.y2)


def clamp_to_frame(b: BoundingBox, dims: FrameDims) -> BoundingBox:
    x1 = max(b.x, 0)
    y1 = max(b.y, 0)
    x2 = min(b.x2, dims.width)
    y2 = min(b.y2, dims.height)
    if x2 <= x1 or y2 <= y1:
        raise OutOfFrame(f"box {b.to_list()} lies outside {dims.width}x{dims.height} frame")
    return BoundingBox(x1, y1, x2 - x1, y2 - y1)


def scale_box(b: BoundingBox, factor: float) -> BoundingBox:
    """Scale about the box center, rounding the new size to whole pixels."""
    nw = max(1, int(round(b.w * factor)))
    nh = max(1, int(round(b.h * factor)))
    return BoundingBox(b.x + (b.w - nw) // 2, b.y + (b.h - nh) // 2, nw, nh)


def within_frame(b: BoundingBox, dims: FrameDims) -> bool:
    return b.w >= 1 and b.h >= 1 and b.x >= 0 and b.y >= 0 and b.x2 <= dims.width and b.y2 <= dims.height
