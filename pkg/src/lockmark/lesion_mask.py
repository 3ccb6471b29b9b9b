"""Placement constraints from pixel-level masks.

A binary mask is dilated, split into 8-connected regions, filtered by area,
boxed, and the boxes merged by IOU. Expanding each merged box up and left by
the scaled logo dimensions turns "the logo rectangle must (not) intersect a
box" into a pure top-left-corner membership test.

Three placement modes:
  * ``wap``     - any valid top-left position,
  * ``wsm-in``  - top-left inside some expanded box,
  * ``wsm-out`` - top-left inside no expanded box.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    ConfigurationError,
    GeometryError,
    InfeasibleConstraintError,
    ParameterError,
)
from .raster import load_png

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class BinaryMask:
    """Row-major boolean (H, W) grid; True marks masked pixels."""

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.dtype != np.bool_:
            raise ParameterError("BinaryMask requires a 2-d boolean array")
        self.bits.flags.writeable = False

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def from_array(cls, array: np.ndarray) -> "BinaryMask":
        return cls(np.asarray(array).astype(bool).copy())


def load_mask_png(path: str | Path) -> BinaryMask:
    """Read a mask image; any pixel with nonzero luminance counts as set."""
    img = load_png(path)
    rgb = img.array[:, :, :3]
    return BinaryMask(np.any(rgb > 0, axis=2).copy())


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned box as the tetrad (x, y, w, h), half-open on the far side."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ParameterError(f"box {self} must have positive extent")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def contains_point(self, px: int, py: int) -> bool:
        return self.x <= px < self.x2 and self.y <= py < self.y2

    def intersects(self, other: "BBox") -> bool:
        return (
            self.x < other.x2
            and other.x < self.x2
            and self.y < other.y2
            and other.y < self.y2
        )

    def union(self, other: "BBox") -> "BBox":
        x = min(self.x, other.x)
        y = min(self.y, other.y)
        return BBox(x, y, max(self.x2, other.x2) - x, max(self.y2, other.y2) - y)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "BBox":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))


@dataclass(frozen=True)
class MaskConfig:
    """Mask-pipeline knobs: dilation kernel/iterations, area floor, merge IOU."""

    kernel_size: int = 11
    dilate_iters: int = 10
    min_area: int = 50_000
    iou_merge_threshold: float = 0.5

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ParameterError("kernel_size must be odd and >= 1")
        if self.dilate_iters < 0:
            raise ParameterError("dilate_iters must be >= 0")
        if self.min_area < 0:
            raise ParameterError("min_area must be >= 0")
        if not 0.0 < self.iou_merge_threshold <= 1.0:
            raise ParameterError("iou_merge_threshold must lie in (0, 1]")


@dataclass(frozen=True)
class Region:
    region_id: int
    area: int
    bbox: BBox


class ConstraintMode(enum.Enum):
    WAP = "wap"
    WSM_IN = "wsm-in"
    WSM_OUT = "wsm-out"

    @classmethod
    def parse(cls, text: str) -> "ConstraintMode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown placement mode {text!r}; expected wap, wsm-in or wsm-out"
            ) from None


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def dilate(mask: BinaryMask, cfg: MaskConfig) -> BinaryMask:
    """Binary dilation with a square all-ones kernel, applied ``dilate_iters`` times."""
    if cfg.dilate_iters == 0:
        return BinaryMask(mask.bits.copy())
    structure = np.ones((cfg.kernel_size, cfg.kernel_size), dtype=bool)
    out = ndimage.binary_dilation(mask.bits, structure=structure, iterations=cfg.dilate_iters)
    return BinaryMask(out)


def connected_regions(mask: BinaryMask) -> list[Region]:
    """8-connected labeling with exact areas and tight bounding boxes."""
    labels, count = ndimage.label(mask.bits, structure=_EIGHT_CONNECTED)
    if count == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=count + 1)
    slices = ndimage.find_objects(labels)
    regions = []
    for idx, sl in enumerate(slices, start=1):
        ys, xs = sl
        bbox = BBox(x=xs.start, y=ys.start, w=xs.stop - xs.start, h=ys.stop - ys.start)
        regions.append(Region(region_id=idx, area=int(areas[idx]), bbox=bbox))
    return regions


def filter_small(regions: list[Region], min_area: int) -> list[Region]:
    """Drop regions whose area is at or below the floor."""
    return [r for r in regions if r.area > min_area]


def iou(a: BBox, b: BBox) -> float:
    ix = max(0, min(a.x2, b.x2) - max(a.x, b.x))
    iy = max(0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = ix * iy
    if inter == 0:
        return 0.0
    return inter / (a.area + b.area - inter)


def merge_boxes(boxes: list[BBox], threshold: float) -> list[BBox]:
    """Union any pair of boxes with IOU above the threshold until stable.

    Pairs are scanned in (x, y, w, h) order and the scan restarts after each
    merge, so the result is deterministic.
    """
    work = sorted(boxes)
    merged = True
    while merged:
        merged = False
        for i in range(len(work)):
            for j in range(i + 1, len(work)):
                if iou(work[i], work[j]) > threshold:
                    union = work[i].union(work[j])
                    rest = [b for k, b in enumerate(work) if k != i and k != j]
                    work = sorted(rest + [union])
                    merged = True
                    break
            if merged:
                break
    return work


def expand_box(box: BBox, logo_w: int, logo_h: int) -> BBox:
    """Grow a box up and left by the logo dimensions, clamped at the origin."""
    return BBox(
        x=max(0, box.x - logo_w),
        y=max(0, box.y - logo_h),
        w=box.w + min(logo_w, box.x),
        h=box.h + min(logo_h, box.y),
    )


# ---------------------------------------------------------------------------
# Constraint regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintRegion:
    """The admissible set of logo top-left positions for one host image."""

    mode: ConstraintMode
    boxes: tuple[BBox, ...]
    expanded: tuple[BBox, ...]
    host_w: int
    host_h: int
    logo_w: int
    logo_h: int

    @property
    def valid_w(self) -> int:
        """Largest admissible x (inclusive)."""
        return self.host_w - self.logo_w

    @property
    def valid_h(self) -> int:
        return self.host_h - self.logo_h

    def contains(self, x: int, y: int) -> bool:
        if not (0 <= x <= self.valid_w and 0 <= y <= self.valid_h):
            return False
        if self.mode is ConstraintMode.WAP:
            return True
        inside = any(b.contains_point(x, y) for b in self.expanded)
        return inside if self.mode is ConstraintMode.WSM_IN else not inside

    @cached_property
    def _feasible_grid(self) -> np.ndarray:
        grid = np.zeros((self.valid_h + 1, self.valid_w + 1), dtype=bool)
        for b in self.expanded:
            x0 = max(0, b.x)
            y0 = max(0, b.y)
            x1 = min(self.valid_w + 1, b.x2)
            y1 = min(self.valid_h + 1, b.y2)
            if x0 < x1 and y0 < y1:
                grid[y0:y1, x0:x1] = True
        if self.mode is ConstraintMode.WAP:
            return np.ones_like(grid)
        if self.mode is ConstraintMode.WSM_OUT:
            return ~grid
        return grid

    @property
    def feasible_count(self) -> int:
        return int(np.count_nonzero(self._feasible_grid))

    def sample_position(self, rng: np.random.Generator) -> tuple[int, int]:
        """Uniform draw over the membership set.

        Rejection sampling against the valid rectangle, falling back to
        exhaustive enumeration after 10,000 misses.
        """
        for _ in range(10_000):
            x = int(rng.integers(0, self.valid_w + 1))
            y = int(rng.integers(0, self.valid_h + 1))
            if self.contains(x, y):
                return x, y
        cells = np.argwhere(self._feasible_grid)
        if len(cells) == 0:
            raise InfeasibleConstraintError(f"no admissible position in mode {self.mode.value}")
        y, x = cells[int(rng.integers(0, len(cells)))]
        return int(x), int(y)

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "boxes": [b.to_dict() for b in self.boxes],
            "expanded": [b.to_dict() for b in self.expanded],
            "host_w": self.host_w,
            "host_h": self.host_h,
            "logo_w": self.logo_w,
            "logo_h": self.logo_h,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def build_constraint(
    mask: BinaryMask | None,
    mode: ConstraintMode,
    cfg: MaskConfig,
    host_w: int,
    host_h: int,
    logo_w: int,
    logo_h: int,
) -> ConstraintRegion:
    """Run the mask pipeline and return the placement-constraint region."""
    if logo_w > host_w or logo_h > host_h:
        raise GeometryError(
            f"scaled logo {logo_w}x{logo_h} does not fit host {host_w}x{host_h}"
        )
    if mode is ConstraintMode.WAP:
        return ConstraintRegion(mode, (), (), host_w, host_h, logo_w, logo_h)
    if mask is None:
        raise ConfigurationError(f"mode {mode.value} requires a mask")
    if (mask.width, mask.height) != (host_w, host_h):
        raise GeometryError(
            f"mask is {mask.width}x{mask.height} but host is {host_w}x{host_h}"
        )
    regions = connected_regions(dilate(mask, cfg))
    kept = filter_small(regions, cfg.min_area)
    boxes = merge_boxes([r.bbox for r in kept], cfg.iou_merge_threshold)
    expanded = tuple(expand_box(b, logo_w, logo_h) for b in boxes)
    region = ConstraintRegion(mode, tuple(boxes), expanded, host_w, host_h, logo_w, logo_h)
    if region.feasible_count == 0:
        raise InfeasibleConstraintError(
            f"mode {mode.value}: no admissible position "
            f"({len(boxes)} merged boxes over a {host_w}x{host_h} host)"
        )
    return region
