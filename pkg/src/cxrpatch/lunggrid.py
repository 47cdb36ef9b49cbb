"""Lung bounding boxes and the overlapping patch grid.

A binary lung mask yields one tight bounding box per lung (two largest
8-connected components, left/right ordered by center x). Each box is then
sliced into an overlapping grid of patches: with C columns over a box of
width W and overlap fraction w, the patch width is w_p = W / (C - (C-1)*w)
and consecutive patches start w_p*(1-w) apart, so the union always tiles the
box exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InsufficientComponentsError, InvalidBoxError, InvalidInputError

# 8-connectivity for component labeling
_CONN8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Mask:
    """Binary raster; `bits` is a (height, width) bool array, True = lung."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.size == 0:
            raise InvalidInputError(f"mask must be a nonempty 2-D array, got shape {b.shape}")
        object.__setattr__(self, "bits", b.astype(bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass(frozen=True)
class Rect:
    """Integer pixel rectangle, top-left anchored, half-open on right/bottom."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise InvalidInputError(f"rect must have positive extent, got {self.w}x{self.h}")

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def center_x(self) -> float:
        return self.x + self.w / 2.0

    def intersection_area(self, other: "Rect") -> int:
        dx = min(self.right, other.right) - max(self.x, other.x)
        dy = min(self.bottom, other.bottom) - max(self.y, other.y)
        return dx * dy if dx > 0 and dy > 0 else 0


@dataclass(frozen=True)
class GridSpec:
    """Per-lung grid layout: cols x rows with fractional overlap in [0, 0.5)."""

    cols_per_lung: int = 2
    rows_per_lung: int = 4
    overlap_fraction: float = 0.25

    def __post_init__(self):
        if self.cols_per_lung < 1 or self.rows_per_lung < 1:
            raise InvalidInputError("grid must have at least 1 column and 1 row per lung")
        if not 0.0 <= self.overlap_fraction < 0.5:
            raise InvalidInputError(
                f"overlap_fraction {self.overlap_fraction} outside [0, 0.5)"
            )

    @property
    def patches_per_lung(self) -> int:
        return self.cols_per_lung * self.rows_per_lung

    @property
    def total_patches(self) -> int:
        return 2 * self.patches_per_lung


# Presets: 16 patches total (2x4 per lung) and 6 patches total (1x3 per lung).
GRID_16 = GridSpec(cols_per_lung=2, rows_per_lung=4, overlap_fraction=0.25)
GRID_6 = GridSpec(cols_per_lung=1, rows_per_lung=3, overlap_fraction=0.25)


def grid_preset(total_patches: int, overlap_fraction: float = 0.25) -> GridSpec:
    if total_patches == 16:
        return GridSpec(2, 4, overlap_fraction)
    if total_patches == 6:
        return GridSpec(1, 3, overlap_fraction)
    raise InvalidInputError(f"no grid preset for {total_patches} patches (use 16 or 6)")


@dataclass(frozen=True)
class PatchGrid:
    """Row-major patch rects per lung, left lung first."""

    left_rects: tuple[Rect, ...]
    right_rects: tuple[Rect, ...]
    spec: GridSpec

    def __post_init__(self):
        expected = self.spec.patches_per_lung
        if len(self.left_rects) != expected or len(self.right_rects) != expected:
            raise InvalidInputError(
                f"grid must hold {expected} rects per lung, got "
                f"{len(self.left_rects)}/{len(self.right_rects)}"
            )
        object.__setattr__(self, "left_rects", tuple(self.left_rects))
        object.__setattr__(self, "right_rects", tuple(self.right_rects))

    @property
    def rects(self) -> tuple[Rect, ...]:
        """All rects in canonical order: left lung row-major, then right lung."""
        return self.left_rects + self.right_rects

    def lung_of(self, patch_index: int) -> str:
        return "left" if patch_index < len(self.left_rects) else "right"


def mask_to_lung_boxes(mask: Mask) -> tuple[Rect, Rect]:
    """Tight bounding boxes of the two largest components; left = smaller center x."""
    labeled, n = ndimage.label(mask.bits, structure=_CONN8)
    if n < 2:
        raise InsufficientComponentsError(
            f"expected at least 2 lung components, found {n}", component_count=n
        )
    areas = np.bincount(labeled.ravel())[1:]  # skip background
    keep = np.argsort(areas, kind="stable")[-2:] + 1  # two largest labels
    boxes = []
    for lbl in keep:
        ys, xs = np.nonzero(labeled == lbl)
        boxes.append(
            Rect(
                x=int(xs.min()),
                y=int(ys.min()),
                w=int(xs.max() - xs.min() + 1),
                h=int(ys.max() - ys.min() + 1),
            )
        )
    boxes.sort(key=lambda r: (r.center_x, r.x))
    return boxes[0], boxes[1]


def _axis_cuts(origin: int, extent: int, count: int, overlap: float) -> list[tuple[int, int]]:
    """(start, end) pixel intervals along one axis.

    Patch extent p = extent / (count - (count-1)*overlap), stride p*(1-overlap).
    Edges are rounded half-up; the last interval is snapped to the box edge.
    Because p >= stride, rounding both ends of the same real interval can
    never open a gap between neighbors.
    """
    p = extent / (count - (count - 1) * overlap)
    if p < 1.0:
        raise InvalidBoxError(
            f"box extent {extent} too small for {count} patches at overlap {overlap}"
        )
    stride = p * (1.0 - overlap)
    cuts = []
    for i in range(count):
        start = int(np.floor(i * stride + 0.5))
        end = extent if i == count - 1 else int(np.floor(i * stride + p + 0.5))
        cuts.append((origin + start, origin + end))
    return cuts


def build_grid(left: Rect, right: Rect, spec: GridSpec = GRID_16) -> PatchGrid:
    """Overlapping patch grid over both lung boxes, row-major per lung."""

    def lung_rects(box: Rect) -> tuple[Rect, ...]:
        xs = _axis_cuts(box.x, box.w, spec.cols_per_lung, spec.overlap_fraction)
        ys = _axis_cuts(box.y, box.h, spec.rows_per_lung, spec.overlap_fraction)
        return tuple(
            Rect(x=x0, y=y0, w=x1 - x0, h=y1 - y0)
            for (y0, y1) in ys
            for (x0, x1) in xs
        )

    return PatchGrid(left_rects=lung_rects(left), right_rects=lung_rects(right), spec=spec)


def grid_union_covers(grid: PatchGrid, left: Rect, right: Rect) -> bool:
    """True iff every pixel of each lung box lies in at least one of its patches."""
    for box, rects in ((left, grid.left_rects), (right, grid.right_rects)):
        covered = np.zeros((box.h, box.w), dtype=bool)
        for r in rects:
            x0 = max(r.x - box.x, 0)
            y0 = max(r.y - box.y, 0)
            x1 = min(r.right - box.x, box.w)
            y1 = min(r.bottom - box.y, box.h)
            if x1 > x0 and y1 > y0:
                covered[y0:y1, x0:x1] = True
        if not covered.all():
            return False
    return True


def mask_from_pgm_array(pixels: np.ndarray) -> Mask:
    """Interpret an 8-bit raster as a mask: intensity >= 128 counts as lung."""
    return Mask(np.asarray(pixels) >= 128)
