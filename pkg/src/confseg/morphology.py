"""Geometric primitives on binary masks.

Boundary extraction follows the marching-squares convention for binary
rasters: the mask is sampled at integer pixel centers, implicitly padded
with a ring of zeros so components touching the image edge still close,
and the 0.5 level set crosses exactly at the midpoint of every pair of
adjacent samples with differing values. Saddle cells contribute all four
of their edge crossings (two separate crossings, no averaging).

Signed distances are measured point-to-point against those boundary
vertices: positive inside the mask, negative outside. The all-zeros and
all-ones masks have no usable boundary and get the sentinel value
-(height+width) resp. +(height+width) everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np
from scipy import ndimage

from .errors import EmptyInputError
from .grid import GridDims, LabelMask, ScoreImage


class Metric(Enum):
    EUCLIDEAN = "euclidean"
    CHESSBOARD = "chessboard"


@dataclass(frozen=True, eq=False)
class BoundaryPointSet:
    """Boundary crossing points, (row, col) in pixel units, sorted row-major."""

    points: np.ndarray  # shape (k, 2), float64

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.points.shape[0]


class Box(NamedTuple):
    """Axis-aligned rectangle with inclusive integer pixel bounds."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int

    @property
    def area(self) -> int:
        return (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)


@dataclass(frozen=True)
class BoxSet:
    """A union of boxes, one per connected component."""

    boxes: tuple[Box, ...]

    def rasterize(self, dims: GridDims) -> LabelMask:
        return rasterize_boxes(self.boxes, dims)


def rasterize_boxes(boxes: Iterable[Box], dims: GridDims) -> LabelMask:
    bits = np.zeros(dims.shape(), dtype=bool)
    for box in boxes:
        bits[box.row_min : box.row_max + 1, box.col_min : box.col_max + 1] = True
    return LabelMask(bits)


def marching_squares_boundary(mask: LabelMask) -> BoundaryPointSet:
    """Extract the 0.5 iso-level crossing points of a zero-padded mask."""
    padded = np.pad(mask.bits, 1)
    # Vertical neighbour pairs: padded (i, j) vs (i + 1, j) cross at
    # original coordinates (i - 0.5, j - 1); horizontal pairs analogously.
    vi, vj = np.nonzero(padded[:-1, :] != padded[1:, :])
    hi, hj = np.nonzero(padded[:, :-1] != padded[:, 1:])
    rows = np.concatenate([vi - 0.5, hi - 1.0])
    cols = np.concatenate([vj - 1.0, hj - 0.5])
    order = np.lexsort((cols, rows))
    return BoundaryPointSet(np.column_stack([rows[order], cols[order]]))


def degenerate_distance(dims: GridDims) -> float:
    """Sentinel magnitude for masks without a boundary."""
    return float(dims.height + dims.width)


def signed_distance_transform(mask: LabelMask, metric: Metric = Metric.EUCLIDEAN) -> ScoreImage:
    """Per-pixel signed distance to the mask boundary.

    Positive at pixels inside the mask, negative outside. Uniform masks
    take the constant sentinel +/-(height+width).
    """
    bits = mask.bits
    height, width = bits.shape
    dmax = degenerate_distance(mask.dims)
    if not bits.any():
        return ScoreImage(np.full((height, width), -dmax))
    if bits.all():
        return ScoreImage(np.full((height, width), dmax))

    points = marching_squares_boundary(mask).points
    boundary_rows = points[:, 0]
    boundary_cols = points[:, 1]
    col_delta = np.arange(width, dtype=np.float64)[:, None] - boundary_cols[None, :]
    out = np.empty((height, width))
    if metric is Metric.EUCLIDEAN:
        col_delta_sq = col_delta * col_delta
        for row in range(height):
            row_delta = row - boundary_rows
            out[row] = np.sqrt(row_delta * row_delta + col_delta_sq).min(axis=1)
    elif metric is Metric.CHESSBOARD:
        col_abs = np.abs(col_delta)
        for row in range(height):
            row_abs = np.abs(row - boundary_rows)
            out[row] = np.maximum(row_abs[None, :], col_abs).min(axis=1)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return ScoreImage(np.where(bits, out, -out))


_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


def connected_components(mask: LabelMask, connectivity: int = 4) -> list[LabelMask]:
    """Split the set pixels into connected components.

    Components are returned in order of their first row-major pixel, each
    as a full-size mask.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = _STRUCTURE_4 if connectivity == 4 else _STRUCTURE_8
    labels, n_components = ndimage.label(mask.bits, structure=structure)
    if n_components == 0:
        return []
    flat = labels.ravel()
    label_ids, first_index = np.unique(flat, return_index=True)
    keep = label_ids != 0
    ordered = label_ids[keep][np.argsort(first_index[keep])]
    return [LabelMask(labels == label_id) for label_id in ordered]


def min_bounding_box(component: LabelMask) -> Box:
    """Smallest box containing every set pixel."""
    rows, cols = np.nonzero(component.bits)
    if rows.size == 0:
        raise EmptyInputError("cannot bound an empty component")
    return Box(int(rows.min()), int(rows.max()), int(cols.min()), int(cols.max()))


def largest_inscribed_box(component: LabelMask) -> Box:
    """Largest all-ones box inside the component.

    Ties are broken by smaller row_min, then smaller col_min, then larger
    width. Runs in O(height * width) using per-row histogram spans.
    """
    bits = component.bits
    if not bits.any():
        raise EmptyInputError("cannot inscribe a box in an empty component")
    height, width = bits.shape
    heights = np.zeros(width, dtype=np.int64)
    best_key: tuple[int, int, int, int] | None = None
    best_box: Box | None = None
    for bottom in range(height):
        heights = np.where(bits[bottom], heights + 1, 0)
        for col_min, col_max, box_height in _maximal_spans(heights):
            box = Box(bottom - box_height + 1, bottom, col_min, col_max)
            key = (-box.area, box.row_min, box.col_min, -(col_max - col_min + 1))
            if best_key is None or key < best_key:
                best_key, best_box = key, box
    assert best_box is not None
    return best_box


def _maximal_spans(heights: np.ndarray) -> Iterable[tuple[int, int, int]]:
    """For each bar, the widest span where every bar is at least as tall.

    Yields (col_min, col_max, height); every maximal rectangle of the
    histogram appears (duplicates allowed).
    """
    n = len(heights)
    left = np.empty(n, dtype=np.int64)  # nearest index to the left with a shorter bar
    stack: list[int] = []
    for i in range(n):
        while stack and heights[stack[-1]] >= heights[i]:
            stack.pop()
        left[i] = stack[-1] if stack else -1
        stack.append(i)
    right = np.empty(n, dtype=np.int64)  # nearest index to the right with a shorter bar
    stack.clear()
    for i in range(n - 1, -1, -1):
        while stack and heights[stack[-1]] >= heights[i]:
            stack.pop()
        right[i] = stack[-1] if stack else n
        stack.append(i)
    for i in range(n):
        if heights[i] > 0:
            yield int(left[i] + 1), int(right[i] - 1), int(heights[i])


def inscribed_box_union(mask: LabelMask, connectivity: int = 4) -> BoxSet:
    """Largest inscribed box of each connected component."""
    return BoxSet(tuple(largest_inscribed_box(c) for c in connected_components(mask, connectivity)))


def bounding_box_union(mask: LabelMask, connectivity: int = 4) -> BoxSet:
    """Smallest enclosing box of each connected component."""
    return BoxSet(tuple(min_bounding_box(c) for c in connected_components(mask, connectivity)))


def box_set_distance(boxset: BoxSet, dims: GridDims) -> ScoreImage:
    """Signed chessboard distance to the rasterized box union."""
    return signed_distance_transform(boxset.rasterize(dims), Metric.CHESSBOARD)
