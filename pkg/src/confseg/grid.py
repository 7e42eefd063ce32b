"""Dense 2D raster domain: score grids, binary label masks, pixel indexing.

Everything is stored row-major, top-to-bottom, as the single canonical
layout. Instances are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DataError, ShapeError


@dataclass(frozen=True)
class GridDims:
    """Height and width of a pixel grid, both at least 1."""

    height: int
    width: int

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ShapeError(f"grid dims must be positive, got {self.height}x{self.width}")

    @property
    def count(self) -> int:
        return self.height * self.width

    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


class Pixel(NamedTuple):
    row: int
    col: int


def pixel_to_index(dims: GridDims, pixel: Pixel) -> int:
    """Row-major position of a pixel."""
    return pixel[0] * dims.width + pixel[1]


def index_to_pixel(dims: GridDims, index: int) -> Pixel:
    """Inverse of pixel_to_index."""
    return Pixel(index // dims.width, index % dims.width)


@dataclass(frozen=True, eq=False)
class ScoreImage:
    """Real-valued raster, one 64-bit float per pixel.

    NaN is never allowed. +/-inf only appears as the output of documented
    degenerate-case rules; file readers and writers reject non-finite
    payloads.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.size == 0:
            raise ShapeError(f"score image must be a nonempty 2-d array, got shape {values.shape}")
        if np.isnan(values).any():
            raise DataError("score image contains NaN")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> GridDims:
        return GridDims(*self.values.shape)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScoreImage):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Binary raster; bits are a boolean array, one per pixel."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.size == 0:
            raise ShapeError(f"mask must be a nonempty 2-d array, got shape {bits.shape}")
        if bits.dtype != bool:
            if not np.isin(bits, (0, 1)).all():
                raise DataError("mask entries must be 0 or 1")
            bits = bits.astype(bool)
        else:
            bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def dims(self) -> GridDims:
        return GridDims(*self.bits.shape)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)


def count_ones(mask: LabelMask) -> int:
    return int(mask.bits.sum())


def complement(mask: LabelMask) -> LabelMask:
    return LabelMask(~mask.bits)


def pixels_where(mask: LabelMask, bit: int = 1) -> Iterator[Pixel]:
    """Yield pixels with the given value in row-major order."""
    want = bool(bit)
    for row, col in np.argwhere(mask.bits == want):
        yield Pixel(int(row), int(col))


def same_dims(*items: ScoreImage | LabelMask) -> GridDims:
    """Return the shared dims of the inputs, raising ShapeError on mismatch."""
    dims = items[0].dims
    for item in items[1:]:
        if item.dims != dims:
            raise ShapeError(f"grid dims disagree: {dims} vs {item.dims}")
    return dims
