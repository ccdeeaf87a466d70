"""Integral images and constant-time rectangle sums."""
from dataclasses import dataclass

import numpy as np

from errors import ImageTooLarge, RectOutOfBounds

# 255 * 2**24 still fits an unsigned 32-bit accumulator
MAX_PIXELS = 1 << 24


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise RectOutOfBounds(f"rectangle extent must be >= 1, got {self.w}x{self.h}")

    @property
    def area(self):
        return self.w * self.h

    @property
    def right(self):
        return self.x + self.w

    @property
    def bottom(self):
        return self.y + self.h

    def inside(self, width, height):
        return self.x >= 0 and self.y >= 0 and self.right <= width and self.bottom <= height

    def shifted(self, dx, dy):
        return Rect(self.x + dx, self.y + dy, self.w, self.h)


@dataclass(frozen=True, eq=False)
class IntegralImage:
    """Inclusive prefix sums; no zero row or column is stored."""
    width: int
    height: int
    sums: np.ndarray
    squared_sums: np.ndarray = None

    def padded(self):
        """Sums with a leading zero row and column, as int64."""
        return _pad(self.sums)

    def padded_squares(self):
        if self.squared_sums is None:
            return None
        return _pad(self.squared_sums)

    @property
    def size_bytes(self):
        return self.sums.nbytes + (0 if self.squared_sums is None else self.squared_sums.nbytes)


def _pad(arr):
    out = np.zeros((arr.shape[0] + 1, arr.shape[1] + 1), dtype=np.int64)
    out[1:, 1:] = arr
    return out


def build_integral(img, with_squares=False):
    if img.width * img.height > MAX_PIXELS:
        raise ImageTooLarge(
            f"{img.width}x{img.height} exceeds {MAX_PIXELS} pixels, 32-bit sums would overflow")
    px = img.pixels
    sums = np.cumsum(np.cumsum(px, axis=0, dtype=np.uint32), axis=1, dtype=np.uint32)
    sums.setflags(write=False)
    squares = None
    if with_squares:
        sq = px.astype(np.uint64) ** 2
        squares = np.cumsum(np.cumsum(sq, axis=0, dtype=np.uint64), axis=1, dtype=np.uint64)
        squares.setflags(write=False)
    return IntegralImage(img.width, img.height, sums, squares)


def _corner_sum(table, r):
    x1 = r.x + r.w - 1
    y1 = r.y + r.h - 1
    total = int(table[y1, x1])
    if r.x > 0:
        total -= int(table[y1, r.x - 1])
    if r.y > 0:
        total -= int(table[r.y - 1, x1])
    if r.x > 0 and r.y > 0:
        total += int(table[r.y - 1, r.x - 1])
    return total


def rect_sum(ii, r):
    """Sum of the pixels inside r from four corner reads."""
    if not r.inside(ii.width, ii.height):
        raise RectOutOfBounds(f"{r} outside {ii.width}x{ii.height} raster")
    return _corner_sum(ii.sums, r)


def rect_square_sum(ii, r):
    if ii.squared_sums is None:
        raise RectOutOfBounds("integral image was built without squared sums")
    if not r.inside(ii.width, ii.height):
        raise RectOutOfBounds(f"{r} outside {ii.width}x{ii.height} raster")
    return _corner_sum(ii.squared_sums, r)


class WindowBatch:
    """
    Rectangle sums evaluated for many equally sized windows at once.

    Either a single padded integral with arrays of window origins (scanning an
    image), or a stack of padded integrals with one window each (training
    patches). Both give the same integers as rect_sum.
    """

    def __init__(self, padded, origins_x=None, origins_y=None, padded_squares=None):
        self.padded = padded
        self.padded_squares = padded_squares
        self.stacked = padded.ndim == 3
        if self.stacked:
            self.count = padded.shape[0]
            self.ox = self.oy = 0
        else:
            self.ox = np.asarray(origins_x, dtype=np.intp)
            self.oy = np.asarray(origins_y, dtype=np.intp)
            self.count = self.ox.shape[0]

    @classmethod
    def from_integral(cls, ii, origins_x, origins_y):
        return cls(ii.padded(), origins_x, origins_y, ii.padded_squares())

    @classmethod
    def from_patches(cls, patches, with_squares=False):
        """patches: uint8 array of shape (N, h, w)."""
        n, h, w = patches.shape
        sums = np.zeros((n, h + 1, w + 1), dtype=np.int64)
        sums[:, 1:, 1:] = patches.astype(np.int64).cumsum(axis=1).cumsum(axis=2)
        squares = None
        if with_squares:
            squares = np.zeros_like(sums)
            squares[:, 1:, 1:] = (patches.astype(np.int64) ** 2).cumsum(axis=1).cumsum(axis=2)
        return cls(sums, padded_squares=squares)

    def subset(self, index):
        if self.stacked:
            sq = None if self.padded_squares is None else self.padded_squares[index]
            return WindowBatch(self.padded[index], padded_squares=sq)
        return WindowBatch(self.padded, self.ox[index], self.oy[index], self.padded_squares)

    def _box(self, table, x, y, w, h):
        if self.stacked:
            return (table[:, y + h, x + w] - table[:, y, x + w]
                    - table[:, y + h, x] + table[:, y, x])
        x0 = self.ox + x
        y0 = self.oy + y
        return (table[y0 + h, x0 + w] - table[y0, x0 + w]
                - table[y0 + h, x0] + table[y0, x0])

    def rect_sums(self, x, y, w, h):
        return self._box(self.padded, x, y, w, h)

    def square_sums(self, x, y, w, h):
        return self._box(self.padded_squares, x, y, w, h)
