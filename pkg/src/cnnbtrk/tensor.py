"""Dense tensor containers and the indexing helpers every other module builds on.

Layout is channel-major (planar): flat offset = c*H*W + y*W + x. Values are
stored as float32; reductions elsewhere accumulate in float64 and round back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Shape3:
    """A (channels, height, width) volume shape."""

    channels: int
    height: int
    width: int

    def __post_init__(self):
        if min(self.channels, self.height, self.width) <= 0:
            raise ValueError(f"shape dimensions must be positive, got {self}")

    @property
    def size(self) -> int:
        return self.channels * self.height * self.width

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


def locked_f32(values, shape: tuple[int, ...]) -> np.ndarray:
    """Copy into a C-contiguous read-only float32 array, rejecting NaN/Inf."""
    arr = np.array(values, dtype=np.float32, copy=True).reshape(shape)
    if not np.isfinite(arr).all():
        raise ValueError("tensor data must be finite (no NaN/Inf)")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


class Tensor3:
    """Immutable float32 volume in channel-major layout."""

    __slots__ = ("data",)

    def __init__(self, shape: Shape3, values):
        self.data = locked_f32(values, shape.as_tuple())

    @classmethod
    def from_array(cls, arr) -> "Tensor3":
        arr = np.asarray(arr)
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-D array, got ndim={arr.ndim}")
        return cls(Shape3(*arr.shape), arr)

    @classmethod
    def zeros(cls, shape: Shape3) -> "Tensor3":
        return cls(shape, np.zeros(shape.as_tuple(), dtype=np.float32))

    @property
    def shape(self) -> Shape3:
        return Shape3(*self.data.shape)

    def at(self, c: int, y: int, x: int) -> float:
        ch, h, w = self.data.shape
        if not (0 <= c < ch and 0 <= y < h and 0 <= x < w):
            raise IndexError(f"index ({c},{y},{x}) out of range for shape {self.data.shape}")
        return float(self.data[c, y, x])

    def __repr__(self):
        return f"Tensor3{self.data.shape}"


class Tensor1:
    """Immutable float32 vector."""

    __slots__ = ("data",)

    def __init__(self, values):
        arr = np.asarray(values)
        self.data = locked_f32(arr, (arr.size,))

    @property
    def size(self) -> int:
        return int(self.data.size)

    def at(self, i: int) -> float:
        if not 0 <= i < self.data.size:
            raise IndexError(f"index {i} out of range for length {self.data.size}")
        return float(self.data[i])

    def __repr__(self):
        return f"Tensor1({self.data.size})"


def window_origin(center: tuple[int, int], stride: int, pad: int) -> tuple[int, int]:
    """Top-left input coordinate of the window feeding output position `center`."""
    y, x = center
    return y * stride - pad, x * stride - pad


def window_grid(in_h: int, in_w: int, kernel: tuple[int, int], stride: int, pad: int) -> tuple[int, int]:
    """Output grid size for a sliding window; incomplete edge windows are dropped."""
    kh, kw = kernel
    return (in_h + 2 * pad - kh) // stride + 1, (in_w + 2 * pad - kw) // stride + 1


def receptive_field(
    t: Tensor3, center: tuple[int, int], kernel: tuple[int, int], stride: int, pad: int = 0
) -> Tensor3:
    """The (C, kh, kw) sub-volume feeding output position `center`; padding reads as 0."""
    c, h, w = t.data.shape
    kh, kw = kernel
    out_h, out_w = window_grid(h, w, kernel, stride, pad)
    y, x = center
    if not (0 <= y < out_h and 0 <= x < out_w):
        raise IndexError(
            f"window center ({y},{x}) outside the {out_h}x{out_w} output grid "
            f"(input {h}x{w}, kernel {kh}x{kw}, stride {stride}, pad {pad})"
        )
    top, left = window_origin(center, stride, pad)
    field = np.zeros((c, kh, kw), dtype=np.float32)
    y0, y1 = max(top, 0), min(top + kh, h)
    x0, x1 = max(left, 0), min(left + kw, w)
    if y0 < y1 and x0 < x1:
        field[:, y0 - top : y1 - top, x0 - left : x1 - left] = t.data[:, y0:y1, x0:x1]
    return Tensor3.from_array(field)


def argmax3(t: Tensor3) -> tuple[int, int, int]:
    """Coordinates of the maximum element; ties go to the smallest flat offset."""
    flat = int(np.argmax(t.data))
    c, y, x = np.unravel_index(flat, t.data.shape)
    return int(c), int(y), int(x)
