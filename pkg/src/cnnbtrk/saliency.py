"""Visual products built from important pixels: saliency map, heatmap, boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backtrack import Spatial
from .tensor import Shape3


@dataclass(frozen=True)
class SaliencyConfig:
    sigma: float = 10.0  # gaussian std-dev, pixels
    threshold: float = 0.3  # on the max-normalized field, (0, 1]

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.threshold <= 1:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle: rows [y0, y1), cols [x0, x1)."""

    y0: int
    x0: int
    y1: int
    x1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def to_payload(self) -> dict:
        return {"y0": self.y0, "x0": self.x0, "y1": self.y1, "x1": self.x1}


class SaliencyMap:
    """Dense importance field in [0, 1] (max-normalized) plus its thresholded mask."""

    __slots__ = ("field", "mask")

    def __init__(self, field: np.ndarray, threshold: float):
        field = np.array(field, dtype=np.float64, copy=True)
        field.flags.writeable = False
        self.field = field
        mask = field >= threshold
        mask.flags.writeable = False
        self.mask = mask

    @property
    def height(self) -> int:
        return self.field.shape[0]

    @property
    def width(self) -> int:
        return self.field.shape[1]


def _gaussian_kernel(sigma: float) -> np.ndarray:
    """Truncated kernel: exp(-d^2 / 2s^2) inside radius 3s, zero outside."""
    r = math.ceil(3.0 * sigma)
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    d2 = (dy * dy + dx * dx).astype(np.float64)
    kernel = np.exp(-d2 / (2.0 * sigma * sigma))
    kernel[d2 > 9.0 * sigma * sigma] = 0.0
    return kernel


def splat_gaussian(pixels, width: int, height: int, cfg: SaliencyConfig) -> SaliencyMap:
    """Sum a truncated gaussian at every pixel, normalize so the max is 1."""
    pixels = list(pixels)
    field = np.zeros((height, width), dtype=np.float64)
    if pixels:
        kernel = _gaussian_kernel(cfg.sigma)
        r = (kernel.shape[0] - 1) // 2
        for y, x in pixels:
            if not (0 <= y < height and 0 <= x < width):
                raise ValueError(f"pixel ({y},{x}) outside the {height}x{width} image")
            y0, y1 = max(y - r, 0), min(y + r + 1, height)
            x0, x1 = max(x - r, 0), min(x + r + 1, width)
            field[y0:y1, x0:x1] += kernel[y0 - y + r : y1 - y + r, x0 - x + r : x1 - x + r]
        peak = field.max()
        if peak > 0:
            field /= peak
    return SaliencyMap(field, cfg.threshold)


def attention_heatmap(smap: SaliencyMap) -> np.ndarray:
    """Render the un-thresholded field as (H, W, 3) uint8.

    Colormap: linear over breakpoints 0 -> blue, 0.5 -> green, 1 -> red,
    rounded to the nearest integer channel value.
    """
    v = np.clip(smap.field, 0.0, 1.0)
    lo = v < 0.5
    red = np.where(lo, 0.0, (2.0 * v - 1.0) * 255.0)
    green = np.where(lo, 2.0 * v * 255.0, (2.0 - 2.0 * v) * 255.0)
    blue = np.where(lo, (1.0 - 2.0 * v) * 255.0, 0.0)
    rgb = np.stack([red, green, blue], axis=-1)
    return np.floor(rgb + 0.5).astype(np.uint8)


def field_to_gray(smap: SaliencyMap) -> np.ndarray:
    return np.floor(np.clip(smap.field, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def mask_to_gray(smap: SaliencyMap) -> np.ndarray:
    return np.where(smap.mask, 255, 0).astype(np.uint8)


def coarse_project(node: Spatial, grid: Shape3, image_w: int, image_h: int) -> Rect:
    """Map a coarse-grid node onto its equal-split box of the image.

    The image splits into grid_h x grid_w boxes with floor boundaries, so for
    ragged divisions the last row/column of boxes absorbs the remainder.
    """
    if not (0 <= node.y < grid.height and 0 <= node.x < grid.width):
        raise IndexError(f"node ({node.y},{node.x}) outside the {grid.height}x{grid.width} grid")
    y0 = node.y * image_h // grid.height
    y1 = (node.y + 1) * image_h // grid.height
    x0 = node.x * image_w // grid.width
    x1 = (node.x + 1) * image_w // grid.width
    return Rect(y0, x0, y1, x1)


def bounding_box(pixels) -> Rect | None:
    """Tight axis-aligned box over the pixels; None for an empty list."""
    pixels = list(pixels)
    if not pixels:
        return None
    ys = [y for y, _ in pixels]
    xs = [x for _, x in pixels]
    return Rect(min(ys), min(xs), max(ys) + 1, max(xs) + 1)
