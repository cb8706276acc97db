"""Binary PPM (P6) and PGM (P5) reading and writing, maxval 255 only."""

from __future__ import annotations

import numpy as np


class NetpbmError(Exception):
    """Malformed netpbm data; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comments that run to end of line
    n = len(data)
    while pos < n:
        b = data[pos : pos + 1]
        if b.isspace():
            pos += 1
        elif b == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    if pos >= n:
        raise NetpbmError("unexpected end of header", pos)
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def _parse_header(data: bytes, magic: bytes) -> tuple[int, int, int]:
    tok, pos = _read_token(data, 0)
    if tok != magic:
        raise NetpbmError(f"{magic.decode()} required, found {tok[:8]!r}", 0)
    dims = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_token(data, pos)
        if not tok.isdigit():
            raise NetpbmError(f"non-numeric {name} field {tok[:8]!r}", pos - len(tok))
        dims.append(int(tok))
    width, height, maxval = dims
    if width < 1 or height < 1:
        raise NetpbmError(f"degenerate image size {width}x{height}", 0)
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval}, only 255", pos)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise NetpbmError("missing whitespace after maxval", pos)
    return width, height, pos + 1  # exactly one whitespace byte before the raster


def _load(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    width, height, raster = _parse_header(data, magic)
    need = width * height * channels
    if len(data) - raster < need:
        raise NetpbmError(f"raster truncated: need {need} bytes, have {len(data) - raster}", raster)
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=raster)
    if channels == 1:
        return pixels.reshape(height, width).copy()
    return pixels.reshape(height, width, channels).copy()


def load_ppm(path) -> np.ndarray:
    """Binary RGB image as (H, W, 3) uint8."""
    return _load(path, b"P6", 3)


def load_pgm(path) -> np.ndarray:
    """Binary grayscale image as (H, W) uint8."""
    return _load(path, b"P5", 1)


def write_ppm(path, image: np.ndarray) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError(f"expected (H, W) array, got {image.shape}")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())
