"""The self-contained binary model format, image loading, and input preprocessing.

File layout (little-endian): 8-byte magic "CNNBTRK1", u32 version, u32
descriptor length, UTF-8 JSON descriptor, raw float32 weight payload (per
layer in descriptor order: conv kernels as (out_c, in_c, kh, kw) then bias;
dense matrices row-major (out, in) then bias), and a trailing u64 FNV-1a
checksum over everything before it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netpbm import load_ppm
from .network import (
    Conv,
    Dense,
    Flatten,
    LayerShapeError,
    MaxPool,
    NetworkError,
    NetworkSpec,
    ReLU,
    Softmax,
)
from .tensor import Shape3, Tensor3

MAGIC = b"CNNBTRK1"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a_py(data) -> int:
    h = _FNV_OFFSET
    for b in bytes(data):
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


_FNV_OFFSET_U64 = np.uint64(_FNV_OFFSET)
_FNV_PRIME_U64 = np.uint64(_FNV_PRIME)

try:  # numba turns the byte loop from ~12 MB/s into ~600 MB/s; optional
    import numba as _numba

    @_numba.njit(cache=False)
    def _fnv1a_jit(arr):  # pragma: no cover - exercised via fnv1a
        h = _FNV_OFFSET_U64
        for i in range(arr.size):
            h = (h ^ np.uint64(arr[i])) * _FNV_PRIME_U64
        return h

    def fnv1a(data) -> int:
        return int(_fnv1a_jit(np.frombuffer(data, dtype=np.uint8)))

except ImportError:  # pragma: no cover
    fnv1a = _fnv1a_py


class ModelFormatError(Exception):
    pass


class ModelNotFoundError(ModelFormatError):
    pass


class BadMagicError(ModelFormatError):
    pass


class BadChecksumError(ModelFormatError):
    pass


class ShapeMismatchError(ModelFormatError):
    def __init__(self, message: str, layer_index: int | None = None):
        super().__init__(message)
        self.layer_index = layer_index


class NonFiniteWeightError(ModelFormatError):
    def __init__(self, layer_index: int):
        super().__init__(f"layer {layer_index}: weight payload contains NaN/Inf")
        self.layer_index = layer_index


@dataclass(frozen=True)
class PreprocessSpec:
    """Resize target plus the per-channel affine map value*scale - mean (RGB order)."""

    width: int
    height: int
    means: tuple[float, float, float]
    scale: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"target size {self.width}x{self.height} invalid")
        if len(self.means) != 3:
            raise ValueError("means must have exactly 3 entries (RGB)")
        object.__setattr__(self, "means", tuple(float(m) for m in self.means))


def _layer_descriptor(layer) -> dict:
    if isinstance(layer, Conv):
        return {
            "kind": "conv",
            "out_channels": layer.out_channels,
            "in_channels": layer.in_channels,
            "kernel": list(layer.kernel),
            "stride": layer.stride,
            "pad": layer.pad,
        }
    if isinstance(layer, ReLU):
        return {"kind": "relu"}
    if isinstance(layer, MaxPool):
        return {"kind": "maxpool", "kernel": list(layer.kernel), "stride": layer.stride}
    if isinstance(layer, Flatten):
        return {"kind": "flatten"}
    if isinstance(layer, Dense):
        return {"kind": "dense", "out_dim": layer.out_dim, "in_dim": layer.in_dim}
    if isinstance(layer, Softmax):
        return {"kind": "softmax"}
    raise TypeError(f"unknown layer kind {type(layer).__name__}")


def save_model(net: NetworkSpec, pre: PreprocessSpec, path) -> None:
    descriptor = {
        "input_shape": list(net.input_shape.as_tuple()),
        "layers": [_layer_descriptor(l) for l in net.layers],
        "class_labels": list(net.class_labels),
        "preprocess": {
            "width": pre.width,
            "height": pre.height,
            "means": list(pre.means),
            "scale": pre.scale,
        },
    }
    desc_bytes = json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(desc_bytes)), desc_bytes]
    for layer in net.layers:
        if isinstance(layer, (Conv, Dense)):
            parts.append(layer.weights.astype("<f4", copy=False).tobytes())
            parts.append(layer.bias.astype("<f4", copy=False).tobytes())
    body = b"".join(parts)
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<Q", fnv1a(body)))


def _take(payload: np.ndarray, offset: int, shape: tuple[int, ...], layer_index: int) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape))
    if offset + count > payload.size:
        raise ShapeMismatchError(
            f"layer {layer_index}: weight payload exhausted ({payload.size - offset} floats left, need {count})",
            layer_index,
        )
    arr = payload[offset : offset + count].reshape(shape)
    if not np.isfinite(arr).all():
        raise NonFiniteWeightError(layer_index)
    return arr, offset + count


def load_model(path) -> tuple[NetworkSpec, PreprocessSpec]:
    p = Path(path)
    if not p.is_file():
        raise ModelNotFoundError(f"model file not found: {path}")
    blob = p.read_bytes()
    if len(blob) < len(MAGIC) + 8 + 8:
        raise BadMagicError(f"file too short to be a model ({len(blob)} bytes)")
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:8]!r}, expected {MAGIC!r}")
    stated = struct.unpack("<Q", blob[-8:])[0]
    actual = fnv1a(blob[:-8])
    if stated != actual:
        raise BadChecksumError(f"checksum mismatch: stored {stated:#018x}, computed {actual:#018x}")
    version, desc_len = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    desc_end = 16 + desc_len
    if desc_end > len(blob) - 8:
        raise ModelFormatError("descriptor overruns the file")
    try:
        descriptor = json.loads(blob[16:desc_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"descriptor is not valid JSON: {e}") from e

    payload_bytes = len(blob) - 8 - desc_end
    if payload_bytes % 4:
        raise ModelFormatError(f"weight payload length {payload_bytes} is not a multiple of 4")
    payload = np.frombuffer(blob, dtype="<f4", offset=desc_end, count=payload_bytes // 4)

    try:
        input_shape = Shape3(*descriptor["input_shape"])
        labels = tuple(str(s) for s in descriptor["class_labels"])
        pp = descriptor["preprocess"]
        pre = PreprocessSpec(int(pp["width"]), int(pp["height"]), tuple(pp["means"]), float(pp["scale"]))
        layer_descs = descriptor["layers"]
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"descriptor missing or malformed field: {e}") from e

    layers = []
    offset = 0
    for i, d in enumerate(layer_descs):
        kind = d.get("kind")
        try:
            if kind == "conv":
                kh, kw = (int(v) for v in d["kernel"])
                out_c, in_c = int(d["out_channels"]), int(d["in_channels"])
                w, offset = _take(payload, offset, (out_c, in_c, kh, kw), i)
                b, offset = _take(payload, offset, (out_c,), i)
                layers.append(Conv(out_c, (kh, kw), int(d["stride"]), int(d["pad"]), w, b))
            elif kind == "relu":
                layers.append(ReLU())
            elif kind == "maxpool":
                kh, kw = (int(v) for v in d["kernel"])
                layers.append(MaxPool((kh, kw), int(d["stride"])))
            elif kind == "flatten":
                layers.append(Flatten())
            elif kind == "dense":
                out_d, in_d = int(d["out_dim"]), int(d["in_dim"])
                w, offset = _take(payload, offset, (out_d, in_d), i)
                b, offset = _take(payload, offset, (out_d,), i)
                layers.append(Dense(out_d, w, b))
            elif kind == "softmax":
                layers.append(Softmax())
            else:
                raise ModelFormatError(f"layer {i}: unknown kind {kind!r}")
        except (KeyError, TypeError) as e:
            raise ModelFormatError(f"layer {i}: malformed descriptor entry: {e}") from e
    if offset != payload.size:
        raise ModelFormatError(f"weight payload has {payload.size - offset} unused trailing floats")

    try:
        net = NetworkSpec(input_shape, tuple(layers), labels)
    except LayerShapeError as e:
        raise ShapeMismatchError(str(e), e.layer_index) from e
    except NetworkError as e:
        raise ShapeMismatchError(str(e)) from e
    return net, pre


def load_image(path) -> Tensor3:
    """Binary PPM as a (3, H, W) float32 tensor with values 0..255, RGB planes."""
    rgb = load_ppm(path)
    return Tensor3.from_array(rgb.transpose(2, 0, 1).astype(np.float32))


def _resize_bilinear(planes: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of (C, H, W) float64; borders replicate."""
    c, h, w = planes.shape
    if (h, w) == (out_h, out_w):
        return planes
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    fy = ys - y0f
    fx = xs - x0f
    y0 = np.clip(y0f.astype(int), 0, h - 1)
    y1 = np.clip(y0f.astype(int) + 1, 0, h - 1)
    x0 = np.clip(x0f.astype(int), 0, w - 1)
    x1 = np.clip(x0f.astype(int) + 1, 0, w - 1)
    tl = planes[:, y0][:, :, x0]
    tr = planes[:, y0][:, :, x1]
    bl = planes[:, y1][:, :, x0]
    br = planes[:, y1][:, :, x1]
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    return (1 - fy) * ((1 - fx) * tl + fx * tr) + fy * ((1 - fx) * bl + fx * br)


def preprocess(img: Tensor3, pre: PreprocessSpec) -> Tensor3:
    """Bilinear-resize to the model's input size, then value*scale - channel mean."""
    planes = _resize_bilinear(img.data.astype(np.float64), pre.height, pre.width)
    means = np.asarray(pre.means, dtype=np.float64)[:, None, None]
    return Tensor3.from_array((planes * pre.scale - means).astype(np.float32))
