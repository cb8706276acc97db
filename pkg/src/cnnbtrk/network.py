"""Declarative VGG-style layer stack and a forward pass that records every activation.

The stack is a plain chain: spatial layers (conv / relu / maxpool), one flatten,
then dense layers and a final softmax. Shape checking happens once at
construction; the forward pass trusts it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Shape3, Tensor1, Tensor3, locked_f32, window_grid


class NetworkError(Exception):
    """Structural or runtime failure in the layer chain."""


class LayerShapeError(NetworkError):
    def __init__(self, layer_index: int, message: str):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: tuple[int, int]
    stride: int
    pad: int
    weights: np.ndarray  # (out_c, in_c, kh, kw)
    bias: np.ndarray  # (out_c,)

    def __post_init__(self):
        kh, kw = self.kernel
        if min(self.out_channels, kh, kw, self.stride) < 1 or self.pad < 0:
            raise ValueError("conv geometry parameters out of range")
        w = np.asarray(self.weights)
        if w.ndim != 4 or w.shape[0] != self.out_channels or w.shape[2:] != (kh, kw):
            raise ValueError(f"conv weights shaped {w.shape}, expected ({self.out_channels}, in_c, {kh}, {kw})")
        object.__setattr__(self, "weights", locked_f32(w, w.shape))
        b = np.asarray(self.bias)
        if b.shape != (self.out_channels,):
            raise ValueError(f"conv bias shaped {b.shape}, expected ({self.out_channels},)")
        object.__setattr__(self, "bias", locked_f32(b, b.shape))

    @property
    def in_channels(self) -> int:
        return int(self.weights.shape[1])

    def kernel_volume(self, out_channel: int) -> np.ndarray:
        """The (in_c, kh, kw) weight volume feeding one output channel."""
        return self.weights[out_channel]


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    kernel: tuple[int, int]
    stride: int

    def __post_init__(self):
        if min(self.kernel[0], self.kernel[1], self.stride) < 1:
            raise ValueError("maxpool geometry parameters out of range")


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    out_dim: int
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 2 or w.shape[0] != self.out_dim:
            raise ValueError(f"dense weights shaped {w.shape}, expected ({self.out_dim}, in_dim)")
        object.__setattr__(self, "weights", locked_f32(w, w.shape))
        b = np.asarray(self.bias)
        if b.shape != (self.out_dim,):
            raise ValueError(f"dense bias shaped {b.shape}, expected ({self.out_dim},)")
        object.__setattr__(self, "bias", locked_f32(b, b.shape))

    @property
    def in_dim(self) -> int:
        return int(self.weights.shape[1])


@dataclass(frozen=True)
class Softmax:
    pass


LayerSpec = Conv | ReLU | MaxPool | Flatten | Dense | Softmax

_SPATIAL_KINDS = (Conv, ReLU, MaxPool)


def shape_chain(input_shape: Shape3, layers: tuple[LayerSpec, ...]) -> list[Shape3 | int]:
    """Per-layer output shapes (Shape3 for spatial, int length for flat).

    Raises LayerShapeError naming the first inconsistent layer.
    """
    shapes: list[Shape3 | int] = []
    cur: Shape3 | int = input_shape
    for i, layer in enumerate(layers):
        if isinstance(layer, Conv):
            if not isinstance(cur, Shape3):
                raise LayerShapeError(i, "conv applied to flat input")
            if layer.in_channels != cur.channels:
                raise LayerShapeError(i, f"conv expects {layer.in_channels} input channels, chain has {cur.channels}")
            oh, ow = window_grid(cur.height, cur.width, layer.kernel, layer.stride, layer.pad)
            if oh < 1 or ow < 1:
                raise LayerShapeError(i, f"conv output empty for input {cur.height}x{cur.width}")
            cur = Shape3(layer.out_channels, oh, ow)
        elif isinstance(layer, MaxPool):
            if not isinstance(cur, Shape3):
                raise LayerShapeError(i, "maxpool applied to flat input")
            oh, ow = window_grid(cur.height, cur.width, layer.kernel, layer.stride, 0)
            if oh < 1 or ow < 1:
                raise LayerShapeError(i, f"maxpool output empty for input {cur.height}x{cur.width}")
            cur = Shape3(cur.channels, oh, ow)
        elif isinstance(layer, Flatten):
            if not isinstance(cur, Shape3):
                raise LayerShapeError(i, "flatten applied to flat input")
            cur = cur.size
        elif isinstance(layer, Dense):
            if isinstance(cur, Shape3):
                raise LayerShapeError(i, "dense applied to spatial input (missing flatten)")
            if layer.in_dim != cur:
                raise LayerShapeError(i, f"dense expects in_dim {layer.in_dim}, chain has {cur}")
            cur = layer.out_dim
        elif isinstance(layer, Softmax):
            if isinstance(cur, Shape3):
                raise LayerShapeError(i, "softmax applied to spatial input")
        elif isinstance(layer, ReLU):
            pass  # shape preserved
        else:
            raise LayerShapeError(i, f"unknown layer kind {type(layer).__name__}")
        shapes.append(cur)
    return shapes


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: Shape3
    layers: tuple[LayerSpec, ...]
    class_labels: tuple[str, ...]
    output_shapes: tuple[Shape3 | int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        shapes = shape_chain(self.input_shape, self.layers)
        object.__setattr__(self, "output_shapes", tuple(shapes))

        flat_indices = [i for i, l in enumerate(self.layers) if isinstance(l, Flatten)]
        if len(flat_indices) > 1:
            raise NetworkError(f"flatten appears {len(flat_indices)} times, at most one allowed")
        if flat_indices:
            fi = flat_indices[0]
            if any(not isinstance(l, _SPATIAL_KINDS) for l in self.layers[:fi]):
                raise NetworkError("only spatial layers may precede flatten")
            after = self.layers[fi + 1 :]
            first_dense = next((j for j, l in enumerate(after) if isinstance(l, Dense)), None)
            if first_dense is None:
                raise NetworkError("flatten must be followed by a dense layer")
            if any(not isinstance(l, ReLU) for l in after[:first_dense]):
                raise NetworkError("flatten must sit directly before the dense block")
        if len(self.layers) < 2 or not isinstance(self.layers[-1], Softmax) or not isinstance(self.layers[-2], Dense):
            raise NetworkError("network must end with dense followed by softmax")
        out_dim = self.layers[-2].out_dim
        if len(self.class_labels) != out_dim:
            raise NetworkError(f"{len(self.class_labels)} class labels for {out_dim} output classes")

    @property
    def num_classes(self) -> int:
        return len(self.class_labels)


@dataclass(frozen=True)
class ActivationTrace:
    """Recorded outputs of one forward pass; entries[0] is the network input."""

    entries: tuple[Tensor3 | Tensor1, ...]

    def input_of(self, layer_index: int) -> Tensor3 | Tensor1:
        return self.entries[layer_index]

    def output_of(self, layer_index: int) -> Tensor3 | Tensor1:
        return self.entries[layer_index + 1]


def conv_forward(x: Tensor3, layer: Conv) -> Tensor3:
    c, h, w = x.data.shape
    if c != layer.in_channels:
        raise NetworkError(f"conv expects {layer.in_channels} channels, input has {c}")
    kh, kw = layer.kernel
    out_h, out_w = window_grid(h, w, layer.kernel, layer.stride, layer.pad)
    if out_h < 1 or out_w < 1:
        raise NetworkError(f"conv output empty for input {h}x{w}")
    padded = np.pad(x.data, ((0, 0), (layer.pad, layer.pad), (layer.pad, layer.pad))) if layer.pad else x.data
    # im2col: (c, kh, kw, out_h, out_w) -> matrix, accumulate in float64
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    windows = windows[:, :: layer.stride, :: layer.stride]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, out_h * out_w).astype(np.float64)
    wmat = layer.weights.reshape(layer.out_channels, c * kh * kw).astype(np.float64)
    out = wmat @ cols + layer.bias.astype(np.float64)[:, None]
    return Tensor3.from_array(out.reshape(layer.out_channels, out_h, out_w).astype(np.float32))


def maxpool_forward(x: Tensor3, layer: MaxPool) -> Tensor3:
    c, h, w = x.data.shape
    kh, kw = layer.kernel
    out_h, out_w = window_grid(h, w, layer.kernel, layer.stride, 0)
    if out_h < 1 or out_w < 1:
        raise NetworkError(f"maxpool output empty for input {h}x{w}")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    pooled = windows[:, :: layer.stride, :: layer.stride].max(axis=(3, 4))
    return Tensor3.from_array(pooled)


def dense_forward(x: Tensor1, layer: Dense) -> Tensor1:
    if x.size != layer.in_dim:
        raise NetworkError(f"dense expects length {layer.in_dim}, input has {x.size}")
    out = layer.weights.astype(np.float64) @ x.data.astype(np.float64) + layer.bias.astype(np.float64)
    return Tensor1(out.astype(np.float32))


def relu(x: Tensor3 | Tensor1) -> Tensor3 | Tensor1:
    if isinstance(x, Tensor3):
        return Tensor3.from_array(np.maximum(x.data, 0.0))
    return Tensor1(np.maximum(x.data, 0.0))


def softmax(x: Tensor1) -> Tensor1:
    if x.size == 0:
        raise NetworkError("softmax input empty")
    z = x.data.astype(np.float64)
    e = np.exp(z - z.max())
    return Tensor1((e / e.sum()).astype(np.float32))


def flatten(x: Tensor3) -> Tensor1:
    # channel-major linearization: index = c*H*W + y*W + x
    return Tensor1(x.data.ravel(order="C"))


def forward_with_trace(net: NetworkSpec, x: Tensor3) -> tuple[ActivationTrace, int]:
    """Run the full chain, recording every layer output; returns the argmax class."""
    if x.shape != net.input_shape:
        raise NetworkError(f"input shaped {x.shape}, network expects {net.input_shape}")
    entries: list[Tensor3 | Tensor1] = [x]
    cur: Tensor3 | Tensor1 = x
    for i, layer in enumerate(net.layers):
        try:
            if isinstance(layer, Conv):
                cur = conv_forward(cur, layer)
            elif isinstance(layer, ReLU):
                cur = relu(cur)
            elif isinstance(layer, MaxPool):
                cur = maxpool_forward(cur, layer)
            elif isinstance(layer, Flatten):
                cur = flatten(cur)
            elif isinstance(layer, Dense):
                cur = dense_forward(cur, layer)
            elif isinstance(layer, Softmax):
                cur = softmax(cur)
            else:
                raise NetworkError(f"unknown layer kind {type(layer).__name__}")
        except NetworkError as e:
            raise LayerShapeError(i, str(e)) from e
        entries.append(cur)
    predicted = int(np.argmax(entries[-1].data))  # first maximum = smallest class index
    return ActivationTrace(tuple(entries)), predicted
