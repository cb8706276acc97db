"""Walk a recorded forward pass backwards, from one output class to input pixels.

The walk keeps a frontier of node locations for the layer currently being
resolved. Each layer kind has its own rule for picking the predecessor nodes
most responsible for a frontier node's activation:

- dense: keep the positively contributing inputs (weight * activation > 0),
  strongest first, optionally truncated to the top n;
- conv: inside the node's receptive field, pick the input channel(s) whose
  summed weight*activation contribution is largest, then the single strongest
  element within each picked channel;
- maxpool: the window element that won the max;
- relu / softmax: pass through unchanged (dead relu nodes are dropped).

Frontiers are deduplicated after every layer; without that the walk grows
exponentially through a deep stack.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .network import (
    Conv,
    Dense,
    Flatten,
    MaxPool,
    NetworkSpec,
    ReLU,
    Softmax,
    ActivationTrace,
)
from .tensor import Shape3, Tensor1, Tensor3, receptive_field, window_origin

log = logging.getLogger("cnnbtrk.backtrack")


@dataclass(frozen=True)
class Flat:
    """A node in a flat (post-flatten) layer."""

    index: int


@dataclass(frozen=True)
class Spatial:
    """A node in a spatial layer: (channel, y, x)."""

    channel: int
    y: int
    x: int


NodeLoc = Flat | Spatial


@dataclass(frozen=True)
class BacktrackConfig:
    """Fan-back limits. None means unlimited (keep every positive contributor)."""

    top_n_fc: int | None = 10
    conv_channels: int | None = 1

    def __post_init__(self):
        if self.top_n_fc is not None and self.top_n_fc < 1:
            raise ValueError("top_n_fc must be >= 1 or None")
        if self.conv_channels is not None and self.conv_channels < 1:
            raise ValueError("conv_channels must be >= 1 or None")


@dataclass(frozen=True)
class Frontier:
    """Deduplicated node set selected at one layer's input, in selection order."""

    layer_index: int
    nodes: tuple[NodeLoc, ...]


@dataclass
class BacktrackResult:
    width: int
    height: int
    pixels: list[tuple[int, int]]
    start_class: int
    dead_layer: int | None = None  # layer whose rule emptied the frontier, if any
    relu_dropped: int = 0
    frontiers: list[Frontier] = field(default_factory=list)

    def to_payload(self) -> dict:
        """The pixel-list wire format consumed by the saliency and eval stages."""
        return {"width": self.width, "height": self.height, "pixels": [[y, x] for y, x in self.pixels]}


def _dedup(nodes) -> list:
    return list(dict.fromkeys(nodes))


def backtrack_fc(target: Flat, layer: Dense, prev_acts: Tensor1, cfg: BacktrackConfig) -> list[Flat]:
    """Inputs with positive weight*activation contribution, strongest first."""
    if not 0 <= target.index < layer.out_dim:
        raise IndexError(f"target {target.index} out of range for {layer.out_dim} outputs")
    contrib = layer.weights[target.index].astype(np.float64) * prev_acts.data.astype(np.float64)
    order = np.argsort(-contrib, kind="stable")  # descending, ties to the smaller index
    picked = [int(j) for j in order if contrib[j] > 0.0]
    if cfg.top_n_fc is not None:
        picked = picked[: cfg.top_n_fc]
    return [Flat(j) for j in picked]


def backtrack_first_fc(target: Flat, flatten_input_shape: Shape3) -> Spatial:
    """Invert the channel-major flatten: index -> (channel, y, x)."""
    if not 0 <= target.index < flatten_input_shape.size:
        raise IndexError(f"flat index {target.index} out of range for {flatten_input_shape}")
    plane = flatten_input_shape.height * flatten_input_shape.width
    c, rest = divmod(target.index, plane)
    y, x = divmod(rest, flatten_input_shape.width)
    return Spatial(c, y, x)


def backtrack_conv(target: Spatial, layer: Conv, prev_acts: Tensor3, cfg: BacktrackConfig) -> list[Spatial]:
    """Strongest predecessor node per selected input channel of the receptive field.

    Channels are ranked by their spatial contribution sum; only positive-sum
    channels are followed (up to cfg.conv_channels; None follows all of them).
    A window with no positive channel still emits its argmax channel so the
    branch stays traceable; a later relu drop cleans up truly dead paths.
    """
    fld = receptive_field(prev_acts, (target.y, target.x), layer.kernel, layer.stride, layer.pad)
    prod = layer.kernel_volume(target.channel).astype(np.float64) * fld.data.astype(np.float64)
    sums = prod.sum(axis=(1, 2))
    ranked = np.argsort(-sums, kind="stable")
    positive = [int(c) for c in ranked if sums[c] > 0.0]
    if positive:
        chosen = positive if cfg.conv_channels is None else positive[: cfg.conv_channels]
    else:
        chosen = [int(ranked[0])]
    top, left = window_origin((target.y, target.x), layer.stride, layer.pad)
    _, h, w = prev_acts.data.shape
    out: list[Spatial] = []
    for c in chosen:
        i, j = np.unravel_index(int(np.argmax(prod[c])), prod[c].shape)
        y, x = top + int(i), left + int(j)
        if 0 <= y < h and 0 <= x < w:  # argmax can land on a padding cell; drop it
            out.append(Spatial(c, y, x))
    return out


def backtrack_maxpool(target: Spatial, layer: MaxPool, prev_acts: Tensor3) -> Spatial:
    """The window element that won the max, same channel, absolute coordinates."""
    kh, kw = layer.kernel
    _, h, w = prev_acts.data.shape
    top, left = target.y * layer.stride, target.x * layer.stride
    if top + kh > h or left + kw > w or top < 0 or left < 0:
        raise IndexError(f"pool target ({target.y},{target.x}) outside the output grid for input {h}x{w}")
    window = prev_acts.data[target.channel, top : top + kh, left : left + kw]
    i, j = np.unravel_index(int(np.argmax(window)), window.shape)
    return Spatial(target.channel, top + int(i), left + int(j))


def _activation_at(acts: Tensor3 | Tensor1, node: NodeLoc) -> float:
    if isinstance(node, Flat):
        return acts.at(node.index)
    return acts.at(node.channel, node.y, node.x)


def backtrack_full(
    net: NetworkSpec,
    trace: ActivationTrace,
    start: int,
    cfg: BacktrackConfig | None = None,
    record_frontiers: bool = False,
) -> BacktrackResult:
    """Walk from output class `start` down to input pixels.

    Returns the duplicate-free pixel list in selection order (channels
    collapsed: a pixel counts if any input channel's node reached it). If a
    layer rule empties the frontier, the result carries that layer's index and
    an empty pixel list.
    """
    cfg = cfg or BacktrackConfig()
    if not 0 <= start < net.num_classes:
        raise IndexError(f"start class {start} out of range for {net.num_classes} classes")
    result = BacktrackResult(
        width=net.input_shape.width, height=net.input_shape.height, pixels=[], start_class=start
    )
    frontier: list[NodeLoc] = [Flat(start)]
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        prev = trace.input_of(idx)
        if isinstance(layer, Softmax):
            selected = frontier
        elif isinstance(layer, Dense):
            selected = [node for t in frontier for node in backtrack_fc(t, layer, prev, cfg)]
        elif isinstance(layer, Flatten):
            selected = [backtrack_first_fc(t, prev.shape) for t in frontier]
        elif isinstance(layer, ReLU):
            out_acts = trace.output_of(idx)
            selected = []
            dropped = 0
            for t in frontier:
                if _activation_at(out_acts, t) > 0.0:
                    selected.append(t)
                else:
                    dropped += 1
            if dropped:
                result.relu_dropped += dropped
                log.debug("relu at layer %d dropped %d dead node(s)", idx, dropped)
        elif isinstance(layer, MaxPool):
            selected = [backtrack_maxpool(t, layer, prev) for t in frontier]
        elif isinstance(layer, Conv):
            selected = [node for t in frontier for node in backtrack_conv(t, layer, prev, cfg)]
        else:
            raise TypeError(f"unknown layer kind {type(layer).__name__}")
        frontier = _dedup(selected)
        if record_frontiers:
            result.frontiers.append(Frontier(idx, tuple(frontier)))
        if not frontier:
            result.dead_layer = idx
            log.info("backtrack frontier died at layer %d (%s)", idx, type(layer).__name__)
            return result
    result.pixels = _dedup((n.y, n.x) for n in frontier)
    return result
