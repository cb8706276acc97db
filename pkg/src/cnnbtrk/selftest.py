"""Differential self-check: replay backtrack walks against a brute-force enumerator.

The oracle here deliberately shares no index arithmetic with the production
code: receptive fields come from explicit loops over window offsets, channel
ranking from enumerated contribution products, and flatten inversion from an
exhaustive scan. Any divergence between the two is a bug in one of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backtrack import BacktrackConfig, Flat, Spatial, backtrack_full
from .network import (
    ActivationTrace,
    Conv,
    Dense,
    Flatten,
    MaxPool,
    NetworkSpec,
    ReLU,
    Softmax,
    forward_with_trace,
)
from .tensor import Shape3, Tensor3


def oracle_fc(weights_row, acts, top_n: int | None) -> list[int]:
    scored = []
    for j in range(len(acts)):
        c = float(weights_row[j]) * float(acts[j])
        if c > 0.0:
            scored.append((c, j))
    scored.sort(key=lambda s: (-s[0], s[1]))
    if top_n is not None:
        scored = scored[:top_n]
    return [j for _, j in scored]


def oracle_unflatten(index: int, shape: Shape3) -> tuple[int, int, int]:
    # exhaustive scan instead of divmod: slow but unarguable
    flat = 0
    for c in range(shape.channels):
        for y in range(shape.height):
            for x in range(shape.width):
                if flat == index:
                    return (c, y, x)
                flat += 1
    raise IndexError(f"index {index} not reachable in {shape}")


def oracle_conv(layer: Conv, acts: np.ndarray, target: tuple[int, int, int], conv_channels: int | None):
    tc, ty, tx = target
    kh, kw = layer.kernel
    in_c, h, w = acts.shape
    top = ty * layer.stride - layer.pad
    left = tx * layer.stride - layer.pad
    sums = []
    prods = []
    for c in range(in_c):
        grid = [[0.0] * kw for _ in range(kh)]
        total = 0.0
        for i in range(kh):
            for j in range(kw):
                y, x = top + i, left + j
                a = float(acts[c, y, x]) if 0 <= y < h and 0 <= x < w else 0.0
                v = float(layer.weights[tc, c, i, j]) * a
                grid[i][j] = v
                total += v
        prods.append(grid)
        sums.append(total)
    ranked = sorted(range(in_c), key=lambda c: (-sums[c], c))
    positive = [c for c in ranked if sums[c] > 0.0]
    if positive:
        chosen = positive if conv_channels is None else positive[:conv_channels]
    else:
        chosen = [ranked[0]]
    nodes = []
    for c in chosen:
        best_v = None
        best = None
        for i in range(kh):
            for j in range(kw):
                if best_v is None or prods[c][i][j] > best_v:
                    best_v, best = prods[c][i][j], (i, j)
        y, x = top + best[0], left + best[1]
        if 0 <= y < h and 0 <= x < w:
            nodes.append((c, y, x))
    return nodes


def oracle_maxpool(layer: MaxPool, acts: np.ndarray, target: tuple[int, int, int]) -> tuple[int, int, int]:
    tc, ty, tx = target
    kh, kw = layer.kernel
    top, left = ty * layer.stride, tx * layer.stride
    best_v = None
    best = None
    for i in range(kh):
        for j in range(kw):
            v = float(acts[tc, top + i, left + j])
            if best_v is None or v > best_v:
                best_v, best = v, (tc, top + i, left + j)
    return best


def _oracle_step(layer, prev, out_acts, frontier, cfg: BacktrackConfig):
    expected = []
    if isinstance(layer, Softmax):
        expected = list(frontier)
    elif isinstance(layer, Dense):
        for t in frontier:
            expected.extend(Flat(j) for j in oracle_fc(layer.weights[t.index], prev.data, cfg.top_n_fc))
    elif isinstance(layer, Flatten):
        expected = [Spatial(*oracle_unflatten(t.index, prev.shape)) for t in frontier]
    elif isinstance(layer, ReLU):
        for t in frontier:
            if isinstance(t, Flat):
                alive = float(out_acts.data[t.index]) > 0.0
            else:
                alive = float(out_acts.data[t.channel, t.y, t.x]) > 0.0
            if alive:
                expected.append(t)
    elif isinstance(layer, MaxPool):
        expected = [Spatial(*oracle_maxpool(layer, prev.data, (t.channel, t.y, t.x))) for t in frontier]
    elif isinstance(layer, Conv):
        for t in frontier:
            expected.extend(
                Spatial(*n) for n in oracle_conv(layer, prev.data, (t.channel, t.y, t.x), cfg.conv_channels)
            )
    else:
        raise TypeError(f"unknown layer kind {type(layer).__name__}")
    return list(dict.fromkeys(expected))


def verify_walk(net: NetworkSpec, trace: ActivationTrace, start: int, cfg: BacktrackConfig) -> list[str]:
    """Compare every per-layer selection of the real walk against the oracle."""
    mine = backtrack_full(net, trace, start, cfg, record_frontiers=True)
    recorded = {f.layer_index: list(f.nodes) for f in mine.frontiers}
    issues: list[str] = []
    frontier = [Flat(start)]
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        expected = _oracle_step(layer, trace.input_of(idx), trace.output_of(idx), frontier, cfg)
        got = recorded.get(idx)
        if got is None:
            issues.append(f"layer {idx} ({type(layer).__name__}): walk stopped before reaching it")
            break
        if got != expected:
            issues.append(f"layer {idx} ({type(layer).__name__}): impl selected {got}, oracle {expected}")
            break
        if not expected:
            break  # frontier legitimately died on both sides
        frontier = expected
    else:
        oracle_pixels = list(dict.fromkeys((n.y, n.x) for n in frontier))
        if mine.pixels != oracle_pixels:
            issues.append(f"pixel collapse: impl {mine.pixels}, oracle {oracle_pixels}")
    return issues


def random_network(rng: np.random.Generator) -> tuple[NetworkSpec, Tensor3]:
    """A small random conv stack (2..4 working layers, <=4 channels, <=8x8)."""
    while True:
        in_c = int(rng.integers(1, 4))
        size = int(rng.choice([5, 6, 8]))
        layers = []
        working = 0  # conv/pool/dense count, target 2..4
        c, h, w = in_c, size, size
        for _ in range(int(rng.integers(0, 3))):
            k = int(rng.choice([1, 3]))
            stride = int(rng.choice([1, 2])) if k == 3 and h >= 5 else 1
            pad = int(rng.integers(0, 2)) if k == 3 else 0
            oh = (h + 2 * pad - k) // stride + 1
            ow = (w + 2 * pad - k) // stride + 1
            if oh < 2 or ow < 2:
                continue
            out_c = int(rng.integers(1, 5))
            weights = rng.standard_normal((out_c, c, k, k)).astype(np.float32)
            bias = (0.1 * rng.standard_normal(out_c)).astype(np.float32)
            layers.append(Conv(out_c, (k, k), stride, pad, weights, bias))
            working += 1
            c, h, w = out_c, oh, ow
            if rng.random() < 0.7:
                layers.append(ReLU())
            if h >= 4 and w >= 4 and rng.random() < 0.5:
                layers.append(MaxPool((2, 2), 2))
                working += 1
                h, w = (h - 2) // 2 + 1, (w - 2) // 2 + 1
        layers.append(Flatten())
        flat = c * h * w
        if rng.random() < 0.4:
            mid = int(rng.integers(2, 7))
            layers.append(
                Dense(mid, rng.standard_normal((mid, flat)).astype(np.float32),
                      (0.1 * rng.standard_normal(mid)).astype(np.float32))
            )
            layers.append(ReLU())
            working += 1
            flat = mid
        classes = int(rng.integers(2, 5))
        layers.append(
            Dense(classes, rng.standard_normal((classes, flat)).astype(np.float32),
                  (0.1 * rng.standard_normal(classes)).astype(np.float32))
        )
        layers.append(Softmax())
        working += 1
        if not 2 <= working <= 4:
            continue
        net = NetworkSpec(Shape3(in_c, size, size), tuple(layers), tuple(f"class_{i}" for i in range(classes)))
        image = Tensor3.from_array(rng.random((in_c, size, size)).astype(np.float32))
        return net, image


_DEFAULT_CONFIGS = (
    BacktrackConfig(),
    BacktrackConfig(top_n_fc=3, conv_channels=2),
    BacktrackConfig(top_n_fc=None, conv_channels=None),
)


@dataclass
class TrialOutcome:
    seed: int
    issues: list[str]


def run_selftest(seeds: int = 20, base_seed: int = 0, configs=_DEFAULT_CONFIGS) -> list[TrialOutcome]:
    """One random network per seed, walked under several fan-back configs."""
    outcomes = []
    for s in range(seeds):
        seed = base_seed + s
        rng = np.random.default_rng(seed)
        net, image = random_network(rng)
        trace, predicted = forward_with_trace(net, image)
        starts = {predicted, int(rng.integers(0, net.num_classes))}
        issues = []
        for start in sorted(starts):
            for cfg in configs:
                for problem in verify_walk(net, trace, start, cfg):
                    issues.append(f"seed {seed}, start {start}, cfg {cfg}: {problem}")
        outcomes.append(TrialOutcome(seed, issues))
    return outcomes
