"""Pixel-mask metrics and batch evaluation of the full pipeline over a dataset.

Dataset layout: <dir>/images/<name>.ppm paired with <dir>/masks/<name>.pgm by
stem. Backtracked pixels live in network-input coordinates; they are mapped to
the ground-truth mask's resolution before splatting, so metrics are computed
at the original image size.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .backtrack import BacktrackConfig, backtrack_full
from .model_io import PreprocessSpec, load_image, preprocess
from .netpbm import NetpbmError, load_pgm
from .network import NetworkSpec, forward_with_trace
from .saliency import SaliencyConfig, splat_gaussian

log = logging.getLogger("cnnbtrk.evaluate")

F_BETA_SQUARED = 0.3  # saliency-benchmark convention for the weighted F-score


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class BinaryMask:
    data: np.ndarray  # (H, W) bool, read-only

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.dtype != bool:
            raise ValueError(f"mask must be a 2-D bool array, got {arr.shape} {arr.dtype}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_gray(cls, gray: np.ndarray, threshold: int = 127) -> "BinaryMask":
        return cls(np.asarray(gray) > threshold)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


class ConfusionCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


def confusion_counts(pred: BinaryMask, gt: BinaryMask) -> ConfusionCounts:
    if pred.data.shape != gt.data.shape:
        raise DatasetError(f"mask size mismatch: prediction {pred.data.shape}, ground truth {gt.data.shape}")
    tp = int(np.count_nonzero(pred.data & gt.data))
    fp = int(np.count_nonzero(pred.data & ~gt.data))
    fn = int(np.count_nonzero(~pred.data & gt.data))
    tn = int(np.count_nonzero(~pred.data & ~gt.data))
    return ConfusionCounts(tp, fp, fn, tn)


@dataclass(frozen=True)
class MetricEntry:
    accuracy: float
    precision: float
    recall: float
    f_score: float  # beta^2 = 0.3
    f_beta_1: float  # plain F1, emitted so the two conventions stay visible
    iou: float
    zero_division: bool = False

    def to_payload(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
            "f_beta_1": self.f_beta_1,
            "iou": self.iou,
            "zero_division": self.zero_division,
        }


def metrics(counts: ConfusionCounts) -> MetricEntry:
    """Table-style metrics; any zero denominator yields 0 and sets the flag."""
    tp, fp, fn, tn = counts
    flagged = False

    def div(num: float, den: float) -> float:
        nonlocal flagged
        if den == 0:
            flagged = True
            return 0.0
        return num / den

    accuracy = div(tp + tn, tp + fp + fn + tn)
    precision = div(tp, tp + fp)
    recall = div(tp, tp + fn)
    f_score = div((1 + F_BETA_SQUARED) * precision * recall, F_BETA_SQUARED * precision + recall)
    f_beta_1 = div(2 * precision * recall, precision + recall)
    iou = div(tp, tp + fp + fn)
    return MetricEntry(accuracy, precision, recall, f_score, f_beta_1, iou, flagged)


@dataclass
class ImageResult:
    name: str
    entry: MetricEntry
    pixel_count: int
    predicted_class: int


@dataclass
class MetricsReport:
    per_image: list[ImageResult]
    mean: MetricEntry
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def to_payload(self) -> dict:
        return {
            "images": [
                {
                    "name": r.name,
                    "predicted_class": r.predicted_class,
                    "pixel_count": r.pixel_count,
                    **r.entry.to_payload(),
                }
                for r in self.per_image
            ],
            "mean": self.mean.to_payload(),
            "skipped": [{"name": n, "reason": r} for n, r in self.skipped],
        }


def _mean_entry(entries: list[MetricEntry]) -> MetricEntry:
    def avg(get):
        return float(np.mean([get(e) for e in entries]))

    return MetricEntry(
        accuracy=avg(lambda e: e.accuracy),
        precision=avg(lambda e: e.precision),
        recall=avg(lambda e: e.recall),
        f_score=avg(lambda e: e.f_score),
        f_beta_1=avg(lambda e: e.f_beta_1),
        iou=avg(lambda e: e.iou),
        zero_division=any(e.zero_division for e in entries),
    )


def map_pixels(pixels, from_w: int, from_h: int, to_w: int, to_h: int) -> list[tuple[int, int]]:
    """Center-map pixel coordinates between resolutions (duplicates collapse)."""
    if (from_w, from_h) == (to_w, to_h):
        return list(dict.fromkeys(pixels))
    mapped = []
    for y, x in pixels:
        ty = min(int((y + 0.5) * to_h / from_h), to_h - 1)
        tx = min(int((x + 0.5) * to_w / from_w), to_w - 1)
        mapped.append((ty, tx))
    return list(dict.fromkeys(mapped))


@dataclass
class PixelRecord:
    """Backtrack output for one dataset image, ready for any saliency config."""

    name: str
    pixels: list[tuple[int, int]]  # ground-truth-resolution coordinates
    width: int
    height: int
    gt: BinaryMask
    predicted_class: int
    raw_pixel_count: int  # before resolution mapping


def discover_pairs(dataset_dir) -> list[tuple[str, Path, Path]]:
    root = Path(dataset_dir)
    images = sorted((root / "images").glob("*.ppm"))
    if not images:
        raise DatasetError(f"no samples: no images/*.ppm under {root}")
    return [(p.stem, p, root / "masks" / (p.stem + ".pgm")) for p in images]


def _backtrack_one(net, pre, cfg, name, image_path, mask_path):
    try:
        gt = BinaryMask.from_gray(load_pgm(mask_path))
        img = load_image(image_path)
        _, orig_h, orig_w = img.data.shape
        if (gt.height, gt.width) != (orig_h, orig_w):
            return name, None, f"mask {gt.width}x{gt.height} does not match image {orig_w}x{orig_h}"
        trace, predicted = forward_with_trace(net, preprocess(img, pre))
        result = backtrack_full(net, trace, predicted, cfg)
        pixels = map_pixels(result.pixels, result.width, result.height, orig_w, orig_h)
        rec = PixelRecord(name, pixels, orig_w, orig_h, gt, predicted, len(result.pixels))
        return name, rec, None
    except (OSError, NetpbmError) as e:
        return name, None, str(e)


_worker_state: dict = {}


def _init_worker(net, pre, cfg):  # pragma: no cover - runs in the pool subprocess
    _worker_state.update(net=net, pre=pre, cfg=cfg)


def _pooled_backtrack_one(args):  # pragma: no cover - runs in the pool subprocess
    name, image_path, mask_path = args
    return _backtrack_one(
        _worker_state["net"], _worker_state["pre"], _worker_state["cfg"], name, image_path, mask_path
    )


def collect_pixels(
    net: NetworkSpec,
    pre: PreprocessSpec,
    dataset_dir,
    btk_cfg: BacktrackConfig | None = None,
    jobs: int = 1,
) -> tuple[list[PixelRecord], list[tuple[str, str]]]:
    """The expensive half of an evaluation: forward + backtrack per image."""
    cfg = btk_cfg or BacktrackConfig()
    pairs = discover_pairs(dataset_dir)
    skipped = [(name, "mask file missing") for name, _, mp in pairs if not mp.is_file()]
    pairs = [p for p in pairs if p[2].is_file()]

    if jobs > 1 and len(pairs) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(net, pre, cfg)) as pool:
            outcomes = list(pool.map(_pooled_backtrack_one, pairs))
    else:
        outcomes = [_backtrack_one(net, pre, cfg, *pair) for pair in pairs]

    records = []
    for name, rec, reason in outcomes:
        if rec is None:
            skipped.append((name, reason))
            log.warning("skipping %s: %s", name, reason)
        else:
            records.append(rec)
    return records, skipped


def report_for(
    records: list[PixelRecord], skipped: list[tuple[str, str]], sal_cfg: SaliencyConfig
) -> MetricsReport:
    """The cheap half: splat + threshold + confusion for one saliency config."""
    results = []
    for rec in records:
        smap = splat_gaussian(rec.pixels, rec.width, rec.height, sal_cfg)
        entry = metrics(confusion_counts(BinaryMask(smap.mask), rec.gt))
        results.append(ImageResult(rec.name, entry, rec.raw_pixel_count, rec.predicted_class))
    if not results:
        raise DatasetError(f"no samples evaluated ({len(skipped)} skipped)")
    return MetricsReport(per_image=results, mean=_mean_entry([r.entry for r in results]), skipped=skipped)


def dataset_run(
    net: NetworkSpec,
    pre: PreprocessSpec,
    dataset_dir,
    btk_cfg: BacktrackConfig | None = None,
    sal_cfg: SaliencyConfig | None = None,
    jobs: int = 1,
    strict: bool = False,
) -> MetricsReport:
    """Evaluate every image/mask pair; unreadable or mismatched pairs are skipped."""
    records, skipped = collect_pixels(net, pre, dataset_dir, btk_cfg, jobs)
    if strict and skipped:
        raise DatasetError(f"{len(skipped)} pair(s) skipped under --strict: {[n for n, _ in skipped]}")
    return report_for(records, skipped, sal_cfg or SaliencyConfig())


def grid_search(
    net: NetworkSpec,
    pre: PreprocessSpec,
    dataset_dir,
    sigmas,
    thresholds,
    btk_cfg: BacktrackConfig | None = None,
    jobs: int = 1,
    strict: bool = False,
) -> list[tuple[SaliencyConfig, MetricsReport]]:
    """One backtrack pass, then every (sigma, threshold) combination."""
    records, skipped = collect_pixels(net, pre, dataset_dir, btk_cfg, jobs)
    if strict and skipped:
        raise DatasetError(f"{len(skipped)} pair(s) skipped under --strict: {[n for n, _ in skipped]}")
    out = []
    for sigma in sigmas:
        for threshold in thresholds:
            cfg = SaliencyConfig(sigma=sigma, threshold=threshold)
            out.append((cfg, report_for(records, skipped, cfg)))
    return out
