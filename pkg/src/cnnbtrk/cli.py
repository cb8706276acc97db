"""Command-line entry point: classify, backtrack, eval, selftest.

Exit codes: 0 success, 1 internal invariant failure, 2 user/input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .backtrack import BacktrackConfig, backtrack_full
from .evaluate import DatasetError, dataset_run, grid_search
from .model_io import ModelFormatError, load_image, load_model, preprocess
from .netpbm import NetpbmError, write_pgm, write_ppm
from .network import NetworkError, forward_with_trace
from .saliency import SaliencyConfig, attention_heatmap, bounding_box, field_to_gray, mask_to_gray, splat_gaussian
from .selftest import run_selftest

log = logging.getLogger("cnnbtrk.cli")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _fan_limit(text: str) -> int | None:
    if text == "all":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'all', got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("fan-back limits must be >= 1")
    return value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnnbtrk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_flags(p):
        p.add_argument("--model", required=True, help="model file (.cnnbtrk)")

    def add_backtrack_flags(p):
        p.add_argument("--top-n", type=_fan_limit, default=10, metavar="N|all",
                       help="positive fc contributors kept per node (default 10)")
        p.add_argument("--conv-channels", type=_fan_limit, default=1, metavar="N|all",
                       help="top contributing conv channels followed per node (default 1)")

    def add_saliency_flags(p):
        p.add_argument("--sigma", type=float, default=10.0, help="gaussian std-dev in pixels (default 10)")
        p.add_argument("--threshold", type=float, default=0.3, help="mask threshold in (0,1] (default 0.3)")

    p = sub.add_parser("classify", help="print the top-5 classes for an image")
    add_model_flags(p)
    p.add_argument("image", help="input image (binary PPM)")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("backtrack", help="trace a classification back to pixels and render the outputs")
    add_model_flags(p)
    p.add_argument("image", help="input image (binary PPM)")
    p.add_argument("--out-dir", required=True, help="directory for the five output artifacts")
    p.add_argument("--class", dest="class_index", type=int, default=None,
                   help="backtrack this class instead of the predicted one")
    add_backtrack_flags(p)
    add_saliency_flags(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("eval", help="run the saliency benchmark over an image/mask dataset")
    add_model_flags(p)
    p.add_argument("dataset", help="directory containing images/*.ppm and masks/*.pgm")
    add_backtrack_flags(p)
    add_saliency_flags(p)
    p.add_argument("--grid-search", nargs="+", metavar="PARAM=V1,V2",
                   help="grid over saliency params, e.g. --grid-search sigma=5,10 threshold=0.2,0.3")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel image workers")
    p.add_argument("--strict", action="store_true", help="fail if any pair was skipped")

    p = sub.add_parser("selftest", help="check backtrack selections against a brute-force oracle")
    p.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    p.add_argument("--seeds", type=int, default=20, help="number of random networks (default 20)")

    return parser


def _load_pipeline(args):
    net, pre = load_model(args.model)
    img = load_image(args.image)
    trace, predicted = forward_with_trace(net, preprocess(img, pre))
    return net, trace, predicted


def _cmd_classify(args) -> int:
    net, trace, _ = _load_pipeline(args)
    probs = trace.entries[-1].data
    top = np.argsort(-probs, kind="stable")[:5]
    if args.json:
        payload = {"classes": [
            {"index": int(i), "label": net.class_labels[int(i)], "score": float(probs[i])} for i in top
        ]}
        print(json.dumps(payload))
    else:
        for rank, i in enumerate(top, 1):
            print(f"{rank}. {net.class_labels[int(i)]}  {float(probs[i]):.6f}")
    return 0


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _cmd_backtrack(args) -> int:
    net, trace, predicted = _load_pipeline(args)
    start = predicted if args.class_index is None else args.class_index
    if not 0 <= start < net.num_classes:
        raise UsageError(f"--class {start} out of range for {net.num_classes} classes")
    btk_cfg = BacktrackConfig(top_n_fc=args.top_n, conv_channels=args.conv_channels)
    sal_cfg = SaliencyConfig(sigma=args.sigma, threshold=args.threshold)

    result = backtrack_full(net, trace, start, btk_cfg)
    if result.dead_layer is not None:
        log.warning("frontier died at layer %d; outputs will be empty", result.dead_layer)
    smap = splat_gaussian(result.pixels, result.width, result.height, sal_cfg)
    box = bounding_box(result.pixels)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "pixels.json", result.to_payload())
    write_pgm(out_dir / "saliency.pgm", field_to_gray(smap))
    write_pgm(out_dir / "mask.pgm", mask_to_gray(smap))
    write_ppm(out_dir / "heatmap.ppm", attention_heatmap(smap))
    _write_json(out_dir / "bbox.json", {"bbox": box.to_payload() if box else None})

    summary = {
        "out_dir": str(out_dir),
        "files": ["pixels.json", "saliency.pgm", "mask.pgm", "heatmap.ppm", "bbox.json"],
        "class": {"index": start, "label": net.class_labels[start]},
        "predicted_class": predicted,
        "pixel_count": len(result.pixels),
        "relu_dropped": result.relu_dropped,
        "dead_layer": result.dead_layer,
    }
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(f"wrote {len(summary['files'])} artifacts to {out_dir} "
              f"({len(result.pixels)} pixels for class {net.class_labels[start]!r})")
    return 0


def _parse_grid(tokens) -> tuple[list[float], list[float]]:
    grid = {}
    for token in tokens:
        key, _, values = token.partition("=")
        if key not in ("sigma", "threshold") or not values:
            raise UsageError(f"bad --grid-search token {token!r}, expected sigma=... or threshold=...")
        try:
            grid[key] = [float(v) for v in values.split(",")]
        except ValueError:
            raise UsageError(f"bad numeric list in --grid-search token {token!r}")
    return grid.get("sigma", [10.0]), grid.get("threshold", [0.3])


def _cmd_eval(args) -> int:
    net, pre = load_model(args.model)
    btk_cfg = BacktrackConfig(top_n_fc=args.top_n, conv_channels=args.conv_channels)
    if args.grid_search:
        sigmas, thresholds = _parse_grid(args.grid_search)
        rows = grid_search(net, pre, args.dataset, sigmas, thresholds,
                           btk_cfg=btk_cfg, jobs=args.jobs, strict=args.strict)
        best = max(range(len(rows)), key=lambda i: rows[i][1].mean.f_score)
        payload = {"grid": [
            {"sigma": cfg.sigma, "threshold": cfg.threshold, "best": i == best, **report.to_payload()}
            for i, (cfg, report) in enumerate(rows)
        ]}
        print(json.dumps(payload, sort_keys=True, indent=2))
    else:
        sal_cfg = SaliencyConfig(sigma=args.sigma, threshold=args.threshold)
        report = dataset_run(net, pre, args.dataset, btk_cfg, sal_cfg, jobs=args.jobs, strict=args.strict)
        print(json.dumps(report.to_payload(), sort_keys=True, indent=2))
    return 0


def _cmd_selftest(args) -> int:
    outcomes = run_selftest(seeds=args.seeds, base_seed=args.seed)
    failed = [o for o in outcomes if o.issues]
    for o in outcomes:
        status = "FAIL" if o.issues else "ok"
        print(f"seed {o.seed}: {status}")
        for issue in o.issues:
            print(f"  {issue}")
    print(f"{len(outcomes) - len(failed)}/{len(outcomes)} seeds clean")
    return 1 if failed else 0


def main(argv=None) -> int:
    level = os.environ.get("CNNBTRK_LOG", "warn").lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "classify": _cmd_classify,
        "backtrack": _cmd_backtrack,
        "eval": _cmd_eval,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except (ModelFormatError, NetpbmError, DatasetError, NetworkError, UsageError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
