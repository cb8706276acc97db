"""export-vgg19: one-time conversion of a VGG19 checkpoint to the cnnbtrk format."""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, export


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="export-vgg19", description=__doc__)
    parser.add_argument("--out", required=True, help="output model path (e.g. model.cnnbtrk)")
    parser.add_argument("--source", default="torchvision",
                        help="checkpoint .pt/.pth path, or 'torchvision[:VARIANT]' (default: torchvision)")
    parser.add_argument("--labels", default=None, help="optional class-label file, one label per line")
    args = parser.parse_args(argv)
    try:
        manifest = export(args.source, args.out, labels_path=args.labels)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {manifest.output} (sha256 {manifest.sha256})")
    print(f"manifest: labels from {manifest.labels_origin}, {len(manifest.layer_map)} layers mapped")
    return 0


if __name__ == "__main__":
    sys.exit(main())
