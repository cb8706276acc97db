"""Map a torchvision-layout VGG19 checkpoint onto the cnnbtrk model format.

The source network normalizes inputs with per-channel mean AND std; the target
format only carries value*scale - mean. The std division is folded into the
first conv layer's weights, which is numerically equivalent.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .format import write_model

INPUT_SIZE = 224
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# the standard VGG19 feature stack: conv output widths with 'M' for 2x2 maxpools
VGG19_FEATURES = [64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
                  512, 512, 512, 512, "M", 512, 512, 512, 512, "M"]
# classifier linears as (module index, relu module index or None, out_dim)
VGG19_CLASSIFIER = [(0, 1, 4096), (3, 4, 4096), (6, None, 1000)]


class ExportError(Exception):
    pass


@dataclass
class ExportManifest:
    source: str
    output: str
    sha256: str
    layer_map: list[dict]
    labels_origin: str

    def to_payload(self) -> dict:
        return {
            "source": self.source,
            "output": self.output,
            "sha256": self.sha256,
            "labels_origin": self.labels_origin,
            "layer_map": self.layer_map,
        }


def vgg19_layout() -> tuple[list[dict], list[str]]:
    """Descriptor layer entries plus the source module feeding each one."""
    layers: list[dict] = []
    sources: list[str] = []
    feat = 0
    in_c = 3
    for item in VGG19_FEATURES:
        if item == "M":
            layers.append({"kind": "maxpool", "kernel": [2, 2], "stride": 2})
            sources.append(f"features.{feat}")
            feat += 1
        else:
            layers.append({"kind": "conv", "out_channels": item, "in_channels": in_c,
                           "kernel": [3, 3], "stride": 1, "pad": 1})
            sources.append(f"features.{feat}")
            layers.append({"kind": "relu"})
            sources.append(f"features.{feat + 1}")
            feat += 2
            in_c = item
    layers.append({"kind": "flatten"})
    sources.append("torch.flatten")
    in_d = 512 * 7 * 7
    for module, relu_module, out_d in VGG19_CLASSIFIER:
        layers.append({"kind": "dense", "out_dim": out_d, "in_dim": in_d})
        sources.append(f"classifier.{module}")
        if relu_module is not None:
            layers.append({"kind": "relu"})
            sources.append(f"classifier.{relu_module}")
        in_d = out_d
    layers.append({"kind": "softmax"})
    sources.append("output.softmax")
    return layers, sources


def load_source(source: str):
    """Returns (state_dict of numpy arrays, labels-or-None, source id)."""
    if source == "torchvision" or source.startswith("torchvision:"):
        variant = source.split(":", 1)[1] if ":" in source else "IMAGENET1K_V1"
        try:
            from torchvision.models import VGG19_Weights, vgg19
        except ImportError as e:  # pragma: no cover
            raise ExportError(f"torchvision unavailable: {e}") from e
        try:
            weights = VGG19_Weights[variant]
            model = vgg19(weights=weights)
        except KeyError as e:
            raise ExportError(f"unknown torchvision VGG19 weight variant {variant!r}") from e
        except Exception as e:  # downloads can fail in offline environments
            raise ExportError(f"could not fetch torchvision weights {variant!r}: {e}") from e
        state = model.state_dict()
        labels = list(weights.meta.get("categories", []))
        return {k: v.detach().cpu().numpy() for k, v in state.items()}, labels or None, source

    path = Path(source)
    if not path.is_file():
        raise ExportError(f"source checkpoint not found: {source}")
    import torch

    obj = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(obj, dict) and "state_dict" in obj:
        obj = obj["state_dict"]
    if not isinstance(obj, dict):
        raise ExportError(f"checkpoint {source} does not contain a state dict")
    return {k: v.detach().cpu().numpy() for k, v in obj.items()}, None, str(path)


def _collect_arrays(state: dict, layers: list[dict], sources: list[str]):
    """Weight payload in descriptor order, with the std fold on the first conv."""
    arrays: list[np.ndarray] = []
    used: set[str] = set()
    first_conv = True
    for layer, src in zip(layers, sources):
        if layer["kind"] not in ("conv", "dense"):
            continue
        wk, bk = f"{src}.weight", f"{src}.bias"
        if wk not in state or bk not in state:
            raise ExportError(f"source is missing parameters for {src} (expected {wk}, {bk})")
        weight = np.asarray(state[wk], dtype=np.float32)
        bias = np.asarray(state[bk], dtype=np.float32)
        if layer["kind"] == "conv":
            want = (layer["out_channels"], layer["in_channels"], *layer["kernel"])
        else:
            want = (layer["out_dim"], layer["in_dim"])
        if weight.shape != want:
            raise ExportError(f"{wk} shaped {weight.shape}, expected {want}")
        if layer["kind"] == "conv" and first_conv:
            std = np.asarray(IMAGENET_STD, dtype=np.float64)[None, :, None, None]
            weight = (weight.astype(np.float64) / std).astype(np.float32)
            first_conv = False
        arrays.append(weight)
        arrays.append(bias)
        used.update((wk, bk))
    unmatched = sorted(set(state) - used)
    if unmatched:
        raise ExportError(f"source contains layers with no descriptor slot: {unmatched}")
    return arrays


def _resolve_labels(labels_path, meta_labels, n_classes: int) -> tuple[list[str], str]:
    if labels_path is not None:
        lines = [l.strip() for l in Path(labels_path).read_text().splitlines() if l.strip()]
        if len(lines) != n_classes:
            raise ExportError(f"labels file has {len(lines)} entries, network has {n_classes} classes")
        return lines, f"file:{labels_path}"
    if meta_labels is not None:
        if len(meta_labels) != n_classes:
            raise ExportError(f"source metadata has {len(meta_labels)} labels for {n_classes} classes")
        return list(meta_labels), "source-metadata"
    return [f"class_{i:04d}" for i in range(n_classes)], "generated"


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def export(source: str, out_path, labels_path=None) -> ExportManifest:
    state, meta_labels, source_id = load_source(source)
    layers, sources = vgg19_layout()
    arrays = _collect_arrays(state, layers, sources)
    n_classes = layers[-2]["out_dim"]
    labels, labels_origin = _resolve_labels(labels_path, meta_labels, n_classes)

    descriptor = {
        "input_shape": [3, INPUT_SIZE, INPUT_SIZE],
        "layers": layers,
        "class_labels": labels,
        "preprocess": {
            "width": INPUT_SIZE,
            "height": INPUT_SIZE,
            "means": list(IMAGENET_MEAN),
            "scale": 1.0 / 255.0,
        },
    }
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_model(out_path, descriptor, arrays)

    manifest = ExportManifest(
        source=source_id,
        output=str(out_path),
        sha256=_sha256(out_path),
        layer_map=[{"descriptor_index": i, "kind": l["kind"], "source": s}
                   for i, (l, s) in enumerate(zip(layers, sources))],
        labels_origin=labels_origin,
    )
    manifest_path = out_path.parent / "manifest.json"
    manifest_path.write_text(json.dumps(manifest.to_payload(), sort_keys=True, indent=2) + "\n")
    return manifest
