import json

import numpy as np
import pytest
import torch
from torchvision.models import vgg19

from cnnbtrk import Tensor3, forward_with_trace, load_model, preprocess
from vgg19_export import ExportError, export, vgg19_layout
from vgg19_export.export import IMAGENET_MEAN, IMAGENET_STD, _sha256


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    torch.manual_seed(0)
    model = vgg19(weights=None)
    path = tmp_path_factory.mktemp("ckpt") / "vgg19_random.pt"
    torch.save(model.state_dict(), path)
    return path


@pytest.fixture(scope="session")
def exported(tmp_path_factory, checkpoint):
    out = tmp_path_factory.mktemp("export") / "model.cnnbtrk"
    manifest = export(str(checkpoint), out)
    return out, manifest


def test_layout_covers_vgg19_modules():
    layers, sources = vgg19_layout()
    assert len(layers) == len(sources)
    assert sum(l["kind"] == "conv" for l in layers) == 16
    assert sum(l["kind"] == "dense" for l in layers) == 3
    assert sum(l["kind"] == "maxpool" for l in layers) == 5
    assert layers[-1]["kind"] == "softmax"
    # every descriptor layer has exactly one source module
    assert len(sources) == len(layers)


def test_exported_model_passes_primary_validation(exported):
    path, manifest = exported
    net, pre = load_model(path)
    assert net.input_shape.as_tuple() == (3, 224, 224)
    assert len(net.class_labels) == 1000
    assert net.class_labels[0] == "class_0000"  # no label metadata in a bare state dict
    assert (pre.width, pre.height) == (224, 224)
    assert pre.means == IMAGENET_MEAN
    assert pre.scale == pytest.approx(1 / 255)
    assert manifest.labels_origin == "generated"


def test_manifest_matches_output(exported):
    path, manifest = exported
    assert manifest.sha256 == _sha256(path)
    on_disk = json.loads((path.parent / "manifest.json").read_text())
    assert on_disk["sha256"] == manifest.sha256
    kinds = [entry["kind"] for entry in on_disk["layer_map"]]
    assert kinds.count("conv") == 16 and kinds.count("dense") == 3
    # 1:1 mapping: no source module claimed twice
    srcs = [entry["source"] for entry in on_disk["layer_map"]]
    assert len(srcs) == len(set(srcs))


def test_reexport_is_byte_identical(tmp_path, checkpoint, exported):
    path, manifest = exported
    again = tmp_path / "again.cnnbtrk"
    second = export(str(checkpoint), again)
    assert second.sha256 == manifest.sha256


def _fixture_images(count=3, seed=123):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8) for _ in range(count)]


def test_logits_match_source_framework(exported, checkpoint):
    path, _ = exported
    net, pre = load_model(path)

    model = vgg19(weights=None)
    model.load_state_dict(torch.load(checkpoint, weights_only=True))
    model.eval()
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)

    for image in _fixture_images():
        chw = image.transpose(2, 0, 1).astype(np.float32)
        with torch.no_grad():
            x = (torch.from_numpy(chw) / 255.0 - mean) / std
            torch_logits = model(x.unsqueeze(0))[0].numpy()

        trace, predicted = forward_with_trace(net, preprocess(Tensor3.from_array(chw), pre))
        engine_logits = trace.entries[-2].data

        assert int(torch_logits.argmax()) == predicted
        np.testing.assert_allclose(engine_logits, torch_logits, atol=1e-3)


def test_unmatched_source_layer_is_listed(tmp_path, checkpoint):
    state = torch.load(checkpoint, weights_only=True)
    state["features.99.weight"] = torch.zeros(1)
    bad = tmp_path / "extra.pt"
    torch.save(state, bad)
    with pytest.raises(ExportError, match="features.99.weight"):
        export(str(bad), tmp_path / "out.cnnbtrk")


def test_missing_source_layer_is_error(tmp_path, checkpoint):
    state = torch.load(checkpoint, weights_only=True)
    del state["classifier.6.bias"]
    bad = tmp_path / "missing.pt"
    torch.save(state, bad)
    with pytest.raises(ExportError, match="classifier.6"):
        export(str(bad), tmp_path / "out.cnnbtrk")


def test_wrong_shape_is_error(tmp_path, checkpoint):
    state = torch.load(checkpoint, weights_only=True)
    state["features.0.weight"] = torch.zeros(64, 3, 5, 5)
    bad = tmp_path / "shape.pt"
    torch.save(state, bad)
    with pytest.raises(ExportError, match="features.0.weight"):
        export(str(bad), tmp_path / "out.cnnbtrk")


def test_missing_checkpoint_path(tmp_path):
    with pytest.raises(ExportError, match="not found"):
        export(str(tmp_path / "ghost.pt"), tmp_path / "out.cnnbtrk")


def test_labels_file_is_embedded(tmp_path, checkpoint):
    labels = tmp_path / "labels.txt"
    labels.write_text("\n".join(f"thing {i}" for i in range(1000)) + "\n")
    out = tmp_path / "labelled.cnnbtrk"
    manifest = export(str(checkpoint), out, labels_path=labels)
    net, _ = load_model(out)
    assert net.class_labels[0] == "thing 0"
    assert net.class_labels[999] == "thing 999"
    assert manifest.labels_origin.startswith("file:")


def test_labels_file_count_mismatch(tmp_path, checkpoint):
    labels = tmp_path / "short.txt"
    labels.write_text("only\ntwo\n")
    with pytest.raises(ExportError, match="2 entries"):
        export(str(checkpoint), tmp_path / "out.cnnbtrk", labels_path=labels)
