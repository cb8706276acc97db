import numpy as np
import pytest

from cnnbtrk.model_io import PreprocessSpec, save_model
from cnnbtrk.network import Conv, Dense, Flatten, MaxPool, NetworkSpec, ReLU, Softmax
from cnnbtrk.tensor import Shape3

TOY_SIZE = 8


def build_toy_model(size: int = TOY_SIZE) -> tuple[NetworkSpec, PreprocessSpec]:
    """A 3-channel net that classifies 'bright' and backtracks to the one lit pixel.

    conv(1x1, all-ones) -> relu -> maxpool(2x2) -> flatten -> dense(2) -> softmax;
    the 'bright' class weights sum every pooled activation, so for a single lit
    pixel exactly one chain is positive all the way down.
    """
    pooled = size // 2
    flat = pooled * pooled
    layers = (
        Conv(1, (1, 1), 1, 0, np.ones((1, 3, 1, 1), dtype=np.float32), np.zeros(1, dtype=np.float32)),
        ReLU(),
        MaxPool((2, 2), 2),
        Flatten(),
        Dense(2, np.vstack([np.zeros(flat), np.ones(flat)]).astype(np.float32), np.zeros(2, dtype=np.float32)),
        Softmax(),
    )
    net = NetworkSpec(Shape3(3, size, size), layers, ("dark", "bright"))
    pre = PreprocessSpec(size, size, (0.0, 0.0, 0.0), 1.0)
    return net, pre


def bright_pixel_image(y: int, x: int, size: int = TOY_SIZE) -> np.ndarray:
    """(H, W, 3) uint8: black except one white pixel."""
    img = np.zeros((size, size, 3), dtype=np.uint8)
    img[y, x] = 255
    return img


@pytest.fixture(scope="session")
def toy_model():
    return build_toy_model()


@pytest.fixture(scope="session")
def toy_model_path(tmp_path_factory, toy_model):
    net, pre = toy_model
    path = tmp_path_factory.mktemp("model") / "toy.cnnbtrk"
    save_model(net, pre, path)
    return path
