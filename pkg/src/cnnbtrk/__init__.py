"""cnnbtrk: trace a CNN classification back to the input pixels that drove it.

The pipeline: load a model and an image, run a recorded forward pass, walk the
trace backwards layer by layer keeping the strongest contributors, then turn
the surviving input pixels into a saliency map / heatmap / bounding box, with
benchmark metrics against ground-truth masks.
"""

from .backtrack import (
    BacktrackConfig,
    BacktrackResult,
    Flat,
    Frontier,
    NodeLoc,
    Spatial,
    backtrack_conv,
    backtrack_fc,
    backtrack_first_fc,
    backtrack_full,
    backtrack_maxpool,
)
from .evaluate import (
    BinaryMask,
    ConfusionCounts,
    DatasetError,
    MetricEntry,
    MetricsReport,
    confusion_counts,
    dataset_run,
    grid_search,
    metrics,
)
from .model_io import (
    BadChecksumError,
    BadMagicError,
    ModelFormatError,
    ModelNotFoundError,
    NonFiniteWeightError,
    PreprocessSpec,
    ShapeMismatchError,
    load_image,
    load_model,
    preprocess,
    save_model,
)
from .network import (
    ActivationTrace,
    Conv,
    Dense,
    Flatten,
    LayerShapeError,
    LayerSpec,
    MaxPool,
    NetworkError,
    NetworkSpec,
    ReLU,
    Softmax,
    conv_forward,
    dense_forward,
    flatten,
    forward_with_trace,
    maxpool_forward,
    relu,
    softmax,
)
from .saliency import (
    Rect,
    SaliencyConfig,
    SaliencyMap,
    attention_heatmap,
    bounding_box,
    coarse_project,
    splat_gaussian,
)
from .tensor import Shape3, Tensor1, Tensor3, argmax3, receptive_field

__version__ = "0.1.0"
