import numpy as np
import pytest

from cnnbtrk.backtrack import (
    BacktrackConfig,
    Flat,
    Spatial,
    backtrack_conv,
    backtrack_fc,
    backtrack_first_fc,
    backtrack_full,
    backtrack_maxpool,
)
from cnnbtrk.network import (
    Conv,
    Dense,
    Flatten,
    MaxPool,
    NetworkSpec,
    ReLU,
    Softmax,
    flatten,
    forward_with_trace,
)
from cnnbtrk.selftest import (
    oracle_conv,
    oracle_fc,
    oracle_maxpool,
    random_network,
    run_selftest,
    verify_walk,
)
from cnnbtrk.tensor import Shape3, Tensor1, Tensor3

CFG = BacktrackConfig()


def test_fc_sign_and_ordering():
    layer = Dense(1, np.array([[1.0, -1.0, 1.0]]), np.zeros(1))
    nodes = backtrack_fc(Flat(0), layer, Tensor1([1.0, 2.0, 3.0]), CFG)
    assert nodes == [Flat(2), Flat(0)]  # contributions [1, -2, 3]


def test_fc_zero_activations_select_nothing():
    layer = Dense(1, np.array([[1.0, 2.0, 3.0]]), np.ones(1))
    assert backtrack_fc(Flat(0), layer, Tensor1([0.0, 0.0, 0.0]), CFG) == []


def test_fc_top_n_truncates():
    layer = Dense(1, np.ones((1, 6)), np.zeros(1))
    acts = Tensor1([1.0, 6.0, 3.0, 5.0, 2.0, 4.0])
    nodes = backtrack_fc(Flat(0), layer, acts, BacktrackConfig(top_n_fc=3))
    assert nodes == [Flat(1), Flat(3), Flat(5)]


def test_fc_matches_enumeration_oracle():
    rng = np.random.default_rng(10)
    for _ in range(20):
        layer = Dense(4, rng.standard_normal((4, 32)).astype(np.float32), np.zeros(4))
        acts = Tensor1(np.maximum(rng.standard_normal(32), 0).astype(np.float32))
        target = int(rng.integers(0, 4))
        for top_n in (5, None):
            got = backtrack_fc(Flat(target), layer, acts, BacktrackConfig(top_n_fc=top_n))
            want = oracle_fc(layer.weights[target], acts.data, top_n)
            assert [n.index for n in got] == want


def test_first_fc_corners():
    assert backtrack_first_fc(Flat(0), Shape3(512, 7, 7)) == Spatial(0, 0, 0)
    assert backtrack_first_fc(Flat(5), Shape3(2, 2, 2)) == Spatial(1, 0, 1)


def test_first_fc_inverts_flatten_small_shape():
    shape = Shape3(3, 4, 5)
    x = Tensor3.from_array(np.arange(shape.size, dtype=np.float32).reshape(shape.as_tuple()))
    flat = flatten(x)
    for i in range(shape.size):
        node = backtrack_first_fc(Flat(i), shape)
        assert flat.data[i] == x.at(node.channel, node.y, node.x)


def test_first_fc_rejects_out_of_range():
    with pytest.raises(IndexError):
        backtrack_first_fc(Flat(8), Shape3(2, 2, 2))


def _conv_1x1(weights_per_channel):
    w = np.array(weights_per_channel, dtype=np.float32).reshape(1, -1, 1, 1)
    return Conv(1, (1, 1), 1, 0, w, np.zeros(1))


def test_conv_picks_strongest_channel():
    prev = Tensor3(Shape3(2, 1, 1), [2.0, 3.0])
    nodes = backtrack_conv(Spatial(0, 0, 0), _conv_1x1([1.0, 1.0]), prev, CFG)
    assert nodes == [Spatial(1, 0, 0)]  # 3 > 2


def test_conv_zero_weights_falls_back_to_first_channel():
    prev = Tensor3(Shape3(2, 1, 1), [2.0, 3.0])
    nodes = backtrack_conv(Spatial(0, 0, 0), _conv_1x1([0.0, 0.0]), prev, CFG)
    assert nodes == [Spatial(0, 0, 0)]


def test_conv_follow_all_positive_channels():
    prev = Tensor3(Shape3(3, 1, 1), [2.0, 3.0, 1.0])
    layer = _conv_1x1([1.0, 1.0, -1.0])
    nodes = backtrack_conv(Spatial(0, 0, 0), layer, prev, BacktrackConfig(conv_channels=None))
    assert nodes == [Spatial(1, 0, 0), Spatial(0, 0, 0)]  # channel 2 contributes negatively


def test_conv_matches_enumeration_oracle():
    rng = np.random.default_rng(20)
    for _ in range(50):
        stride = int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        layer = Conv(2, (3, 3), stride, pad,
                     rng.standard_normal((2, 3, 3, 3)).astype(np.float32),
                     np.zeros(2))
        acts = np.maximum(rng.standard_normal((3, 7, 7)), 0).astype(np.float32)
        prev = Tensor3.from_array(acts)
        out_h = (7 + 2 * pad - 3) // stride + 1
        target = Spatial(int(rng.integers(0, 2)), int(rng.integers(0, out_h)), int(rng.integers(0, out_h)))
        for k in (1, 2, None):
            got = backtrack_conv(target, layer, prev, BacktrackConfig(conv_channels=k))
            want = oracle_conv(layer, acts, (target.channel, target.y, target.x), k)
            assert [(n.channel, n.y, n.x) for n in got] == want


def test_maxpool_window_argmax():
    prev = Tensor3(Shape3(1, 2, 2), [1.0, 5.0, 3.0, 2.0])
    node = backtrack_maxpool(Spatial(0, 0, 0), MaxPool((2, 2), 2), prev)
    assert node == Spatial(0, 0, 1)


def test_maxpool_constant_window_tie_takes_top_left():
    prev = Tensor3(Shape3(1, 2, 2), [7.0] * 4)
    assert backtrack_maxpool(Spatial(0, 0, 0), MaxPool((2, 2), 2), prev) == Spatial(0, 0, 0)


def test_maxpool_matches_instrumented_forward():
    rng = np.random.default_rng(30)
    acts = rng.standard_normal((2, 6, 6)).astype(np.float32)
    prev = Tensor3.from_array(acts)
    layer = MaxPool((2, 2), 2)
    for c in range(2):
        for y in range(3):
            for x in range(3):
                got = backtrack_maxpool(Spatial(c, y, x), layer, prev)
                want = oracle_maxpool(layer, acts, (c, y, x))
                assert (got.channel, got.y, got.x) == want
                # the winner really is the forward max
                assert acts[got.channel, got.y, got.x] == acts[c, 2 * y : 2 * y + 2, 2 * x : 2 * x + 2].max()


def _single_dense_net():
    layers = (Flatten(), Dense(3, np.eye(3, dtype=np.float32), np.zeros(3)), Softmax())
    return NetworkSpec(Shape3(1, 1, 3), layers, ("a", "b", "c"))


def test_full_identity_chain_maps_to_input_node():
    net = _single_dense_net()
    trace, predicted = forward_with_trace(net, Tensor3(Shape3(1, 1, 3), [0.0, 1.0, 0.0]))
    assert predicted == 1
    result = backtrack_full(net, trace, 1, CFG)
    assert result.pixels == [(0, 1)]
    assert result.dead_layer is None


def bright_pixel_net(size=4):
    """conv(1x1, weight 1) -> relu -> maxpool -> flatten -> dense -> softmax."""
    pooled = size // 2
    flat = pooled * pooled
    dense_w = np.vstack([np.zeros(flat), np.ones(flat)]).astype(np.float32)
    layers = (
        Conv(1, (1, 1), 1, 0, np.ones((1, 1, 1, 1), dtype=np.float32), np.zeros(1)),
        ReLU(),
        MaxPool((2, 2), 2),
        Flatten(),
        Dense(2, dense_w, np.zeros(2)),
        Softmax(),
    )
    return NetworkSpec(Shape3(1, size, size), layers, ("dark", "bright"))


def test_full_toy_net_recovers_single_bright_pixel():
    net = bright_pixel_net()
    image = np.zeros((1, 4, 4), dtype=np.float32)
    image[0, 2, 1] = 1.0
    trace, predicted = forward_with_trace(net, Tensor3.from_array(image))
    assert predicted == 1
    result = backtrack_full(net, trace, predicted, CFG)
    assert result.pixels == [(2, 1)]
    assert verify_walk(net, trace, predicted, CFG) == []


def test_relu_drop_counter_on_degenerate_conv():
    # conv0 kills the input sign, relu zeroes it, conv2's bias keeps the class
    # alive; the backtrack then feeds a dead node into the relu and drops it
    layers = (
        Conv(1, (1, 1), 1, 0, -np.ones((1, 1, 1, 1), dtype=np.float32), np.zeros(1)),
        ReLU(),
        Conv(1, (1, 1), 1, 0, np.ones((1, 1, 1, 1), dtype=np.float32), np.array([2.0], dtype=np.float32)),
        Flatten(),
        Dense(2, np.array([[1.0], [0.0]], dtype=np.float32), np.zeros(2)),
        Softmax(),
    )
    net = NetworkSpec(Shape3(1, 1, 1), layers, ("on", "off"))
    trace, predicted = forward_with_trace(net, Tensor3(Shape3(1, 1, 1), [1.0]))
    assert predicted == 0
    result = backtrack_full(net, trace, 0, CFG)
    assert result.relu_dropped == 1
    assert result.dead_layer == 1
    assert result.pixels == []


def test_full_dead_frontier_reports_layer():
    # every weight negative: nothing contributes positively to any class
    layers = (Flatten(), Dense(2, -np.ones((2, 3), dtype=np.float32), np.zeros(2)), Softmax())
    net = NetworkSpec(Shape3(1, 1, 3), layers, ("a", "b"))
    trace, _ = forward_with_trace(net, Tensor3(Shape3(1, 1, 3), [1.0, 1.0, 1.0]))
    result = backtrack_full(net, trace, 0, CFG)
    assert result.pixels == []
    assert result.dead_layer == 1


def test_full_matches_oracle_on_random_networks():
    outcomes = run_selftest(seeds=25, base_seed=100)
    problems = [issue for o in outcomes for issue in o.issues]
    assert problems == []


def test_full_is_deterministic():
    rng = np.random.default_rng(40)
    net, image = random_network(rng)
    trace, predicted = forward_with_trace(net, image)
    a = backtrack_full(net, trace, predicted, CFG)
    b = backtrack_full(net, trace, predicted, CFG)
    assert a.pixels == b.pixels


def test_full_frontiers_deduplicated_and_bounded():
    rng = np.random.default_rng(50)
    for _ in range(20):
        net, image = random_network(rng)
        trace, predicted = forward_with_trace(net, image)
        cfg = BacktrackConfig(top_n_fc=4, conv_channels=2)
        result = backtrack_full(net, trace, predicted, cfg, record_frontiers=True)
        prev_size = 1
        for frontier in result.frontiers:
            nodes = list(frontier.nodes)
            assert len(nodes) == len(set(nodes))
            layer = net.layers[frontier.layer_index]
            if isinstance(layer, Dense):
                bound = prev_size * 4
            elif isinstance(layer, Conv):
                bound = prev_size * 2
            else:
                bound = prev_size
            assert len(nodes) <= bound
            prev_size = len(nodes)


def test_enlarging_config_never_loses_pixels():
    rng = np.random.default_rng(60)
    grown = 0
    for _ in range(20):
        net, image = random_network(rng)
        trace, predicted = forward_with_trace(net, image)
        small = backtrack_full(net, trace, predicted, BacktrackConfig(top_n_fc=2, conv_channels=1))
        big = backtrack_full(net, trace, predicted, BacktrackConfig(top_n_fc=6, conv_channels=3))
        assert set(small.pixels) <= set(big.pixels)
        grown += len(set(big.pixels)) > len(set(small.pixels))
    assert grown > 0  # the property is not vacuous on these seeds


def test_payload_wire_format():
    net = _single_dense_net()
    trace, _ = forward_with_trace(net, Tensor3(Shape3(1, 1, 3), [0.0, 1.0, 0.0]))
    payload = backtrack_full(net, trace, 1, CFG).to_payload()
    assert payload == {"width": 3, "height": 1, "pixels": [[0, 1]]}


def test_start_class_out_of_range():
    net = _single_dense_net()
    trace, _ = forward_with_trace(net, Tensor3(Shape3(1, 1, 3), [0.0, 1.0, 0.0]))
    with pytest.raises(IndexError):
        backtrack_full(net, trace, 3, CFG)
