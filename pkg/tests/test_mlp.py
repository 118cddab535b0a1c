import math

import numpy as np
import pytest

from hydrograd import mlp
from hydrograd.gradcheck import grad_check
from hydrograd.tape import FLOATS, Tape


def test_config_validation():
    with pytest.raises(ValueError):
        mlp.MLPConfig((4,))
    with pytest.raises(ValueError):
        mlp.MLPConfig((4, 0, 1))
    with pytest.raises(ValueError):
        mlp.MLPConfig((4, 3, 1), hidden_activation="softmax")


def test_init_is_deterministic_given_seed():
    a = mlp.init(mlp.MLPConfig((2, 3, 1), seed=7))
    b = mlp.init(mlp.MLPConfig((2, 3, 1), seed=7))
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    c = mlp.init(mlp.MLPConfig((2, 3, 1), seed=8))
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_init_biases_zero_and_weights_bounded():
    w = mlp.init(mlp.MLPConfig((5, 4, 2), seed=0))
    for b in w.biases:
        assert np.all(b == 0.0)
    for W in w.weights:
        fan_out, fan_in = W.shape
        s = math.sqrt(6.0 / (fan_in + fan_out))
        assert np.all(np.abs(W) <= s)


def test_zero_network_outputs_zero():
    w = mlp.init(mlp.MLPConfig((3, 4, 2), seed=0))
    for Wl in w.weights:
        Wl[:] = 0.0
    assert mlp.run(w, [0.3, -1.0, 2.0]) == [0.0, 0.0]


def test_single_affine_layer():
    w = mlp.MLPWeights([np.array([[2.0]])], [np.array([1.0])], "tanh")
    assert mlp.run(w, [3.0]) == [7.0]


def test_two_layer_hand_computation():
    w = mlp.MLPWeights(
        [np.array([[0.5], [-1.0]]), np.array([[2.0, 0.5]])],
        [np.array([0.1, 0.2]), np.array([-0.3])],
        "tanh",
    )
    h1 = math.tanh(0.5 * 0.8 + 0.1)
    h2 = math.tanh(-1.0 * 0.8 + 0.2)
    expected = 2.0 * h1 + 0.5 * h2 - 0.3
    assert mlp.run(w, [0.8])[0] == pytest.approx(expected, abs=1e-15)


def test_forward_rejects_dimension_mismatch():
    w = mlp.init(mlp.MLPConfig((2, 3, 1), seed=0))
    with pytest.raises(ValueError):
        mlp.run(w, [1.0])


def test_forward_is_pure():
    w = mlp.init(mlp.MLPConfig((2, 5, 3), seed=3))
    x = [0.4, -0.9]
    assert mlp.run(w, x) == mlp.run(w, x)


def test_bound_midpoint_and_hand_value():
    out = mlp.bound(FLOATS, [0.0], [50.0], [1000.0])
    assert out[0] == pytest.approx(525.0)
    out = mlp.bound(FLOATS, [1.0], [0.0], [1.0])
    assert out[0] == pytest.approx(0.7310585786300049, abs=1e-15)


def test_bound_stays_strictly_inside_for_large_raw():
    # strict interior holds until the logistic saturates in double precision
    # (|raw| around 37); beyond that the output equals the limit exactly
    lo, hi = [0.0], [1.0]
    for raw in (-30.0, -5.0, 5.0, 30.0):
        (v,) = mlp.bound(FLOATS, [raw], lo, hi)
        assert 0.0 < v < 1.0
    (v,) = mlp.bound(FLOATS, [1000.0], lo, hi)
    assert v == 1.0


def test_gradients_through_forward_and_bound():
    w = mlp.init(mlp.MLPConfig((2, 4, 3), "tanh", seed=11))
    flat = mlp.flatten(w)

    def builder(tape, leaf_vars):
        layers = mlp.layers_from_flat(w, [v.i for v in leaf_vars])
        raw = mlp.forward(tape, layers, [tape.const(0.2), tape.const(0.9)], "tanh")
        bounded = mlp.bound(tape, raw, [0.0, 1.0, 50.0], [1.0, 6.0, 1000.0])
        total = bounded[0]
        for h in bounded[1:]:
            total = tape.add(total, h)
        return total

    report = grad_check(builder, flat.tolist(), 1e-6)
    assert report.flag_rate() == 0.0
    assert report.max_rel_error() < 1e-6


def test_flatten_unflatten_round_trip():
    w = mlp.init(mlp.MLPConfig((3, 5, 2), seed=1))
    flat = mlp.flatten(w)
    assert flat.size == w.n_params()
    back = mlp.unflatten(w, flat)
    for a, b in zip(w.weights + w.biases, back.weights + back.biases):
        assert np.array_equal(a, b)


def test_traced_forward_matches_untraced_bitwise():
    w = mlp.init(mlp.MLPConfig((2, 6, 2), "sigmoid", seed=4))
    x = [0.25, -1.5]
    plain = mlp.run(w, x)
    tape = Tape()
    layers = mlp.layer_handles(w, tape, leaf_key_start=0)
    out = mlp.forward(tape, layers, [tape.const(v) for v in x], "sigmoid")
    assert [tape.value(i) for i in out] == plain


def test_weight_snapshot_exact_round_trip(tmp_path):
    w = mlp.init(mlp.MLPConfig((4, 16, 13), seed=123))
    w.biases[0][:] = np.random.default_rng(5).normal(size=w.biases[0].shape)
    path = tmp_path / "weights.csv"
    mlp.save_weights(w, path)
    back = mlp.load_weights(path)
    assert back.layer_sizes == w.layer_sizes
    for a, b in zip(w.weights + w.biases, back.weights + back.biases):
        assert np.array_equal(a, b)


def test_load_weights_rejects_bad_header(tmp_path):
    path = tmp_path / "weights.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        mlp.load_weights(path)
