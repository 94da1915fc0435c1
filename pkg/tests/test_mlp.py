import math

import numpy as np
import numpy.testing as npt
import pytest
import scipy.sparse as sp

from helpers import max_relative_error, numeric_gradients, random_problem, scalar_nesterov
from malobf.dataset import Dataset
from malobf.feature_vocab import FeatureVector
from malobf.mlp import (
    BCE_EPS,
    DenseLayer,
    ModelParams,
    OptimizerState,
    TrainConfig,
    backward,
    bce_loss,
    count_params,
    effective_lr,
    forward,
    init_model,
    layer_param_counts,
    load_checkpoint,
    predict,
    predict_proba,
    save_checkpoint,
    sgd_nesterov_step,
    train,
)


def zero_model(input_dim=4, hidden=(3,)):
    m = init_model(input_dim, hidden, seed=0)
    for layer in m.layers:
        layer.weights[:] = 0
    return m


# --- init / counting -------------------------------------------------------


def test_init_shapes_and_bias():
    m = init_model(2, [3], seed=1)
    assert [(l.weights.shape, l.bias.shape) for l in m.layers] == [((3, 2), (3,)), ((1, 3), (1,))]
    assert all(np.all(l.bias == 0) for l in m.layers)


def test_init_bounds_and_determinism():
    a = init_model(50, [20, 10], seed=3)
    b = init_model(50, [20, 10], seed=3)
    assert a == b
    assert a != init_model(50, [20, 10], seed=4)
    for layer in a.layers:
        limit = math.sqrt(6 / (layer.in_dim + layer.out_dim))
        assert np.abs(layer.weights).max() <= limit


@pytest.mark.parametrize("bad", [dict(input_dim=0, hidden_widths=[3]), dict(input_dim=3, hidden_widths=[]),
                                 dict(input_dim=3, hidden_widths=[4, 0])])
def test_init_errors(bad):
    with pytest.raises(ValueError):
        init_model(**bad)


def test_count_params_small():
    assert count_params(init_model(2, [3])) == 13


@pytest.mark.parametrize("input_dim,hidden", [(1, [1]), (7, [5, 3]), (30, [8, 8, 8, 2])])
def test_count_params_matches_flatten(input_dim, hidden):
    m = init_model(input_dim, hidden)
    assert count_params(m) == m.flat().size
    dims = [input_dim] + hidden + [1]
    assert count_params(m) == sum((i + 1) * o for i, o in zip(dims, dims[1:]))


def test_model_rejects_bad_chain():
    with pytest.raises(ValueError):
        ModelParams([DenseLayer(np.zeros((3, 2)), np.zeros(3)), DenseLayer(np.zeros((1, 4)), np.zeros(1))])
    with pytest.raises(ValueError):
        ModelParams([DenseLayer(np.zeros((2, 2)), np.zeros(2))])


# --- forward ---------------------------------------------------------------


def test_forward_zero_model_is_half():
    m = zero_model()
    p, _ = forward(m, np.random.default_rng(0).normal(size=(5, 4)))
    assert np.all(p == 0.5)


def test_forward_hand_computed():
    # x -> relu(2*x0 - x1 + 0.5) -> sigmoid(-1.5*h + 0.25)
    m = ModelParams([DenseLayer(np.array([[2.0, -1.0]]), np.array([0.5])),
                     DenseLayer(np.array([[-1.5]]), np.array([0.25]))])
    x = np.array([[1.0, 1.0], [0.0, 3.0]])
    h = [max(2 * 1 - 1 + 0.5, 0), max(0 - 3 + 0.5, 0)]
    expected = [1 / (1 + math.exp(-(-1.5 * hi + 0.25))) for hi in h]
    npt.assert_allclose(forward(m, x)[0], expected, rtol=0, atol=1e-12)


def test_forward_open_interval_even_when_saturated():
    m = ModelParams([DenseLayer(np.array([[1.0]]), np.array([0.0])), DenseLayer(np.array([[1.0]]), np.array([0.0]))])
    p, _ = forward(m, np.array([[1e4], [-1e4]]))
    assert np.all((p > 0) & (p < 1))
    p, _ = forward(m, np.array([[800.0]]))
    assert 0 < p[0] < 1


def test_forward_sparse_dense_equivalence():
    rng = np.random.default_rng(2)
    m = init_model(40, [16, 8], seed=2)
    vecs = [FeatureVector.from_indices(rng.choice(40, size=rng.integers(1, 10), replace=False), 40)
            for _ in range(12)]
    sparse_p, _ = forward(m, vecs)
    dense = np.zeros((12, 40))
    for r, v in enumerate(vecs):
        dense[r, list(v.indices)] = 1
    dense_p, _ = forward(m, dense)
    npt.assert_allclose(sparse_p, dense_p, rtol=1e-10)


def test_forward_dimension_mismatch():
    m = init_model(5, [2])
    with pytest.raises(ValueError):
        forward(m, [FeatureVector((1,), 6)])
    with pytest.raises(ValueError):
        forward(m, np.zeros((2, 4)))


# --- loss ------------------------------------------------------------------


def test_bce_examples():
    assert bce_loss([0.5], [1]) == pytest.approx(math.log(2), abs=1e-12)
    assert bce_loss([1 - BCE_EPS], [1]) == pytest.approx(BCE_EPS, rel=1e-6)
    assert bce_loss([0.9, 0.2], [1, 0]) == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2, abs=1e-12)
    assert bce_loss([0.9, 0.2], [1, 0]) == pytest.approx(0.164252, abs=1e-6)


def test_bce_finite_at_extremes():
    assert math.isfinite(bce_loss([0.0, 1.0], [1, 0]))
    with pytest.raises(ValueError):
        bce_loss([0.5, 0.5], [1])


# --- backward --------------------------------------------------------------


def test_single_sigmoid_unit_gradient():
    w = np.array([[0.3, -0.7, 1.1]])
    m = ModelParams([DenseLayer(w.copy(), np.array([0.2]))])
    x = np.array([[1.0, 2.0, -0.5]])
    p, cache = forward(m, x)
    (gw, gb), = backward(m, cache, [1])
    npt.assert_allclose(gw, (p[0] - 1) * x, rtol=1e-14)
    npt.assert_allclose(gb, [p[0] - 1], rtol=1e-14)


def test_perfectly_classified_batch_has_tiny_gradient():
    # logit +20 for the malicious row, -20 for the benign one
    m = ModelParams([DenseLayer(np.array([[40.0]]), np.array([0.0])), DenseLayer(np.array([[1.0]]), np.array([-20.0]))])
    x = np.array([[1.0], [0.0]])
    p, cache = forward(m, x)
    grads = backward(m, cache, [1, 0])
    norm = math.sqrt(sum(float(np.sum(g**2)) for pair in grads for g in pair))
    assert norm < 1e-5


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m, x, y = random_problem(rng)
    p, cache = forward(m, x)
    assert max_relative_error(backward(m, cache, y), numeric_gradients(m, x, y)) < 1e-4


def test_gradients_sparse_input_path():
    m = init_model(8, [5, 4], seed=9)
    vecs = [FeatureVector((0, 3, 7), 8), FeatureVector((2,), 8), FeatureVector((1, 3), 8)]
    y = np.array([1, 0, 1])
    p, cache = forward(m, vecs)
    analytic = backward(m, cache, y)
    dense = sp.csr_matrix(cache["post"][0]).toarray()
    assert max_relative_error(analytic, numeric_gradients(m, dense, y)) < 1e-4


def test_backward_rejects_stale_cache():
    m = init_model(3, [2])
    _, cache = forward(m, np.ones((2, 3)))
    with pytest.raises(ValueError):
        backward(m, cache, [1, 0, 1])
    with pytest.raises(ValueError):
        backward(init_model(3, [2, 2]), cache, [1, 0])


# --- optimizer -------------------------------------------------------------


def scalar_model(theta):
    return ModelParams([DenseLayer(np.array([[theta]]), np.array([0.0]))])


def test_first_step_moves_by_lr_times_one_plus_mu():
    m = scalar_model(0.0)
    state = OptimizerState.zeros_like(m)
    grads = [(np.array([[1.0]]), np.array([0.0]))]
    sgd_nesterov_step(m, grads, state, TrainConfig())
    assert m.layers[0].weights[0, 0] == pytest.approx(-0.19, abs=1e-15)
    assert state.step_count == 1
    assert state.velocity[0][0][0, 0] == pytest.approx(-0.1, abs=1e-15)


def test_effective_lr():
    cfg = TrainConfig(decay=0.5)
    assert effective_lr(TrainConfig(), 0) == 0.1
    assert effective_lr(cfg, 2) == pytest.approx(0.05)


def test_two_steps_constant_gradient_hand_trace():
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9, decay=0.0)
    m = scalar_model(1.0)
    state = OptimizerState.zeros_like(m)
    g = [(np.array([[1.0]]), np.array([0.0]))]
    sgd_nesterov_step(m, g, state, cfg)
    sgd_nesterov_step(m, g, state, cfg)
    # v1 = -0.1, theta1 = 1 - 0.19; v2 = -0.19, theta2 = theta1 - 0.171 - 0.1
    assert state.velocity[0][0][0, 0] == pytest.approx(-0.19, rel=1e-12)
    assert m.layers[0].weights[0, 0] == pytest.approx(1 - 0.19 - 0.271, rel=1e-12)


def test_quadratic_trace_matches_scalar_simulation():
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9, decay=0.05)
    m = scalar_model(2.0)
    state = OptimizerState.zeros_like(m)
    expected = scalar_nesterov(2.0, 1.5, 10, 0.1, 0.9, 0.05)
    for want in expected:
        w = m.layers[0].weights
        sgd_nesterov_step(m, [(1.5 * w.copy(), np.zeros(1))], state, cfg)
        assert w[0, 0] == pytest.approx(want, rel=1e-12)


def test_step_rejects_non_finite_gradient():
    m = scalar_model(1.0)
    state = OptimizerState.zeros_like(m)
    with pytest.raises(FloatingPointError):
        sgd_nesterov_step(m, [(np.array([[np.nan]]), np.zeros(1))], state, TrainConfig())
    assert m.layers[0].weights[0, 0] == 1.0 and state.step_count == 0


@pytest.mark.parametrize("kwargs", [dict(learning_rate=0), dict(momentum=1.0), dict(batch_size=0)])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


# --- training --------------------------------------------------------------


def separable_toy(n=80, dim=10, seed=0):
    rng = np.random.default_rng(seed)
    vecs, labels = [], []
    for i in range(n):
        y = i % 2
        # malicious rows always carry column 0, benign rows column 1
        extra = rng.choice(np.arange(2, dim), size=3, replace=False)
        vecs.append(FeatureVector.from_indices([1 - y, *extra], dim))
        labels.append(y)
    return Dataset(vecs, labels, dim)


def test_training_loss_decreases_on_separable_data():
    data = separable_toy()
    cfg = TrainConfig(learning_rate=0.05, momentum=0.9, batch_size=len(data), epochs=5, seed=0)
    _, hist = train(init_model(data.dimension, [8], seed=0), data, cfg, data)
    assert all(b < a for a, b in zip(hist.train_loss, hist.train_loss[1:]))


def test_train_zero_epochs_returns_same_model():
    data = separable_toy()
    m = init_model(data.dimension, [4], seed=1)
    trained, hist = train(m, data, TrainConfig(epochs=0), data)
    assert trained == m and hist.epochs == 0 and hist.val_accuracy == []


def test_train_is_deterministic_and_does_not_mutate_input():
    data = separable_toy()
    m = init_model(data.dimension, [6, 6], seed=2)
    before = m.copy()
    cfg = TrainConfig(batch_size=16, epochs=4, seed=5)
    a, ha = train(m, data, cfg, data)
    b, hb = train(m, data, cfg, data)
    assert m == before
    assert a == b and ha == hb
    assert a != m


def test_train_learns_separable_data():
    data = separable_toy(n=200)
    cfg = TrainConfig(batch_size=32, epochs=20, seed=0)
    trained, hist = train(init_model(data.dimension, [8, 8], seed=0), data, cfg, data)
    assert hist.val_accuracy[-1] == 100.0
    assert np.array_equal(predict(trained, data), data.labels)


def test_predict_threshold_rules():
    m = zero_model(3, (2,))
    data = Dataset([FeatureVector((0,), 3), FeatureVector((1, 2), 3)], [0, 1], 3)
    assert predict(m, data).tolist() == [0, 0]
    assert predict(m, data, threshold=0.0).tolist() == [1, 1]
    assert np.all(predict_proba(m, data) == 0.5)


# --- checkpoints -----------------------------------------------------------


def test_checkpoint_f32_roundtrip(tmp_path):
    m = init_model(6, [4, 3], seed=8)
    save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    for a, b in zip(m.layers, back.layers):
        npt.assert_allclose(a.weights, b.weights, rtol=1e-7)
        npt.assert_array_equal(a.bias, b.bias)


def test_checkpoint_layout(tmp_path):
    m = init_model(2, [3], seed=0)
    m.layers[0].bias[:] = [7, 8, 9]
    m.layers[1].bias[:] = [10]
    save_checkpoint(m, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert header == b'{"input_dim": 2, "hidden": [3], "format": "f32le"}'
    flat = np.frombuffer(payload, dtype="<f4")
    assert flat.size == count_params(m)
    npt.assert_array_equal(flat[:6], m.layers[0].weights.astype(np.float32).ravel())
    npt.assert_array_equal(flat[6:9], m.layers[1].weights.astype(np.float32).ravel())
    npt.assert_array_equal(flat[9:], [7, 8, 9, 10])


def test_checkpoint_json_exact(tmp_path):
    m = init_model(3, [2], seed=4)
    save_checkpoint(m, tmp_path / "m.json", fmt="json")
    assert load_checkpoint(tmp_path / "m.json") == m


def test_layer_param_counts_per_layer():
    m = init_model(10, [16, 16])
    assert layer_param_counts(m) == [11 * 16, 17 * 16, 17]
