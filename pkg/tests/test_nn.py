import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsentry import nn
from flowsentry.core import rng_new
from flowsentry.nn import LstmCellState

from gradcheck import choose_probes, gradient_check
from oracles import finite_difference, relative_error, scalar_lstm_cell

W = {"f": [[0.1, 0.2, 0.3, 0.4], [-0.1, 0.0, 0.5, -0.2]],
     "i": [[0.3, -0.3, 0.2, 0.1], [0.0, 0.4, -0.5, 0.6]],
     "c": [[0.5, 0.1, -0.4, 0.2], [-0.2, 0.3, 0.7, 0.0]],
     "o": [[0.2, 0.2, 0.2, -0.1], [0.6, -0.4, 0.1, 0.3]]}
B = {"f": [0.1, -0.1], "i": [0.0, 0.2], "c": [-0.3, 0.1], "o": [0.05, 0.0]}


def cell_params():
    p = {f"w_{g}": np.array(W[g]) for g in nn.GATES}
    p.update({f"b_{g}": np.array(B[g]) for g in nn.GATES})
    return p


def random_cell(rng, hidden, n_in, scale=1.0):
    p = {f"w_{g}": rng.normal(0, scale, (hidden, hidden + n_in)) for g in nn.GATES}
    p.update({f"b_{g}": rng.normal(0, scale, hidden) for g in nn.GATES})
    return p


def test_zero_cell_fixed_point():
    p = {f"w_{g}": np.zeros((3, 5)) for g in nn.GATES}
    p.update({f"b_{g}": np.zeros(3) for g in nn.GATES})
    state, cache = nn.lstm_cell_forward(p, LstmCellState.zeros(3), np.array([1.0, -2.0]))
    assert np.all(cache["f"] == 0.5) and np.all(cache["i"] == 0.5) and np.all(cache["o"] == 0.5)
    assert np.all(cache["c_new"] == 0.0) and np.all(state.c == 0.0) and np.all(state.h == 0.0)


# frozen from the scalar gate-by-gate oracle, x = [1, 0]
EXPECTED_PREV = {  # h_prev = [0.1, -0.2], c_prev = [0.5, -0.3]
    "f": [0.591459, 0.596283], "i": [0.571996, 0.406127], "c_new": [-0.584980, 0.616909],
    "o": [0.557248, 0.559714], "c": [-0.038877, 0.071659], "h": [-0.021653, 0.040040]}
EXPECTED_ZERO = {  # zero previous state
    "f": [0.598688, 0.598688], "i": [0.549834, 0.425557], "c_new": [-0.604368, 0.664037],
    "o": [0.562177, 0.524979], "c": [-0.332302, 0.282586], "h": [-0.180227, 0.144525]}


@pytest.mark.parametrize("h0, c0, expected", [
    ([0.1, -0.2], [0.5, -0.3], EXPECTED_PREV),
    ([0.0, 0.0], [0.0, 0.0], EXPECTED_ZERO),
])
def test_cell_matches_hand_evaluation(h0, c0, expected):
    x = [1.0, 0.0]
    state, cache = nn.lstm_cell_forward(cell_params(), LstmCellState(np.array(h0), np.array(c0)), np.array(x))
    got = {"f": cache["f"], "i": cache["i"], "c_new": cache["c_new"], "o": cache["o"],
           "c": state.c, "h": state.h}
    oracle = scalar_lstm_cell(W, B, h0, c0, x)
    for k, v in expected.items():
        np.testing.assert_allclose(got[k], v, atol=5e-7)
        np.testing.assert_allclose(got[k], oracle[k], atol=1e-12)


def test_cell_shape_mismatch():
    with pytest.raises(nn.ShapeMismatch):
        nn.lstm_cell_forward(cell_params(), LstmCellState.zeros(2), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 20.0))
def test_gate_ranges(seed, scale):
    rng = np.random.default_rng(seed)
    p = random_cell(rng, 4, 3, scale)
    prev = LstmCellState(rng.uniform(-1, 1, (64, 4)), rng.normal(0, 3, (64, 4)))
    state, cache = nn.lstm_cell_forward(p, prev, rng.normal(0, scale, (64, 3)))
    for g in ("f", "i", "o"):
        assert np.all((cache[g] >= 0) & (cache[g] <= 1))
    assert np.all(np.abs(cache["c_new"]) <= 1)
    assert np.all(np.abs(state.h) <= 1)


def test_cell_backward_with_previous_state():
    rng = np.random.default_rng(0)
    p = random_cell(rng, 3, 2, 0.7)
    h0, c0, x = rng.normal(size=3), rng.normal(size=3), rng.normal(size=2)
    dh_up, dc_up = rng.normal(size=3), rng.normal(size=3)

    def objective():
        s, _ = nn.lstm_cell_forward(p, LstmCellState(h0, c0), x)
        return float(dh_up @ s.h + dc_up @ s.c)

    _, cache = nn.lstm_cell_forward(p, LstmCellState(h0, c0), x)
    grads, dx, dh_prev, dc_prev = nn.lstm_cell_backward(p, cache, dh_up, dc_up)
    probes = [(0, k, idx) for k in p for idx in np.ndindex(p[k].shape)]
    numeric = finite_difference(objective, [p], probes)
    analytic = np.array([grads[k][idx] for _, k, idx in probes])
    assert relative_error(analytic, numeric).max() < 1e-6
    # forget-gate weights get a nonzero gradient once the previous cell state is nonzero
    assert np.abs(grads["w_f"]).max() > 1e-3
    for vec, grad in ((x, dx), (h0, dh_prev), (c0, dc_prev)):
        num = finite_difference(objective, [{"v": vec}], [(0, "v", (j,)) for j in range(len(vec))])
        assert relative_error(grad, num).max() < 1e-6


def test_zero_output_layer_gives_half():
    spec = nn.lstm_spec([16, 8, 4, 1], n_lstm=1)
    params = nn.init_params(spec, rng_new(22))
    params[-1]["w"][:] = 0.0
    assert nn.forward(spec, params, np.linspace(0, 1, 16)) == 0.5


def test_tiny_dense_net_hand_value():
    spec = nn.mlp_spec([2, 2, 1])
    params = [{"w": np.array([[1.0, -1.0], [0.5, 2.0]]), "b": np.array([0.0, -1.0])},
              {"w": np.array([[1.5, -0.5]]), "b": np.array([0.2])}]
    # relu([-0.4, 0.55]) = [0, 0.55]; 1.5*0 - 0.5*0.55 + 0.2 = -0.075
    assert nn.forward(spec, params, [0.3, 0.7]) == pytest.approx(0.481258784, abs=1e-9)
    assert nn.forward(spec, params, [0.3, 0.7]) == pytest.approx(1 / (1 + math.exp(0.075)), rel=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=16, max_size=16))
def test_probability_in_open_interval(x):
    spec = nn.lstm_spec([16, 8, 1], n_lstm=1)
    p = nn.forward(spec, nn.init_params(spec, rng_new(1)), x)
    assert 0.0 <= p <= 1.0
    assert math.isfinite(p)


def test_forward_rejects_wrong_width():
    spec = nn.mlp_spec([16, 4, 1])
    with pytest.raises(nn.ShapeMismatch):
        nn.forward(spec, nn.init_params(spec, rng_new(1)), np.zeros(15))


def test_bce_examples():
    assert nn.bce_loss([1.0, 0.0], [1, 0]) <= 1e-6
    assert nn.bce_loss([0.9], [1]) == pytest.approx(0.105360516, abs=1e-9)
    assert nn.bce_loss([0.5, 0.5], [1, 0]) == pytest.approx(math.log(2), abs=1e-12)
    with pytest.raises(nn.LengthMismatch):
        nn.bce_loss([0.5], [1, 0])


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_bce_nonnegative(pairs):
    preds, labels = zip(*pairs)
    assert nn.bce_loss(list(preds), list(labels)) >= 0.0


@pytest.mark.parametrize("spec", [nn.lstm_spec([16, 8, 1], n_lstm=1), nn.mlp_spec([16, 8, 4, 1]),
                                  nn.lstm_spec([16, 6, 5, 4, 1], n_lstm=2)],
                         ids=["lstm-16-8-1", "mlp", "lstm-stacked"])
def test_gradients_match_finite_differences(spec):
    params = nn.init_params(spec, rng_new(22))
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (12, 16))
    y = (rng.uniform(size=12) > 0.5).astype(float)
    probes = choose_probes(spec, params, rng, per_array=2, total=20)
    analytic, numeric, rel, _ = gradient_check(spec, params, x, y, probes, rng=rng)
    assert rel.max() < 1e-4, (analytic, numeric)


def test_symmetric_labels_zero_output_bias_gradient():
    spec = nn.mlp_spec([16, 4, 1])
    params = nn.init_params(spec, rng_new(2))
    params[-1]["w"][:] = 0.0
    x = np.tile(np.linspace(0, 1, 16), (2, 1))
    _, grads = nn.backward(spec, params, x, np.array([1.0, 0.0]))
    assert grads[-1]["b"][0] == 0.0


def test_adam_examples():
    cfg = nn.TrainConfig()
    params = [{"w": np.array([0.0])}]
    state = nn.AdamState.zeros_like(params)
    nn.adam_step(state, params, [{"w": np.array([1.0])}], cfg)
    assert params[0]["w"][0] == pytest.approx(-0.001 / (1 + 1e-7), rel=1e-15)
    before = params[0]["w"].copy()
    fresh = nn.AdamState.zeros_like(params)
    nn.adam_step(fresh, params, [{"w": np.array([0.0])}], cfg)
    assert np.array_equal(params[0]["w"], before)


def separable(n=600, seed=0):
    rng = np.random.default_rng(seed)
    y = (rng.uniform(size=n) > 0.5).astype(float)
    x = rng.uniform(0, 0.4, (n, 16))
    x[y == 1, :4] += 0.6
    return x, y


def test_training_reduces_loss_and_is_deterministic():
    x, y = separable()
    spec = nn.lstm_spec([16, 8, 8, 1], n_lstm=1)
    cfg = nn.TrainConfig(learning_rate=0.01, batch_size=64, epochs=10)
    a = nn.train(spec, cfg, x, y)
    b = nn.train(spec, cfg, x, y)
    assert len(a.losses) == 10
    assert a.losses[-1] < a.losses[0]
    assert a.losses == b.losses
    for pa, pb in zip(a.params, b.params):
        for k in pa:
            assert np.array_equal(pa[k], pb[k])
    assert (nn.predict(a.params, spec, x) == y).mean() > 0.95


def test_train_rejects_empty():
    with pytest.raises(nn.EmptyDataset):
        nn.train(nn.mlp_spec([16, 2, 1]), nn.TrainConfig(), np.zeros((0, 16)), np.zeros(0))


def test_batches_per_epoch(monkeypatch):
    calls = []
    real = nn.adam_step
    monkeypatch.setattr(nn, "adam_step", lambda *a: calls.append(1) or real(*a))
    x = np.zeros((2800, 16))
    nn.train(nn.mlp_spec([16, 2, 1]), nn.TrainConfig(epochs=1), x, np.zeros(2800))
    assert len(calls) == math.ceil(2800 / 560) == 5


def test_predict_threshold_boundary():
    spec = nn.mlp_spec([16, 1])
    params = [{"w": np.zeros((1, 16)), "b": np.zeros(1)}]
    assert nn.predict(params, spec, np.zeros(16)) == 1
    params[0]["b"][0] = math.log(0.49 / 0.51)
    assert nn.predict(params, spec, np.zeros(16)) == 0
    params[0]["b"][0] = math.log(0.99 / 0.01)
    assert nn.predict(params, spec, np.zeros(16)) == 1


def test_checkpoint_round_trip():
    spec = nn.lstm_spec([16, 4, 3, 1], n_lstm=1)
    params = nn.init_params(spec, rng_new(9))
    back = nn.params_from_dict(spec, nn.params_to_dict(spec, params))
    for a, b in zip(params, back):
        assert a.keys() == b.keys()
        for k in a:
            assert np.array_equal(a[k], b[k])


def test_table_structures():
    lstm = nn.lstm_spec()
    assert lstm.layer_sizes == [16, 64, 128, 256, 512, 64, 64, 32, 1]
    assert lstm.layer_kinds[:2] == ["LSTM", "LSTM"] and set(lstm.layer_kinds[2:]) == {"DENSE"}
    assert nn.mlp_spec().layer_sizes == [16, 32, 128, 512, 32, 1]
    params = nn.init_params(lstm, rng_new(22))
    assert params[0]["w_f"].shape == (64, 64 + 16)
    assert params[1]["w_o"].shape == (128, 128 + 64)
