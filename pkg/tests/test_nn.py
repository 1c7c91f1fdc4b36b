import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cplx_stgcn.errors import DivergenceError, StaleCacheError
from cplx_stgcn.nn import (StgcnConfig, StgcnModel, TrainConfig, TrainingSet, backward,
                           batch_loss, crelu, forward, graph_conv, load_checkpoint,
                           loss_forecast, loss_localization, normalized_gso, save_checkpoint,
                           temporal_conv, train)

from gsp_util import crandn, finite_difference_grads, random_admittance, relative_errors

finite = st.floats(-1e6, 1e6, allow_nan=False)
cplx = st.builds(complex, finite, finite)


@settings(max_examples=300, deadline=None)
@given(cplx, cplx)
def test_crelu_non_expansive(a, b):
    assert abs(crelu(a) - crelu(b)) <= abs(a - b) * (1 + 1e-12) + 1e-12


def test_crelu_acts_on_each_part():
    np.testing.assert_array_equal(crelu(np.array([1 - 2j, -3 + 4j, -1 - 1j])), [1, 4j, 0])


def test_temporal_conv_shape_check():
    with pytest.raises(ValueError):
        temporal_conv(np.ones((3, 2)), np.ones((4, 5)))


def test_graph_conv_single_tap_is_pointwise():
    rng = np.random.default_rng(0)
    S = random_admittance(4, rng)
    X = crandn(rng, 4, 3)
    taps = crandn(rng, 1, 3, 2)
    np.testing.assert_allclose(graph_conv(S, taps, X), crelu(X @ taps[0]))


def test_graph_conv_permutation_equivariant():
    rng = np.random.default_rng(1)
    S = random_admittance(6, rng) / 20
    X = crandn(rng, 6, 3)
    taps = crandn(rng, 3, 3, 2)
    P = np.eye(6)[rng.permutation(6)]
    np.testing.assert_allclose(graph_conv(P @ S @ P.T, taps, P @ X), P @ graph_conv(S, taps, X),
                               atol=1e-12)


def tiny(head, seed=0, n=5):
    cfg = StgcnConfig(n, window=3, temporal_channels=3, graph_taps=2, graph_channels=8,
                      hidden=(8, 8), head=head, n_outputs=n if head == "regression" else 3)
    return StgcnModel.init(cfg, seed)


def tiny_data(head, rng, n=5, B=4):
    X = 1 + 0.3 * crandn(rng, B, n, 3)
    if head == "regression":
        return TrainingSet(X, 1 + 0.1 * crandn(rng, B, n), crandn(rng, B, 3), crandn(rng, B, 3), [0, 2, 4])
    return TrainingSet(X, (rng.random((B, 3)) < 0.5).astype(float))


def test_parameter_shapes_and_count():
    m = tiny("regression")
    shapes = m.config.param_shapes()
    assert all(m.params[k].shape == s for k, s in shapes.items())
    assert m.n_parameters() == 2 * sum(int(np.prod(s)) for s in shapes.values())
    c = tiny("classification")
    assert np.isrealobj(c.params["head_w"]) and c.params["head_w"].shape == (3, 16)


def test_init_is_seeded():
    a, b = tiny("regression", 3), tiny("regression", 3)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_forward_single_matches_batch():
    rng = np.random.default_rng(2)
    m = tiny("regression")
    S = normalized_gso(random_admittance(5, rng))
    X = crandn(rng, 3, 5, 3)
    batch, _ = forward(m, S, X)
    for i in range(3):
        np.testing.assert_allclose(forward(m, S, X[i])[0], batch[i], atol=1e-14)
    with pytest.raises(ValueError):
        forward(m, S, X[:, :, :2])


def test_classification_outputs_are_probabilities():
    rng = np.random.default_rng(3)
    m = tiny("classification")
    p, _ = forward(m, normalized_gso(random_admittance(5, rng)), crandn(rng, 4, 5, 3))
    assert p.shape == (4, 3) and np.all((p > 0) & (p < 1))


@pytest.mark.parametrize("head, mu2", [("regression", 0.0), ("regression", 0.3), ("classification", 0.0)])
def test_gradients_match_finite_differences(head, mu2):
    rng = np.random.default_rng(4)
    Y = random_admittance(5, rng) / 10
    S = normalized_gso(Y)
    m = tiny(head, seed=1)
    data = tiny_data(head, rng)
    _, grads = batch_loss(m, S, data, Y, mu2, return_grad=True)
    numeric = finite_difference_grads(lambda: batch_loss(m, S, data, Y, mu2), m.params)
    errs = relative_errors(grads, numeric)
    assert max(errs.values()) <= 1e-4, errs


def test_forecast_loss_gradient_in_prediction():
    rng = np.random.default_rng(5)
    S = random_admittance(4, rng)
    y, x = crandn(rng, 4), crandn(rng, 4)
    v, i = crandn(rng, 2), crandn(rng, 2)
    val, g = loss_forecast(y, x, v, i, S, 0.7, [1, 3], return_grad=True)
    num = finite_difference_grads(lambda: loss_forecast(y, x, v, i, S, 0.7, [1, 3]), {"y": y})["y"]
    np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-6)
    with pytest.raises(ValueError):
        loss_forecast(y, x, v, i, S, -1.0, [1, 3])


def test_localization_loss_requires_binary_labels():
    assert loss_localization(np.array([0.5, 0.5]), np.array([0, 1])) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        loss_localization(np.array([0.5]), np.array([0.3]))


def test_stale_cache_rejected():
    rng = np.random.default_rng(6)
    m = tiny("regression")
    S = normalized_gso(random_admittance(5, rng))
    pred, cache = forward(m, S, crandn(rng, 5, 3))
    m.version += 1
    with pytest.raises(StaleCacheError):
        backward(m, cache, np.ones_like(pred))


def test_training_reduces_loss_and_is_deterministic():
    rng = np.random.default_rng(7)
    Y = random_admittance(5, rng) / 10
    S = normalized_gso(Y)
    data = tiny_data("regression", rng, B=32)
    cfg = TrainConfig(lr=5e-3, epochs=40, batch_size=8, seed=0, mu2=0.0)
    m = tiny("regression")
    before = batch_loss(m, S, data)
    a, trace = train(m, data, cfg, S, Y)
    b, _ = train(m, data, cfg, S, Y)
    assert batch_loss(a, S, data) < 0.5 * before
    assert len(trace) == 40
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_divergence_detected():
    rng = np.random.default_rng(8)
    m = tiny("regression")
    m.params["gamma"][:] = np.nan
    with pytest.raises(DivergenceError):
        forward(m, normalized_gso(random_admittance(5, rng)), crandn(rng, 5, 3))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    m = tiny("classification")
    m.input_offset = crandn(rng, 5)
    m.input_scale = 0.3
    path = tmp_path / "ck.json"
    save_checkpoint(m, path, {"note": "x"})
    back = load_checkpoint(path)
    S = normalized_gso(random_admittance(5, rng))
    X = crandn(rng, 2, 5, 3)
    np.testing.assert_array_equal(forward(back, S, X)[0], forward(m, S, X)[0])


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "other", "version": 1}')
    with pytest.raises(ValueError):
        load_checkpoint(path)
