import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import central_diff, rel_err
from mmdgm.mathcore import RngStream, ShapeError
from mmdgm.networks import (
    Layer,
    MlpParams,
    StaleCacheError,
    bernoulli_loglik,
    bernoulli_loglik_grad,
    decoder_backward,
    decoder_forward,
    encoder_backward,
    encoder_forward,
    encoder_hidden,
    init_decoder,
    init_encoder,
    init_layer,
    mlp_backward,
    mlp_forward,
)


def _mlp(acts, widths, seed=0):
    rng = RngStream(seed, "init")
    layers = [init_layer(rng.child(i), a, b, act) for i, (a, b, act) in enumerate(zip(widths, widths[1:], acts))]
    for layer in layers:
        layer.b[:] = rng.child(50).normal(layer.b.shape) * 0.1
    return MlpParams(layers)


@pytest.mark.parametrize("act", ["softplus", "tanh", "sigmoid", "linear"])
def test_mlp_backward_matches_finite_differences(act):
    params = _mlp([act, act], [4, 5, 3])
    x = RngStream(1, "data").normal((6, 4))
    w = RngStream(2, "data").normal((6, 3))
    extra = RngStream(3, "data").normal((6, 5))

    def f():
        h, cache = mlp_forward(params, x)
        return float(np.sum(w * h) + np.sum(extra * cache.inputs[1]))

    _, cache = mlp_forward(params, x)
    grads, gx = mlp_backward(params, cache, w, [extra, None])
    for (dW, db), layer in zip(grads, params.layers):
        assert rel_err(dW, central_diff(f, layer.W)) < 1e-6
        assert rel_err(db, central_diff(f, layer.b)) < 1e-6
    assert rel_err(gx, central_diff(f, x)) < 1e-6


def test_stale_cache_rejected():
    params = _mlp(["tanh"], [3, 2])
    _, cache = mlp_forward(params, np.ones((1, 3)))
    other = _mlp(["tanh"], [3, 2], seed=9)
    with pytest.raises(StaleCacheError):
        mlp_backward(other, cache, np.ones((1, 2)))


def test_mlp_shape_checks():
    with pytest.raises(ShapeError):
        MlpParams([Layer(np.zeros((3, 2)), np.zeros(3)), Layer(np.zeros((2, 4)), np.zeros(2))])
    with pytest.raises(ShapeError):
        mlp_forward(_mlp(["tanh"], [3, 2]), np.ones((1, 4)))


def test_init_layer_range_and_bias():
    layer = init_layer(RngStream(0, "init"), 30, 20, "softplus")
    a = np.sqrt(6.0 / 50)
    assert layer.W.shape == (20, 30)
    assert np.abs(layer.W).max() <= a and np.abs(layer.W).max() > 0.9 * a
    assert not layer.b.any()


def test_encoder_decoder_gradients_match_finite_differences():
    rng = RngStream(0, "init")
    phi = init_encoder(rng.child(0), 6, (5, 4), 3, "softplus")
    theta = init_decoder(rng.child(1), 3, (4,), 6, "tanh")
    x = RngStream(1, "data").uniform((5, 6))
    z = RngStream(2, "data").normal((5, 3))
    a, b = RngStream(3, "data").normal((5, 3)), RngStream(4, "data").normal((5, 3))
    hid = [RngStream(5, "data").normal((5, 5)), RngStream(6, "data").normal((5, 4))]
    c = RngStream(7, "data").normal((5, 6))

    def f_enc():
        post, cache = encoder_forward(phi, x)
        hs = encoder_hidden(cache)
        return float(np.sum(a * post.mu) + np.sum(b * post.log_var) + sum(np.sum(h * w) for h, w in zip(hs, hid)))

    post, cache = encoder_forward(phi, x)
    g = encoder_backward(phi, cache, a, b, hid)
    for name, p in phi.params(prefix="").items():
        np.testing.assert_allclose(g[name.lstrip(".")], central_diff(f_enc, p), rtol=1e-6, atol=1e-8, err_msg=name)

    def f_dec():
        return float(np.sum(c * decoder_forward(theta, z)[0]))

    logits, dcache = decoder_forward(theta, z)
    g, dz = decoder_backward(theta, dcache, c)
    for name, p in theta.params(prefix="").items():
        np.testing.assert_allclose(g[name.lstrip(".")], central_diff(f_dec, p), rtol=1e-6, atol=1e-8, err_msg=name)
    np.testing.assert_allclose(dz, central_diff(f_dec, z), rtol=1e-6, atol=1e-8)


def test_param_dict_round_trip():
    phi = init_encoder(RngStream(0, "init"), 4, (3,), 2)
    vals = {k: v + 1.0 for k, v in phi.params().items()}
    phi2 = phi.with_params(vals)
    for k, v in phi2.params().items():
        np.testing.assert_array_equal(v, vals[k])
    assert sorted(phi.params()) == sorted(
        ["enc.l0.W", "enc.l0.b", "enc.mu.W", "enc.mu.b", "enc.logvar.W", "enc.logvar.b"])
    theta = init_decoder(RngStream(0, "init"), 2, (3,), 4)
    assert theta.latent_dim == 2 and theta.data_dim == 4


def test_bernoulli_loglik_matches_scipy():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(4, 7)) * 5
    x = (rng.uniform(size=(4, 7)) < 0.5).astype(float)
    p = 1.0 / (1.0 + np.exp(-logits))
    ref = stats.bernoulli.logpmf(x, p).sum(axis=1)
    np.testing.assert_allclose(bernoulli_loglik(x, logits), ref, rtol=1e-12)


@given(st.floats(-50, 50), st.floats(0, 1))
def test_bernoulli_grad_matches_finite_difference(logit, x):
    h = 1e-6
    fd = (bernoulli_loglik(np.array([x]), np.array([logit + h])) -
          bernoulli_loglik(np.array([x]), np.array([logit - h]))) / (2 * h)
    assert bernoulli_loglik_grad(np.array([x]), np.array([logit]))[0] == pytest.approx(fd, abs=1e-6)


def test_bernoulli_loglik_is_finite_for_saturated_logits():
    out = bernoulli_loglik(np.array([[1.0, 0.0]]), np.array([[800.0, -800.0]]))
    assert out[0] == pytest.approx(0.0, abs=1e-300)
