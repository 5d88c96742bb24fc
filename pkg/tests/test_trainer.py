from dataclasses import replace

import numpy as np
import pytest

from conftest import central_diff, rel_err
from mmdgm.dataset import LabeledDataset, synth_toy
from mmdgm.mathcore import RngStream
from mmdgm.maxmargin import hinge_loss
from mmdgm.networks import decoder_forward
from mmdgm.trainer import (
    GROUPS,
    TrainConfig,
    TrainingError,
    evaluate,
    features,
    generate,
    init_model,
    minibatch_objective,
    minibatch_subgradient,
    train,
)
from mmdgm.variational import bound_gradients


def _oracle_objective(state, x, y, eps, n_total, C, sigma2):
    """Recompute the objective from the raw weight arrays with plain numpy."""
    def mlp(layers, h):
        for layer in layers:
            a = h @ layer.W.T + layer.b
            h = np.logaddexp(0.0, a) if layer.act == "softplus" else a
        return h

    phi, theta, lam = state.phi, state.theta, state.cls.lam
    h = mlp(phi.trunk.layers, x)
    mu = h @ phi.head_mu.W.T + phi.head_mu.b
    lv = h @ phi.head_logvar.W.T + phi.head_logvar.b
    total = 0.0
    for i in range(x.shape[0]):
        kl = 0.5 * np.sum(mu[i] ** 2 + np.exp(lv[i]) - 1 - lv[i])
        rec = 0.0
        for l in range(eps.shape[1]):
            z = mu[i] + np.exp(0.5 * lv[i]) * eps[i, l]
            logits = mlp(theta.trunk.layers, z[None])[0] @ theta.head_logits.W.T + theta.head_logits.b
            p = 1 / (1 + np.exp(-logits))
            rec += np.sum(x[i] * np.log(p) + (1 - x[i]) * np.log(1 - p))
        bound = kl - rec / eps.shape[1]
        s = lam @ mu[i]
        hinge = max(max(float(c != y[i]) + s[c] - s[y[i]] for c in range(len(s))), 0.0)
        total += n_total / x.shape[0] * (bound + C * hinge)
    return total + np.sum(lam ** 2) / (2 * sigma2)


def _batch(tiny_data, cfg):
    x, y = tiny_data.images[:4], tiny_data.labels[:4]
    eps = RngStream(9, "epsilon").normal((4, cfg.L, cfg.latent_dim))
    return x, y, eps


def test_objective_matches_independent_oracle(tiny_state, tiny_config, tiny_data):
    x, y, eps = _batch(tiny_data, tiny_config)
    tiny_state.cls.lam[:] = RngStream(1, "init").normal(tiny_state.cls.lam.shape)
    got = minibatch_objective(tiny_state, (x, y), tiny_config, eps, tiny_data.n)
    want = _oracle_objective(tiny_state, x, y, eps, tiny_data.n, tiny_config.C, tiny_config.sigma2_eta)
    assert got == pytest.approx(want, rel=1e-12)


def test_objective_term_dropout(tiny_state, tiny_config, tiny_data):
    x, y, eps = _batch(tiny_data, tiny_config)
    n = tiny_data.n
    va = minibatch_objective(tiny_state, (x, y), tiny_config, eps, n, C=0.0)
    one = minibatch_objective(tiny_state, (x, y), tiny_config, eps, n, C=1.0)
    assert one - va == pytest.approx(n, rel=1e-12)  # lam = 0: unit hinge per sample


@pytest.mark.parametrize("mode", ["mean_z", "concat_hidden"])
def test_subgradient_matches_finite_differences(tiny_config, tiny_data, mode):
    cfg = replace(tiny_config, feature_mode=mode)
    state = init_model(cfg, 8, 3)
    state.cls.lam[:] = RngStream(2, "init").normal(state.cls.lam.shape)
    x, y, eps = _batch(tiny_data, cfg)
    grads = minibatch_subgradient(state, (x, y), cfg, eps, tiny_data.n)

    def f():
        return minibatch_objective(state, (x, y), cfg, eps, tiny_data.n)

    feats = features(state, x)
    s = np.sort(feats @ state.cls.lam.T + 1.0 - np.eye(3)[y], axis=1)
    assert np.all(s[:, -1] - s[:, -2] > 1e-3), "test point must be away from hinge kinks"
    for g in GROUPS:
        for name, p in state.group_params(g).items():
            assert rel_err(grads[g][name], central_diff(f, p, 1e-4, 5), floor=1e-6) <= 1e-5, name


def test_c0_lambda_gradient_is_shrinkage(tiny_state, tiny_config, tiny_data):
    x, y, eps = _batch(tiny_data, tiny_config)
    tiny_state.cls.lam[:] = 2.0
    g = minibatch_subgradient(tiny_state, (x, y), tiny_config, eps, tiny_data.n, C=0.0)
    np.testing.assert_array_equal(g["lambda"]["cls.lambda"], tiny_state.cls.lam / tiny_config.sigma2_eta)


def test_inactive_hinges_give_pure_bound_gradient(tiny_state, tiny_config, tiny_data):
    x, _, eps = _batch(tiny_data, tiny_config)
    y = np.zeros(4, dtype=int)
    feats = features(tiny_state, x)
    # every row scores label 0 far above the others
    lam = np.zeros_like(tiny_state.cls.lam)
    u = feats.mean(axis=0)
    lam[0] = 10.0 * u / np.min(feats @ u)
    tiny_state.cls.lam[:] = lam
    assert not np.any(hinge_loss(lam, feats, y).active)
    g = minibatch_subgradient(tiny_state, (x, y), tiny_config, eps, tiny_data.n)
    _, g_phi = bound_gradients(tiny_state.theta, tiny_state.phi, x, eps)
    scale = tiny_data.n / 4
    for k, v in g_phi.items():
        np.testing.assert_allclose(g["phi"]["enc." + k], scale * v, rtol=1e-12, atol=1e-12)


@pytest.fixture(scope="module")
def toy2():
    return synth_toy(RngStream(0, "data"), 100, 2, 8, noise=0.05, shift=0)


TOY_CFG = TrainConfig(C=10.0, m=20, epochs=40, pretrain_epochs=10, latent_dim=4, hidden=(16, 16),
                      base_lr=3e-3, seed=0)


@pytest.fixture(scope="module")
def toy_run(toy2):
    return train(TOY_CFG, toy2)


def test_toy_training_separates_and_descends(toy_run, toy2):
    h = toy_run.history
    assert len(h) == 50
    assert h[-1]["train_error"] < 0.05
    assert h[-1]["objective"] <= 0.7 * h[0]["objective"]
    assert evaluate(toy_run, toy2) == 0.0
    norms = [r["lambda_norm"] for r in h]
    assert np.all(np.isfinite(norms)) and max(norms) < 1e3


def test_pretraining_bound_descends(toy_run):
    b = [r["bound_mean"] for r in toy_run.history[:10]]
    assert all(b2 <= 1.01 * b1 for b1, b2 in zip(b, b[1:]))
    assert b[-1] < b[0]


def test_training_is_deterministic(toy2, toy_run):
    again = train(TOY_CFG, toy2)
    for k, v in toy_run.all_params().items():
        np.testing.assert_array_equal(v, again.all_params()[k])
    assert toy_run.history == again.history


def test_c0_run_shrinks_nonzero_lambda(toy2):
    cfg = replace(TOY_CFG, C=0.0, epochs=3, pretrain_epochs=0)
    state = init_model(cfg, toy2.dim, 2)
    state.cls.lam[:] = 1.0
    state = train(cfg, toy2, state)
    norms = [np.sqrt(state.cls.lam.size)] + [r["lambda_norm"] for r in state.history]
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_lambda_only_training_reduces_hinge(toy2):
    va = train(replace(TOY_CFG, C=0.0, epochs=20, pretrain_epochs=0), toy2)
    feats = features(va, toy2.images)
    before = hinge_loss(va.cls.lam, feats, toy2.labels).value.sum()
    cfg = replace(TOY_CFG, C=10.0, epochs=25, pretrain_epochs=0, update_groups=("lambda",))
    va.epoch = 20
    after_state = train(cfg, toy2, va)
    np.testing.assert_array_equal(after_state.phi.head_mu.W, va.phi.head_mu.W)
    after = hinge_loss(after_state.cls.lam, feats, toy2.labels).value.sum()
    assert after < before


def test_non_finite_parameters_abort_with_group_name(tiny_config, tiny_data):
    state = init_model(tiny_config, 8, 3)
    state.phi.head_mu.W[0, 0] = np.nan
    with pytest.raises(TrainingError, match="parameter in group 'phi' \\(enc.mu.W\\)"):
        train(tiny_config, tiny_data, state)
    state = init_model(tiny_config, 8, 3)
    state.phi.head_logvar.b[:] = 1e6  # finite weights, but exp overflows downstream
    with np.errstate(all="ignore"), pytest.raises(TrainingError, match="non-finite gradient"):
        train(tiny_config, tiny_data, state)


def test_evaluate_with_zero_lambda(tiny_state, tiny_data):
    err = evaluate(tiny_state, tiny_data)
    assert err == pytest.approx(1 - np.mean(tiny_data.labels == 0))
    assert 0.0 <= err <= 1.0


def test_generate(tiny_state):
    out = generate(tiny_state, 5, RngStream(0, "generate"))
    assert out.shape == (5, 8) and np.all((out > 0) & (out < 1))
    np.testing.assert_array_equal(out, generate(tiny_state, 5, RngStream(0, "generate")))
    tiny_state.theta.head_logits.W[:] = 0.0
    tiny_state.theta.head_logits.b[:] = 0.0
    np.testing.assert_array_equal(generate(tiny_state, 3, RngStream(1, "generate")), 0.5)
    tiny_state.theta.head_logits.b[:] = 1e4
    assert np.all(generate(tiny_state, 2, RngStream(1, "generate")) < 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(C=-1)
    with pytest.raises(ValueError):
        TrainConfig(feature_mode="pixels")
    with pytest.raises(ValueError):
        TrainConfig(update_groups=("theta", "gamma"))
    with pytest.raises(ValueError):
        train(TrainConfig(m=50), LabeledDataset(np.zeros((10, 4)), np.zeros(10, int), 1))
