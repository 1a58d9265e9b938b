import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arht_ood import bnn
from arht_ood.bnn import (
    TrainConfig,
    VariationalLayer,
    VariationalNet,
    elbo,
    elbo_and_grad,
    embed,
    embed_training_set,
    forward,
    kl_divergence,
    sample_weights,
    softplus,
    train,
)
from arht_ood.data import SyntheticSpec, gen_table8
from arht_ood.exceptions import EmptyDatasetError, NonFiniteLossError
from arht_ood.experiments import TABLE8_TRAIN, table8_net


def scalar_net(mu=0.0, rho=0.0):
    layer = VariationalLayer(
        mu_w=np.array([[mu]]), rho_w=np.array([[rho]]), mu_b=np.zeros(1), rho_b=np.full(1, -800.0)
    )
    return VariationalNet(layers=[layer], activation="identity")


def small_net(sizes=(3, 4, 2), activation="tanh", seed=0, rho=-1.0):
    net = VariationalNet.initialize(sizes, np.random.default_rng(seed), activation=activation,
                                    init_mu_std=0.5, init_rho=rho)
    r = np.random.default_rng(seed + 1)
    for layer in net.layers:
        layer.rho_w += r.normal(0, 0.3, layer.rho_w.shape)
        layer.rho_b += r.normal(0, 0.3, layer.rho_b.shape)
    return net


# -- posterior parameterisation ----------------------------------------------


def test_softplus_positive_and_stable():
    rho = np.array([-700.0, -30.0, -3.0, 0.0, 3.0, 50.0, 800.0])
    s = softplus(rho)
    assert np.all(s > 0)
    assert s[3] == pytest.approx(math.log(2.0))
    assert s[-1] == pytest.approx(800.0)
    assert s[2] == pytest.approx(math.log1p(math.exp(-3.0)))


def test_collapsed_posterior_samples_equal_mean():
    net = small_net(rho=-1000.0)
    for layer in net.layers:
        layer.rho_w[:] = -1000.0
        layer.rho_b[:] = -1000.0
    weights, _ = sample_weights(net, np.random.default_rng(1))
    for (W, b), layer in zip(weights, net.layers):
        assert np.array_equal(W, layer.mu_w)
        assert np.array_equal(b, layer.mu_b)


def test_sample_weights_deterministic():
    net = small_net()
    a, _ = sample_weights(net, np.random.default_rng(7))
    b, _ = sample_weights(net, np.random.default_rng(7))
    for (W1, b1), (W2, b2) in zip(a, b):
        assert np.array_equal(W1, W2) and np.array_equal(b1, b2)


def test_reparameterisation_moments():
    net = scalar_net(0.0, 0.0)
    rng = np.random.default_rng(3)
    draws = np.array([sample_weights(net, rng)[0][0][0][0, 0] for _ in range(10_000)])
    sd = math.log(2.0)
    bound = 3 * sd / math.sqrt(draws.size)
    assert abs(draws.mean()) <= min(0.03, bound)
    assert abs(draws.std() - sd) <= 0.03


def constant_layer_output(c, D):
    layer = VariationalLayer(np.full((1, D), c), np.zeros((1, D)), np.zeros(1), np.zeros(1))
    net = VariationalNet([layer], activation="identity")
    return forward(net, np.ones((1, D)), net.mean_weights())[0, 0]


def test_layer_scaling_exact():
    # constant weight c on D unit inputs: c * D / sqrt(D)
    for D in (4, 8, 16):
        assert constant_layer_output(0.7, D) == pytest.approx(0.7 * math.sqrt(D), rel=1e-14)
    assert constant_layer_output(0.7, 16) / constant_layer_output(0.7, 8) == pytest.approx(math.sqrt(2.0), rel=1e-14)


def test_forward_maps_to_embedding_dim():
    net = VariationalNet.initialize([5, 7, 3], np.random.default_rng(0))
    assert net.embed_dim == 7
    weights, _ = sample_weights(net, np.random.default_rng(1))
    assert forward(net, np.zeros((4, 5)), weights).shape == (4, 3)
    assert forward(net, np.zeros((4, 5)), weights, n_layers=net.embed_layers).shape == (4, 7)


def test_initialisation_defaults():
    net = VariationalNet.initialize([10, 20, 1], np.random.default_rng(0))
    assert np.all(net.layers[0].rho_w == -3.0)
    assert net.layers[0].sigma_w[0, 0] == pytest.approx(0.04858735, rel=1e-6)
    assert 0.08 < net.layers[0].mu_w.std() < 0.12


# -- KL and ELBO -------------------------------------------------------------


def kl_full_gaussian(mu1, cov1, mu2, cov2):
    """Textbook KL between two multivariate normals, dense matrices."""
    p = len(mu1)
    inv2 = np.linalg.inv(cov2)
    diff = mu2 - mu1
    _, ld1 = np.linalg.slogdet(cov1)
    _, ld2 = np.linalg.slogdet(cov2)
    return 0.5 * (ld2 - ld1 - p + np.trace(inv2 @ cov1) + diff @ inv2 @ diff)


def test_kl_zero_when_posterior_equals_prior():
    net = VariationalNet.initialize([3, 4, 2], np.random.default_rng(0))
    rho_prior = math.log(math.expm1(1.0))
    for layer in net.layers:
        for a in (layer.mu_w, layer.mu_b):
            a[:] = 0.0
        for a in (layer.rho_w, layer.rho_b):
            a[:] = rho_prior
    assert abs(kl_divergence(net)) <= 1e-12


def test_kl_scalar_textbook():
    net = scalar_net(mu=1.0, rho=math.log(math.expm1(1.0)))
    net.layers[0].rho_b[:] = math.log(math.expm1(1.0))  # bias: mu 0, sigma 1 -> zero KL
    assert kl_divergence(net) == pytest.approx(0.5, abs=1e-12)


def test_kl_matches_dense_formula():
    net = small_net(sizes=(3, 4, 2))
    net.prior_std = 1.3
    mu = np.concatenate([a.ravel() for l in net.layers for a in (l.mu_w, l.mu_b)])
    sig = np.concatenate([softplus(a).ravel() for l in net.layers for a in (l.rho_w, l.rho_b)])
    want = kl_full_gaussian(mu, np.diag(sig**2), np.zeros_like(mu), 1.3**2 * np.eye(mu.size))
    assert kl_divergence(net) == pytest.approx(want, rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(
    mu=st.floats(-5, 5),
    rho=st.floats(-10, 5),
    prior=st.floats(0.1, 5),
)
def test_kl_nonnegative(mu, rho, prior):
    net = scalar_net(mu, rho)
    net.layers[0].rho_b[:] = rho
    net.prior_std = prior
    assert kl_divergence(net) >= -1e-12


def test_elbo_components():
    net = small_net()
    X = np.random.default_rng(0).standard_normal((6, 3))
    y = np.random.default_rng(1).standard_normal((6, 2))
    weights, _ = sample_weights(net, np.random.default_rng(2))
    loss, task, kl = elbo(net, X, y, weights, 0.25, task="regression")
    out = forward(net, X, weights)
    assert task == pytest.approx(0.5 * np.sum((out - y) ** 2))
    assert kl == pytest.approx(kl_divergence(net))
    assert loss == pytest.approx(task + 0.25 * kl)


def test_elbo_errors():
    net = small_net()
    weights, _ = sample_weights(net, np.random.default_rng(0))
    with pytest.raises(EmptyDatasetError):
        elbo(net, np.zeros((0, 3)), np.zeros(0), weights, 1.0)
    huge = [(W * 1e200, b) for W, b in weights]
    with pytest.raises(NonFiniteLossError):
        elbo(net, np.ones((2, 3)), np.zeros((2, 2)), huge, 1.0, task="regression")


# -- gradient check ----------------------------------------------------------


def loss_at(net, X, y, noise, kl_weight, task):
    weights = [
        (l.mu_w + softplus(l.rho_w) * ew, l.mu_b + softplus(l.rho_b) * eb)
        for l, (ew, eb) in zip(net.layers, noise)
    ]
    return elbo(net, X, y, weights, kl_weight, task)[0]


def finite_difference_check(net, X, y, task, kl_weight=0.3, step=1e-4):
    rng = np.random.default_rng(11)
    weights, noise = sample_weights(net, rng)
    _, grads = elbo_and_grad(net, X, y, weights, noise, kl_weight, task)
    worst = 0.0
    for layer, layer_grads in zip(net.layers, grads):
        for param, g in zip(layer.params(), layer_grads):
            for idx in np.ndindex(param.shape):
                orig = param[idx]
                param[idx] = orig + step
                up = loss_at(net, X, y, noise, kl_weight, task)
                param[idx] = orig - step
                down = loss_at(net, X, y, noise, kl_weight, task)
                param[idx] = orig
                numeric = (up - down) / (2 * step)
                err = abs(numeric - g[idx]) / max(abs(numeric), abs(g[idx]), 1e-6)
                worst = max(worst, err)
    return worst


@pytest.mark.parametrize(
    "sizes,activation,task",
    [
        ((3, 4, 1), "tanh", "regression-norm"),
        ((2, 3, 3), "tanh", "classification"),
        ((2, 4, 2), "relu", "regression"),
        ((4, 2), "identity", "regression"),
    ],
)
def test_gradient_matches_finite_differences(sizes, activation, task):
    net = small_net(sizes=sizes, activation=activation, seed=len(sizes) + sizes[0])
    assert net.n_params <= 50
    r = np.random.default_rng(5)
    X = r.standard_normal((5, sizes[0]))
    if task == "classification":
        y = r.integers(0, sizes[-1], 5)
    elif task == "regression-norm":
        y = np.linalg.norm(X, axis=1)
    else:
        y = r.standard_normal((5, sizes[-1]))
    assert finite_difference_check(net, X, y, task) <= 1e-3


# -- training ----------------------------------------------------------------


def test_train_separable_toy_reduces_task_loss():
    r = np.random.default_rng(0)
    X = np.vstack([r.normal(-2, 0.5, (20, 2)), r.normal(2, 0.5, (20, 2))])
    y = np.r_[np.zeros(20, int), np.ones(20, int)]
    net = VariationalNet.initialize([2, 8, 2], np.random.default_rng(1))
    trained, trace = train(net, X, y, TrainConfig(epochs=30, learning_rate=1e-2, kl_weight=0.0,
                                                 task="classification", batch_size=8))
    assert trace[-1]["task"] < trace[0]["task"]
    assert all(math.isfinite(r["loss"]) for r in trace)
    for layer in trained.layers:
        assert all(np.all(np.isfinite(a)) for a in layer.params())
    # original is untouched
    assert np.array_equal(net.layers[0].mu_w, VariationalNet.initialize([2, 8, 2], np.random.default_rng(1)).layers[0].mu_w)


def test_train_table8_loss_halves():
    spec = SyntheticSpec(seed=3)
    train_set, _ = gen_table8(spec)
    net = table8_net(spec, seed=3)
    _, trace = train(net, train_set.inputs, train_set.targets,
                     TrainConfig(epochs=100, learning_rate=TABLE8_TRAIN["learning_rate"], seed=3))
    assert len(trace) == 100
    assert trace[-1]["loss"] <= 0.5 * trace[0]["loss"]


def test_train_deterministic():
    r = np.random.default_rng(0)
    X = r.standard_normal((40, 5))
    y = np.linalg.norm(X, axis=1)
    net = VariationalNet.initialize([5, 6, 1], np.random.default_rng(2))
    cfg = TrainConfig(epochs=5, learning_rate=1e-3, seed=9)
    _, t1 = train(net, X, y, cfg)
    _, t2 = train(net, X, y, cfg)
    assert [r["loss"] for r in t1] == [r["loss"] for r in t2]


def test_train_reports_diverging_epoch():
    X = np.ones((4, 2))
    y = np.full(4, 1e200)
    net = VariationalNet.initialize([2, 2, 1], np.random.default_rng(0))
    with pytest.raises(NonFiniteLossError) as info:
        train(net, X, y, TrainConfig(epochs=2))
    assert info.value.epoch == 0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(task="unknown")


# -- embeddings --------------------------------------------------------------


def test_embed_collapsed_net_is_deterministic():
    net = small_net((3, 5, 1), rho=-1000.0)
    for layer in net.layers:
        layer.rho_w[:] = -1000.0
        layer.rho_b[:] = -1000.0
    E = embed(net, np.array([0.3, -1.0, 2.0]), 10, np.random.default_rng(0))
    assert E.shape == (10, 5)
    assert np.all(E == E[0])


def test_embed_single_draw_count():
    net = small_net((3, 5, 1))
    assert embed(net, np.zeros(3), 1, np.random.default_rng(0)).shape == (1, 5)


def test_embed_matches_forward_with_sampled_weights():
    net = small_net((3, 5, 2))
    x = np.array([0.5, -0.2, 1.0])
    E = embed(net, x, 1, np.random.default_rng(4))
    # same draw order: eps_w then eps_b for the embedding layer
    r = np.random.default_rng(4)
    layer = net.layers[0]
    W = layer.mu_w + layer.sigma_w * r.standard_normal((1,) + layer.mu_w.shape)[0]
    b = layer.mu_b + layer.sigma_b * r.standard_normal((1,) + layer.mu_b.shape)[0]
    want = forward(net, x[None], [(W, b)], n_layers=1)
    assert np.allclose(E, want, rtol=1e-13, atol=1e-15)


def test_embed_covariance_psd_on_trained_net():
    spec = SyntheticSpec(dim=16, n_train=64, seed=0)
    train_set, _ = gen_table8(spec)
    net = VariationalNet.initialize([16, 12, 1], np.random.default_rng(0))
    net, _ = train(net, train_set.inputs, train_set.targets, TrainConfig(epochs=10, learning_rate=1e-2))
    E = embed(net, train_set.inputs[0], 300, np.random.default_rng(1))
    C = np.cov(E, rowvar=False)
    assert np.trace(C) > 0
    assert np.linalg.eigvalsh(C).min() >= -1e-10 * np.abs(C).max()


def test_embed_training_set_counts_and_order():
    net = small_net((3, 4, 1))
    X = np.random.default_rng(0).standard_normal((10, 3))
    assert embed_training_set(net, X, 1, np.random.default_rng(0)).shape == (10, 4)
    X50 = np.random.default_rng(1).standard_normal((50, 3))
    E = embed_training_set(net, X50, 5, np.random.default_rng(0))
    assert E.shape == (250, 4)
    # one point's five draws differ from each other when sigma > 0
    block = E[:5]
    assert len({tuple(row) for row in block}) == 5
    with pytest.raises(EmptyDatasetError):
        embed_training_set(net, np.zeros((0, 3)), 5, np.random.default_rng(0))


# -- checkpoints -------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path):
    net = small_net((4, 6, 3), activation="relu")
    net.prior_std = 0.5
    net.seed = 123
    net.meta = {"task": "classification"}
    path = bnn.save_checkpoint(net, tmp_path / "net.npz")
    back = bnn.load_checkpoint(path)
    assert back.sizes == net.sizes
    assert back.activation == "relu" and back.prior_std == 0.5 and back.seed == 123
    assert back.meta == {"task": "classification"}
    for a, b in zip(net.layers, back.layers):
        for x, y in zip(a.params(), b.params()):
            assert x.dtype == y.dtype and x.tobytes() == y.tobytes()
