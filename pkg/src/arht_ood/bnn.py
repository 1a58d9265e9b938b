"""Mean-field variational MLP (Bayes by backprop) in plain numpy.

Every weight and bias carries an independent Gaussian posterior
``N(mu, softplus(rho)^2)`` and a zero-mean Gaussian prior.  Layer ``l``
computes ``a_{l-1} W_l^T / sqrt(D_{l-1}) + b_l``; all hidden layers apply the
activation, the output layer is linear.  Embeddings are the activations of
the last hidden layer (or the raw output for a single-layer net).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import EmptyDatasetError, NonFiniteLossError

logger = logging.getLogger(__name__)

TASKS = ("regression-norm", "regression", "classification")


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0))))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z):
    return (z > 0).astype(float)


def _tanh_grad(z):
    return 1.0 - np.tanh(z) ** 2


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "identity": (lambda z: z, np.ones_like),
}


@dataclass
class VariationalLayer:
    mu_w: np.ndarray
    rho_w: np.ndarray
    mu_b: np.ndarray
    rho_b: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.mu_w.shape

    @property
    def sigma_w(self):
        return softplus(self.rho_w)

    @property
    def sigma_b(self):
        return softplus(self.rho_b)

    def params(self):
        return [self.mu_w, self.rho_w, self.mu_b, self.rho_b]

    def copy(self) -> "VariationalLayer":
        return VariationalLayer(*(a.copy() for a in self.params()))


@dataclass
class VariationalNet:
    layers: list[VariationalLayer]
    activation: str = "relu"
    prior_std: float = 1.0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ValueError("layer shapes do not chain")

    @classmethod
    def initialize(
        cls,
        sizes,
        rng: np.random.Generator,
        activation: str = "relu",
        prior_std: float = 1.0,
        init_mu_std: float = 0.1,
        init_rho: float = -3.0,
        seed: int | None = None,
    ) -> "VariationalNet":
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        layers = []
        for d_in, d_out in zip(sizes[:-1], sizes[1:]):
            layers.append(
                VariationalLayer(
                    mu_w=rng.normal(0.0, init_mu_std, size=(d_out, d_in)),
                    rho_w=np.full((d_out, d_in), float(init_rho)),
                    mu_b=rng.normal(0.0, init_mu_std, size=d_out),
                    rho_b=np.full(d_out, float(init_rho)),
                )
            )
        return cls(layers=layers, activation=activation, prior_std=prior_std, seed=seed)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].shape[1]] + [layer.shape[0] for layer in self.layers]

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def embed_layers(self) -> int:
        """Number of layers evaluated to produce an embedding."""
        return max(len(self.layers) - 1, 1)

    @property
    def embed_dim(self) -> int:
        return self.sizes[self.embed_layers]

    @property
    def n_params(self) -> int:
        return sum(layer.mu_w.size + layer.mu_b.size for layer in self.layers)

    def copy(self) -> "VariationalNet":
        return VariationalNet(
            layers=[layer.copy() for layer in self.layers],
            activation=self.activation,
            prior_std=self.prior_std,
            seed=self.seed,
            meta=dict(self.meta),
        )

    def mean_weights(self):
        return [(layer.mu_w, layer.mu_b) for layer in self.layers]


# --------------------------------------------------------------------------
# sampling and forward passes


def sample_weights(net: VariationalNet, rng: np.random.Generator, n_layers=None):
    """One reparameterised draw ``mu + softplus(rho) * eps`` per parameter.

    Returns ``(weights, noise)``: lists of ``(W, b)`` and ``(eps_W, eps_b)``.
    """
    layers = net.layers if n_layers is None else net.layers[:n_layers]
    weights, noise = [], []
    for layer in layers:
        eps_w = rng.standard_normal(layer.mu_w.shape)
        eps_b = rng.standard_normal(layer.mu_b.shape)
        weights.append(
            (layer.mu_w + layer.sigma_w * eps_w, layer.mu_b + layer.sigma_b * eps_b)
        )
        noise.append((eps_w, eps_b))
    return weights, noise


def forward(net: VariationalNet, X, weights, n_layers=None, return_cache=False):
    """Forward pass with concrete ``weights``.

    With ``n_layers`` smaller than the depth, the activated output of that
    layer is returned (an embedding).
    """
    act, _ = ACTIVATIONS[net.activation]
    depth = len(weights) if n_layers is None else n_layers
    a = np.asarray(X, dtype=float)
    cache = [a]
    pre = []
    for i, (W, b) in enumerate(weights[:depth]):
        z = (a @ W.T) / math.sqrt(W.shape[1]) + b
        pre.append(z)
        last_of_net = i == len(net.layers) - 1
        a = z if last_of_net else act(z)
        cache.append(a)
    if return_cache:
        return a, (cache, pre)
    return a


def embed(net: VariationalNet, x, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` embeddings of one input, each under freshly drawn weights.

    Returns an array of shape ``(k, embed_dim)``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    x = np.asarray(x, dtype=float).reshape(-1)
    act, _ = ACTIVATIONS[net.activation]
    depth = net.embed_layers
    a = np.broadcast_to(x, (k, x.shape[0]))
    for i, layer in enumerate(net.layers[:depth]):
        d_out, d_in = layer.shape
        eps_w = rng.standard_normal((k, d_out, d_in))
        eps_b = rng.standard_normal((k, d_out))
        W = layer.mu_w + layer.sigma_w * eps_w
        b = layer.mu_b + layer.sigma_b * eps_b
        z = np.einsum("koi,ki->ko", W, a) / math.sqrt(d_in) + b
        a = z if i == len(net.layers) - 1 else act(z)
    return a


def embed_training_set(net: VariationalNet, X, s: int, rng: np.random.Generator) -> np.ndarray:
    """``s`` posterior embeddings of every row of ``X``, point-major order.

    Row ``i * s + j`` is point ``i`` under its ``j``-th weight draw.
    """
    if s < 1:
        raise ValueError(f"s must be >= 1, got {s}")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDatasetError("training set is empty")
    return np.concatenate([embed(net, x, s, rng) for x in X], axis=0)


# --------------------------------------------------------------------------
# objective


def kl_divergence(net: VariationalNet) -> float:
    """Closed-form KL(q || N(0, prior_std^2 I)) summed over all parameters."""
    sp = net.prior_std
    total = 0.0
    for layer in net.layers:
        for mu, rho in ((layer.mu_w, layer.rho_w), (layer.mu_b, layer.rho_b)):
            sigma = softplus(rho)
            total += float(
                np.sum(np.log(sp / sigma) + (sigma**2 + mu**2) / (2 * sp**2) - 0.5)
            )
    return total


def task_loss(net_output, y, task: str):
    """Summed negative log-likelihood (up to constants) and its output gradient."""
    if task == "classification":
        logits = net_output
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        y = np.asarray(y, dtype=int)
        idx = np.arange(len(y))
        loss = -float(logp[idx, y].sum())
        grad = np.exp(logp)
        grad[idx, y] -= 1.0
        return loss, grad
    resid = net_output.reshape(len(y), -1) - np.asarray(y, dtype=float).reshape(len(y), -1)
    with np.errstate(over="ignore", invalid="ignore"):
        loss = 0.5 * float(np.sum(resid**2))
    return loss, resid.reshape(net_output.shape)


def elbo(net: VariationalNet, X, y, weights, kl_weight: float, task: str = "regression-norm"):
    """Negative ELBO estimate for one batch and one weight draw.

    Returns ``(loss, task_term, kl_term)`` with ``loss = task + kl_weight * kl``.
    """
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise EmptyDatasetError("batch is empty")
    out = forward(net, X, weights)
    task_term, _ = task_loss(out, y, task)
    kl_term = kl_divergence(net)
    loss = task_term + kl_weight * kl_term
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss}")
    return loss, task_term, kl_term


def elbo_and_grad(net: VariationalNet, X, y, weights, noise, kl_weight: float, task: str):
    """Loss terms plus gradients w.r.t. every ``(mu_w, rho_w, mu_b, rho_b)``."""
    _, dact = ACTIVATIONS[net.activation]
    out, (acts, pre) = forward(net, X, weights, return_cache=True)
    task_term, g = task_loss(out, y, task)
    kl_term = kl_divergence(net)
    loss = task_term + kl_weight * kl_term
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss}")

    sp2 = net.prior_std**2
    grads = [None] * len(net.layers)
    for i in reversed(range(len(net.layers))):
        W, _ = weights[i]
        layer = net.layers[i]
        scale = 1.0 / math.sqrt(W.shape[1])
        if i < len(net.layers) - 1:
            g = g * dact(pre[i])
        gW = scale * (g.T @ acts[i])
        gb = g.sum(axis=0)
        g = scale * (g @ W)
        eps_w, eps_b = noise[i]
        sig_w, sig_b = layer.sigma_w, layer.sigma_b
        dsig_w, dsig_b = sigmoid(layer.rho_w), sigmoid(layer.rho_b)
        grads[i] = [
            gW + kl_weight * layer.mu_w / sp2,
            (gW * eps_w + kl_weight * (sig_w / sp2 - 1.0 / sig_w)) * dsig_w,
            gb + kl_weight * layer.mu_b / sp2,
            (gb * eps_b + kl_weight * (sig_b / sp2 - 1.0 / sig_b)) * dsig_b,
        ]
    return (loss, task_term, kl_term), grads


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 5e-5
    weight_decay: float = 1e-5
    kl_weight: float | None = None  # None -> 1 / num_batches
    seed: int = 0
    task: str = "regression-norm"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.kl_weight is not None and self.kl_weight < 0:
            raise ValueError("kl_weight must be nonnegative")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")


class Adam:
    """Adam with L2 weight decay folded into the gradient of selected params."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, decay_mask=None, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_mask = decay_mask or [False] * len(params)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v, decay in zip(self.params, grads, self.m, self.v, self.decay_mask):
            if decay and self.weight_decay:
                g = g + self.weight_decay * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(net: VariationalNet, X, y, config: TrainConfig):
    """Minimise the negative ELBO with one weight sample per minibatch.

    Returns a trained copy of ``net`` and a list of per-epoch records
    ``{"epoch", "loss", "task", "kl"}`` (sums over the epoch's batches).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyDatasetError("training set is empty")
    if X.shape[1] != net.input_dim:
        raise ValueError(f"input dim {X.shape[1]} != net input dim {net.input_dim}")
    if len(y) != len(X):
        raise ValueError("X and y lengths differ")

    net = net.copy()
    net.seed = config.seed
    rng = np.random.default_rng(config.seed)
    n = len(X)
    n_batches = math.ceil(n / config.batch_size)
    kl_weight = 1.0 / n_batches if config.kl_weight is None else config.kl_weight

    params, mask = [], []
    for layer in net.layers:
        params.extend(layer.params())
        mask.extend([True, False, True, False])
    opt = Adam(params, config.learning_rate, decay_mask=mask, weight_decay=config.weight_decay)

    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        tot = task_tot = kl_tot = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            weights, noise = sample_weights(net, rng)
            try:
                (loss, t_term, kl_term), grads = elbo_and_grad(
                    net, X[idx], y[idx], weights, noise, kl_weight, config.task
                )
            except NonFiniteLossError as exc:
                raise NonFiniteLossError(f"epoch {epoch}: {exc}", epoch=epoch) from exc
            opt.step([g for layer_grads in grads for g in layer_grads])
            tot += loss
            task_tot += t_term
            kl_tot += kl_weight * kl_term
        for p in params:
            if not np.all(np.isfinite(p)):
                raise NonFiniteLossError(f"epoch {epoch}: parameters diverged", epoch=epoch)
        trace.append({"epoch": epoch, "loss": tot, "task": task_tot, "kl": kl_tot})
        logger.debug("epoch %d loss %.6g", epoch, tot)
    return net, trace


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net: VariationalNet, path) -> Path:
    """Write an ``.npz`` archive holding every tensor plus a JSON header."""
    path = Path(path)
    header = {
        "format": "arht-ood-variational-net",
        "version": 1,
        "sizes": net.sizes,
        "activation": net.activation,
        "prior_std": net.prior_std,
        "seed": net.seed,
        "meta": net.meta,
    }
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    for i, layer in enumerate(net.layers):
        arrays[f"mu_w_{i}"] = layer.mu_w
        arrays[f"rho_w_{i}"] = layer.rho_w
        arrays[f"mu_b_{i}"] = layer.mu_b
        arrays[f"rho_b_{i}"] = layer.rho_b
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> VariationalNet:
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != "arht-ood-variational-net":
            raise ValueError(f"{path} is not a variational-net checkpoint")
        layers = [
            VariationalLayer(
                mu_w=data[f"mu_w_{i}"].copy(),
                rho_w=data[f"rho_w_{i}"].copy(),
                mu_b=data[f"mu_b_{i}"].copy(),
                rho_b=data[f"rho_b_{i}"].copy(),
            )
            for i in range(len(header["sizes"]) - 1)
        ]
    return VariationalNet(
        layers=layers,
        activation=header["activation"],
        prior_std=header["prior_std"],
        seed=header["seed"],
        meta=header.get("meta", {}),
    )
