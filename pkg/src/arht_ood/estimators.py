"""scikit-learn compatible wrappers.

``BayesianMLPEncoder`` trains the variational encoder; ``ARHTDetector``
fits the in-distribution profile on top of it and scores / labels new
inputs.  Both follow the usual ``get_params`` / ``fit`` conventions, so
they clone and grid-search like any other estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import bnn, detector


class BayesianMLPEncoder(TransformerMixin, BaseEstimator):
    """Mean-field variational MLP trained by maximising the ELBO.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the hidden layers; the last one is the embedding size.
    task : {"regression-norm", "regression", "classification"}
        Likelihood of the output head.  Both regression tags use squared
        error on a scalar target.
    kl_weight : float or None
        Multiplier on KL(q || prior) per minibatch; ``None`` scales it by
        ``1 / n_batches`` so each epoch charges the full KL once.
    random_state : int
        Seeds both initialisation and training.
    """

    def __init__(
        self,
        hidden_layer_sizes=(64,),
        activation="relu",
        task="regression-norm",
        epochs=100,
        batch_size=32,
        learning_rate=5e-5,
        weight_decay=1e-5,
        kl_weight=None,
        prior_std=1.0,
        init_mu_std=0.1,
        init_rho=-3.0,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.task = task
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.kl_weight = kl_weight
        self.prior_std = prior_std
        self.init_mu_std = init_mu_std
        self.init_rho = init_rho
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=self.task != "classification")
        if self.task == "classification":
            self.classes_, y = np.unique(y, return_inverse=True)
            n_out = len(self.classes_)
        else:
            n_out = 1
        sizes = [X.shape[1], *self.hidden_layer_sizes, n_out]
        net = bnn.VariationalNet.initialize(
            sizes,
            np.random.default_rng(self.random_state),
            activation=self.activation,
            prior_std=self.prior_std,
            init_mu_std=self.init_mu_std,
            init_rho=self.init_rho,
            seed=self.random_state,
        )
        config = bnn.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            kl_weight=self.kl_weight,
            seed=self.random_state,
            task=self.task,
        )
        self.net_, self.loss_curve_ = bnn.train(net, X, y, config)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_net(cls, net: bnn.VariationalNet, **params):
        """Wrap an already trained (e.g. loaded) network."""
        enc = cls(hidden_layer_sizes=tuple(net.sizes[1:-1]), activation=net.activation,
                  prior_std=net.prior_std, **params)
        enc.net_ = net
        enc.loss_curve_ = []
        enc.n_features_in_ = net.input_dim
        return enc

    def transform(self, X):
        """Embeddings under the posterior-mean weights."""
        check_is_fitted(self, "net_")
        X = check_array(X)
        return bnn.forward(self.net_, X, self.net_.mean_weights(), n_layers=self.net_.embed_layers)

    def sample_embeddings(self, x, k, random_state=None):
        """``k`` posterior embeddings of a single input, shape ``(k, p)``."""
        check_is_fitted(self, "net_")
        return bnn.embed(self.net_, x, k, np.random.default_rng(random_state))

    def predict(self, X, n_samples=1, random_state=None):
        check_is_fitted(self, "net_")
        X = check_array(X)
        if n_samples <= 1:
            out = bnn.forward(self.net_, X, self.net_.mean_weights())
        else:
            rng = np.random.default_rng(random_state)
            out = np.mean(
                [bnn.forward(self.net_, X, bnn.sample_weights(self.net_, rng)[0]) for _ in range(n_samples)],
                axis=0,
            )
        if self.task == "classification":
            return self.classes_[out.argmax(axis=1)]
        return out.reshape(-1)


def _as_net(encoder):
    if isinstance(encoder, bnn.VariationalNet):
        return encoder
    check_is_fitted(encoder, "net_")
    return encoder.net_


class ARHTDetector(OutlierMixin, BaseEstimator):
    """Two-sample-test OOD detector over posterior embeddings.

    ``fit`` summarises ``s`` posterior embeddings of every training input.
    ``uncertainty`` returns the adaptive regularised Hotelling statistic
    of each new input (larger means more likely OOD); ``predict`` applies
    the harmonic-corrected BH rule at level ``alpha`` across the batch and
    returns ``-1`` for rejected (OOD) inputs and ``1`` otherwise.

    ``score_samples`` follows the scikit-learn outlier convention and is
    the negated statistic.
    """

    def __init__(self, encoder=None, s=5, n2=300, lambda0=0.01, alpha=0.05, random_state=0):
        self.encoder = encoder
        self.s = s
        self.n2 = n2
        self.lambda0 = lambda0
        self.alpha = alpha
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.encoder is None:
            raise ValueError("ARHTDetector needs a fitted encoder")
        X = check_array(X)
        net = _as_net(self.encoder)
        self.profile_ = detector.build_profile(net, X, self.s, detector.profile_rng(self.random_state))
        self.n_features_in_ = X.shape[1]
        return self

    def detect(self, X, labels=None) -> detector.DetectionReport:
        check_is_fitted(self, "profile_")
        X = check_array(X)
        return detector.detect(
            self.profile_,
            _as_net(self.encoder),
            X,
            n2=self.n2,
            lambda0=self.lambda0,
            alpha=self.alpha,
            seed=self.random_state,
            labels=labels,
        )

    def uncertainty(self, X):
        report = self.detect(X)
        if report.failures:
            raise ValueError(f"{len(report.failures)} points could not be scored: {report.failures[0]}")
        return report.column("arht")

    def score_samples(self, X):
        return -self.uncertainty(X)

    def predict(self, X):
        report = self.detect(X)
        if report.failures:
            raise ValueError(f"{len(report.failures)} points could not be scored: {report.failures[0]}")
        return np.where([r.rejected for r in report.records], -1, 1)
