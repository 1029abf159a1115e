"""Estimator-style wrapper around stage-1 training."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import ValidationError, check_matrix
from ..embedding import EmbeddingSet, RandomSource, pairwise_cosine_similarity
from .model import decode, encode, sample_latent
from .training import Stage1Config, train_stage1


class VoiceAdapter(RegressorMixin, BaseEstimator):
    """Face-to-voice adapter: ``fit(faces, voices, labels)``, ``predict(faces)``.

    ``predict`` decodes the posterior mean; ``sample_voices`` draws from
    the posterior, so repeated draws for one face give varied voices.
    ``score`` is the mean cosine similarity to the targets.
    """

    def __init__(self, latent_dim=64, lambda_rec=1.0, lambda_con=0.5, lambda_cen=0.01, lambda_mmd=1.0,
                 margin=0.2, alpha=0.5, batch_size=32, learning_rate=5e-5, epochs=200, sample=True,
                 random_state=0):
        self.latent_dim = latent_dim
        self.lambda_rec = lambda_rec
        self.lambda_con = lambda_con
        self.lambda_cen = lambda_cen
        self.lambda_mmd = lambda_mmd
        self.margin = margin
        self.alpha = alpha
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.sample = sample
        self.random_state = random_state

    def _config(self):
        params = self.get_params()
        params["seed"] = params.pop("random_state")
        return Stage1Config(**params)

    def fit(self, X, Y, labels=None):
        X = check_matrix(X, min_samples=2, name="faces")
        Y = check_matrix(Y, min_samples=2, name="voices")
        if labels is None:
            raise ValidationError("VoiceAdapter.fit needs identity labels for the contrastive and center terms")
        if X.shape[0] != Y.shape[0]:
            raise ValidationError("faces and voices have different record counts")
        labels = tuple(labels)
        self.model_, self.log_ = train_stage1(EmbeddingSet(X, labels), EmbeddingSet(Y, labels), self._config())
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        mu, _ = encode(self.model_, check_matrix(X, n_features=self.n_features_in_, name="faces"))
        return decode(self.model_, mu)

    def sample_voices(self, X, n_draws=1, rng=None):
        """``(n_draws, n, out_dim)`` posterior draws; the mean is used when ``sample=False``."""
        check_is_fitted(self, "model_")
        X = check_matrix(X, n_features=self.n_features_in_, name="faces")
        rng = rng if isinstance(rng, RandomSource) else RandomSource(0 if rng is None else rng)
        mu, logvar = encode(self.model_, X)
        draws = [decode(self.model_, sample_latent(mu, logvar, rng) if self.sample else mu) for _ in range(n_draws)]
        return np.stack(draws)

    def score(self, X, Y, sample_weight=None):
        return float(np.average(pairwise_cosine_similarity(self.predict(X), np.asarray(Y)), weights=sample_weight))
