"""Density estimators and the dependence statistics built on them.

Two estimators share one small surface (``fit`` / ``score_samples`` /
``sample``): a Gaussian-kernel KDE with per-dimension bandwidths and a
diagonal-covariance Gaussian mixture fitted by EM.  On top of them sit a
Monte Carlo total-correlation estimator, the closed-form Gaussian total
correlation used to validate it, and squared MMD with an RBF kernel.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import NumericalError, ValidationError, check_matrix, check_positive, check_vector
from .embedding import as_random_source, pca_fit, pca_project

__all__ = [
    "KernelDensity",
    "GaussianMixture",
    "IndependenceEstimate",
    "MmdEstimate",
    "kde_fit",
    "kde_log_density",
    "gmm_fit",
    "gmm_log_density",
    "estimate_independence",
    "gaussian_total_correlation",
    "mmd_squared",
]

BANDWIDTH_FLOOR = 1e-6
VARIANCE_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)
_CHUNK = 4096


def _log_gauss_sum(d2):
    # log sum_j exp(-d2_ij / 2), shifted by the row minimum; d2 is overwritten
    m = d2.min(axis=1)
    d2 -= m[:, None]
    d2 *= -0.5
    np.exp(d2, out=d2)
    return np.log(d2.sum(axis=1)) - 0.5 * m


def _bandwidth(X, rule):
    n, d = X.shape
    sigma = X.std(axis=0, ddof=1)
    degenerate = bool(np.any(sigma <= 0))
    sigma = np.where(sigma > 0, sigma, BANDWIDTH_FLOOR)
    if rule == "scott":
        h = sigma * n ** (-1.0 / (d + 4))
    elif rule == "silverman":
        h = sigma * (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4))
    else:
        return np.full(d, check_positive(rule, "fixed bandwidth")), False
    return np.maximum(h, BANDWIDTH_FLOOR), degenerate


class KernelDensity(BaseEstimator):
    """Product-Gaussian kernel density estimate.

    Parameters
    ----------
    bandwidth : {"scott", "silverman"} or float
        Rule for the per-dimension bandwidths, or one fixed bandwidth for
        every dimension.  Constant columns get the 1e-6 floor and set
        ``degenerate_``.
    """

    def __init__(self, bandwidth="scott"):
        self.bandwidth = bandwidth

    def fit(self, X, y=None):
        X = check_matrix(X, min_samples=2)
        self.bandwidth_, self.degenerate_ = _bandwidth(X, self.bandwidth)
        if self.degenerate_:
            warnings.warn("constant column in KDE input; bandwidth floored at 1e-6", RuntimeWarning)
        self.samples_ = X
        self._scaled = X / self.bandwidth_
        self._sq = np.sum(self._scaled**2, axis=1)
        self._log_norm = (
            -np.log(X.shape[0]) - np.sum(np.log(self.bandwidth_)) - 0.5 * X.shape[1] * _LOG_2PI
        )
        return self

    @property
    def n_features_(self):
        return self.samples_.shape[1]

    def score_samples(self, X):
        """Log density at each row of ``X``."""
        check_is_fitted(self, "samples_")
        X = check_matrix(X, n_features=self.n_features_)
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], _CHUNK):
            u = X[start:start + _CHUNK] / self.bandwidth_
            d2 = np.sum(u**2, axis=1)[:, None] + self._sq[None, :] - 2.0 * (u @ self._scaled.T)
            np.maximum(d2, 0.0, out=d2)
            out[start:start + _CHUNK] = _log_gauss_sum(d2) + self._log_norm
        return out

    def sample(self, n_samples, rng=None):
        check_is_fitted(self, "samples_")
        rng = as_random_source(rng)
        idx = rng.integers(0, self.samples_.shape[0], size=n_samples)
        noise = rng.normal((n_samples, self.n_features_))
        return self.samples_[idx] + noise * self.bandwidth_


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(0, n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(0, n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.uniform() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


class GaussianMixture(BaseEstimator):
    """Diagonal-covariance Gaussian mixture fitted by EM.

    Initialisation is k-means++ seeding followed by one hard assignment.
    EM stops when the mean log-likelihood gains less than ``tol`` or after
    ``max_iter`` iterations; ``log_likelihood_trace_`` records the mean
    log-likelihood after every M-step, which EM keeps non-decreasing.
    """

    def __init__(self, n_components=4, max_iter=200, tol=1e-6, var_floor=VARIANCE_FLOOR, random_state=0):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.var_floor = var_floor
        self.random_state = random_state

    def _component_logpdf(self, X):
        var = self.variances_
        quad = ((X[:, None, :] - self.means_[None, :, :]) ** 2 / var[None, :, :]).sum(axis=2)
        return -0.5 * (quad + np.sum(np.log(var), axis=1)[None, :] + X.shape[1] * _LOG_2PI)

    def _weighted_logpdf(self, X):
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights_)
        lp = self._component_logpdf(X) + log_w[None, :]
        lp[:, self.weights_ == 0] = -np.inf
        return lp

    def _m_step(self, X, resp):
        nk = resp.sum(axis=0)
        live = nk > 10 * np.finfo(float).tiny
        weights = nk / nk.sum()
        means = self.means_.copy() if hasattr(self, "means_") else np.zeros((resp.shape[1], X.shape[1]))
        variances = (
            self.variances_.copy() if hasattr(self, "variances_") else np.ones((resp.shape[1], X.shape[1]))
        )
        means[live] = (resp[:, live].T @ X) / nk[live, None]
        for j in np.flatnonzero(live):
            diff = X - means[j]
            variances[j] = (resp[:, j] @ diff**2) / nk[j]
        self.weights_ = np.where(live, weights, 0.0)
        self.weights_ /= self.weights_.sum()
        self.means_ = means
        self.variances_ = np.maximum(variances, self.var_floor)

    def fit(self, X, y=None, rng=None):
        X = check_matrix(X)
        k = int(self.n_components)
        if k < 1:
            raise ValidationError("n_components must be >= 1")
        if X.shape[0] < k:
            raise ValidationError(f"GMM needs at least {k} points, got {X.shape[0]}")
        rng = as_random_source(self.random_state if rng is None else rng)
        for attr in ("means_", "variances_", "weights_"):
            if hasattr(self, attr):
                delattr(self, attr)
        centers = _kmeans_pp(X, k, rng)
        nearest = np.argmin(((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2), axis=1)
        resp = np.zeros((X.shape[0], k))
        resp[np.arange(X.shape[0]), nearest] = 1.0
        self.means_ = centers.astype(float)
        self.variances_ = np.ones((k, X.shape[1]))
        self._m_step(X, resp)

        trace = []
        self.converged_ = False
        for it in range(int(self.max_iter)):
            lp = self._weighted_logpdf(X)
            norm = logsumexp(lp, axis=1)
            trace.append(float(norm.mean()))
            if len(trace) > 1 and trace[-1] - trace[-2] < self.tol:
                self.converged_ = True
                break
            with np.errstate(invalid="ignore"):
                resp = np.exp(lp - norm[:, None])
            resp = np.nan_to_num(resp)
            self._m_step(X, resp)
        else:
            trace.append(float(logsumexp(self._weighted_logpdf(X), axis=1).mean()))
        self.n_iter_ = len(trace)
        self.log_likelihood_trace_ = trace
        return self

    def score_samples(self, X):
        check_is_fitted(self, "means_")
        X = check_matrix(X, n_features=self.means_.shape[1])
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], _CHUNK):
            out[start:start + _CHUNK] = logsumexp(self._weighted_logpdf(X[start:start + _CHUNK]), axis=1)
        return out

    def sample(self, n_samples, rng=None):
        check_is_fitted(self, "means_")
        rng = as_random_source(rng)
        comp = rng.choice(self.weights_.shape[0], size=n_samples, p=self.weights_)
        noise = rng.normal((n_samples, self.means_.shape[1]))
        return self.means_[comp] + noise * np.sqrt(self.variances_[comp])


def kde_fit(points, bandwidth_rule="scott"):
    return KernelDensity(bandwidth=bandwidth_rule).fit(points)


def kde_log_density(model, x):
    x = check_vector(np.atleast_1d(x), dim=model.n_features_)
    return float(model.score_samples(x[None, :])[0])


def gmm_fit(points, k=4, rng=None, max_iter=200, tol=1e-6):
    return GaussianMixture(n_components=k, max_iter=max_iter, tol=tol).fit(points, rng=rng)


def gmm_log_density(model, x):
    x = check_vector(np.atleast_1d(x), dim=model.means_.shape[1])
    return float(model.score_samples(x[None, :])[0])


class _Whitened:
    """A density fitted in decorrelated coordinates z = (x - mean) @ W.

    Densities transform with the Jacobian, so the log density in the
    original coordinates is the inner log density plus log|det W|.
    """

    def __init__(self, inner, X):
        self.mean = X.mean(axis=0)
        cov = np.atleast_2d(np.cov(X, rowvar=False))
        jitter = 0.0
        scale = max(np.trace(cov) / cov.shape[0], 1e-300)
        for _ in range(20):
            try:
                chol = np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10, 1e-12 * scale)
        else:
            raise ValidationError("covariance of projected tuples is not positive definite")
        self.W = np.linalg.inv(chol).T
        self.W_inv = chol.T
        self.log_det = -float(np.sum(np.log(np.diag(chol))))
        self.inner = inner.fit((X - self.mean) @ self.W)

    def score_samples(self, X):
        return self.inner.score_samples((X - self.mean) @ self.W) + self.log_det

    def sample(self, n, rng):
        return self.inner.sample(n, rng) @ self.W_inv + self.mean


class _MixtureMarginal:
    """Exact marginal of a whitened diagonal mixture over coordinates ``cols``.

    In original coordinates component ``c`` is ``N(m_c W_inv + mean,
    W_inv^T diag(v_c) W_inv)``; a coordinate block of a Gaussian mixture is
    again a Gaussian mixture with the same weights.
    """

    def __init__(self, whitened, cols):
        g = whitened.inner
        A = whitened.W_inv[:, cols]
        self.means = (g.means_ @ whitened.W_inv + whitened.mean)[:, cols]
        self.log_w = np.log(np.maximum(g.weights_, 1e-300))
        self.chols, self.log_dets = [], []
        for var in g.variances_:
            chol = np.linalg.cholesky(A.T @ (var[:, None] * A))
            self.chols.append(chol)
            self.log_dets.append(2.0 * np.sum(np.log(np.diag(chol))))

    def score_samples(self, X):
        d = X.shape[1]
        parts = []
        for mean, chol, log_det, log_w in zip(self.means, self.chols, self.log_dets, self.log_w):
            sol = np.linalg.solve(chol, (X - mean).T)
            parts.append(log_w - 0.5 * (np.sum(sol * sol, axis=0) + log_det + d * _LOG_2PI))
        return logsumexp(np.stack(parts, axis=1), axis=1)


class _KernelMarginal:
    """Exact marginal of a whitened product-kernel KDE over coordinates ``cols``.

    The joint kernel has covariance ``W_inv^T diag(h^2) W_inv`` in original
    coordinates; its ``cols`` block is shared by every sample, so the
    marginal is a KDE on the slot coordinates with that block as kernel.
    """

    def __init__(self, whitened, cols):
        kde = whitened.inner
        A = whitened.W_inv[:, cols]
        chol = np.linalg.cholesky(A.T @ (kde.bandwidth_[:, None] ** 2 * A))
        self.unmix = np.linalg.inv(chol).T
        points = (kde.samples_ @ whitened.W_inv + whitened.mean)[:, cols]
        self.inner = KernelDensity(bandwidth=1.0).fit(points @ self.unmix)
        self.log_det = -float(np.sum(np.log(np.diag(chol))))

    def score_samples(self, X):
        return self.inner.score_samples(X @ self.unmix) + self.log_det


@dataclass(frozen=True)
class IndependenceEstimate:
    value: float
    estimator: str
    tuple_size: int
    n_eval: int
    projection_dims: int
    raw_value: float
    clamped: bool


def _make_estimator(estimator, gmm_components, bandwidth, rng):
    if estimator == "kde":
        return KernelDensity(bandwidth=bandwidth)
    if estimator == "gmm":
        return GaussianMixture(n_components=gmm_components, random_state=int(rng.integers(0, 2**63)))
    raise ValidationError(f"unknown density estimator {estimator!r}; expected 'kde' or 'gmm'")


def estimate_independence(
    tuples,
    estimator="kde",
    projection_dims=1,
    n_eval=20000,
    rng=None,
    gmm_components=4,
    bandwidth="scott",
):
    """Total correlation KL(p(s_1..s_K) || prod_k q(s_k)) of tuple slots, in nats.

    ``tuples`` has shape ``(n, K, dim)`` (or ``(n, K)`` for scalar slots).
    Slots are projected onto a PCA basis shared across slots, the joint is
    fitted on the concatenated ``K * projection_dims`` coordinates after
    whitening.  Marginals are the exact marginals of the fitted joint, so
    the estimate is the total correlation of one fitted distribution
    rather than a mismatch between separate fits.  The KL divergence is
    the Monte Carlo mean of ``log p - sum_k log q_k`` over ``n_eval``
    draws from the fitted joint.  Negative plug-in values are clamped to 0
    and flagged.
    """
    T = np.asarray(tuples, dtype=np.float64)
    if T.ndim == 2:
        T = T[:, :, None]
    if T.ndim != 3:
        raise ValidationError(f"tuples must have shape (n, K, dim), got {T.shape}")
    n, K, dim = T.shape
    if n < 30:
        raise ValidationError(f"independence estimation needs at least 30 tuples, got {n}")
    if K < 2:
        raise ValidationError("tuple size K must be at least 2")
    if not np.all(np.isfinite(T)):
        raise ValidationError("tuples contain NaN or Inf")
    p = int(projection_dims)
    if p < 1 or p > dim:
        raise ValidationError(f"projection_dims must be in [1, {dim}], got {projection_dims}")
    rng = as_random_source(rng)

    try:
        basis = pca_fit(T.reshape(n * K, dim), p)
    except ValidationError as exc:
        raise ValidationError(f"projection failure: {exc}") from None
    coords = pca_project(basis, T)  # (n, K, p)
    joint_x = coords.reshape(n, K * p)

    joint = _Whitened(_make_estimator(estimator, gmm_components, bandwidth, rng), joint_x)
    # separately fitted slot densities disagree with the joint's own
    # marginals and the plug-in KL picks the mismatch up as dependence
    marginal = _MixtureMarginal if estimator == "gmm" else _KernelMarginal
    marginals = [marginal(joint, np.arange(k * p, (k + 1) * p)) for k in range(K)]
    draws = joint.sample(int(n_eval), rng)
    log_ratio = joint.score_samples(draws)
    for k, marg in enumerate(marginals):
        log_ratio = log_ratio - marg.score_samples(draws[:, k * p:(k + 1) * p])
    raw = float(np.mean(log_ratio))
    if not np.isfinite(raw):
        raise NumericalError("independence estimate is not finite")
    return IndependenceEstimate(
        value=max(raw, 0.0),
        estimator=estimator,
        tuple_size=K,
        n_eval=int(n_eval),
        projection_dims=p,
        raw_value=raw,
        clamped=raw < 0,
    )


def gaussian_total_correlation(correlation_matrix):
    """-0.5 * ln det R for a correlation matrix R."""
    R = np.asarray(correlation_matrix, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValidationError("correlation matrix must be square")
    if not np.allclose(R, R.T, atol=1e-12) or not np.allclose(np.diag(R), 1.0, atol=1e-9):
        raise ValidationError("correlation matrix must be symmetric with unit diagonal")
    try:
        chol = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise ValidationError("correlation matrix is not positive definite") from None
    return float(-np.sum(np.log(np.diag(chol))))


@dataclass(frozen=True)
class MmdEstimate:
    value_squared: float
    kernel_bandwidth: float
    estimator: str


def median_heuristic(X, Y):
    pooled = np.vstack([X, Y])
    if pooled.shape[0] < 2:
        return BANDWIDTH_FLOOR
    return max(float(np.median(pdist(pooled))), BANDWIDTH_FLOOR)


def mmd_squared(x, y, bandwidth="median", estimator="biased"):
    """Squared MMD between samples under k(a, b) = exp(-|a - b|^2 / (2 sigma^2)).

    ``bandwidth`` is ``"median"`` (median pooled pairwise distance) or a
    fixed sigma; ``estimator`` selects the V-statistic ("biased") or the
    U-statistic ("unbiased").
    """
    X = check_matrix(x, name="x")
    Y = check_matrix(y, n_features=X.shape[1], name="y")
    sigma = median_heuristic(X, Y) if bandwidth == "median" else check_positive(bandwidth, "bandwidth")
    gamma = 1.0 / (2.0 * sigma**2)
    kxx = np.exp(-gamma * cdist(X, X, "sqeuclidean"))
    kyy = np.exp(-gamma * cdist(Y, Y, "sqeuclidean"))
    kxy = np.exp(-gamma * cdist(X, Y, "sqeuclidean"))
    n, m = X.shape[0], Y.shape[0]
    if estimator == "biased":
        value = kxx.mean() + kyy.mean() - 2.0 * kxy.mean()
    elif estimator == "unbiased":
        if n < 2 or m < 2:
            raise ValidationError("the unbiased MMD estimator needs at least 2 points per sample")
        value = (
            (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
            + (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
            - 2.0 * kxy.mean()
        )
    else:
        raise ValidationError(f"unknown MMD estimator {estimator!r}")
    return MmdEstimate(value_squared=float(value), kernel_bandwidth=sigma, estimator=estimator)
