"""Loss graph of the adapter with hand-written backpropagation.

A loss is a *head* evaluated on the decoded embeddings ``S`` and the
latent draws ``Z``.  The network part (encoder, reparameterised sampling,
decoder) is shared; heads supply ``value(S, Z)`` and ``grad(S, Z)``.

``value`` broadcasts over leading axes.  The finite-difference oracle
relies on this: it perturbs one pre-activation per copy and re-runs only
the downstream part of the graph for thousands of copies at once.
"""

from dataclasses import dataclass, field

import numpy as np

from .._validation import ValidationError
from ..density import BANDWIDTH_FLOOR
from .model import LOGVAR_CLAMP, PARAM_NAMES

_NORM_FLOOR = 1e-12


def _safe_norm(X):
    return np.maximum(np.linalg.norm(X, axis=-1), _NORM_FLOOR)


def _cos_rows(S, T):
    return np.sum(S * T, axis=-1) / (_safe_norm(S) * _safe_norm(T))


def _cos_rows_grad(S, T, upstream):
    """d/dS of ``sum_b upstream_b * cos(S_b, T_b)``."""
    ns = _safe_norm(S)[:, None]
    nt = _safe_norm(T)[:, None]
    cos = _cos_rows(S, T)[:, None]
    return upstream[:, None] * (T / (ns * nt) - cos * S / ns**2)


def _affine(X, W, b):
    # one 2-D BLAS call instead of a stacked matmul over the leading axes
    return (X.reshape(-1, X.shape[-1]) @ W.T).reshape(X.shape[:-1] + (W.shape[0],)) + b


def _sqdist(A, B):
    d2 = (
        np.sum(A * A, axis=-1)[..., :, None]
        + np.sum(B * B, axis=-1)[..., None, :]
        - 2.0 * (A @ np.swapaxes(B, -1, -2))
    )
    return np.maximum(d2, 0.0)


# ---------------------------------------------------------------------------
# loss terms on (..., B, D) arrays


def rec_loss(S, T):
    return np.mean(1.0 - _cos_rows(S, T), axis=-1)


def con_pairs(labels):
    labels = np.asarray(labels, dtype=object)
    iu, ju = np.triu_indices(labels.shape[0], k=1)
    return iu, ju, labels[iu] == labels[ju]


def con_loss(S, labels, margin):
    if S.shape[-2] < 2:
        raise ValidationError("the contrastive term needs a batch of at least 2")
    iu, ju, same = con_pairs(labels)
    U = S / _safe_norm(S)[..., None]
    C = (U @ np.swapaxes(U, -1, -2))[..., iu, ju]
    terms = np.where(same, 1.0 - C, np.maximum(0.0, C - margin))
    return np.mean(terms, axis=-1)


def cen_loss(S, centers):
    return 0.5 * np.sum((S - centers) ** 2, axis=(-2, -1))


def _mmd_parts(Z, Y):
    n, m = Z.shape[-2], Y.shape[-2]
    Yb = np.broadcast_to(Y, Z.shape[:-2] + Y.shape)
    pooled = np.concatenate([Z, Yb], axis=-2)
    d2p = _sqdist(pooled, pooled)
    iu, ju = np.triu_indices(n + m, k=1)
    dist = np.sqrt(d2p[..., iu, ju])
    P = dist.shape[-1]
    mid = np.partition(dist, [(P - 1) // 2, P // 2], axis=-1)
    median = 0.5 * (mid[..., (P - 1) // 2] + mid[..., P // 2])
    sigma = np.maximum(median, BANDWIDTH_FLOOR)
    return n, m, d2p, sigma


def mmd_loss(Z, Y):
    """Biased squared MMD with the median-heuristic bandwidth of the pooled sample."""
    n, m, d2p, sigma = _mmd_parts(Z, Y)
    g = 1.0 / (2.0 * sigma**2)[..., None, None]
    K = np.exp(-d2p * g)
    return (
        K[..., :n, :n].mean(axis=(-2, -1))
        + K[..., n:, n:].mean(axis=(-2, -1))
        - 2.0 * K[..., :n, n:].mean(axis=(-2, -1))
    )


def mmd_grad(Z, Y):
    """Gradient of :func:`mmd_loss` in ``Z`` including the bandwidth's dependence.

    The median of the pooled distances is, almost everywhere, one (or the
    mean of two) specific pairwise distances, so it is differentiated
    through those pairs.
    """
    n, m, d2p, sigma = _mmd_parts(Z, Y)
    s2 = sigma**2
    K = np.exp(-d2p / (2.0 * s2))
    Kzz, Kyy, Kzy = K[:n, :n], K[n:, n:], K[:n, n:]
    grad = -(2.0 / (n * n * s2)) * (Kzz.sum(axis=1)[:, None] * Z - Kzz @ Z)
    grad += (2.0 / (n * m * s2)) * (Kzy.sum(axis=1)[:, None] * Z - Kzy @ Y)
    if sigma > BANDWIDTH_FLOOR:
        dsigma = (
            (Kzz * d2p[:n, :n]).mean() + (Kyy * d2p[n:, n:]).mean() - 2.0 * (Kzy * d2p[:n, n:]).mean()
        ) / sigma**3
        pooled = np.concatenate([Z, Y], axis=0)
        iu, ju = np.triu_indices(n + m, k=1)
        dist = np.sqrt(d2p[iu, ju])
        order = np.argsort(dist, kind="stable")
        P = dist.size
        mids = [order[P // 2]] if P % 2 else [order[P // 2 - 1], order[P // 2]]
        weight = 1.0 / len(mids)
        for k in mids:
            a, b = iu[k], ju[k]
            if dist[k] == 0:
                continue
            unit = (pooled[a] - pooled[b]) / dist[k]
            if a < n:
                grad[a] += dsigma * weight * unit
            if b < n:
                grad[b] -= dsigma * weight * unit
    return grad


# ---------------------------------------------------------------------------
# heads


@dataclass
class Stage1Head:
    """Weighted sum of reconstruction, contrastive, center and MMD terms."""

    targets: np.ndarray
    labels: tuple
    centers: np.ndarray
    prior: np.ndarray
    lambda_rec: float = 1.0
    lambda_con: float = 0.5
    lambda_cen: float = 0.01
    lambda_mmd: float = 1.0
    margin: float = 0.2

    def terms(self, S, Z):
        out = {}
        out["l_rec"] = rec_loss(S, self.targets)
        out["l_con"] = con_loss(S, self.labels, self.margin) if S.shape[-2] >= 2 else np.zeros(S.shape[:-2])
        out["l_cen"] = cen_loss(S, self.centers)
        out["l_mmd"] = mmd_loss(Z, self.prior)
        return out

    def value(self, S, Z):
        t = self.terms(S, Z)
        return (
            self.lambda_rec * t["l_rec"] + self.lambda_con * t["l_con"]
            + self.lambda_cen * t["l_cen"] + self.lambda_mmd * t["l_mmd"]
        )

    def grad(self, S, Z):
        B = S.shape[0]
        dS = np.zeros_like(S)
        if self.lambda_rec:
            dS += _cos_rows_grad(S, self.targets, np.full(B, -self.lambda_rec / B))
        if self.lambda_con and B >= 2:
            iu, ju, same = con_pairs(self.labels)
            nS = _safe_norm(S)[:, None]
            U = S / nS
            C = np.sum(U[iu] * U[ju], axis=-1)
            w = np.where(same, -1.0, np.where(C > self.margin, 1.0, 0.0)) * (self.lambda_con / iu.size)
            G = np.zeros((B, B))
            G[iu, ju] = w
            G[ju, iu] = w
            dU = G @ U
            dS += (dU - np.sum(dU * U, axis=1, keepdims=True) * U) / nS
        if self.lambda_cen:
            dS += self.lambda_cen * (S - self.centers)
        dZ = self.lambda_mmd * mmd_grad(Z, self.prior) if self.lambda_mmd else np.zeros_like(Z)
        return dS, dZ


# ---------------------------------------------------------------------------
# network forward / backward


@dataclass
class Forward:
    v: np.ndarray
    a1: np.ndarray
    h: np.ndarray
    mu: np.ndarray
    lv_raw: np.ndarray
    lv: np.ndarray
    eta: np.ndarray
    z: np.ndarray
    d1: np.ndarray
    hd: np.ndarray
    s: np.ndarray


def forward(model, V, eta):
    """Run the network on a face batch with fixed standard-normal draws ``eta``."""
    V = np.asarray(V, dtype=np.float64)
    a1 = V @ model.enc_w1.T + model.enc_b1
    h = np.tanh(a1)
    mu = h @ model.enc_w_mu.T + model.enc_b_mu
    lv_raw = h @ model.enc_w_lv.T + model.enc_b_lv
    lv = np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    z = mu + np.exp(0.5 * lv) * eta
    d1 = z @ model.dec_w1.T + model.dec_b1
    hd = np.tanh(d1)
    s = hd @ model.dec_w2.T + model.dec_b2
    return Forward(V, a1, h, mu, lv_raw, lv, eta, z, d1, hd, s)


@dataclass
class GradientBundle:
    grads: dict
    loss: float
    terms: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.grads[name]

    def max_abs(self):
        return max(float(np.max(np.abs(g))) for g in self.grads.values())


def backward(model, fw, dS, dZ):
    g = {}
    g["dec_w2"] = dS.T @ fw.hd
    g["dec_b2"] = dS.sum(axis=0)
    dd1 = (dS @ model.dec_w2) * (1.0 - fw.hd**2)
    g["dec_w1"] = dd1.T @ fw.z
    g["dec_b1"] = dd1.sum(axis=0)
    dz = dd1 @ model.dec_w1 + dZ
    dmu = dz
    std = np.exp(0.5 * fw.lv)
    inside = (fw.lv_raw > -LOGVAR_CLAMP) & (fw.lv_raw < LOGVAR_CLAMP)
    dlv = dz * fw.eta * 0.5 * std * inside
    g["enc_w_mu"] = dmu.T @ fw.h
    g["enc_b_mu"] = dmu.sum(axis=0)
    g["enc_w_lv"] = dlv.T @ fw.h
    g["enc_b_lv"] = dlv.sum(axis=0)
    da1 = (dmu @ model.enc_w_mu + dlv @ model.enc_w_lv) * (1.0 - fw.h**2)
    g["enc_w1"] = da1.T @ fw.v
    g["enc_b1"] = da1.sum(axis=0)
    return {name: g[name] for name in PARAM_NAMES}


def value_and_grad(model, V, eta, head):
    fw = forward(model, V, eta)
    terms = {k: float(v) for k, v in head.terms(fw.s, fw.z).items()}
    loss = float(head.value(fw.s, fw.z))
    dS, dZ = head.grad(fw.s, fw.z)
    return GradientBundle(backward(model, fw, dS, dZ), loss, terms), fw


# ---------------------------------------------------------------------------
# finite differences over perturbed copies
#
# Perturbing W[i, j] by +-step moves only column i of that layer's
# pre-activation, by +-step * X[:, j].  Each copy's downstream values are
# propagated as a rank-1 update of the base forward pass, which is the
# same arithmetic as a full re-evaluation restricted to what changes.


def _decoder_from_d1(model, D1):
    return _affine(np.tanh(D1), model.dec_w2, model.dec_b2)


def _tail_z(model, fw, head, Z):
    return head.value(_decoder_from_d1(model, _affine(Z, model.dec_w1, model.dec_b1)), Z)


def _tail_z_column(model, fw, head, col, newz):
    # z changed in column ``col`` only
    dz = newz - fw.z[:, col].T
    D1 = fw.d1 + dz[:, :, None] * model.dec_w1[:, col].T[:, None, :]
    Z = np.broadcast_to(fw.z, (col.size,) + fw.z.shape).copy()
    Z[np.arange(col.size)[:, None], np.arange(fw.z.shape[0])[None, :], col[:, None]] = newz
    return head.value(_decoder_from_d1(model, D1), Z)


def _tail_a1(model, fw, head, col, new):
    dh = np.tanh(new) - fw.h[:, col].T
    mu = fw.mu + dh[:, :, None] * model.enc_w_mu[:, col].T[:, None, :]
    lv = fw.lv_raw + dh[:, :, None] * model.enc_w_lv[:, col].T[:, None, :]
    lv = np.clip(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return _tail_z(model, fw, head, mu + np.exp(0.5 * lv) * fw.eta)


def _tail_mu(model, fw, head, col, new):
    std = np.exp(0.5 * fw.lv[:, col].T)
    return _tail_z_column(model, fw, head, col, new + std * fw.eta[:, col].T)


def _tail_lv(model, fw, head, col, new):
    std = np.exp(0.5 * np.clip(new, -LOGVAR_CLAMP, LOGVAR_CLAMP))
    return _tail_z_column(model, fw, head, col, fw.mu[:, col].T + std * fw.eta[:, col].T)


def _tail_d1(model, fw, head, col, new):
    dhd = np.tanh(new) - fw.hd[:, col].T
    S = fw.s + dhd[:, :, None] * model.dec_w2[:, col].T[:, None, :]
    return head.value(S, fw.z)


def _tail_s(model, fw, head, col, new):
    S = np.broadcast_to(fw.s, (col.size,) + fw.s.shape).copy()
    S[np.arange(col.size)[:, None], np.arange(fw.s.shape[0])[None, :], col[:, None]] = new
    return head.value(S, fw.z)


def _block_stages(fw):
    """(weight, bias, layer input, base pre-activation, tail) per layer."""
    return [
        ("enc_w1", "enc_b1", fw.v, fw.a1, _tail_a1),
        ("enc_w_mu", "enc_b_mu", fw.h, fw.mu, _tail_mu),
        ("enc_w_lv", "enc_b_lv", fw.h, fw.lv_raw, _tail_lv),
        ("dec_w1", "dec_b1", fw.z, fw.d1, _tail_d1),
        ("dec_w2", "dec_b2", fw.hd, fw.s, _tail_s),
    ]


def _fd_coords(model, fw, head, X, base, tail, rows, cols, step):
    """Central differences for coordinates ``(rows[p], cols[p])`` of one layer.

    ``cols[p] < 0`` marks a bias coordinate.
    """
    shift = np.where(cols[:, None] >= 0, X[:, np.maximum(cols, 0)].T, 1.0) * step  # (P, B)
    column = base[:, rows].T
    plus = tail(model, fw, head, rows, column + shift)
    minus = tail(model, fw, head, rows, column - shift)
    return (plus - minus) / (2.0 * step)


def finite_difference_grads(model, V, eta, head, step=1e-5, chunk_elems=4_000_000):
    """Central-difference gradient of every parameter coordinate."""
    fw = forward(model, V, eta)
    out = {}
    width = max(fw.a1.shape[1], fw.s.shape[1], fw.d1.shape[1])
    chunk = max(1, chunk_elems // (fw.v.shape[0] * width))
    for w_name, b_name, X, base, tail in _block_stages(fw):
        n_out, n_in = getattr(model, w_name).shape
        for name, total in ((w_name, n_out * n_in), (b_name, n_out)):
            flat = np.empty(total)
            for start in range(0, total, chunk):
                k = np.arange(start, min(total, start + chunk))
                if name == w_name:
                    rows, cols = k // n_in, k % n_in
                else:
                    rows, cols = k, np.full(k.size, -1)
                flat[start:start + k.size] = _fd_coords(model, fw, head, X, base, tail, rows, cols, step)
            out[name] = flat.reshape(getattr(model, name).shape)
    return {name: out[name] for name in PARAM_NAMES}
