"""Adam and the embedding-learning (stage-1) training loop."""

import csv
import io
from dataclasses import asdict, dataclass, fields

import numpy as np

from .._validation import ValidationError
from ..embedding import EmbeddingSet, RandomSource
from . import finite_diff as _gc
from .losses import CenterBank
from .model import LATENT_DIM, PARAM_NAMES, decode, encode, init_adapter
from .objective import Stage1Head, forward, value_and_grad

STAGE1_COLUMNS = ("epoch", "l_rec", "l_con", "l_cen", "l_mmd", "total")


def _check_common(cfg):
    if not cfg.learning_rate >= 0 or not np.isfinite(cfg.learning_rate):
        raise ValidationError("learning_rate must be a finite non-negative number")
    if cfg.batch_size < 2:
        raise ValidationError("batch_size must be at least 2")
    if cfg.epochs < 0:
        raise ValidationError("epochs must be non-negative")
    if not (0 <= cfg.beta1 < 1 and 0 <= cfg.beta2 < 1) or not cfg.adam_eps > 0:
        raise ValidationError("adam betas must lie in [0, 1) and epsilon must be positive")
    if not 0 <= cfg.seed < 2**64:
        raise ValidationError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class Stage1Config:
    lambda_rec: float = 1.0
    lambda_con: float = 0.5
    lambda_cen: float = 0.01
    lambda_mmd: float = 1.0
    margin: float = 0.2
    alpha: float = 0.5
    batch_size: int = 32
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    latent_dim: int = LATENT_DIM
    sample: bool = True
    seed: int = 0

    def __post_init__(self):
        # learning_rate = 0 is allowed: it is the frozen-parameter control run
        _check_common(self)
        for name in ("lambda_rec", "lambda_con", "lambda_cen", "lambda_mmd"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be non-negative")
        if not 0 <= self.alpha <= 1:
            raise ValidationError("alpha must be in [0, 1]")
        if self.latent_dim < 1:
            raise ValidationError("latent_dim must be positive")

    def head(self, targets, labels, centers, prior):
        return Stage1Head(targets, tuple(labels), centers, prior, self.lambda_rec, self.lambda_con,
                          self.lambda_cen, self.lambda_mmd, self.margin)

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(mapping) - set(known)
        if unknown:
            raise ValidationError(f"unknown stage-1 keys: {sorted(unknown)}")
        return cls(**mapping)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, model, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in PARAM_NAMES:
            g = grads[name]
            m = self.m.get(name, 0.0) * self.beta1 + (1.0 - self.beta1) * g
            v = self.v.get(name, 0.0) * self.beta2 + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            if self.lr:
                p = getattr(model, name)
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return model


def check_pairing(faces, voices):
    if not isinstance(faces, EmbeddingSet) or not isinstance(voices, EmbeddingSet):
        raise ValidationError("training expects face and voice EmbeddingSets")
    if len(faces) != len(voices) or faces.labels != voices.labels:
        raise ValidationError("face and voice records are misaligned (count or labels differ)")
    if len(faces) < 2:
        raise ValidationError("training needs at least 2 paired records")


def minibatches(n, batch_size, rng):
    """Shuffled index batches; a trailing singleton joins the previous batch."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batches[-1].size == 1:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def warm_centers(model, faces, alpha):
    """Initial centers: the deterministic (z = mu) outputs in record order."""
    bank = CenterBank(alpha, model.out_dim)
    mu, _ = encode(model, faces.vectors)
    for s, label in zip(decode(model, mu), faces.labels):
        bank.update(s, label)
    return bank


def train_stage1(faces, voices, config=None, model=None):
    """Train the adapter on paired (face, target voice) records.

    Returns ``(model, log)`` where ``log`` holds one dict per epoch with
    the batch-averaged loss terms.  ``model`` warm-starts training when
    given; it is copied, never modified.
    """
    config = config or Stage1Config()
    check_pairing(faces, voices)
    init_rng, shuffle_rng, noise_rng = RandomSource(config.seed).spawn(3)
    if model is None:
        norm = float(np.mean(np.linalg.norm(faces.vectors, axis=1))) or 1.0
        model = init_adapter(init_rng, config.latent_dim, faces.dim, out_dim=voices.dim, input_norm=norm)
    else:
        model = model.copy()
    if model.in_dim != faces.dim or model.out_dim != voices.dim:
        raise ValidationError("model dimensions do not match the dataset")
    V, T, labels = faces.vectors, voices.vectors, faces.labels
    bank = warm_centers(model, faces, config.alpha)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    L = model.latent_dim
    log = []
    for epoch in range(1, config.epochs + 1):
        sums = dict.fromkeys(STAGE1_COLUMNS[1:], 0.0)
        batches = minibatches(len(faces), config.batch_size, shuffle_rng)
        for idx in batches:
            B = idx.size
            eta = noise_rng.normal((B, L)) if config.sample else np.zeros((B, L))
            prior = noise_rng.normal((B, L))
            lab = tuple(labels[i] for i in idx)
            head = config.head(T[idx], lab, bank.matrix(lab), prior)
            bundle, fw = value_and_grad(model, V[idx], eta, head)
            opt.step(model, bundle.grads)
            for s, label in zip(fw.s, lab):
                bank.update(s, label)
            for k, v in bundle.terms.items():
                sums[k] += v
            sums["total"] += bundle.loss
        log.append({"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()}})
    return model, log


def log_to_csv(log, columns=STAGE1_COLUMNS):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in log:
        writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in columns[1:]])
    return buf.getvalue()


def gradcheck_batch(model, faces, voices, config, rng, batch_size=8):
    """First ``batch_size`` records, fixed noise draws and warm-pass centers."""
    n = min(batch_size, len(faces))
    V, T, labels = faces.vectors[:n], voices.vectors[:n], faces.labels[:n]
    eta_rng, prior_rng = rng.spawn(2)
    L = model.latent_dim
    eta = eta_rng.normal((n, L)) if config.sample else np.zeros((n, L))
    prior = prior_rng.normal((n, L))
    bank = CenterBank(config.alpha, model.out_dim)
    for s, label in zip(forward(model, V, eta).s, labels):
        bank.update(s, label)
    return V, eta, config.head(T, labels, bank.matrix(labels), prior)


def gradcheck(model, batch, config=None, rng=None, mode="full", analytic=None, skip=()):
    """Check stage-1 gradients on ``batch = (faces, voices)`` of at most 16 records."""
    config = config or Stage1Config()
    faces, voices = batch
    check_pairing(faces, voices)
    if len(faces) > 16:
        raise ValidationError("gradcheck batches are limited to 16 records")
    rng = rng if isinstance(rng, RandomSource) else RandomSource(0 if rng is None else rng)
    V, eta, head = gradcheck_batch(model, faces, voices, config, rng, len(faces))
    return _gc.check_gradients(model, V, eta, head, analytic=analytic, mode=mode, skip=skip)


def config_dict(config):
    return asdict(config)
