"""Generative-pretraining stage against frozen surrogate encoders.

The surrogate stack replaces the speech synthesizer and the two
downstream encoders with fixed random maps::

    audio = tanh(T s + b);  spk = P audio;  vec = Q audio

so the speaker-similarity and feature-matching losses, and their
gradients into the adapter, can be exercised without pretrained models.
"""

from dataclasses import dataclass, fields

import numpy as np

from ._validation import ValidationError
from .adapter.model import LATENT_DIM
from .adapter.objective import _affine, _cos_rows, _cos_rows_grad, value_and_grad
from .adapter.training import Adam, _check_common, check_pairing, minibatches
from .adapter import finite_diff as _gc
from .embedding import RandomSource

AUDIO_DIM = 256
SPK_DIM = 192
VEC_DIM = 128
STAGE2_COLUMNS = ("epoch", "l_tts", "l_vec", "total")


class SurrogateStack:
    """Frozen random maps regenerated bit-identically from ``seed``."""

    def __init__(self, seed=0, voice_dim=192, bias_scale=0.1):
        rng = RandomSource(seed)
        self.seed = seed
        self.bias_scale = float(bias_scale)
        t_rng, b_rng, p_rng, q_rng = rng.spawn(4)
        self.tts_map = t_rng.normal((AUDIO_DIM, voice_dim)) / np.sqrt(voice_dim)
        self.tts_bias = b_rng.normal(AUDIO_DIM) * self.bias_scale
        self.spk_map = p_rng.normal((SPK_DIM, AUDIO_DIM)) / np.sqrt(AUDIO_DIM)
        self.vec_map = q_rng.normal((VEC_DIM, AUDIO_DIM)) / np.sqrt(AUDIO_DIM)
        for arr in self.arrays():
            arr.setflags(write=False)

    @property
    def voice_dim(self):
        return self.tts_map.shape[1]

    def arrays(self):
        return (self.tts_map, self.tts_bias, self.spk_map, self.vec_map)

    def fingerprint(self):
        return b"".join(a.tobytes() for a in self.arrays())


def surrogate_forward(stack, s):
    """``(audio_feat, spk_emb, vec_feat)`` for one embedding or a batch."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != stack.voice_dim:
        raise ValidationError(f"surrogate input has dimension {s.shape[-1]}, expected {stack.voice_dim}")
    audio = np.tanh(_affine(s, stack.tts_map, stack.tts_bias))
    return audio, _affine(audio, stack.spk_map, 0.0), _affine(audio, stack.vec_map, 0.0)


def vec_jacobian(stack, s):
    """``d vec_feat / d s`` at a single embedding, shape (128, voice_dim)."""
    audio, _, _ = surrogate_forward(stack, s)
    return stack.vec_map @ ((1.0 - audio**2)[:, None] * stack.tts_map)


@dataclass(frozen=True)
class Stage2Config:
    lambda_tts: float = 1.0
    lambda_vec: float = 1.0
    batch_size: int = 32
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    latent_dim: int = LATENT_DIM
    sample: bool = True
    surrogate_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        _check_common(self)
        if not (self.lambda_tts >= 0 and self.lambda_vec >= 0):
            raise ValidationError("lambda_tts and lambda_vec must be non-negative")

    @classmethod
    def from_mapping(cls, mapping):
        unknown = set(mapping) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown stage-2 keys: {sorted(unknown)}")
        return cls(**mapping)


class Stage2Head:
    """``lambda_tts * mean(1 - cos(spk, spk_t)) + lambda_vec * mean((vec - vec_t)^2)``."""

    def __init__(self, stack, targets, lambda_tts=1.0, lambda_vec=1.0):
        self.stack = stack
        self.lambda_tts = lambda_tts
        self.lambda_vec = lambda_vec
        _, self.spk_t, self.vec_t = surrogate_forward(stack, targets)

    def terms(self, S, Z):
        _, spk, vec = surrogate_forward(self.stack, S)
        l_tts = np.mean(1.0 - _cos_rows(spk, self.spk_t), axis=-1)
        l_vec = np.mean((vec - self.vec_t) ** 2, axis=(-2, -1))
        return {"l_tts": l_tts, "l_vec": l_vec}

    def value(self, S, Z):
        t = self.terms(S, Z)
        return self.lambda_tts * t["l_tts"] + self.lambda_vec * t["l_vec"]

    def grad(self, S, Z):
        B = S.shape[0]
        audio, spk, vec = surrogate_forward(self.stack, S)
        d_spk = _cos_rows_grad(spk, self.spk_t, np.full(B, -self.lambda_tts / B))
        d_vec = (2.0 * self.lambda_vec / vec.size) * (vec - self.vec_t)
        d_audio = d_spk @ self.stack.spk_map + d_vec @ self.stack.vec_map
        dS = (d_audio * (1.0 - audio**2)) @ self.stack.tts_map
        return dS, np.zeros_like(Z)


def loss_stage2(model, stack, V, targets, config=None, rng=None, eta=None):
    """Gradient bundle of the stage-2 objective; only adapter parameters receive gradients."""
    config = config or Stage2Config()
    V = np.asarray(V, dtype=np.float64)
    if eta is None:
        L = model.latent_dim
        eta = RandomSource(0 if rng is None else rng).normal((V.shape[0], L)) if config.sample \
            else np.zeros((V.shape[0], L))
    head = Stage2Head(stack, targets, config.lambda_tts, config.lambda_vec)
    bundle, _ = value_and_grad(model, V, eta, head)
    return bundle


def train_stage2(model, faces, voices, stack, config=None):
    """Fine-tune ``model`` (copied) through the frozen stack; returns ``(model, log)``."""
    config = config or Stage2Config()
    check_pairing(faces, voices)
    if model.in_dim != faces.dim or model.out_dim != stack.voice_dim or voices.dim != stack.voice_dim:
        raise ValidationError("model, dataset and surrogate dimensions do not match")
    model = model.copy()
    shuffle_rng, noise_rng = RandomSource(config.seed).spawn(2)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    V, T = faces.vectors, voices.vectors
    L = model.latent_dim
    log = []
    for epoch in range(1, config.epochs + 1):
        sums = dict.fromkeys(STAGE2_COLUMNS[1:], 0.0)
        batches = minibatches(len(faces), config.batch_size, shuffle_rng)
        for idx in batches:
            eta = noise_rng.normal((idx.size, L)) if config.sample else np.zeros((idx.size, L))
            head = Stage2Head(stack, T[idx], config.lambda_tts, config.lambda_vec)
            bundle, _ = value_and_grad(model, V[idx], eta, head)
            opt.step(model, bundle.grads)
            for k, v in bundle.terms.items():
                sums[k] += v
            sums["total"] += bundle.loss
        log.append({"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()}})
    return model, log


def gradcheck_stage2(model, stack, batch, config=None, rng=None, mode="full", analytic=None, skip=()):
    config = config or Stage2Config()
    faces, voices = batch
    check_pairing(faces, voices)
    if len(faces) > 16:
        raise ValidationError("gradcheck batches are limited to 16 records")
    rng = rng if isinstance(rng, RandomSource) else RandomSource(0 if rng is None else rng)
    L = model.latent_dim
    eta = rng.normal((len(faces), L)) if config.sample else np.zeros((len(faces), L))
    head = Stage2Head(stack, voices.vectors, config.lambda_tts, config.lambda_vec)
    return _gc.check_gradients(model, faces.vectors, eta, head, analytic=analytic, mode=mode, skip=skip)
