"""Adapter parameters, the forward pass, and the ``F2VS`` checkpoint format.

Encoder: ``h = tanh(W1 v + b1)``, ``mu = Wmu h + bmu``,
``logvar = clip(Wlv h + blv, -10, 10)``.  Sampling: ``z = mu +
exp(logvar / 2) * eta``.  Decoder: ``s = W2 tanh(Wd1 z + bd1) + b2``.

Every forward function broadcasts over leading axes so the same code
evaluates a batch of perturbed copies during finite-difference checks.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._validation import ValidationError
from ..embedding import as_random_source

PARAM_NAMES = (
    "enc_w1", "enc_b1",
    "enc_w_mu", "enc_b_mu",
    "enc_w_lv", "enc_b_lv",
    "dec_w1", "dec_b1",
    "dec_w2", "dec_b2",
)
LOGVAR_CLAMP = 10.0
FACE_DIM = 512
VOICE_DIM = 192
HIDDEN_DIM = 256
LATENT_DIM = 64

CHECKPOINT_MAGIC = b"F2VS"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class AdapterModel:
    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w_mu: np.ndarray
    enc_b_mu: np.ndarray
    enc_w_lv: np.ndarray
    enc_b_lv: np.ndarray
    dec_w1: np.ndarray
    dec_b1: np.ndarray
    dec_w2: np.ndarray
    dec_b2: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            arr = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"adapter parameter {name} is not finite")
            setattr(self, name, arr)
        hidden, in_dim = self.enc_w1.shape
        latent = self.enc_w_mu.shape[0]
        dec_hidden = self.dec_w1.shape[0]
        expected = {
            "enc_b1": (hidden,),
            "enc_w_mu": (latent, hidden), "enc_b_mu": (latent,),
            "enc_w_lv": (latent, hidden), "enc_b_lv": (latent,),
            "dec_w1": (dec_hidden, latent), "dec_b1": (dec_hidden,),
            "dec_w2": (self.dec_w2.shape[0], dec_hidden), "dec_b2": (self.dec_w2.shape[0],),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValidationError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def latent_dim(self):
        return self.enc_w_mu.shape[0]

    @property
    def in_dim(self):
        return self.enc_w1.shape[1]

    @property
    def out_dim(self):
        return self.dec_w2.shape[0]

    def params(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        return AdapterModel(**{k: v.copy() for k, v in self.params().items()})

    def n_parameters(self):
        return sum(v.size for v in self.params().values())

    def equals(self, other):
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES)


def init_adapter(rng=None, latent_dim=LATENT_DIM, in_dim=FACE_DIM, hidden_dim=HIDDEN_DIM,
                 out_dim=VOICE_DIM, input_norm=1.0, logvar_bias=-4.0):
    """Random initial parameters.

    Weights are N(0, 1/fan_in) except the first layer, which is scaled for
    inputs of Euclidean norm ``input_norm`` so its pre-activations start at
    unit scale.  ``logvar_bias`` sets the initial posterior spread.
    """
    rng = as_random_source(rng)

    def w(out, fan_in, scale=None):
        return rng.normal((out, fan_in)) * (scale if scale is not None else 1.0 / np.sqrt(fan_in))

    return AdapterModel(
        enc_w1=w(hidden_dim, in_dim, 1.0 / input_norm),
        enc_b1=np.zeros(hidden_dim),
        enc_w_mu=w(latent_dim, hidden_dim),
        enc_b_mu=np.zeros(latent_dim),
        enc_w_lv=w(latent_dim, hidden_dim, 0.1 / np.sqrt(hidden_dim)),
        enc_b_lv=np.full(latent_dim, float(logvar_bias)),
        dec_w1=w(hidden_dim, latent_dim),
        dec_b1=np.zeros(hidden_dim),
        dec_w2=w(out_dim, hidden_dim),
        dec_b2=np.zeros(out_dim),
    )


def zero_adapter(latent_dim=LATENT_DIM, in_dim=FACE_DIM, hidden_dim=HIDDEN_DIM, out_dim=VOICE_DIM):
    return AdapterModel(
        enc_w1=np.zeros((hidden_dim, in_dim)), enc_b1=np.zeros(hidden_dim),
        enc_w_mu=np.zeros((latent_dim, hidden_dim)), enc_b_mu=np.zeros(latent_dim),
        enc_w_lv=np.zeros((latent_dim, hidden_dim)), enc_b_lv=np.zeros(latent_dim),
        dec_w1=np.zeros((hidden_dim, latent_dim)), dec_b1=np.zeros(hidden_dim),
        dec_w2=np.zeros((out_dim, hidden_dim)), dec_b2=np.zeros(out_dim),
    )


def _check_last(x, dim, name):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise ValidationError(f"{name} has dimension {x.shape[-1]}, expected {dim}")
    return x


def encode_raw(model, v):
    """``(mu, logvar_before_clamp, h)`` for a vector or batch of face features."""
    v = _check_last(v, model.in_dim, "face embedding")
    h = np.tanh(v @ model.enc_w1.T + model.enc_b1)
    return h @ model.enc_w_mu.T + model.enc_b_mu, h @ model.enc_w_lv.T + model.enc_b_lv, h


def encode(model, v):
    mu, lv_raw, _ = encode_raw(model, v)
    return mu, np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)


def sample_latent(mu, logvar, rng=None, eta=None):
    """Reparameterised draw ``mu + exp(logvar / 2) * eta`` with ``eta ~ N(0, I)``."""
    mu = np.asarray(mu, dtype=np.float64)
    if eta is None:
        eta = as_random_source(rng).normal(mu.shape)
    return mu + np.exp(0.5 * np.asarray(logvar)) * eta


def decode(model, z):
    z = _check_last(z, model.latent_dim, "latent")
    return np.tanh(z @ model.dec_w1.T + model.dec_b1) @ model.dec_w2.T + model.dec_b2


def generate(model, v, rng=None, sample=True):
    mu, logvar = encode(model, v)
    z = sample_latent(mu, logvar, rng) if sample else mu
    return decode(model, z)


def to_bytes(model):
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, model.latent_dim)]
    for name in PARAM_NAMES:
        arr = np.ascontiguousarray(getattr(model, name), dtype="<f8")
        parts.append(struct.pack("<I", arr.size))
        parts.append(arr.tobytes())
    return b"".join(parts)


def from_bytes(buf):
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValidationError("not an adapter checkpoint (bad magic)")
    if len(buf) < 12:
        raise ValidationError("truncated checkpoint header")
    version, latent = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    offset = 12
    flat = {}
    for name in PARAM_NAMES:
        if offset + 4 > len(buf):
            raise ValidationError(f"truncated checkpoint at block {name}")
        (count,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        if offset + 8 * count > len(buf):
            raise ValidationError(f"truncated checkpoint at block {name}")
        flat[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64)
        offset += 8 * count
    if offset != len(buf):
        raise ValidationError("trailing bytes after the last checkpoint block")
    hidden = flat["enc_b1"].size
    dec_hidden = flat["dec_b1"].size
    out_dim = flat["dec_b2"].size
    if hidden == 0 or latent == 0 or flat["enc_w1"].size % hidden:
        raise ValidationError("inconsistent checkpoint block sizes")
    shapes = {
        "enc_w1": (hidden, flat["enc_w1"].size // hidden), "enc_b1": (hidden,),
        "enc_w_mu": (latent, hidden), "enc_b_mu": (latent,),
        "enc_w_lv": (latent, hidden), "enc_b_lv": (latent,),
        "dec_w1": (dec_hidden, latent), "dec_b1": (dec_hidden,),
        "dec_w2": (out_dim, dec_hidden), "dec_b2": (out_dim,),
    }
    try:
        return AdapterModel(**{k: flat[k].reshape(shapes[k]) for k in PARAM_NAMES})
    except ValueError as exc:
        raise ValidationError(f"inconsistent checkpoint block sizes: {exc}") from None


def save_checkpoint(model, path):
    Path(path).write_bytes(to_bytes(model))


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such checkpoint: {path}")
    return from_bytes(path.read_bytes())
