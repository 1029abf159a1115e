"""Paired face/voice embedding datasets with a known ground-truth map.

Face prototypes are random unit vectors; voice prototypes are
``normalize(tanh(A f))`` for a fixed random ``A``.  Samples add isotropic
noise and are renormalized.  Noise is drawn with per-coordinate standard
deviation ``sigma / sqrt(dim)`` so ``sigma`` is the expected noise norm
relative to the unit-norm prototype, independent of the dimension.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import ValidationError
from .embedding import EmbeddingSet, RandomSource
from .io import write_embeddings

FACE_DIM = 512
VOICE_DIM = 192


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 50
    samples_per_speaker: int = 3
    face_dim: int = FACE_DIM
    voice_dim: int = VOICE_DIM
    sigma_face: float = 0.1
    sigma_voice: float = 0.1
    map_seed: int = 0
    data_seed: int = 1
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValidationError("synth.n_speakers must be at least 2")
        if self.samples_per_speaker < 1:
            raise ValidationError("synth.samples_per_speaker must be positive")
        if (self.face_dim, self.voice_dim) != (FACE_DIM, VOICE_DIM):
            raise ValidationError(f"synthetic dimensions are fixed at {FACE_DIM}/{VOICE_DIM}")
        if not (self.sigma_face >= 0 and self.sigma_voice >= 0):
            raise ValidationError("synth noise levels must be non-negative")
        if not 0 <= self.holdout_fraction < 1:
            raise ValidationError("synth.holdout_fraction must be in [0, 1)")
        for name in ("map_seed", "data_seed"):
            if not 0 <= getattr(self, name) < 2**64:
                raise ValidationError(f"synth.{name} must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class SynthDataset:
    faces: EmbeddingSet
    voices: EmbeddingSet
    split: dict
    face_prototypes: np.ndarray
    voice_prototypes: np.ndarray

    @property
    def train_labels(self):
        return tuple(k for k, v in self.split.items() if v == "train")

    @property
    def test_labels(self):
        return tuple(k for k, v in self.split.items() if v == "test")

    def part(self, which):
        keep = set(self.train_labels if which == "train" else self.test_labels)
        idx = [i for i, lab in enumerate(self.faces.labels) if lab in keep]
        return self.faces.subset(idx), self.voices.subset(idx)


def _normalize(X):
    return X / np.linalg.norm(X, axis=-1, keepdims=True)


def ground_truth_map(map_seed, face_dim=FACE_DIM, voice_dim=VOICE_DIM):
    """Frozen map ``A``; scaled so ``A f`` has unit-variance entries for unit ``f``."""
    return RandomSource(map_seed).normal((voice_dim, face_dim))


def voice_of(face, A):
    return _normalize(np.tanh(np.asarray(face) @ A.T))


def _noisy(proto, sigma, rng):
    dim = proto.shape[-1]
    return _normalize(proto + rng.normal(proto.shape) * (sigma / np.sqrt(dim)))


def generate(config=None):
    """Faces, voices and a speaker-level train/test split.

    Values are rounded to float32 so the binary files written from a
    dataset reproduce it exactly when read back.
    """
    config = config or SynthConfig()
    A = ground_truth_map(config.map_seed, config.face_dim, config.voice_dim)
    proto_rng, split_rng, *speaker_rngs = RandomSource(config.data_seed).spawn(2 + config.n_speakers)
    face_protos = _normalize(proto_rng.normal((config.n_speakers, config.face_dim)))
    voice_protos = voice_of(face_protos, A)
    width = len(str(config.n_speakers - 1))
    names = [f"spk{i:0{width}d}" for i in range(config.n_speakers)]
    faces, voices, labels = [], [], []
    for i, rng in enumerate(speaker_rngs):
        face_rng, voice_rng = rng.spawn(2)
        reps = config.samples_per_speaker
        faces.append(_noisy(np.repeat(face_protos[i:i + 1], reps, 0), config.sigma_face, face_rng))
        voices.append(_noisy(np.repeat(voice_protos[i:i + 1], reps, 0), config.sigma_voice, voice_rng))
        labels.extend([names[i]] * reps)
    n_test = int(round(config.holdout_fraction * config.n_speakers))
    n_test = min(n_test, config.n_speakers - 1)
    test = set(np.asarray(names)[split_rng.permutation(config.n_speakers)[:n_test]])
    split = {name: ("test" if name in test else "train") for name in names}
    f32 = lambda X: np.concatenate(X).astype(np.float32).astype(np.float64)  # noqa: E731
    return SynthDataset(
        faces=EmbeddingSet(f32(faces), tuple(labels)),
        voices=EmbeddingSet(f32(voices), tuple(labels)),
        split=split,
        face_prototypes=face_protos,
        voice_prototypes=voice_protos,
    )


def render_split(split):
    return "".join(f"{label},{part}\n" for label, part in split.items())


def parse_split(text):
    split = {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        label, sep, part = line.rpartition(",")
        if not sep or part not in ("train", "test") or not label:
            raise ValidationError(f"split manifest line {n}: expected 'label,train|test'")
        if label in split:
            raise ValidationError(f"split manifest line {n}: label {label!r} listed twice")
        split[label] = part
    return split


def write_dataset(ds, out_dir, format="binary"):
    out_dir = Path(out_dir)
    ext = "emb" if format == "binary" else "jsonl"
    paths = {
        "faces": out_dir / f"faces.{ext}",
        "voices": out_dir / f"voices.{ext}",
        "split": out_dir / "split.csv",
    }
    write_embeddings(ds.faces, paths["faces"], format=format)
    write_embeddings(ds.voices, paths["voices"], format=format)
    paths["split"].write_text(render_split(ds.split))
    return paths


def clustered_embeddings(n_classes=10, per_class=20, sigma=0.1, dim=VOICE_DIM, seed=0, center_seed=None):
    """Unit class centers plus noise of relative norm ``sigma`` (not renormalized).

    ``center_seed`` fixes the centers separately from the noise, so a sweep
    over ``sigma`` keeps the same centers and the same noise directions.
    """
    if n_classes < 1 or per_class < 1:
        raise ValidationError("n_classes and per_class must be positive")
    center_rng, noise_rng = RandomSource(seed).spawn(2)
    if center_seed is not None:
        center_rng = RandomSource(center_seed)
    centers = _normalize(center_rng.normal((n_classes, dim)))
    noise = noise_rng.normal((n_classes * per_class, dim)) * (sigma / np.sqrt(dim))
    vectors = np.repeat(centers, per_class, axis=0) + noise
    width = len(str(n_classes - 1))
    labels = tuple(f"c{i:0{width}d}" for i in range(n_classes) for _ in range(per_class))
    return EmbeddingSet(vectors, labels)
