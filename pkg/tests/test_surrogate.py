import numpy as np
import pytest

from facevoice.adapter import Stage1Config, init_adapter, train_stage1
from facevoice.adapter.model import decode, encode
from facevoice.embedding import RandomSource, pairwise_cosine_similarity
from facevoice.surrogate import (
    Stage2Config,
    SurrogateStack,
    surrogate_forward,
    train_stage2,
    vec_jacobian,
)
from facevoice.synthdata import SynthConfig, generate


def test_zero_input_zero_bias():
    stack = SurrogateStack(3, bias_scale=0.0)
    audio, spk, vec = surrogate_forward(stack, np.zeros(192))
    assert audio.shape == (256,) and spk.shape == (192,) and vec.shape == (128,)
    assert not audio.any() and not spk.any() and not vec.any()


def test_regenerated_from_seed():
    a, b = SurrogateStack(5), SurrogateStack(5)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != SurrogateStack(6).fingerprint()
    s = RandomSource(1).normal(192)
    for x, y in zip(surrogate_forward(a, s), surrogate_forward(b, s)):
        assert np.array_equal(x, y)
    with pytest.raises(ValueError):
        a.tts_map[0, 0] = 1.0


def test_vec_jacobian_matches_finite_differences():
    stack = SurrogateStack(7)
    s = RandomSource(2).normal(192) * 0.3
    J = vec_jacobian(stack, s)
    h = 1e-6
    E = np.eye(192) * h
    _, _, plus = surrogate_forward(stack, s + E)
    _, _, minus = surrogate_forward(stack, s - E)
    numeric = ((plus - minus) / (2 * h)).T
    assert np.max(np.abs(J - numeric)) / np.max(np.abs(J)) <= 1e-6


@pytest.fixture(scope="module")
def warm():
    ds = generate(SynthConfig(n_speakers=10, samples_per_speaker=3))
    faces, voices = ds.part("train")
    model, _ = train_stage1(faces, voices, Stage1Config(epochs=40, batch_size=8, learning_rate=1e-3))
    return model, faces, voices, ds


def test_zero_learning_rate_and_frozen_stack(warm):
    model, faces, voices, _ = warm
    stack = SurrogateStack(0)
    before = stack.fingerprint()
    out, log = train_stage2(model, faces, voices, stack, Stage2Config(learning_rate=0.0, epochs=3, batch_size=8))
    assert out.equals(model)
    assert stack.fingerprint() == before
    assert list(log[0]) == ["epoch", "l_tts", "l_vec", "total"]


def test_stage2_deterministic_and_decreasing(warm):
    model, faces, voices, _ = warm
    stack = SurrogateStack(0)
    cfg = Stage2Config(epochs=100, batch_size=8, learning_rate=1e-3)
    a, log = train_stage2(model, faces, voices, stack, cfg)
    b, _ = train_stage2(model, faces, voices, stack, cfg)
    assert a.equals(b)
    assert log[-1]["total"] <= log[0]["total"]


def test_stage2_does_not_degrade_alignment(warm):
    model, faces, voices, ds = warm
    test_faces, test_voices = ds.part("test")
    stack = SurrogateStack(0)
    tuned, _ = train_stage2(model, faces, voices, stack, Stage2Config(epochs=100, batch_size=8))

    def cos(m):
        return float(np.mean(pairwise_cosine_similarity(decode(m, encode(m, test_faces.vectors)[0]),
                                                        test_voices.vectors)))

    assert cos(tuned) >= cos(model) - 0.05


def test_stage2_rejects_dimension_mismatch(warm):
    model, faces, voices, _ = warm
    with pytest.raises(ValueError):
        train_stage2(init_adapter(RandomSource(0), out_dim=100), faces, voices, SurrogateStack(0))
