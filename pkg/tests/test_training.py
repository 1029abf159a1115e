import numpy as np
import pytest

from facevoice._validation import ValidationError
from facevoice.adapter import Stage1Config, VoiceAdapter, init_adapter, train_stage1, value_and_grad
from facevoice.adapter.training import STAGE1_COLUMNS, gradcheck_batch, log_to_csv, minibatches
from facevoice.embedding import EmbeddingSet, RandomSource
from facevoice.synthdata import SynthConfig, generate


@pytest.fixture(scope="module")
def small():
    ds = generate(SynthConfig(n_speakers=8, samples_per_speaker=3))
    return ds.part("train")


def test_zero_learning_rate_keeps_parameters(small):
    faces, voices = small
    start = init_adapter(RandomSource(1), in_dim=512)
    model, log = train_stage1(faces, voices, Stage1Config(learning_rate=0.0, epochs=4, batch_size=8), start)
    assert model.equals(start)
    assert model is not start
    assert len(log) == 4


def test_negative_learning_rate_rejected():
    with pytest.raises(ValidationError):
        Stage1Config(learning_rate=-1e-3)
    with pytest.raises(ValidationError):
        Stage1Config(batch_size=1)
    with pytest.raises(ValidationError):
        Stage1Config.from_mapping({"lambda_typo": 1.0})


def test_training_is_deterministic(small):
    faces, voices = small
    cfg = Stage1Config(epochs=3, batch_size=8, learning_rate=1e-3, seed=5)
    a, log_a = train_stage1(faces, voices, cfg)
    b, log_b = train_stage1(faces, voices, cfg)
    assert a.equals(b)
    assert log_to_csv(log_a) == log_to_csv(log_b)
    c, _ = train_stage1(faces, voices, Stage1Config(epochs=3, batch_size=8, learning_rate=1e-3, seed=6))
    assert not a.equals(c)


def test_log_columns(small):
    faces, voices = small
    _, log = train_stage1(faces, voices, Stage1Config(epochs=2, batch_size=8))
    text = log_to_csv(log)
    assert text.splitlines()[0] == ",".join(STAGE1_COLUMNS)
    assert len(text.splitlines()) == 3
    for row in log:
        total = row["l_rec"] + 0.5 * row["l_con"] + 0.01 * row["l_cen"] + row["l_mmd"]
        assert row["total"] == pytest.approx(total, rel=1e-12)


def test_training_reduces_loss(small):
    faces, voices = small
    _, log = train_stage1(faces, voices, Stage1Config(epochs=30, batch_size=8, learning_rate=1e-3))
    assert log[-1]["total"] < log[0]["total"]


def test_mmd_decreases_with_constant_targets(small):
    faces, _ = small
    target = RandomSource(3).normal(192)
    voices = EmbeddingSet(np.tile(target, (len(faces), 1)), faces.labels)
    cfg = Stage1Config(epochs=40, batch_size=8, learning_rate=1e-3, lambda_con=0, lambda_cen=0)
    _, log = train_stage1(faces, voices, cfg)
    assert log[-1]["l_mmd"] < log[0]["l_mmd"]


def test_loss_variance_with_clamped_logvar(small):
    faces, voices = small
    model = init_adapter(RandomSource(4))
    model.enc_w_lv[:] = 0.0
    model.enc_b_lv[:] = -50.0
    cfg = Stage1Config()
    losses = []
    for seed in range(100):
        V, eta, head = gradcheck_batch(model, faces, voices, cfg, RandomSource(9), 8)
        eta = RandomSource(seed).normal(eta.shape)
        losses.append(value_and_grad(model, V, eta, head)[0].loss)
    assert np.var(losses) <= 1e-6


def test_minibatches_merge_singletons():
    sizes = [b.size for b in minibatches(9, 4, RandomSource(0))]
    assert sizes == [4, 5]
    idx = np.concatenate(minibatches(10, 3, RandomSource(1)))
    assert sorted(idx) == list(range(10))


def test_voice_adapter_estimator(small):
    faces, voices = small
    est = VoiceAdapter(epochs=15, batch_size=8, learning_rate=1e-3, random_state=2)
    est.fit(faces.vectors, voices.vectors, faces.labels)
    pred = est.predict(faces.vectors)
    assert pred.shape == (len(faces), 192)
    draws = est.sample_voices(faces.vectors[:2], n_draws=3, rng=1)
    assert draws.shape == (3, 2, 192)
    assert not np.allclose(draws[0], draws[1])
    assert -1.0 <= est.score(faces.vectors, voices.vectors) <= 1.0
    with pytest.raises(ValidationError):
        VoiceAdapter().fit(faces.vectors, voices.vectors)
