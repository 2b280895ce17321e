import dataclasses

import numpy as np
import pytest

from stylemotion import (
    ExpertConfig,
    RegionPartition,
    embed_audio,
    embed_motion,
    load_expert,
    save_expert,
    sync_confidence,
    train_expert,
)
from stylemotion.corpus import PseudoAudioFeatures


@pytest.fixture(scope="module")
def sample_pair(tiny_corpus):
    entry = tiny_corpus.by_split("val")[0]
    return tiny_corpus.audio(entry), tiny_corpus.sequence(entry)


def test_embeddings_unit_norm(tiny_expert, sample_pair):
    audio, seq = sample_pair
    lower = seq.expression[:, list(range(6, 12))]
    for emb in (embed_audio(tiny_expert, audio), embed_motion(tiny_expert, lower)):
        assert np.linalg.norm(emb) == pytest.approx(1.0, abs=1e-5)


def test_embed_deterministic(tiny_expert, sample_pair):
    audio, _ = sample_pair
    a = embed_audio(tiny_expert, audio, window=(0, 16))
    b = embed_audio(tiny_expert, audio, window=(0, 16))
    assert np.array_equal(a, b)


def test_embed_window_out_of_bounds(tiny_expert, sample_pair):
    audio, _ = sample_pair
    with pytest.raises(ValueError):
        embed_audio(tiny_expert, audio, window=(0, audio.num_frames + 1))
    with pytest.raises(ValueError):
        embed_audio(tiny_expert, audio, window=(5, 5))


def test_trained_expert_beats_chance(tiny_expert):
    assert tiny_expert.val_sync_accuracy > 0.7


def test_sync_confidence_range_and_alignment(tiny_expert, tiny_corpus, sample_pair):
    audio, seq = sample_pair
    partition = tiny_corpus.config.partition
    aligned = sync_confidence(tiny_expert, audio, seq, partition)
    assert -1.0 <= aligned <= 1.0
    # The aligned pair must outscore the same audio against a shifted clip.
    shifted = dataclasses.replace(
        seq,
        expression=np.roll(seq.expression, 10, axis=0),
        pose=seq.pose,
    )
    assert aligned > sync_confidence(tiny_expert, audio, shifted, partition)


def test_sync_confidence_scale_invariant(tiny_expert, tiny_corpus, sample_pair):
    audio, seq = sample_pair
    partition = tiny_corpus.config.partition
    scaled = PseudoAudioFeatures(audio.features * 7.5)
    a = sync_confidence(tiny_expert, audio, seq, partition)
    b = sync_confidence(tiny_expert, scaled, seq, partition)
    assert a == pytest.approx(b, abs=1e-5)


def test_sync_confidence_length_mismatch(tiny_expert, tiny_corpus, sample_pair):
    audio, seq = sample_pair
    short = PseudoAudioFeatures(audio.features[:-1])
    with pytest.raises(ValueError):
        sync_confidence(tiny_expert, short, seq, tiny_corpus.config.partition)


def test_zero_negatives_rejected(tiny_corpus):
    with pytest.raises(ValueError):
        train_expert(tiny_corpus, ExpertConfig(steps=1, negatives_per_positive=0))


def test_save_load_roundtrip(tiny_expert, sample_pair, tmp_path):
    audio, _ = sample_pair
    save_expert(tiny_expert, tmp_path / "expert")
    back = load_expert(tmp_path / "expert")
    assert back.config == tiny_expert.config
    assert np.array_equal(
        embed_audio(back, audio), embed_audio(tiny_expert, audio)
    )
    assert back.val_sync_accuracy == pytest.approx(tiny_expert.val_sync_accuracy)
