import numpy as np
import pytest

from msdiar.labels import segment_labels, speaker_list
from msdiar.session_io import emit_rttm, format_embeddings, oracle_sad
from msdiar.synth import FrameNoise, SynthConfig, gen_corpus, gen_session, generate_turns


def pure_rows(sess, scale):
    """Embedding rows and speaker index of single-speaker segments at one scale."""
    seg = sess.msset.per_scale[scale]
    V = segment_labels(seg, sess.turns, [f"S{k:02d}" for k in range(len(sess.centroids))])
    pure = (V > 0).sum(axis=1) == 1
    return sess.embeddings[scale].rows[pure], V[pure].argmax(axis=1)


def test_noiseless_single_speaker_is_centroid():
    sess = gen_session(SynthConfig(noise=0.0, session_len=30, seed=4))
    X, spk = pure_rows(sess, 2)
    assert len(X) > 0
    assert np.allclose(X, sess.centroids[spk], atol=1e-12)


def test_centroids_orthonormal():
    sess = gen_session(SynthConfig(speakers=4, dim=16, session_len=20, seed=1))
    assert np.allclose(sess.centroids @ sess.centroids.T, np.eye(4), atol=1e-12)


def same_speaker_cos(X, spk, rng, n=1000):
    vals = []
    while len(vals) < n:
        i, j = rng.integers(len(X), size=2)
        if i != j and spk[i] == spk[j]:
            vals.append(X[i] @ X[j])
    return np.mean(vals)


def test_longer_segments_are_cleaner(rng):
    sess = gen_session(SynthConfig(noise=0.4, session_len=300, seed=2))
    coarse = same_speaker_cos(*pure_rows(sess, 0), rng)
    base = same_speaker_cos(*pure_rows(sess, 2), rng)
    assert coarse > base


def test_mean_turn_length():
    cfg = SynthConfig(session_len=4000, mean_turn=2.17, seed=3)
    turns = generate_turns(cfg, np.random.default_rng(3))[:-1]
    assert len(turns) >= 1000
    mean = np.mean([t.duration for t in turns])
    assert abs(mean - 2.17) / 2.17 < 0.10


def test_cross_speaker_cosine_near_zero(rng):
    sess = gen_session(SynthConfig(noise=0.1, dim=16, session_len=600, seed=5))
    X, spk = pure_rows(sess, 2)
    vals = []
    while len(vals) < 1000:
        i, j = rng.integers(len(X), size=2)
        if spk[i] != spk[j]:
            vals.append(X[i] @ X[j])
    assert abs(np.mean(vals)) < 0.05


def test_turns_valid_and_non_overlapping():
    sess = gen_session(SynthConfig(session_len=200, seed=6))
    for a, b in zip(sess.turns, sess.turns[1:]):
        assert a.end_ms <= b.onset_ms
    assert all(t.duration_ms > 0 for t in sess.turns)
    total = sess.turns[-1].end_ms
    silence = 1 - oracle_sad(sess.turns).total_ms / total
    assert 0.03 < silence < 0.2


def test_same_seed_same_bytes():
    cfg = SynthConfig(session_len=30, seed=11)
    a, b = gen_session(cfg), gen_session(cfg)
    assert emit_rttm(a.turns) == emit_rttm(b.turns)
    assert all(format_embeddings(x) == format_embeddings(y) for x, y in zip(a.embeddings, b.embeddings))


def test_corpus_cycles_speakers_and_varies_seeds():
    corpus = gen_corpus(SynthConfig(session_len=30, seed=0), 4, speakers=[2, 3])
    assert [len(speaker_list(s.turns)) for _, s in corpus] == [2, 3, 2, 3]
    assert emit_rttm(corpus[0][1].turns) != emit_rttm(corpus[2][1].turns)


def test_embedding_counts_match_segments():
    sess = gen_session(SynthConfig(session_len=40, seed=8))
    assert [len(e) for e in sess.embeddings] == sess.msset.counts()


def test_frame_noise_scales_with_duration():
    fn = FrameNoise(200_000, 8, 0.5, np.random.default_rng(0))
    starts = np.arange(0, 190_000, 2000)
    short = fn.segment(starts, starts + 500)
    long = fn.segment(starts, starts + 1500)
    assert np.std(short) == pytest.approx(0.5 / np.sqrt(0.5), rel=0.15)
    assert np.std(long) == pytest.approx(0.5 / np.sqrt(1.5), rel=0.15)


def test_config_errors():
    with pytest.raises(ValueError):
        SynthConfig(speakers=5, dim=4)
    with pytest.raises(ValueError):
        SynthConfig(noise=-1)
    with pytest.raises(ValueError):
        SynthConfig(mean_turn=0)
