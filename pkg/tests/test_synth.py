import numpy as np
import pytest

from msvbx.synth import (
    SynthConfig,
    SynthTruth,
    generate,
    label_error_rate,
    read_truth,
    write_truth,
)
from msvbx.vbhmm import INACTIVE


class TestGenerate:
    def test_deterministic_given_seed(self):
        cfg = SynthConfig(num_speakers=3, num_chunks=30, seed=99)
        rec1, truth1 = generate(cfg)
        rec2, truth2 = generate(cfg)
        np.testing.assert_array_equal(rec1.embeddings, rec2.embeddings)
        np.testing.assert_array_equal(truth1.labels, truth2.labels)
        np.testing.assert_array_equal(truth1.state_sequence, truth2.state_sequence)

    def test_single_speaker_single_stream(self):
        cfg = SynthConfig(
            num_speakers=1, num_chunks=12, max_streams=1, embed_dim=4,
            phi=(3.0, 2.0, 1.0, 0.5), active_count_distribution=(0.0, 1.0), seed=1,
        )
        _, truth = generate(cfg)
        assert truth.num_speakers == 1
        assert set(truth.labels[:, 0].tolist()) == {0}

    def test_state_sequence_never_repeats_a_speaker(self):
        cfg = SynthConfig(num_speakers=4, num_chunks=100, max_streams=2,
                          embed_dim=4, phi=(4.0, 3.0, 2.0, 1.0),
                          active_count_distribution=(0.2, 0.4, 0.4), seed=7)
        _, truth = generate(cfg)
        for t in range(cfg.num_chunks):
            active = truth.labels[t][truth.labels[t] != INACTIVE]
            assert len(set(active.tolist())) == len(active)

    def test_between_speaker_covariance_converges_to_phi(self):
        # law of large numbers: sampled speaker means have covariance phi
        dim = 4
        phi = np.array([6.0, 3.0, 1.5, 0.75])
        rng = np.random.default_rng(0)
        means = rng.standard_normal((10_000, dim)) * np.sqrt(phi)
        cov = means.T @ means / len(means)
        np.testing.assert_allclose(np.diag(cov), phi, rtol=0.05)
        off = cov - np.diag(np.diag(cov))
        assert np.abs(off).max() < 0.05 * phi.max()

    def test_activities_are_ideal_binaries(self):
        cfg = SynthConfig(num_speakers=2, num_chunks=20, max_streams=2,
                          embed_dim=4, phi=(4.0, 3.0, 2.0, 1.0),
                          active_count_distribution=(0.3, 0.3, 0.4), seed=3)
        rec, truth = generate(cfg)
        assert set(np.unique(rec.activities).tolist()) <= {0.0, 1.0}
        for t in range(cfg.num_chunks):
            k = (truth.labels[t] != INACTIVE).sum()
            assert rec.activities[t, :k].min() == 1.0 if k else True
            assert rec.activities[t, k:].max() == 0.0 if k < cfg.max_streams else True

    def test_flip_knob_adds_noise(self):
        base = SynthConfig(num_speakers=2, num_chunks=10, max_streams=1,
                           embed_dim=2, phi=(2.0, 1.0),
                           active_count_distribution=(0.0, 1.0), seed=5)
        noisy = SynthConfig(**{**base.__dict__, "activity_flip_prob": 0.3})
        rec_clean, _ = generate(base)
        rec_noisy, _ = generate(noisy)
        assert not np.array_equal(rec_clean.activities, rec_noisy.activities)

    def test_rejects_active_count_above_speakers(self):
        with pytest.raises(ValueError):
            SynthConfig(num_speakers=1, max_streams=2, embed_dim=2,
                        phi=(2.0, 1.0), active_count_distribution=(0.2, 0.4, 0.4))


class TestTruthSidecar:
    def test_round_trip(self, tmp_path):
        cfg = SynthConfig(num_speakers=2, num_chunks=8, max_streams=2,
                          embed_dim=2, phi=(2.0, 1.0),
                          active_count_distribution=(0.2, 0.4, 0.4), seed=11)
        _, truth = generate(cfg)
        path = tmp_path / "truth.json"
        write_truth(truth, path)
        back = read_truth(path)
        np.testing.assert_array_equal(back.labels, truth.labels)
        np.testing.assert_array_equal(back.state_sequence, truth.state_sequence)
        assert back.num_speakers == truth.num_speakers


class TestLabelErrorRate:
    def test_identical_labels(self):
        labels = np.array([[0, 1], [1, INACTIVE]])
        assert label_error_rate(labels, labels) == 0.0

    def test_pure_renaming_scores_zero(self):
        truth = np.array([[0, INACTIVE], [0, INACTIVE], [1, INACTIVE]])
        pred = np.array([[1, INACTIVE], [1, INACTIVE], [0, INACTIVE]])
        assert label_error_rate(truth, pred) == 0.0

    def test_half_wrong(self):
        truth = np.array([[0], [0], [1], [1]])
        pred = np.array([[0], [0], [0], [0]])
        assert label_error_rate(truth, pred) == pytest.approx(0.5)

    def test_symmetric(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(1, 30))
            a = rng.integers(0, 4, (n, 1))
            b = rng.integers(0, 3, (n, 1))
            assert label_error_rate(a, b) == pytest.approx(label_error_rate(b, a))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            label_error_rate(np.zeros((2, 1)), np.zeros((3, 1)))
        with pytest.raises(ValueError):
            label_error_rate(
                np.array([[0, INACTIVE]]), np.array([[INACTIVE, 0]])
            )
