import numpy as np
import pytest

from msvbx.data import (
    ChunkedRecording,
    InferenceConfig,
    detect_active_streams,
    read_recording,
    with_active_streams,
    write_recording,
)
from msvbx.errors import BadMagicError, DimensionOverflowError, TruncatedPayloadError


def make_recording(rng, num_chunks=3, num_streams=2, dim=4, frames=10):
    return ChunkedRecording(
        recording_id="rec",
        frame_step=0.1,
        embeddings=rng.normal(size=(num_chunks, num_streams, dim)),
        activities=rng.random((num_chunks, num_streams, frames)),
    )


class TestDetectActiveStreams:
    def test_threshold_comparison(self):
        act = np.zeros((1, 2, 4))
        act[0, 0] = 0.5
        act[0, 1] = 0.02
        counts, _ = detect_active_streams(act, 0.05)
        assert counts.tolist() == [1]

    def test_all_zero(self):
        counts, _ = detect_active_streams(np.zeros((2, 3, 4)), 0.3)
        assert counts.tolist() == [0, 0]

    def test_boundary_is_inclusive(self):
        act = np.full((1, 2, 4), 0.05)
        counts, _ = detect_active_streams(act, 0.05)
        assert counts.tolist() == [2]

    def test_reorder_moves_active_first(self):
        act = np.zeros((1, 3, 2))
        act[0, 2] = 1.0  # only last stream active
        rec = ChunkedRecording(
            recording_id="r",
            frame_step=0.1,
            embeddings=np.arange(9, dtype=float).reshape(1, 3, 3),
            activities=act,
        )
        canon = with_active_streams(rec, 0.5)
        assert canon.active_counts.tolist() == [1]
        assert canon.stream_perm[0].tolist() == [2, 0, 1]
        np.testing.assert_array_equal(canon.embeddings[0, 0], rec.embeddings[0, 2])

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        rec = make_recording(rng)
        once = with_active_streams(rec, 0.4)
        twice = with_active_streams(once, 0.4)
        assert np.array_equal(once.active_counts, twice.active_counts)
        np.testing.assert_array_equal(twice.embeddings, once.embeddings)
        # second application leaves the canonical order alone
        assert all(
            twice.stream_perm[t].tolist() == list(range(rec.num_streams))
            for t in range(rec.num_chunks)
        )

    def test_permutation_is_bijection(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            shape = (
                int(rng.integers(1, 6)),
                int(rng.integers(1, 5)),
                int(rng.integers(1, 8)),
            )
            _, perm = detect_active_streams(rng.random(shape), float(rng.uniform(0.1, 0.9)))
            for row in perm:
                assert sorted(row.tolist()) == list(range(shape[1]))

    def test_tau_bounds(self):
        with pytest.raises(ValueError):
            detect_active_streams(np.zeros((1, 1, 1)), 0.0)
        with pytest.raises(ValueError):
            detect_active_streams(np.zeros((1, 1, 1)), 1.0)


class TestRecordingFile:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        rec = make_recording(rng, num_chunks=3, num_streams=2, dim=4, frames=10)
        # store at declared precision so the round trip is exact
        rec = ChunkedRecording(
            recording_id="rt",
            frame_step=rec.frame_step,
            embeddings=rec.embeddings.astype(np.float32),
            activities=rec.activities.astype(np.float32),
        )
        path = tmp_path / "rt.msvb"
        write_recording(rec, path)
        back = read_recording(path)
        assert back.recording_id == "rt"
        assert back.frame_step == np.float32(0.1)
        np.testing.assert_array_equal(back.embeddings, rec.embeddings)
        np.testing.assert_array_equal(back.activities, rec.activities)
        # payload bytes are stable across a second write
        path2 = tmp_path / "rt2.msvb"
        write_recording(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_random_shapes_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        for i in range(10):
            rec = make_recording(
                rng,
                num_chunks=int(rng.integers(1, 5)),
                num_streams=int(rng.integers(1, 4)),
                dim=int(rng.integers(1, 6)),
                frames=int(rng.integers(1, 7)),
            )
            path = tmp_path / f"r{i}.msvb"
            write_recording(rec, path)
            back = read_recording(path)
            np.testing.assert_allclose(back.embeddings, rec.embeddings, atol=1e-7)
            assert back.activities.shape == rec.activities.shape

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.msvb"
        path.write_bytes(b"NOTIT\n" + b"\x00" * 40)
        with pytest.raises(BadMagicError):
            read_recording(path)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(1)
        rec = make_recording(rng)
        path = tmp_path / "t.msvb"
        write_recording(rec, path)
        data = path.read_bytes()
        path.write_bytes(data[:-7])
        with pytest.raises(TruncatedPayloadError):
            read_recording(path)

    def test_dimension_overflow(self, tmp_path):
        import struct

        path = tmp_path / "o.msvb"
        header = struct.pack("<4I", 2**20, 2**20, 16, 16) + struct.pack("<f", 0.1)
        path.write_bytes(b"MSVB1\n" + header)
        with pytest.raises(DimensionOverflowError):
            read_recording(path)

    def test_distinct_error_types(self):
        assert not issubclass(BadMagicError, TruncatedPayloadError)
        assert not issubclass(TruncatedPayloadError, DimensionOverflowError)


class TestInferenceConfig:
    def test_published_defaults(self):
        cfg = InferenceConfig()
        assert cfg.fa == 0.4
        assert cfg.fb == 17.0
        assert cfg.loop_prob == 0.8
        assert cfg.tau == 0.05

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"fa": 0.0},
            {"fb": -1.0},
            {"loop_prob": 1.0},
            {"loop_prob": 0.0},
            {"tau": 1.5},
            {"elbo_rel_tol": 0.0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            InferenceConfig(**kwargs)


class TestChunkedRecordingInvariants:
    def test_rejects_out_of_range_activities(self):
        with pytest.raises(ValueError):
            ChunkedRecording(
                recording_id="x",
                frame_step=0.1,
                embeddings=np.zeros((1, 1, 2)),
                activities=np.full((1, 1, 3), 1.5),
            )

    def test_rejects_count_above_streams(self):
        with pytest.raises(ValueError):
            ChunkedRecording(
                recording_id="x",
                frame_step=0.1,
                embeddings=np.zeros((1, 2, 2)),
                activities=np.zeros((1, 2, 3)),
                active_counts=np.array([3]),
            )
