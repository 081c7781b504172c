import json

import numpy as np
import pytest

from msvbx.cli import main
from msvbx.score import read_rttm


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic training set, trained backend, and one test recording."""
    root = tmp_path_factory.mktemp("cli")
    train_npz = root / "train.npz"
    model = root / "model.json"
    rec = root / "meeting.msvb"
    truth = root / "meeting.truth.json"
    ref_dir = root / "ref"
    ref_dir.mkdir()

    # a broad multi-speaker set for backend training
    assert run([
        "synth", root / "train.msvb", "--num-speakers", 40, "--num-chunks", 400,
        "--embed-dim", 16, "--phi", "9,1", "--seed", 1,
        "--active-dist", "0.0,0.5,0.5", "--labeled-out", train_npz,
    ]) == 0
    assert run(["train-backend", train_npz, model, "--lda-dim", 8]) == 0

    # the recording under test, with its reference RTTM
    assert run([
        "synth", rec, "--num-speakers", 3, "--num-chunks", 150,
        "--embed-dim", 16, "--phi", "9,1", "--seed", 2,
        "--active-dist", "0.0,0.5,0.5", "--truth-out", truth,
        "--rttm-out", ref_dir / "meeting.rttm",
    ]) == 0
    return {"root": root, "model": model, "rec": rec, "truth": truth, "ref": ref_dir}


class TestDefaults:
    def test_defaults_match_published_operating_point(self):
        from msvbx.cli import DEFAULTS

        assert DEFAULTS["loop_prob"] == 0.8
        assert DEFAULTS["fa"] == 0.4
        assert DEFAULTS["fb"] == 17.0
        assert DEFAULTS["tau"] == 0.05
        assert DEFAULTS["lda_dim"] == 32
        assert 0.8 <= DEFAULTS["ahc_threshold"] <= 1.0


class TestTrainBackend:
    def test_missing_input_exits_2_without_output(self, tmp_path):
        model = tmp_path / "model.json"
        assert run(["train-backend", tmp_path / "nope.npz", model]) == 2
        assert not model.exists()

    def test_oversized_lda_dim_clamps_and_succeeds(self, tmp_path, recwarn):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(40, 6)) + 3.0
        y = np.repeat(np.arange(4), 10)
        npz = tmp_path / "d.npz"
        np.savez(npz, vectors=X, labels=y)
        model = tmp_path / "m.json"
        assert run(["train-backend", npz, model, "--lda-dim", 5]) == 0
        payload = json.loads(model.read_text())
        assert payload["lda_dim"] == 3  # num_speakers - 1

    def test_model_passes_backend_postconditions(self, workspace):
        from msvbx.plda import PldaBackend

        payload = json.loads(workspace["model"].read_text())
        phi = np.asarray(payload["phi"])
        assert np.all(np.diff(phi) <= 1e-12) and phi.min() >= 0.0
        assert len(payload["lda_matrix"]) == payload["input_dim"]
        # transformed training data: pooled within covariance is identity
        backend = PldaBackend.load(workspace["model"])
        with np.load(workspace["root"] / "train.npz") as archive:
            Z = backend.transform(archive["vectors"])
            labels = archive["labels"]
        classes = np.unique(labels)
        centered = np.vstack(
            [Z[labels == k] - Z[labels == k].mean(axis=0) for k in classes]
        )
        within = centered.T @ centered / (len(Z) - len(classes))
        np.testing.assert_allclose(within, np.eye(Z.shape[1]), atol=1e-8)


class TestCluster:
    def test_recovers_three_speakers(self, workspace, tmp_path):
        out = tmp_path / "hyp"
        assert run([
            "cluster", workspace["model"], workspace["rec"], "--out-dir", out,
        ]) == 0
        rttm = read_rttm(out / "meeting.rttm")["meeting"]
        speakers = {seg[0] for seg in rttm}
        assert len(speakers) == 3
        diag = (out / "meeting.diag.jsonl").read_text().strip().splitlines()
        assert json.loads(diag[-1])["num_speakers"] == 3
        elbos = [json.loads(l)["elbo"] for l in diag[:-1]]
        assert all(b - a >= -1e-8 * abs(a) for a, b in zip(elbos, elbos[1:]))

    def test_byte_identical_reruns(self, workspace, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert run([
                "cluster", workspace["model"], workspace["rec"], "--out-dir", out,
            ]) == 0
        for name in ("meeting.rttm", "meeting.diag.jsonl"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_scores_against_reference(self, workspace, tmp_path, capsys):
        out = tmp_path / "hyp"
        assert run([
            "cluster", workspace["model"], workspace["rec"], "--out-dir", out,
        ]) == 0
        assert run(["score", workspace["ref"], out, "--collar", 0.0]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["me"] == 0.0
        assert report["der"] < 5.0

    def test_max_iters_zero_equals_pure_clustering_init(self, workspace, tmp_path):
        out = tmp_path / "noiter"
        assert run([
            "cluster", workspace["model"], workspace["rec"], "--out-dir", out,
            "--max-iters", 0,
        ]) == 0
        lines = (out / "meeting.diag.jsonl").read_text().strip().splitlines()
        assert len(lines) == 1  # no iterations, just the summary line
        rttm = read_rttm(out / "meeting.rttm")["meeting"]
        assert rttm  # clustering-only labels still produce output

    def test_failed_recording_sets_exit_code(self, workspace, tmp_path):
        bad = tmp_path / "bad.msvb"
        bad.write_bytes(b"GARBAGE")
        out = tmp_path / "out"
        assert run([
            "cluster", workspace["model"], workspace["rec"], bad, "--out-dir", out,
        ]) == 1
        # the healthy recording still completed
        assert (out / "meeting.rttm").exists()

    def test_single_stream_mode_matches_multistream_on_c1_data(
        self, workspace, tmp_path
    ):
        rec = tmp_path / "solo.msvb"
        assert run([
            "synth", rec, "--num-speakers", 3, "--num-chunks", 80,
            "--embed-dim", 16, "--phi", "9,1", "--seed", 4,
            "--max-streams", 1, "--active-dist", "0.1,0.9",
        ]) == 0
        outs = {}
        for mode in ("msvbx", "vbx"):
            out = tmp_path / mode
            assert run([
                "cluster", workspace["model"], rec, "--out-dir", out,
                "--mode", mode,
            ]) == 0
            outs[mode] = (out / "solo.rttm").read_bytes()
        assert outs["msvbx"] == outs["vbx"]

    def test_config_file_and_flag_precedence(self, workspace, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"max_iters": 0}))
        out_cfg = tmp_path / "by-config"
        assert run([
            "cluster", workspace["model"], workspace["rec"],
            "--out-dir", out_cfg, "--config", config,
        ]) == 0
        lines = (out_cfg / "meeting.diag.jsonl").read_text().strip().splitlines()
        assert len(lines) == 1  # config file applied
        out_flag = tmp_path / "by-flag"
        assert run([
            "cluster", workspace["model"], workspace["rec"],
            "--out-dir", out_flag, "--config", config, "--max-iters", 5,
        ]) == 0
        lines = (out_flag / "meeting.diag.jsonl").read_text().strip().splitlines()
        assert len(lines) > 1  # flag wins over config


class TestScore:
    def test_identical_dirs_score_zero(self, workspace, tmp_path, capsys):
        assert run(["score", workspace["ref"], workspace["ref"]]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["der"] == 0.0
        assert report["me"] == 0.0

    def test_collar_never_increases_der_on_boundary_errors(
        self, workspace, tmp_path, capsys
    ):
        hyp_dir = tmp_path / "trimmed"
        hyp_dir.mkdir()
        # trim every reference segment by 0.2 s: errors hug the boundaries
        lines = []
        for spk, onset, dur in read_rttm(workspace["ref"] / "meeting.rttm")["meeting"]:
            if dur > 0.4:
                lines.append(
                    f"SPEAKER meeting 1 {onset:.3f} {dur - 0.2:.3f} "
                    f"<NA> <NA> {spk} <NA> <NA>"
                )
        (hyp_dir / "meeting.rttm").write_text("\n".join(lines) + "\n")
        ders = {}
        for collar in (0.0, 0.25):
            assert run([
                "score", workspace["ref"], hyp_dir, "--collar", collar,
            ]) == 0
            ders[collar] = json.loads(capsys.readouterr().out)["der"]
        assert ders[0.25] <= ders[0.0]

    def test_mismatched_ids_fail_with_listing(self, workspace, tmp_path, caplog):
        other = tmp_path / "other"
        other.mkdir()
        (other / "different.rttm").write_text(
            "SPEAKER different 1 0.000 1.000 <NA> <NA> spk0 <NA> <NA>\n"
        )
        assert run(["score", workspace["ref"], other]) == 1
        assert "meeting" in caplog.text and "different" in caplog.text


class TestSynthCommand:
    def test_repeat_seed_identical_files(self, tmp_path):
        paths = []
        for name in ("a.msvb", "b.msvb"):
            path = tmp_path / name
            assert run([
                "synth", path, "--num-speakers", 2, "--num-chunks", 12,
                "--embed-dim", 4, "--phi", "4,1", "--seed", 9,
                "--active-dist", "0.0,0.5,0.5",
            ]) == 0
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_usage_error_exit_code(self):
        assert run(["synth"]) == 2  # missing positional

    def test_zero_phi_is_chance_level_control(self, workspace, tmp_path):
        rec = tmp_path / "flat.msvb"
        truth = tmp_path / "flat.truth.json"
        assert run([
            "synth", rec, "--num-speakers", 3, "--num-chunks", 100,
            "--embed-dim", 16, "--phi", "0", "--seed", 6,
            "--active-dist", "0.0,1.0,0.0", "--truth-out", truth,
        ]) == 0
        out = tmp_path / "flat-out"
        assert run([
            "cluster", workspace["model"], rec, "--out-dir", out,
        ]) == 0
        # indistinguishable speakers: far fewer clusters than the truth's 3
        rttm = read_rttm(out / "flat.rttm")["flat"]
        speakers = {seg[0] for seg in rttm}
        assert len(speakers) <= 2
