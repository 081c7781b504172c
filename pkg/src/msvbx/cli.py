"""Command-line pipeline: train-backend, cluster, score, synth.

Configuration precedence is flags > JSON config file > built-in defaults;
the defaults follow the published operating point.  Exit codes: 0 on
success, 1 on runtime failure, 2 on usage errors (including missing
input paths).  Set MSVBX_LOG=error|warn|info|debug for log verbosity.
"""

import argparse
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from .cahc import CannotLinkSet, constrained_ahc
from .data import InferenceConfig, read_recording, with_active_streams, write_recording
from .errors import MsvbxError, PairingError
from .plda import PldaBackend, l2_normalize
from .score import der, mean_error, read_rttm
from .stitch import filter_result, stitch, write_rttm
from .synth import SynthConfig, generate, write_truth
from .vbhmm import INACTIVE, run_msvbx, run_single_stream_vbx

log = logging.getLogger("msvbx")

DEFAULTS = {
    "fa": 0.4,
    "fb": 17.0,
    "loop_prob": 0.8,
    "tau": 0.05,
    "max_iters": 40,
    "elbo_rel_tol": 1e-6,
    "pi_drop_eps": 1e-6,
    "ahc_threshold": 0.8,
    "lda_dim": 32,
    "activity_threshold": 0.5,
    "median_window": 1.0,
    "mode": "msvbx",
    "seed": 0,
}


def _setup_logging():
    level = os.environ.get("MSVBX_LOG", "warn").lower()
    levels = {
        "error": logging.ERROR,
        "warn": logging.WARNING,
        "info": logging.INFO,
        "debug": logging.DEBUG,
    }
    logging.basicConfig(
        stream=sys.stderr,
        level=levels.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _resolve(args, config_file):
    """Merge flag values over config-file values over defaults."""
    merged = dict(DEFAULTS)
    if config_file:
        with open(config_file, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _require_inputs(*paths):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise FileNotFoundError(f"missing input path(s): {', '.join(missing)}")


def _parse_phi(text, dim):
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 1:
        return np.full(dim, parts[0])
    if len(parts) == 2:
        return np.linspace(parts[0], parts[1], dim)
    if len(parts) != dim:
        raise ValueError(f"--phi needs 1, 2 or {dim} comma-separated values")
    return np.asarray(parts)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_train_backend(args):
    _require_inputs(args.data)
    cfg = _resolve(args, args.config)
    with np.load(args.data) as archive:
        vectors = archive["vectors"]
        labels = archive["labels"]
    backend = PldaBackend(lda_dim=int(cfg["lda_dim"])).fit(vectors, labels)
    backend.save(args.model)
    log.info("trained backend on %d vectors -> %s", len(vectors), args.model)
    return 0


def _cluster_one(path, backend, cfg, out_dir):
    rec = with_active_streams(read_recording(path), cfg["tau"])
    counts = rec.active_counts
    active = [
        rec.embeddings[t, c]
        for t in range(rec.num_chunks)
        for c in range(int(counts[t]))
    ]
    inference = InferenceConfig(
        fa=cfg["fa"],
        fb=cfg["fb"],
        loop_prob=cfg["loop_prob"],
        tau=cfg["tau"],
        max_iters=int(cfg["max_iters"]),
        elbo_rel_tol=cfg["elbo_rel_tol"],
        pi_drop_eps=cfg["pi_drop_eps"],
        seed=int(cfg["seed"]),
    )
    if active:
        raw = np.vstack(active)
        # cluster in the length-normalized LDA space so the distance
        # threshold keeps its unit-sphere meaning
        reduced = l2_normalize(raw) @ backend.lda_matrix_ - backend.global_mean_
        assignment = constrained_ahc(
            l2_normalize(reduced),
            CannotLinkSet.from_active_counts(counts),
            cfg["ahc_threshold"],
        )
        if cfg["mode"] == "vbx":
            result = run_single_stream_vbx(rec, backend, assignment, inference)
        else:
            result = run_msvbx(rec, backend, assignment, inference)
        labels = result.labels
        trace = result.trace
        num_speakers = result.num_speakers
    else:
        labels = np.full((rec.num_chunks, rec.num_streams), INACTIVE, dtype=np.int64)
        trace = None
        num_speakers = 0

    diarized = filter_result(
        stitch(rec, labels, cfg["activity_threshold"]), cfg["median_window"]
    )
    out_rttm = Path(out_dir) / f"{rec.recording_id}.rttm"
    write_rttm(diarized, out_rttm)
    diag_path = Path(out_dir) / f"{rec.recording_id}.diag.jsonl"
    with open(diag_path, "w", encoding="utf-8", newline="\n") as fh:
        if trace is not None:
            for i, (value, states) in enumerate(zip(trace.elbo, trace.retained_counts)):
                fh.write(
                    json.dumps(
                        {"iter": i, "elbo": value, "retained_states": states},
                        sort_keys=True,
                    )
                    + "\n"
                )
        fh.write(
            json.dumps({"num_speakers": num_speakers}, sort_keys=True) + "\n"
        )
    log.info("%s: %d speakers -> %s", rec.recording_id, num_speakers, out_rttm)
    return out_rttm


def cmd_cluster(args):
    _require_inputs(args.model, *args.recordings)
    cfg = _resolve(args, args.config)
    backend = PldaBackend.load(args.model)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    workers = args.workers or os.cpu_count() or 1
    failures = 0
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            pool.submit(_cluster_one, path, backend, cfg, args.out_dir): path
            for path in args.recordings
        }
        for future, path in futures.items():
            try:
                future.result()
            except (MsvbxError, ValueError, OSError) as err:
                failures += 1
                log.error("%s: %s", path, err)
    if failures:
        log.error("%d of %d recordings failed", failures, len(args.recordings))
        return 1
    return 0


def _load_rttm_dir(directory):
    merged = {}
    for path in sorted(Path(directory).glob("*.rttm")):
        for rec, segments in read_rttm(path).items():
            merged.setdefault(rec, []).extend(segments)
    return merged


def cmd_score(args):
    _require_inputs(args.ref_dir, args.hyp_dir)
    ref = _load_rttm_dir(args.ref_dir)
    hyp = _load_rttm_dir(args.hyp_dir)
    missing_hyp = sorted(set(ref) - set(hyp))
    missing_ref = sorted(set(hyp) - set(ref))
    if missing_hyp or missing_ref:
        raise PairingError(
            f"unpaired recording ids: missing hypotheses {missing_hyp}, "
            f"missing references {missing_ref}"
        )
    per_recording = {}
    weighted = np.zeros(4)  # der, miss, fa, confusion, weighted by ref seconds
    total_seconds = 0.0
    ref_counts = []
    hyp_counts = []
    for rec in sorted(ref):
        report = der(ref[rec], hyp[rec], collar=args.collar)
        per_recording[rec] = {
            "der": report.der,
            "miss": report.missed,
            "fa": report.false_alarm,
            "confusion": report.confusion,
            "ref_speakers": report.ref_speakers,
            "hyp_speakers": report.hyp_speakers,
        }
        weighted += report.scored_ref_seconds * np.array(
            [report.der, report.missed, report.false_alarm, report.confusion]
        )
        total_seconds += report.scored_ref_seconds
        ref_counts.append(report.ref_speakers)
        hyp_counts.append(report.hyp_speakers)
    summary = {
        "der": weighted[0] / total_seconds,
        "miss": weighted[1] / total_seconds,
        "fa": weighted[2] / total_seconds,
        "confusion": weighted[3] / total_seconds,
        "me": mean_error(ref_counts, hyp_counts),
        "recordings": per_recording,
    }
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_synth(args):
    cfg = SynthConfig(
        num_speakers=args.num_speakers,
        num_chunks=args.num_chunks,
        max_streams=args.max_streams,
        embed_dim=args.embed_dim,
        phi=tuple(_parse_phi(args.phi, args.embed_dim)),
        loop_prob=args.loop_prob,
        active_count_distribution=tuple(
            float(p) for p in args.active_dist.split(",")
        ),
        frames=args.frames,
        frame_step=args.frame_step,
        seed=args.seed,
        activity_flip_prob=args.flip_prob,
    )
    recording, truth = generate(cfg)
    recording = replace(recording, recording_id=Path(args.out).stem)
    write_recording(recording, args.out)
    truth_path = args.truth_out or f"{args.out}.truth.json"
    write_truth(truth, truth_path)
    if args.rttm_out:
        counts = (truth.labels != INACTIVE).sum(axis=1)
        perm = np.tile(np.arange(cfg.max_streams), (cfg.num_chunks, 1))
        canonical = replace(recording, active_counts=counts, stream_perm=perm)
        write_rttm(stitch(canonical, truth.labels, 0.5), args.rttm_out)
    if args.labeled_out:
        mask = truth.labels != INACTIVE
        np.savez(
            args.labeled_out,
            vectors=recording.embeddings[mask],
            labels=truth.labels[mask],
        )
    log.info("wrote %s (%d speakers)", args.out, truth.num_speakers)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="msvbx",
        description="Multi-stream Bayesian HMM clustering for chunked "
        "speaker-embedding recordings",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train-backend", help="fit the embedding backend")
    train.add_argument("data", help="npz archive with 'vectors' and 'labels'")
    train.add_argument("model", help="output model JSON path")
    train.add_argument("--lda-dim", dest="lda_dim", type=int)
    train.add_argument("--config", help="JSON config file")
    train.set_defaults(func=cmd_train_backend)

    cluster = sub.add_parser("cluster", help="diarize recordings")
    cluster.add_argument("model", help="backend model JSON")
    cluster.add_argument("recordings", nargs="+", help="MSVB1 recording files")
    cluster.add_argument("--out-dir", default=".", help="output directory")
    cluster.add_argument("--mode", choices=["msvbx", "vbx"])
    cluster.add_argument("--fa", type=float)
    cluster.add_argument("--fb", type=float)
    cluster.add_argument("--loop-prob", dest="loop_prob", type=float)
    cluster.add_argument("--tau", type=float)
    cluster.add_argument("--max-iters", dest="max_iters", type=int)
    cluster.add_argument("--elbo-rel-tol", dest="elbo_rel_tol", type=float)
    cluster.add_argument("--pi-drop-eps", dest="pi_drop_eps", type=float)
    cluster.add_argument("--ahc-threshold", dest="ahc_threshold", type=float)
    cluster.add_argument(
        "--activity-threshold", dest="activity_threshold", type=float
    )
    cluster.add_argument("--median-window", dest="median_window", type=float)
    cluster.add_argument("--workers", type=int)
    cluster.add_argument("--config", help="JSON config file")
    cluster.set_defaults(func=cmd_cluster)

    score = sub.add_parser("score", help="score hypothesis RTTMs against references")
    score.add_argument("ref_dir", help="directory of reference .rttm files")
    score.add_argument("hyp_dir", help="directory of hypothesis .rttm files")
    score.add_argument("--collar", type=float, default=0.0)
    score.add_argument("--out", help="write the JSON report here as well")
    score.set_defaults(func=cmd_score)

    synth = sub.add_parser("synth", help="generate a synthetic recording")
    synth.add_argument("out", help="output MSVB1 path")
    synth.add_argument("--num-speakers", type=int, default=3)
    synth.add_argument("--num-chunks", type=int, default=200)
    synth.add_argument("--max-streams", type=int, default=2)
    synth.add_argument("--embed-dim", type=int, default=32)
    synth.add_argument("--phi", default="10,1", help="value, 'hi,lo' span, or full list")
    synth.add_argument("--loop-prob", type=float, default=0.8)
    synth.add_argument("--active-dist", default="0.0,0.5,0.5")
    synth.add_argument("--frames", type=int, default=10)
    synth.add_argument("--frame-step", type=float, default=0.1)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--flip-prob", type=float, default=0.0)
    synth.add_argument("--truth-out", help="truth sidecar JSON path")
    synth.add_argument("--rttm-out", help="also write the reference RTTM")
    synth.add_argument("--labeled-out", help="npz of labeled embeddings for training")
    synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except FileNotFoundError as err:
        log.error("%s", err)
        return 2
    except (MsvbxError, ValueError, OSError) as err:
        log.error("%s", err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
