"""Command-line interface.

Exit status is 0 on success, 2 when an input or configuration is invalid
and 1 for any other failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dsp import BandPassSpec, design_butterworth
from .echo import instance_matrix, session_profiles
from .errors import ConfigError, ContractError, DataFormatError, UnsupportedOperationError
from .formats import (load_session, read_eprf, read_trace, to_pcm16, write_eprf,
                      write_predictions, write_session, write_trace)
from .metrics import angular_errors
from .model import ModelArtifact, calibrate, predict_features
from .pipeline import (ModelSpec, RunConfig, SessionFeatures, evaluate_protocol,
                       run_end_to_end, write_report)
from .protocol import generate_session_trace, session_seeds
from .quant import (compressed_features, quant_pipeline_predict, quantize, raw_windows,
                    tx_prefix, unfiltered_origin)
from .sim import SceneSpec, remount, synthesize_session

VALIDATION_ERRORS = (ConfigError, ContractError, UnsupportedOperationError, FileNotFoundError,
                     json.JSONDecodeError)


def _run_config(args) -> RunConfig:
    path = getattr(args, "config", None)
    return RunConfig.load(path) if path else RunConfig()


def _seed(args) -> int:
    return int(getattr(args, "seed", 0) or 0)


def _out(args, default=None) -> Path:
    out = getattr(args, "out", None) or default
    if out is None:
        raise ConfigError("--out is required for this command")
    return Path(out)


def _say(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# data sources

def _session_dirs(path) -> list[Path]:
    path = Path(path)
    if (path / "meta.json").is_file():
        return [path]
    dirs = sorted(p for p in path.iterdir() if (p / "meta.json").is_file()) if path.is_dir() else []
    if not dirs:
        raise DataFormatError(f"no session directories under {path}")
    return dirs


def _eprf_files(path) -> list[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    files = sorted(path.glob("*.eprf")) if path.is_dir() else []
    if not files:
        raise DataFormatError(f"no .eprf files under {path}")
    return files


def _label_files(path, n: int, stems: list[str]) -> list[Path]:
    path = Path(path)
    if path.is_file():
        files = [path]
    else:
        files = sorted(path.glob("*.csv"))
        by_stem = {f.stem: f for f in files}
        if all(s in by_stem for s in stems):
            return [by_stem[s] for s in stems]
    if len(files) != n:
        raise DataFormatError(f"found {len(files)} label files for {n} profile files")
    return files


def _features_from_sources(args, rc: RunConfig, augment: bool, compressed: bool = False):
    """SessionFeatures from session directories or from EPRF files plus label CSVs."""
    cfg, seed, stride = rc.frame, _seed(args), rc.instance_stride
    src = Path(args.inp)
    out = []
    is_sessions = (src / "meta.json").is_file() or (
        src.is_dir() and any((p / "meta.json").is_file() for p in src.iterdir()))
    if is_sessions:
        for sid, d in enumerate(_session_dirs(src)):
            b = load_session(d)
            sid = int(b.meta.get("session_id", sid))
            if compressed:
                pos = np.arange(rc.quant.window_frames - 1, b.n_frames, stride)
                X, Y, t = compressed_features(b.audio, b.trace, b.cfg, rc.quant, pos)
            else:
                prof = session_profiles(b.audio, b.cfg, rc.filtered, rc.magnitude)
                pos = np.arange(cfg.window_frames - 1, b.n_frames, stride)
                X, Y, t = instance_matrix(prof, b.trace, b.cfg, augment, seed, sid, pos)
            out.append(SessionFeatures(sid, X, Y, t, b.trace.segment[t], b.n_frames))
        return out
    if compressed:
        raise ConfigError("compressed features need session directories (raw audio)")
    files = _eprf_files(src)
    if not args.labels:
        raise ConfigError("--labels is required with profile files")
    labels = _label_files(args.labels, len(files), [f.stem for f in files])
    for sid, (pf, lf) in enumerate(zip(files, labels)):
        prof, _ = read_eprf(pf, n_bands=len(cfg.bands))
        trace = read_trace(lf)
        n = prof[0].n_frames
        pos = np.arange(cfg.window_frames - 1, n, stride)
        X, Y, t = instance_matrix(prof, trace, cfg, augment, seed, sid, pos)
        out.append(SessionFeatures(sid, X, Y, t, trace.segment[t], n))
    return out


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args):
    rc = _run_config(args)
    scene = SceneSpec.load(args.scene) if args.scene else rc.scene
    seed = _seed(args)
    if args.trace:
        trace = read_trace(args.trace, rc.screen)
    else:
        trace = generate_session_trace(rc.screen, rc.protocol, session_seeds(seed, 1)[0], rc.frame)
    if args.remount:
        scene = remount(scene, np.random.default_rng([seed, args.session_id]), rc.frame,
                        rc.jitter_samples)
    sess = synthesize_session(scene, trace, rc.frame, [seed, args.session_id], rc.screen,
                              args.session_id)
    out = _out(args)
    meta = write_session(out, to_pcm16(sess.audio), trace, rc.frame, scene, seed,
                         args.session_id, wav=args.wav)
    _say(f"wrote {out} ({sess.n_frames} frames, config {meta['config_hash']})")


def cmd_gen_protocol(args):
    rc = _run_config(args)
    geom = rc.screen if not args.screen else type(rc.screen).load(args.screen)
    proto = rc.protocol
    if args.regions:
        proto = type(proto)(**dict(proto.to_dict(), n_regions=args.regions))
    n = args.sessions or proto.sessions
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    for i, ss in enumerate(session_seeds(_seed(args), n)):
        write_trace(out / f"session_{i:03d}.csv", generate_session_trace(geom, proto, ss, rc.frame))
    (out / "protocol.json").write_text(json.dumps(
        {"screen": geom.to_dict(), "protocol": proto.to_dict(), "seed": _seed(args),
         "sessions": n}, indent=2, sort_keys=True))
    _say(f"wrote {n} traces to {out}")


def cmd_preprocess(args):
    rc = _run_config(args)
    b = load_session(args.inp)
    prof = session_profiles(b.audio, b.cfg, not args.unfiltered, args.magnitude or rc.magnitude)
    out = _out(args)
    write_eprf(out, prof, b.config_hash)
    _say(f"wrote {len(prof)} channels x {prof[0].data.shape} to {out} (origin {prof[0].range_origin_px})")


def _gbrt_params(args, rc):
    over = {k: v for k, v in (("n_trees", args.n_trees), ("max_depth", args.max_depth),
                              ("learning_rate", args.learning_rate)) if v is not None}
    return type(rc.gbrt)(**dict(vars(rc.gbrt), **over, seed=_seed(args)))


def cmd_train(args):
    rc = _run_config(args)
    feats = _features_from_sources(args, rc, augment=rc.augment and not args.compressed,
                                   compressed=args.compressed)
    X = np.concatenate([f.X for f in feats])
    Y = np.concatenate([f.Y for f in feats])
    spec = ModelSpec(args.model, args.l2 if args.l2 is not None else rc.l2, _gbrt_params(args, rc))
    n_mics = rc.scene.n_mics
    meta = {"config_hash": rc.hash(_seed(args)), "features": "compressed" if args.compressed else "full",
            "n_channels": n_mics if args.compressed else len(rc.frame.bands) * n_mics,
            "n_mics": n_mics}
    model = spec.fit(X, Y, meta)
    out = _out(args)
    model.save(out)
    _say(f"trained {args.model} on {X.shape[0]} instances x {X.shape[1]} features -> {out}")


def _profile_features(args, rc, model):
    prof, _ = read_eprf(args.inp, n_bands=len(rc.frame.bands))
    trace = read_trace(args.labels) if args.labels else None
    n = prof[0].n_frames
    labels = trace if trace is not None else np.zeros((n, 2))
    X, Y, t = instance_matrix(prof, labels, rc.frame)
    return X, Y, t, trace


def cmd_infer(args):
    rc = _run_config(args)
    model = ModelArtifact.load(args.model)
    X, Y, t, trace = _profile_features(args, rc, model)
    pred = predict_features(model, X)
    err = angular_errors(pred, Y, rc.screen) if trace is not None else None
    out = _out(args)
    write_predictions(out, t, pred, Y if trace is not None else None, err)
    msg = f"wrote {len(t)} predictions to {out}"
    if err is not None:
        msg += f"; MGAE {err.mean():.3f} deg"
    _say(msg)


def cmd_calibrate(args):
    rc = _run_config(args)
    model = ModelArtifact.load(args.model)
    if not args.labels:
        raise ConfigError("--labels is required for calibration")
    X, Y, t, trace = _profile_features(args, rc, model)
    cal = trace.segment[t] == "calib"
    if not cal.any():
        raise ContractError("the trace has no calibration segment inside the profile")
    fitted = calibrate(model, (X[cal], Y[cal]), args.method or rc.calibration)
    out = _out(args)
    fitted.save(out)
    c = fitted.calibration
    _say(f"calibration A={np.round(c.matrix, 6).tolist()} b={np.round(c.offset, 3).tolist()}"
         f" ({c.form}{', degenerate anchors' if c.offset_only else ''}) -> {out}")


def cmd_evaluate(args):
    rc = _run_config(args)
    mode = args.mode.replace("-", "_")
    if args.inp:
        feats = _features_from_sources(args, rc, augment=False)
        train = {f.session_id: f for f in _features_from_sources(args, rc, augment=True)} \
            if rc.augment else None
    else:
        from .pipeline import session_features, simulate_sessions
        sims = simulate_sessions(rc, _seed(args))
        feats = [session_features(s, rc, False, _seed(args)) for s in sims]
        train = {s.session_id: session_features(s, rc, True, _seed(args)) for s in sims} \
            if rc.augment else None
    spec = ModelSpec(args.model, rc.l2, _gbrt_params(args, rc))
    report, rows = evaluate_protocol(feats, mode, spec, rc.screen, folds=args.folds,
                                     window_frames=rc.frame.window_frames,
                                     train_fraction=rc.train_fraction, train_sessions=train,
                                     calibration=rc.calibration)
    report["config_hash"] = rc.hash(_seed(args))
    out = _out(args)
    write_report(report, out)
    csv_path = Path(args.errors) if args.errors else out.with_suffix(".csv")
    with open(csv_path, "w") as f:
        f.write("session,frame_index,x_px,y_px,true_x_px,true_y_px,error_deg\n")
        for r in rows:
            f.write(",".join([str(r[0]), str(r[1])] + [repr(float(v)) for v in r[2:]]) + "\n")
    print(f"mean MGAE {report['mean_mgae_deg']:.3f} deg over {len(report['folds'])} fold(s)")


def cmd_quantize(args):
    rc = _run_config(args)
    b = load_session(args.inp)
    spec = rc.quant
    spec.validate(b.cfg)
    origin = unfiltered_origin(b.audio, b.cfg, spec)
    raw = raw_windows(b.audio, b.cfg, spec, origin)                   # (T, L, M)
    w = spec.window_frames
    ends = np.arange(w - 1, raw.shape[0], rc.instance_stride)
    data = np.empty((ends.size, spec.raw_len, w, spec.n_mics), dtype=np.int8)
    scales = np.empty(ends.size)
    for i, t in enumerate(ends):
        q = quantize(raw[t - w + 1:t + 1].transpose(1, 0, 2))
        data[i], scales[i] = q.data, q.scale
    tx = quantize(tx_prefix(b.cfg, spec))
    out = _out(args)
    with open(out, "wb") as f:
        np.savez(f, raw=data, raw_scale=scales, tx=tx.data, tx_scale=np.array(tx.scale),
                 t_end=ends, labels=b.trace.xy[ends], origin=np.array(origin),
                 config_hash=np.array(b.config_hash))
    _say(f"wrote {ends.size} int8 instances {data.shape[1:]} to {out}")


def cmd_bench_quant(args):
    rc = _run_config(args)
    model = ModelArtifact.load(args.model)
    b = load_session(args.session)
    audio = b.audio
    spec = rc.quant
    pred_q, t_end, lat = quant_pipeline_predict(audio, model, b.cfg, spec)
    main = b.trace.segment[t_end] == "main"
    truth = b.trace.xy[t_end]
    Xf, Yf, tf = compressed_features(audio, b.trace, b.cfg, spec, positions=t_end)
    pred_f = predict_features(model, Xf)
    mf = b.trace.segment[tf] == "main"
    report = {
        "mean_latency_ms": float(lat.mean()),
        "p99_latency_ms": float(np.percentile(lat, 99)),
        "fps_sustained": float(1e3 * lat.size / lat.sum()),
        "mgae_float_deg": float(angular_errors(pred_f[mf], Yf[mf], rc.screen).mean()),
        "mgae_quant_deg": float(angular_errors(pred_q[main], truth[main], rc.screen).mean()),
        "n_frames": int(lat.size),
        "config_hash": b.config_hash,
    }
    out = Path(args.report or _out(args))
    out.write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report, sort_keys=True))


def cmd_filter_dump(args):
    rc = _run_config(args)
    band = rc.frame.band(args.band)
    f = design_butterworth(BandPassSpec.for_band(band, rc.frame, args.order))
    text = f.dump() + "\n"
    if getattr(args, "out", None):
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args):
    rc = _run_config(args)
    report = run_end_to_end(rc, _seed(args), noise_sweep=not args.no_noise_sweep,
                            quant=not args.no_quant, log=_say)
    out = _out(args, "report.json")
    write_report(report, out)
    print(f"report {out} hash {report['report_hash']}")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="run configuration JSON")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="top-level seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output path")

    p = argparse.ArgumentParser(prog="echogaze", parents=[common],
                                description="Acoustic gaze tracking toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="synthesize one session directory")
    s.add_argument("--scene")
    s.add_argument("--trace")
    s.add_argument("--session-id", type=int, default=0)
    s.add_argument("--remount", action="store_true", help="draw a mounting jitter from the seed")
    s.add_argument("--wav", action="store_true", help="also write audio.wav")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("gen-protocol", parents=[common], help="write fixation traces")
    s.add_argument("--screen")
    s.add_argument("--sessions", type=int)
    s.add_argument("--regions", type=int)
    s.set_defaults(func=cmd_gen_protocol)

    s = sub.add_parser("preprocess", parents=[common], help="session audio to echo profiles")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--magnitude", action="store_true")
    s.add_argument("--unfiltered", action="store_true")
    s.set_defaults(func=cmd_preprocess)

    def model_opts(s):
        s.add_argument("--n-trees", type=int)
        s.add_argument("--max-depth", type=int)
        s.add_argument("--learning-rate", type=float)
        s.add_argument("--l2", type=float)

    s = sub.add_parser("train", parents=[common], help="fit a gaze model")
    s.add_argument("--model", choices=["gbrt", "linear"], default="gbrt")
    s.add_argument("--in", dest="inp", required=True, help="session dirs or .eprf files")
    s.add_argument("--labels", help="trace CSV file or directory (with .eprf input)")
    s.add_argument("--compressed", action="store_true",
                   help="train on 30-row int8-path instances from raw audio")
    model_opts(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="predict gaze for a profile file")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--labels", help="optional trace CSV to score against")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("calibrate", parents=[common], help="fit the per-session output correction")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--method", choices=["affine", "offset"])
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("evaluate", parents=[common], help="cross-session or in-session MGAE")
    s.add_argument("--mode", choices=["cross-session", "in-session"], default="cross-session")
    s.add_argument("--folds", type=int, default=2)
    s.add_argument("--model", choices=["gbrt", "linear"], default="gbrt")
    s.add_argument("--in", dest="inp", help="session directories (default: simulate)")
    s.add_argument("--labels")
    s.add_argument("--errors", help="per-instance error CSV (default: next to --out)")
    model_opts(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("quantize", parents=[common], help="int8 compressed instances of a session")
    s.add_argument("--in", dest="inp", required=True)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("bench-quant", parents=[common], help="time and score the int8 path")
    s.add_argument("--model", required=True)
    s.add_argument("--session", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_bench_quant)

    s = sub.add_parser("filter-dump", parents=[common], help="print band-pass biquad coefficients")
    s.add_argument("--band", type=int, default=1)
    s.add_argument("--order", type=int, default=4)
    s.set_defaults(func=cmd_filter_dump)

    s = sub.add_parser("run", parents=[common], help="full simulated study and report")
    s.add_argument("--no-noise-sweep", action="store_true")
    s.add_argument("--no-quant", action="store_true")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args.func(args)
    except VALIDATION_ERRORS as e:
        _say(f"error: {e}")
        return 2
    except Exception as e:          # noqa: BLE001
        _say(f"runtime error: {type(e).__name__}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
