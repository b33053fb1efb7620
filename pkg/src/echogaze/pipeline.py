"""End-to-end runs: simulate sessions, build instances, train, calibrate, evaluate.

All randomness flows from one top-level seed: each session gets its own
child seed sequence, split further into trace, mounting and noise streams.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .echo import instance_matrix, session_profiles
from .errors import ConfigError
from .fmcw import FrameConfig
from .formats import config_hash, from_pcm16, to_pcm16
from .metrics import angular_errors
from .model import (CALIBRATION_METHODS, GBRTParams, ModelArtifact, calibrate,
                    feature_importance, fit_gbrt, fit_linear, raw_predict)
from .protocol import GazeTrace, ProtocolSpec, ScreenGeometry, generate_session_trace
from .quant import CompressedInstanceSpec, compressed_features
from .sim import (ENVIRONMENT_LEVELS_DBA, NoiseProfile, SceneSpec, default_scene, remount,
                  synthesize_session)

IN_SESSION_SPLIT = "contiguous: first 80% of each session's frames train, last 20% test; " \
                   "windows straddling the boundary are dropped"


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on besides the seed."""

    frame: FrameConfig = field(default_factory=FrameConfig)
    screen: ScreenGeometry = field(default_factory=ScreenGeometry)
    protocol: ProtocolSpec = field(default_factory=lambda: ProtocolSpec(n_regions=25))
    scene: SceneSpec = field(default_factory=default_scene)
    n_sessions: int = 8
    n_train: int = 6
    jitter_samples: float = 2.0
    instance_stride: int = 8          # frames between consecutive window ends
    augment: bool = True              # random crop offsets on training instances
    filtered: bool = True
    magnitude: bool = False
    l2: float = 1.0
    gbrt: GBRTParams = field(default_factory=GBRTParams)
    train_fraction: float = 0.8       # in-session split point
    noise_levels_dba: dict = field(default_factory=lambda: dict(ENVIRONMENT_LEVELS_DBA))
    quant: CompressedInstanceSpec = field(default_factory=CompressedInstanceSpec)
    calibration: str = "offset"       # "offset" or "affine", see model.calibrate

    def __post_init__(self):
        if self.n_sessions < 2 or not 1 <= self.n_train < self.n_sessions:
            raise ConfigError("need at least 2 sessions and 1 <= n_train < n_sessions")
        if self.instance_stride < 1 or not 0 < self.train_fraction < 1:
            raise ConfigError("instance_stride must be >= 1 and train_fraction in (0, 1)")
        if self.jitter_samples < 0:
            raise ConfigError("jitter_samples must be non-negative")
        if self.calibration not in CALIBRATION_METHODS:
            raise ConfigError(f"calibration must be one of {CALIBRATION_METHODS}")

    def to_dict(self) -> dict:
        return {
            "frame": self.frame.to_dict(), "screen": self.screen.to_dict(),
            "protocol": self.protocol.to_dict(), "scene": self.scene.to_dict(),
            "n_sessions": self.n_sessions, "n_train": self.n_train,
            "jitter_samples": self.jitter_samples, "instance_stride": self.instance_stride,
            "augment": self.augment, "filtered": self.filtered, "magnitude": self.magnitude,
            "l2": self.l2, "gbrt": asdict(self.gbrt), "train_fraction": self.train_fraction,
            "noise_levels_dba": dict(self.noise_levels_dba), "quant": asdict(self.quant),
            "calibration": self.calibration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config fields: {sorted(unknown)}")
        conv = {"frame": FrameConfig.from_dict, "screen": ScreenGeometry.from_dict,
                "protocol": ProtocolSpec.from_dict, "scene": SceneSpec.from_dict,
                "gbrt": lambda v: GBRTParams(**v), "quant": lambda v: CompressedInstanceSpec(**v)}
        try:
            for k, f in conv.items():
                if k in d:
                    d[k] = f(d[k])
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def hash(self, seed) -> str:
        return config_hash({"config": self.to_dict(), "seed": seed})


# ---------------------------------------------------------------------------
# sessions and features

@dataclass
class SimSession:
    session_id: int
    pcm: np.ndarray                # (n_samples, n_mics) int16
    trace: GazeTrace
    scene: SceneSpec               # mounted scene, including its jitter
    noise_seed: np.random.SeedSequence


@dataclass
class SessionFeatures:
    session_id: int
    X: np.ndarray
    Y: np.ndarray
    t_end: np.ndarray
    segment: np.ndarray
    n_frames: int


def simulate_sessions(rc: RunConfig, seed: int) -> list[SimSession]:
    """Traces, mountings and audio for ``rc.n_sessions`` sessions."""
    out = []
    for sid, ss in enumerate(np.random.SeedSequence(seed).spawn(rc.n_sessions)):
        trace_ss, mount_ss, noise_ss = ss.spawn(3)
        trace = generate_session_trace(rc.screen, rc.protocol, trace_ss, rc.frame)
        scene = remount(rc.scene, np.random.default_rng(mount_ss), rc.frame, rc.jitter_samples)
        out.append(resynthesize(SimSession(sid, None, trace, scene, noise_ss), rc))
    return out


def resynthesize(s: SimSession, rc: RunConfig, noise_dba: float | None = None) -> SimSession:
    """(Re)render a session's audio, optionally at another white-noise level."""
    scene = s.scene
    if noise_dba is not None:
        scene = replace(scene, noise=NoiseProfile("white", float(noise_dba)))
    sess = synthesize_session(scene, s.trace, rc.frame, s.noise_seed, rc.screen, s.session_id)
    return SimSession(s.session_id, to_pcm16(sess.audio), s.trace, s.scene, s.noise_seed)


def session_features(s: SimSession, rc: RunConfig, augment: bool, seed: int) -> SessionFeatures:
    """Instances ending every ``instance_stride`` frames of a session."""
    profiles = session_profiles(from_pcm16(s.pcm), rc.frame, rc.filtered, rc.magnitude)
    n_frames = profiles[0].n_frames
    pos = np.arange(rc.frame.window_frames - 1, n_frames, rc.instance_stride)
    X, Y, t = instance_matrix(profiles, s.trace, rc.frame, augment, seed, s.session_id, pos)
    return SessionFeatures(s.session_id, X, Y, t, s.trace.segment[t], n_frames)


def quant_session_features(s: SimSession, rc: RunConfig, quantized: bool) -> SessionFeatures:
    audio = from_pcm16(s.pcm)
    n_frames = audio.shape[0] // rc.frame.frame_len
    pos = np.arange(rc.quant.window_frames - 1, n_frames, rc.instance_stride)
    X, Y, t = compressed_features(audio, s.trace, rc.frame, rc.quant, pos, quantized=quantized)
    return SessionFeatures(s.session_id, X, Y, t, s.trace.segment[t], n_frames)


# ---------------------------------------------------------------------------
# training and evaluation

@dataclass(frozen=True)
class ModelSpec:
    kind: str = "gbrt"
    l2: float = 1.0
    gbrt: GBRTParams = field(default_factory=GBRTParams)

    def fit(self, X, Y, meta: dict | None = None) -> ModelArtifact:
        if self.kind == "linear":
            model = fit_linear((X, Y), self.l2)
        elif self.kind == "gbrt":
            model = fit_gbrt((X, Y), self.gbrt)
        else:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        model.meta.update(meta or {})
        return model


def _stack(parts, attr):
    return np.concatenate([getattr(p, attr) for p in parts])


def _score(model: ModelArtifact, test: SessionFeatures, geom: ScreenGeometry,
           method: str = "offset") -> dict:
    """Raw and calibrated per-instance errors on one test session's main segment.

    The plain affine correction is always scored too, for comparison.
    """
    main, cal = test.segment == "main", test.segment == "calib"
    calib = (test.X[cal], test.Y[cal])
    raw = raw_predict(model, test.X[main])
    out = {"err_raw": angular_errors(raw, test.Y[main], geom)}
    for key, m in (("", method), ("_affine", "affine")):
        fitted = calibrate(model, calib, m).calibration
        pred = fitted.apply(raw)
        out["err" + key] = angular_errors(pred, test.Y[main], geom)
        out["pred" + key] = pred
        out["form" + key] = fitted.form
    return out


def _fold_report(model, tests, geom, train_ids, method: str = "offset"):
    per_session, rows = [], []
    errs = {"err_raw": [], "err": [], "err_affine": []}
    for t in tests:
        sc = _score(model, t, geom, method)
        for k in errs:
            errs[k].append(sc[k])
        per_session.append({"session": t.session_id, "n_test": int(sc["err"].size),
                            "mgae_raw_deg": float(sc["err_raw"].mean()),
                            "mgae_deg": float(sc["err"].mean()),
                            "mgae_affine_deg": float(sc["err_affine"].mean()),
                            "calibration": sc["form"]})
        main = t.segment == "main"
        for k in range(sc["err"].size):
            rows.append((t.session_id, int(t.t_end[main][k]), *sc["pred"][k], *t.Y[main][k],
                         sc["err"][k]))
    cat = {k: np.concatenate(v) for k, v in errs.items()}
    return {"train_sessions": [int(i) for i in train_ids],
            "test_sessions": [t.session_id for t in tests],
            "calibration_method": method,
            "mgae_raw_deg": float(cat["err_raw"].mean()), "mgae_deg": float(cat["err"].mean()),
            "mgae_affine_deg": float(cat["err_affine"].mean()),
            "per_session": per_session}, rows


def cross_session_folds(n_sessions: int, folds: int) -> list[list[int]]:
    """Contiguous groups of held-out sessions; every session is tested exactly once."""
    if n_sessions < 2 or not 2 <= folds <= n_sessions:
        raise ConfigError(f"cannot make {folds} folds from {n_sessions} sessions")
    return [list(map(int, g)) for g in np.array_split(np.arange(n_sessions), folds)]


def in_session_split(f: SessionFeatures, window_frames: int, train_fraction: float = 0.8):
    """Masks of train and test instances for a contiguous split of one session.

    Train windows end before the boundary frame, test windows start at or
    after it; windows covering both sides are dropped.
    """
    boundary = int(np.floor(train_fraction * f.n_frames))
    train = f.t_end < boundary
    test = (f.t_end - (window_frames - 1)) >= boundary
    return train, test, boundary


def _subset(f: SessionFeatures, mask) -> SessionFeatures:
    return SessionFeatures(f.session_id, f.X[mask], f.Y[mask], f.t_end[mask], f.segment[mask],
                           f.n_frames)


def evaluate_protocol(sessions: list[SessionFeatures], mode: str, model_spec: ModelSpec,
                      geom: ScreenGeometry, folds=2, window_frames: int = 26,
                      train_fraction: float = 0.8, train_sessions=None,
                      calibration: str = "offset"):
    """Per-fold and mean MGAE for cross-session or in-session evaluation.

    ``folds`` is a fold count or an explicit list of held-out session groups
    (cross-session only). ``train_sessions`` optionally replaces the training
    features (e.g. augmented copies) keyed by session id. Each test session is
    calibrated on its own calibration segment. Returns ``(report, rows)``
    where ``rows`` holds per-instance errors.
    """
    by_id = {s.session_id: s for s in sessions}
    train_src = train_sessions or by_id
    fold_reports, rows = [], []
    if mode == "cross_session":
        groups = cross_session_folds(len(sessions), folds) if isinstance(folds, int) else folds
        ids = sorted(by_id)
        for g in groups:
            test_ids = [ids[i] for i in g] if isinstance(folds, int) else list(g)
            train_ids = [i for i in ids if i not in test_ids]
            if not train_ids:
                raise ConfigError("a fold has no training sessions")
            parts = [train_src[i] for i in train_ids]
            model = model_spec.fit(_stack(parts, "X"), _stack(parts, "Y"))
            rep, r = _fold_report(model, [by_id[i] for i in test_ids], geom, train_ids,
                                  calibration)
            fold_reports.append(rep)
            rows += r
    elif mode == "in_session":
        if not sessions:
            raise ConfigError("in-session evaluation needs at least one session")
        trains, tests = [], []
        for s in sessions:
            src = train_src.get(s.session_id, s) if isinstance(train_src, dict) else s
            tr, _, boundary = in_session_split(src, window_frames, train_fraction)
            _, te, _ = in_session_split(s, window_frames, train_fraction)
            if not tr.any() or not te.any():
                raise ConfigError(f"session {s.session_id} is too short to split")
            trains.append(_subset(src, tr))
            # calibration frames stay available; the scored set is the test block
            cal = s.segment == "calib"
            test = _subset(s, te | cal)
            test.segment = np.where(te[te | cal], "main", "calib")
            tests.append(test)
        model = model_spec.fit(_stack(trains, "X"), _stack(trains, "Y"))
        rep, rows = _fold_report(model, tests, geom, [s.session_id for s in sessions],
                                 calibration)
        rep["split"] = IN_SESSION_SPLIT
        fold_reports.append(rep)
    else:
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    report = {
        "mode": mode,
        "model": model_spec.kind,
        "folds": fold_reports,
        "mean_mgae_deg": float(np.mean([f["mgae_deg"] for f in fold_reports])),
        "mean_mgae_raw_deg": float(np.mean([f["mgae_raw_deg"] for f in fold_reports])),
    }
    return report, rows


def report_digest(report: dict) -> str:
    text = json.dumps(report, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def run_end_to_end(rc: RunConfig | None = None, seed: int = 0, noise_sweep: bool = True,
                   quant: bool = True, log=None) -> dict:
    """Simulate, train and evaluate; returns a JSON-ready, seed-deterministic report.

    Sessions ``0 .. n_train-1`` train, the rest test. Reported: cross-session
    MGAE of both models before and after calibration, in-session GBRT MGAE,
    GBRT MGAE on the test sessions re-rendered at each noise level, float and
    quantized compressed-path MGAE, and the GBRT channel importance table.
    """
    rc = rc or RunConfig()
    log = log or (lambda msg: None)
    geom, w = rc.screen, rc.frame.window_frames
    sims = simulate_sessions(rc, seed)
    log(f"simulated {len(sims)} sessions")
    feats = [session_features(s, rc, False, seed) for s in sims]
    train_feats = {s.session_id: session_features(s, rc, True, seed) for s in sims} \
        if rc.augment else None
    log("built instances")
    test_ids = list(range(rc.n_train, rc.n_sessions))
    gbrt = ModelSpec("gbrt", rc.l2, rc.gbrt)
    linear = ModelSpec("linear", rc.l2, rc.gbrt)

    report = {"config_hash": rc.hash(seed), "seed": seed,
              "split": {"train_sessions": list(range(rc.n_train)), "test_sessions": test_ids},
              "n_features": int(feats[0].X.shape[1]),
              "n_train_instances": int(sum(f.X.shape[0] for f in feats[:rc.n_train]))}
    cross = {}
    models = {}
    for spec in (linear, gbrt):
        parts = [(train_feats or dict(enumerate(feats)))[i] for i in range(rc.n_train)]
        model = spec.fit(_stack(parts, "X"), _stack(parts, "Y"),
                         {"config_hash": report["config_hash"],
                          "n_channels": len(rc.frame.bands) * rc.scene.n_mics,
                          "n_mics": rc.scene.n_mics})
        models[spec.kind] = model
        rep, _ = _fold_report(model, [feats[i] for i in test_ids], geom, range(rc.n_train),
                                  rc.calibration)
        cross[spec.kind] = rep
        log(f"cross-session {spec.kind}: raw {rep['mgae_raw_deg']:.2f} deg, "
            f"calibrated {rep['mgae_deg']:.2f} deg")
    report["cross_session"] = cross

    ins, _ = evaluate_protocol(feats, "in_session", gbrt, geom, window_frames=w,
                               train_fraction=rc.train_fraction, train_sessions=train_feats,
                               calibration=rc.calibration)
    report["in_session"] = {"gbrt": ins["folds"][0]}
    log(f"in-session gbrt: calibrated {ins['mean_mgae_deg']:.2f} deg")

    imp = feature_importance(models["gbrt"])
    report["feature_importance"] = {f"mic{m}_band{b}": round(v, 6) for (m, b), v in imp.items()}

    if noise_sweep:
        sweep = {}
        for name, level in rc.noise_levels_dba.items():
            noisy = [session_features(resynthesize(sims[i], rc, level), rc, False, seed)
                     for i in test_ids]
            rep, _ = _fold_report(models["gbrt"], noisy, geom, range(rc.n_train),
                                  rc.calibration)
            sweep[name] = {"level_dba": level, "mgae_raw_deg": rep["mgae_raw_deg"],
                           "mgae_deg": rep["mgae_deg"]}
            log(f"noise {name} {level} dB(A): raw {rep['mgae_raw_deg']:.2f} deg")
        report["noise_sweep"] = sweep

    if quant:
        qtrain = [quant_session_features(sims[i], rc, False) for i in range(rc.n_train)]
        qmodel = gbrt.fit(_stack(qtrain, "X"), _stack(qtrain, "Y"))
        out = {}
        for label, quantized in (("float", False), ("quant", True)):
            tests = [quant_session_features(sims[i], rc, quantized) for i in test_ids]
            rep, _ = _fold_report(qmodel, tests, geom, range(rc.n_train),
                                  rc.calibration)
            out[f"mgae_{label}_raw_deg"] = rep["mgae_raw_deg"]
            out[f"mgae_{label}_deg"] = rep["mgae_deg"]
        report["quant"] = out
        log(f"compressed path: float {out['mgae_float_raw_deg']:.2f} deg, "
            f"int8 {out['mgae_quant_raw_deg']:.2f} deg")
    report["report_hash"] = report_digest(report)
    return report


def write_report(report: dict, path):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))
