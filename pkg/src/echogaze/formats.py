"""File formats: PCM session directories, trace CSV and binary echo profiles.

Every artifact carries the config hash of the run that produced it, and the
loaders reject files whose hash does not match.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .echo import EchoProfile
from .errors import DataFormatError
from .fmcw import FrameConfig
from .protocol import Fixation, GazeTrace, ScreenGeometry
from .sim import SceneSpec

EPRF_MAGIC = b"EPRF"
EPRF_VERSION = 1
EPRF_HEADER = "<4sHIIHi"
HASH_TAG = b"CFGH"
PCM_SCALE = 32767.0


def config_hash(obj) -> str:
    """Short SHA-256 of the canonical JSON of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# PCM audio

def to_pcm16(audio) -> np.ndarray:
    """Float audio in [-1, 1] to little-endian int16 (values outside are clipped)."""
    a = np.clip(np.asarray(audio, dtype=np.float64), -1.0, 1.0)
    return np.round(a * PCM_SCALE).astype("<i2")


def from_pcm16(pcm) -> np.ndarray:
    return np.asarray(pcm, dtype=np.float64) / PCM_SCALE


def write_wav(path, pcm: np.ndarray, sample_rate_hz: int):
    """Wrap int16 interleaved PCM (n_samples, n_channels) in a standard WAV header."""
    with wave.open(str(path), "wb") as w:
        w.setnchannels(pcm.shape[1])
        w.setsampwidth(2)
        w.setframerate(int(sample_rate_hz))
        w.writeframes(np.ascontiguousarray(pcm, dtype="<i2").tobytes())


# ---------------------------------------------------------------------------
# traces

def write_trace(path, trace: GazeTrace):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame_index", "x_px", "y_px", "segment"])
        for i, (x, y, s) in enumerate(zip(trace.x_px, trace.y_px, trace.segment)):
            w.writerow([i, repr(float(x)), repr(float(y)), s])


def read_trace(path, geom: ScreenGeometry | None = None) -> GazeTrace:
    """Read a trace CSV; frame indices must run 0, 1, 2, ... without gaps.

    The segment column is optional (missing means "main"). Fixations are
    rebuilt from runs of identical labels.
    """
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"trace file not found: {path}")
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise DataFormatError(f"{path}: trace is empty")
    missing = {"frame_index", "x_px", "y_px"} - set(rows[0])
    if missing:
        raise DataFormatError(f"{path}: missing columns {sorted(missing)}")
    try:
        idx = np.array([int(r["frame_index"]) for r in rows])
        x = np.array([float(r["x_px"]) for r in rows])
        y = np.array([float(r["y_px"]) for r in rows])
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}") from None
    if not np.array_equal(idx, np.arange(idx.size)):
        raise DataFormatError(f"{path}: frame_index must count up from 0 without gaps")
    seg = np.array([r.get("segment") or "main" for r in rows])
    bad = set(seg.tolist()) - {"calib", "main"}
    if bad:
        raise DataFormatError(f"{path}: unknown segment labels {sorted(bad)}")
    if geom is not None and np.any((x < 0) | (x >= geom.width_px) | (y < 0) | (y >= geom.height_px)):
        raise DataFormatError(f"{path}: label outside the screen")
    change = np.r_[True, (x[1:] != x[:-1]) | (y[1:] != y[:-1]) | (seg[1:] != seg[:-1])]
    starts = np.nonzero(change)[0]
    ends = np.r_[starts[1:], idx.size]
    fix = [Fixation(-1 if seg[s] == "calib" else -2, float(x[s]), float(y[s]), int(s), int(e),
                    str(seg[s])) for s, e in zip(starts, ends)]
    return GazeTrace(x, y, seg, fix)


# ---------------------------------------------------------------------------
# session directories

@dataclass
class SessionBundle:
    pcm: np.ndarray            # (n_samples, n_channels) int16
    trace: GazeTrace
    cfg: FrameConfig
    scene: SceneSpec
    meta: dict
    path: Path | None = None

    @property
    def audio(self) -> np.ndarray:
        return from_pcm16(self.pcm)

    @property
    def config_hash(self) -> str:
        return self.meta["config_hash"]

    @property
    def n_frames(self) -> int:
        return self.pcm.shape[0] // self.cfg.frame_len


def session_meta(cfg: FrameConfig, scene: SceneSpec, seed, session_id: int, pcm: np.ndarray,
                 extra: dict | None = None) -> dict:
    core = {"frame_config": cfg.to_dict(), "scene": scene.to_dict(),
            "seed": seed, "session_id": int(session_id)}
    meta = dict(core)
    meta.update(extra or {})
    meta.update({
        "n_channels": int(pcm.shape[1]),
        "sample_rate_hz": cfg.sample_rate_hz,
        "n_samples": int(pcm.shape[0]),
        "audio_sha256": hashlib.sha256(pcm.astype("<i2").tobytes()).hexdigest(),
        "config_hash": config_hash(core),
    })
    return meta


def write_session(path, pcm: np.ndarray, trace: GazeTrace, cfg: FrameConfig, scene: SceneSpec,
                  seed, session_id: int = 0, wav: bool = False, extra: dict | None = None) -> dict:
    """Write audio.pcm, labels.csv and meta.json (plus audio.wav if asked)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    pcm = np.ascontiguousarray(pcm, dtype="<i2")
    (path / "audio.pcm").write_bytes(pcm.tobytes())
    write_trace(path / "labels.csv", trace)
    meta = session_meta(cfg, scene, seed, session_id, pcm, extra)
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    if wav:
        write_wav(path / "audio.wav", pcm, cfg.sample_rate_hz)
    return meta


def load_session(path, expect_hash: str | None = None) -> SessionBundle:
    """Load and cross-check a session directory."""
    path = Path(path)
    for name in ("audio.pcm", "labels.csv", "meta.json"):
        if not (path / name).is_file():
            raise DataFormatError(f"{path}: missing {name}")
    try:
        meta = json.loads((path / "meta.json").read_text())
        cfg = FrameConfig.from_dict(meta["frame_config"])
        scene = SceneSpec.from_dict(meta["scene"])
        n_ch, n_samples = int(meta["n_channels"]), int(meta["n_samples"])
        fs = meta["sample_rate_hz"]
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{path}/meta.json is malformed: {e}") from None
    core = {k: meta.get(k) for k in ("frame_config", "scene", "seed", "session_id")}
    if config_hash(core) != meta.get("config_hash"):
        raise DataFormatError(f"{path}: config hash does not match meta.json contents")
    if expect_hash is not None and meta["config_hash"] != expect_hash:
        raise DataFormatError(f"{path}: session belongs to run {meta['config_hash']}, "
                              f"expected {expect_hash}")
    if fs != cfg.sample_rate_hz:
        raise DataFormatError(f"{path}: sample rate {fs} disagrees with frame config")
    if n_ch != scene.n_mics:
        raise DataFormatError(f"{path}: meta declares {n_ch} channels, scene has {scene.n_mics} mics")
    raw = (path / "audio.pcm").read_bytes()
    if len(raw) % (2 * n_ch):
        raise DataFormatError(f"{path}: audio.pcm size is not a whole number of "
                              f"{n_ch}-channel int16 samples")
    if len(raw) < 2 * n_ch * n_samples:
        raise DataFormatError(f"{path}: audio.pcm is truncated ({len(raw)} bytes, "
                              f"expected {2 * n_ch * n_samples})")
    if len(raw) != 2 * n_ch * n_samples:
        raise DataFormatError(f"{path}: audio.pcm holds {len(raw) // (2 * n_ch)} samples per "
                              f"channel at {n_ch} channels, meta says {n_samples}")
    if "audio_sha256" in meta and hashlib.sha256(raw).hexdigest() != meta["audio_sha256"]:
        raise DataFormatError(f"{path}: audio.pcm does not match its recorded checksum")
    pcm = np.frombuffer(raw, dtype="<i2").reshape(n_samples, n_ch)
    trace = read_trace(path / "labels.csv")
    n_frames = n_samples // cfg.frame_len
    if len(trace) > n_frames:
        raise DataFormatError(f"{path}: labels reach frame {len(trace) - 1}, "
                              f"audio holds {n_frames} frames")
    return SessionBundle(pcm, trace, cfg, scene, meta, path)


# ---------------------------------------------------------------------------
# echo profiles

def write_eprf(path, profiles: list[EchoProfile], cfg_hash: str | None = None):
    """Channel-major float32 profile stack with an optional config-hash trailer."""
    if not profiles:
        raise DataFormatError("no profiles to write")
    data = np.stack([p.data for p in profiles]).astype("<f4")      # (C, rows, cols)
    origins = {p.range_origin_px for p in profiles}
    if len(origins) != 1:
        raise DataFormatError("all channels must share one range origin")
    c, r, n = data.shape
    head = struct.pack(EPRF_HEADER, EPRF_MAGIC, EPRF_VERSION, r, n, c, origins.pop())
    tail = b""
    if cfg_hash is not None:
        h = cfg_hash.encode()
        tail = HASH_TAG + struct.pack("<H", len(h)) + h
    Path(path).write_bytes(head + data.tobytes() + tail)


def read_eprf(path, expect_hash: str | None = None, n_bands: int = 2):
    """Profiles from an EPRF file and the stored config hash (or None).

    Channels are band-major, so channel ``c`` is mic ``c % n_mics + 1`` of
    band ``c // n_mics + 1`` with ``n_mics = channels // n_bands``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataFormatError(f"profile file not found: {path}")
    blob = path.read_bytes()
    n_head = struct.calcsize(EPRF_HEADER)
    if len(blob) < n_head:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, rows, cols, chans, origin = struct.unpack(EPRF_HEADER, blob[:n_head])
    if magic != EPRF_MAGIC:
        raise DataFormatError(f"{path}: not an echo profile file")
    if version != EPRF_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    n_bytes = 4 * rows * cols * chans
    if len(blob) < n_head + n_bytes:
        raise DataFormatError(f"{path}: truncated profile data")
    data = np.frombuffer(blob, dtype="<f4", count=rows * cols * chans, offset=n_head)
    data = data.reshape(chans, rows, cols).astype(np.float32)
    tail = blob[n_head + n_bytes:]
    stored = None
    if tail:
        if tail[:4] != HASH_TAG or len(tail) < 6:
            raise DataFormatError(f"{path}: unexpected trailing bytes")
        (n,) = struct.unpack("<H", tail[4:6])
        stored = tail[6:6 + n].decode()
    if expect_hash is not None and stored != expect_hash:
        raise DataFormatError(f"{path}: config hash {stored} does not match {expect_hash}")
    n_mics = max(1, chans // n_bands)
    profiles = [EchoProfile(data[c], (c % n_mics + 1, c // n_mics + 1), int(origin))
                for c in range(chans)]
    return profiles, stored


def write_predictions(path, t_end, pred, truth=None, errors_deg=None):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        head = ["frame_index", "x_px", "y_px"]
        if truth is not None:
            head += ["true_x_px", "true_y_px"]
        if errors_deg is not None:
            head += ["error_deg"]
        w.writerow(head)
        for i in range(len(t_end)):
            row = [int(t_end[i]), repr(float(pred[i][0])), repr(float(pred[i][1]))]
            if truth is not None:
                row += [repr(float(truth[i][0])), repr(float(truth[i][1]))]
            if errors_deg is not None:
                row += [repr(float(errors_deg[i]))]
            w.writerow(row)
