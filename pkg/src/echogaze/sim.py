"""Parametric eye/face reflector scene that produces labelled multi-mic audio.

Geometry is in metres in a head-fixed frame: x points to the wearer's left,
y up, z forward out of the face; the glasses front sits at z = 0. Gaze is
given in normalised screen coordinates (both axes in [-1, 1]) and moves each
reflector by ``gaze @ gaze_coupling``.

Every frame is synthesised as a circular shift of the (repeating) transmit
chirp, which is exact for a static scene. Fractional delays use linear
interpolation between neighbouring samples.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError
from .fmcw import FrameConfig, chirp_bank
from .protocol import GazeTrace, ScreenGeometry

# 94 dB SPL reads as a -26 dBFS sine on the reference MEMS microphone.
DBFS_AT_94DB = -26.0


def a_weighting_db(f) -> np.ndarray:
    """IEC 61672 A-weighting gain in dB."""
    f2 = np.asarray(f, dtype=np.float64) ** 2
    ra = (12194.0**2 * f2**2) / (
        (f2 + 20.6**2) * np.sqrt((f2 + 107.7**2) * (f2 + 737.9**2)) * (f2 + 12194.0**2))
    with np.errstate(divide="ignore"):
        return 20 * np.log10(ra) + 2.0


def white_noise_a_correction_db(sample_rate_hz: float, n_points: int = 20001) -> float:
    """A-weighted minus unweighted level of white noise band-limited to Nyquist."""
    f = np.linspace(0, sample_rate_hz / 2, n_points)[1:]
    return float(10 * np.log10(np.mean(10 ** (a_weighting_db(f) / 10))))


@dataclass(frozen=True)
class LevelReference:
    """Digital-to-acoustic level mapping for noise overlays.

    ``floor_dba`` is the reference zero: targets at or below it add no noise.
    """

    dbfs_at_94db: float = DBFS_AT_94DB
    floor_dba: float = 0.0

    def rms_for_level(self, level_dba: float) -> float:
        """Digital RMS whose A-weighted level equals ``level_dba``."""
        if level_dba <= self.floor_dba:
            return 0.0
        rms_94 = 10 ** (self.dbfs_at_94db / 20) / np.sqrt(2)
        return float(rms_94 * 10 ** ((level_dba - 94.0) / 20))

    def level_for_rms(self, rms: float) -> float:
        rms_94 = 10 ** (self.dbfs_at_94db / 20) / np.sqrt(2)
        return float(94.0 + 20 * np.log10(rms / rms_94))


@dataclass(frozen=True)
class NoiseProfile:
    kind: str = "white"                   # "white" or "recorded-sample"
    target_level_dba: float = 0.0
    reference: LevelReference = field(default_factory=LevelReference)
    sample: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("white", "recorded-sample"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.target_level_dba <= 100.0:
            raise ConfigError("target_level_dba must lie in [0, 100]")
        if self.kind == "recorded-sample" and (self.sample is None or np.size(self.sample) == 0):
            raise ConfigError("recorded-sample noise needs a non-empty sample")

    def to_dict(self):
        d = {"kind": self.kind, "target_level_dba": self.target_level_dba,
             "reference": asdict(self.reference)}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "reference" in d:
            d["reference"] = LevelReference(**d["reference"])
        return cls(**d)


# Levels measured in the four noisy environments (dB(A)).
ENVIRONMENT_LEVELS_DBA = {"street": 70.8, "music": 64.5, "cafe": 54.5, "driving": 65.6}


def _unweighted_rms(noise: NoiseProfile, sample_rate_hz: float) -> float:
    rms_a = noise.reference.rms_for_level(noise.target_level_dba)
    if noise.kind == "white":
        return rms_a / 10 ** (white_noise_a_correction_db(sample_rate_hz) / 20)
    # recorded samples are scaled on plain RMS; no weighting filter is applied
    return rms_a


def overlay_noise(audio, noise: NoiseProfile, seed, sample_rate_hz: float = 50000) -> np.ndarray:
    """Add noise whose level matches ``noise.target_level_dba`` on every channel.

    ``audio`` is (n_samples,) or (n_samples, n_channels). The noise is scaled
    to the exact target RMS per channel.
    """
    x = np.asarray(audio, dtype=np.float64)
    if x.size == 0:
        raise ContractError("cannot overlay noise on empty audio")
    rms = _unweighted_rms(noise, sample_rate_hz)
    if rms == 0.0:
        return x.copy()
    rng = np.random.default_rng(seed)
    shape = x.shape if x.ndim == 2 else (x.shape[0], 1)
    if noise.kind == "white":
        n = rng.standard_normal(shape)
    else:
        sample = np.asarray(noise.sample, dtype=np.float64).reshape(-1)
        n = np.empty(shape)
        for c in range(shape[1]):
            start = rng.integers(sample.size)
            idx = (start + np.arange(shape[0])) % sample.size
            n[:, c] = sample[idx]
        n -= n.mean(axis=0)
    n *= rms / np.sqrt(np.mean(n**2, axis=0))
    return x + n.reshape(x.shape)


def measure_level_dba(noise_only, noise: NoiseProfile, sample_rate_hz: float = 50000) -> float:
    """Inverse of the level mapping used by :func:`overlay_noise`."""
    rms = float(np.sqrt(np.mean(np.asarray(noise_only, dtype=np.float64) ** 2)))
    if noise.kind == "white":
        rms *= 10 ** (white_noise_a_correction_db(sample_rate_hz) / 20)
    return noise.reference.level_for_rms(rms)


@dataclass(frozen=True)
class ReflectorSpec:
    center: tuple[float, float, float]
    radius_gain: float = 1.0
    gaze_coupling: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))   # 2x3, metres
    amplitude: float = 0.5
    visible_mics: tuple[int, ...] | None = None                   # 1-based; None = all

    def __post_init__(self):
        if not 0.0 < self.amplitude <= 1.0:
            raise ConfigError("reflector amplitude must lie in (0, 1]")
        c = np.asarray(self.gaze_coupling, dtype=np.float64)
        if c.shape != (2, 3):
            raise ConfigError("gaze_coupling must be 2x3")
        corners = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.float64)
        if np.max(np.linalg.norm(corners @ c, axis=1)) >= 0.005:
            raise ConfigError("reflector displacement must stay below 5 mm over the gaze range")

    def position(self, gaze: np.ndarray) -> np.ndarray:
        """Positions (n, 3) for normalised gaze points (n, 2)."""
        return np.asarray(self.center) + gaze @ np.asarray(self.gaze_coupling)


@dataclass(frozen=True)
class SceneSpec:
    mics: tuple                      # 8 x 3
    speakers: tuple                  # 2 x 3, in FrameConfig band order
    reflectors: tuple[ReflectorSpec, ...]
    base_delay_jitter_s: float = 0.0  # extra delay on reflected paths for this mounting
    noise: NoiseProfile | None = None
    direct_gain: float = 1.0
    tx_gain: float = 0.25
    reference_distance_m: float = 0.03

    def __post_init__(self):
        refl = tuple(r if isinstance(r, ReflectorSpec) else ReflectorSpec(**r)
                     for r in self.reflectors)
        object.__setattr__(self, "reflectors", refl)
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseProfile.from_dict(self.noise))
        if np.asarray(self.mics).shape[1:] != (3,) or np.asarray(self.speakers).shape[1:] != (3,):
            raise ConfigError("mic and speaker positions must be 3-D points")
        if not 0.0 <= self.tx_gain <= 1.0:
            raise ConfigError("tx_gain must lie in [0, 1]")
        if self.reference_distance_m <= 0 or self.direct_gain < 0:
            raise ConfigError("reference distance must be positive, direct gain non-negative")

    @property
    def n_mics(self) -> int:
        return len(self.mics)

    def to_dict(self) -> dict:
        return {
            "mics": [list(m) for m in self.mics],
            "speakers": [list(s) for s in self.speakers],
            "reflectors": [
                {"center": list(r.center), "radius_gain": r.radius_gain,
                 "gaze_coupling": [list(row) for row in r.gaze_coupling],
                 "amplitude": r.amplitude,
                 "visible_mics": None if r.visible_mics is None else list(r.visible_mics)}
                for r in self.reflectors],
            "base_delay_jitter_s": self.base_delay_jitter_s,
            "noise": None if self.noise is None else self.noise.to_dict(),
            "direct_gain": self.direct_gain,
            "tx_gain": self.tx_gain,
            "reference_distance_m": self.reference_distance_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["mics"] = tuple(tuple(m) for m in d["mics"])
        d["speakers"] = tuple(tuple(s) for s in d["speakers"])
        refl = []
        for r in d["reflectors"]:
            r = dict(r)
            r["center"] = tuple(r["center"])
            r["gaze_coupling"] = tuple(tuple(row) for row in r["gaze_coupling"])
            if r.get("visible_mics") is not None:
                r["visible_mics"] = tuple(r["visible_mics"])
            refl.append(ReflectorSpec(**r))
        d["reflectors"] = tuple(refl)
        if d.get("noise") is not None:
            d["noise"] = NoiseProfile.from_dict(d["noise"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _mirror(p):
    return (-p[0], p[1], p[2])


def default_scene() -> SceneSpec:
    """Glasses with four mics around each lens and one speaker above each lens.

    Mics 1-4 sit around the right lens (1 and 4 at the inner, nasal corner),
    5-8 mirror them on the left. Speaker 1 (18-21 kHz) is on the right.
    Each eye carries a cornea reflector plus inner/outer scleral bulges and an
    upper lid that move with gaze; brow, cheek and nose bridge are static.
    """
    right_mics = [(-0.014, 0.012, 0.0), (-0.050, 0.012, 0.0),
                  (-0.050, -0.012, 0.0), (-0.014, -0.012, 0.0)]
    mics = tuple(right_mics) + tuple(_mirror(m) for m in right_mics)
    speakers = ((-0.032, 0.020, 0.0), (0.032, 0.020, 0.0))

    def eye(sign):
        x = sign * 0.032
        s = sign  # horizontal coupling flips with the side so both eyes turn together
        return [
            ReflectorSpec((x, 0.0, -0.022), 1.0,
                          ((0.0030, 0.0, 0.0004), (0.0, -0.0022, 0.0004)), 0.9),
            ReflectorSpec((x - s * 0.011, -0.002, -0.027), 0.8,
                          ((-0.0018, 0.0, 0.0010), (0.0, -0.0008, 0.0002)), 0.6),
            ReflectorSpec((x + s * 0.012, -0.002, -0.027), 0.8,
                          ((-0.0016, 0.0, -0.0009), (0.0, -0.0008, 0.0002)), 0.5),
            ReflectorSpec((x, 0.011, -0.021), 0.6,
                          ((0.0004, 0.0, 0.0), (0.0, -0.0020, -0.0008)), 0.4),
        ]

    static = [
        ReflectorSpec((-0.034, 0.030, -0.016), 1.0, amplitude=0.5),
        ReflectorSpec((0.034, 0.030, -0.016), 1.0, amplitude=0.5),
        ReflectorSpec((-0.036, -0.034, -0.020), 1.0, amplitude=0.6),
        ReflectorSpec((0.036, -0.034, -0.020), 1.0, amplitude=0.6),
        ReflectorSpec((0.0, -0.004, -0.012), 1.0, amplitude=0.7),
    ]
    return SceneSpec(mics, speakers, tuple(eye(-1) + eye(1) + static),
                     noise=NoiseProfile("white", 40.0))


def remount(scene: SceneSpec, rng, cfg: FrameConfig, max_jitter_samples: float = 2.0) -> SceneSpec:
    """Copy of ``scene`` with a fresh mounting offset drawn uniformly from +-max samples."""
    jitter = rng.uniform(-max_jitter_samples, max_jitter_samples) / cfg.sample_rate_hz
    return replace(scene, base_delay_jitter_s=float(jitter))


def path_table(scene: SceneSpec, gaze: np.ndarray, cfg: FrameConfig):
    """Delays (samples) and gains of every propagation path.

    Returns ``delays, gains`` shaped (n_gaze, n_mics, n_speakers, n_paths);
    path 0 is the direct speaker-to-mic path, path i > 0 is reflector i - 1.
    """
    gaze = np.atleast_2d(np.asarray(gaze, dtype=np.float64))
    mics = np.asarray(scene.mics, dtype=np.float64)
    spk = np.asarray(scene.speakers, dtype=np.float64)
    n_g, n_m, n_s, n_r = gaze.shape[0], len(mics), len(spk), len(scene.reflectors)
    c, fs, ref = cfg.speed_of_sound_m_s, cfg.sample_rate_hz, scene.reference_distance_m

    dist = np.empty((n_g, n_m, n_s, n_r + 1))
    gain = np.zeros((n_g, n_m, n_s, n_r + 1))
    direct = np.linalg.norm(mics[:, None, :] - spk[None, :, :], axis=-1)   # (M, S)
    dist[..., 0] = direct
    gain[..., 0] = scene.direct_gain * (ref / direct) ** 2
    for i, r in enumerate(scene.reflectors):
        pos = r.position(gaze)                                           # (G, 3)
        d_s = np.linalg.norm(pos[:, None, :] - spk[None], axis=-1)       # (G, S)
        d_m = np.linalg.norm(pos[:, None, :] - mics[None], axis=-1)      # (G, M)
        total = d_m[:, :, None] + d_s[:, None, :]
        dist[..., i + 1] = total
        g = r.amplitude * r.radius_gain * (ref / total) ** 2
        if r.visible_mics is not None:
            mask = np.zeros(n_m)
            mask[np.asarray(r.visible_mics) - 1] = 1.0
            g = g * mask[None, :, None]
        gain[..., i + 1] = g
    if np.any(dist <= 0):
        raise ConfigError("degenerate geometry: zero path length")
    delays = dist / c * fs
    delays[..., 1:] += scene.base_delay_jitter_s * fs
    if np.any(delays >= cfg.frame_len) or np.any(delays < 0):
        raise ConfigError("a propagation delay falls outside one frame")
    return delays, gain * scene.tx_gain


def _shifted(tx: np.ndarray, delay: np.ndarray) -> np.ndarray:
    """Circular fractional delays of one frame; ``delay`` (n,) -> (n, N)."""
    n = tx.size
    k = np.floor(delay).astype(np.int64)
    a = (delay - k)[:, None]
    base = np.arange(n)[None, :] - k[:, None]
    return (1 - a) * tx[base % n] + a * tx[(base - 1) % n]


def render_frames(scene: SceneSpec, gaze: np.ndarray, cfg: FrameConfig, txs=None) -> np.ndarray:
    """Noise-free received frames (n_gaze, n_mics, frame_len) for static gaze points."""
    txs = txs or chirp_bank(cfg)
    delays, gains = path_table(scene, gaze, cfg)
    n_g, n_m, n_s, n_p = delays.shape
    out = np.zeros((n_g, n_m, cfg.frame_len))
    for s, band in enumerate(cfg.bands):
        tx = txs[band.speaker_id]
        d = delays[:, :, s, :].reshape(-1)
        g = gains[:, :, s, :].reshape(-1)
        live = g != 0
        contrib = np.zeros((d.size, cfg.frame_len))
        contrib[live] = _shifted(tx, d[live]) * g[live, None]
        out += contrib.reshape(n_g, n_m, n_p, cfg.frame_len).sum(axis=2)
    return out


@dataclass
class Session:
    audio: np.ndarray        # (n_samples, n_mics) float, full scale +-1
    trace: GazeTrace
    scene: SceneSpec
    cfg: FrameConfig
    seed: int | None = None
    session_id: int = 0

    @property
    def n_frames(self) -> int:
        return self.audio.shape[0] // self.cfg.frame_len


def synthesize_session(scene: SceneSpec, trace: GazeTrace, cfg: FrameConfig, seed,
                       geom: ScreenGeometry | None = None, session_id: int = 0) -> Session:
    """Received audio for every frame of ``trace`` plus the scene's noise overlay.

    Frames sharing a gaze point are rendered once; audio is clipped to +-1.
    """
    geom = geom or ScreenGeometry()
    xy = trace.xy
    if xy.shape[0] == 0:
        raise ContractError("empty gaze trace")
    gaze = geom.normalized(xy)
    uniq, inverse = np.unique(gaze, axis=0, return_inverse=True)
    frames = render_frames(scene, uniq, cfg)                  # (U, M, N)
    audio = frames[inverse.reshape(-1)]                        # (T, M, N)
    audio = audio.transpose(0, 2, 1).reshape(-1, scene.n_mics)
    if scene.noise is not None:
        audio = overlay_noise(audio, scene.noise, seed, cfg.sample_rate_hz)
    np.clip(audio, -1.0, 1.0, out=audio)
    return Session(audio, trace, scene, cfg, seed if isinstance(seed, int) else None, session_id)
