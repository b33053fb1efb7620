"""FMCW transmit signals and the frame clock.

Every timing constant of the pipeline lives in :class:`FrameConfig`; other
modules derive frame counts, crop sizes and range spacing from it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import ConfigError


@dataclass(frozen=True)
class ChirpBand:
    f_start_hz: float
    f_end_hz: float
    speaker_id: int

    def __post_init__(self):
        if not self.f_start_hz < self.f_end_hz:
            raise ConfigError(
                f"chirp band must sweep upwards, got {self.f_start_hz}..{self.f_end_hz} Hz")
        if self.f_start_hz <= 0:
            raise ConfigError("chirp band must start above 0 Hz")

    @property
    def center_hz(self) -> float:
        return 0.5 * (self.f_start_hz + self.f_end_hz)

    @property
    def bandwidth_hz(self) -> float:
        return self.f_end_hz - self.f_start_hz


DEFAULT_BANDS = (ChirpBand(18000.0, 21000.0, 1), ChirpBand(21500.0, 24500.0, 2))


@dataclass(frozen=True)
class FrameConfig:
    """Sampling and framing parameters.

    The defaults give 600-sample frames at 50 kHz (83.3 frames/s), a 0.3 s
    window of 26 frames, and 70/60-row range crops.
    """

    sample_rate_hz: int = 50000
    frame_len: int = 600
    bands: tuple[ChirpBand, ...] = field(default=DEFAULT_BANDS)
    window_s: float = 0.3
    crop_full_px: int = 70
    crop_used_px: int = 60
    speed_of_sound_m_s: float = 340.0

    def __post_init__(self):
        # accept lists / dicts coming from JSON
        bands = tuple(b if isinstance(b, ChirpBand) else ChirpBand(**b) for b in self.bands)
        object.__setattr__(self, "bands", bands)
        if self.sample_rate_hz <= 0 or self.frame_len <= 0:
            raise ConfigError("sample_rate_hz and frame_len must be positive")
        if not bands:
            raise ConfigError("at least one chirp band is required")
        nyquist = self.sample_rate_hz / 2
        for b in bands:
            if b.f_end_hz >= nyquist:
                raise ConfigError(
                    f"band {b.f_start_hz}-{b.f_end_hz} Hz reaches Nyquist ({nyquist} Hz)")
        ordered = sorted(bands, key=lambda b: b.f_start_hz)
        for lo, hi in zip(ordered, ordered[1:]):
            if lo.f_end_hz > hi.f_start_hz:
                raise ConfigError("chirp bands overlap in frequency")
        if len({b.speaker_id for b in bands}) != len(bands):
            raise ConfigError("speaker ids must be unique")
        if not 0 < self.crop_used_px <= self.crop_full_px <= self.frame_len:
            raise ConfigError("need 0 < crop_used_px <= crop_full_px <= frame_len")
        if self.window_s < 0 or self.speed_of_sound_m_s <= 0:
            raise ConfigError("window_s must be >= 0 and speed_of_sound_m_s > 0")

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate_hz / self.frame_len

    @property
    def frame_period_s(self) -> float:
        return self.frame_len / self.sample_rate_hz

    @property
    def window_frames(self) -> int:
        # small epsilon: 0.3 * 50000 / 600 is 25.000000000000004 in floating point,
        # but other products can land just under an integer
        return math.floor(self.window_s * self.sample_rate_hz / self.frame_len + 1e-9) + 1

    @property
    def range_px_m(self) -> float:
        """One-way distance covered by one sample of round-trip delay."""
        return self.speed_of_sound_m_s / (2 * self.sample_rate_hz)

    def band(self, band_id: int) -> ChirpBand:
        for b in self.bands:
            if b.speaker_id == band_id:
                return b
        raise ConfigError(f"no band with speaker_id {band_id}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bands"] = [asdict(b) for b in self.bands]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrameConfig":
        d = dict(d)
        if "bands" in d:
            d["bands"] = tuple(ChirpBand(**b) for b in d["bands"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown FrameConfig fields: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FrameConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "FrameConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_json())


def refresh_rate(cfg: FrameConfig) -> float:
    """Frames (and gaze estimates) per second."""
    return cfg.sample_rate_hz / cfg.frame_len


# Fraction of the frame covered by raised-cosine edges. A flat envelope leaks
# about -25 dB into the neighbouring band across the 500 Hz guard gap; 0.2
# brings that to about -35 dB.
DEFAULT_TAPER = 0.2


def generate_chirp(band: ChirpBand, cfg: FrameConfig, taper: float = DEFAULT_TAPER) -> np.ndarray:
    """One frame of a linear up-chirp with peak amplitude 1.

    The instantaneous frequency moves from ``band.f_start_hz`` at sample 0 to
    ``band.f_end_hz`` at sample ``frame_len``; phase starts at zero. ``taper``
    is the Tukey fraction of the amplitude envelope (0 gives a flat envelope).
    """
    if not 0.0 <= taper <= 1.0:
        raise ConfigError("taper must lie in [0, 1]")
    if band.f_end_hz >= cfg.sample_rate_hz / 2:
        raise ConfigError(f"band {band.f_start_hz}-{band.f_end_hz} Hz violates Nyquist")
    fs = float(cfg.sample_rate_hz)
    n = np.arange(cfg.frame_len, dtype=np.float64)
    sweep = band.f_end_hz - band.f_start_hz
    phase = 2 * np.pi * (band.f_start_hz * n / fs + sweep * n**2 / (2 * cfg.frame_len * fs))
    x = np.cos(phase)
    if taper > 0:
        # scipy overflows (harmlessly) on subnormal tapers
        with np.errstate(over="ignore", invalid="ignore"):
            x *= signal.windows.tukey(cfg.frame_len, taper, sym=False)
    return x


def chirp_bank(cfg: FrameConfig, taper: float = DEFAULT_TAPER) -> dict[int, np.ndarray]:
    """Transmit frame for every speaker, keyed by speaker id."""
    return {b.speaker_id: generate_chirp(b, cfg, taper) for b in cfg.bands}
