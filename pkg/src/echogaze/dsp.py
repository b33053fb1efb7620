"""Butterworth band-pass design and application as cascaded biquads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import ConfigError
from .fmcw import ChirpBand, FrameConfig

DEFAULT_ORDER = 4


@dataclass(frozen=True)
class BandPassSpec:
    low_cut_hz: float
    high_cut_hz: float
    order: int = DEFAULT_ORDER
    sample_rate_hz: int = 50000

    def __post_init__(self):
        if not 0 < self.low_cut_hz < self.high_cut_hz < self.sample_rate_hz / 2:
            raise ConfigError(
                f"need 0 < low_cut < high_cut < fs/2, got {self.low_cut_hz}, "
                f"{self.high_cut_hz}, fs={self.sample_rate_hz}")
        if self.order < 1:
            raise ConfigError("filter order must be >= 1")

    @classmethod
    def for_band(cls, band: ChirpBand, cfg: FrameConfig, order: int = DEFAULT_ORDER):
        return cls(band.f_start_hz, band.f_end_hz, order, cfg.sample_rate_hz)


@dataclass(frozen=True)
class SOSFilter:
    """Second-order sections, one row per section: ``b0 b1 b2 1 a1 a2``."""

    sos: np.ndarray
    spec: BandPassSpec

    @property
    def n_sections(self) -> int:
        return self.sos.shape[0]

    def dump(self) -> str:
        rows = [" ".join(f"{v:.17g}" for v in (s[0], s[1], s[2], s[4], s[5])) for s in self.sos]
        return "\n".join(rows)


def design_butterworth(spec: BandPassSpec) -> SOSFilter:
    """Digital Butterworth band-pass of the given prototype order.

    The low-pass prototype poles are mapped to a band-pass around the
    pre-warped cutoffs and then through the bilinear transform. The result
    has ``spec.order`` biquads, each with zeros at z = +1 and z = -1 and
    unit gain at the band centre.
    """
    fs = float(spec.sample_rate_hz)
    n = spec.order
    # pre-warp so the digital -3 dB points land exactly on the cutoffs
    w1 = 2 * fs * np.tan(np.pi * spec.low_cut_hz / fs)
    w2 = 2 * fs * np.tan(np.pi * spec.high_cut_hz / fs)
    w0 = np.sqrt(w1 * w2)
    bw = w2 - w1

    k = np.arange(n)
    proto = np.exp(1j * np.pi * (2 * k + n + 1) / (2 * n))
    half = proto * bw / 2
    root = np.sqrt(half**2 - w0**2 + 0j)
    analog = np.concatenate([half + root, half - root])
    digital = (2 * fs + analog) / (2 * fs - analog)

    upper = digital[digital.imag > 1e-12]
    real = np.sort(digital[np.abs(digital.imag) <= 1e-12].real)
    pairs = [(p, np.conj(p)) for p in upper]
    pairs += [(real[i], real[i + 1]) for i in range(0, len(real), 2)]
    if len(pairs) != n:
        raise ConfigError("pole pairing failed; cutoffs too close to 0 or Nyquist")

    w_center = 2 * np.arctan(w0 / (2 * fs))
    zc = np.exp(1j * w_center)
    sos = np.zeros((n, 6))
    for i, (p1, p2) in enumerate(pairs):
        a = np.real(np.poly([p1, p2]))
        b = np.array([1.0, 0.0, -1.0])
        gain = abs(np.polyval(a, zc)) / abs(np.polyval(b, zc))
        sos[i, :3] = b * gain
        sos[i, 3:] = a
    if np.any(np.abs(digital) >= 1.0):
        raise ConfigError("designed filter is unstable")
    return SOSFilter(sos, spec)


def band_filter(band: ChirpBand, cfg: FrameConfig, order: int = DEFAULT_ORDER) -> SOSFilter:
    return design_butterworth(BandPassSpec.for_band(band, cfg, order))


def filter_apply(coeffs: SOSFilter, audio) -> np.ndarray:
    """Causal filtering from zero initial state; works along the last axis."""
    x = np.asarray(audio, dtype=np.float64)
    if x.shape[-1] == 0:
        return x.copy()
    return signal.sosfilt(coeffs.sos, x, axis=-1)


class FilterState:
    """Running state for block-wise filtering of one or more channel streams.

    Feeding consecutive blocks through :meth:`process` gives the same output
    as :func:`filter_apply` on the concatenated stream.
    """

    def __init__(self, coeffs: SOSFilter, n_channels: int = 1):
        self.coeffs = coeffs
        self.zi = np.zeros((coeffs.n_sections, n_channels, 2))

    def process(self, block) -> np.ndarray:
        x = np.atleast_2d(np.asarray(block, dtype=np.float64))
        y, self.zi = signal.sosfilt(self.coeffs.sos, x, axis=-1, zi=self.zi)
        return y

    def reset(self):
        self.zi[:] = 0.0
