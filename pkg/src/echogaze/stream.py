"""Real-time float pipeline: one frame in, one gaze estimate out."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dsp import FilterState, band_filter
from .errors import ContractError, EmptyInputError
from .fmcw import FrameConfig, chirp_bank
from .model import ModelArtifact, predict_features


class FrameProcessor:
    """Filters, correlates and windows 16 channels frame by frame.

    Keeps per-band filter state and a ring buffer of the last
    ``window_frames`` cropped columns; :meth:`push` returns the calibrated
    prediction once the buffer is full.
    """

    def __init__(self, model: ModelArtifact, cfg: FrameConfig, origin: int, n_mics: int = 8,
                 filtered: bool = True, magnitude: bool = False, taper: float | None = None):
        self.model, self.cfg = model, cfg
        self.n_mics, self.filtered, self.magnitude = n_mics, filtered, magnitude
        n_feat = len(cfg.bands) * n_mics * cfg.window_frames * cfg.crop_used_px
        if model.n_features != n_feat:
            raise ContractError(f"model expects {model.n_features} features, stream yields {n_feat}")
        txs = chirp_bank(cfg) if taper is None else chirp_bank(cfg, taper)
        self.tx_spec = np.stack([np.conj(np.fft.rfft(txs[b.speaker_id])) for b in cfg.bands])
        self.filters = [FilterState(band_filter(b, cfg), n_mics) for b in cfg.bands]
        off = (cfg.crop_full_px - cfg.crop_used_px) // 2
        self.rows = (origin + off + np.arange(cfg.crop_used_px)) % cfg.frame_len
        n_ch = len(cfg.bands) * n_mics
        # ring buffer (frame slot, channel, row); written in place
        self.ring = np.zeros((cfg.window_frames, n_ch, cfg.crop_used_px))
        self.count = 0

    def column(self, frame: np.ndarray) -> np.ndarray:
        """Cropped correlation column of every channel, band-major (C, rows)."""
        x = np.asarray(frame, dtype=np.float64).T                       # (M, N)
        if x.shape != (self.n_mics, self.cfg.frame_len):
            raise ContractError("frame must be shaped (frame_len, n_mics)")
        bands = [f.process(x) if self.filtered else x for f in self.filters]
        spec = np.fft.rfft(np.stack(bands), axis=-1) * self.tx_spec[:, None, :]
        corr = np.fft.irfft(spec, n=self.cfg.frame_len, axis=-1)[..., self.rows]
        corr = corr.reshape(-1, self.cfg.crop_used_px)
        return np.abs(corr) if self.magnitude else corr

    def push(self, frame):
        self.ring[self.count % self.cfg.window_frames] = self.column(frame)
        self.count += 1
        if self.count < self.cfg.window_frames:
            return None
        w = self.cfg.window_frames
        order = (self.count + np.arange(w)) % w                          # oldest first
        feats = self.ring[order].transpose(1, 0, 2).reshape(1, -1)      # (C, frame, row)
        xy = predict_features(self.model, feats)[0]
        return float(xy[0]), float(xy[1])


@dataclass
class StreamReport:
    predictions: np.ndarray
    t_end: np.ndarray
    latency_ms: np.ndarray

    @property
    def mean_latency_ms(self) -> float:
        return float(self.latency_ms.mean())

    @property
    def p99_latency_ms(self) -> float:
        return float(np.percentile(self.latency_ms, 99))

    @property
    def fps_sustained(self) -> float:
        return float(1e3 * self.latency_ms.size / self.latency_ms.sum())


def run_stream(audio, model: ModelArtifact, cfg: FrameConfig, origin: int, **kwargs) -> StreamReport:
    """Feed ``audio`` (n_samples, n_mics) through :class:`FrameProcessor` frame by frame."""
    audio = np.asarray(audio, dtype=np.float64)
    n_frames = audio.shape[0] // cfg.frame_len
    if n_frames < cfg.window_frames:
        raise EmptyInputError(f"need at least {cfg.window_frames} frames, got {n_frames}")
    proc = FrameProcessor(model, cfg, origin, n_mics=audio.shape[1], **kwargs)
    preds, ends, lat = [], [], []
    for t in range(n_frames):
        frame = audio[t * cfg.frame_len:(t + 1) * cfg.frame_len]
        t0 = time.perf_counter()
        out = proc.push(frame)
        lat.append((time.perf_counter() - t0) * 1e3)
        if out is not None:
            preds.append(out)
            ends.append(t)
    return StreamReport(np.array(preds), np.array(ends), np.array(lat))
