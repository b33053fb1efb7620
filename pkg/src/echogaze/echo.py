"""Echo profiles: per-frame cross-correlation of received against transmitted audio.

Rows of an echo profile index round-trip delay in samples (one row is
``cfg.range_px_m`` metres of one-way distance), columns index frames.
Channels are ordered band-major: channel ``(band_id - 1) * n_mics + (mic_id - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dsp import band_filter, filter_apply
from .errors import ContractError, EmptyInputError
from .fmcw import FrameConfig, chirp_bank


@dataclass(frozen=True)
class EchoProfile:
    data: np.ndarray            # (range_px, n_frames)
    channel_id: tuple[int, int]  # (mic_id, band_id)
    range_origin_px: int = 0

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] < 1:
            raise ContractError("echo profile data must be 2-D with at least one frame")

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def range_px(self) -> int:
        return self.data.shape[0]

    def peak_rows(self) -> np.ndarray:
        """Per-column row of the strongest (absolute) correlation."""
        return np.argmax(np.abs(self.data), axis=0)


@dataclass
class GazeInstance:
    tensor: np.ndarray          # (window_frames, crop_used_px, n_channels)
    label: tuple[float, float]
    session_id: int
    t_end: int

    def features(self) -> np.ndarray:
        """Channel-major flattening used by every model."""
        return np.ascontiguousarray(self.tensor.transpose(2, 0, 1)).ravel()


def cross_correlate_bruteforce(rx_frame, tx_frame) -> np.ndarray:
    """Circular cross-correlation by the O(n^2) definition; the test oracle."""
    rx = np.asarray(rx_frame, dtype=np.float64)
    tx = np.asarray(tx_frame, dtype=np.float64)
    if rx.shape != tx.shape or rx.ndim != 1:
        raise ContractError(f"frame length mismatch: {rx.shape} vs {tx.shape}")
    n = rx.size
    idx = (np.arange(n)[None, :] + np.arange(n)[:, None]) % n
    return rx[idx] @ tx


def cross_correlate_frame(rx_frame, tx_frame) -> np.ndarray:
    """``c[k] = sum_n rx[(n + k) % N] * tx[n]``, computed with real FFTs."""
    rx = np.asarray(rx_frame, dtype=np.float64)
    tx = np.asarray(tx_frame, dtype=np.float64)
    if rx.shape != tx.shape or rx.ndim != 1:
        raise ContractError(f"frame length mismatch: {rx.shape} vs {tx.shape}")
    return correlate_frames(rx[None, :], tx)[:, 0]


def correlate_frames(frames: np.ndarray, tx_frame: np.ndarray) -> np.ndarray:
    """Correlate each row of ``frames`` (n_frames, N) with ``tx``; returns (N, n_frames)."""
    n = frames.shape[-1]
    if tx_frame.shape[-1] != n:
        raise ContractError("tx frame length does not match rx frames")
    spec = np.fft.rfft(frames, axis=-1) * np.conj(np.fft.rfft(tx_frame))
    return np.fft.irfft(spec, n=n, axis=-1).T


def frame_stream(rx_stream, frame_len: int) -> np.ndarray:
    """Reshape a 1-D stream into (n_frames, frame_len), dropping a trailing partial frame."""
    x = np.asarray(rx_stream, dtype=np.float64)
    n_frames = x.shape[-1] // frame_len
    if n_frames < 1:
        raise EmptyInputError(f"stream of {x.shape[-1]} samples is shorter than one frame")
    return x[..., : n_frames * frame_len].reshape(*x.shape[:-1], n_frames, frame_len)


def full_profile(rx_stream, tx_frame, cfg: FrameConfig, band_id: int | None = None) -> np.ndarray:
    """Uncropped (frame_len, n_frames) correlation image of one channel.

    When ``band_id`` is given the stream is band-pass filtered for that band first.
    """
    x = np.asarray(rx_stream, dtype=np.float64)
    if band_id is not None:
        x = filter_apply(band_filter(cfg.band(band_id), cfg), x)
    return correlate_frames(frame_stream(x, cfg.frame_len), np.asarray(tx_frame, dtype=np.float64))


def direct_path_origin(full_profiles, cfg: FrameConfig) -> int:
    """Range origin shared by a set of uncropped channel images.

    Each channel votes with the row of its strongest mean absolute correlation
    over the first second; votes are averaged on the circle of ``frame_len`` rows.
    """
    n_first = max(1, int(round(cfg.frames_per_second)))
    votes = []
    for p in full_profiles:
        energy = np.abs(p[:, :n_first]).mean(axis=1)
        votes.append(int(np.argmax(energy)))
    angle = 2 * np.pi * np.asarray(votes) / cfg.frame_len
    mean = np.angle(np.exp(1j * angle).mean())
    return int(round(mean * cfg.frame_len / (2 * np.pi))) % cfg.frame_len


def crop_rows(full: np.ndarray, origin: int, n_rows: int) -> np.ndarray:
    rows = (origin + np.arange(n_rows)) % full.shape[0]
    return full[rows]


def compute_echo_profile(rx_stream, tx, cfg: FrameConfig, filtered: bool = True, *,
                         mic_id: int = 1, band_id: int = 1, origin: int | None = None,
                         magnitude: bool = False) -> EchoProfile:
    """Echo profile of one (mic, band) channel cropped to ``cfg.crop_full_px`` rows.

    Row 0 sits at ``origin``; by default that is this channel's own direct-path
    peak. Pass ``origin`` to share one range origin across channels.
    """
    full = full_profile(rx_stream, tx, cfg, band_id if filtered else None)
    if origin is None:
        origin = direct_path_origin([full], cfg)
    data = crop_rows(full, origin, cfg.crop_full_px)
    if magnitude:
        data = np.abs(data)
    return EchoProfile(data, (mic_id, band_id), int(origin))


def session_profiles(audio, cfg: FrameConfig, filtered: bool = True, magnitude: bool = False,
                     origin: int | None = None, taper: float | None = None) -> list[EchoProfile]:
    """All (band, mic) channel profiles of multi-mic audio shaped (n_samples, n_mics).

    A single direct-path origin is estimated over every channel and applied to all.
    """
    audio = np.asarray(audio)
    if audio.ndim != 2:
        raise ContractError("audio must be shaped (n_samples, n_mics)")
    txs = chirp_bank(cfg) if taper is None else chirp_bank(cfg, taper)
    fulls, ids = [], []
    for band in cfg.bands:
        x = audio.T.astype(np.float64)
        if filtered:
            x = filter_apply(band_filter(band, cfg), x)
        frames = frame_stream(x, cfg.frame_len)        # (n_mics, n_frames, N)
        for m in range(audio.shape[1]):
            fulls.append(correlate_frames(frames[m], txs[band.speaker_id]))
            ids.append((m + 1, band.speaker_id))
    if origin is None:
        origin = direct_path_origin(fulls, cfg)
    out = []
    for full, cid in zip(fulls, ids):
        data = crop_rows(full, origin, cfg.crop_full_px).astype(np.float32)
        out.append(EchoProfile(np.abs(data) if magnitude else data, cid, int(origin)))
    return out


def differential_profile(p: EchoProfile) -> EchoProfile:
    """Frame-to-frame difference; one column shorter than the input."""
    if p.n_frames < 2:
        raise ContractError("differential profile needs at least two frames")
    return replace(p, data=np.diff(p.data, axis=1))


def _label_array(labels) -> np.ndarray:
    if hasattr(labels, "xy"):
        labels = labels.xy
    lab = np.asarray(labels, dtype=np.float64)
    if lab.ndim != 2 or lab.shape[1] != 2:
        raise ContractError("labels must be shaped (n_frames, 2)")
    return lab


def crop_offsets(n_positions: int, cfg: FrameConfig, augment: bool, rng_seed: int,
                 session_id: int) -> np.ndarray:
    """Row offset into the full crop for every window end position.

    Augmented offsets come from a counter-based generator keyed by
    (rng_seed, session_id) and indexed by frame position, so any subset of
    instances reproduces the same offsets.
    """
    spare = cfg.crop_full_px - cfg.crop_used_px
    if not augment:
        return np.full(n_positions, spare // 2, dtype=np.int64)
    gen = np.random.Generator(np.random.Philox(key=[rng_seed & (2**64 - 1), session_id]))
    return gen.integers(0, spare + 1, size=n_positions)


def instance_matrix(profiles, labels, cfg: FrameConfig, augment: bool = False,
                    rng_seed: int = 0, session_id: int = 0, positions=None,
                    dtype=np.float32):
    """Flattened features for many windows at once.

    Returns ``(X, Y, t_end)`` where row i of ``X`` equals
    ``GazeInstance.features()`` of the instance ending at frame ``t_end[i]``.
    ``positions`` restricts the window end frames (default: all valid ones).
    """
    stack = np.stack([p.data for p in profiles]).astype(dtype, copy=False)  # (C, R, T)
    lab = _label_array(labels)
    n_ch, n_rows, n_frames = stack.shape
    if n_rows != cfg.crop_full_px:
        raise ContractError(f"profiles have {n_rows} rows, expected {cfg.crop_full_px}")
    if lab.shape[0] < n_frames:
        raise ContractError("label trace does not cover every profile frame")
    w = cfg.window_frames
    valid = np.arange(w - 1, n_frames)
    t_end = valid if positions is None else np.intersect1d(valid, np.asarray(positions))
    n_feat = n_ch * w * cfg.crop_used_px
    X = np.empty((t_end.size, n_feat), dtype=dtype)
    if t_end.size == 0:
        return X, np.empty((0, 2)), t_end
    offsets = crop_offsets(n_frames, cfg, augment, rng_seed, session_id)[t_end]
    windows = sliding_window_view(stack, w, axis=2)       # (C, R, T-w+1, w)
    for off in np.unique(offsets):
        sel = np.nonzero(offsets == off)[0]
        block = windows[:, off: off + cfg.crop_used_px, t_end[sel] - (w - 1), :]
        # (C, rows, n, w) -> (n, C, w, rows)
        X[sel] = block.transpose(2, 0, 3, 1).reshape(sel.size, n_feat)
    return X, lab[t_end], t_end


def assemble_instances(profiles, labels, cfg: FrameConfig, augment: bool = False,
                       rng_seed: int = 0, session_id: int = 0) -> list[GazeInstance]:
    """One :class:`GazeInstance` per window end frame ``t >= window_frames - 1``."""
    frames = {p.n_frames for p in profiles}
    if len(frames) != 1:
        raise ContractError("all channel profiles must have the same number of frames")
    X, Y, t_end = instance_matrix(profiles, labels, cfg, augment, rng_seed, session_id)
    n_ch, w = len(profiles), cfg.window_frames
    out = []
    for x, y, t in zip(X, Y, t_end):
        tensor = x.reshape(n_ch, w, cfg.crop_used_px).transpose(1, 2, 0)
        out.append(GazeInstance(tensor, (float(y[0]), float(y[1])), session_id, int(t)))
    return out
