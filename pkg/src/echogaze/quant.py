"""Integer-only correlation path for microcontroller-style inference.

Cross-correlation is written as a 1x1 convolution whose fixed weights are a
short prefix of the transmitted chirp. Inputs and weights are stored as
symmetric per-tensor int8 and accumulated in int32. Instances are compressed
to ``rows_used`` range rows per frame computed from ``corr_len + rows_used``
raw samples, with no band-pass filter in front.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .echo import correlate_frames, direct_path_origin, frame_stream
from .errors import ConfigError, ContractError, EmptyInputError
from .fmcw import FrameConfig, generate_chirp
from .model import ModelArtifact, predict_features

INT8_MAX = 127
# worst-case |sum| of corr_len products of int8 values must fit in int32
INT32_MAX = 2**31 - 1


@dataclass(frozen=True)
class QuantTensor:
    data: np.ndarray          # int8
    scale: float

    def __post_init__(self):
        if self.data.dtype != np.int8:
            raise ContractError("QuantTensor data must be int8")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ContractError("QuantTensor scale must be positive and finite")

    @property
    def shape(self) -> tuple:
        return self.data.shape


def quantize(x) -> QuantTensor:
    """Symmetric per-tensor int8 quantization with ``scale = max|x| / 127``.

    An all-zero input gets scale 1, as does one whose scale would underflow.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractError("cannot quantize non-finite values")
    peak = float(np.max(np.abs(x), initial=0.0))
    scale = peak / INT8_MAX
    if scale <= 0.0:
        return QuantTensor(np.zeros(x.shape, dtype=np.int8), 1.0)
    data = np.clip(np.round(x / scale), -128, INT8_MAX).astype(np.int8)
    return QuantTensor(data, scale)


def dequantize(q: QuantTensor) -> np.ndarray:
    return q.data.astype(np.float64) * q.scale


@dataclass(frozen=True)
class ConvLayerSpec:
    kernel_size: tuple = (1, 1)
    stride: tuple = (1, 1)
    name: str = "conv"


ALLOWED_KERNELS = ((1, 1), (3, 3))
ALLOWED_STRIDES = ((1, 1),)


def conv_constraint_check(layer) -> list[str]:
    """Violations of the accelerator's conv constraints; empty means ok.

    Kernels must be 1x1 or 3x3 and the stride fixed at [1, 1]. ``layer`` is a
    :class:`ConvLayerSpec` or a dict with ``kernel_size`` and ``stride``.
    """
    if isinstance(layer, dict):
        layer = ConvLayerSpec(**layer)
    k = tuple(int(v) for v in np.atleast_1d(layer.kernel_size))
    s = tuple(int(v) for v in np.atleast_1d(layer.stride))
    if len(k) == 1:
        k = k * 2
    if len(s) == 1:
        s = s * 2
    out = []
    if k not in ALLOWED_KERNELS:
        out.append(f"{layer.name}: kernel {k[0]}x{k[1]} not in {{1x1, 3x3}}")
    if s not in ALLOWED_STRIDES:
        out.append(f"{layer.name}: stride [{s[0]}, {s[1]}] must be [1, 1]")
    return out


@dataclass(frozen=True)
class CompressedInstanceSpec:
    corr_len: int = 34
    rows_used: int = 30
    window_frames: int = 26
    n_mics: int = 8
    band_id: int = 1

    def __post_init__(self):
        if min(self.corr_len, self.rows_used, self.window_frames, self.n_mics) < 1:
            raise ConfigError("compressed instance sizes must be positive")
        if self.corr_len * INT8_MAX * 128 > INT32_MAX:
            raise ConfigError("corr_len too long for int32 accumulation")

    @property
    def raw_len(self) -> int:
        return self.corr_len + self.rows_used

    @property
    def n_features(self) -> int:
        return self.rows_used * self.window_frames * self.n_mics

    def validate(self, cfg: FrameConfig):
        if self.corr_len > cfg.frame_len or self.raw_len > cfg.frame_len:
            raise ConfigError("compressed window exceeds the frame length")
        if self.rows_used > cfg.crop_full_px:
            raise ConfigError("rows_used exceeds the full crop")

    def raw_start(self, origin: int, cfg: FrameConfig) -> int:
        """First raw sample of the window: rows are centred in the full crop."""
        return origin + (cfg.crop_full_px - self.rows_used) // 2


def tx_prefix(cfg: FrameConfig, spec: CompressedInstanceSpec, taper: float | None = None):
    """First ``corr_len`` samples of the transmitted chirp frame."""
    band = cfg.band(spec.band_id)
    chirp = generate_chirp(band, cfg) if taper is None else generate_chirp(band, cfg, taper)
    return chirp[:spec.corr_len]


def corr_as_conv(raw: QuantTensor, tx: QuantTensor, rows_used: int | None = None) -> np.ndarray:
    """Sliding dot product of ``raw`` (L, F, M) against ``tx`` (K,) as int32.

    ``out[r, f, m] = sum_n raw[r + n, f, m] * tx[n]`` for ``r < rows_used``
    (default ``L - K``, i.e. one fewer than the number of valid positions).
    """
    if raw.data.ndim != 3 or tx.data.ndim != 1:
        raise ContractError("raw must be (L, frames, mics) and tx one-dimensional")
    L, K = raw.shape[0], tx.shape[0]
    rows_used = L - K if rows_used is None else rows_used
    if K > L or rows_used > L - K + 1 or rows_used < 1:
        raise ContractError(f"cannot take {rows_used} rows from a {L}-sample window "
                            f"with a {K}-tap kernel")
    win = sliding_window_view(raw.data.astype(np.int32), K, axis=0)[:rows_used]
    return win @ tx.data.astype(np.int32)            # (rows, F, M) int32


def dequantize_conv(acc: np.ndarray, raw: QuantTensor, tx: QuantTensor) -> np.ndarray:
    return acc.astype(np.float64) * (raw.scale * tx.scale)


def float_sliding_corr(raw, tx, rows_used: int) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    win = sliding_window_view(raw, len(tx), axis=0)[:rows_used]
    return win @ np.asarray(tx, dtype=np.float64)


def raw_windows(audio, cfg: FrameConfig, spec: CompressedInstanceSpec, origin: int) -> np.ndarray:
    """Raw per-frame sample windows shaped (n_frames, raw_len, n_mics)."""
    frames = frame_stream(np.asarray(audio, dtype=np.float64).T, cfg.frame_len)   # (M, T, N)
    idx = (spec.raw_start(origin, cfg) + np.arange(spec.raw_len)) % cfg.frame_len
    return frames[:, :, idx].transpose(1, 2, 0)


def unfiltered_origin(audio, cfg: FrameConfig, spec: CompressedInstanceSpec,
                      taper: float | None = None) -> int:
    """Direct-path origin from unfiltered full-chirp correlations of every mic."""
    band = cfg.band(spec.band_id)
    tx = generate_chirp(band, cfg) if taper is None else generate_chirp(band, cfg, taper)
    n_first = max(1, int(round(cfg.frames_per_second)))
    audio = np.asarray(audio, dtype=np.float64)[: n_first * cfg.frame_len]
    frames = frame_stream(audio.T, cfg.frame_len)
    if frames.shape[1] == 0:
        raise EmptyInputError("audio is shorter than one frame")
    return direct_path_origin([correlate_frames(f, tx) for f in frames], cfg)


def instance_from_raw(raw: np.ndarray, tx, spec: CompressedInstanceSpec,
                      quantized: bool = True) -> np.ndarray:
    """Correlation rows (rows_used, F, M) of one raw window (raw_len, F, M).

    The quantized variant runs the integer conv and dequantizes the result.
    """
    if raw.shape[0] != spec.raw_len or raw.shape[2] != spec.n_mics:
        raise ContractError(f"raw window must be ({spec.raw_len}, frames, {spec.n_mics})")
    if not quantized:
        return float_sliding_corr(raw, tx, spec.rows_used)
    qr, qt = quantize(raw), quantize(tx)
    return dequantize_conv(corr_as_conv(qr, qt, spec.rows_used), qr, qt)


def flatten_compressed(rows: np.ndarray) -> np.ndarray:
    """(rows, frames, mics) -> channel-major features (mic, frame, row)."""
    return rows.transpose(2, 1, 0).ravel()


def compressed_features(audio, labels, cfg: FrameConfig, spec: CompressedInstanceSpec,
                        positions=None, origin: int | None = None, quantized: bool = False,
                        taper: float | None = None):
    """Compressed-instance matrix ``(X, Y, t_end)`` for a whole session.

    The float variant shares per-frame correlations between windows; the
    quantized one quantizes each 64 x 26 x 8 window separately, as the
    streaming path does.
    """
    spec.validate(cfg)
    if origin is None:
        origin = unfiltered_origin(audio, cfg, spec, taper)
    tx = tx_prefix(cfg, spec, taper)
    raw = raw_windows(audio, cfg, spec, origin)                       # (T, L, M)
    lab = labels.xy if hasattr(labels, "xy") else np.asarray(labels, dtype=np.float64)
    w = spec.window_frames
    valid = np.arange(w - 1, raw.shape[0])
    t_end = valid if positions is None else np.intersect1d(valid, np.asarray(positions))
    X = np.empty((t_end.size, spec.n_features), dtype=np.float32)
    if not quantized:
        corr = float_sliding_corr(raw.transpose(1, 0, 2), tx, spec.rows_used)   # (R, T, M)
        for i, t in enumerate(t_end):
            X[i] = flatten_compressed(corr[:, t - w + 1: t + 1])
    else:
        for i, t in enumerate(t_end):
            window = raw[t - w + 1: t + 1].transpose(1, 0, 2)                  # (L, F, M)
            X[i] = flatten_compressed(instance_from_raw(window, tx, spec, True))
    return X, lab[t_end], t_end


class QuantStream:
    """Frame-by-frame quantized inference with a ring buffer of raw windows.

    Assembly of frame t's instance and prediction are separate steps; each
    call to :meth:`push` hands an immutable snapshot from one to the other.
    """

    def __init__(self, model: ModelArtifact, cfg: FrameConfig, spec: CompressedInstanceSpec,
                 origin: int, taper: float | None = None):
        spec.validate(cfg)
        if model.n_features != spec.n_features:
            raise ContractError(f"model expects {model.n_features} features, "
                                f"compressed instances have {spec.n_features}")
        self.model, self.cfg, self.spec = model, cfg, spec
        self.tx_q = quantize(tx_prefix(cfg, spec, taper))
        self.idx = (spec.raw_start(origin, cfg) + np.arange(spec.raw_len)) % cfg.frame_len
        self.buffer: deque = deque(maxlen=spec.window_frames)

    def push(self, frame: np.ndarray):
        """Add one (frame_len, n_mics) frame; returns (x, y) once the window is full."""
        self.buffer.append(np.asarray(frame, dtype=np.float64)[self.idx])    # (L, M)
        if len(self.buffer) < self.spec.window_frames:
            return None
        raw = np.stack(self.buffer, axis=1)                                   # (L, F, M)
        qr = quantize(raw)
        rows = dequantize_conv(corr_as_conv(qr, self.tx_q, self.spec.rows_used), qr, self.tx_q)
        xy = predict_features(self.model, flatten_compressed(rows)[None, :])[0]
        return float(xy[0]), float(xy[1])


def quant_pipeline_predict(audio, model: ModelArtifact, cfg: FrameConfig,
                           spec: CompressedInstanceSpec | None = None,
                           origin: int | None = None, taper: float | None = None):
    """Stream raw multi-mic audio through the quantized path.

    Returns ``(pred, t_end, latency_ms)``: one prediction per full window,
    the frame each window ends on, and wall-clock compute per frame.
    """
    spec = spec or CompressedInstanceSpec()
    audio = np.asarray(audio, dtype=np.float64)
    n_frames = audio.shape[0] // cfg.frame_len
    if n_frames < spec.window_frames:
        raise EmptyInputError(f"need at least {spec.window_frames} frames, got {n_frames}")
    if origin is None:
        origin = unfiltered_origin(audio, cfg, spec, taper)
    stream = QuantStream(model, cfg, spec, origin, taper)
    preds, ends, lat = [], [], []
    for t in range(n_frames):
        frame = audio[t * cfg.frame_len:(t + 1) * cfg.frame_len]
        t0 = time.perf_counter()
        out = stream.push(frame)
        lat.append((time.perf_counter() - t0) * 1e3)
        if out is not None:
            preds.append(out)
            ends.append(t)
    return np.array(preds), np.array(ends), np.array(lat)
