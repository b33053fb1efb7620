import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echogaze.errors import ConfigError
from echogaze.fmcw import ChirpBand, FrameConfig, generate_chirp, refresh_rate

from conftest import dft


def zero_crossing_freq(x, fs):
    """Mean frequency from linearly interpolated zero-crossing spacing."""
    s = np.sign(x)
    idx = np.nonzero((s[:-1] * s[1:]) < 0)[0]
    t = idx + x[idx] / (x[idx] - x[idx + 1])
    return (len(t) - 1) / (2 * (t[-1] - t[0]) / fs)


def test_default_constants(cfg):
    assert cfg.sample_rate_hz == 50000 and cfg.frame_len == 600
    assert cfg.window_frames == 26
    assert (cfg.crop_full_px, cfg.crop_used_px) == (70, 60)
    assert [(b.f_start_hz, b.f_end_hz) for b in cfg.bands] == [(18000, 21000), (21500, 24500)]


@pytest.mark.parametrize("fs, frame, expected", [
    (50000, 600, 50000 / 600),
    (50000, 50000, 1.0),
    (48000, 600, 80.0),
])
def test_refresh_rate(fs, frame, expected):
    cfg = FrameConfig(sample_rate_hz=fs, frame_len=frame,
                      bands=(ChirpBand(18000, 21000, 1),), crop_full_px=70, crop_used_px=60)
    assert refresh_rate(cfg) == expected


def test_refresh_rate_is_83_3(cfg):
    assert refresh_rate(cfg) == pytest.approx(83.3333333333, abs=1e-9)


def test_chirp_shape_and_sweep(cfg):
    band = cfg.bands[0]
    x = generate_chirp(band, cfg)
    assert x.shape == (600,)
    assert np.max(np.abs(x)) <= 1.0
    f_first = zero_crossing_freq(x[:50], cfg.sample_rate_hz)
    f_last = zero_crossing_freq(x[-50:], cfg.sample_rate_hz)
    assert f_first == pytest.approx(18000, rel=0.05)
    assert f_last == pytest.approx(21000, rel=0.05)


def test_chirp_deterministic(cfg):
    a = generate_chirp(cfg.bands[1], cfg)
    b = generate_chirp(cfg.bands[1], cfg)
    assert a.tobytes() == b.tobytes()


def test_degenerate_band_rejected():
    with pytest.raises(ConfigError):
        ChirpBand(19000, 19000, 1)


def test_band_above_nyquist_rejected(cfg):
    with pytest.raises(ConfigError):
        FrameConfig(bands=(ChirpBand(18000, 26000, 1),))
    low_fs = FrameConfig(sample_rate_hz=40000, bands=(ChirpBand(10000, 12000, 1),))
    with pytest.raises(ConfigError):
        generate_chirp(cfg.bands[1], low_fs)


def test_overlapping_bands_rejected():
    with pytest.raises(ConfigError):
        FrameConfig(bands=(ChirpBand(18000, 21000, 1), ChirpBand(20000, 23000, 2)))


@pytest.mark.parametrize("band_idx", [0, 1])
def test_in_band_energy(cfg, band_idx):
    band = cfg.bands[band_idx]
    X = np.abs(dft(generate_chirp(band, cfg))) ** 2
    f = np.arange(X.size) * cfg.sample_rate_hz / cfg.frame_len
    df = f[1]
    inside = (f >= band.f_start_hz - df) & (f <= band.f_end_hz + df)
    assert X[inside].sum() / X.sum() >= 0.95


@pytest.mark.parametrize("src, dst", [(0, 1), (1, 0)])
def test_cross_band_leakage_below_30db(cfg, src, dst):
    a, b = cfg.bands[src], cfg.bands[dst]
    X = np.abs(dft(generate_chirp(a, cfg))) ** 2
    f = np.arange(X.size) * cfg.sample_rate_hz / cfg.frame_len
    own = X[(f >= a.f_start_hz) & (f <= a.f_end_hz)].sum()
    other = X[(f >= b.f_start_hz) & (f <= b.f_end_hz)].sum()
    assert 10 * np.log10(other / own) < -30


def test_flat_envelope_option(cfg):
    x = generate_chirp(cfg.bands[0], cfg, taper=0.0)
    assert x[0] == 1.0
    # (f_start + f_end) * N / (2 fs) = 234 is an integer, so the next frame
    # continues the phase: sample N of the formula equals sample 0
    n = cfg.frame_len
    fs = cfg.sample_rate_hz
    phase_n = 2 * np.pi * (18000 * n / fs + 3000 * n**2 / (2 * n * fs))
    assert np.cos(phase_n) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(1000, 20000), st.floats(100, 4000), st.floats(0, 1))
def test_amplitude_never_exceeds_one(f0, bw, taper):
    cfg = FrameConfig(bands=(ChirpBand(f0, f0 + bw, 1),))
    x = generate_chirp(cfg.bands[0], cfg, taper)
    assert np.all(np.isfinite(x)) and np.max(np.abs(x)) <= 1.0


def test_json_round_trip(cfg, tmp_path):
    path = tmp_path / "frame.json"
    cfg.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"sample_rate_hz", "frame_len", "bands", "window_s", "crop_full_px",
                        "crop_used_px", "speed_of_sound_m_s"}
    assert FrameConfig.load(path) == cfg


def test_unknown_json_field_rejected(cfg):
    d = cfg.to_dict()
    d["bogus"] = 1
    with pytest.raises(ConfigError):
        FrameConfig.from_dict(d)


def test_crop_ordering_enforced():
    with pytest.raises(ConfigError):
        FrameConfig(crop_full_px=50, crop_used_px=60)


def test_row_spacing(cfg):
    assert cfg.range_px_m == pytest.approx(0.0034, abs=1e-15)
    assert cfg.crop_full_px * cfg.range_px_m == pytest.approx(0.238, abs=1e-12)
    assert cfg.crop_used_px * cfg.range_px_m == pytest.approx(0.204, abs=1e-12)
