import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from echogaze.dsp import BandPassSpec, FilterState, band_filter, design_butterworth, filter_apply
from echogaze.errors import ConfigError
from echogaze.fmcw import generate_chirp

FS = 50000


def response_db(sos, f_hz, fs=FS):
    """|H| in dB by evaluating each biquad's polynomials on the unit circle."""
    z = np.exp(1j * 2 * np.pi * np.atleast_1d(f_hz) / fs)
    h = np.ones_like(z)
    for s in sos:
        num = s[0] * z**2 + s[1] * z + s[2]
        den = s[3] * z**2 + s[4] * z + s[5]
        h *= num / den
    return 20 * np.log10(np.abs(h))


def biquad_reference(sos, x):
    """Direct-form II transposed, one sample at a time."""
    y = np.asarray(x, dtype=np.float64).copy()
    for b0, b1, b2, _, a1, a2 in sos:
        z1 = z2 = 0.0
        out = np.empty_like(y)
        for i, v in enumerate(y):
            o = b0 * v + z1
            z1 = b1 * v - a1 * o + z2
            z2 = b2 * v - a2 * o
            out[i] = o
        y = out
    return y


def tone(f, n=6000):
    return np.sin(2 * np.pi * f * np.arange(n) / FS)


def rms(x):
    return np.sqrt(np.mean(x**2))


@pytest.fixture(scope="module")
def bp4():
    return design_butterworth(BandPassSpec(18000, 21000, 4, FS))


def test_passband_and_stopband(bp4):
    assert response_db(bp4.sos, 19500)[0] >= -1.0
    assert response_db(bp4.sos, 10000)[0] <= -40.0


@pytest.mark.parametrize("order", [1, 2, 3, 4, 6])
@pytest.mark.parametrize("band", [(18000, 21000), (21500, 24500), (2000, 6000)])
def test_matches_independent_design(order, band):
    ours = design_butterworth(BandPassSpec(*band, order, FS))
    ref = signal.butter(order, band, "bandpass", fs=FS, output="sos")
    f = np.linspace(100, FS / 2 - 100, 400)
    assert np.allclose(response_db(ours.sos, f), response_db(ref, f), atol=1e-6)


def test_order1_cutoffs_are_minus_3db():
    f = design_butterworth(BandPassSpec(18000, 21000, 1, FS))
    assert response_db(f.sos, [18000, 21000]) == pytest.approx([-3.0103, -3.0103], abs=0.5)


@pytest.mark.parametrize("lo, hi", [(21000, 18000), (19000, 19000), (18000, 25000), (0, 1000)])
def test_bad_cutoffs(lo, hi):
    with pytest.raises(ConfigError):
        BandPassSpec(lo, hi, 4, FS)


def test_order_must_be_positive():
    with pytest.raises(ConfigError):
        BandPassSpec(18000, 21000, 0, FS)


def test_stable_poles(bp4):
    for s in bp4.sos:
        assert np.all(np.abs(np.roots(s[3:])) < 1.0)
    assert bp4.n_sections == 4


def test_zero_in_zero_out(bp4):
    assert np.all(filter_apply(bp4, np.zeros(1000)) == 0.0)


def test_stopband_tone(bp4):
    x = tone(5000)
    y = filter_apply(bp4, x)
    assert y.shape == x.shape
    assert rms(y[1000:]) <= 0.01 * rms(x[1000:])


def test_passband_tone(bp4):
    x = tone(19500)
    y = filter_apply(bp4, x)
    assert rms(y[1000:]) >= 0.85 * rms(x[1000:])


def test_matches_sample_by_sample_reference(bp4, rng):
    x = rng.standard_normal(3000)
    assert np.allclose(filter_apply(bp4, x), biquad_reference(bp4.sos, x), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_linearity(a, b, seed):
    f = band_filter_default()
    r = np.random.default_rng(seed)
    x, y = r.standard_normal(2000), r.standard_normal(2000)
    lhs = filter_apply(f, a * x + b * y)
    rhs = a * filter_apply(f, x) + b * filter_apply(f, y)
    scale = max(1.0, np.max(np.abs(rhs)))
    assert np.max(np.abs(lhs - rhs)) / scale < 1e-9


_DEFAULT = {}


def band_filter_default():
    if not _DEFAULT:
        _DEFAULT["f"] = design_butterworth(BandPassSpec(18000, 21000, 4, FS))
    return _DEFAULT["f"]


def test_impulse_decay(cfg):
    for band in cfg.bands:
        h = filter_apply(band_filter(band, cfg), np.r_[1.0, np.zeros(49999)])
        assert np.max(np.abs(h[-100:])) < 1e-6
        assert np.max(np.abs(h[30000:])) < 1e-6


def test_band_separation(cfg):
    low, high = cfg.bands
    x = generate_chirp(high, cfg)
    y = filter_apply(band_filter(low, cfg), x)
    assert np.sum(y**2) < 0.01 * np.sum(x**2)


def test_blockwise_state_matches_one_shot(bp4, rng):
    x = rng.standard_normal((3, 2400))
    state = FilterState(bp4, n_channels=3)
    blocks = [state.process(x[:, i:i + 600]) for i in range(0, 2400, 600)]
    assert np.allclose(np.concatenate(blocks, axis=1), filter_apply(bp4, x), atol=1e-13)


def test_dump_format(bp4):
    lines = bp4.dump().splitlines()
    assert len(lines) == 4
    for line, s in zip(lines, bp4.sos):
        vals = [float(v) for v in line.split()]
        assert vals == [s[0], s[1], s[2], s[4], s[5]]
