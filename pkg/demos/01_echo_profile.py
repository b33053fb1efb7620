"""Walk through one echo profile: chirp, band-pass, correlation, crop.

Run with ``python demos/01_echo_profile.py``. Prints numbers only.
"""

import numpy as np

from echogaze.dsp import BandPassSpec, design_butterworth
from echogaze.echo import session_profiles
from echogaze.fmcw import FrameConfig, chirp_bank, refresh_rate
from echogaze.protocol import GazeTrace, ScreenGeometry
from echogaze.sim import default_scene, path_table, synthesize_session

cfg = FrameConfig()
print(f"frame {cfg.frame_len} samples at {cfg.sample_rate_hz} Hz -> {refresh_rate(cfg):.1f} Hz")
print(f"one range row = {cfg.range_px_m * 100:.2f} cm, crop {cfg.crop_full_px} -> "
      f"{cfg.crop_used_px} rows, window {cfg.window_frames} frames")

for band_id, tx in chirp_bank(cfg).items():
    spec = np.abs(np.fft.rfft(tx)) ** 2
    f = np.fft.rfftfreq(cfg.frame_len, 1 / cfg.sample_rate_hz)
    b = cfg.band(band_id)
    inside = spec[(f >= b.f_start_hz) & (f <= b.f_end_hz)].sum() / spec.sum()
    filt = design_butterworth(BandPassSpec.for_band(b, cfg, 4))
    print(f"speaker {band_id}: {b.f_start_hz / 1e3:.1f}-{b.f_end_hz / 1e3:.1f} kHz, "
          f"{inside:.1%} of chirp energy in band, {len(filt.sos)} biquads")

# gaze sweeps left to right over two seconds
n = int(2 * cfg.frames_per_second)
geom = ScreenGeometry()
trace = GazeTrace(np.linspace(0, geom.width_px - 1, n), np.full(n, 540.0), np.full(n, "main"))
scene = default_scene()
audio = synthesize_session(scene, trace, cfg, seed=0, geom=geom).audio
profiles = session_profiles(audio, cfg)
print(f"\n{len(profiles)} channels, each {profiles[0].data.shape} (rows x frames), "
      f"direct path at sample {profiles[0].range_origin_px}")

# the cornea reflector of the right eye moves most; watch its delay and the
# profile change on mic 1, band 1
delays, _ = path_table(scene, geom.normalized(trace.xy[[0, -1]]), cfg)
print(f"cornea delay on mic 1: {delays[0, 0, 0, 1]:.2f} -> {delays[1, 0, 0, 1]:.2f} samples")
p = profiles[0].data
diff = np.abs(p[:, -1] - p[:, 0])
print(f"largest change between first and last frame at row {int(diff.argmax())} "
      f"({diff.max() / np.abs(p).max():.1%} of the profile peak)")
