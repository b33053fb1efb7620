"""Compressed int8 path next to the float path, frame by frame.

Trains a ridge model on compressed 30 x 26 x 8 instances of one session and
streams a second session through both the float and the integer-only path.
Both sessions share one mounting (no remount jitter), so errors are small.
"""

import numpy as np

from echogaze.fmcw import FrameConfig
from echogaze.metrics import angular_errors
from echogaze.model import fit_linear, predict_features
from echogaze.protocol import ProtocolSpec, ScreenGeometry, generate_session_trace
from echogaze.quant import (CompressedInstanceSpec, compressed_features, conv_constraint_check,
                            ConvLayerSpec, quant_pipeline_predict)
from echogaze.sim import default_scene, synthesize_session

cfg, geom, spec = FrameConfig(), ScreenGeometry(), CompressedInstanceSpec()
print("1x1 conv layer violations:", conv_constraint_check(ConvLayerSpec((1, 1), (1, 1))))
print(f"instance {spec.raw_len} x {spec.window_frames} x {spec.n_mics} raw samples -> "
      f"{spec.n_features} features")

sessions = []
for seed in (0, 1):
    trace = generate_session_trace(geom, ProtocolSpec(n_regions=16), seed, cfg)
    sessions.append((trace, synthesize_session(default_scene(), trace, cfg, seed, geom).audio))

(tr_trace, tr_audio), (te_trace, te_audio) = sessions
X, Y, _ = compressed_features(tr_audio, tr_trace, cfg, spec, positions=np.arange(25, 4000, 4))
model = fit_linear((X, Y), 100.0)

pred_q, t_end, latency = quant_pipeline_predict(te_audio, model, cfg, spec)
Xf, Yf, _ = compressed_features(te_audio, te_trace, cfg, spec, positions=t_end)
pred_f = predict_features(model, Xf)
print(f"float MGAE {angular_errors(pred_f, Yf, geom).mean():.2f} deg, "
      f"int8 MGAE {angular_errors(pred_q, Yf, geom).mean():.2f} deg")
print(f"per-frame latency mean {latency.mean():.3f} ms, p99 {np.percentile(latency, 99):.3f} ms "
      f"(a frame arrives every {cfg.frame_period_s * 1e3:.0f} ms)")
