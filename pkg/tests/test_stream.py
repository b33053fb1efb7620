import numpy as np
import pytest

from echogaze.echo import instance_matrix, session_profiles
from echogaze.errors import ContractError, EmptyInputError
from echogaze.model import fit_linear, predict_features
from echogaze.protocol import GazeTrace
from echogaze.sim import default_scene, synthesize_session
from echogaze.stream import FrameProcessor, run_stream


@pytest.fixture(scope="module")
def session():
    from echogaze.fmcw import FrameConfig
    cfg = FrameConfig()
    n = 90
    trace = GazeTrace(np.linspace(50, 1850, n), np.linspace(900, 100, n), np.full(n, "main"))
    audio = synthesize_session(default_scene(), trace, cfg, 2).audio
    prof = session_profiles(audio, cfg)
    X, Y, t = instance_matrix(prof, trace, cfg)
    model = fit_linear((X, Y), 10.0)
    return cfg, audio, prof, X, t, model


@pytest.mark.parametrize("magnitude", [False, True])
def test_stream_equals_batch(session, magnitude):
    cfg, audio, prof, X, t, model = session
    if magnitude:
        trace = GazeTrace(np.zeros(90), np.zeros(90), np.full(90, "main"))
        prof = session_profiles(audio, cfg, magnitude=True)
        X, _, t = instance_matrix(prof, trace, cfg)
    rep = run_stream(audio, model, cfg, prof[0].range_origin_px, magnitude=magnitude)
    assert np.array_equal(rep.t_end, t)
    assert np.allclose(rep.predictions, predict_features(model, X), atol=1e-6)
    assert rep.latency_ms.size == 90 and rep.fps_sustained > 0
    assert rep.p99_latency_ms >= rep.mean_latency_ms * 0.5


def test_stream_rejects_mismatched_model(session, rng):
    cfg = session[0]
    m = fit_linear((rng.standard_normal((4, 7)), rng.standard_normal((4, 2))))
    with pytest.raises(ContractError):
        FrameProcessor(m, cfg, 0)


def test_stream_needs_a_full_window(session):
    cfg, audio, prof, _, _, model = session
    with pytest.raises(EmptyInputError):
        run_stream(audio[:25 * 600], model, cfg, 0)


def test_frame_shape_checked(session):
    cfg, _, _, _, _, model = session
    proc = FrameProcessor(model, cfg, 0)
    with pytest.raises(ContractError):
        proc.push(np.zeros((599, 8)))
