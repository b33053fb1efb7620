import numpy as np
import pytest
from hypothesis import given, strategies as st

from echogaze.errors import ConfigError
from echogaze.model import GBRTParams
from echogaze.pipeline import (ModelSpec, RunConfig, SessionFeatures, cross_session_folds,
                               evaluate_protocol, in_session_split, run_end_to_end)
from echogaze.protocol import ProtocolSpec, ScreenGeometry


def test_twelve_sessions_six_folds():
    folds = cross_session_folds(12, 6)
    assert len(folds) == 6 and all(len(f) == 2 for f in folds)
    assert sorted(sum(folds, [])) == list(range(12))


@given(n=st.integers(2, 40), k=st.integers(2, 40))
def test_folds_partition_sessions(n, k):
    if k > n:
        with pytest.raises(ConfigError):
            cross_session_folds(n, k)
        return
    folds = cross_session_folds(n, k)
    assert sorted(sum(folds, [])) == list(range(n))
    assert max(map(len, folds)) - min(map(len, folds)) <= 1


@given(n_frames=st.integers(60, 3000), stride=st.integers(1, 16), frac=st.floats(0.1, 0.9))
def test_in_session_windows_never_cross(n_frames, stride, frac):
    t = np.arange(25, n_frames, stride)
    f = SessionFeatures(0, np.zeros((t.size, 1)), np.zeros((t.size, 2)), t,
                        np.full(t.size, "main"), n_frames)
    train, test, boundary = in_session_split(f, 26, frac)
    assert not np.any(train & test)
    assert np.all(t[train] < boundary)
    assert np.all(t[test] - 25 >= boundary)                 # whole window after the split


def fake_sessions(rng, n=4, per=60):
    A = rng.standard_normal((2, 10)) / 500
    out = []
    for sid in range(n):
        Y = rng.uniform([0, 0], [1919, 1079], (per, 2))
        X = Y @ A + 1e-4 * rng.standard_normal((per, 10))
        seg = np.array(["calib"] * 15 + ["main"] * (per - 15))
        out.append(SessionFeatures(sid, X, Y, np.arange(25, 25 + 8 * per, 8), seg, 25 + 8 * per))
    return out


def test_cross_session_tests_every_session_once(rng):
    sessions = fake_sessions(rng)
    rep, rows = evaluate_protocol(sessions, "cross_session", ModelSpec("linear", 1e-6),
                                  ScreenGeometry(), folds=2)
    tested = [s for f in rep["folds"] for s in f["test_sessions"]]
    assert sorted(tested) == [0, 1, 2, 3]
    for f in rep["folds"]:
        assert not set(f["train_sessions"]) & set(f["test_sessions"])
    assert len(rows) == 4 * 45
    assert rep["mean_mgae_deg"] < 1.0


def test_in_session_report(rng):
    rep, _ = evaluate_protocol(fake_sessions(rng), "in_session", ModelSpec("linear", 1e-6),
                               ScreenGeometry(), window_frames=26)
    assert len(rep["folds"]) == 1 and len(rep["folds"][0]["per_session"]) == 4


def test_unknown_mode(rng):
    with pytest.raises(ConfigError):
        evaluate_protocol(fake_sessions(rng), "leave_one_out", ModelSpec("linear"),
                          ScreenGeometry())


def test_run_config_round_trip():
    rc = RunConfig(n_sessions=5, n_train=3, gbrt=GBRTParams(n_trees=7))
    assert RunConfig.from_dict(rc.to_dict()) == rc
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"colour": "blue"})
    with pytest.raises(ConfigError):
        RunConfig(calibration="projective")
    assert rc.hash(1) != rc.hash(2)


@pytest.fixture(scope="module")
def small_runs():
    rc = RunConfig(protocol=ProtocolSpec(n_regions=4, calib_duration_s=5.0), n_sessions=3,
                   n_train=2, gbrt=GBRTParams(n_trees=5))
    return [run_end_to_end(rc, seed=11) for _ in range(2)] + [run_end_to_end(rc, seed=12)]


def test_end_to_end_deterministic(small_runs):
    a, b, c = small_runs
    assert a["report_hash"] == b["report_hash"]
    assert a["report_hash"] != c["report_hash"]


def test_end_to_end_report_structure(small_runs):
    rep = small_runs[0]
    assert rep["split"] == {"train_sessions": [0, 1], "test_sessions": [2]}
    assert set(rep["cross_session"]) == {"linear", "gbrt"}
    assert len(rep["noise_sweep"]) == 4
    assert {"mgae_float_deg", "mgae_quant_deg"} <= set(rep["quant"])
    assert len(rep["feature_importance"]) == 16
