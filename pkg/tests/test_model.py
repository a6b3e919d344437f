import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgefleet.model import (
    DetectorParams,
    LifecycleAction,
    LifecycleState,
    action_legal,
    apply_action,
    ms_from_s,
    s_from_ms,
)

A = LifecycleAction
S = LifecycleState

LEGAL = {
    (None, A.install),
    (S.Uninstalled, A.install),
    (S.Installed, A.start),
    (S.Stopped, A.start),
    (S.Running, A.stop),
    (S.Installed, A.uninstall),
    (S.Stopped, A.uninstall),
    (S.Installed, A.update),
    (S.Running, A.update),
    (S.Stopped, A.update),
}


def test_action_legality_matrix():
    states = [None, S.Installed, S.Running, S.Stopped, S.Uninstalled]
    for state in states:
        for action in A:
            assert action_legal(state, action) == ((state, action) in LEGAL)


def test_apply_action_results():
    assert apply_action(None, A.install) is S.Installed
    assert apply_action(S.Installed, A.start) is S.Running
    assert apply_action(S.Running, A.stop) is S.Stopped
    assert apply_action(S.Stopped, A.start) is S.Running
    assert apply_action(S.Stopped, A.uninstall) is S.Uninstalled
    assert apply_action(S.Installed, A.uninstall) is S.Uninstalled
    # update keeps the current state
    for state in (S.Installed, S.Running, S.Stopped):
        assert apply_action(state, A.update) is state


def test_apply_action_rejects_illegal():
    with pytest.raises(ValueError):
        apply_action(S.Uninstalled, A.start)
    with pytest.raises(ValueError):
        apply_action(None, A.stop)
    with pytest.raises(ValueError):
        apply_action(S.Running, A.install)
    with pytest.raises(ValueError):
        apply_action(S.Uninstalled, A.update)


def test_uninstalled_is_terminal_except_reinstall():
    for action in (A.start, A.stop, A.uninstall, A.update):
        assert not action_legal(S.Uninstalled, action)
    assert action_legal(S.Uninstalled, A.install)


def test_ms_conversion_round_trip():
    assert ms_from_s(600) == 600_000
    assert ms_from_s(0.001) == 1
    assert ms_from_s(1.5) == 1500
    assert s_from_ms(1500) == 1.5


def test_ms_conversion_rejects_off_grid():
    with pytest.raises(ValueError):
        ms_from_s(0.0001)
    with pytest.raises(ValueError):
        ms_from_s(1 / 3)
    with pytest.raises(ValueError):
        ms_from_s(math.nan)
    with pytest.raises(ValueError):
        ms_from_s(math.inf)


@given(st.integers(min_value=0, max_value=10**12))
def test_ms_round_trip_property(ms):
    assert ms_from_s(s_from_ms(ms)) == ms


def test_detector_param_defaults():
    p = DetectorParams()
    assert p.availability_grace == 1.5
    assert p.missed_reports_k == 2
    assert p.zscore_threshold == 3.5
    assert p.zscore_window == 30
    assert p.ph_delta == 0.05
    assert p.ph_lambda == 5.0
    assert p.anomaly_votes_m == 3


def test_detector_param_resolution():
    p = DetectorParams(
        zscore_window=40,
        per_service={"dev-1/svc-1": {"ph_lambda": 99.0, "anomaly_votes_m": 5}},
    )
    resolved = p.resolve("dev-1", "svc-1")
    assert resolved.ph_lambda == 99.0
    assert resolved.anomaly_votes_m == 5
    assert resolved.zscore_window == 40  # inherited from the scenario level
    assert resolved.per_service == {}
    other = p.resolve("dev-1", "other")
    assert other.ph_lambda == 5.0
    assert other.zscore_window == 40
