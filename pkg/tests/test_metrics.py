import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ridebot.metrics import (
    EmptyInput,
    TrialMetrics,
    WindowOutOfRange,
    format_table,
    motion_onset,
    summarize,
    summary_csv,
    trial_metrics,
)


def make_log(n=401, dt=1 / 400, err=None, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * dt
    phd = rng.normal(size=n)
    cmd = phd + (err if err is not None else 0.0)
    return {
        "t": t,
        "phi_dot": phd,
        "phi_dot_c": cmd,
        "v": phd * 0.115,
        "theta": rng.normal(size=n) * 0.05,
        "zeta": rng.normal(size=n) * 0.2,
    }


def test_perfect_tracking():
    m = trial_metrics(make_log())
    assert m.rmse_paper == 0.0 and m.rmse_standard == 0.0


def test_constant_error():
    e = 0.3
    log = make_log(err=e)
    m = trial_metrics(log)
    n, T = len(log["t"]), log["t"][-1]
    assert m.rmse_paper == pytest.approx(math.sqrt(n) * e / T, rel=1e-12)
    assert m.rmse_standard == pytest.approx(e, rel=1e-12)
    assert m.n_samples == n


def test_sinusoidal_error_closed_form():
    n, dt, A, w = 1201, 1 / 400, 0.7, 2 * math.pi * 1.3
    t = np.arange(n) * dt
    log = make_log(n, dt, err=A * np.sin(w * t))
    x = 2 * w * dt
    # sum_k cos(k x) for k = 0..n-1
    cos_sum = math.sin(n * x / 2) / math.sin(x / 2) * math.cos((n - 1) * x / 2)
    sq = A * A * (n / 2 - cos_sum / 2)
    m = trial_metrics(log)
    assert m.rmse_standard == pytest.approx(math.sqrt(sq / n), rel=1e-12)
    assert m.rmse_paper == pytest.approx(math.sqrt(sq) / t[-1], rel=1e-12)


def test_max_statistics_in_degrees():
    log = make_log()
    m = trial_metrics(log)
    assert m.max_abs_lean == pytest.approx(math.degrees(np.max(np.abs(log["zeta"]))))
    assert m.max_abs_tilt == pytest.approx(math.degrees(np.max(np.abs(log["theta"]))))
    assert m.max_abs_speed == pytest.approx(np.max(np.abs(log["v"])))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.integers(0, 150), b=st.integers(250, 400))
def test_rmse_identity_and_window_properties(seed, a, b):
    rng = np.random.default_rng(seed)
    log = make_log(err=rng.normal(size=401), seed=seed)
    t0, tf = log["t"][a], log["t"][b]
    m = trial_metrics(log, t0, tf)
    assert m.rmse_standard == pytest.approx(m.rmse_paper * (tf - t0) / math.sqrt(m.n_samples), rel=1e-12)
    # trailing samples outside the window do not matter
    cut = {k: v[: b + 1] for k, v in log.items()}
    assert trial_metrics(cut, t0, tf) == m
    # column order does not matter
    assert trial_metrics(dict(reversed(list(log.items()))), t0, tf) == m
    # growing the window never lowers a maximum
    wide = trial_metrics(log, log["t"][max(a - 20, 0)], log["t"][min(b + 20, 400)])
    for f in ("max_abs_lean", "max_abs_tilt", "max_abs_speed"):
        assert getattr(wide, f) >= getattr(m, f)


def test_window_errors():
    log = make_log()
    with pytest.raises(WindowOutOfRange):
        trial_metrics(log, 0.5, 0.2)
    with pytest.raises(WindowOutOfRange):
        trial_metrics(log, 0.0, 5.0)
    with pytest.raises(WindowOutOfRange):
        trial_metrics(log, -1.0, 0.5)


def test_motion_onset():
    log = make_log()
    log["v"] = np.where(log["t"] > 0.5, 0.1, 0.0)
    assert motion_onset(log) == pytest.approx(log["t"][np.argmax(log["t"] > 0.5)])
    log["v"] = np.zeros_like(log["t"])
    assert motion_onset(log) is None


def _trial(speed):
    return TrialMetrics(1.0, 2.0, speed, 3.0, 4.0, 10)


def test_summarize():
    s = summarize([_trial(0.6)] * 3)
    assert s.mean["max_abs_speed"] == pytest.approx(0.6)
    assert s.sd["max_abs_speed"] == 0.0
    assert s.cell("max_abs_speed", 1) == "0.6 (0.0)"
    a, b = 0.4, 1.1
    s = summarize([_trial(a), _trial(b)])
    assert s.mean["max_abs_speed"] == pytest.approx((a + b) / 2)
    assert s.sd["max_abs_speed"] == pytest.approx(abs(a - b) / math.sqrt(2))
    assert summarize([_trial(a)]).sd["max_abs_speed"] == 0.0
    with pytest.raises(EmptyInput):
        summarize([])


def test_table_and_csv():
    s = summarize([_trial(0.5), _trial(0.7)])
    text = format_table({"hacs": s, "ihacs": s}, ratios=True)
    ratio_rows = [ln for ln in text.splitlines() if ln.strip().startswith("ratio")]
    assert ratio_rows and all(ln.split()[-1] == "1.000" for ln in ratio_rows)
    assert "max|v| (m/s)" in text
    lines = summary_csv({"hacs": s}).splitlines()
    assert lines[0].startswith("label,n,max_abs_lean_mean,max_abs_lean_sd")
    assert lines[1].startswith("hacs,2,")
