import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ridebot.dynamics import InteractionWrench, PlantParams
from ridebot.equilibrium import (
    THETA_MAX,
    EqStatus,
    EquilibriumTracker,
    equilibrium_map_sweep,
    residual,
    solve_equilibrium,
)

P = PlantParams()


def closed_form(w: InteractionWrench, phi_dot_c, params=P):
    """With no shear force: sin(theta) = (b_phi phi_dot - tau_py) / (m_B g l + r F_pz)."""
    assert w.F_px == 0.0
    s = (params.b_phi * phi_dot_c - w.tau_py) / (params.m_B * params.g * params.l_B + params.r_W * w.F_pz)
    theta = math.asin(s)
    tau = params.b_phi * phi_dot_c - params.r_W * w.F_pz * s
    return theta, tau


def test_unloaded_upright():
    sol = solve_equilibrium(InteractionWrench(), 0.0, P)
    assert sol.status == EqStatus.CONVERGED
    assert sol.theta_eq == 0.0 and sol.tau_eq == 0.0 and sol.iterations == 0


@pytest.mark.parametrize("tp,fz,pdc", [(10.0, -500.0, 0.0), (-25.0, -300.0, 0.0), (5.0, -700.0, 0.5 / 0.115)])
def test_closed_form(tp, fz, pdc):
    w = InteractionWrench(0.0, fz, tp)
    sol = solve_equilibrium(w, pdc, P)
    theta, tau = closed_form(w, pdc)
    assert sol.converged
    assert sol.theta_eq == pytest.approx(theta, abs=1e-12)
    assert sol.tau_eq == pytest.approx(tau, abs=1e-10)


def test_counter_tilt_sign():
    for tp in (3.0, 10.0, 30.0):
        sol = solve_equilibrium(InteractionWrench(0.0, -500.0, tp), 0.0, P)
        assert sol.theta_eq < 0
        sol = solve_equilibrium(InteractionWrench(0.0, -500.0, -tp), 0.0, P)
        assert sol.theta_eq > 0


@settings(max_examples=200, deadline=None)
@given(fx=st.floats(-50, 50), fz=st.floats(-800, -100), tp=st.floats(-30, 30), pdc=st.floats(-10, 10))
def test_converged_residual_small(fx, fz, tp, pdc):
    w = InteractionWrench(fx, fz, tp)
    sol = solve_equilibrium(w, pdc, P)
    if sol.converged:
        a, b = residual(sol.theta_eq, sol.tau_eq, w, pdc, P)
        assert math.hypot(a, b) <= 1e-8
        assert abs(sol.theta_eq) <= THETA_MAX


@settings(max_examples=100, deadline=None)
@given(fx=st.floats(-50, 50), fz=st.floats(-800, -100), tp=st.floats(-30, 30), pdc=st.floats(-10, 10))
def test_mirror_symmetry(fx, fz, tp, pdc):
    w = InteractionWrench(fx, fz, tp)
    a = solve_equilibrium(w, pdc, P)
    b = solve_equilibrium(w.mirror(), -pdc, P)
    assert a.status == b.status
    assert b.theta_eq == pytest.approx(-a.theta_eq, abs=1e-10)
    assert b.tau_eq == pytest.approx(-a.tau_eq, abs=1e-8)


def test_saturation_clamps_and_zeroes_wheel_accel():
    w = InteractionWrench(0.0, -500.0, 80.0)
    sol = solve_equilibrium(w, 0.0, P)
    assert sol.status == EqStatus.SATURATED
    assert sol.theta_eq == pytest.approx(-THETA_MAX)
    assert abs(residual(sol.theta_eq, sol.tau_eq, w, 0.0, P)[1]) < 1e-9


def test_failures_reported_not_raised():
    # denominator of the closed form vanishes: no tilt can balance the torque
    fz = -P.m_B * P.g * P.l_B / P.r_W
    sol = solve_equilibrium(InteractionWrench(0.0, fz, 10.0), 0.0, P)
    assert sol.status != EqStatus.CONVERGED
    assert np.isfinite(sol.theta_eq) and np.isfinite(sol.tau_eq)
    assert abs(sol.theta_eq) <= THETA_MAX


def test_warm_start_needs_fewer_iterations():
    w = InteractionWrench(2.0, -500.0, 12.0)
    cold = solve_equilibrium(w, 1.0, P)
    tracker = EquilibriumTracker(P)
    tracker.solve(InteractionWrench(2.0, -500.0, 11.9), 1.0)
    warm = tracker.solve(w, 1.0)
    assert warm.converged and warm.iterations < cold.iterations
    assert warm.theta_eq == pytest.approx(cold.theta_eq, abs=1e-12)
    tracker.reset()
    assert tracker.last is None


def test_map_sweep_matches_pointwise():
    ws = [InteractionWrench(0.0, fz, tp) for tp in np.linspace(-30, 30, 7) for fz in (-800.0, -200.0)]
    sweep = equilibrium_map_sweep(ws, 0.0, P)
    for w, sol in zip(ws, sweep):
        theta, _ = closed_form(w, 0.0)
        if abs(theta) <= THETA_MAX:
            assert sol.converged and sol.theta_eq == pytest.approx(theta, abs=1e-12)
