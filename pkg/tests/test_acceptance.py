"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (``pytest tests/test_acceptance.py -v``) or directly
(``python tests/test_acceptance.py``).
"""
from __future__ import annotations

import functools
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from ridebot import cli
from ridebot import scenario as S
from ridebot.controllers import hacs_law, ihacs_law
from ridebot.dynamics import InputVector, InteractionWrench, PlantParams, State, accel, accel_batch, energy, linearize, rk4_step
from ridebot.equilibrium import EqStatus, solve_equilibrium
from ridebot.gains import TABLE_I, LqrWeights, care_residual, is_hurwitz, lqr_gain, lump_rider, solve_care, synthesize
from ridebot.metrics import trial_metrics

SUITE_START = time.perf_counter()
RIDERS = sorted(TABLE_I)

# tolerances
EQ_RESIDUAL = 1e-8
EQ_HOLD_THETA = 1e-4
EQ_HOLD_PHI_DOT = 1e-3
EQ_RUNTIME = 10.0
CARE_REL = 1e-8
CARE_CLOSED_FORM = 1e-12
SYM_TOL = 1e-12
PSD_TOL = -1e-10
HURWITZ_MARGIN = 1e-9
DRIFT_PER_S = 1e-6
STENCIL_REL = 1e-6
MIRROR_TOL = 1e-10
IDLE_RATIO = 0.6
LIMIT_RATIO = 0.75
V_CAP = 0.5
DECOMP_TOL = 1e-10
SCENARIO_RUNTIME = 2.0
SUITE_RUNTIME = 120.0


def report(n: int, title: str, ok: bool, detail: str) -> str:
    return f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} | {detail}"


# 1 -------------------------------------------------------------------------
def criterion_1():
    t_start = time.perf_counter()
    p = PlantParams()
    taus = np.linspace(-30.0, 30.0, 21)
    fzs = np.linspace(-800.0, -200.0, 21)
    sols, worst_res = [], 0.0
    for pdc in (0.0, 0.5 / p.r_W):
        for tp in taus:
            for fz in fzs:
                w = InteractionWrench(0.0, fz, tp)
                s = solve_equilibrium(w, pdc, p)
                if s.status == EqStatus.CONVERGED:
                    res = math.hypot(*accel(State(s.theta_eq, 0.0, 0.0, pdc), InputVector(s.tau_eq, w), p))
                    worst_res = max(worst_res, res)
                    sols.append((s.theta_eq, s.tau_eq, pdc, fz, tp))
    th, tau, pdc, fz, tp = np.array(sols).T
    wrench = np.stack([np.zeros_like(fz), fz, tp], axis=-1)

    def f(x):
        a, b = accel_batch(x[0], x[1], x[2], tau, wrench, p)
        return np.array([x[1], a, b])

    # constant-input open-loop hold of every converged point, batched
    x = np.array([th, np.zeros_like(th), pdc])
    dt = 2.5e-4
    err_th = err_pd = 0.0
    for _ in range(round(5.0 / dt)):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        err_th = max(err_th, float(np.max(np.abs(x[0] - th))))
        err_pd = max(err_pd, float(np.max(np.abs(x[2] - pdc))))
    elapsed = time.perf_counter() - t_start
    ok = (worst_res <= EQ_RESIDUAL and err_th < EQ_HOLD_THETA and err_pd < EQ_HOLD_PHI_DOT
          and elapsed < EQ_RUNTIME and len(sols) > 0)
    return ok, (f"{len(sols)}/882 converged, max|qdd|={worst_res:.2e}, hold |dtheta|={err_th:.2e} rad, "
                f"|dphi_dot|={err_pd:.2e} rad/s, {elapsed:.1f}s")


# 2 -------------------------------------------------------------------------
def criterion_2():
    base = PlantParams()
    weights = LqrWeights()
    red = [0, 2, 3]
    Qr = weights.Q[np.ix_(red, red)]
    worst, ok = 0.0, True
    for name in RIDERS:
        g, P, A, B = synthesize(lump_rider(TABLE_I[name], base), weights)
        res = care_residual(A[np.ix_(red, red)], B[red, :], Qr, [[weights.R]], P)
        bound = CARE_REL * (1 + np.linalg.norm(P, "fro"))
        worst = max(worst, res / bound)
        ok &= res <= bound
        ok &= float(np.max(np.abs(P - P.T))) <= SYM_TOL
        ok &= float(np.linalg.eigvalsh(P).min()) >= PSD_TOL
        ok &= g.k[1] == 0.0
        ok &= is_hurwitz(A, B, g, HURWITZ_MARGIN)
    a, b, q, r = 2.0, 0.5, 3.0, 0.2
    scalar = abs(solve_care([[a]], [[b]], [[q]], [[r]])[0, 0] - r * (a + math.sqrt(a * a + b * b * q / r)) / b**2)
    K, Pd = lqr_gain(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]), np.eye(2), [[1.0]])
    s3 = math.sqrt(3.0)
    dbl = max(float(np.max(np.abs(Pd - [[s3, 1.0], [1.0, s3]]))), float(np.max(np.abs(K - [[1.0, s3]]))))
    ok &= scalar <= CARE_CLOSED_FORM * max(1.0, abs(a)) and dbl <= CARE_CLOSED_FORM
    return bool(ok), f"worst residual/bound={worst:.2e}, scalar err={scalar:.1e}, double-integrator err={dbl:.1e}"


# 3 -------------------------------------------------------------------------
def criterion_3():
    p0 = PlantParams(b_theta=0.0, b_phi=0.0)
    drift = 0.0
    for theta0 in (0.3, -0.3, 0.1, 0.01):
        s = np.array([theta0, 0.0, 0.0, 0.0])
        e0 = energy(State(*s), p0)
        t = 0.0
        while abs(s[0]) < 1.3:  # the unpowered chassis falls; stop short of the tilt domain edge
            s = rk4_step(s, InputVector(), p0, 1e-3)
            t += 1e-3
            drift = max(drift, abs(energy(State(*s), p0) - e0) / abs(e0) / t)

    p = PlantParams()
    stencil = 0.0
    for state, inp in ((State(), InputVector()), (State(0.25, 1.0, 0.4, 2.0), InputVector(3.0, InteractionWrench(10.0, -500.0, 12.0)))):
        A, Bt, Bw = linearize(state, inp, p)
        x0 = np.array([*state, inp.tau, *inp.wrench])

        def f(x):
            a = accel(State(*x[:4]), InputVector(x[4], InteractionWrench(*x[5:])), p)
            return np.array([x[2], x[3], *a])

        cols = []
        for i in range(8):
            h = 1e-3 * max(1.0, abs(x0[i]))
            e = np.zeros(8)
            e[i] = h
            cols.append((-f(x0 + 2 * e) + 8 * f(x0 + e) - 8 * f(x0 - e) + f(x0 - 2 * e)) / (12 * h))
        J = np.column_stack(cols)
        stencil = max(stencil, float(np.max(np.abs(np.hstack([A, Bt, Bw]) - J) / np.maximum(np.abs(J), 1.0))))

    rng = np.random.default_rng(2024)
    mirror = 0.0
    for _ in range(1000):
        s = State(rng.uniform(-1.5, 1.5), rng.uniform(-100, 100), rng.uniform(-10, 10), rng.uniform(-30, 30))
        u = InputVector(rng.uniform(-100, 100), InteractionWrench(rng.uniform(-500, 500), rng.uniform(-1500, 500), rng.uniform(-100, 100)))
        a = accel(s, u, p)
        m = accel(s.mirror(), u.mirror(), p)
        mirror = max(mirror, (abs(a[0] + m[0]) + abs(a[1] + m[1])) / (1.0 + abs(a[0]) + abs(a[1])))
    ok = drift < DRIFT_PER_S and stencil < STENCIL_REL and mirror <= MIRROR_TOL
    return ok, f"energy drift={drift:.1e}/s, stencil mismatch={stencil:.1e}, mirror={mirror:.1e} (1000 samples)"


# shared runs ---------------------------------------------------------------
@functools.lru_cache(maxsize=None)
def rider_runs(scenario: str, subject: str):
    sc = cli.load_scenario(scenario, [("rider.subject", subject)], trials=1)
    assert (sc.config["rider"]["height"], sc.config["rider"]["weight"]) == (TABLE_I[subject].height, TABLE_I[subject].weight)
    kind = sc.kinds()[0]
    log = sc.run(kind)[0]
    return sc, log, trial_metrics(log, *sc.window(log))


# 4 -------------------------------------------------------------------------
def criterion_4():
    ok, parts = True, []
    for name in RIDERS:
        _, lh, mh = rider_runs("idle_hacs", name)
        _, li, mi = rider_runs("idle_ihacs", name)
        rv = mi.max_abs_speed / mh.max_abs_speed
        rr = mi.rmse_standard / mh.rmse_standard
        ok &= rv <= IDLE_RATIO and rr <= IDLE_RATIO and lh.abort is None and li.abort is None
        parts.append(f"{name} v {mi.max_abs_speed:.2f}/{mh.max_abs_speed:.2f}={rv:.2f} rmse ratio {rr:.2f}")
    return ok, "; ".join(parts)


# 5 -------------------------------------------------------------------------
def criterion_5():
    ok, parts = True, []
    for name in RIDERS:
        _, _, mh = rider_runs("limit_hacs", name)
        sc, _, mi = rider_runs("limit_ihacs", name)
        assert sc.config["shared_control"] == {"mode": "speed_limit", "v_lim": V_CAP}
        r = mi.max_abs_speed / mh.max_abs_speed
        ok &= r <= LIMIT_RATIO and mi.max_abs_speed > V_CAP
        parts.append(f"{name} peak {mi.max_abs_speed:.3f}/{mh.max_abs_speed:.2f}={r:.2f}")
    return ok, "; ".join(parts)


# 6 -------------------------------------------------------------------------
def criterion_6():
    ok, checked, bad = True, 0, 0
    for name in RIDERS:
        sc, log, _ = rider_runs("idle_ihacs", name)
        db = sc.config["controller"]["admittance"]["deadband"]
        sel = np.abs(log["tau_py"]) > db
        wrong = np.sign(log["theta_eq"][sel]) != -np.sign(log["tau_py"][sel])
        checked += int(sel.sum())
        bad += int(wrong.sum())
        ok &= sel.any() and not wrong.any()
    return ok, f"{bad} violations over {checked} samples with |tau_py| > deadband"


# 7 -------------------------------------------------------------------------
def criterion_7():
    sc = cli.load_scenario("speed_limit_hacs_vs_ihacs", trials=2)
    result = cli.run_scenario_set(sc)
    worst, ticks = 0.0, 0
    for kind, logs in result.logs.items():
        k = sc.gains(kind)
        model = sc.plant()
        for log in logs:
            for i in range(len(log)):
                s = State(log["theta"][i], log["phi"][i], log["theta_dot"][i], log["phi_dot"][i])
                cmd = log["phi_dot_c"][i]
                if kind == "ihacs":
                    th_eq, tau_eq, ih = log["theta_eq"][i], log["tau_eq"][i], log["tau_r"][i]
                    hc = hacs_law(s, cmd, k)
                else:
                    hc = log["tau_r"][i]
                    w = InteractionWrench(log["F_px_sensed"][i], log["F_pz_sensed"][i], log["tau_py_sensed"][i])
                    sol = solve_equilibrium(w, cmd, model)
                    th_eq, tau_eq = sol.theta_eq, sol.tau_eq
                    ih = ihacs_law(s, cmd, k, th_eq, tau_eq)
                worst = max(worst, abs((ih - hc) - (k.k_theta * th_eq + tau_eq)))
                ticks += 1
    return worst <= DECOMP_TOL, f"max |diff - (k_theta theta_eq + tau_eq)|={worst:.1e} over {ticks} ticks"


# 8 -------------------------------------------------------------------------
def criterion_8():
    ok, parts = True, []
    with tempfile.TemporaryDirectory() as tmp:
        for name in S.bundled_names():
            a, b = Path(tmp) / name / "a", Path(tmp) / name / "b"
            ok &= cli.cmd_run(name, a, trials=2, quiet=True) == 0
            ok &= cli.cmd_run(str(a / "manifest.yaml"), b, quiet=True) == 0
            files = sorted(a.glob("*/trial_*.csv"))
            same = bool(files) and all(f.read_bytes() == (b / f.relative_to(a)).read_bytes() for f in files)
            ok &= same
            parts.append(f"{name}:{len(files)} logs {'identical' if same else 'DIFFER'}")
    return ok, "; ".join(parts)


# 9 -------------------------------------------------------------------------
def criterion_9():
    sc = cli.load_scenario("idle_ihacs", trials=1)
    assert sc.config["sim"]["duration"] == 10.0 and sc.config["sim"]["dt_physics"] == 2.5e-4
    assert sc.config["sim"]["control_rate"] == 400.0 and sc.kinds() == ["ihacs"]
    best = math.inf
    for _ in range(2):
        t = time.perf_counter()
        sc.run("ihacs")
        best = min(best, time.perf_counter() - t)
    suite = time.perf_counter() - SUITE_START
    return best < SCENARIO_RUNTIME and suite < SUITE_RUNTIME, f"10 s scenario in {best:.2f}s, suite so far {suite:.0f}s"


CRITERIA = [
    (1, "equilibrium contract", criterion_1),
    (2, "Riccati contract", criterion_2),
    (3, "dynamics fidelity", criterion_3),
    (4, "idle-keeping comparison", criterion_4),
    (5, "speed-limiting comparison", criterion_5),
    (6, "counter-tilt behavior", criterion_6),
    (7, "decomposition identity", criterion_7),
    (8, "determinism and manifest round-trip", criterion_8),
    (9, "performance", criterion_9),
]


@pytest.mark.parametrize("n,title,check", CRITERIA, ids=[f"criterion_{n}" for n, _, _ in CRITERIA])
def test_criterion(n, title, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print("\n" + report(n, title, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    for n, title, check in CRITERIA:
        print(report(n, title, *check()), flush=True)
