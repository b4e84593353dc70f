"""Fixed-step closed-loop simulation of rider, ballbot and controller.

Control runs at ``control_rate`` with zero-order hold; the plant is
integrated with RK4 at ``dt_physics``.  One log row is written per control
tick, holding the state at the tick and the signals computed from it.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .controllers import BalanceController, ControlOutput
from .dynamics import HALF_PI, InteractionWrench, PlantParams, State, accel_core
from .rider import Lean, LeanProfile, TorsoParams, WrenchMode, coupled_accel, lean_at, point_p_accel, torso_wrench

COLUMNS = (
    "t",
    "theta",
    "phi",
    "theta_dot",
    "phi_dot",
    "v",
    "zeta",
    "F_px",
    "F_pz",
    "tau_py",
    "F_px_sensed",
    "F_pz_sensed",
    "tau_py_sensed",
    "phi_dot_c_pre",
    "phi_dot_c",
    "theta_eq",
    "tau_eq",
    "tau_r",
    "tau",
    "flags",
)

FALL_OVER = "fall_over"
NON_FINITE = "non_finite"
POSITION_LIMIT = "position_limit"


@dataclass(frozen=True)
class SimConfig:
    dt_physics: float = 2.5e-4
    control_rate: float = 400.0
    duration: float = 10.0
    sensor_noise_std: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0
    tilt_abort: float = 0.9 * HALF_PI
    position_limit: float = math.inf
    command_delay_ticks: int = 0
    trace_substeps: bool = False

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if not (self.dt_physics > 0 and self.control_rate > 0):
            raise ValueError("dt_physics and control_rate must be > 0")
        ratio = 1.0 / (self.control_rate * self.dt_physics)
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("dt_physics must divide the control period exactly")
        if self.command_delay_ticks not in (0, 1):
            raise ValueError("command_delay_ticks must be 0 or 1")
        noise = tuple(float(x) for x in np.broadcast_to(np.asarray(self.sensor_noise_std, float), (3,)))
        if any(x < 0 for x in noise):
            raise ValueError("sensor noise std must be >= 0")
        object.__setattr__(self, "sensor_noise_std", noise)

    @property
    def substeps(self) -> int:
        return round(1.0 / (self.control_rate * self.dt_physics))

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_rate

    @property
    def n_ticks(self) -> int:
        return round(self.duration * self.control_rate)


@dataclass
class RiderModel:
    """Rider torso and lean script driving the seat wrench; ``profile=None`` is no rider."""

    torso: TorsoParams | None = None
    profile: LeanProfile | None = None
    mode: WrenchMode = WrenchMode.QUASI_STATIC

    def lean(self, t) -> Lean:
        if self.profile is None:
            return Lean(0.0, 0.0, 0.0)
        return lean_at(t, self.profile)


@dataclass
class TrajectoryLog:
    columns: dict[str, np.ndarray]
    abort: str | None = None
    abort_time: float | None = None
    trace: dict[str, np.ndarray] | None = None

    def __len__(self):
        return len(self.columns["t"])

    def __getitem__(self, name) -> np.ndarray:
        return self.columns[name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(COLUMNS) + "\n")
        cols = [self.columns[c] for c in COLUMNS]
        for i in range(len(self)):
            buf.write(",".join(repr(int(col[i])) if name == "flags" else repr(float(col[i])) for name, col in zip(COLUMNS, cols)))
            buf.write("\n")
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> TrajectoryLog:
        data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
        data = np.atleast_1d(data)
        missing = [c for c in COLUMNS if c not in data.dtype.names]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        return cls({c: np.asarray(data[c], float) for c in data.dtype.names})


def _wrench_quasi_static(lean, theta, torso: TorsoParams, g):
    return torso_wrench(lean, State(theta, 0.0, 0.0, 0.0), torso, g, WrenchMode.QUASI_STATIC)


def run_scenario(
    plant: PlantParams,
    rider: RiderModel,
    controller: BalanceController,
    sim: SimConfig,
    initial: State = State(),
) -> TrajectoryLog:
    """Simulate one trial and return its log; aborts are recorded, not raised."""
    controller.reset()
    k = plant.coeffs
    h, r = plant.h_P, plant.r_W
    sin, cos = math.sin, math.cos
    dt = sim.dt_physics
    nsub = sim.substeps
    tc = sim.control_dt
    rng = np.random.default_rng(sim.seed)
    noise = sim.sensor_noise_std
    noisy = any(noise)
    torso = rider.torso
    has_rider = torso is not None and rider.profile is not None
    dynamic = has_rider and rider.mode == WrenchMode.DYNAMIC
    g = plant.g

    th, ph, thd, phd = (float(x) for x in initial)
    rows = []
    trace = {"t": [], "tau": [], "phi_dot_c": []} if sim.trace_substeps else None
    pending_tau = None
    abort = None
    abort_time = None

    def coupled(t, th, ph, thd, phd, tau):
        return coupled_accel(rider.lean(t), State(th, ph, thd, phd), tau, torso, plant)

    n = sim.n_ticks
    for tick in range(n + 1):
        t = tick * tc
        lean = rider.lean(t) if has_rider else Lean(0.0, 0.0, 0.0)
        if not has_rider:
            w_true = InteractionWrench()
        elif dynamic:
            st = State(th, ph, thd, phd)
            qdd = coupled(t, th, ph, thd, phd, pending_tau if pending_tau is not None else 0.0)
            w_true = torso_wrench(lean, st, torso, g, WrenchMode.DYNAMIC, point_p_accel(st, qdd, h, r))
        else:
            w_true = _wrench_quasi_static(lean, th, torso, g)
        if noisy:
            e = rng.standard_normal(3)
            w_sensed = InteractionWrench(*(w + sd * x for w, sd, x in zip(w_true, noise, e)))
        else:
            w_sensed = w_true
        out: ControlOutput = controller.step(State(th, ph, thd, phd), w_sensed)
        tau = out.tau
        if sim.command_delay_ticks:
            tau, pending_tau = (pending_tau if pending_tau is not None else 0.0), out.tau
        else:
            pending_tau = tau
        rows.append(
            (t, th, ph, thd, phd, phd * r, lean[0], *w_true, *w_sensed, out.phi_dot_c_pre, out.phi_dot_c,
             out.theta_eq, out.tau_eq, out.tau_r, tau, out.flags)
        )
        if tick == n:
            break
        fx, fz, tp = w_true
        if dynamic:
            def f(ts, th_, thd_, phd_, tau=tau):
                return coupled(ts, th_, ph, thd_, phd_, tau)
        else:
            def f(ts, th_, thd_, phd_, tau=tau):
                return accel_core(k, sin(th_), cos(th_), thd_, phd_, tau, fx, fz, tp)
        try:
            for sub in range(nsub):
                ts = t + sub * dt
                if trace is not None:
                    trace["t"].append(ts)
                    trace["tau"].append(tau)
                    trace["phi_dot_c"].append(out.phi_dot_c)
                k1 = f(ts, th, thd, phd)
                t2d, p2d = thd + 0.5 * dt * k1[0], phd + 0.5 * dt * k1[1]
                k2 = f(ts + 0.5 * dt, th + 0.5 * dt * thd, t2d, p2d)
                t3d, p3d = thd + 0.5 * dt * k2[0], phd + 0.5 * dt * k2[1]
                k3 = f(ts + 0.5 * dt, th + 0.5 * dt * t2d, t3d, p3d)
                t4d, p4d = thd + dt * k3[0], phd + dt * k3[1]
                k4 = f(ts + dt, th + dt * t3d, t4d, p4d)
                th += dt / 6.0 * (thd + 2.0 * t2d + 2.0 * t3d + t4d)
                ph += dt / 6.0 * (phd + 2.0 * p2d + 2.0 * p3d + p4d)
                thd += dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
                phd += dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        except (ZeroDivisionError, OverflowError, ValueError):
            abort, abort_time = NON_FINITE, t + tc
            break
        t_next = (tick + 1) * tc
        if not all(math.isfinite(x) for x in (th, ph, thd, phd)):
            abort, abort_time = NON_FINITE, t_next
            break
        if abs(th) >= sim.tilt_abort:
            abort, abort_time = FALL_OVER, t_next
            break
        if abs(ph * r) > sim.position_limit:
            abort, abort_time = POSITION_LIMIT, t_next
            break

    arr = np.array(rows, dtype=float).reshape(-1, len(COLUMNS))
    columns = {name: arr[:, i].copy() for i, name in enumerate(COLUMNS)}
    columns["flags"] = columns["flags"].astype(np.int64)
    tr = {key: np.asarray(v) for key, v in trace.items()} if trace is not None else None
    return TrajectoryLog(columns, abort, abort_time, tr)


def run_trial_set(
    build: Callable[[int], tuple],
    seeds: Sequence[int],
    workers: int = 1,
) -> list[TrajectoryLog]:
    """Run one independent trial per seed; results are ordered like ``seeds``.

    ``build(seed)`` must return the ``run_scenario`` argument tuple with fresh
    controller state.  It has to be picklable when ``workers > 1``.
    """
    if len(seeds) < 1:
        raise ValueError("need at least one trial")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_built, [build] * len(seeds), seeds))
    return [_run_built(build, s) for s in seeds]


def _run_built(build, seed):
    return run_scenario(*build(seed))
