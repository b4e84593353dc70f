"""HACS and iHACS balance controllers, command-speed generation and shared control."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple


from .dynamics import InteractionWrench, InvalidParams, PlantParams, State
from .equilibrium import THETA_MAX, EqStatus, EquilibriumTracker
from .gains import GainVector

TOP_SPEED = 2.4

# Per-tick log flags (bitmask).
FLAG_TORQUE_CLIPPED = 1
FLAG_EQ_SATURATED = 2
FLAG_EQ_NO_CONVERGENCE = 4
FLAG_EQ_SINGULAR = 8

_EQ_FLAGS = {
    EqStatus.CONVERGED: 0,
    EqStatus.SATURATED: FLAG_EQ_SATURATED,
    EqStatus.NO_CONVERGENCE: FLAG_EQ_NO_CONVERGENCE,
    EqStatus.JACOBIAN_SINGULAR: FLAG_EQ_SINGULAR,
}


@dataclass(frozen=True)
class AdmittanceTuning:
    """Virtual mass-damper from seat pitch torque to command speed (m/s)."""

    virtual_mass: float = 0.5
    virtual_damping: float = 1.0
    sensitivity: float = 0.2
    deadband: float = 2.0
    v_max: float = 1.4

    def __post_init__(self):
        if not (self.virtual_mass > 0 and self.virtual_damping > 0 and self.sensitivity > 0):
            raise InvalidParams("virtual_mass, virtual_damping and sensitivity must be > 0")
        if not self.deadband >= 0:
            raise InvalidParams("deadband must be >= 0")
        if not 0 < self.v_max <= TOP_SPEED:
            raise InvalidParams(f"v_max must lie in (0, {TOP_SPEED}]")


def deadband(x: float, width: float) -> float:
    if x > width:
        return x - width
    if x < -width:
        return x + width
    return 0.0


def admittance_speed(tau_py: float, tuning: AdmittanceTuning, dt: float, v_c: float, r_W: float):
    """One explicit step of ``m_v dv/dt = k_f deadband(tau_py) - b_v v``.

    Returns ``(v_c_next, phi_dot_c)``; speed is clamped to ``+-v_max``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    dv = (tuning.sensitivity * deadband(tau_py, tuning.deadband) - tuning.virtual_damping * v_c) / tuning.virtual_mass
    v = min(max(v_c + dt * dv, -tuning.v_max), tuning.v_max)
    return v, v / r_W


class Mode(str, enum.Enum):
    PASSTHROUGH = "passthrough"
    IDLE = "idle"
    SPEED_LIMIT = "speed_limit"


@dataclass(frozen=True)
class SharedControlMode:
    mode: Mode = Mode.PASSTHROUGH
    v_lim: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode == Mode.SPEED_LIMIT and not (self.v_lim is not None and self.v_lim > 0):
            raise InvalidParams("speed_limit mode needs v_lim > 0")

    @classmethod
    def idle(cls):
        return cls(Mode.IDLE)

    @classmethod
    def speed_limit(cls, v_lim):
        return cls(Mode.SPEED_LIMIT, v_lim)


def shared_governor(candidate: float, mode: SharedControlMode, r_W: float) -> float:
    if mode.mode == Mode.IDLE:
        return 0.0
    if mode.mode == Mode.SPEED_LIMIT:
        lim = mode.v_lim / r_W
        return min(max(candidate, -lim), lim)
    return candidate


def hacs_law(s: State, phi_dot_c: float, k: GainVector) -> float:
    """``tau_r = k ([0, 0, 0, phi_dot_c] - s)``."""
    k0, k1, k2, k3 = k.k
    return k0 * (0.0 - s[0]) + k1 * (0.0 - s[1]) + k2 * (0.0 - s[2]) + k3 * (phi_dot_c - s[3])


def ihacs_law(s: State, phi_dot_c: float, k: GainVector, theta_eq: float, tau_eq: float) -> float:
    """``tau_r = k ([theta_eq, 0, 0, phi_dot_c] - s) + tau_eq``."""
    k0, k1, k2, k3 = k.k
    return k0 * (theta_eq - s[0]) + k1 * (0.0 - s[1]) + k2 * (0.0 - s[2]) + k3 * (phi_dot_c - s[3]) + tau_eq


def ihacs_step(s: State, phi_dot_c: float, wrench: InteractionWrench, k: GainVector, solver: EquilibriumTracker):
    """Solve for the equilibrium under ``wrench`` and apply the compensated law.

    Returns ``(tau_r, solution)``.
    """
    sol = solver.solve(wrench, phi_dot_c)
    return ihacs_law(s, phi_dot_c, k, sol.theta_eq, sol.tau_eq), sol


class TorqueMode(str, enum.Enum):
    IDEAL = "ideal"
    LAG = "lag"


@dataclass(frozen=True)
class TorqueLoopConfig:
    mode: TorqueMode = TorqueMode.IDEAL
    limit: float = 100.0
    time_constant: float = 0.02
    k_p: float = 0.5
    k_i: float = 20.0
    actuator_gain: float = 1.0
    integrator_limit: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "mode", TorqueMode(self.mode))
        if not self.limit > 0:
            raise InvalidParams("torque limit must be > 0")
        if not self.time_constant > 0:
            raise InvalidParams("actuator time constant must be > 0")


class TorqueLoop:
    """Low-level torque tracking.

    Ideal mode clamps the reference to the actuator limit.  Lag mode drives a
    first-order actuator ``T dtau/dt = g u - tau``; ``u`` is the reference plus
    a PI correction on the error against a first-order reference model with
    the same time constant, so a nominal actuator follows the model exactly.
    """

    def __init__(self, config: TorqueLoopConfig, dt: float):
        self.config = config
        self.dt = dt
        self.decay = math.exp(-dt / config.time_constant)
        self.reset()

    def reset(self):
        self.tau = 0.0
        self.model = 0.0
        self.integral = 0.0

    def step(self, tau_r: float) -> tuple[float, bool]:
        cfg = self.config
        lim = cfg.limit
        if cfg.mode == TorqueMode.IDEAL:
            out = min(max(tau_r, -lim), lim)
            return out, out != tau_r
        a = 1.0 - self.decay
        err = self.model - self.tau
        self.integral = min(max(self.integral + self.dt * err, -cfg.integrator_limit), cfg.integrator_limit)
        u = tau_r + cfg.k_p * err + cfg.k_i * self.integral
        self.model += a * (tau_r - self.model)
        self.tau += a * (cfg.actuator_gain * u - self.tau)
        out = min(max(self.tau, -lim), lim)
        return out, out != self.tau


def torque_loop(tau_r: float, loop: TorqueLoop) -> tuple[float, bool]:
    return loop.step(tau_r)


class ControllerKind(str, enum.Enum):
    HACS = "hacs"
    IHACS = "ihacs"


class ControlOutput(NamedTuple):
    phi_dot_c_pre: float
    phi_dot_c: float
    theta_eq: float
    tau_eq: float
    tau_r: float
    tau: float
    flags: int


class BalanceController:
    """One controller instance: admittance generator, governor, balance law, torque loop.

    ``model`` is the isolated-ballbot model used for interaction compensation;
    ``gains`` come from the (possibly rider-lumped) plant.
    """

    def __init__(
        self,
        kind: ControllerKind | str,
        gains: GainVector,
        model: PlantParams,
        tuning: AdmittanceTuning = AdmittanceTuning(),
        governor: SharedControlMode = SharedControlMode(),
        torque: TorqueLoopConfig = TorqueLoopConfig(),
        dt: float = 1.0 / 400.0,
        theta_max: float = THETA_MAX,
        wrench_filter_hz: float | None = None,
    ):
        self.kind = ControllerKind(kind)
        self.gains = gains
        self.model = model
        self.tuning = tuning
        self.governor = governor
        self.dt = dt
        self.loop = TorqueLoop(torque, dt)
        self.tracker = EquilibriumTracker(model, theta_max)
        self.filter_alpha = None
        if wrench_filter_hz:
            self.filter_alpha = 1.0 - math.exp(-2.0 * math.pi * wrench_filter_hz * dt)
        self.reset()

    def reset(self):
        self.v_c = 0.0
        self.loop.reset()
        self.tracker.reset()
        self.filtered = None

    def _filter(self, w: InteractionWrench) -> InteractionWrench:
        if self.filter_alpha is None:
            return w
        if self.filtered is None:
            self.filtered = w
        else:
            a = self.filter_alpha
            self.filtered = InteractionWrench(*(f + a * (x - f) for f, x in zip(self.filtered, w)))
        return self.filtered

    def step(self, s: State, wrench: InteractionWrench) -> ControlOutput:
        r_W = self.model.r_W
        self.v_c, candidate = admittance_speed(wrench[2], self.tuning, self.dt, self.v_c, r_W)
        cmd = shared_governor(candidate, self.governor, r_W)
        flags = 0
        if self.kind == ControllerKind.HACS:
            theta_eq = tau_eq = 0.0
            tau_r = hacs_law(s, cmd, self.gains)
        else:
            tau_r, sol = ihacs_step(s, cmd, self._filter(wrench), self.gains, self.tracker)
            theta_eq, tau_eq = sol.theta_eq, sol.tau_eq
            flags |= _EQ_FLAGS[sol.status]
        tau, clipped = self.loop.step(tau_r)
        if clipped:
            flags |= FLAG_TORQUE_CLIPPED
        return ControlOutput(candidate, cmd, theta_eq, tau_eq, tau_r, tau, flags)
