"""Scripted adversarial rider: prescribed torso lean and the wrench it puts on the seat.

The torso is a rigid pendulum pivoting at P.  Lean ``zeta`` is measured from
world vertical, positive in the same sense as chassis tilt.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import InteractionWrench, InvalidParams, PlantParams, State, accel_core
from .gains import RiderParams

BLEND = 0.1


class WrenchMode(str, enum.Enum):
    QUASI_STATIC = "quasi_static"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class TorsoParams:
    m_t: float
    l_t: float
    I_t: float  # about the pivot

    def __post_init__(self):
        if not (self.m_t > 0 and self.l_t > 0 and self.I_t > 0):
            raise InvalidParams("torso mass, COM distance and inertia must be > 0")
        if self.I_t < self.m_t * self.l_t**2:
            raise InvalidParams("pivot inertia smaller than the point-mass term m_t*l_t^2")

    @classmethod
    def from_rider(cls, rider: RiderParams) -> TorsoParams:
        m = rider.torso_mass
        l = rider.torso_com_above_seat
        return cls(m, l, rider.torso_inertia_com + m * l * l)


class Lean(NamedTuple):
    zeta: float
    zeta_dot: float
    zeta_ddot: float


def _smooth_ramp(x):
    """Integral, value and slope of the smoothstep ``3x^2 - 2x^3`` clipped to [0, 1]."""
    if x <= 0.0:
        return 0.0, 0.0, 0.0
    if x >= 1.0:
        return x - 0.5, 1.0, 0.0
    return x**3 - 0.5 * x**4, x * x * (3.0 - 2.0 * x), 6.0 * x * (1.0 - x)


@dataclass(frozen=True)
class Segments:
    """Piecewise-constant lean rate with smoothstep transitions of width ``BLEND``.

    Each ``(t_start, rate, t_stop)`` adds ``rate`` from ``t_start`` and removes it
    from ``t_stop``; both edges are blended, so the lean is C2 and each segment
    moves it by exactly ``rate * (t_stop - t_start)``.
    """

    pieces: tuple[tuple[float, float, float], ...]
    blend: float = BLEND

    def __call__(self, t) -> Lean:
        z = zd = zdd = 0.0
        T = self.blend
        for t0, rate, t1 in self.pieces:
            for edge, sign in ((t0, 1.0), (t1, -1.0)):
                i, v, a = _smooth_ramp((t - edge) / T)
                z += sign * rate * T * i
                zd += sign * rate * v
                zdd += sign * rate * a / T
        return Lean(z, zd, zdd)


def _clip_target(target, max_lean):
    return math.copysign(min(abs(target), max_lean), target)


@dataclass(frozen=True)
class RampHold:
    """Lean to ``target`` at ``rate``, hold for ``hold`` s, then return upright at ``rate``.

    ``hold = inf`` keeps the lean to the end of the run.
    """

    target: float
    rate: float = 0.2
    hold: float = math.inf
    start: float = 0.0
    max_lean: float = math.inf

    kind = "ramp_hold"

    @property
    def amplitude(self) -> float:
        return _clip_target(self.target, self.max_lean)

    @property
    def release_time(self) -> float:
        """Time the return ramp begins (the braking cue)."""
        return self.start + abs(self.amplitude) / self.rate + BLEND + self.hold

    @cached_property
    def segments(self) -> Segments:
        a = self.amplitude
        dur = abs(a) / self.rate
        rate = math.copysign(self.rate, a)
        pieces = [(self.start, rate, self.start + dur)]
        if math.isfinite(self.hold):
            t2 = self.release_time
            pieces.append((t2, -rate, t2 + dur))
        return Segments(tuple(pieces))


@dataclass(frozen=True)
class Trapezoid:
    """Alternate forward/backward leans of ``amplitude`` for ``cycles`` cycles, ending upright."""

    amplitude: float
    rate: float = 0.3
    hold: float = 1.0
    cycles: int = 1
    start: float = 0.0
    max_lean: float = math.inf

    kind = "trapezoid"

    @cached_property
    def segments(self) -> Segments:
        a = _clip_target(self.amplitude, self.max_lean)
        dur = abs(a) / self.rate
        rate = math.copysign(self.rate, a)
        pieces = []
        t = self.start
        # 0 -> +a, then (+a -> -a, -a -> +a) ..., finally back to 0
        moves = [1.0] + [(-2.0 if i % 2 == 0 else 2.0) for i in range(2 * self.cycles - 1)] + [1.0]
        for m in moves:
            span = abs(m) * dur
            pieces.append((t, math.copysign(rate, m * rate), t + span))
            t += span + BLEND + self.hold
        return Segments(tuple(pieces))


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    frequency: float
    start: float = 0.0
    max_lean: float = math.inf

    kind = "sinusoid"


@dataclass(frozen=True)
class Script:
    """Sampled lean trajectory, interpolated with a clamped cubic spline."""

    times: tuple[float, ...]
    values: tuple[float, ...]
    max_lean: float = math.inf

    kind = "script"

    def __post_init__(self):
        if len(self.times) < 2 or len(self.times) != len(self.values):
            raise InvalidParams("script needs >= 2 (time, lean) samples of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParams("script times must be strictly increasing")
        vals = np.clip(np.asarray(self.values, float), -self.max_lean, self.max_lean)
        object.__setattr__(self, "_spline", CubicSpline(np.asarray(self.times, float), vals, bc_type="clamped"))


LeanProfile = RampHold | Trapezoid | Sinusoid | Script


def lean_at(t: float, profile: LeanProfile) -> Lean:
    if t < 0:
        raise ValueError("t must be >= 0")
    if isinstance(profile, (RampHold, Trapezoid)):
        return profile.segments(t)
    if isinstance(profile, Sinusoid):
        if t < profile.start:
            return Lean(0.0, 0.0, 0.0)
        a = _clip_target(profile.amplitude, profile.max_lean)
        w = 2.0 * math.pi * profile.frequency
        x = w * (t - profile.start)
        return Lean(a * math.sin(x), a * w * math.cos(x), -a * w * w * math.sin(x))
    if isinstance(profile, Script):
        sp = profile._spline
        tt = min(max(t, profile.times[0]), profile.times[-1])
        if tt != t:
            return Lean(float(sp(tt)), 0.0, 0.0)
        return Lean(float(sp(t)), float(sp(t, 1)), float(sp(t, 2)))
    raise TypeError(f"unknown lean profile {profile!r}")


def point_p_accel(chassis: State, chassis_accel, h_P: float, r_W: float):
    """World-frame acceleration of P given ``(theta_ddot, phi_ddot)``."""
    th, _, thd, _ = chassis
    thdd, phdd = chassis_accel
    s, c = math.sin(th), math.cos(th)
    return (r_W * phdd + h_P * (thdd * c - thd * thd * s), -h_P * (thdd * s + thd * thd * c))


def torso_wrench(
    lean: Lean,
    chassis: State,
    torso: TorsoParams,
    g: float = 9.81,
    mode: WrenchMode = WrenchMode.QUASI_STATIC,
    base_accel: tuple[float, float] = (0.0, 0.0),
) -> InteractionWrench:
    """Wrench the torso exerts on the chassis at P, in the chassis frame.

    ``base_accel`` is the world-frame acceleration of P (Dynamic mode only).
    """
    z, zd, zdd = lean
    m, l = torso.m_t, torso.l_t
    sz, cz = math.sin(z), math.cos(z)
    if mode == WrenchMode.QUASI_STATIC:
        fwx, fwz = 0.0, -m * g
        tau = m * g * l * sz
    else:
        ax = base_accel[0] + l * (zdd * cz - zd * zd * sz)
        az = base_accel[1] - l * (zdd * sz + zd * zd * cz)
        # force of the chassis on the torso
        fcx, fcz = m * ax, m * az + m * g
        i_com = torso.I_t - m * l * l
        tau_c = i_com * zdd + l * cz * fcx - l * sz * fcz
        fwx, fwz, tau = -fcx, -fcz, -tau_c
    th = chassis.theta
    s, c = math.sin(th), math.cos(th)
    return InteractionWrench(fwx * c - fwz * s, fwx * s + fwz * c, tau)


def coupled_accel(lean: Lean, chassis: State, tau: float, torso: TorsoParams, params: PlantParams):
    """Chassis ``(theta_ddot, phi_ddot)`` with the Dynamic torso reaction solved simultaneously.

    The reaction is affine in the base acceleration, so three wrench evaluations
    give the linear map and a 2x2 solve closes the loop exactly.
    """
    k = params.coeffs
    h, r = params.h_P, params.r_W
    s, c = math.sin(chassis.theta), math.cos(chassis.theta)
    thd, phd = chassis.theta_dot, chassis.phi_dot

    def response(qdd):
        w = torso_wrench(lean, chassis, torso, params.g, WrenchMode.DYNAMIC, point_p_accel(chassis, qdd, h, r))
        return accel_core(k, s, c, thd, phd, tau, *w)

    a0 = response((0.0, 0.0))
    a1 = response((1.0, 0.0))
    a2 = response((0.0, 1.0))
    # (I - J) qdd = a0
    j00, j10 = a1[0] - a0[0], a1[1] - a0[1]
    j01, j11 = a2[0] - a0[0], a2[1] - a0[1]
    m00, m01, m10, m11 = 1.0 - j00, -j01, -j10, 1.0 - j11
    det = m00 * m11 - m01 * m10
    return (m11 * a0[0] - m01 * a0[1]) / det, (m00 * a0[1] - m10 * a0[0]) / det
