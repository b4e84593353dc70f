"""Planar (sagittal) ballbot dynamics with a rider wrench applied at the seat point P.

Generalized coordinates are ``q = [theta, phi]``: chassis tilt from vertical
and absolute spherical-wheel (ball) rotation.  The ball rolls without
slipping, so its center sits at ``x = r_W * phi``.  The chassis COM is at
``(x + l_B sin(theta), r_W + l_B cos(theta))`` and P at the same expression
with ``h_P``.  Positive theta tips the chassis top towards +x.

The equations of motion are ``M(q) qdd + C(q, qd) + G(q) = Q_gen`` with

    M = [[m_B l_B^2 + I_B,        m_B r_W l_B cos(theta)],
         [m_B r_W l_B cos(theta), (m_W + m_B) r_W^2 + I_W]]
    C = [b_theta thd, -m_B r_W l_B sin(theta) thd^2 + b_phi phd]
    G = [-m_B g l_B sin(theta), 0]

and generalized forces from virtual work:

    Q_theta = -tau + h_P F_px + tau_py
    Q_phi   =  tau + r_W (F_px cos(theta) + F_pz sin(theta))

where (F_px, F_pz) are expressed in the chassis frame.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

HALF_PI = 0.5 * math.pi


class InvalidParams(ValueError):
    pass


class TiltOutOfRange(ValueError):
    pass


class SingularMass(ArithmeticError):
    pass


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of the planar ballbot.

    ``I_W`` defaults to a thin spherical shell, ``(2/3) m_W r_W^2``.
    """

    m_W: float = 4.0
    m_B: float = 50.0
    r_W: float = 0.115
    l_B: float = 0.35
    h_P: float = 0.55
    I_W: float | None = None
    I_B: float = 2.0
    b_theta: float = 0.1
    b_phi: float = 1.0
    g: float = 9.81

    def __post_init__(self):
        if self.I_W is None:
            object.__setattr__(self, "I_W", 2.0 / 3.0 * self.m_W * self.r_W**2)
        self.validate()

    def validate(self):
        for name in ("m_W", "m_B", "r_W", "l_B", "h_P", "I_W", "I_B", "g"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParams(f"{name} must be finite and > 0, got {value!r}")
        for name in ("b_theta", "b_phi"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidParams(f"{name} must be finite and >= 0, got {value!r}")
        if self.h_P < self.l_B:
            raise InvalidParams(f"h_P ({self.h_P}) must be >= l_B ({self.l_B})")

    def replace(self, **changes) -> PlantParams:
        values = asdict(self)
        values.update(changes)
        return PlantParams(**values)

    @cached_property
    def coeffs(self) -> tuple:
        # (M11, M12 amplitude, M22, gravity stiffness, h_P, r_W, b_theta, b_phi)
        return (
            self.m_B * self.l_B**2 + self.I_B,
            self.m_B * self.r_W * self.l_B,
            (self.m_W + self.m_B) * self.r_W**2 + self.I_W,
            self.m_B * self.g * self.l_B,
            self.h_P,
            self.r_W,
            self.b_theta,
            self.b_phi,
        )


class State(NamedTuple):
    theta: float = 0.0
    phi: float = 0.0
    theta_dot: float = 0.0
    phi_dot: float = 0.0

    def mirror(self) -> State:
        return State(-self.theta, -self.phi, -self.theta_dot, -self.phi_dot)


class InteractionWrench(NamedTuple):
    """Rider forces/torque at P, in the chassis frame."""

    F_px: float = 0.0
    F_pz: float = 0.0
    tau_py: float = 0.0

    def mirror(self) -> InteractionWrench:
        return InteractionWrench(-self.F_px, self.F_pz, -self.tau_py)


ZERO_WRENCH = InteractionWrench()


class InputVector(NamedTuple):
    tau: float = 0.0
    wrench: InteractionWrench = ZERO_WRENCH

    def mirror(self) -> InputVector:
        return InputVector(-self.tau, self.wrench.mirror())


@dataclass(frozen=True)
class DynamicsTerms:
    M: np.ndarray
    C: np.ndarray
    G: np.ndarray
    Q_gen: np.ndarray


def _check_tilt(theta):
    if not abs(theta) < HALF_PI:
        raise TiltOutOfRange(f"|theta| = {abs(theta)!r} rad is outside (-pi/2, pi/2)")


def compute_terms(state: State, inp: InputVector, params: PlantParams) -> DynamicsTerms:
    _check_tilt(state.theta)
    m11, b, m22, mgl, h, r, bth, bph = params.coeffs
    s, c = math.sin(state.theta), math.cos(state.theta)
    thd, phd = state.theta_dot, state.phi_dot
    fx, fz, tp = inp.wrench
    M = np.array([[m11, b * c], [b * c, m22]])
    C = np.array([bth * thd, -b * s * thd * thd + bph * phd])
    G = np.array([-mgl * s, 0.0])
    Q = np.array([-inp.tau + h * fx + tp, inp.tau + r * (fx * c + fz * s)])
    return DynamicsTerms(M, C, G, Q)


def accel_core(k, s, c, thd, phd, tau, fx, fz, tp):
    """Closed-form ``M^-1 (Q - C - G)`` on precomputed sin/cos.

    Pure arithmetic, so it accepts Python floats or broadcastable numpy arrays.
    ``k`` is ``PlantParams.coeffs``.
    """
    m11, b, m22, mgl, h, r, bth, bph = k
    m12 = b * c
    rhs_th = -tau + h * fx + tp - bth * thd + mgl * s
    rhs_ph = tau + r * (fx * c + fz * s) - bph * phd + b * s * thd * thd
    det = m11 * m22 - m12 * m12
    return (m22 * rhs_th - m12 * rhs_ph) / det, (m11 * rhs_ph - m12 * rhs_th) / det


def accel(state: State, inp: InputVector, params: PlantParams) -> tuple[float, float]:
    """Return ``(theta_ddot, phi_ddot)``."""
    theta = state.theta
    _check_tilt(theta)
    k = params.coeffs
    det = k[0] * k[2] - (k[1] * math.cos(theta)) ** 2
    if not det > 0:
        raise SingularMass(f"mass matrix determinant {det!r} at theta={theta!r}")
    fx, fz, tp = inp.wrench
    return accel_core(
        k, math.sin(theta), math.cos(theta), state.theta_dot, state.phi_dot, inp.tau, fx, fz, tp
    )


def accel_batch(theta, theta_dot, phi_dot, tau, wrench, params: PlantParams):
    """Vectorized ``accel`` over numpy arrays; ``wrench`` is a ``(..., 3)`` array."""
    theta = np.asarray(theta, dtype=float)
    if np.any(~(np.abs(theta) < HALF_PI)):
        raise TiltOutOfRange("tilt outside (-pi/2, pi/2) in batch")
    w = np.asarray(wrench, dtype=float)
    return accel_core(
        params.coeffs, np.sin(theta), np.cos(theta), theta_dot, phi_dot, tau, w[..., 0], w[..., 1], w[..., 2]
    )


def state_derivative(s: np.ndarray, inp: InputVector, params: PlantParams) -> np.ndarray:
    thdd, phdd = accel(State(*s), inp, params)
    return np.array([s[2], s[3], thdd, phdd])


def energy(state: State, params: PlantParams) -> float:
    """Kinetic plus chassis potential energy (ball potential is constant)."""
    m11, b, m22, mgl = params.coeffs[:4]
    thd, phd = state.theta_dot, state.phi_dot
    kinetic = 0.5 * (m11 * thd * thd + 2.0 * b * math.cos(state.theta) * thd * phd + m22 * phd * phd)
    return kinetic + mgl * math.cos(state.theta)


def rk4_step(s: np.ndarray, inp: InputVector, params: PlantParams, dt: float) -> np.ndarray:
    k1 = state_derivative(s, inp, params)
    k2 = state_derivative(s + 0.5 * dt * k1, inp, params)
    k3 = state_derivative(s + 0.5 * dt * k2, inp, params)
    k4 = state_derivative(s + dt * k3, inp, params)
    return s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _fd_step(x):
    return max(1e-6, 1e-6 * abs(x))


def linearize(state0: State, input0: InputVector, params: PlantParams):
    """Central-difference linearization of ``sdot = f(s, u)``.

    Returns ``(A, B_tau, B_wrench)`` with shapes (4, 4), (4, 1), (4, 3).
    """
    s0 = np.array(state0, dtype=float)
    u0 = np.array([input0.tau, *input0.wrench], dtype=float)

    def f(s, u):
        return np.array(accel(State(*s), InputVector(u[0], InteractionWrench(*u[1:])), params))

    A = np.zeros((4, 4))
    A[0, 2] = 1.0
    A[1, 3] = 1.0
    for i in range(4):
        h = _fd_step(s0[i])
        e = np.zeros(4)
        e[i] = h
        A[2:, i] = (f(s0 + e, u0) - f(s0 - e, u0)) / (2.0 * h)
    Bu = np.zeros((4, 4))
    for j in range(4):
        h = _fd_step(u0[j])
        e = np.zeros(4)
        e[j] = h
        Bu[2:, j] = (f(s0, u0 + e) - f(s0, u0 - e)) / (2.0 * h)
    return A, Bu[:, :1], Bu[:, 1:]
