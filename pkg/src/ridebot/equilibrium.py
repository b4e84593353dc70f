"""Tilt angle and wheel torque that hold a commanded wheel speed under a rider wrench.

Solves ``accel([theta, 0, 0, phi_dot_c], [tau, wrench]) = 0`` for
``(theta, tau)`` by Newton iteration with a central-difference Jacobian.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .dynamics import InteractionWrench, PlantParams, accel_core

THETA_MAX = 0.52
TOL = 1e-9
MAX_ITER = 50
# Newton iterates are kept inside this band so the mass matrix stays well defined.
THETA_SEARCH_LIMIT = 1.4


class EqStatus(enum.IntEnum):
    CONVERGED = 0
    SATURATED = 1
    NO_CONVERGENCE = 2
    JACOBIAN_SINGULAR = 3


class EquilibriumSolution(NamedTuple):
    theta_eq: float
    tau_eq: float
    iterations: int
    residual_norm: float
    status: EqStatus = EqStatus.CONVERGED

    @property
    def converged(self) -> bool:
        return self.status == EqStatus.CONVERGED


def residual(theta, tau, wrench, phi_dot_c, params: PlantParams):
    fx, fz, tp = wrench
    return accel_core(params.coeffs, math.sin(theta), math.cos(theta), 0.0, phi_dot_c, tau, fx, fz, tp)


def _jacobian(theta, tau, wrench, phi_dot_c, params):
    h_th = max(1e-6, 1e-6 * abs(theta))
    h_tau = max(1e-6, 1e-6 * abs(tau))
    a_p, b_p = residual(theta + h_th, tau, wrench, phi_dot_c, params)
    a_m, b_m = residual(theta - h_th, tau, wrench, phi_dot_c, params)
    c_p, d_p = residual(theta, tau + h_tau, wrench, phi_dot_c, params)
    c_m, d_m = residual(theta, tau - h_tau, wrench, phi_dot_c, params)
    return (
        (a_p - a_m) / (2 * h_th),
        (c_p - c_m) / (2 * h_tau),
        (b_p - b_m) / (2 * h_th),
        (d_p - d_m) / (2 * h_tau),
    )


def solve_equilibrium(
    wrench: InteractionWrench,
    phi_dot_c: float,
    params: PlantParams,
    guess: tuple[float, float] | None = None,
    theta_max: float = THETA_MAX,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> EquilibriumSolution:
    """Newton solve from ``guess`` (cold start at ``(0, 0)``).

    Never raises on numerical trouble: a saturated, non-converged or
    singular-Jacobian result is returned with the matching ``status``.
    """
    theta, tau = guess if guess is not None else (0.0, 0.0)
    r0, r1 = residual(theta, tau, wrench, phi_dot_c, params)
    norm = max(abs(r0), abs(r1))
    it = 0
    status = EqStatus.NO_CONVERGENCE
    while it < max_iter:
        if norm < tol:
            status = EqStatus.CONVERGED
            break
        j00, j01, j10, j11 = _jacobian(theta, tau, wrench, phi_dot_c, params)
        det = j00 * j11 - j01 * j10
        if det == 0.0 or not math.isfinite(det):
            status = EqStatus.JACOBIAN_SINGULAR
            break
        d_theta = (j11 * r0 - j01 * r1) / det
        d_tau = (j00 * r1 - j10 * r0) / det
        theta = min(max(theta - d_theta, -THETA_SEARCH_LIMIT), THETA_SEARCH_LIMIT)
        tau = tau - d_tau
        r0, r1 = residual(theta, tau, wrench, phi_dot_c, params)
        norm = max(abs(r0), abs(r1))
        it += 1
    else:
        if norm < tol:
            status = EqStatus.CONVERGED

    if status == EqStatus.CONVERGED:
        # one polishing step: quadratic convergence takes the residual to round-off
        j00, j01, j10, j11 = _jacobian(theta, tau, wrench, phi_dot_c, params)
        det = j00 * j11 - j01 * j10
        if det != 0.0:
            th2 = theta - (j11 * r0 - j01 * r1) / det
            tau2 = tau - (j00 * r1 - j10 * r0) / det
            s0, s1 = residual(th2, tau2, wrench, phi_dot_c, params)
            n2 = max(abs(s0), abs(s1))
            if n2 <= norm:
                theta, tau, norm = th2, tau2, n2
        if abs(theta) > theta_max:
            theta, tau = _clamped(theta, wrench, phi_dot_c, params, theta_max)
            r0, r1 = residual(theta, tau, wrench, phi_dot_c, params)
            norm = max(abs(r0), abs(r1))
            status = EqStatus.SATURATED
    elif abs(theta) > theta_max:
        theta, tau = _clamped(theta, wrench, phi_dot_c, params, theta_max)
        r0, r1 = residual(theta, tau, wrench, phi_dot_c, params)
        norm = max(abs(r0), abs(r1))
    return EquilibriumSolution(theta, tau, it, norm, status)


def _clamped(theta, wrench, phi_dot_c, params, theta_max):
    """Clamp the tilt and pick the torque that zeroes the wheel acceleration there.

    The wheel acceleration is affine in torque, so two evaluations give it exactly.
    """
    theta = math.copysign(theta_max, theta)
    b0 = residual(theta, 0.0, wrench, phi_dot_c, params)[1]
    b1 = residual(theta, 1.0, wrench, phi_dot_c, params)[1]
    return theta, -b0 / (b1 - b0)


@dataclass
class EquilibriumTracker:
    """Warm-started solver owned by one controller instance."""

    params: PlantParams
    theta_max: float = THETA_MAX
    last: tuple[float, float] | None = None

    def solve(self, wrench: InteractionWrench, phi_dot_c: float) -> EquilibriumSolution:
        sol = solve_equilibrium(wrench, phi_dot_c, self.params, self.last, self.theta_max)
        if sol.status in (EqStatus.CONVERGED, EqStatus.SATURATED):
            self.last = (sol.theta_eq, sol.tau_eq)
        else:
            self.last = None
        return sol

    def reset(self):
        self.last = None


def equilibrium_map_sweep(
    wrenches: Iterable[InteractionWrench], phi_dot_c: float, params: PlantParams, **kwargs
) -> list[EquilibriumSolution]:
    """Warm-started sweep; per-point failures are reported through ``status``."""
    out = []
    guess = None
    for w in wrenches:
        sol = solve_equilibrium(InteractionWrench(*w), phi_dot_c, params, guess, **kwargs)
        out.append(sol)
        guess = (sol.theta_eq, sol.tau_eq) if sol.status != EqStatus.JACOBIAN_SINGULAR else None
    return out
