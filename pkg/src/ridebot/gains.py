"""Rider-personalized LQR gains.

The rider's torso is lumped into the chassis body, the combined plant is
linearized about upright, the wheel-angle state (which neither enters the
dynamics nor carries cost) is dropped, and a 3-state CARE is solved by
Newton-Kleinman iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dynamics import InputVector, InvalidParams, PlantParams, State, linearize

# Calibrates torso COM height so a 1.8 m rider's torso COM sits 0.35 m above the seat.
TORSO_COM_SCALE = 0.35 / (0.19 * 1.8)

# Indices of [theta, theta_dot, phi_dot] within the 4-state vector.
REDUCED = [0, 2, 3]


class NotStabilizable(linalg.LinAlgError):
    pass


class CareNoConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class RiderParams:
    height: float = 1.8
    weight: float = 60.0
    torso_mass_fraction: float = 0.578
    torso_com_fraction_of_height: float = 0.19
    torso_gyration_fraction: float = 0.25
    seat_height_above_ball_center: float = 0.55
    max_lean: float = 0.6

    def __post_init__(self):
        if not 1.0 <= self.height <= 2.2:
            raise InvalidParams(f"rider height {self.height!r} m outside [1.0, 2.2]")
        if not 30.0 <= self.weight <= 150.0:
            raise InvalidParams(f"rider weight {self.weight!r} kg outside [30, 150]")
        for name in ("torso_mass_fraction", "torso_com_fraction_of_height", "torso_gyration_fraction"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise InvalidParams(f"{name} must lie in (0, 1), got {value!r}")
        if not self.seat_height_above_ball_center > 0:
            raise InvalidParams("seat_height_above_ball_center must be > 0")
        if not self.max_lean > 0:
            raise InvalidParams("max_lean must be > 0")

    @property
    def torso_mass(self) -> float:
        return self.torso_mass_fraction * self.weight

    @property
    def torso_com_above_seat(self) -> float:
        return self.torso_com_fraction_of_height * self.height * TORSO_COM_SCALE

    @property
    def torso_inertia_com(self) -> float:
        return self.torso_mass * (self.torso_gyration_fraction * self.height) ** 2


# Table I demographics (height m, weight kg).
TABLE_I = {
    "S04": RiderParams(height=1.64, weight=50.0),
    "S07": RiderParams(height=1.76, weight=73.0),
    "S12": RiderParams(height=1.60, weight=79.0),
    "S16": RiderParams(height=1.67, weight=52.0),
}

NOMINAL_RIDER = RiderParams(height=1.8, weight=60.0)


@dataclass(frozen=True)
class LqrWeights:
    Q: np.ndarray = field(default_factory=lambda: np.diag([100.0, 0.0, 1.0, 10.0]))
    R: float = 1.0

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        object.__setattr__(self, "Q", Q)
        if Q.shape != (4, 4):
            raise InvalidParams("Q must be 4x4")
        if np.any(Q[1, :] != 0) or np.any(Q[:, 1] != 0):
            raise InvalidParams("Q row/column for the wheel angle must be zero")
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise InvalidParams("Q must be symmetric PSD")
        if not self.R > 0:
            raise InvalidParams("R must be > 0")

    @classmethod
    def from_diag(cls, diag, R=1.0) -> LqrWeights:
        return cls(np.diag(np.asarray(diag, dtype=float)), float(R))


@dataclass(frozen=True)
class GainVector:
    """``k = [k_theta, k_phi, k_theta_dot, k_phi_dot]`` for ``tau = k (s_c - s)``."""

    k: np.ndarray

    @property
    def k_theta(self) -> float:
        return float(self.k[0])

    def as_tuple(self) -> tuple[float, float, float, float]:
        return tuple(float(v) for v in self.k)


def lump_rider(rider: RiderParams, base: PlantParams) -> PlantParams:
    """Fold the rider torso into the chassis body (two-body COM and parallel-axis transfer)."""
    m_t = rider.torso_mass
    z_t = rider.seat_height_above_ball_center + rider.torso_com_above_seat
    m = base.m_B + m_t
    l = (base.m_B * base.l_B + m_t * z_t) / m
    inertia = (
        base.I_B
        + base.m_B * (base.l_B - l) ** 2
        + rider.torso_inertia_com
        + m_t * (z_t - l) ** 2
    )
    # P stays on the chassis axis; the lumped COM may rise above it.
    return base.replace(m_B=m, l_B=l, I_B=inertia, h_P=max(base.h_P, l))


def _lyap(A, Q):
    """Solve ``A^T X + X A + Q = 0``."""
    n = A.shape[0]
    if n <= 4:
        eye = np.eye(n)
        # row-major vec: vec(A^T X) = (A^T kron I) x, vec(X A) = (I kron A^T) x
        lhs = np.kron(A.T, eye) + np.kron(eye, A.T)
        X = np.linalg.solve(lhs, -Q.reshape(-1)).reshape(n, n)
    else:
        X = linalg.solve_continuous_lyapunov(A.T, -Q)
    return 0.5 * (X + X.T)


def care_residual(A, B, Q, R, P) -> float:
    return float(np.linalg.norm(A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q, "fro"))


def stabilizing_gain(A, B) -> np.ndarray:
    """Initial stabilizing feedback by eigenvalue shift.

    With ``beta`` above every eigenvalue real part, solve
    ``(A + beta I) Z + Z (A + beta I)^T = 2 B B^T``; then ``A - B B^T Z^-1``
    has all eigenvalues on ``Re = -beta``.
    """
    n = A.shape[0]
    beta = np.linalg.norm(A, "fro") + 1.0
    As = A + beta * np.eye(n)
    # (-As) Z + Z (-As)^T + 2 B B^T = 0
    Z = _lyap(-As.T, 2.0 * B @ B.T)
    try:
        L = np.linalg.cholesky(Z)
    except np.linalg.LinAlgError as exc:
        raise NotStabilizable("(A, B) is not controllable enough for an eigenvalue-shift start") from exc
    cond = np.linalg.cond(L) ** 2
    if not np.isfinite(cond) or cond > 1e14:
        raise NotStabilizable(f"controllability Gramian is numerically singular (cond={cond:.3g})")
    return B.T @ np.linalg.inv(Z)


def solve_care(A, B, Q, R, tol=1e-8, max_iter=100) -> np.ndarray:
    """Stabilizing solution of ``A^T P + P A - P B R^-1 B^T P + Q = 0`` (Newton-Kleinman)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    K = stabilizing_gain(A, B)
    res = math.inf
    for _ in range(max_iter):
        P = _lyap(A - B @ K, Q + K.T @ R @ K)
        K = np.linalg.solve(R, B.T @ P)
        res = care_residual(A, B, Q, R, P)
        if res <= tol * (1.0 + np.linalg.norm(P, "fro")):
            # one extra sweep pushes the residual towards round-off
            P2 = _lyap(A - B @ K, Q + K.T @ R @ K)
            return P2 if care_residual(A, B, Q, R, P2) <= res else P
    raise CareNoConvergence(f"Newton-Kleinman did not converge in {max_iter} iterations (residual {res:.3g})")


def lqr_gain(A, B, Q, R) -> tuple[np.ndarray, np.ndarray]:
    P = solve_care(A, B, Q, R)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    B = np.asarray(B, dtype=float).reshape(P.shape[0], -1)
    return np.linalg.solve(R, B.T @ P), P


def upright_model(params: PlantParams):
    A, B, _ = linearize(State(), InputVector(), params)
    return A, B


def synthesize(params: PlantParams, weights: LqrWeights):
    """Return ``(GainVector, P_reduced, A, B)`` for a (lumped) plant."""
    A, B = upright_model(params)
    Ar = A[np.ix_(REDUCED, REDUCED)]
    Br = B[REDUCED, :]
    Qr = weights.Q[np.ix_(REDUCED, REDUCED)]
    Kr, P = lqr_gain(Ar, Br, Qr, [[weights.R]])
    k = np.zeros(4)
    k[REDUCED] = Kr[0]
    return GainVector(k), P, A, B


def personalize_gains(rider: RiderParams, base: PlantParams, weights: LqrWeights | None = None) -> GainVector:
    weights = weights or LqrWeights()
    return synthesize(lump_rider(rider, base), weights)[0]


def is_hurwitz(A, B, k: GainVector, margin=1e-9) -> bool:
    closed = A - B @ np.atleast_2d(k.k)
    # the wheel-angle integrator is uncontrolled by design; judge the reduced loop
    red = closed[np.ix_(REDUCED, REDUCED)]
    return bool(np.all(np.linalg.eigvals(red).real < -margin))
