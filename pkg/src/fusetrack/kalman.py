"""Constant-velocity Kalman filter over a scalar route coordinate.

State is ``x = (position, velocity)``; only velocity is observed. Every
function here is pure: estimates are frozen values and each step returns
a new one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

#: Observation row: velocity only.
VELOCITY_ROW = np.array([0.0, 1.0])

DEFAULT_P0 = (100.0, 25.0)
DEFAULT_Q = 0.1
DEFAULT_R = 4.0

_PSD_TOL = 1e-10


class FilterError(ValueError):
    """Raised for inputs the filter cannot process."""


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


def _min_eig(a: float, b: float, c: float) -> float:
    """Smaller eigenvalue of the symmetric matrix ``[[a, b], [b, c]]``."""
    return 0.5 * (a + c) - math.hypot(0.5 * (a - c), b)


def white_noise_accel_q(dt: float, q: float) -> np.ndarray:
    """Discretized continuous white-noise acceleration covariance."""
    return q * np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0],
                         [dt ** 2 / 2.0, dt]])


@dataclass(frozen=True)
class TransitionModel:
    """Transition ``A = [[1, dt], [0, 1]]`` with process noise ``Q``.

    When ``q`` is set, :meth:`with_dt` rebuilds ``Q`` for a new gap from the
    white-noise-acceleration discretization. A model built from an explicit
    ``Q`` (``q is None``) keeps that ``Q`` for every gap.
    """

    dt: float
    Q: np.ndarray
    q: Optional[float] = None
    A: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise FilterError(f"dt must be finite and > 0, got {self.dt}")
        Q = _frozen(self.Q, (2, 2))
        a, b, b2, c = (float(v) for v in Q.flat)
        if abs(b - b2) > 1e-12 * max(1.0, abs(a), abs(b), abs(b2), abs(c)):
            raise FilterError("Q must be symmetric")
        if _min_eig(a, b, c) < -_PSD_TOL * max(1.0, a + c):
            raise FilterError("Q must be positive semi-definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "A", _frozen([[1.0, self.dt], [0.0, 1.0]], (2, 2)))

    @classmethod
    def constant_velocity(cls, dt: float, q: float = DEFAULT_Q) -> "TransitionModel":
        if q < 0:
            raise FilterError(f"q must be >= 0, got {q}")
        return cls(dt=dt, Q=white_noise_accel_q(dt, q), q=q)

    def with_dt(self, dt: float) -> "TransitionModel":
        if self.q is None:
            return TransitionModel(dt=dt, Q=self.Q)
        return TransitionModel.constant_velocity(dt, self.q)


@dataclass(frozen=True)
class ObservationModel:
    """Velocity-only measurement ``z = B x + noise`` with variance ``R``."""

    R: float = DEFAULT_R
    B: np.ndarray = field(default_factory=lambda: VELOCITY_ROW.copy())

    def __post_init__(self):
        if not (math.isfinite(self.R) and self.R > 0):
            raise FilterError(f"R must be finite and > 0, got {self.R}")
        object.__setattr__(self, "B", _frozen(self.B, (2,)))


@dataclass(frozen=True)
class StateEstimate:
    x: np.ndarray
    P: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, (2,)))
        object.__setattr__(self, "P", _frozen(self.P, (2, 2)))

    @property
    def position(self) -> float:
        return float(self.x[0])

    @property
    def velocity(self) -> float:
        return float(self.x[1])

    @property
    def velocity_var(self) -> float:
        return float(self.P[1, 1])


@dataclass(frozen=True)
class VelocityObservation:
    t: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and math.isfinite(self.z)):
            raise FilterError(f"non-finite observation t={self.t} z={self.z}")


def initial_state(t: float = 0.0, position: float = 0.0, velocity: float = 0.0,
                  p0: Sequence[float] = DEFAULT_P0) -> StateEstimate:
    return StateEstimate(x=[position, velocity], P=np.diag(p0), t=t)


def _check_finite(est: StateEstimate) -> None:
    if not (np.isfinite(est.x).all() and np.isfinite(est.P).all() and math.isfinite(est.t)):
        raise FilterError(f"non-finite state estimate at t={est.t}: x={est.x}, P={est.P}")


def _condition(P: np.ndarray) -> np.ndarray:
    """Symmetrize and verify PSD; clamp tiny negative eigenvalues to zero."""
    P = 0.5 * (P + P.T)
    a, b, c = float(P[0, 0]), float(P[0, 1]), float(P[1, 1])
    lo = _min_eig(a, b, c)
    if lo >= 0:
        return P
    scale = max(1.0, abs(0.5 * (a + c)) + math.hypot(0.5 * (a - c), b))
    if lo < -_PSD_TOL * scale:
        raise FilterError(f"covariance lost positive semi-definiteness: min eigenvalue {lo}")
    w, V = np.linalg.eigh(P)
    P = (V * np.clip(w, 0.0, None)) @ V.T
    return 0.5 * (P + P.T)


def predict(prior: StateEstimate, model: TransitionModel) -> StateEstimate:
    """Propagate the estimate ``model.dt`` seconds ahead.

    Returns the prior ``(A x, A P A^T + Q)`` stamped at ``prior.t + dt``.
    """
    _check_finite(prior)
    A = model.A
    x = A @ prior.x
    P = _condition(A @ prior.P @ A.T + model.Q)
    return StateEstimate(x=x, P=P, t=prior.t + model.dt)


def update(prior: StateEstimate, z: VelocityObservation, obs: ObservationModel) -> StateEstimate:
    """Correct a predicted estimate with one velocity measurement.

    The innovation variance ``B P B^T + R`` is a scalar, so the gain is a
    plain division. The posterior keeps the timestamp of ``prior``.
    """
    _check_finite(prior)
    b = obs.B
    Pb = prior.P @ b
    s = float(b @ Pb) + obs.R
    if not s > 0:
        raise FilterError(f"innovation variance must be positive, got {s}")
    K = Pb / s
    x = prior.x + K * (z.z - float(b @ prior.x))
    P = _condition(prior.P - K[:, None] * Pb[None, :])  # (I - K b^T) P
    return StateEstimate(x=x, P=P, t=prior.t)


def predict_to(est: StateEstimate, t: float, model: TransitionModel) -> StateEstimate:
    """Predict forward to absolute time ``t``; a zero gap is a no-op."""
    dt = t - est.t
    if dt < 0:
        raise FilterError(f"cannot predict backwards from t={est.t} to t={t}")
    if dt == 0:
        return est
    return predict(est, model.with_dt(dt))


def run_filter(init: StateEstimate, obs_seq: Sequence[VelocityObservation],
               model: TransitionModel, obs: ObservationModel) -> list[StateEstimate]:
    """Run predict/update over a time-ordered observation sequence.

    For each observation the transition is rebuilt for the gap since the
    previous estimate, then the measurement is applied. An observation at
    exactly ``init.t`` is applied without a prediction step.

    Returns:
        ``[init, posterior_1, ..., posterior_n]``.

    Raises:
        FilterError: timestamps not strictly increasing (the message names
            the offending index), or an observation earlier than ``init.t``.
    """
    out = [init]
    prev_t = None
    for i, ob in enumerate(obs_seq):
        if prev_t is not None and not ob.t > prev_t:
            raise FilterError(f"observation timestamps must be strictly increasing; "
                              f"violation at index {i} (t={ob.t} after t={prev_t})")
        if ob.t < init.t:
            raise FilterError(f"observation at index {i} (t={ob.t}) precedes the "
                              f"initial state (t={init.t})")
        prev_t = ob.t
        est = predict_to(out[-1], ob.t, model)
        out.append(update(est, ob, obs))
    return out
