"""Two-body dynamics, propagation, and conserved quantities.

Everything here works in whatever consistent unit system the caller picks;
the propagator internally rescales to canonical units (lengths by the initial
radius, times by sqrt(r0^3/mu)) before integrating and converts back at the
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DomainError, PropagationFailureError, SingularityError

__all__ = [
    "GravField",
    "CartesianState",
    "StateDerivative",
    "ConservedQuantities",
    "Trajectory",
    "circular_velocity",
    "two_body_rhs",
    "conserved",
    "propagate",
]


def _as_vec3(x) -> np.ndarray:
    v = np.array(x, dtype=float).reshape(3)
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class GravField:
    """Point-mass gravitational field with parameter mu [m^3/s^2]."""

    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError(f"gravitational parameter must be positive, got {self.mu}")


@dataclass(frozen=True)
class CartesianState:
    """Inertial position and velocity of the spacecraft."""

    r: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r", _as_vec3(self.r))
        object.__setattr__(self, "v", _as_vec3(self.v))


@dataclass(frozen=True)
class StateDerivative:
    """Time derivative of a CartesianState: r_dot = v, v_dot = -mu r / |r|^3."""

    r_dot: np.ndarray
    v_dot: np.ndarray


@dataclass(frozen=True)
class ConservedQuantities:
    """Specific angular momentum vector and specific orbital energy."""

    h_vec: np.ndarray
    energy: float


class Trajectory:
    """Time-ordered samples of a propagated coast arc.

    Stores the accepted integrator steps together with the state derivative at
    each node so intermediate states can be recovered by cubic Hermite
    interpolation (`state_at`).
    """

    def __init__(self, times: np.ndarray, states: np.ndarray, derivs: np.ndarray | None = None):
        times = np.asarray(times, dtype=float)
        states = np.asarray(states, dtype=float)
        if times.ndim != 1 or states.shape != (times.size, 6):
            raise DomainError("trajectory needs times (n,) and states (n, 6)")
        if times.size < 1:
            raise DomainError("trajectory needs at least one sample")
        if np.any(np.diff(times) <= 0):
            raise DomainError("trajectory times must be strictly increasing")
        self._t = times
        self._y = states
        self._f = derivs if derivs is not None else None

    @property
    def times(self) -> np.ndarray:
        return self._t

    @property
    def states(self) -> list[CartesianState]:
        return [CartesianState(row[:3], row[3:]) for row in self._y]

    @property
    def samples(self) -> Iterator[tuple[float, CartesianState]]:
        for t, row in zip(self._t, self._y):
            yield float(t), CartesianState(row[:3], row[3:])

    def __len__(self) -> int:
        return self._t.size

    @property
    def initial(self) -> CartesianState:
        return CartesianState(self._y[0, :3], self._y[0, 3:])

    @property
    def terminal(self) -> CartesianState:
        return CartesianState(self._y[-1, :3], self._y[-1, 3:])

    def state_at(self, t: float) -> CartesianState:
        """Dense-output state by cubic Hermite interpolation between nodes."""
        if self._t.size == 1:
            if not np.isclose(t, self._t[0], rtol=0.0, atol=1e-12 * max(1.0, abs(self._t[0]))):
                raise DomainError("single-sample trajectory only defined at its one time")
            return CartesianState(self._y[0, :3], self._y[0, 3:])
        if t < self._t[0] or t > self._t[-1]:
            raise DomainError(f"time {t} outside trajectory span [{self._t[0]}, {self._t[-1]}]")
        if self._f is None:
            raise DomainError("trajectory carries no derivative data for interpolation")
        i = int(np.searchsorted(self._t, t, side="right") - 1)
        i = min(max(i, 0), self._t.size - 2)
        h = self._t[i + 1] - self._t[i]
        s = (t - self._t[i]) / h
        y0, y1 = self._y[i], self._y[i + 1]
        f0, f1 = self._f[i], self._f[i + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        y = h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
        return CartesianState(y[:3], y[3:])


def circular_velocity(radius: float, field: GravField) -> float:
    """Speed of a circular orbit of the given radius: sqrt(mu / r)."""
    if not radius > 0:
        raise DomainError(f"radius must be positive, got {radius}")
    return float(np.sqrt(field.mu / radius))


def two_body_rhs(state: CartesianState, field: GravField) -> StateDerivative:
    """Inverse-square-field equations of motion: r_dot = v, v_dot = -mu r/|r|^3."""
    r = state.r
    rn = float(np.linalg.norm(r))
    if rn == 0.0:
        raise SingularityError("two-body dynamics undefined at |r| = 0")
    return StateDerivative(r_dot=state.v.copy(), v_dot=-field.mu / rn**3 * r)


def conserved(state: CartesianState, field: GravField) -> ConservedQuantities:
    """Specific angular momentum h = r x v and energy |v|^2/2 - mu/|r|."""
    rn = float(np.linalg.norm(state.r))
    if rn == 0.0:
        raise SingularityError("conserved quantities undefined at |r| = 0")
    h = np.cross(state.r, state.v)
    energy = 0.5 * float(state.v @ state.v) - field.mu / rn
    return ConservedQuantities(h_vec=h, energy=float(energy))


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B5 - np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def _scaled_rhs(y: np.ndarray) -> np.ndarray:
    r = y[:3]
    rn = np.linalg.norm(r)
    if rn == 0.0:
        raise SingularityError("propagation reached |r| = 0")
    out = np.empty(6)
    out[:3] = y[3:]
    out[3:] = -r / rn**3
    return out


def propagate(state0: CartesianState, field: GravField, duration: float, tol: float = 1e-9) -> Trajectory:
    """Propagate a coast arc with an adaptive Dormand-Prince 5(4) integrator.

    PI step-size control; local error held to `tol` relative to the scaled
    state.  The returned trajectory's last sample lies exactly at `duration`.
    Deterministic: identical inputs produce identical output arrays.
    """
    if not (0.0 < tol <= 1e-3):
        raise DomainError(f"tol must lie in (0, 1e-3], got {tol}")
    if duration < 0:
        raise DomainError("duration must be non-negative")

    r0n = float(np.linalg.norm(state0.r))
    if r0n == 0.0:
        raise SingularityError("cannot propagate from |r| = 0")

    # Canonical units: length r0, time sqrt(r0^3/mu); scaled mu is then 1.
    lscale = r0n
    tscale = float(np.sqrt(r0n**3 / field.mu))
    vscale = lscale / tscale

    y = np.concatenate([state0.r / lscale, state0.v / vscale])
    t_end = duration / tscale

    if duration == 0.0:
        return Trajectory(np.array([0.0]), y[None, :] * np.concatenate([[lscale] * 3, [vscale] * 3]), None)

    ts = [0.0]
    ys = [y.copy()]
    f = _scaled_rhs(y)
    fs = [f.copy()]

    t = 0.0
    h = min(0.1, t_end)  # scaled time unit ~ one radian of a circular orbit
    err_prev = 1.0
    safety, min_fac, max_fac = 0.9, 0.2, 5.0
    alpha, beta = 0.7 / 5.0, 0.4 / 5.0
    h_floor = 1e-14 * max(t_end, 1.0)

    k = np.empty((7, 6))
    while t < t_end:
        h = min(h, t_end - t)
        if h < h_floor:
            raise PropagationFailureError(f"step size underflow at t = {t * tscale}")
        k[0] = f
        for i in range(1, 7):
            yi = y + h * (_DP_A[i] @ k[:i])
            k[i] = _scaled_rhs(yi)
        y_new = y + h * (_DP_B5 @ k)
        err_vec = h * (_DP_E @ k)
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if err <= 1.0:
            t += h
            y = y_new
            f = k[6].copy()  # FSAL: last stage is f(t+h, y_new)
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
            fac = safety * (err + 1e-16) ** -alpha * (err_prev + 1e-16) ** beta
            err_prev = err
            h *= min(max_fac, max(min_fac, fac))
        else:
            h *= max(min_fac, safety * err**-0.2)

    ts[-1] = t_end  # guard against roundoff in the final clamped step
    times = np.array(ts) * tscale
    states = np.array(ys)
    derivs = np.array(fs)
    states[:, :3] *= lscale
    states[:, 3:] *= vscale
    derivs[:, :3] *= vscale
    derivs[:, 3:] *= vscale / tscale
    return Trajectory(times, states, derivs)
