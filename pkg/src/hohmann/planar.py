"""Nondimensional two-impulse transfer algebra between coplanar circular orbits.

Scaling convention: lengths by the inner-orbit radius r0 and speeds by the
inner-orbit circular speed V0, leaving a single shape parameter
rbar_f = rf / r0 > 1.  The first impulse has radial/transverse components
(x0, y0), the second (xf, yf), all in units of V0.  Matching angular momentum
and energy across the coast arc expresses (xf, yf) in terms of (x0, y0):

    yf   = rbar_f**-0.5 - (1 + y0) / rbar_f
    xf^2 = x0^2 + (1 + y0)^2 (1 - rbar_f**-2) - 2 (1 - 1/rbar_f)

A transfer is feasible exactly when the xf^2 expression (the constraint g) is
non-negative, i.e. when the coast conic actually reaches the outer circle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InfeasibleTransferError
from .orbital import GravField, circular_velocity

__all__ = [
    "NondimTransfer",
    "ImpulsivePlan",
    "reconstruct_second_impulse",
    "total_cost",
    "constraint",
    "hohmann_plan",
    "transfer_time",
    "dimensionalize",
]


@dataclass(frozen=True)
class NondimTransfer:
    """A two-impulse coplanar transfer in (x0, y0, xf, yf, rbar_f) form."""

    rbar_f: float
    x0: float
    y0: float
    xf: float
    yf: float

    @property
    def vf_bar(self) -> float:
        """Outer-circle speed over V0."""
        return self.rbar_f**-0.5

    @classmethod
    def from_first_impulse(cls, x0: float, y0: float, rbar_f: float) -> "NondimTransfer":
        """Complete a transfer from its first impulse; raises if infeasible.

        The sign of xf is not determined by the conservation match (only xf^2
        is); the non-negative root is chosen.
        """
        yf, xf_sq = reconstruct_second_impulse(x0, y0, rbar_f)
        if xf_sq < 0:
            raise InfeasibleTransferError(g=xf_sq)
        return cls(rbar_f=rbar_f, x0=x0, y0=y0, xf=math.sqrt(xf_sq), yf=yf)


@dataclass(frozen=True)
class ImpulsivePlan:
    """Dimensional impulse vectors [m/s] and the time of the second impulse [s]."""

    dv0: np.ndarray
    dv1: np.ndarray
    t_impulse_1: float

    def __post_init__(self):
        object.__setattr__(self, "dv0", np.array(self.dv0, dtype=float).reshape(3))
        object.__setattr__(self, "dv1", np.array(self.dv1, dtype=float).reshape(3))

    @property
    def total_cost(self) -> float:
        """Characteristic velocity |dv0| + |dv1| [m/s]."""
        return float(np.linalg.norm(self.dv0) + np.linalg.norm(self.dv1))


def reconstruct_second_impulse(x0: float, y0: float, rbar_f: float) -> tuple[float, float]:
    """Second-impulse components implied by momentum/energy matching.

    Returns (yf, xf_squared).  xf_squared may be negative; that encodes
    infeasibility rather than raising, so grid scans can stay branch-free.
    """
    if not rbar_f >= 1:
        raise DomainError(f"rbar_f must be >= 1, got {rbar_f}")
    yf = rbar_f**-0.5 - (1.0 + y0) / rbar_f
    xf_sq = x0 * x0 + (1.0 + y0) ** 2 * (1.0 - rbar_f**-2) - 2.0 * (1.0 - 1.0 / rbar_f)
    return yf, xf_sq


def constraint(x0: float, y0: float, rbar_f: float) -> float:
    """Feasibility function g; g >= 0 iff the coast reaches both circles."""
    if not rbar_f >= 1:
        raise DomainError(f"rbar_f must be >= 1, got {rbar_f}")
    return x0 * x0 + (1.0 + y0) ** 2 * (1.0 - rbar_f**-2) - 2.0 * (1.0 - 1.0 / rbar_f)


def _second_radicand(x0: float, y0: float, rbar_f: float) -> float:
    return (
        x0 * x0
        + (y0 + 1.0 - rbar_f**-1.5) ** 2
        - (rbar_f - 1.0) ** 2 * (2.0 * rbar_f + 1.0) * rbar_f**-3
    )


def total_cost(x0: float, y0: float, rbar_f: float) -> float:
    """Characteristic velocity of the transfer, in units of V0.

    dv = sqrt(x0^2 + y0^2)
       + sqrt(x0^2 + (y0 + 1 - rbar_f^-3/2)^2 - (rbar_f-1)^2 (2 rbar_f+1) rbar_f^-3)

    Raises InfeasibleTransferError (carrying g) off the feasible set.
    """
    g = constraint(x0, y0, rbar_f)
    rad = _second_radicand(x0, y0, rbar_f)
    if g < 0 or rad < 0:
        raise InfeasibleTransferError(g=min(g, rad))
    if x0 == 0.0 and y0 == 0.0:
        raise DomainError("cost undefined at the zero first impulse (dv0 = 0)")
    return math.hypot(x0, y0) + math.sqrt(rad)


def transfer_time(r0: float, rf: float, field: GravField) -> float:
    """Half-period of the ellipse with apse radii r0 and rf: pi sqrt(a^3/mu)."""
    if not (r0 > 0 and rf >= r0):
        raise DomainError(f"need rf >= r0 > 0, got r0={r0}, rf={rf}")
    a = 0.5 * (r0 + rf)
    return float(math.pi * math.sqrt(a**3 / field.mu))


def hohmann_plan(r0: float, rf: float, field: GravField) -> ImpulsivePlan:
    """Closed-form tangential two-impulse plan from radius r0 up to rf.

    Departure at inertial (r0, 0, 0) moving +y; both burns are transverse and
    prograde, the first at periapsis, the second half an orbit later at
    apoapsis (-rf, 0, 0) where prograde is the -y direction.
    """
    if not (r0 > 0 and rf > r0):
        raise DomainError(f"ascending transfer needs rf > r0 > 0, got r0={r0}, rf={rf}")
    rbar = rf / r0
    v0 = circular_velocity(r0, field)
    vf = circular_velocity(rf, field)
    dv0_mag = v0 * (math.sqrt(2.0 * rbar / (1.0 + rbar)) - 1.0)
    dv1_mag = vf * (1.0 - math.sqrt(2.0 / (1.0 + rbar)))
    return ImpulsivePlan(
        dv0=np.array([0.0, dv0_mag, 0.0]),
        dv1=np.array([0.0, -dv1_mag, 0.0]),
        t_impulse_1=transfer_time(r0, rf, field),
    )


def _apse_angles(nd: NondimTransfer) -> tuple[float, float]:
    """Polar-angle sweep and time of flight (scaled) from r0 to the rf crossing.

    Works on the scaled transfer conic: departure at radius 1 with velocity
    (x0, 1 + y0), arrival at radius rbar_f with radial speed -xf.  Returns
    (delta_theta, tof_scaled) where the sweep is signed along the motion and
    time carries the r0/V0 unit.
    """
    rb = nd.rbar_f
    h = 1.0 + nd.y0  # signed scaled angular momentum (r=1, transverse speed 1+y0)
    if h == 0.0:
        raise DomainError("degenerate radial transfer orbit (zero angular momentum)")
    hm = abs(h)
    # eccentricity vector components from e cos(nu) = h^2/r - 1, e sin(nu) = |h| vr
    ec0, es0 = hm * hm / 1.0 - 1.0, hm * nd.x0
    ecf, esf = hm * hm / rb - 1.0, hm * (-nd.xf)
    e = math.hypot(ec0, es0)
    nu0 = math.atan2(es0, ec0)
    nuf = math.atan2(esf, ecf)
    sweep = (nuf - nu0) % (2.0 * math.pi)
    if sweep == 0.0 and rb != 1.0:
        sweep = 2.0 * math.pi
    # time of flight via eccentric anomaly (elliptic arcs only)
    energy = 0.5 * (nd.x0**2 + (1.0 + nd.y0) ** 2) - 1.0
    if energy >= 0:
        raise DomainError("time of flight implemented for elliptic transfer arcs only")
    a = -1.0 / (2.0 * energy)

    def kepler_mean(nu: float) -> float:
        ea = math.atan2(math.sqrt(1.0 - e * e) * math.sin(nu), e + math.cos(nu))
        return ea - e * math.sin(ea)

    m0, mf = kepler_mean(nu0), kepler_mean(nuf)
    dm = (mf - m0) % (2.0 * math.pi)
    if dm == 0.0 and sweep > 0.0:
        dm = 2.0 * math.pi
    tof = a**1.5 * dm
    # motion sense: h > 0 counterclockwise, h < 0 clockwise
    return math.copysign(sweep, h), tof


def dimensionalize(
    nd: NondimTransfer,
    r0: float,
    field: GravField,
    initial_phase_angle: float = 0.0,
) -> ImpulsivePlan:
    """Express a nondimensional transfer as inertial impulse vectors.

    The spacecraft departs the inner circle at the given polar angle; radial
    components act along the local r-hat, transverse components along the
    local horizontal (counterclockwise sense).
    """
    g = constraint(nd.x0, nd.y0, nd.rbar_f)
    if g < -1e-12:
        raise InfeasibleTransferError(g=g)
    v0 = circular_velocity(r0, field)
    tscale = r0 / v0

    def frame(theta: float) -> tuple[np.ndarray, np.ndarray]:
        rhat = np.array([math.cos(theta), math.sin(theta), 0.0])
        that = np.array([-math.sin(theta), math.cos(theta), 0.0])
        return rhat, that

    rhat0, that0 = frame(initial_phase_angle)
    dv0 = v0 * (nd.x0 * rhat0 + nd.y0 * that0)

    if nd.x0 == 0.0 and nd.y0 == 0.0:
        return ImpulsivePlan(dv0=np.zeros(3), dv1=np.zeros(3), t_impulse_1=0.0)

    sweep, tof = _apse_angles(nd)
    rhat1, that1 = frame(initial_phase_angle + sweep)
    dv1 = v0 * (nd.xf * rhat1 + nd.yf * that1)
    return ImpulsivePlan(dv0=dv0, dv1=dv1, t_impulse_1=tof * tscale)
