"""KKT analysis of the two-impulse transfer as a constrained program.

The program minimises the characteristic velocity dv(x0, y0) subject to the
reachability constraint g(x0, y0) >= 0 (see `planar`).  With the Lagrangian

    F(x0, y0, lam) = dv(x0, y0) - lam * g(x0, y0)

every feasible stationary point has the constraint active and x0 = 0, giving
two closed-form branches: the prograde (tangential, motion-aligned) branch,
which is the global minimum, and the retrograde (motion-reversed) branch.

A note on the retrograde multiplier: the stationarity equation dF/dy0 = 0
fixes lam uniquely at each branch.  On the prograde branch this agrees with
the compact published expression; on the retrograde branch the first term of
that expression must carry sign(y0) = -1 (the y0/|y0| factor), otherwise the
stationarity residual is O(1).  The sign-correct value is used here; see the
cross-check inside `stationary_points`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyGridError, PreconditionError
from .planar import constraint, total_cost

__all__ = [
    "KktPoint",
    "KktResiduals",
    "HessianEval",
    "SolutionKind",
    "ClassifiedSolution",
    "ProjectedHessianResult",
    "GridMinimum",
    "lagrangian",
    "kkt_residuals",
    "stationary_points",
    "hessian",
    "projected_hessian_test",
    "grid_search_oracle",
]

# Impulse magnitudes below this are treated as degenerate: the cost is not
# differentiable where either impulse vanishes.
DEGENERACY_FLOOR = 1e-9


@dataclass(frozen=True)
class KktPoint:
    x0: float
    y0: float
    lam: float
    yf: float
    xf: float


@dataclass(frozen=True)
class KktResiduals:
    stat_x: float
    stat_y: float
    complementarity: float
    primal_feas: float
    dual_feas: float

    @property
    def max_abs(self) -> float:
        return max(
            abs(self.stat_x),
            abs(self.stat_y),
            abs(self.complementarity),
            abs(self.primal_feas),
            abs(self.dual_feas),
        )


@dataclass(frozen=True)
class HessianEval:
    """Second derivatives of the Lagrangian at a stationary point with x0 = 0."""

    fxx: float
    fxy: float
    fyy: float
    a: float
    b: float


class SolutionKind(enum.Enum):
    GLOBAL_MINIMUM = "global"
    LOCAL_MINIMUM = "local"


@dataclass(frozen=True)
class ClassifiedSolution:
    point: KktPoint
    kind: SolutionKind
    cost: float


@dataclass(frozen=True)
class ProjectedHessianResult:
    is_strict_local_min: bool
    tangent_vector: np.ndarray
    curvature: float


@dataclass(frozen=True)
class GridMinimum:
    x0: float
    y0: float
    cost: float


def _ab(rbar_f: float) -> tuple[float, float]:
    a = 1.0 - rbar_f**-1.5
    b = (rbar_f - 1.0) ** 2 * (2.0 * rbar_f + 1.0) * rbar_f**-3
    return a, b


def _impulse_magnitudes(x0: float, y0: float, rbar_f: float) -> tuple[float, float]:
    a, b = _ab(rbar_f)
    dv0 = math.hypot(x0, y0)
    rad = x0 * x0 + (y0 + a) ** 2 - b
    if rad < 0:
        raise DomainError(f"second impulse radicand negative ({rad:.3e})")
    return dv0, math.sqrt(rad)


def lagrangian(x0: float, y0: float, lam: float, rbar_f: float) -> float:
    """F = dv(x0, y0) + lam * (-g(x0, y0))."""
    return total_cost(x0, y0, rbar_f) - lam * constraint(x0, y0, rbar_f)


def kkt_residuals(point: KktPoint, rbar_f: float) -> KktResiduals:
    """First-order condition residuals at a candidate point.

    stat_x, stat_y are the Lagrangian gradient components; complementarity is
    lam * g; primal/dual feasibility report min(g, 0) and min(lam, 0).
    """
    a, _ = _ab(rbar_f)
    dv0, dvf = _impulse_magnitudes(point.x0, point.y0, rbar_f)
    if dv0 < DEGENERACY_FLOOR or dvf < DEGENERACY_FLOOR:
        raise DomainError(
            f"degenerate impulse (dv0={dv0:.3e}, dvf={dvf:.3e}); "
            "the first-order conditions assume both impulses positive"
        )
    g = constraint(point.x0, point.y0, rbar_f)
    stat_x = point.x0 / dv0 + point.x0 / dvf - 2.0 * point.lam * point.x0
    stat_y = (
        point.y0 / dv0
        + (point.y0 + a) / dvf
        - 2.0 * point.lam * (1.0 + point.y0) * (1.0 - rbar_f**-2)
    )
    return KktResiduals(
        stat_x=stat_x,
        stat_y=stat_y,
        complementarity=point.lam * g,
        primal_feas=min(g, 0.0),
        dual_feas=min(point.lam, 0.0),
    )


def _multiplier(y0: float, yf: float, rbar_f: float) -> float:
    """Multiplier solving dF/dy0 = 0 at a tangential (x0 = 0) active point."""
    a, _ = _ab(rbar_f)
    sign = 1.0 if y0 > 0 else -1.0
    return (sign + (y0 + 1.0 - rbar_f**-1.5) / yf) / (
        2.0 * (1.0 + y0) * (1.0 - rbar_f**-2)
    )


def stationary_points(rbar_f: float) -> tuple[ClassifiedSolution, ClassifiedSolution]:
    """Both closed-form stationary branches, prograde (global) first.

        y0* = sqrt(2 rbar_f / (1 + rbar_f)) - 1        yf* = rbar_f^-1/2 (1 - sqrt(2/(1+rbar_f)))
        y0^ = -sqrt(2 rbar_f / (1 + rbar_f)) - 1       yf^ = rbar_f^-1/2 (1 + sqrt(2/(1+rbar_f)))

    with x0 = xf = 0 and the multiplier from the stationarity equation.  Each
    multiplier is cross-validated against an independent solve of dF/dy0 = 0;
    disagreement beyond 1e-10 means a formula regression.
    """
    if not rbar_f > 1:
        raise DomainError(f"rbar_f must exceed 1, got {rbar_f}")
    root = math.sqrt(2.0 * rbar_f / (1.0 + rbar_f))
    inv = math.sqrt(2.0 / (1.0 + rbar_f))
    branches = []
    for y0, yf, kind in (
        (root - 1.0, rbar_f**-0.5 * (1.0 - inv), SolutionKind.GLOBAL_MINIMUM),
        (-root - 1.0, rbar_f**-0.5 * (1.0 + inv), SolutionKind.LOCAL_MINIMUM),
    ):
        lam = _multiplier(y0, yf, rbar_f)
        # independent route: solve stat_y for lam with dv0, dvf recomputed
        # from the cost radicands rather than from yf
        a, _ = _ab(rbar_f)
        dv0, dvf = _impulse_magnitudes(0.0, y0, rbar_f)
        lam_check = (y0 / dv0 + (y0 + a) / dvf) / (
            2.0 * (1.0 + y0) * (1.0 - rbar_f**-2)
        )
        if abs(lam - lam_check) > 1e-10 * max(1.0, abs(lam)):
            raise AssertionError(
                f"multiplier cross-check failed at rbar_f={rbar_f}: "
                f"{lam} vs {lam_check}"
            )
        point = KktPoint(x0=0.0, y0=y0, lam=lam, yf=yf, xf=0.0)
        branches.append(
            ClassifiedSolution(point=point, kind=kind, cost=total_cost(0.0, y0, rbar_f))
        )
    return branches[0], branches[1]


def hessian(point: KktPoint, rbar_f: float, residual_tol: float = 1e-8) -> HessianEval:
    """Lagrangian second derivatives at a stationary tangential point.

    With x0 = 0 the mixed derivative vanishes and

        fxx = 1/dv0 + 1/dvf - 2 lam
        fyy = -b / ((y0 + a)^2 - b)^{3/2} - 2 lam (1 - rbar_f^-2)

    where dv0 = |y0| and dvf = |yf| are the impulse magnitudes.  Requires the
    point to satisfy the first-order conditions to `residual_tol`.
    """
    res = kkt_residuals(point, rbar_f)
    if res.max_abs > residual_tol:
        raise PreconditionError(
            f"hessian requires a stationary point (KKT residual {res.max_abs:.3e})"
        )
    if abs(point.x0) > residual_tol:
        raise PreconditionError("hessian entries are derived for x0 = 0 points")
    a, b = _ab(rbar_f)
    dv0, dvf = _impulse_magnitudes(point.x0, point.y0, rbar_f)
    fxx = 1.0 / dv0 + 1.0 / dvf - 2.0 * point.lam
    fyy = -b / ((point.y0 + a) ** 2 - b) ** 1.5 - 2.0 * point.lam * (
        1.0 - rbar_f**-2
    )
    return HessianEval(fxx=fxx, fxy=0.0, fyy=fyy, a=a, b=b)


def projected_hessian_test(
    point: KktPoint, rbar_f: float, active_tol: float = 1e-9
) -> ProjectedHessianResult:
    """Second-order test on the tangent space of the active constraint.

    The tangent direction z satisfies z . grad g = 0; with x0 = 0 that is
    (1, 0) up to scale.  The point is certified a strict local minimum iff
    z^T (Lagrangian Hessian) z > 0.
    """
    g = constraint(point.x0, point.y0, rbar_f)
    if abs(g) > active_tol:
        raise PreconditionError(f"constraint inactive (g = {g:.3e})")
    if not point.lam > 0:
        raise PreconditionError("test requires a strictly positive multiplier")
    gx = 2.0 * point.x0
    gy = 2.0 * (1.0 + point.y0) * (1.0 - rbar_f**-2)
    grad = np.array([gx, gy])
    norm = np.linalg.norm(grad)
    if norm == 0.0:
        raise PreconditionError("constraint gradient vanishes; no tangent space")
    z = np.array([grad[1], -grad[0]]) / norm
    h = hessian(point, rbar_f)
    curvature = float(z[0] * (h.fxx * z[0] + h.fxy * z[1]) + z[1] * (h.fxy * z[0] + h.fyy * z[1]))
    return ProjectedHessianResult(
        is_strict_local_min=curvature > 0.0, tangent_vector=z, curvature=curvature
    )


def grid_search_oracle(
    rbar_f: float,
    x0_range: tuple[float, float],
    y0_range: tuple[float, float],
    n_per_axis: int,
) -> GridMinimum:
    """Brute-force minimum of the cost over feasible nodes of a regular grid.

    Nodes with g < 0 (equivalently a negative second radicand) are skipped,
    not clamped.  Ties break lexicographically by (x0, y0), which the C-order
    argmin over an (x0-major, y0-minor) grid provides.
    """
    if n_per_axis < 3:
        raise DomainError("n_per_axis must be at least 3")
    xs = np.linspace(x0_range[0], x0_range[1], n_per_axis)
    ys = np.linspace(y0_range[0], y0_range[1], n_per_axis)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    a, b = _ab(rbar_f)
    g = X**2 + (1.0 + Y) ** 2 * (1.0 - rbar_f**-2) - 2.0 * (1.0 - 1.0 / rbar_f)
    rad = X**2 + (Y + a) ** 2 - b
    feasible = (g >= 0.0) & (rad >= 0.0) & ~((X == 0.0) & (Y == 0.0))
    if not feasible.any():
        raise EmptyGridError("no feasible grid node in the requested ranges")
    cost = np.full(X.shape, np.inf)
    np.sqrt(X**2 + Y**2, out=cost, where=feasible)
    cost[feasible] += np.sqrt(rad[feasible])
    i, j = np.unravel_index(int(np.argmin(cost)), cost.shape)
    return GridMinimum(x0=float(xs[i]), y0=float(ys[j]), cost=float(cost[i, j]))
