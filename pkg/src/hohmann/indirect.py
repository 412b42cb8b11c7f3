"""Minimum-fuel two-impulse transfer as state/costate boundary-value problems.

Two formulations are assembled on top of the collocation engine, both driven
by the augmented dynamics (position, velocity, and their adjoints):

* free arrival time: one coast phase between the impulses, with the unknown
  duration as a parameter and the transversality condition H = 0 at the end
  (19 boundary residuals for 12 states + 7 parameters);
* fixed final time: a transfer phase plus a terminal coast on the target
  circle, with the scaled switch instant as the seventh parameter and the
  adjoints vanishing at the fixed final time (31 residuals, 24 states + 7
  parameters).

Everything is solved in nondimensional units (lengths over r0, speeds over
V0, times over r0/V0) and re-dimensionalized on extraction.  The impulse
direction conditions use dv/|dv|, so impulse magnitudes are floored at
1e-12 (scaled); a Newton trial stepping below the floor is rejected by the
line search rather than clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .collocation import BvpGuess, BvpProblem, BvpSolution, Phase
from .collocation import solve as bvp_solve
from .errors import DegenerateImpulseError, DomainError, PivotDegeneracyError, PreconditionError, SingularityError
from .orbital import CartesianState, GravField, Trajectory, circular_velocity
from .planar import ImpulsivePlan, transfer_time

__all__ = [
    "Costate",
    "AugmentedState",
    "CostateDerivative",
    "TransferParameters",
    "PrimerHistory",
    "MultiplierElimination",
    "TransferGuess",
    "TransferBvp",
    "ExtractedTransfer",
    "hamiltonian",
    "costate_rhs",
    "terminal_constraint_residuals",
    "eliminate_multipliers",
    "build_problem1",
    "build_problem2",
    "solve_transfer",
    "extract_plan",
    "circular_state",
]

IMPULSE_FLOOR = 1e-12  # scaled by V0


def _vec3(x) -> np.ndarray:
    return np.array(x, dtype=float).reshape(3)


@dataclass(frozen=True)
class Costate:
    """Adjoint vectors conjugate to position (p_r) and velocity (p_v)."""

    p_r: np.ndarray
    p_v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_r", _vec3(self.p_r))
        object.__setattr__(self, "p_v", _vec3(self.p_v))


@dataclass(frozen=True)
class AugmentedState:
    state: CartesianState
    costate: Costate


@dataclass(frozen=True)
class CostateDerivative:
    p_r_dot: np.ndarray
    p_v_dot: np.ndarray


@dataclass(frozen=True)
class TransferParameters:
    """Converged impulse vectors [m/s] and switch instant.

    `switch` is the impulse time t1 [s] for the free-time problem and the
    scaled instant tau1 = t1/tf for the fixed-time problem.
    """

    dv0: np.ndarray
    dv1: np.ndarray
    switch: float


class PrimerHistory:
    """Samples of the primer vector -p_v along the converged trajectory."""

    def __init__(self, times: np.ndarray, primer: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        self.primer = np.asarray(primer, dtype=float)
        if self.primer.shape != (3, self.times.size):
            raise DomainError("primer history needs primer shape (3, n)")

    @property
    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.primer, axis=0)

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class MultiplierElimination:
    gamma_r1: float
    gamma_v1: float
    gamma_2: float
    g_residuals: np.ndarray


def hamiltonian(aug: AugmentedState, field: GravField) -> float:
    """H = p_r . v - p_v . (mu/|r|^3) r."""
    r = aug.state.r
    rn = float(np.linalg.norm(r))
    if rn == 0.0:
        raise SingularityError("Hamiltonian undefined at |r| = 0")
    return float(aug.costate.p_r @ aug.state.v - field.mu / rn**3 * (aug.costate.p_v @ r))


def costate_rhs(aug: AugmentedState, field: GravField) -> CostateDerivative:
    """Adjoint dynamics: p_r' = -(mu/|r|^3)(3 r r^T/|r|^2 - I) p_v, p_v' = -p_r."""
    r = aug.state.r
    rn = float(np.linalg.norm(r))
    if rn == 0.0:
        raise SingularityError("costate dynamics undefined at |r| = 0")
    pv = aug.costate.p_v
    p_r_dot = field.mu / rn**3 * (pv - 3.0 * float(r @ pv) / rn**2 * r)
    return CostateDerivative(p_r_dot=p_r_dot, p_v_dot=-aug.costate.p_r)


def terminal_constraint_residuals(r, v, rf: float, vf: float) -> np.ndarray:
    """Circular-orbit insertion residuals (|r| - rf, |v| - vf, r . v)."""
    if not (rf > 0 and vf > 0):
        raise DomainError("rf and vf must be positive")
    r = _vec3(r)
    v = _vec3(v)
    return np.array([np.linalg.norm(r) - rf, np.linalg.norm(v) - vf, r @ v])


def eliminate_multipliers(
    p_r_minus, p_v_minus, p_r_plus, p_v_plus, r, v, rf: float, vf: float
) -> MultiplierElimination:
    """Solve for the insertion-constraint multipliers; leftover rows are residuals.

    The adjoint jump at the insertion instant must lie in the span of the
    constraint gradients:

        gamma_v1 (v/vf) + gamma_2 r = p_v(-) - p_v(+)
        gamma_r1 (r/rf) + gamma_2 v = p_r(-) - p_r(+)

    Two components of the first system determine (gamma_v1, gamma_2) and one
    of the second determines gamma_r1; the three leftover components are the
    returned residuals.  Pivots maximize |det| (resp. the pivot magnitude),
    which reduces to the first two (resp. first) components in the standard
    in-plane geometry.
    """
    r = _vec3(r)
    v = _vec3(v)
    rhs_v = _vec3(p_v_minus) - _vec3(p_v_plus)
    rhs_r = _vec3(p_r_minus) - _vec3(p_r_plus)
    c1 = v / vf
    c2 = r
    pairs = [(0, 1), (0, 2), (1, 2)]
    dets = [c1[i] * c2[j] - c1[j] * c2[i] for i, j in pairs]
    best = int(np.argmax(np.abs(dets)))
    det = dets[best]
    scale = max(np.max(np.abs(c1)), np.max(np.abs(c2)), 1e-300)
    if abs(det) < 1e-13 * scale**2:
        raise PivotDegeneracyError("constraint gradients are numerically collinear")
    i, j = pairs[best]
    k = 3 - i - j
    gamma_v1 = (rhs_v[i] * c2[j] - rhs_v[j] * c2[i]) / det
    gamma_2 = (c1[i] * rhs_v[j] - c1[j] * rhs_v[i]) / det
    res_v = gamma_v1 * c1[k] + gamma_2 * c2[k] - rhs_v[k]

    d1 = r / rf
    d2 = v
    m = int(np.argmax(np.abs(d1)))
    if abs(d1[m]) < 1e-13:
        raise PivotDegeneracyError("position pivot vanished in multiplier elimination")
    gamma_r1 = (rhs_r[m] - gamma_2 * d2[m]) / d1[m]
    rest = [c for c in range(3) if c != m]
    res_r = [gamma_r1 * d1[c] + gamma_2 * d2[c] - rhs_r[c] for c in rest]
    return MultiplierElimination(
        gamma_r1=float(gamma_r1),
        gamma_v1=float(gamma_v1),
        gamma_2=float(gamma_2),
        g_residuals=np.array([res_v, res_r[0], res_r[1]]),
    )


def circular_state(radius: float, field: GravField, phase_angle: float = 0.0) -> CartesianState:
    """Counterclockwise circular-orbit state at the given polar angle."""
    vc = circular_velocity(radius, field)
    c, s = math.cos(phase_angle), math.sin(phase_angle)
    return CartesianState(
        r=np.array([radius * c, radius * s, 0.0]),
        v=vc * np.array([-s, c, 0.0]),
    )


# ---------------------------------------------------------------------------
# scaled augmented dynamics (mu = 1), vectorized over sample points
# ---------------------------------------------------------------------------

def _augmented_rhs(y: np.ndarray) -> np.ndarray:
    r = y[0:3]
    v = y[3:6]
    pr = y[6:9]
    pv = y[9:12]
    rn2 = np.einsum("i...,i...->...", r, r)
    rn = np.sqrt(rn2)
    rn3 = rn2 * rn
    rdotpv = np.einsum("i...,i...->...", r, pv)
    out = np.empty_like(y)
    out[0:3] = v
    out[3:6] = -r / rn3
    out[6:9] = (pv - 3.0 * (rdotpv / rn2) * r) / rn3
    out[9:12] = -pr
    return out


def _scaled_hamiltonian(y: np.ndarray) -> float:
    r, v, pr, pv = y[0:3], y[3:6], y[6:9], y[9:12]
    rn = np.linalg.norm(r)
    return float(pr @ v - (pv @ r) / rn**3)


@dataclass(frozen=True)
class TransferGuess:
    """Initial guess bundle for either problem (SI units at this surface).

    `switch` is t1 [s] for the free-time problem, tau1 for the fixed-time
    problem.  The costate guesses seed the start of the (first) phase; the
    state/costate profiles are generated by integrating the augmented system
    from the guessed post-impulse state.
    """

    dv0: np.ndarray
    dv1: np.ndarray
    switch: float
    p_r: np.ndarray = (0.0, -0.9, 0.0)
    p_v: np.ndarray = (-0.0012, 0.0, 0.0)
    n_nodes: int = 80

    def __post_init__(self):
        object.__setattr__(self, "dv0", _vec3(self.dv0))
        object.__setattr__(self, "dv1", _vec3(self.dv1))
        object.__setattr__(self, "p_r", _vec3(self.p_r))
        object.__setattr__(self, "p_v", _vec3(self.p_v))


@dataclass
class TransferBvp:
    """A fully assembled transfer BVP plus the scaling needed to undo it."""

    problem: BvpProblem
    guess: BvpGuess
    kind: str  # "free-time" or "fixed-time"
    field: GravField
    r0: float
    v0: float
    rf: float
    tf: float | None

    @property
    def tscale(self) -> float:
        return self.r0 / self.v0


def _rk4_profile(y0: np.ndarray, mesh: np.ndarray, factor: float) -> np.ndarray:
    """Fixed-step RK4 samples of the scaled augmented system along a mesh."""
    out = np.empty((12, mesh.size))
    out[:, 0] = y0
    y = y0.copy()
    substeps = 4
    for i in range(mesh.size - 1):
        h = factor * (mesh[i + 1] - mesh[i]) / substeps
        for _ in range(substeps):
            k1 = _augmented_rhs(y)
            k2 = _augmented_rhs(y + 0.5 * h * k1)
            k3 = _augmented_rhs(y + 0.5 * h * k2)
            k4 = _augmented_rhs(y + h * k3)
            y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[:, i + 1] = y
    return out


def _impulse_norm(dv: np.ndarray) -> float:
    mag = float(np.linalg.norm(dv))
    if mag < IMPULSE_FLOOR:
        raise DegenerateImpulseError(
            f"impulse magnitude {mag:.3e} below the degeneracy floor {IMPULSE_FLOOR:.0e}"
        )
    return mag


def build_problem1(
    r0_vec, v0_vec, rf: float, field: GravField, guess: TransferGuess
) -> TransferBvp:
    """Free-arrival-time minimum-fuel transfer onto the circle of radius rf.

    One 12-dimensional phase (post-impulse coast) on scaled time s in [0, 1];
    parameters are the two impulse vectors and the coast duration t1.  The 19
    boundary residuals are the initial position/velocity match, the two
    unit-primer impulse conditions, the transversality H(1) = 0, the three
    circular-insertion constraints, and the three multiplier-eliminated
    adjoint conditions.
    """
    r0_vec = _vec3(r0_vec)
    v0_vec = _vec3(v0_vec)
    r0 = float(np.linalg.norm(r0_vec))
    v0 = circular_velocity(r0, field)
    if abs(np.linalg.norm(v0_vec) - v0) > 1e-6 * v0 or abs(r0_vec @ v0_vec) > 1e-6 * r0 * v0:
        raise PreconditionError("initial state must lie on a circular orbit of radius |r0|")
    if not rf > 0:
        raise DomainError("rf must be positive")

    rbar = rf / r0
    vbar = circular_velocity(rf, field) / v0
    tscale = r0 / v0
    r0s = r0_vec / r0
    v0s = v0_vec / v0

    def rhs(s, y, p):
        t1 = p[6]
        if not t1 > 0:
            raise DomainError("coast duration parameter must stay positive")
        return t1 * _augmented_rhs(y)

    def boundary(endpoints, p):
        (ya, yb), = endpoints
        dv0 = p[0:3]
        dv1 = p[3:6]
        n0 = _impulse_norm(dv0)
        n1 = _impulse_norm(dv1)
        r1p = yb[0:3]
        v1p = yb[3:6] + dv1
        elim = eliminate_multipliers(
            yb[6:9], yb[9:12], np.zeros(3), np.zeros(3), r1p, v1p, rbar, vbar
        )
        return np.concatenate([
            ya[0:3] - r0s,
            ya[3:6] - (v0s + dv0),
            ya[9:12] + dv0 / n0,
            yb[9:12] + dv1 / n1,
            [_scaled_hamiltonian(yb)],
            terminal_constraint_residuals(r1p, v1p, rbar, vbar),
            elim.g_residuals,
        ])

    problem = BvpProblem(phases=(Phase(rhs, 12),), boundary_residual=boundary, n_params=7)

    mesh = np.linspace(0.0, 1.0, guess.n_nodes)
    dv0g = guess.dv0 / v0
    dv1g = guess.dv1 / v0
    t1g = guess.switch / tscale
    if not t1g > 0:
        raise PreconditionError("guess coast duration must be positive")
    _impulse_norm(dv0g)
    _impulse_norm(dv1g)
    y0 = np.concatenate([r0s, v0s + dv0g, guess.p_r, guess.p_v])
    states = _rk4_profile(y0, mesh, t1g)
    bvp_guess = BvpGuess(
        meshes=(mesh,),
        states=(states,),
        params=np.concatenate([dv0g, dv1g, [t1g]]),
    )
    return TransferBvp(
        problem=problem, guess=bvp_guess, kind="free-time",
        field=field, r0=r0, v0=v0, rf=rf, tf=None,
    )


def build_problem2(
    r0_vec, v0_vec, rf: float, tf: float, field: GravField, guess: TransferGuess
) -> TransferBvp:
    """Fixed-final-time transfer with an interior impulse at unknown tau1.

    Two 12-dimensional phases, each on its own unit interval, with rhs scale
    factors tau1*tf and (1 - tau1)*tf; parameters are the impulse vectors and
    tau1.  The 31 boundary residuals add, relative to the free-time problem,
    the position/velocity continuity-with-jump matching across the switch,
    vanishing adjoints at the fixed final time, and the interior Hamiltonian
    matching H1(t1-) - H2(t1+) = 0 replacing the free-time transversality.
    """
    r0_vec = _vec3(r0_vec)
    v0_vec = _vec3(v0_vec)
    r0 = float(np.linalg.norm(r0_vec))
    v0 = circular_velocity(r0, field)
    if abs(np.linalg.norm(v0_vec) - v0) > 1e-6 * v0 or abs(r0_vec @ v0_vec) > 1e-6 * r0 * v0:
        raise PreconditionError("initial state must lie on a circular orbit of radius |r0|")
    t_ht = transfer_time(r0, rf, field)
    if not tf > t_ht:
        raise DomainError(
            f"fixed final time {tf} must exceed the tangential transfer time {t_ht:.6f}"
        )

    rbar = rf / r0
    vbar = circular_velocity(rf, field) / v0
    tscale = r0 / v0
    tfs = tf / tscale
    r0s = r0_vec / r0
    v0s = v0_vec / v0

    def rhs1(s, y, p):
        tau1 = p[6]
        if not 0.0 < tau1 < 1.0:
            raise DomainError("switch fraction must stay inside (0, 1)")
        return (tau1 * tfs) * _augmented_rhs(y)

    def rhs2(s, y, p):
        tau1 = p[6]
        if not 0.0 < tau1 < 1.0:
            raise DomainError("switch fraction must stay inside (0, 1)")
        return ((1.0 - tau1) * tfs) * _augmented_rhs(y)

    def boundary(endpoints, p):
        (ya1, yb1), (ya2, yb2) = endpoints
        dv0 = p[0:3]
        dv1 = p[3:6]
        n0 = _impulse_norm(dv0)
        n1 = _impulse_norm(dv1)
        elim = eliminate_multipliers(
            yb1[6:9], yb1[9:12], ya2[6:9], ya2[9:12],
            ya2[0:3], ya2[3:6], rbar, vbar,
        )
        return np.concatenate([
            ya1[0:3] - r0s,
            ya1[3:6] - (v0s + dv0),
            ya2[0:3] - yb1[0:3],
            ya2[3:6] - (yb1[3:6] + dv1),
            ya1[9:12] + dv0 / n0,
            yb1[9:12] + dv1 / n1,
            yb2[9:12],
            yb2[6:9],
            [_scaled_hamiltonian(yb1) - _scaled_hamiltonian(ya2)],
            terminal_constraint_residuals(ya2[0:3], ya2[3:6], rbar, vbar),
            elim.g_residuals,
        ])

    problem = BvpProblem(
        phases=(Phase(rhs1, 12), Phase(rhs2, 12)), boundary_residual=boundary, n_params=7
    )

    dv0g = guess.dv0 / v0
    dv1g = guess.dv1 / v0
    tau1g = float(guess.switch)
    if not 0.0 < tau1g < 1.0:
        raise PreconditionError("guess switch fraction must lie inside (0, 1)")
    _impulse_norm(dv0g)
    _impulse_norm(dv1g)
    mesh1 = np.linspace(0.0, 1.0, guess.n_nodes)
    n2 = max(8, guess.n_nodes // 4)
    mesh2 = np.linspace(0.0, 1.0, n2)
    y0 = np.concatenate([r0s, v0s + dv0g, guess.p_r, guess.p_v])
    states1 = _rk4_profile(y0, mesh1, tau1g * tfs)
    y1 = states1[:, -1].copy()
    y1[3:6] += dv1g
    states2 = _rk4_profile(y1, mesh2, (1.0 - tau1g) * tfs)
    bvp_guess = BvpGuess(
        meshes=(mesh1, mesh2),
        states=(states1, states2),
        params=np.concatenate([dv0g, dv1g, [tau1g]]),
    )
    return TransferBvp(
        problem=problem, guess=bvp_guess, kind="fixed-time",
        field=field, r0=r0, v0=v0, rf=rf, tf=tf,
    )


def solve_transfer(
    tb: TransferBvp,
    tol: float = 1e-6,
    max_nodes: int = 10000,
    verbose: bool = False,
) -> BvpSolution:
    """Run the collocation solver on an assembled transfer problem."""
    return bvp_solve(tb.problem, tb.guess, tol=tol, max_nodes=max_nodes, verbose=verbose)


@dataclass
class ExtractedTransfer:
    plan: ImpulsivePlan
    parameters: TransferParameters
    primer: PrimerHistory
    trajectory: Trajectory
    phase_trajectories: tuple[Trajectory, ...]
    max_bc_error: float
    hamiltonian_history: np.ndarray
    interior_impulse_work: float  # diagnostic: -p_r(t1-) . dv1, scaled


def extract_plan(tb: TransferBvp, solution: BvpSolution) -> ExtractedTransfer:
    """Re-dimensionalize a converged solution into an impulse plan.

    Also samples the primer vector -p_v on the final mesh, rebuilds the
    position/velocity trajectory in SI units, evaluates the worst boundary
    residual, and reports the interior-condition diagnostic -p_r(t1-).dv1.
    """
    if not np.isfinite(solution.max_residual):
        raise PreconditionError("solution residual is not finite")
    if len(solution.meshes) != len(tb.problem.phases):
        raise PreconditionError("solution does not match the problem phase count")
    if any(m.size < 2 for m in solution.meshes):
        raise PreconditionError("zero-length solution phase")

    v0 = tb.v0
    r0 = tb.r0
    tsc = tb.tscale
    p = solution.params
    dv0 = p[0:3] * v0
    dv1 = p[3:6] * v0

    if tb.kind == "free-time":
        t1 = float(p[6] * tsc)
        switch = t1
        phase_spans = [(0.0, t1)]
    else:
        tau1 = float(p[6])
        t1 = tau1 * tb.tf
        switch = tau1
        phase_spans = [(0.0, t1), (t1, tb.tf)]

    phase_traj = []
    times_all = []
    primer_all = []
    ham_all = []
    for k, (a, b) in enumerate(phase_spans):
        mesh = solution.meshes[k]
        Y = solution.states[k]
        t = a + (b - a) * mesh
        states = np.empty((mesh.size, 6))
        states[:, :3] = Y[0:3].T * r0
        states[:, 3:] = Y[3:6].T * v0
        derivs = np.empty((mesh.size, 6))
        derivs[:, :3] = states[:, 3:]
        rn = np.linalg.norm(states[:, :3], axis=1)
        derivs[:, 3:] = -tb.field.mu / rn[:, None] ** 3 * states[:, :3]
        phase_traj.append(Trajectory(t, states, derivs))
        times_all.append(t)
        primer_all.append(-Y[9:12])
        ham_all.append([_scaled_hamiltonian(Y[:, j]) for j in range(mesh.size)])

    primer = PrimerHistory(np.concatenate(times_all), np.hstack(primer_all))

    if len(phase_traj) == 1:
        trajectory = phase_traj[0]
    else:
        t_first = phase_traj[0].times
        t_second = phase_traj[1].times
        y_first = np.array([np.concatenate([st.r, st.v]) for _, st in phase_traj[0].samples])
        y_second = np.array([np.concatenate([st.r, st.v]) for _, st in phase_traj[1].samples])
        trajectory = Trajectory(
            np.concatenate([t_first, t_second[1:]]),
            np.vstack([y_first, y_second[1:]]),
        )

    endpoints = [(Y[:, 0], Y[:, -1]) for Y in solution.states]
    bc = tb.problem.boundary_residual(endpoints, p)
    max_bc_error = float(np.max(np.abs(bc)))

    yb1 = solution.states[0][:, -1]
    interior = float(-(yb1[6:9] @ p[3:6]))

    plan = ImpulsivePlan(dv0=dv0, dv1=dv1, t_impulse_1=t1)
    params = TransferParameters(dv0=dv0, dv1=dv1, switch=switch)
    return ExtractedTransfer(
        plan=plan,
        parameters=params,
        primer=primer,
        trajectory=trajectory,
        phase_trajectories=tuple(phase_traj),
        max_bc_error=max_bc_error,
        hamiltonian_history=np.concatenate(ham_all),
        interior_impulse_work=interior,
    )
