"""Multi-phase collocation solver for boundary-value problems with parameters.

Discretisation is 3-stage Lobatto IIIA collocation (the MIRK4 scheme behind
bvp4c-class solvers): on each mesh interval the residual

    r_i = y_{i+1} - y_i - h/6 (f_i + 4 f_mid + f_{i+1}),
    y_mid = (y_i + y_{i+1})/2 - h/8 (f_{i+1} - f_i)

is driven to zero together with the boundary residual by a damped Newton
iteration, and the mesh is refined until the normalized defect of the cubic
Hermite interpolant drops below the requested tolerance on every interval.

Each phase lives on its own unit interval with its own mesh; all coupling
between phases (continuity, jumps, interior conditions) goes through the
single boundary-residual function, which receives the endpoint states of
every phase plus the unknown parameters and must return
sum(phase dimensions) + n_params residuals.

Phase right-hand sides must be vectorized: rhs(s, y, p) with s of shape (m,)
and y of shape (dim, m) returns (dim, m).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .errors import DomainError, HohmannError, MeshOverflowError, NonconvergenceError

__all__ = [
    "Phase",
    "BvpProblem",
    "BvpGuess",
    "BvpSolution",
    "SolveDiagnostics",
    "solve",
    "newton_step",
    "estimate_residual",
    "refine_mesh",
]

_SQRT_EPS = np.sqrt(np.finfo(float).eps)
# interior sample offsets for the defect estimate: midpoint and the two
# interior nodes of the 5-point Lobatto rule, as fractions of the interval
_LOBATTO_OFFSET = 0.5 * np.sqrt(3.0 / 7.0)


@dataclass(frozen=True)
class Phase:
    rhs: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dim: int


@dataclass(frozen=True)
class BvpProblem:
    phases: tuple[Phase, ...]
    boundary_residual: Callable[[Sequence[tuple[np.ndarray, np.ndarray]], np.ndarray], np.ndarray]
    n_params: int

    @property
    def n_boundary(self) -> int:
        return sum(ph.dim for ph in self.phases) + self.n_params


@dataclass
class BvpGuess:
    meshes: tuple[np.ndarray, ...]
    states: tuple[np.ndarray, ...]
    params: np.ndarray

    def __post_init__(self):
        self.meshes = tuple(np.asarray(m, dtype=float) for m in self.meshes)
        self.states = tuple(np.asarray(y, dtype=float) for y in self.states)
        self.params = np.asarray(self.params, dtype=float)
        for m in self.meshes:
            if m.size < 2 or np.any(np.diff(m) <= 0):
                raise DomainError("each phase mesh needs >= 2 strictly increasing nodes")


@dataclass
class SolveDiagnostics:
    ode_evals: int = 0
    bc_evals: int = 0
    newton_iters: int = 0
    mesh_sizes: list = field(default_factory=list)


@dataclass
class BvpSolution:
    meshes: tuple[np.ndarray, ...]
    states: tuple[np.ndarray, ...]
    derivs: tuple[np.ndarray, ...]
    params: np.ndarray
    max_residual: float
    diagnostics: SolveDiagnostics

    def interpolate(self, phase: int, s: np.ndarray) -> np.ndarray:
        """Cubic Hermite dense output of one phase at scaled times s, shape (dim, len(s))."""
        return _hermite_eval(self.meshes[phase], self.states[phase], self.derivs[phase], np.atleast_1d(s))


def _hermite_eval(mesh, Y, F, s, derivative=False):
    idx = np.clip(np.searchsorted(mesh, s, side="right") - 1, 0, mesh.size - 2)
    h = mesh[idx + 1] - mesh[idx]
    t = (s - mesh[idx]) / h
    y0, y1 = Y[:, idx], Y[:, idx + 1]
    f0, f1 = F[:, idx], F[:, idx + 1]
    if not derivative:
        h00 = (1 + 2 * t) * (1 - t) ** 2
        h10 = t * (1 - t) ** 2
        h01 = t * t * (3 - 2 * t)
        h11 = t * t * (t - 1)
        return h00 * y0 + h * h10 * f0 + h01 * y1 + h * h11 * f1
    d00 = 6 * t * (t - 1)
    d10 = (1 - t) * (1 - 3 * t)
    d01 = -6 * t * (t - 1)
    d11 = t * (3 * t - 2)
    return (d00 * y0 + d01 * y1) / h + d10 * f0 + d11 * f1


class _System:
    """Workspace tying one problem + meshes to a flat Newton unknown vector."""

    def __init__(self, problem: BvpProblem, meshes, diagnostics: SolveDiagnostics):
        self.problem = problem
        self.meshes = tuple(np.asarray(m, dtype=float) for m in meshes)
        self.diag = diagnostics
        self.dims = [ph.dim for ph in problem.phases]
        self.sizes = [m.size for m in self.meshes]
        self.offsets = np.cumsum([0] + [n * m for n, m in zip(self.dims, self.sizes)])
        self.n_params = problem.n_params
        self.n_unknowns = int(self.offsets[-1]) + self.n_params
        n_colloc = sum(n * (m - 1) for n, m in zip(self.dims, self.sizes))
        if problem.n_boundary + n_colloc != self.n_unknowns:
            raise DomainError(
                "boundary residual dimension mismatch: expected "
                f"{self.n_unknowns - n_colloc} residuals"
            )

    def pack(self, states, params) -> np.ndarray:
        return np.concatenate([Y.T.ravel() for Y in states] + [np.asarray(params, float)])

    def unpack(self, z):
        states = []
        for k, (n, m) in enumerate(zip(self.dims, self.sizes)):
            states.append(z[self.offsets[k]:self.offsets[k + 1]].reshape(m, n).T)
        return states, z[self.offsets[-1]:]

    def _phase_eval(self, k, Y, p):
        """Node and midpoint rhs values for phase k; returns (f, y_mid, f_mid)."""
        ph = self.problem.phases[k]
        s = self.meshes[k]
        h = np.diff(s)
        f = ph.rhs(s, Y, p)
        y_mid = 0.5 * (Y[:, :-1] + Y[:, 1:]) - (h / 8.0) * (f[:, 1:] - f[:, :-1])
        f_mid = ph.rhs(0.5 * (s[:-1] + s[1:]), y_mid, p)
        self.diag.ode_evals += f.shape[1] + f_mid.shape[1]
        return f, y_mid, f_mid

    def residual(self, z) -> np.ndarray:
        states, p = self.unpack(z)
        parts = []
        endpoints = []
        for k, Y in enumerate(states):
            h = np.diff(self.meshes[k])
            f, _, f_mid = self._phase_eval(k, Y, p)
            r = Y[:, 1:] - Y[:, :-1] - (h / 6.0) * (f[:, :-1] + 4.0 * f_mid + f[:, 1:])
            parts.append(r.T.ravel())
            endpoints.append((Y[:, 0], Y[:, -1]))
        self.diag.bc_evals += 1
        parts.append(np.asarray(self.problem.boundary_residual(endpoints, p), dtype=float))
        return np.concatenate(parts)

    def _rhs_jacobians(self, k, s, Y, p, f_ref):
        """FD Jacobians of phase-k rhs w.r.t. state (J) and parameters (fp)."""
        ph = self.problem.phases[k]
        n, m = Y.shape
        J = np.empty((m, n, n))
        for c in range(n):
            step = _SQRT_EPS * (1.0 + np.abs(Y[c]))
            Yp = Y.copy()
            Yp[c] += step
            J[:, :, c] = ((ph.rhs(s, Yp, p) - f_ref) / step).T
        fp = np.empty((m, n, self.n_params))
        for q in range(self.n_params):
            step = _SQRT_EPS * (1.0 + abs(p[q]))
            pq = p.copy()
            pq[q] += step
            fp[:, :, q] = ((ph.rhs(s, Y, pq) - f_ref) / step).T
        self.diag.ode_evals += m * (n + self.n_params)
        return J, fp

    def jacobian(self, z) -> csc_matrix:
        states, p = self.unpack(z)
        rows, cols, vals = [], [], []
        row_base = 0
        n_p = self.n_params
        p_col0 = self.offsets[-1]
        endpoints = []
        for k, Y in enumerate(states):
            n = self.dims[k]
            s = self.meshes[k]
            h = np.diff(s)
            N = h.size
            f, y_mid, f_mid = self._phase_eval(k, Y, p)
            s_mid = 0.5 * (s[:-1] + s[1:])
            J, fp = self._rhs_jacobians(k, s, Y, p, f)
            Jm, fpm = self._rhs_jacobians(k, s_mid, y_mid, p, f_mid)
            eye = np.eye(n)
            hN = h[:, None, None]
            Ji, Jn = J[:-1], J[1:]
            # d r_i / d y_i and d r_i / d y_{i+1}
            A = -eye - hN / 6.0 * Ji - hN / 3.0 * Jm - hN**2 / 12.0 * (Jm @ Ji)
            B = eye - hN / 6.0 * Jn - hN / 3.0 * Jm + hN**2 / 12.0 * (Jm @ Jn)
            node_cols = self.offsets[k] + np.arange(N)[:, None, None] * n + np.arange(n)[None, None, :]
            res_rows = row_base + np.arange(N)[:, None, None] * n + np.arange(n)[None, :, None]
            rows += [np.broadcast_to(res_rows, A.shape).ravel(),
                     np.broadcast_to(res_rows, B.shape).ravel()]
            cols += [np.broadcast_to(node_cols, A.shape).ravel(),
                     np.broadcast_to(node_cols + n, B.shape).ravel()]
            vals += [A.ravel(), B.ravel()]
            if n_p:
                P = (-hN / 6.0 * (fp[:-1] + 4.0 * fpm + fp[1:])
                     + hN**2 / 12.0 * (Jm @ (fp[1:] - fp[:-1])))
                prow = row_base + np.arange(N)[:, None, None] * n + np.arange(n)[None, :, None]
                pcol = p_col0 + np.arange(n_p)[None, None, :]
                rows.append(np.broadcast_to(prow, P.shape).ravel())
                cols.append(np.broadcast_to(pcol, P.shape).ravel())
                vals.append(P.ravel())
            row_base += N * n
            endpoints.append((Y[:, 0], Y[:, -1]))

        # boundary rows by forward differences on the endpoint states and params
        bc0 = np.asarray(self.problem.boundary_residual(endpoints, p), dtype=float)
        n_bc = bc0.size
        bc_rows = row_base + np.arange(n_bc)

        def bc_col(pert_endpoints, pert_p, col):
            d = (np.asarray(self.problem.boundary_residual(pert_endpoints, pert_p), float) - bc0)
            rows.append(bc_rows)
            cols.append(np.full(n_bc, col))
            return d

        n_bc_evals = 1
        for k, (ya, yb) in enumerate(endpoints):
            n = self.dims[k]
            m = self.sizes[k]
            for side, vec, node in (("a", ya, 0), ("b", yb, m - 1)):
                for c in range(n):
                    step = _SQRT_EPS * (1.0 + abs(vec[c]))
                    pert = vec.copy()
                    pert[c] += step
                    eps_endpoints = list(endpoints)
                    eps_endpoints[k] = (pert, yb) if side == "a" else (ya, pert)
                    col = self.offsets[k] + node * n + c
                    vals.append(bc_col(eps_endpoints, p, col) / step)
                    n_bc_evals += 1
        for q in range(n_p):
            step = _SQRT_EPS * (1.0 + abs(p[q]))
            pq = p.copy()
            pq[q] += step
            vals.append(bc_col(endpoints, pq, p_col0 + q) / step)
            n_bc_evals += 1
        self.diag.bc_evals += n_bc_evals

        return csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_unknowns, self.n_unknowns),
        )


def newton_step(
    residual: Callable[[np.ndarray], np.ndarray],
    z: np.ndarray,
    f_z: np.ndarray | None = None,
    linear_solve: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    min_damping: float = 1e-4,
):
    """One damped Newton step on residual(z) = 0.

    `linear_solve(z, F)` must return the Newton direction solving
    J(z) d = -F; by default a dense forward-difference Jacobian is built,
    which is only suitable for small systems.  Backtracking (Armijo on the
    residual 2-norm) halves the step until the merit decreases; hitting the
    damping floor without decrease raises NonconvergenceError.

    Returns (z_next, f_next, step_scale).
    """
    z = np.asarray(z, dtype=float)
    if f_z is None:
        f_z = np.asarray(residual(z), dtype=float)
    if linear_solve is None:
        def linear_solve(zz, F):
            n = zz.size
            J = np.empty((n, n))
            for c in range(n):
                step = _SQRT_EPS * (1.0 + abs(zz[c]))
                zp = zz.copy()
                zp[c] += step
                J[:, c] = (np.asarray(residual(zp), float) - F) / step
            return np.linalg.solve(J, -F)

    norm0 = np.linalg.norm(f_z)
    if norm0 == 0.0:
        return z, f_z, 0.0
    direction = linear_solve(z, f_z)
    alpha = 1.0
    while True:
        try:
            f_new = np.asarray(residual(z + alpha * direction), dtype=float)
            ok = np.all(np.isfinite(f_new)) and np.linalg.norm(f_new) <= (1.0 - 1e-4 * alpha) * norm0
        except HohmannError:
            ok = False
        if ok:
            return z + alpha * direction, f_new, alpha
        alpha *= 0.5
        if alpha < min_damping:
            raise NonconvergenceError(
                "line search stalled at the damping floor",
                last_iterate=z,
                residual_norm=float(norm0),
            )


def estimate_residual(
    mesh: np.ndarray,
    states: np.ndarray,
    derivs: np.ndarray,
    rhs: Callable,
    params: np.ndarray,
) -> np.ndarray:
    """Normalized collocation defect of the Hermite interpolant, per interval.

    Samples the defect S'(s) - f(s, S(s)) at the midpoint and the two interior
    Lobatto points of each interval, scales componentwise by 1 + |f|, and
    combines with 5-point Lobatto weights into an interval rms value.
    """
    mesh = np.asarray(mesh, float)
    h = np.diff(mesh)
    mid = 0.5 * (mesh[:-1] + mesh[1:])
    sq = np.empty((3, h.size))
    for row, pts in enumerate((mid, mid - _LOBATTO_OFFSET * h, mid + _LOBATTO_OFFSET * h)):
        y = _hermite_eval(mesh, states, derivs, pts)
        yp = _hermite_eval(mesh, states, derivs, pts, derivative=True)
        fvals = np.asarray(rhs(pts, y, params), float)
        rel = (yp - fvals) / (1.0 + np.abs(fvals))
        sq[row] = np.sum(rel * rel, axis=0)
    return np.sqrt(0.5 * (32.0 / 45.0 * sq[0] + 49.0 / 90.0 * (sq[1] + sq[2])))


def refine_mesh(
    mesh: np.ndarray,
    residuals: np.ndarray,
    tol: float,
    max_nodes: int = 10000,
) -> np.ndarray:
    """Split intervals whose defect exceeds tol (into thirds beyond 100 tol).

    Intervals already below tolerance are left alone, so an everywhere-cold
    mesh is returned unchanged.  Raises MeshOverflowError if splitting would
    exceed max_nodes.
    """
    mesh = np.asarray(mesh, float)
    residuals = np.asarray(residuals, float)
    if residuals.shape != (mesh.size - 1,):
        raise DomainError("one residual per interval required")
    pieces = [mesh[:1]]
    for i, r in enumerate(residuals):
        a, b = mesh[i], mesh[i + 1]
        if r > 100.0 * tol:
            pieces.append(np.array([a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0, b]))
        elif r > tol:
            pieces.append(np.array([0.5 * (a + b), b]))
        else:
            pieces.append(np.array([b]))
    new = np.concatenate(pieces)
    if new.size > max_nodes:
        raise MeshOverflowError(
            f"refinement needs {new.size} nodes (> max_nodes = {max_nodes})",
        )
    return new


def solve(
    problem: BvpProblem,
    guess: BvpGuess,
    tol: float = 1e-6,
    max_nodes: int = 10000,
    verbose: bool = False,
    max_refinements: int = 12,
    newton_max_iter: int = 40,
) -> BvpSolution:
    """Solve the BVP to the requested defect tolerance.

    Newton converges the collocation + boundary system on the current meshes,
    the interval defects are estimated, hot intervals are split, and the
    previous solution is carried to the new meshes by Hermite interpolation.
    """
    if not (1e-12 <= tol <= 1e-3):
        raise DomainError(f"tol must lie in [1e-12, 1e-3], got {tol}")
    if len(guess.meshes) != len(problem.phases):
        raise DomainError("guess must provide one mesh per phase")
    for ph, Y, m in zip(problem.phases, guess.states, guess.meshes):
        if Y.shape != (ph.dim, m.size):
            raise DomainError("guess state shape must be (dim, len(mesh)) per phase")
    if guess.params.shape != (problem.n_params,):
        raise DomainError(f"guess needs {problem.n_params} parameters")

    diag = SolveDiagnostics()
    meshes = [m.copy() for m in guess.meshes]
    states = [Y.copy() for Y in guess.states]
    params = guess.params.copy()
    newton_tol = max(1e-12, min(1e-10, 1e-3 * tol))

    for sweep in range(max_refinements):
        system = _System(problem, meshes, diag)
        z = system.pack(states, params)
        f_z = system.residual(z)

        def sparse_solve(zz, F):
            return splu(system.jacobian(zz)).solve(-F)

        for _ in range(newton_max_iter):
            if np.max(np.abs(f_z)) <= newton_tol:
                break
            try:
                z, f_z, _ = newton_step(system.residual, z, f_z, sparse_solve)
            except NonconvergenceError:
                # a stalled line search at an already-small residual is
                # roundoff, not failure
                if np.max(np.abs(f_z)) <= 1e3 * newton_tol:
                    break
                raise
            diag.newton_iters += 1
        else:
            raise NonconvergenceError(
                f"Newton did not reach {newton_tol:.1e} in {newton_max_iter} iterations",
                last_iterate=z,
                residual_norm=float(np.linalg.norm(f_z)),
            )

        states, params = system.unpack(z)
        derivs = []
        interval_res = []
        for k, Y in enumerate(states):
            f, _, _ = system._phase_eval(k, Y, params)
            derivs.append(f)
            interval_res.append(
                estimate_residual(meshes[k], Y, f, problem.phases[k].rhs, params)
            )
        max_res = max(float(r.max()) for r in interval_res)
        diag.mesh_sizes.append(tuple(m.size for m in meshes))

        if max_res <= tol:
            if verbose:
                total = sum(m.size for m in meshes)
                print(f"The solution was obtained on a mesh of {total} points.")
                print(f"The maximum residual is {max_res:9.3e}.")
                print(f"There were {diag.ode_evals} calls to the ODE function.")
                print(f"There were {diag.bc_evals} calls to the BC function.")
            return BvpSolution(
                meshes=tuple(meshes),
                states=tuple(states),
                derivs=tuple(derivs),
                params=params,
                max_residual=max_res,
                diagnostics=diag,
            )

        new_meshes = []
        new_states = []
        for k in range(len(meshes)):
            others = sum(m.size for j, m in enumerate(meshes) if j != k)
            new_mesh = refine_mesh(meshes[k], interval_res[k], tol, max_nodes - others)
            new_states.append(_hermite_eval(meshes[k], states[k], derivs[k], new_mesh))
            new_meshes.append(new_mesh)
        meshes, states = new_meshes, new_states

    raise NonconvergenceError(
        f"defect tolerance {tol:.1e} not reached after {max_refinements} mesh refinements",
        residual_norm=max_res,
    )
