"""Dense primal-dual interior-point solver for small Hermitian SDPs.

Primal::

    minimize    Re Tr[C X] + c_l . x
    subject to  Re Tr[A_i X] + (A_l x)_i = b_i,   X >= 0 (Hermitian),  x >= 0

Dual::

    maximize    b . y
    subject to  C - sum_i y_i A_i >= 0,   c_l - A_l^T y >= 0

The LP block is optional. Iterations use the HKM search direction with a
Mehrotra predictor-corrector and an infeasible start, all in complex
Hermitian arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

STEP_FRACTION = 0.98
DEPENDENCY_RTOL = 1e-10


class SolverError(RuntimeError):
    """The interior-point method could not produce a usable iterate."""


class InfeasibleError(SolverError):
    """No PSD point satisfies the constraints."""


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def _as_matrix(op) -> np.ndarray:
    return np.asarray(getattr(op, "data", op), dtype=complex)


@dataclass(eq=False)
class SdpProblem:
    """Standard-form SDP with an optional nonnegative LP block."""

    objective: np.ndarray
    constraints: Sequence[np.ndarray]
    rhs: np.ndarray
    lp_objective: np.ndarray | None = None
    lp_constraints: np.ndarray | None = None

    def __post_init__(self):
        self.objective = _as_matrix(self.objective)
        self.constraints = np.array([_as_matrix(a) for a in self.constraints])
        self.rhs = np.asarray(self.rhs, dtype=float).ravel()
        n = self.objective.shape[0]
        if self.objective.shape != (n, n):
            raise ValueError("objective must be square")
        if self.constraints.ndim != 3 or self.constraints.shape[1:] != (n, n):
            raise ValueError("constraints must be matrices of the objective's order")
        if len(self.constraints) != len(self.rhs):
            raise ValueError("constraints and rhs differ in length")
        herm = max(np.abs(self.objective - self.objective.conj().T).max(),
                   np.abs(self.constraints - self.constraints.conj().transpose(0, 2, 1)).max())
        if herm > 1e-12:
            raise ValueError(f"non-Hermitian data (deviation {herm:.2e})")
        self.objective = hermitize(self.objective)
        self.constraints = 0.5 * (self.constraints + self.constraints.conj().transpose(0, 2, 1))
        if self.lp_objective is None:
            self.lp_objective = np.zeros(0)
            self.lp_constraints = np.zeros((len(self.rhs), 0))
        self.lp_objective = np.asarray(self.lp_objective, dtype=float).ravel()
        self.lp_constraints = np.asarray(self.lp_constraints, dtype=float).reshape(
            len(self.rhs), len(self.lp_objective))

    @property
    def dim(self) -> int:
        return self.objective.shape[0]

    @property
    def n_constraints(self) -> int:
        return len(self.rhs)

    def apply(self, x_mat: np.ndarray, x_lp: np.ndarray | None = None) -> np.ndarray:
        """``A(X) + A_l x``."""
        out = np.real(np.einsum("kab,ba->k", self.constraints, x_mat))
        if x_lp is not None and len(x_lp):
            out = out + self.lp_constraints @ x_lp
        return out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """``sum_i y_i A_i``."""
        return np.tensordot(y, self.constraints, axes=1)

    def scale(self) -> float:
        return 1.0 + np.abs(self.objective).max() + np.abs(self.rhs).max()


@dataclass(eq=False)
class SdpSolution:
    primal: np.ndarray
    dual: np.ndarray
    slack: np.ndarray
    gap: float
    max_residual: float
    status: str
    primal_lp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slack_lp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    primal_value: float = np.nan
    dual_value: float = np.nan
    iterations: int = 0
    dual_residual: float = np.nan

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def independent_rows(problem: SdpProblem) -> tuple[np.ndarray, np.ndarray]:
    """Indices of a maximal linearly independent constraint subset.

    Returns ``(keep, drop)``. Raises :class:`InfeasibleError` when the
    right-hand side of a dropped row is inconsistent with the kept ones.
    """
    k = problem.n_constraints
    if k == 0:
        return np.arange(0), np.arange(0)
    vecs = problem.constraints.reshape(k, -1)
    mat = np.hstack([vecs.real, vecs.imag, problem.lp_constraints]).T
    _, r, piv = sla.qr(mat, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > DEPENDENCY_RTOL * max(diag[0], 1.0))) if diag.size else 0
    keep = np.sort(piv[:rank])
    drop = np.sort(piv[rank:])
    if drop.size:
        coef, *_ = np.linalg.lstsq(mat[:, keep], mat[:, drop], rcond=None)
        predicted = problem.rhs[keep] @ coef
        mismatch = np.abs(predicted - problem.rhs[drop])
        tol = 1e-9 * (1 + np.abs(problem.rhs).max())
        if mismatch.max() > tol:
            bad = int(drop[np.argmax(mismatch)])
            raise InfeasibleError(
                f"constraint {bad} is a combination of others with inconsistent rhs "
                f"(mismatch {mismatch.max():.2e})")
    return keep, drop


def _max_step_psd(x_mat: np.ndarray, d_mat: np.ndarray) -> float:
    """Largest step ``t <= 1`` keeping ``X + t dX`` PSD, scaled back."""
    try:
        chol = np.linalg.cholesky(x_mat)
    except np.linalg.LinAlgError:
        return 0.0
    tmp = sla.solve_triangular(chol, d_mat, lower=True)
    tmp = sla.solve_triangular(chol, tmp.conj().T, lower=True)
    lam = np.linalg.eigvalsh(hermitize(tmp))[0]
    if lam >= 0:
        return 1.0
    return min(1.0, -STEP_FRACTION / lam)


def _max_step_lp(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, STEP_FRACTION * np.min(-x[neg] / dx[neg]))


def _schur(problem: SdpProblem, x_mat, s_inv, x_lp, s_lp) -> np.ndarray:
    a = problem.constraints
    k, n, _ = a.shape
    xa = np.matmul(x_mat[None], a)
    b = np.matmul(xa, s_inv[None])
    m = np.real(a.transpose(0, 2, 1).reshape(k, -1) @ b.reshape(k, -1).T)
    if x_lp.size:
        m = m + (problem.lp_constraints * (x_lp / s_lp)) @ problem.lp_constraints.T
    return 0.5 * (m + m.T)


def _solve_schur(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        factor = sla.cho_factor(m, lower=True, check_finite=False)
        return sla.cho_solve(factor, rhs, check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        sol, *_ = np.linalg.lstsq(m, rhs, rcond=None)
        return sol


def solve_primal_dual(problem: SdpProblem, tol: float = 1e-9, max_iter: int = 100,
                      verbose: bool = False) -> SdpSolution:
    """Solve ``problem`` to relative accuracy ``tol``.

    Linearly dependent constraints are removed first; their dual components
    are reported as zero.
    """
    keep, _ = independent_rows(problem)
    sub = SdpProblem(problem.objective, problem.constraints[keep], problem.rhs[keep],
                     problem.lp_objective, problem.lp_constraints[keep])
    sol = _ipm(sub, tol, max_iter, verbose)
    y = np.zeros(problem.n_constraints)
    y[keep] = sol.dual
    resid = problem.apply(sol.primal, sol.primal_lp) - problem.rhs
    sol.dual = y
    sol.max_residual = float(np.abs(resid).max()) if resid.size else 0.0
    return sol


def _ipm(p: SdpProblem, tol: float, max_iter: int, verbose: bool) -> SdpSolution:
    n, k, nl = p.dim, p.n_constraints, len(p.lp_objective)
    c, b, cl, al = p.objective, p.rhs, p.lp_objective, p.lp_constraints
    eye = np.eye(n)
    norm_a = np.array([np.linalg.norm(a) for a in p.constraints]) if k else np.zeros(1)
    norm_b = np.linalg.norm(b)
    norm_c = np.linalg.norm(c) + np.linalg.norm(cl)

    xi = max(10.0, np.sqrt(n), n * np.max((1 + np.abs(b)) / (1 + norm_a)) if k else 1.0)
    eta = max(10.0, np.sqrt(n), max(norm_c, norm_a.max())) / np.sqrt(n)
    x_mat, s_mat = xi * eye.astype(complex), eta * eye.astype(complex)
    x_lp, s_lp = xi * np.ones(nl), eta * np.ones(nl)
    y = np.zeros(k)
    nu = n + nl

    status = "max_iter"
    it = 0
    best = None
    for it in range(1, max_iter + 1):
        rp = b - p.apply(x_mat, x_lp)
        rd = hermitize(c - p.adjoint(y) - s_mat)
        rdl = cl - al.T @ y - s_lp
        mu = (np.real(np.vdot(x_mat, s_mat)) + x_lp @ s_lp) / nu
        pobj = float(np.real(np.vdot(c, x_mat)) + cl @ x_lp)
        dobj = float(b @ y)
        pinf = np.linalg.norm(rp) / (1 + norm_b)
        dinf = (np.linalg.norm(rd) + np.linalg.norm(rdl)) / (1 + norm_c)
        relgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        if verbose:
            print(f"{it:3d} p={pobj:+.10e} d={dobj:+.10e} gap={relgap:.1e} "
                  f"pinf={pinf:.1e} dinf={dinf:.1e} mu={mu:.1e}")
        merit = max(pinf, dinf, relgap)
        if best is None or merit < best[0]:
            best = (merit, x_mat, x_lp, y, s_mat, s_lp, pobj, dobj, it)
        if pinf <= tol and dinf <= tol and relgap <= tol:
            status = "optimal"
            break
        if k and np.linalg.norm(y) > 1e12 * (1 + norm_c) and dobj > 0 and pinf > 1e-6:
            raise InfeasibleError("dual objective diverges: primal infeasible")

        s_inv = np.linalg.inv(s_mat)
        s_inv = hermitize(s_inv)
        schur = _schur(p, x_mat, s_inv, x_lp, s_lp)
        x_rd_sinv = hermitize(x_mat @ rd @ s_inv)

        def direction(target, corr_mat, corr_lp):
            # Complementarity residual R = target*I - XS - corr (HKM form).
            rc_sinv = hermitize(target * s_inv - x_mat - corr_mat @ s_inv)
            rcl = target - x_lp * s_lp - corr_lp
            rhs = rp - p.apply(rc_sinv - x_rd_sinv)
            if nl:
                rhs = rhs - al @ (rcl / s_lp - x_lp * rdl / s_lp)
            dy = _solve_schur(schur, rhs)
            ds = hermitize(rd - p.adjoint(dy))
            dsl = rdl - al.T @ dy
            dx = rc_sinv - hermitize(x_mat @ ds @ s_inv)
            dxl = (rcl - x_lp * dsl) / s_lp if nl else np.zeros(0)
            return dx, dxl, dy, ds, dsl

        dxa, dxla, dya, dsa, dsla = direction(0.0, np.zeros_like(x_mat), np.zeros(nl))
        ap = min(_max_step_psd(x_mat, dxa), _max_step_lp(x_lp, dxla) if nl else 1.0)
        ad = min(_max_step_psd(s_mat, dsa), _max_step_lp(s_lp, dsla) if nl else 1.0)
        mu_aff = (np.real(np.vdot(x_mat + ap * dxa, s_mat + ad * dsa))
                  + (x_lp + ap * dxla) @ (s_lp + ad * dsla)) / nu
        sigma = min(1.0, max(0.0, mu_aff / mu) ** 3)
        dx, dxl, dy, ds, dsl = direction(sigma * mu, dxa @ dsa, dxla * dsla)
        ap = min(_max_step_psd(x_mat, dx), _max_step_lp(x_lp, dxl) if nl else 1.0)
        ad = min(_max_step_psd(s_mat, ds), _max_step_lp(s_lp, dsl) if nl else 1.0)
        if ap < 1e-12 and ad < 1e-12:
            break
        x_mat = hermitize(x_mat + ap * dx)
        x_lp = x_lp + ap * dxl
        y = y + ad * dy
        s_mat = hermitize(s_mat + ad * ds)
        s_lp = s_lp + ad * dsl

    if status != "optimal":
        _, x_mat, x_lp, y, s_mat, s_lp, pobj, dobj, it = best
    slack = hermitize(c - p.adjoint(y))
    resid = p.apply(x_mat, x_lp) - b
    dres = float(np.linalg.norm(slack - s_mat)) if n else 0.0
    return SdpSolution(
        primal=x_mat, dual=y, slack=slack, gap=float(pobj - dobj),
        max_residual=float(np.abs(resid).max()) if k else 0.0, status=status,
        primal_lp=x_lp, slack_lp=cl - al.T @ y, primal_value=pobj, dual_value=dobj,
        iterations=it, dual_residual=dres)


# --------------------------------------------------------------------------
# feasibility and certificates

def feasibility_point(constraints: Sequence, rhs: Sequence[float], tol: float = 1e-10,
                      min_eig: float = 1e-10, max_residual: float = 1e-7) -> np.ndarray:
    """Unit-trace PSD matrix meeting the constraints with maximal ``lambda_min``.

    Solves ``max t`` over ``X = W + t I`` with ``W >= 0``, ``t >= 0``.

    Raises
    ------
    InfeasibleError
        If the statistics are inconsistent or no strictly positive point
        exists.
    """
    ops = np.array([_as_matrix(a) for a in constraints])
    rhs = np.asarray(rhs, dtype=float)
    n = ops.shape[1]
    eye = np.eye(n)
    all_ops = np.concatenate([ops, eye[None]])
    all_rhs = np.append(rhs, 1.0)
    traces = np.real(np.trace(all_ops, axis1=1, axis2=2))
    problem = SdpProblem(np.zeros((n, n)), all_ops, all_rhs,
                         lp_objective=np.array([-1.0]), lp_constraints=traces[:, None])
    sol = solve_primal_dual(problem, tol=tol)
    # Only a strictly positive starting point is needed; a stalled solve with
    # small residuals still provides one.
    if sol.status != "optimal" and sol.max_residual > max_residual:
        raise InfeasibleError(f"feasibility solve ended with status {sol.status}")
    t = float(sol.primal_lp[0])
    x = hermitize(sol.primal + t * eye)
    lam = np.linalg.eigvalsh(x)[0]
    if lam <= min_eig:
        raise InfeasibleError(f"no strictly feasible point (max lambda_min = {lam:.2e})")
    return x


def slack_matrix(gradient: np.ndarray, constraint_ops: Sequence, nu: np.ndarray) -> np.ndarray:
    ops = np.array([_as_matrix(a) for a in constraint_ops])
    return hermitize(_as_matrix(gradient) - np.tensordot(np.asarray(nu, float), ops, axes=1))


def eig_residual_bound(mat: np.ndarray) -> float:
    """Backward-error bound for a computed Hermitian eigenvalue."""
    return 4.0 * mat.shape[0] * np.finfo(float).eps * max(np.linalg.norm(mat, 2), 1e-300)


def verify_dual_certificate(gradient: np.ndarray, constraint_ops: Sequence,
                            nu: np.ndarray) -> tuple[float, bool]:
    """Smallest eigenvalue of the dual slack and whether it is provably >= 0.

    The eigenvalue is accepted as nonnegative only if it exceeds the
    floating-point error bound of the eigensolver.
    """
    s = slack_matrix(gradient, constraint_ops, nu)
    lam = float(np.linalg.eigvalsh(s)[0])
    return lam, lam >= eig_residual_bound(s)


def repair_certificate(nu: np.ndarray, lambda_min: float, n_pe: int,
                       margin: float = 0.0) -> np.ndarray:
    """Shift the first ``n_pe`` dual components down by ``|lambda_min|``.

    The first ``n_pe`` constraint operators must sum to the identity, so the
    slack gains ``(|lambda_min| + margin) I``.
    """
    out = np.array(nu, dtype=float)
    if lambda_min < 0 or margin > 0:
        out[:n_pe] -= max(0.0, -lambda_min) + margin
    return out


def epsilon_prime(problem: SdpProblem, solution: SdpSolution, floor: float = 1e-12) -> float:
    """Largest constraint or Hermiticity residual of ``solution``, floored."""
    x = solution.primal
    resid = problem.apply(x, solution.primal_lp) - problem.rhs
    herm = float(np.abs(x - x.conj().T).max())
    return float(max(np.abs(resid).max() if resid.size else 0.0, herm, floor))


def robust_dual_problem(problem: SdpProblem, eps_prime: float) -> SdpProblem:
    """Problem whose dual is ``max b.y - eps' sum mu`` with ``mu >= |y|``.

    LP columns ``k`` and ``K + k`` carry the slacks ``mu_k - y_k`` and
    ``mu_k + y_k``; the extra rows hold the ``mu`` variables.
    """
    k, n = problem.n_constraints, problem.dim
    lp = np.zeros((2 * k, 2 * k))
    idx = np.arange(k)
    lp[idx, idx] = 1.0
    lp[idx, k + idx] = -1.0
    lp[k + idx, idx] = -1.0
    lp[k + idx, k + idx] = -1.0
    zeros = np.zeros((k, n, n), dtype=complex)
    return SdpProblem(problem.objective, np.concatenate([problem.constraints, zeros]),
                      np.concatenate([problem.rhs, -eps_prime * np.ones(k)]),
                      lp_objective=np.zeros(2 * k), lp_constraints=lp)


def spread_penalized_problem(problem: SdpProblem, penalty: float) -> SdpProblem:
    """Problem whose dual is ``max b.y - penalty (u - l)`` with ``l <= y <= u``.

    Among near-optimal dual points this prefers those with a small range,
    which keeps affine bounds built from ``y`` well conditioned.
    """
    k, n = problem.n_constraints, problem.dim
    lp = np.zeros((k + 2, 2 * k))
    idx = np.arange(k)
    lp[idx, idx] = 1.0
    lp[k, idx] = -1.0
    lp[idx, k + idx] = -1.0
    lp[k + 1, k + idx] = 1.0
    zeros = np.zeros((2, n, n), dtype=complex)
    return SdpProblem(problem.objective, np.concatenate([problem.constraints, zeros]),
                      np.concatenate([problem.rhs, [-penalty, penalty]]),
                      lp_objective=np.zeros(2 * k), lp_constraints=lp)
