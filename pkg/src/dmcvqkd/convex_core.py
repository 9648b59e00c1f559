"""Relative-entropy objective and its Frank-Wolfe minimization.

The objective is ``r(rho) = D(G(rho) || Z(G(rho)))`` in bits, evaluated as
``H(Z~(rho)) - H(G~(rho))`` on facially reduced maps. The key-map output is
mixed with a ``1e-12`` share of the maximally mixed state on the full output
space before any logarithm, so the function minimized is
``f(rho) = D(G_e(rho) || Z(G_e(rho)))`` with
``G_e(rho) = (1 - e) G(rho) + e I/D``. Its spectrum on the complement of
each reduced support is the constant ``e/D`` and enters as a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .fock_ops import KEY_DIM, KrausMap, build_G_map
from .sdp_solver import (SdpProblem, SolverError, epsilon_prime, eig_residual_bound,
                         hermitize, repair_certificate, robust_dual_problem,
                         solve_primal_dual, slack_matrix, spread_penalized_problem,
                         verify_dual_certificate)

LN2 = math.log(2.0)
PERTURBATION = 1e-12
RANK_THRESHOLD = 1e-10


class NonPsdInputError(ValueError):
    pass


class DegenerateSupportError(ValueError):
    pass


# --------------------------------------------------------------------------
# facial reduction

def facial_reduction(kmap: KrausMap, probe: np.ndarray,
                     threshold: float = RANK_THRESHOLD) -> tuple[KrausMap, np.ndarray]:
    """Restrict ``kmap`` to the support of ``kmap(probe)``.

    Returns the reduced map ``rho -> U^dag kmap(rho) U`` and the isometry
    ``U`` whose columns span the support.
    """
    out = hermitize(kmap(probe))
    w, v = np.linalg.eigh(out)
    keep = w > threshold * max(w[-1], 0.0)
    if not np.any(keep):
        raise DegenerateSupportError("map output has numerical rank 0")
    iso = v[:, keep]
    ops = tuple(iso.conj().T @ k for k in kmap.kraus_ops)
    return KrausMap(ops, kmap.in_dim, iso.shape[1]), iso


@dataclass(frozen=True, eq=False)
class ObjectiveContext:
    """Reduced key map and the per-key-value blocks of its pinched version."""

    g_reduced: KrausMap
    z_blocks: tuple[KrausMap, ...]
    isometries: tuple[np.ndarray, ...]
    in_dim: int
    out_dim: int

    @property
    def z_reduced(self) -> KrausMap:
        """The pinched map as a single block-diagonal Kraus map."""
        dims = [b.out_dim for b in self.z_blocks]
        total = sum(dims)
        ops, start = [], 0
        for blk, d in zip(self.z_blocks, dims):
            k = np.zeros((total, self.in_dim), dtype=complex)
            k[start:start + d] = blk.kraus_ops[0]
            ops.append(k)
            start += d
        return KrausMap(tuple(ops), self.in_dim, total)


def build_context(cutoff: int) -> ObjectiveContext:
    """Facially reduced maps for the key map at the given cutoff.

    The pinched map is block diagonal in the key value, so each block is
    reduced on its own.
    """
    g = build_G_map(cutoff)
    d = g.in_dim
    probe = np.eye(d) / d
    g_red, iso_g = facial_reduction(g, probe)
    kraus = g.kraus_ops[0]
    blocks, isos = [], [iso_g]
    for z in range(KEY_DIM):
        kz = kraus[z::KEY_DIM]
        blk, iso = facial_reduction(KrausMap((kz,), d, kz.shape[0]), probe)
        blocks.append(blk)
        isos.append(iso)
    return ObjectiveContext(g_red, tuple(blocks), tuple(isos), d, g.out_dim)


def _check_state(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if abs(np.trace(rho).real - 1.0) > 1e-9:
        raise NonPsdInputError(f"trace {np.trace(rho).real:.12f} is not 1")
    if np.linalg.eigvalsh(hermitize(rho))[0] < -1e-9:
        raise NonPsdInputError("input is not positive semidefinite")
    return hermitize(rho)


def _eta_sum(w: np.ndarray) -> float:
    w = w[w > 0]
    return -float(np.dot(w, np.log(w)))


def _mixed(image: np.ndarray, floor: float) -> np.ndarray:
    out = (1 - PERTURBATION) * hermitize(image)
    out[np.diag_indices_from(out)] += floor
    return out


def _complement_entropy(ctx: ObjectiveContext) -> tuple[float, float]:
    """Entropy (nats) of the perturbation mass outside each reduced support."""
    floor = PERTURBATION / ctx.out_dim
    eta = -floor * math.log(floor)
    missing_g = ctx.out_dim - ctx.g_reduced.out_dim
    missing_z = ctx.out_dim - sum(b.out_dim for b in ctx.z_blocks)
    return missing_g * eta, missing_z * eta


def objective_r(rho: np.ndarray, ctx: ObjectiveContext, check: bool = True) -> float:
    """``D(G_e(rho) || Z(G_e(rho)))`` in bits, ``G_e`` the mixed key map."""
    rho = _check_state(rho) if check else rho
    floor = PERTURBATION / ctx.out_dim
    w = np.linalg.eigvalsh(_mixed(ctx.g_reduced(rho), floor))
    if w[0] < 0.5 * floor:
        raise NonPsdInputError(f"reduced image has eigenvalue {w[0]:.2e}")
    h_g = _eta_sum(w)
    h_z = 0.0
    for blk in ctx.z_blocks:
        w = np.linalg.eigvalsh(_mixed(blk(rho), floor))
        if w[0] < 0.5 * floor:
            raise NonPsdInputError(f"reduced image has eigenvalue {w[0]:.2e}")
        h_z += _eta_sum(w)
    c_g, c_z = _complement_entropy(ctx)
    return (h_z + c_z - h_g - c_g) / LN2


def _entropy_and_log(sigma: np.ndarray, floor: float):
    w, v = np.linalg.eigh(sigma)
    if w[0] < 0.5 * floor:
        raise NonPsdInputError(f"reduced image has eigenvalue {w[0]:.2e} below the mixing floor")
    return -float(np.dot(w, np.log(w))), (v * np.log(w)) @ v.conj().T


def objective_and_gradient(rho: np.ndarray, ctx: ObjectiveContext) -> tuple[float, np.ndarray]:
    """Objective value and the matrix ``M`` with ``df = Re Tr[M d rho]``."""
    floor = PERTURBATION / ctx.out_dim
    g = ctx.g_reduced
    h_g, log_g = _entropy_and_log(_mixed(g(rho), floor), floor)
    grad = g.adjoint(log_g + np.eye(g.out_dim))
    h_z = 0.0
    for blk in ctx.z_blocks:
        h, log_z = _entropy_and_log(_mixed(blk(rho), floor), floor)
        h_z += h
        grad -= blk.adjoint(log_z + np.eye(blk.out_dim))
    grad = hermitize(grad) * ((1 - PERTURBATION) / LN2)
    c_g, c_z = _complement_entropy(ctx)
    return (h_z + c_z - h_g - c_g) / LN2, grad


def gradient_r(rho: np.ndarray, ctx: ObjectiveContext) -> np.ndarray:
    """Matrix gradient: ``d/dt f(rho + t D) = Re Tr[grad D]`` at ``t = 0``."""
    return objective_and_gradient(_check_state(rho), ctx)[1]


def perturbation_penalty(ctx: ObjectiveContext, eps: float = PERTURBATION) -> float:
    """Bound on ``|r(rho) - f(rho)|`` in bits from entropy continuity.

    Mixing moves both the key-map output and its pinching by at most ``eps``
    in trace distance.
    """
    h = -eps * math.log2(eps) - (1 - eps) * math.log2(1 - eps)
    return 2 * (eps * math.log2(ctx.out_dim - 1) + h)


def unreduced_objective(rho: np.ndarray, cutoff: int, eps: float = PERTURBATION) -> float:
    """Same objective by full-space eigendecomposition, without reduction (oracle)."""
    g = build_G_map(cutoff)
    out = hermitize(g(np.asarray(rho, dtype=complex)))
    dim = out.shape[0]
    out = (1 - eps) * out + (eps / dim) * np.eye(dim)
    key = np.arange(dim) % KEY_DIM
    pinched = np.where(key[:, None] == key[None, :], out, 0.0)

    def ent(m):
        w = np.linalg.eigvalsh(m)
        w = w[w > 0]
        return -float(np.dot(w, np.log2(w)))
    return ent(pinched) - ent(out)


# --------------------------------------------------------------------------
# Frank-Wolfe

@dataclass
class FwTrace:
    iterates: list = field(default_factory=list)
    converged: bool = False
    final_gap: float = math.inf


@dataclass(frozen=True)
class FwOptions:
    gap: float = 0.02
    max_iter: int = 300
    cadence: int = 15
    sdp_tol: float = 1e-9
    line_tol: float = 1e-6
    spread_penalty: float = 0.0
    robust_dual: bool = True
    verbose: bool = False


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Constraint operators, their right-hand side and the PE block size."""

    ops: np.ndarray
    rhs: np.ndarray
    n_pe: int

    @classmethod
    def build(cls, ops: Sequence, rhs: Sequence[float], n_pe: int) -> "ConstraintSet":
        arr = np.array([np.asarray(getattr(a, "data", a), dtype=complex) for a in ops])
        return cls(arr, np.asarray(rhs, dtype=float), int(n_pe))

    def problem(self, objective: np.ndarray) -> SdpProblem:
        return SdpProblem(objective, self.ops, self.rhs)


def fw_direction(grad: np.ndarray, cons: ConstraintSet, tol: float = 1e-9):
    sol = solve_primal_dual(cons.problem(grad), tol=tol)
    if sol.status == "infeasible":
        raise SolverError("direction subproblem infeasible")
    return sol


def fw_step(rho: np.ndarray, ctx: ObjectiveContext, cons: ConstraintSet,
            tol: float = 1e-9) -> np.ndarray:
    """Direction ``sigma* - rho`` towards the linearized minimizer."""
    _, grad = objective_and_gradient(rho, ctx)
    sol = fw_direction(grad, cons, tol)
    return hermitize(sol.primal) - rho


def line_search(rho: np.ndarray, delta: np.ndarray, ctx: ObjectiveContext,
                tol: float = 1e-6, grid_points: int = 30) -> float:
    """Minimize ``f(rho + k delta)`` over ``k`` in ``[0, 1]``.

    A log-spaced grid on ``[1e-10, 1]`` brackets the minimizer, which Brent's
    method (golden section with parabolic steps) then refines to
    ``min(tol, 1e-3 k)``. Near the PSD boundary the minimizer is often far
    below ``tol``, which is why the bracket is logarithmic.
    """
    if not np.any(delta):
        return 0.0

    def phi(k):
        return objective_r(rho + k * delta, ctx, check=False)

    ks = np.concatenate([[0.0], np.logspace(-10, 0, grid_points)])
    vals = np.array([phi(k) for k in ks])
    i = int(np.argmin(vals))
    if i == 0:
        return 0.0
    lo, hi = ks[i - 1], ks[min(i + 1, len(ks) - 1)]
    if hi > lo:
        res = minimize_scalar(phi, bounds=(lo, hi), method="bounded",
                              options={"xatol": min(tol, 1e-3 * ks[i])})
        if res.fun < vals[i]:
            return float(res.x)
    return float(ks[i])


@dataclass(frozen=True, eq=False)
class LowerBound:
    """Certified lower bound with its dual certificate data."""

    value: float
    g0: float
    g0_raw: float
    nu: np.ndarray
    eps_prime: float
    lambda_min: float
    repaired: bool
    primal_value: float
    gradient: np.ndarray
    rho: np.ndarray


def taylor_lower_bound(rho_tilde: np.ndarray, ctx: ObjectiveContext, cons: ConstraintSet,
                       eps_prime: float | None = None, tol: float = 1e-9, solution=None,
                       spread_penalty: float = 0.0, robust_dual: bool = False) -> LowerBound:
    """Lower bound on ``min r`` over the feasible set from a dual certificate.

    ``g0`` is the constant ``f(rho) - Tr[rho M] - eps' sum|nu|`` less the
    perturbation penalty, so that ``g0 + q.nu`` lower-bounds ``r`` on every
    state with statistics ``q``.

    Parameters
    ----------
    solution
        A solved direction subproblem at ``rho_tilde`` whose dual is reused.
        Ignored when ``spread_penalty`` or ``robust_dual`` asks for a
        different dual problem.
    spread_penalty
        Weight on the range of ``nu`` in the dual objective; small values
        pick a well-conditioned point of the optimal dual face.
    robust_dual
        Solve the dual with the explicit ``-eps' sum|nu|`` term instead of
        deducting it afterwards.
    """
    f_val, grad = objective_and_gradient(rho_tilde, ctx)
    base = cons.problem(grad)
    k = cons.ops.shape[0]
    if robust_dual:
        if eps_prime is None:
            eps_prime = epsilon_prime(base, solution or fw_direction(grad, cons, tol))
        problem = robust_dual_problem(base, eps_prime)
        sol = solve_primal_dual(problem, tol=tol, max_iter=200)
    elif spread_penalty > 0:
        problem = spread_penalized_problem(base, spread_penalty)
        sol = solve_primal_dual(problem, tol=tol, max_iter=200)
    else:
        problem = base
        sol = solution if solution is not None else fw_direction(grad, cons, tol)
    if sol.status == "infeasible":
        raise SolverError("dual subproblem infeasible")
    eps = epsilon_prime(problem, sol) if eps_prime is None else float(eps_prime)
    nu = sol.dual[:k].copy()
    lam, ok = verify_dual_certificate(grad, cons.ops, nu)
    repaired = False
    if not ok:
        margin = 10 * eig_residual_bound(slack_matrix(grad, cons.ops, nu))
        nu = repair_certificate(nu, lam, cons.n_pe, margin=margin)
        lam, ok = verify_dual_certificate(grad, cons.ops, nu)
        repaired = True
        if not ok:
            raise SolverError(f"certificate repair failed (lambda_min {lam:.3e})")
    g0_raw = f_val - float(np.real(np.vdot(grad, rho_tilde)))
    g0 = g0_raw - eps * float(np.abs(nu).sum()) - perturbation_penalty(ctx)
    value = g0 + float(cons.rhs @ nu)
    return LowerBound(value, g0, g0_raw, nu, eps, lam, repaired, f_val, grad, rho_tilde)


def frank_wolfe(ctx: ObjectiveContext, cons: ConstraintSet, rho0: np.ndarray,
                opts: FwOptions = FwOptions()):
    """Minimize ``f`` over states matching the constraints.

    Returns ``(rho, upper_bound, trace, lower_bound)``; the lower bound is
    the best certified one found at the check cadence.
    """
    rho = hermitize(np.asarray(rho0, dtype=complex))
    trace = FwTrace()
    best_lb = None
    ub = objective_r(rho, ctx, check=False)
    for it in range(1, opts.max_iter + 1):
        f_val, grad = objective_and_gradient(rho, ctx)
        sol = fw_direction(grad, cons, opts.sdp_tol)
        lb_now = None
        if it == 1 or it % opts.cadence == 0 or it == opts.max_iter:
            lb = taylor_lower_bound(rho, ctx, cons, tol=opts.sdp_tol, solution=sol)
            if best_lb is None or lb.value > best_lb.value:
                best_lb = lb
            lb_now = lb.value
            gap = (ub - best_lb.value) / max(abs(ub), 1e-300)
            trace.final_gap = gap
            if gap < opts.gap:
                trace.iterates.append((it, ub, lb_now, 0.0))
                trace.converged = True
                break
        delta = hermitize(sol.primal) - rho
        kappa = line_search(rho, delta, ctx, opts.line_tol)
        if kappa > 0:
            rho = hermitize(rho + kappa * delta)
            ub = min(ub, objective_r(rho, ctx, check=False))
        trace.iterates.append((it, ub, lb_now, kappa))
        if opts.verbose:
            print(f"fw {it:3d} ub={ub:.8f} lb={lb_now} kappa={kappa:.3e}")
    return rho, ub, trace, best_lb
