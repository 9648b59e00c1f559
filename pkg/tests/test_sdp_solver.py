import numpy as np
import pytest

from oracles import brute_force_dual, brute_force_primal, random_hermitian, random_sdp

from dmcvqkd.sdp_solver import (InfeasibleError, SdpProblem, eig_residual_bound,
                                epsilon_prime, feasibility_point, independent_rows,
                                repair_certificate, robust_dual_problem, slack_matrix,
                                solve_primal_dual, spread_penalized_problem,
                                verify_dual_certificate)


def _dual_feasible(problem, y, tol=1e-8):
    return np.linalg.eigvalsh(slack_matrix(problem.objective, problem.constraints, y))[0] > -tol


class TestProblem:
    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError, match="non-Hermitian"):
            SdpProblem(np.array([[0, 1], [0, 0]]), [np.eye(2)], [1.0])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            SdpProblem(np.eye(2), [np.eye(2)], [1.0, 2.0])

    def test_apply_adjoint_duality(self, rng):
        ops = [random_hermitian(rng, 3) for _ in range(4)]
        p = SdpProblem(np.eye(3), ops, np.zeros(4))
        x = random_hermitian(rng, 3)
        y = rng.normal(size=4)
        assert np.isclose(p.apply(x) @ y, np.real(np.vdot(p.adjoint(y), x)))


class TestSolver:
    @pytest.mark.parametrize("n", [1, 2, 5, 9])
    def test_trace_constrained_minimum_is_smallest_eigenvalue(self, rng, n):
        c = random_hermitian(rng, n)
        sol = solve_primal_dual(SdpProblem(c, [np.eye(n)], [1.0]))
        lam = np.linalg.eigvalsh(c)[0]
        assert sol.optimal
        assert sol.primal_value == pytest.approx(lam, abs=1e-7)
        assert sol.dual_value == pytest.approx(lam, abs=1e-7)

    def test_complex_phase_matters(self):
        # [[0, i], [-i, 0]] has eigenvalues +-1; a real-only solver would miss -1
        c = np.array([[0, 1j], [-1j, 0]])
        sol = solve_primal_dual(SdpProblem(c, [np.eye(2)], [1.0]))
        assert sol.primal_value == pytest.approx(-1.0, abs=1e-7)
        assert abs(sol.primal[0, 1].imag) > 0.4

    def test_lp_block(self):
        # minimize -x subject to Tr X + x = 1: optimum X = 0, x = 1
        p = SdpProblem(np.zeros((2, 2)), [np.eye(2)], [1.0],
                       lp_objective=[-1.0], lp_constraints=[[1.0]])
        sol = solve_primal_dual(p)
        assert sol.primal_value == pytest.approx(-1.0, abs=1e-7)
        assert sol.primal_lp[0] == pytest.approx(1.0, abs=1e-6)

    def test_matches_oracles(self, rng):
        for _ in range(4):
            c, ops, rhs = random_sdp(rng, 3, 3)
            sol = solve_primal_dual(SdpProblem(c, ops, rhs))
            assert sol.primal_value == pytest.approx(
                brute_force_primal(c, ops, rhs, rng, starts=3), abs=1e-4)
            assert sol.dual_value == pytest.approx(
                brute_force_dual(c, ops, rhs, rng, starts=3), abs=1e-4)

    def test_weak_duality_and_feasibility(self, rng):
        c, ops, rhs = random_sdp(rng, 6, 5)
        p = SdpProblem(c, ops, rhs)
        sol = solve_primal_dual(p)
        assert sol.dual_value <= sol.primal_value + 1e-9 * p.scale()
        assert sol.max_residual < 1e-8
        assert np.linalg.eigvalsh(sol.primal)[0] > -1e-9
        assert _dual_feasible(p, sol.dual)

    def test_dependent_rows_dropped_with_zero_dual(self, rng):
        c = random_hermitian(rng, 3)
        a = random_hermitian(rng, 3)
        p = SdpProblem(c, [np.eye(3), a, np.eye(3) + 2 * a], [1.0, 0.1, 1.2])
        keep, drop = independent_rows(p)
        assert len(keep) == 2 and len(drop) == 1
        sol = solve_primal_dual(p)
        assert sol.optimal and sol.dual[drop[0]] == 0.0

    def test_inconsistent_dependent_rows(self):
        p = SdpProblem(np.eye(2), [np.eye(2), 2 * np.eye(2)], [1.0, 3.0])
        with pytest.raises(InfeasibleError):
            independent_rows(p)

    def test_negative_trace_is_infeasible(self):
        p = SdpProblem(np.eye(2), [np.eye(2)], [-1.0])
        with pytest.raises(InfeasibleError):
            solve_primal_dual(p)


class TestFeasibility:
    def test_strictly_positive_point(self):
        ops = [np.diag([1.0, 0.0, 0.0])]
        x = feasibility_point(ops, [0.3])
        assert np.trace(x).real == pytest.approx(1.0)
        assert x[0, 0].real == pytest.approx(0.3, abs=1e-8)
        # maximal lambda_min splits the remaining 0.7 evenly
        assert np.linalg.eigvalsh(x)[0] == pytest.approx(0.3, abs=1e-6)

    @pytest.mark.parametrize("value", [1.5, 1.0])
    def test_no_strictly_positive_point(self, value):
        with pytest.raises(InfeasibleError):
            feasibility_point([np.diag([1.0, 0.0])], [value])


class TestCertificates:
    def test_verify_accepts_and_rejects(self):
        ops = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
        grad = np.diag([2.0, 3.0])
        lam, ok = verify_dual_certificate(grad, ops, np.array([1.0, 1.0]))
        assert ok and lam == pytest.approx(1.0)
        lam, ok = verify_dual_certificate(grad, ops, np.array([2.0, 1.0]))
        assert not ok and abs(lam) < 1e-14

    def test_error_bound_scales_with_norm(self):
        assert eig_residual_bound(10 * np.eye(4)) == pytest.approx(10 * eig_residual_bound(np.eye(4)))

    def test_repair_restores_positivity(self, rng):
        n_pe = 3
        basis = [np.diag(np.eye(3)[i]) for i in range(3)]
        ops = basis + [random_hermitian(rng, 3)]
        grad = random_hermitian(rng, 3)
        nu = rng.normal(size=4) + 2.0
        lam, ok = verify_dual_certificate(grad, ops, nu)
        assert not ok
        fixed = repair_certificate(nu, lam, n_pe, margin=1e-12)
        assert verify_dual_certificate(grad, ops, fixed)[1]
        assert np.array_equal(fixed[n_pe:], nu[n_pe:])

    def test_epsilon_prime_floor_and_residual(self, rng):
        c, ops, rhs = random_sdp(rng, 4, 3)
        p = SdpProblem(c, ops, rhs)
        sol = solve_primal_dual(p)
        assert epsilon_prime(p, sol) >= 1e-12
        sol.primal = sol.primal + 1e-5 * np.eye(4)
        assert epsilon_prime(p, sol) > 1e-6

    def test_robust_dual_value(self, rng):
        c, ops, rhs = random_sdp(rng, 5, 4)
        p = SdpProblem(c, ops, rhs)
        base = solve_primal_dual(p)
        eps = 1e-3
        rob = solve_primal_dual(robust_dual_problem(p, eps))
        y = rob.dual[:p.n_constraints]
        assert _dual_feasible(p, y)
        # the robust objective equals b.y - eps sum |y| at its own optimum
        assert rob.dual_value == pytest.approx(rhs @ y - eps * np.abs(y).sum(), abs=1e-7)
        assert rob.dual_value <= base.dual_value + 1e-8
        assert rob.dual_value >= base.dual_value - eps * np.abs(base.dual).sum() - 1e-7

    def test_spread_penalty_narrows_dual(self, rng):
        c, ops, rhs = random_sdp(rng, 5, 4)
        p = SdpProblem(c, ops, rhs)
        base = solve_primal_dual(p)
        pen = solve_primal_dual(spread_penalized_problem(p, 1e-2))
        y = pen.dual[:p.n_constraints]
        assert _dual_feasible(p, y)
        spread = lambda v: v.max() - v.min()
        assert rhs @ y - 1e-2 * spread(y) >= rhs @ base.dual - 1e-2 * spread(base.dual) - 1e-7
