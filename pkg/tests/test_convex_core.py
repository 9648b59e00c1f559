import math

import numpy as np
import pytest

from oracles import key_map_relative_entropy, random_density

from dmcvqkd.convex_core import (PERTURBATION, FwOptions, NonPsdInputError, build_context,
                                 frank_wolfe, gradient_r, line_search, objective_and_gradient,
                                 objective_r, perturbation_penalty, taylor_lower_bound,
                                 unreduced_objective)
from dmcvqkd.fock_ops import ModulationScheme, coherent_fock_vector, key_region_operator
from dmcvqkd.honest_model import HonestChannel, honest_statistics
from dmcvqkd.pipeline import build_constraints, solve_instance
from dmcvqkd.sdp_solver import feasibility_point, hermitize, solve_primal_dual
from dmcvqkd.tradeoff import crossover_g

NC = 6
DIM = 4 * NC


@pytest.fixture(scope="module")
def ctx():
    return build_context(NC)


@pytest.fixture(scope="module")
def feasible():
    scheme = ModulationScheme(0.9, cutoff=NC)
    cons = build_constraints(scheme, honest_statistics(HonestChannel(10.0, 0.2, 0.02), scheme))
    return cons, feasibility_point(cons.ops, cons.rhs)


class TestObjective:
    @pytest.mark.parametrize("rank", [1, 3, DIM])
    def test_matches_independent_oracle(self, ctx, rng, rank):
        wedges = [key_region_operator(z, NC).data for z in range(4)]
        for _ in range(3):
            rho = random_density(rng, DIM, rank)
            ref = key_map_relative_entropy(rho, NC, PERTURBATION, wedges)
            assert objective_r(rho, ctx) == pytest.approx(ref, abs=1e-9)

    def test_reduced_equals_unreduced(self, ctx, rng):
        rho = random_density(rng, DIM, 2)
        assert objective_r(rho, ctx) == pytest.approx(unreduced_objective(rho, NC), abs=1e-9)

    def test_vacuum_on_bob_gives_two_bits(self, ctx):
        # sqrt(R^z)|0> = |0>/2 for every z, so the key register is in |+> and pinching adds 2 bits
        bob = np.zeros(NC)
        bob[0] = 1
        vec = np.kron(np.eye(4)[1], bob)
        assert objective_r(np.outer(vec, vec), ctx) == pytest.approx(2.0, abs=1e-8)

    def test_nonnegative_and_bounded(self, ctx, rng):
        for _ in range(5):
            val = objective_r(random_density(rng, DIM), ctx)
            assert -1e-9 <= val <= 2 + 1e-9

    def test_rejects_bad_states(self, ctx):
        with pytest.raises(NonPsdInputError):
            objective_r(2 * np.eye(DIM) / DIM, ctx)
        bad = np.eye(DIM) / DIM
        bad[0, 0] -= 0.2
        bad[1, 1] += 0.2
        with pytest.raises(NonPsdInputError):
            gradient_r(bad, ctx)

    def test_penalty_formula(self, ctx):
        eps = PERTURBATION
        h = -eps * math.log2(eps) - (1 - eps) * math.log2(1 - eps)
        assert perturbation_penalty(ctx) == pytest.approx(2 * (eps * math.log2(16 * NC - 1) + h))
        assert perturbation_penalty(ctx) < 1e-9


class TestGradient:
    def test_directional_derivative(self, ctx, rng):
        for _ in range(5):
            rho = 0.5 * random_density(rng, DIM) + 0.5 * np.eye(DIM) / DIM
            d = random_density(rng, DIM) - rho
            h = 1e-5
            fd = (objective_r(rho + h * d, ctx) - objective_r(rho - h * d, ctx)) / (2 * h)
            an = float(np.real(np.vdot(gradient_r(rho, ctx), d)))
            assert fd == pytest.approx(an, rel=1e-5, abs=1e-8)

    def test_gradient_hermitian_and_value_consistent(self, ctx, rng):
        rho = random_density(rng, DIM, 3)
        val, grad = objective_and_gradient(rho, ctx)
        assert np.allclose(grad, grad.conj().T)
        assert val == pytest.approx(objective_r(rho, ctx))


class TestLineSearch:
    def test_zero_direction(self, ctx):
        rho = np.eye(DIM) / DIM
        assert line_search(rho, np.zeros_like(rho), ctx) == 0.0

    def test_descends_and_beats_grid(self, ctx, rng):
        rho = random_density(rng, DIM)
        target = np.outer(*(2 * [np.kron(np.ones(4) / 2, coherent_fock_vector(0.3, NC))]))
        target = hermitize(target) / np.trace(target).real
        delta = target - rho
        k = line_search(rho, delta, ctx)
        f = lambda t: objective_r(rho + t * delta, ctx, check=False)
        assert 0.0 <= k <= 1.0
        assert f(k) <= f(0.0) + 1e-12
        assert f(k) <= min(f(t) for t in np.linspace(0, 1, 41)) + 1e-6


class TestBounds:
    def test_taylor_bound_below_feasible_values(self, ctx, feasible, rng):
        cons, interior = feasible
        lb = taylor_lower_bound(interior, ctx, cons)
        assert lb.lambda_min >= 0
        for _ in range(5):
            c = random_density(rng, DIM) - np.eye(DIM) / DIM
            vertex = hermitize(solve_primal_dual(cons.problem(c)).primal)
            t = rng.uniform()
            rho = (1 - t) * interior + t * vertex
            assert lb.value <= objective_r(rho, ctx, check=False) + 1e-9

    def test_bound_is_affine_in_statistics(self, ctx, feasible):
        cons, interior = feasible
        lb = taylor_lower_bound(interior, ctx, cons)
        assert lb.value == pytest.approx(lb.g0 + cons.rhs @ lb.nu)
        assert lb.g0 <= lb.g0_raw

    def test_robust_dual_valid(self, ctx, feasible):
        cons, interior = feasible
        plain = taylor_lower_bound(interior, ctx, cons)
        robust = taylor_lower_bound(interior, ctx, cons, robust_dual=True)
        assert robust.lambda_min >= 0
        assert robust.value <= objective_r(interior, ctx) + 1e-9
        assert robust.value == pytest.approx(plain.value, abs=1e-6)

    def test_short_frank_wolfe(self, ctx, feasible):
        cons, interior = feasible
        rho, ub, trace, lb = frank_wolfe(ctx, cons, interior, FwOptions(gap=1e-3, max_iter=30,
                                                                        cadence=10))
        ubs = [row[1] for row in trace.iterates]
        assert all(a >= b for a, b in zip(ubs, ubs[1:]))
        assert lb.value <= ub
        assert ub == pytest.approx(objective_r(rho, ctx, check=False))
        assert np.abs(cons.ops.reshape(len(cons.rhs), -1) @ rho.T.ravel() - cons.rhs).max() < 1e-7


def test_solve_instance_small():
    res = solve_instance(ModulationScheme(0.9, cutoff=NC), HonestChannel(10.0, 0.2, 0.02),
                         FwOptions(gap=1e-2, max_iter=40))
    cert = res.certificate
    assert cert.meta["certified"] and cert.meta["lambda_min"] >= 0
    bound = cert.bound_at(res.stats.pe, res.stats.tom)
    assert bound == pytest.approx(cert.meta["lower_bound"], abs=1e-9)


def test_certificate_bounds_arbitrary_states(rng):
    """g0 + nu . q(sigma) <= r(sigma) for states whose statistics q differ from the honest ones."""
    scheme = ModulationScheme(0.9, cutoff=NC)
    res = solve_instance(scheme, HonestChannel(10.0, 0.2, 0.02), FwOptions(gap=1e-2, max_iter=40))
    cert, ctx = res.certificate, build_context(NC)
    cons = build_constraints(scheme, res.stats)
    for rank in (1, 2, DIM, DIM):
        sigma = random_density(rng, DIM, rank)
        q = np.real(np.einsum("kab,ba->k", cons.ops, sigma))
        n_pe = cons.n_pe
        bound = cert.bound_at(q[:n_pe].reshape(cert.nu_pe.shape), q[n_pe:])
        assert bound <= objective_r(sigma, ctx) + 1e-9
        # same statement through the crossover function at p_key = 0.5
        p_pe_cond = 0.6
        g = crossover_g(cert, p_pe_cond * q[:n_pe].reshape(cert.nu_pe.shape),
                        (1 - p_pe_cond) * q[n_pe:], 0.5, p_pe_cond)
        assert g <= 0.5 * objective_r(sigma, ctx) + 1e-8
