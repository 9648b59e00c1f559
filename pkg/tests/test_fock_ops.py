import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import alice_marginal_closed_form, region_entry_dblquad, wedge_operator_quad

from dmcvqkd.fock_ops import (FockOperator, KrausMap, ModulationScheme, OperatorError,
                              alice_amplitudes, alice_marginal, angular_integrals,
                              build_G_map, coherent_fock_vector, coherent_overlap,
                              constraint_operators, ic_povm, key_region_operator,
                              operator_hash, pe_region_bounds, pe_region_operator,
                              pinched_G_map, pinching_Z, psd_sqrt, radial_integrals,
                              region_operator, wedge_bounds)


class TestModulationScheme:
    def test_derived_sizes(self):
        s = ModulationScheme(0.9, 0.9, 0.9, 10)
        assert (s.rings, s.m, s.dim) == (1, 8, 40)
        assert ModulationScheme(0.9, 1.8, 0.6, 6).m == 16

    def test_non_integer_ratio_names_delta_mod(self):
        with pytest.raises(ValueError, match="delta_mod"):
            ModulationScheme(0.9, 0.9, 0.4)

    @pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"alpha": 0.9, "cutoff": 1},
                                    {"alpha": 0.9, "delta_amp": -1.0}])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ValueError):
            ModulationScheme(**kw)

    def test_with_alpha_keeps_geometry(self):
        s = ModulationScheme(0.9, 1.8, 0.9, 7).with_alpha(1.2)
        assert (s.alpha, s.delta_amp, s.delta_mod, s.cutoff) == (1.2, 1.8, 0.9, 7)


class TestContainers:
    def test_fock_operator_rejects_non_hermitian(self):
        with pytest.raises(OperatorError):
            FockOperator((2,), np.array([[0, 1], [0, 0]]))

    def test_fock_operator_rejects_shape_mismatch(self):
        with pytest.raises(OperatorError):
            FockOperator((3,), np.eye(2))

    def test_fock_operator_is_read_only(self):
        op = FockOperator((2,), np.eye(2))
        with pytest.raises(ValueError):
            op.data[0, 0] = 2

    def test_kraus_adjoint_duality(self, rng):
        ops = tuple(rng.normal(size=(5, 3)) + 1j * rng.normal(size=(5, 3)) for _ in range(2))
        kmap = KrausMap(ops, 3, 5)
        x = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        y = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
        assert np.isclose(np.vdot(y, kmap(x)), np.vdot(kmap.adjoint(y), x))


class TestCoherentStates:
    def test_vacuum(self):
        assert np.allclose(coherent_fock_vector(0, 5), [1, 0, 0, 0, 0])

    @given(st.floats(0.0, 2.0), st.floats(-math.pi, math.pi))
    @settings(max_examples=30, deadline=None)
    def test_components_match_poisson_form(self, r, phase):
        a = r * np.exp(1j * phase)
        vec = coherent_fock_vector(a, 30)
        ref = [np.exp(-r * r / 2) * a ** k / math.sqrt(math.factorial(k)) for k in range(30)]
        assert np.allclose(vec, ref, atol=1e-14)
        assert abs(np.linalg.norm(vec) - 1) < 1e-12

    def test_overlap_matches_truncated_vectors(self):
        a, b = 0.7 + 0.2j, -0.3 + 0.5j
        va, vb = coherent_fock_vector(a, 40), coherent_fock_vector(b, 40)
        assert np.isclose(coherent_overlap(a, b), np.vdot(vb, va))

    def test_alice_order(self):
        assert np.allclose(alice_amplitudes(0.5), [0.5, -0.5, 0.5j, -0.5j])

    @pytest.mark.parametrize("alpha", [0.3, 0.9, 1.4])
    def test_alice_marginal_against_closed_form(self, alpha):
        rho = alice_marginal(alpha).data
        assert np.allclose(rho, alice_marginal_closed_form(alpha), atol=1e-15)
        assert np.isclose(np.trace(rho).real, 1.0)
        assert np.linalg.eigvalsh(rho)[0] > -1e-15


class TestRegionOperators:
    @pytest.mark.parametrize("nc", [2, 3, 6, 10, 12])
    def test_key_wedges_resolve_identity(self, nc):
        total = sum(key_region_operator(z, nc).data for z in range(4))
        assert np.abs(total - np.eye(nc)).max() < 1e-9

    @pytest.mark.parametrize("amp,mod", [(0.9, 0.9), (1.8, 0.9), (1.5, 0.5)])
    def test_pe_modules_resolve_identity(self, amp, mod):
        s = ModulationScheme(0.9, amp, mod, 10)
        total = sum(pe_region_operator(z, s).data for z in range(s.m))
        assert np.abs(total - np.eye(10)).max() < 1e-9

    def test_wedges_partition_circle(self):
        bounds = [wedge_bounds(j) for j in range(4)]
        for (_, hi), (lo, _) in zip(bounds, bounds[1:]):
            assert hi == pytest.approx(lo)
        assert bounds[-1][1] - bounds[0][0] == pytest.approx(2 * np.pi)

    def test_pe_bounds_tail_is_unbounded(self):
        s = ModulationScheme(0.9, 1.8, 0.9, 6)
        assert pe_region_bounds(1, s)[:2] == (0.0, 0.9)
        assert pe_region_bounds(5, s)[:2] == (0.9, 1.8)
        assert pe_region_bounds(9, s)[:2] == (1.8, np.inf)
        with pytest.raises(ValueError):
            pe_region_bounds(12, s)

    @pytest.mark.parametrize("z", range(4))
    def test_key_wedge_against_quadrature(self, z):
        assert np.abs(key_region_operator(z, 7).data - wedge_operator_quad(z, 7)).max() < 1e-12

    @given(st.integers(0, 9), st.integers(0, 9), st.integers(0, 7))
    @settings(max_examples=15, deadline=None)
    def test_pe_entry_against_2d_quadrature(self, m, n, z):
        s = ModulationScheme(0.9, cutoff=10)
        ref = region_entry_dblquad(m, n, *pe_region_bounds(z, s))
        assert abs(pe_region_operator(z, s).data[m, n] - ref) < 1e-10

    def test_radial_integral_closed_form(self):
        # int_0^inf g^(2k+1) e^(-g^2) dg = k!/2, divided by k!
        assert np.allclose(np.diag(radial_integrals(6, 0.0, np.inf)), 0.5)

    def test_angular_integral_full_circle_is_diagonal(self):
        ang = angular_integrals(5, 0.0, 2 * np.pi)
        assert np.allclose(ang, 2 * np.pi * np.eye(5), atol=1e-12)

    def test_regions_psd(self):
        s = ModulationScheme(0.9, cutoff=10)
        for z in range(s.m):
            assert pe_region_operator(z, s).eigvalsh()[0] > -1e-12

    def test_full_plane_region_is_identity(self):
        op = region_operator(6, 0.0, np.inf, 0.0, 2 * np.pi)
        assert np.allclose(op.data, np.eye(6), atol=1e-12)


class TestMaps:
    def test_psd_sqrt_squares_back(self, rng):
        a = rng.normal(size=(4, 4))
        p = a @ a.T
        r = psd_sqrt(p)
        assert np.allclose(r @ r, p)

    def test_psd_sqrt_rejects_negative(self):
        with pytest.raises(OperatorError):
            psd_sqrt(np.diag([1.0, -1e-3]))

    @pytest.mark.parametrize("nc", [2, 6, 12])
    def test_key_map_isometric(self, nc):
        assert build_G_map(nc).trace_defect() < 1e-8
        assert pinched_G_map(nc).trace_defect() < 1e-8

    def test_pinched_map_equals_pinching_after_map(self, rng):
        nc = 5
        g, pg = build_G_map(nc), pinched_G_map(nc)
        a = rng.normal(size=(4 * nc, 4 * nc)) + 1j * rng.normal(size=(4 * nc, 4 * nc))
        rho = a @ a.conj().T
        rho /= np.trace(rho).real
        lhs = pinching_Z(FockOperator(g.out_dims, g(rho))).data
        assert np.abs(lhs - pg(rho)).max() < 1e-13

    def test_pinching_is_idempotent_projection(self, rng):
        a = rng.normal(size=(12, 12))
        op = FockOperator((3, 4), a + a.T)
        once = pinching_Z(op)
        assert np.allclose(pinching_Z(once).data, once.data)
        assert np.isclose(np.trace(once.data), np.trace(op.data))

    def test_pinching_needs_key_register(self):
        with pytest.raises(OperatorError):
            pinching_Z(np.eye(6), dims=(2, 3))


class TestConstraints:
    def test_povm_complete_and_informationally_complete(self):
        povm = [g.data for g in ic_povm()]
        assert len(povm) == 16
        assert np.abs(sum(povm) - np.eye(4)).max() < 1e-12
        assert np.linalg.matrix_rank(np.array([p.ravel() for p in povm]), tol=1e-10) == 16
        assert min(np.linalg.eigvalsh(p)[0] for p in povm) > -1e-14

    def test_constraint_layout(self):
        s = ModulationScheme(0.9, cutoff=4)
        ops = constraint_operators(s)
        assert len(ops) == 4 * s.m + 16
        assert ops[0][1] == "pe:0,0" and ops[4 * s.m][1] == "tom:0"
        pe_sum = sum(op.data for op, label in ops if label.startswith("pe"))
        assert np.allclose(pe_sum, np.eye(s.dim), atol=1e-12)

    def test_hash_is_deterministic_and_sensitive(self):
        s = ModulationScheme(0.9, cutoff=4)
        ops = [op for op, _ in constraint_operators(s)]
        assert operator_hash(ops) == operator_hash([op.data.copy() for op in ops])
        other = [op for op, _ in constraint_operators(ModulationScheme(0.9, cutoff=5))]
        assert operator_hash(ops) != operator_hash(other)

    def test_constraints_independent_of_alpha(self):
        a = [op for op, _ in constraint_operators(ModulationScheme(0.5, cutoff=4))]
        b = [op for op, _ in constraint_operators(ModulationScheme(1.3, cutoff=4))]
        assert operator_hash(a) == operator_hash(b)
