"""Affine min-tradeoff functions built from a dual certificate.

A certificate ``(g0, nu_pe, nu_tom)`` asserts that every state whose test
statistics are ``q = (q_pe, q_tom)`` has objective at least
``g0 + nu_pe . q_pe + nu_tom . q_tom``. The crossover function rescales this
to conditional test-round distributions, and the min-tradeoff function
spreads it over the full round alphabet so that it is constant on key rounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .honest_model import Distribution, HonestStatistics


@dataclass(frozen=True, eq=False)
class DualCertificate:
    """Dual data proving an affine lower bound on the key-map objective.

    ``g0`` already carries the robustness deductions. ``rho`` is the
    expansion point, kept so the slack can be recomputed independently.
    """

    nu_pe: np.ndarray
    nu_tom: np.ndarray
    g0: float
    eps_prime: float
    primal_ub: float
    meta: dict[str, Any] = field(default_factory=dict)
    rho: np.ndarray | None = None

    @property
    def nu(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.nu_pe), np.ravel(self.nu_tom)])

    def bound_at(self, pe: np.ndarray, tom: np.ndarray) -> float:
        """``g0 + nu . q`` for unconditioned statistics ``q``."""
        return float(self.g0 + np.sum(self.nu_pe * pe) + np.dot(self.nu_tom, tom))


@dataclass(frozen=True, eq=False)
class MinTradeoff:
    h_pe: np.ndarray
    h_tom: np.ndarray
    const: float
    max_g: float
    min_g: float
    p_key: float
    p_pe_cond: float

    @property
    def spread(self) -> float:
        return self.max_g - self.min_g

    def evaluate(self, dist: Distribution) -> float:
        """``f(p)``; key rounds carry coefficient zero."""
        return float(self.const + np.sum(self.h_pe * dist.pe) + np.dot(self.h_tom, dist.tom))


def _check_cond(p_pe_cond: float) -> None:
    if not 0.0 < p_pe_cond < 1.0:
        raise ValueError(f"p_pe_cond must lie in (0, 1), got {p_pe_cond}")


def _scaled_nu(cert: DualCertificate, p_pe_cond: float) -> np.ndarray:
    return np.concatenate([np.ravel(cert.nu_pe) / p_pe_cond,
                           np.ravel(cert.nu_tom) / (1.0 - p_pe_cond)])


def crossover_g(cert: DualCertificate, p_tilde_pe: np.ndarray, p_tilde_tom: np.ndarray,
                p_key: float, p_pe_cond: float) -> float:
    """Crossover function at a test-round distribution.

    ``p_tilde_pe`` (shape of ``nu_pe``) and ``p_tilde_tom`` together form a
    distribution over test symbols.
    """
    _check_cond(p_pe_cond)
    val = (cert.g0 + np.sum(cert.nu_pe * p_tilde_pe) / p_pe_cond
           + np.dot(cert.nu_tom, p_tilde_tom) / (1.0 - p_pe_cond))
    return float(p_key * val)


def g_extremes(cert: DualCertificate, p_pe_cond: float, p_key: float = 1.0) -> tuple[float, float]:
    """Max and min of the crossover function over point masses."""
    _check_cond(p_pe_cond)
    scaled = _scaled_nu(cert, p_pe_cond)
    return (p_key * (cert.g0 + scaled.max()), p_key * (cert.g0 + scaled.min()))


def min_tradeoff_from_crossover(cert: DualCertificate, p_key: float, p_pe: float,
                                p_tom: float) -> MinTradeoff:
    """Min-tradeoff coefficients for round probabilities ``(p_key, p_pe, p_tom)``."""
    probs = (p_key, p_pe, p_tom)
    if any(not 0.0 <= p <= 1.0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
        raise ValueError(f"round probabilities {probs} are not on the simplex")
    if p_key >= 1.0:
        raise ValueError("p_key must be < 1")
    p_pe_cond = p_pe / (1.0 - p_key)
    _check_cond(p_pe_cond)
    scaled = _scaled_nu(cert, p_pe_cond)
    top = scaled.max()
    h = p_key * (scaled - top) / (1.0 - p_key)
    n_pe = np.size(cert.nu_pe)
    max_g, min_g = g_extremes(cert, p_pe_cond, p_key)
    return MinTradeoff(h[:n_pe].reshape(np.shape(cert.nu_pe)), h[n_pe:],
                       float(p_key * (cert.g0 + top)), max_g, min_g, p_key, p_pe_cond)


def default_output_dim(m: int) -> int:
    """Alphabet size of one round's classical outputs including the blank symbols."""
    return 5 * 17 * 5 * (m + 1)


def eat_V(mt: MinTradeoff, d_o: float) -> float:
    if d_o < 2:
        raise ValueError("d_O must be >= 2")
    return math.sqrt(mt.spread ** 2 / (1.0 - mt.p_key) + 2.0) + math.log2(2 * d_o ** 2 + 1)


def eat_Ka(mt: MinTradeoff, d_o: float, a: float) -> float:
    if not 1.0 < a < 2.0:
        raise ValueError(f"a must lie in (1, 2), got {a}")
    if d_o < 2:
        raise ValueError("d_O must be >= 2")
    expo = 2 * math.log2(d_o) + mt.spread
    # ln(2^expo + e^2) without overflow for large expo
    big = expo * math.log(2.0)
    log_term = big + math.log1p(math.exp(2.0 - big)) if big > 2.0 else math.log(2.0 ** expo + math.e ** 2)
    return 2.0 ** ((a - 1) * expo) * log_term ** 3 / (6 * (2 - a) ** 3 * math.log(2.0))


def f_at_p0(cert: DualCertificate, stats: HonestStatistics, p_key: float = 1.0) -> float:
    """Min-tradeoff function at the honest distribution.

    Equals ``p_key (g0 + nu . p_sim + nu' . p_tom)`` for any split of the
    test rounds.
    """
    return float(p_key * cert.bound_at(np.asarray(stats.pe), np.asarray(stats.tom)))
