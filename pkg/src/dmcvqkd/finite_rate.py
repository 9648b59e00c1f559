"""Finite-size and asymptotic key rates.

``log`` means base 2 throughout; natural logarithms are spelled ``ln`` in
docstrings and ``math.log`` in code.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .honest_model import Distribution, HonestStatistics, assemble_p0, ec_leak_rate
from .tradeoff import (DualCertificate, MinTradeoff, default_output_dim, eat_Ka, eat_V,
                       f_at_p0, min_tradeoff_from_crossover)

LOG2_5 = math.log2(5)


class SecurityParamError(ValueError):
    """A security parameter relation required by the rate formula fails."""


@dataclass(frozen=True)
class SecurityParams:
    n: float
    eps: float = 1e-9
    eps_phys_na: float = 1e-3
    eps_tom: float = 1e-8
    eps_ec: float = 1e-10
    eps_ec_c: float = 1e-6
    eps_pe_c: float = 1e-6
    a: float = 1.0001

    def validate(self) -> None:
        if not self.n >= 1:
            raise SecurityParamError("n must be >= 1")
        for name in ("eps", "eps_phys_na", "eps_tom", "eps_ec", "eps_ec_c", "eps_pe_c"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise SecurityParamError(f"{name} must lie in (0, 1), got {val}")
        if not self.eps_tom < self.eps_phys_na / 2:
            raise SecurityParamError("eps_tom must be below eps_phys_na / 2")
        bound = 1.0 - math.sqrt(2 * self.eps_tom / self.eps_phys_na)
        if not self.eps < bound:
            raise SecurityParamError(f"eps must be below 1 - sqrt(2 eps_tom / eps_phys_na) = {bound}")
        if not 1.0 < self.a < 2.0:
            raise SecurityParamError(f"a must lie in (1, 2), got {self.a}")

    @property
    def eps_phys(self) -> float:
        return self.eps + math.sqrt(2 * self.eps_tom / self.eps_phys_na)


def gamma_fn(x: float) -> float:
    """``-log(1 - sqrt(1 - x^2))``, evaluated stably for small ``x``."""
    if not 0.0 < x <= 1.0:
        raise ValueError(f"gamma_fn needs x in (0, 1], got {x}")
    # 1 - sqrt(1 - x^2) = x^2 / (1 + sqrt(1 - x^2))
    return -math.log2(x * x / (1.0 + math.sqrt(1.0 - x * x)))


def multinoulli_deviation(pi: Sequence[float], h: Sequence[float], n: float,
                          eps_fail: float) -> float:
    """Deviation bound for the empirical mean of ``h`` under ``pi``.

    ``pi`` is a probability vector whose last symbol carries ``h = 0``.
    """
    pi = np.asarray(pi, dtype=float)
    h = np.asarray(h, dtype=float)
    if pi.shape != h.shape or pi.ndim != 1:
        raise ValueError("pi and h must be 1-D vectors of equal length")
    if np.any(pi < -1e-15) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("pi must be a probability vector")
    if h[-1] != 0.0:
        raise ValueError("the last coefficient must be 0")
    if not 0.0 < eps_fail < 1.0 or n < 1:
        raise ValueError("need n >= 1 and eps_fail in (0, 1)")
    pi = np.clip(pi, 0.0, None)
    cum = np.cumsum(pi)
    tail_incl = np.clip(1.0 - cum, 0.0, None)          # 1 - sum_{j<=i}
    tail_excl = np.clip(1.0 - cum + pi, 0.0, None)     # 1 - sum_{j<i}
    gam = np.divide(pi * tail_incl, tail_excl, out=np.zeros_like(pi), where=tail_excl > 0)
    later = np.cumsum((h * pi)[::-1])[::-1] - h * pi    # sum_{j>i} h_j pi_j
    c = h - np.divide(later, tail_incl, out=np.zeros_like(pi), where=tail_incl > 0)
    spread = float(h.max() - h.min())
    var = float(np.sum(gam * c * c))
    return (2.0 * math.sqrt(math.log2(n / eps_fail) * var / n)
            + 3.0 * spread / n * math.log2(2.0 / eps_fail))


def delta_tol_pe(mt: MinTradeoff, p0: Distribution, n: float, eps_pe_c: float) -> float:
    pi = p0.pe_vector()
    return multinoulli_deviation(pi / pi.sum(), np.append(np.ravel(mt.h_pe), 0.0), n, eps_pe_c)


def delta_tol_tom(mt: MinTradeoff, p0: Distribution, n: float, eps_tom: float) -> float:
    pi = p0.tom_vector()
    return multinoulli_deviation(pi / pi.sum(), np.append(mt.h_tom, 0.0), n, eps_tom)


@dataclass(frozen=True)
class RoundProbs:
    p_key: float
    p_pe_cond: float

    @property
    def p_pe(self) -> float:
        return (1.0 - self.p_key) * self.p_pe_cond

    @property
    def p_tom(self) -> float:
        return (1.0 - self.p_key) * (1.0 - self.p_pe_cond)


@dataclass(frozen=True)
class RateTerms:
    """Every additive piece of the finite-size rate, for diagnostics."""

    f_p0: float
    delta_pe: float
    delta_tom: float
    second_order: float
    ka_term: float
    test_cost: float
    sqrt_n_term: float
    inv_n_term: float
    leak: float

    @property
    def rate(self) -> float:
        return (self.f_p0 - self.delta_pe - self.delta_tom - self.second_order - self.ka_term
                - self.test_cost - self.sqrt_n_term - self.inv_n_term - self.leak)


def finite_rate_terms(cert: DualCertificate, stats: HonestStatistics, sec: SecurityParams,
                      probs: RoundProbs, leak_rate: float, m: int,
                      d_o: float | None = None) -> tuple[RateTerms, MinTradeoff]:
    sec.validate()
    n, a = sec.n, sec.a
    d_o = default_output_dim(m) if d_o is None else d_o
    mt = min_tradeoff_from_crossover(cert, probs.p_key, probs.p_pe, probs.p_tom)
    p0 = assemble_p0(probs.p_key, probs.p_pe, probs.p_tom, stats)
    alph = math.log2(17 * (m + 1))
    eps_gap = sec.eps_phys_na - sec.eps_tom
    e2 = sec.eps ** 2
    v = eat_V(mt, d_o)
    sqrt_n = (math.sqrt(0.5 * math.log(32 / (e2 * eps_gap))) * LOG2_5
              + math.sqrt(0.5 * math.log(512 / (e2 * eps_gap))) * alph) / math.sqrt(n)
    inv_n = (gamma_fn(sec.eps / 16) / (a - 1) + a / (a - 1) * math.log2(1 / eps_gap)
             + 2 * math.log2(1 / sec.eps_phys) + 2 * gamma_fn(sec.eps / 4)
             + 3 * gamma_fn(sec.eps / 16)) / n
    terms = RateTerms(
        f_p0=f_at_p0(cert, stats, probs.p_key),
        delta_pe=delta_tol_pe(mt, p0, n, sec.eps_pe_c),
        delta_tom=delta_tol_tom(mt, p0, n, sec.eps_tom),
        second_order=(a - 1) * math.log(2) / 2 * v * v,
        ka_term=(a - 1) ** 2 * eat_Ka(mt, d_o, a),
        test_cost=probs.p_pe * LOG2_5 + (1 - probs.p_key) * alph,
        sqrt_n_term=sqrt_n,
        inv_n_term=inv_n,
        leak=leak_rate,
    )
    return terms, mt


def finite_key_rate(cert: DualCertificate, stats: HonestStatistics, sec: SecurityParams,
                    probs: RoundProbs, leak_rate: float, m: int,
                    d_o: float | None = None) -> float:
    """Finite-size key rate in bits per round (may be negative)."""
    return finite_rate_terms(cert, stats, sec, probs, leak_rate, m, d_o)[0].rate


def asymptotic_rate(cert: DualCertificate, stats: HonestStatistics, leak_rate_limit: float) -> float:
    """``g0 + nu . p_sim + nu' . p_tom - leak`` with all rounds used for key."""
    return f_at_p0(cert, stats, 1.0) - leak_rate_limit


def completeness_check(eps_pe_c: float, eps_ec_c: float, eps_phys_na: float) -> bool:
    return 1.0 - eps_pe_c - eps_ec_c > eps_phys_na


# --------------------------------------------------------------------------
# grid optimization

# Wide enough to bracket a - 1 ~ n^(-3/4) and 1 - p_key ~ n^(-1/2) up to n = 1e16.
DEFAULT_A_GRID = tuple(1.0 + np.logspace(-12, -2, 31))
DEFAULT_P_KEY_GRID = tuple(1.0 - np.logspace(np.log10(0.2), -8, 31))
DEFAULT_P_PE_GRID = (0.5, 0.7, 0.9)
DEFAULT_ALPHA_GRID = tuple(np.round(np.arange(0.5, 1.5 + 1e-9, 0.05), 10))


@dataclass(frozen=True)
class RatePoint:
    alpha: float
    a: float
    p_key: float
    p_pe_cond: float
    n: float
    asymptotic_rate: float
    finite_rate: float
    delta_pe: float
    delta_tom: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def positive(self) -> bool:
        return self.finite_rate > 0


def _better(cand: tuple, best: tuple | None) -> bool:
    # order: rate desc, then a asc, p_key desc, alpha asc, p_pe_cond asc
    if best is None:
        return True
    return (-cand[0], cand[1], -cand[2], cand[3], cand[4]) < (-best[0], best[1], -best[2], best[3], best[4])


def optimize_rate(certs: Mapping[float, tuple[DualCertificate, HonestStatistics]],
                  sec: SecurityParams, m: int, f_ec: float,
                  a_grid: Iterable[float] = DEFAULT_A_GRID,
                  p_key_grid: Iterable[float] = DEFAULT_P_KEY_GRID,
                  p_pe_grid: Iterable[float] = DEFAULT_P_PE_GRID,
                  d_o: float | None = None, leak_scales_with_p_key: bool = True) -> RatePoint:
    """Best finite rate over the grids at fixed ``n``.

    ``certs`` maps each candidate amplitude to its certificate and honest
    statistics. Ties go to the smallest ``a``, then the largest ``p_key``,
    then the smallest amplitude.
    """
    a_grid, p_key_grid, p_pe_grid = list(a_grid), list(p_key_grid), list(p_pe_grid)
    if not (certs and a_grid and p_key_grid and p_pe_grid):
        raise ValueError("all grids must be nonempty")
    best, best_point = None, None
    for alpha in sorted(certs):
        cert, stats = certs[alpha]
        asym = asymptotic_rate(cert, stats, ec_leak_rate(stats.ec, f_ec, 1.0))
        for a, p_key, p_pe in itertools.product(a_grid, p_key_grid, p_pe_grid):
            probs = RoundProbs(p_key, p_pe)
            leak = ec_leak_rate(stats.ec, f_ec, p_key, scale_by_p_key=leak_scales_with_p_key)
            terms, _ = finite_rate_terms(cert, stats, replace(sec, a=a), probs, leak, m, d_o)
            key = (terms.rate, a, p_key, alpha, p_pe)
            if _better(key, best):
                best = key
                best_point = RatePoint(alpha, a, p_key, p_pe, sec.n, asym, terms.rate,
                                       terms.delta_pe, terms.delta_tom,
                                       {"terms": terms, "eps_prime": cert.eps_prime})
    return best_point
