"""Honest-implementation statistics of a thermal-loss Gaussian channel.

Bob's heterodyne outcome for input ``phi_x`` is distributed as
``exp(-|y - sqrt(eta) phi_x|^2 / v) / (pi v)`` with ``v = 1 + eta xi / 2``.
Region probabilities are computed as a 1-D adaptive radial quadrature of a
fixed Gauss-Legendre angular rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .fock_ops import (ALICE_DIM, KEY_DIM, FockOperator, ModulationScheme,
                       alice_amplitudes, alice_marginal, ic_povm,
                       pe_region_bounds, wedge_bounds)

GL_NODES, GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
QUAD_ABS_TOL = 1e-12


class IntegrationError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class HonestChannel:
    """Fiber of length ``distance_km`` with excess noise ``excess_noise``."""

    distance_km: float
    attenuation_db_per_km: float = 0.2
    excess_noise: float = 0.02

    def __post_init__(self):
        if self.distance_km < 0:
            raise ValueError("distance_km must be >= 0")
        if not self.attenuation_db_per_km > 0:
            raise ValueError("attenuation_db_per_km must be > 0")
        if self.excess_noise < 0:
            raise ValueError("excess_noise must be >= 0")

    @property
    def transmittance(self) -> float:
        return transmittance(self.distance_km, self.attenuation_db_per_km)

    @property
    def noise_variance(self) -> float:
        """Per-complex-plane outcome variance ``1 + eta xi / 2``."""
        return 1.0 + self.transmittance * self.excess_noise / 2


@dataclass(frozen=True, eq=False)
class Distribution:
    """Distribution over the round alphabet.

    ``pe[x, z]`` is the mass of a parameter-estimation round with outcome
    ``(x, z)``, ``tom[x']`` that of a tomography round, and ``bottom`` the
    mass of rounds recording nothing (key rounds).
    """

    pe: np.ndarray
    tom: np.ndarray
    bottom: float

    def total(self) -> float:
        return float(self.pe.sum() + self.tom.sum() + self.bottom)

    def pe_vector(self) -> np.ndarray:
        """PE masses in x-major order followed by the remainder."""
        flat = self.pe.ravel()
        return np.append(flat, max(0.0, 1.0 - flat.sum()))

    def tom_vector(self) -> np.ndarray:
        return np.append(self.tom, max(0.0, 1.0 - self.tom.sum()))


@dataclass(frozen=True, eq=False)
class HonestStatistics:
    pe: np.ndarray
    ec: np.ndarray
    tom: np.ndarray
    assembled: Distribution | None = None


def transmittance(distance_km: float, attenuation: float) -> float:
    """Power transmittance ``10^(-attenuation * distance / 10)``."""
    if distance_km < 0:
        raise ValueError("distance_km must be >= 0")
    return float(10.0 ** (-attenuation * distance_km / 10.0))


def _sector_probability(center: complex, var: float, r_low: float, r_high: float,
                        t1: float, t2: float) -> float:
    """Mass of a complex Gaussian in an annular sector."""
    half = 0.5 * (t2 - t1)
    theta = t1 + half * (GL_NODES + 1)
    w = half * GL_WEIGHTS
    cx, cy = center.real, center.imag
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    c2 = cx * cx + cy * cy

    def radial(g):
        expo = -(g * g + c2 - 2 * g * (cx * cos_t + cy * sin_t)) / var
        return g * np.dot(w, np.exp(expo)) / (np.pi * var)

    # split the radial range around the peak so quad sees the bulk
    peak = abs(center)
    spread = np.sqrt(var)
    cuts = sorted({r_low, *[c for c in (peak - 4 * spread, peak, peak + 4 * spread)
                            if r_low < c < r_high]})
    if np.isfinite(r_high):
        cuts.append(r_high)
    else:
        cuts.append(max(cuts[-1], peak) + 12 * spread)
    total, err = 0.0, 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        val, e = integrate.quad(radial, lo, hi, epsabs=QUAD_ABS_TOL, epsrel=1e-13, limit=200)
        total += val
        err += e
    if not np.isfinite(r_high):
        val, e = integrate.quad(radial, cuts[-1], np.inf, epsabs=QUAD_ABS_TOL, limit=200)
        total += val
        err += e
    if err > 1e-10:
        raise IntegrationError(f"radial quadrature error estimate {err:.2e} exceeds 1e-10")
    return total


def pe_statistics(channel: HonestChannel, scheme: ModulationScheme) -> np.ndarray:
    """Joint distribution ``p(x, z)`` of Alice's state and Bob's PE module."""
    var = channel.noise_variance
    centers = np.sqrt(channel.transmittance) * alice_amplitudes(scheme.alpha)
    out = np.empty((ALICE_DIM, scheme.m))
    for x in range(ALICE_DIM):
        for z in range(scheme.m):
            out[x, z] = 0.25 * _sector_probability(centers[x], var, *pe_region_bounds(z, scheme))
    return out


def key_statistics(channel: HonestChannel, scheme: ModulationScheme) -> np.ndarray:
    """Joint distribution ``p(x, z)`` of Alice's state and Bob's key wedge."""
    var = channel.noise_variance
    centers = np.sqrt(channel.transmittance) * alice_amplitudes(scheme.alpha)
    out = np.empty((ALICE_DIM, KEY_DIM))
    for x in range(ALICE_DIM):
        for z in range(KEY_DIM):
            out[x, z] = 0.25 * _sector_probability(centers[x], var, 0.0, np.inf, *wedge_bounds(z))
    return out


def tom_statistics(alpha: float, povm: Sequence[FockOperator] | None = None) -> np.ndarray:
    """Outcome distribution of the tomography POVM on Alice's marginal."""
    povm = ic_povm() if povm is None else povm
    rho_a = alice_marginal(alpha).data
    return np.array([np.real(np.trace(g.data @ rho_a)) for g in povm])


def assemble_p0(p_key: float, p_pe: float, p_tom: float,
                stats: HonestStatistics) -> Distribution:
    """Full round distribution for the given round-type probabilities."""
    probs = (p_key, p_pe, p_tom)
    if any(not 0.0 <= p <= 1.0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
        raise ValueError(f"round probabilities {probs} are not on the simplex")
    pe = p_pe * np.asarray(stats.pe, dtype=float)
    tom = p_tom * np.asarray(stats.tom, dtype=float)
    return Distribution(pe, tom, max(0.0, 1.0 - pe.sum() - tom.sum()))


def conditional_entropy_bits(joint: np.ndarray) -> float:
    """``H(Z|X)`` in bits from a joint table indexed ``[x, z]``."""
    joint = np.asarray(joint, dtype=float)
    px = joint.sum(axis=1, keepdims=True)
    mask = joint > 0
    ratio = np.divide(joint, px, out=np.ones_like(joint), where=mask)
    return float(-np.sum(joint[mask] * np.log2(ratio[mask])))


def ec_leak_rate(ec: np.ndarray, f: float, p_key: float = 1.0,
                 scale_by_p_key: bool = True) -> float:
    """Error-correction leakage in bits per round.

    ``(1 + f) H(Z|X)``, multiplied by ``p_key`` unless ``scale_by_p_key`` is
    false.
    """
    if f < 0:
        raise ValueError("f must be >= 0")
    leak = (1.0 + f) * conditional_entropy_bits(ec)
    return p_key * leak if scale_by_p_key else leak


def honest_statistics(channel: HonestChannel, scheme: ModulationScheme) -> HonestStatistics:
    return HonestStatistics(pe_statistics(channel, scheme), key_statistics(channel, scheme),
                            tom_statistics(scheme.alpha))


# --------------------------------------------------------------------------
# sampling oracle

@dataclass(frozen=True, eq=False)
class SampleCounts:
    """Counts of simulated rounds; ``pe[x, z]`` and ``key[x, z]`` share draws."""

    pe: np.ndarray
    key: np.ndarray
    n: int

    @property
    def pe_freq(self) -> np.ndarray:
        return self.pe / self.n

    @property
    def key_freq(self) -> np.ndarray:
        return self.key / self.n


def bin_outcomes(y: np.ndarray, scheme: ModulationScheme) -> tuple[np.ndarray, np.ndarray]:
    """Map complex outcomes to (PE module, key wedge) labels."""
    theta = np.mod(np.angle(y) + np.pi / 4, 2 * np.pi)
    wedge = np.minimum((theta // (np.pi / 2)).astype(int), 3)
    ring = np.minimum((np.abs(y) // scheme.delta_mod).astype(int), scheme.rings)
    return wedge + 4 * ring, wedge


def sample_rounds(channel: HonestChannel, scheme: ModulationScheme, n: int,
                  seed: int | None = 0, chunk: int = 1_000_000) -> SampleCounts:
    """Simulate ``n`` rounds with uniform ``x`` and histogram the outcomes."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    centers = np.sqrt(channel.transmittance) * alice_amplitudes(scheme.alpha)
    sd = np.sqrt(channel.noise_variance / 2)
    pe = np.zeros((ALICE_DIM, scheme.m), dtype=np.int64)
    key = np.zeros((ALICE_DIM, KEY_DIM), dtype=np.int64)
    left = n
    while left:
        k = min(chunk, left)
        x = rng.integers(0, ALICE_DIM, size=k)
        y = centers[x] + sd * (rng.standard_normal(k) + 1j * rng.standard_normal(k))
        z_pe, z_key = bin_outcomes(y, scheme)
        pe += np.bincount(x * scheme.m + z_pe, minlength=pe.size).reshape(pe.shape)
        key += np.bincount(x * KEY_DIM + z_key, minlength=key.size).reshape(key.shape)
        left -= k
    return SampleCounts(pe, key, n)
