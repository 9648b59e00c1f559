"""Truncated Fock-space operators for the four-state heterodyne protocol.

Everything here is a pure function returning fresh numpy arrays. Matrices are
dense ``complex128``; composite systems are ordered Alice (4) x Bob (N_c)
x key register (4), with Kronecker products taken in that order.

Phase-space region operators are built from the closed form

    R_mn = 1/(pi sqrt(m! n!)) * int_a^b g^(m+n+1) e^(-g^2) dg
                              * int_t1^t2 e^(i(m-n)t) dt

where the radial integral is a difference of regularized lower incomplete
gamma functions and the angular one is elementary.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.special import gammainc, gammaln

ALICE_DIM = 4
KEY_DIM = 4
POVM_SIZE = 16

# Eigenvalues of region operators in [-SQRT_CLAMP, 0) are truncation noise.
SQRT_CLAMP = 1e-8


class OperatorError(ValueError):
    """An operator failed a structural invariant."""


@dataclass(frozen=True)
class ModulationScheme:
    """Protocol geometry: amplitude, parameter-estimation binning and cutoff.

    ``delta_amp`` is the outer amplitude cut and ``delta_mod`` the ring width;
    their ratio must be a positive integer. ``m`` is derived.
    """

    alpha: float
    delta_amp: float = 0.9
    delta_mod: float = 0.9
    cutoff: int = 10

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not (self.delta_amp > 0 and self.delta_mod > 0):
            raise ValueError("delta_amp and delta_mod must be positive")
        ratio = self.delta_amp / self.delta_mod
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                f"delta_mod: delta_amp/delta_mod = {ratio!r} is not a positive integer")
        if int(self.cutoff) != self.cutoff or self.cutoff < 2:
            raise ValueError("cutoff must be an integer >= 2")

    @property
    def rings(self) -> int:
        """Number of bounded rings, ``delta_amp / delta_mod``."""
        return int(round(self.delta_amp / self.delta_mod))

    @property
    def m(self) -> int:
        return 4 * self.rings + 4

    @property
    def dim(self) -> int:
        return ALICE_DIM * self.cutoff

    def with_alpha(self, alpha: float) -> "ModulationScheme":
        return ModulationScheme(alpha, self.delta_amp, self.delta_mod, self.cutoff)


@dataclass(frozen=True, eq=False)
class FockOperator:
    """A Hermitian matrix on a tensor product of truncated spaces."""

    dims: tuple[int, ...]
    data: np.ndarray
    label: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        n = int(np.prod(self.dims))
        if data.shape != (n, n):
            raise OperatorError(f"shape {data.shape} does not match dims {self.dims}")
        dev = np.max(np.abs(data - data.conj().T)) if n else 0.0
        if dev > 1e-12:
            raise OperatorError(f"operator {self.label!r} not Hermitian (deviation {dev:.2e})")
        data = 0.5 * (data + data.conj().T)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def shape(self):
        return self.data.shape

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.data)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


@dataclass(frozen=True, eq=False)
class KrausMap:
    """A CP map rho -> sum_k K_k rho K_k^dagger."""

    kraus_ops: tuple[np.ndarray, ...]
    in_dim: int
    out_dim: int
    out_dims: tuple[int, ...] = field(default=())

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros((self.out_dim, self.out_dim), dtype=complex)
        for k in self.kraus_ops:
            out += k @ rho @ k.conj().T
        return out

    def adjoint(self, op: np.ndarray) -> np.ndarray:
        out = np.zeros((self.in_dim, self.in_dim), dtype=complex)
        for k in self.kraus_ops:
            out += k.conj().T @ op @ k
        return out

    def trace_defect(self) -> float:
        """Max deviation of sum_k K_k^dag K_k from the identity."""
        s = sum(k.conj().T @ k for k in self.kraus_ops)
        return float(np.max(np.abs(s - np.eye(self.in_dim))))


# --------------------------------------------------------------------------
# coherent states

def coherent_fock_vector(amplitude: complex, cutoff: int) -> np.ndarray:
    """Fock components ``<k|amplitude>`` for ``k < cutoff``.

    >>> np.allclose(coherent_fock_vector(0, 4), [1, 0, 0, 0])
    True
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    a = complex(amplitude)
    k = np.arange(cutoff)
    r = abs(a)
    if r == 0.0:
        vec = np.zeros(cutoff, dtype=complex)
        vec[0] = 1.0
        return vec
    logmag = k * np.log(r) - 0.5 * r * r - 0.5 * gammaln(k + 1)
    return np.exp(logmag) * np.exp(1j * k * np.angle(a))


def coherent_overlap(a: complex, b: complex) -> complex:
    """Inner product ``<b|a>`` of two coherent states."""
    a, b = complex(a), complex(b)
    return complex(np.exp(-(abs(a) ** 2 + abs(b) ** 2) / 2 + np.conj(b) * a))


def alice_amplitudes(alpha: float) -> np.ndarray:
    """The four signal amplitudes, in the order used by every module."""
    return alpha * np.array([1, -1, 1j, -1j], dtype=complex)


def alice_marginal(alpha: float) -> FockOperator:
    """Alice's reduced state of the source-replacement purification."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    phis = alice_amplitudes(alpha)
    rho = np.array([[coherent_overlap(phis[x], phis[y]) for y in range(4)]
                    for x in range(4)]) / 4
    return FockOperator((ALICE_DIM,), rho, "rho_A")


# --------------------------------------------------------------------------
# phase-space region operators

def wedge_bounds(j: int) -> tuple[float, float]:
    """Angular interval ``[pi(2j-1)/4, pi(2j+1)/4)`` of wedge ``j``."""
    return np.pi * (2 * j - 1) / 4, np.pi * (2 * j + 1) / 4


def radial_integrals(cutoff: int, a: float, b: float) -> np.ndarray:
    """Matrix of ``int_a^b g^(m+n+1) e^(-g^2) dg / sqrt(m! n!)``.

    ``b`` may be ``np.inf``.
    """
    k = np.arange(cutoff)
    s = (k[:, None] + k[None, :]) / 2 + 1
    upper = 1.0 if np.isinf(b) else gammainc(s, b * b)
    lower = gammainc(s, a * a) if a > 0 else 0.0
    logpref = gammaln(s) - 0.5 * (gammaln(k + 1)[:, None] + gammaln(k + 1)[None, :])
    return 0.5 * np.exp(logpref) * (upper - lower)


def angular_integrals(cutoff: int, t1: float, t2: float) -> np.ndarray:
    """Matrix of ``int_t1^t2 exp(i (m-n) t) dt``."""
    k = np.arange(cutoff)
    d = (k[:, None] - k[None, :]).astype(float)
    out = np.empty(d.shape, dtype=complex)
    diag = d == 0
    out[diag] = t2 - t1
    dd = d[~diag]
    out[~diag] = (np.exp(1j * dd * t2) - np.exp(1j * dd * t1)) / (1j * dd)
    return out


def region_operator(cutoff: int, r_low: float, r_high: float,
                    t1: float, t2: float, label: str = "") -> FockOperator:
    """Heterodyne POVM element integrated over an annular sector."""
    mat = radial_integrals(cutoff, r_low, r_high) * angular_integrals(cutoff, t1, t2) / np.pi
    return FockOperator((cutoff,), mat, label)


def key_region_operator(z: int, cutoff: int) -> FockOperator:
    """Key-round wedge operator ``R^z`` (radius 0 to infinity)."""
    if z not in range(KEY_DIM):
        raise ValueError(f"key region z={z} outside 0..3")
    return region_operator(cutoff, 0.0, np.inf, *wedge_bounds(z), label=f"R{z}")


def pe_region_bounds(z: int, scheme: ModulationScheme) -> tuple[float, float, float, float]:
    """``(r_low, r_high, t1, t2)`` of parameter-estimation module ``z``.

    Module ``j + 4k`` is wedge ``j`` of ring ``k``; ring ``rings`` is the
    unbounded tail beyond ``delta_amp``.
    """
    if not 0 <= z < scheme.m:
        raise ValueError(f"module z={z} outside 0..{scheme.m - 1}")
    j, k = z % 4, z // 4
    if k == scheme.rings:
        lo, hi = scheme.delta_amp, np.inf
    else:
        lo, hi = scheme.delta_mod * k, scheme.delta_mod * (k + 1)
    return (lo, hi, *wedge_bounds(j))


def pe_region_operator(z: int, scheme: ModulationScheme) -> FockOperator:
    return region_operator(scheme.cutoff, *pe_region_bounds(z, scheme), label=f"Rt{z}")


def psd_sqrt(mat: np.ndarray, clamp: float = SQRT_CLAMP) -> np.ndarray:
    """Hermitian square root; eigenvalues in ``[-clamp, 0)`` are set to zero."""
    w, v = np.linalg.eigh(mat)
    if w[0] < -clamp:
        raise OperatorError(f"eigenvalue {w[0]:.3e} below -{clamp:g}")
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w) @ v.conj().T


def build_G_map(cutoff: int) -> KrausMap:
    """Coherent key map ``1_A (x) sum_z sqrt(R^z) (x) |z>``, one Kraus operator."""
    dim_in = ALICE_DIM * cutoff
    kraus = np.zeros((dim_in * KEY_DIM, dim_in), dtype=complex)
    eye_a = np.eye(ALICE_DIM)
    for z in range(KEY_DIM):
        root = psd_sqrt(key_region_operator(z, cutoff).data)
        ket = np.zeros((KEY_DIM, 1))
        ket[z] = 1.0
        kraus += np.kron(np.kron(eye_a, root), ket)
    return KrausMap((kraus,), dim_in, dim_in * KEY_DIM, (ALICE_DIM, cutoff, KEY_DIM))


def pinching_Z(op: FockOperator | np.ndarray, dims: Sequence[int] | None = None,
               key_axis: int | None = None) -> FockOperator:
    """Dephase the key register: zero every block off-diagonal in it.

    By default the key register is the last subsystem and must have
    dimension 4.
    """
    if isinstance(op, FockOperator):
        dims = op.dims if dims is None else tuple(dims)
        data = op.data
    else:
        data = np.asarray(op)
        if dims is None:
            raise OperatorError("dims required for a bare array")
        dims = tuple(dims)
    if key_axis is None:
        key_axis = len(dims) - 1
    if not dims or dims[key_axis] != KEY_DIM:
        raise OperatorError(f"no 4-dimensional key register in dims {dims}")
    nsub = len(dims)
    t = data.reshape(dims + dims)
    idx = np.arange(KEY_DIM)
    mask = (idx[:, None] == idx[None, :]).reshape([KEY_DIM if a in (key_axis, nsub + key_axis) else 1
                                                    for a in range(2 * nsub)])
    out = np.where(mask, t, 0).reshape(data.shape)
    return FockOperator(dims, out, "Z(op)")


def pinched_G_map(cutoff: int) -> KrausMap:
    """``Z o G`` written as a four-operator Kraus map."""
    g = build_G_map(cutoff).kraus_ops[0]
    d_in = ALICE_DIM * cutoff
    ops = []
    for z in range(KEY_DIM):
        proj = np.zeros(d_in * KEY_DIM)
        proj[z::KEY_DIM] = 1.0
        ops.append(proj[:, None] * g)
    return KrausMap(tuple(ops), d_in, d_in * KEY_DIM, (ALICE_DIM, cutoff, KEY_DIM))


# --------------------------------------------------------------------------
# tomography and constraints

def ic_povm() -> list[FockOperator]:
    """A fixed informationally complete 16-outcome POVM on Alice's qudit.

    Rank-one projectors onto the basis states and the ``|j>+|k>`` and
    ``|j>+i|k>`` superpositions are symmetrically normalized by
    ``S^(-1/2)`` with ``S`` their sum.
    """
    vecs = []
    eye = np.eye(ALICE_DIM)
    for j in range(ALICE_DIM):
        vecs.append(eye[j].astype(complex))
    for phase in (1.0, 1j):
        for j in range(ALICE_DIM):
            for k in range(j + 1, ALICE_DIM):
                vecs.append((eye[j] + phase * eye[k]) / np.sqrt(2))
    projs = [np.outer(v, v.conj()) for v in vecs]
    w, u = np.linalg.eigh(sum(projs))
    s_inv_half = (u / np.sqrt(w)) @ u.conj().T
    return [FockOperator((ALICE_DIM,), s_inv_half @ p @ s_inv_half, f"Gamma{i}")
            for i, p in enumerate(projs)]


def constraint_operators(scheme: ModulationScheme) -> list[tuple[FockOperator, str]]:
    """PE operators ``|x><x| (x) Rt^z`` (x-major), then ``Gamma_x' (x) 1_B``."""
    nc = scheme.cutoff
    regions = [pe_region_operator(z, scheme).data for z in range(scheme.m)]
    out = []
    for x in range(ALICE_DIM):
        proj = np.zeros((ALICE_DIM, ALICE_DIM))
        proj[x, x] = 1.0
        for z in range(scheme.m):
            out.append((FockOperator((ALICE_DIM, nc), np.kron(proj, regions[z])), f"pe:{x},{z}"))
    eye_b = np.eye(nc)
    for i, gam in enumerate(ic_povm()):
        out.append((FockOperator((ALICE_DIM, nc), np.kron(gam.data, eye_b)), f"tom:{i}"))
    return out


def operator_hash(ops: Sequence[FockOperator | np.ndarray], digits: int = 12) -> str:
    """Content hash of a list of matrices, rounded to ``digits`` decimals."""
    h = hashlib.sha256()
    for op in ops:
        arr = np.asarray(op.data if isinstance(op, FockOperator) else op)
        rounded = np.round(arr, digits) + 0.0  # drop negative zeros
        h.update(np.ascontiguousarray(rounded.real).tobytes())
        h.update(np.ascontiguousarray(rounded.imag + 0.0).tobytes())
    return h.hexdigest()
