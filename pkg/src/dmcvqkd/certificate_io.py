"""Versioned JSON persistence of dual certificates.

Matrices are stored row-major as ``[re, im]`` pairs. Python's ``repr`` of a
float is the shortest decimal that round-trips, so save then load is exact.
Loading rebuilds the constraint operators from the echoed scheme, compares
their content hash and re-checks dual feasibility at the stored expansion
point before the certificate is handed out.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .convex_core import build_context, objective_and_gradient
from .fock_ops import ModulationScheme, constraint_operators, operator_hash
from .honest_model import HonestChannel
from .sdp_solver import verify_dual_certificate
from .tradeoff import DualCertificate

FORMAT_VERSION = 1


class CertificateError(ValueError):
    """A certificate file is malformed, mismatched or fails verification."""


class HashMismatchError(CertificateError):
    """The stored operator hash does not match the rebuilt operators."""


def matrix_to_pairs(mat: np.ndarray) -> list[list[list[float]]]:
    mat = np.asarray(mat, dtype=complex)
    return [[[float(v.real), float(v.imag)] for v in row] for row in mat]


def pairs_to_matrix(pairs: list) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise CertificateError("matrix entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def certificate_to_dict(cert: DualCertificate, scheme: ModulationScheme,
                        channel: HonestChannel) -> dict:
    if cert.rho is None:
        raise CertificateError("certificate has no expansion point to store")
    ops = [op for op, _ in constraint_operators(scheme)]
    diagnostics = {k: v for k, v in cert.meta.items() if k not in ("scheme", "channel")}
    return {
        "format_version": FORMAT_VERSION,
        "scheme": asdict(scheme),
        "channel": asdict(channel),
        "operator_hash": operator_hash(ops),
        "nu_pe": np.asarray(cert.nu_pe, dtype=float).tolist(),
        "nu_tom": np.asarray(cert.nu_tom, dtype=float).tolist(),
        "g0": float(cert.g0),
        "eps_prime": float(cert.eps_prime),
        "primal_ub": float(cert.primal_ub),
        "rho": matrix_to_pairs(cert.rho),
        "diagnostics": _jsonable(diagnostics),
    }


def save_certificate(path: str | Path, cert: DualCertificate, scheme: ModulationScheme,
                     channel: HonestChannel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = certificate_to_dict(cert, scheme, channel)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1))
    tmp.replace(path)
    return path


@dataclass(frozen=True, eq=False)
class LoadedCertificate:
    certificate: DualCertificate
    scheme: ModulationScheme
    channel: HonestChannel
    lambda_min: float
    certified: bool
    operator_hash: str


def _require(raw: dict, key: str) -> Any:
    if key not in raw:
        raise CertificateError(f"missing field {key!r}")
    return raw[key]


def certificate_from_dict(raw: dict, expected_scheme: ModulationScheme | None = None,
                          verify: bool = True) -> LoadedCertificate:
    """Rebuild a certificate, checking its hash and dual feasibility.

    Parameters
    ----------
    expected_scheme
        If given, the rebuilt operators must match the hash of this scheme's
        operators as well.
    verify
        Recompute the dual slack spectrum. When false, ``certified`` is
        ``False`` and ``lambda_min`` is NaN.
    """
    version = _require(raw, "format_version")
    if version != FORMAT_VERSION:
        raise CertificateError(f"unsupported format_version {version!r}")
    try:
        scheme = ModulationScheme(**_require(raw, "scheme"))
        channel = HonestChannel(**_require(raw, "channel"))
    except (TypeError, ValueError) as exc:
        raise CertificateError(f"bad scheme/channel echo: {exc}") from exc
    ops = [op for op, _ in constraint_operators(scheme)]
    digest = operator_hash(ops)
    stored = _require(raw, "operator_hash")
    if digest != stored:
        raise HashMismatchError(f"operator hash {stored[:12]}... does not match rebuilt "
                                f"{digest[:12]}...")
    if expected_scheme is not None:
        expected = operator_hash([op for op, _ in constraint_operators(expected_scheme)])
        if expected != stored:
            raise HashMismatchError("certificate was built for a different scheme "
                                    f"({raw['scheme']}) than the configured one")
    nu_pe = np.asarray(_require(raw, "nu_pe"), dtype=float)
    nu_tom = np.asarray(_require(raw, "nu_tom"), dtype=float)
    if nu_pe.shape != (4, scheme.m) or nu_tom.shape != (16,):
        raise CertificateError(f"dual shapes {nu_pe.shape}, {nu_tom.shape} do not fit the scheme")
    rho = pairs_to_matrix(_require(raw, "rho"))
    if rho.shape != (scheme.dim, scheme.dim):
        raise CertificateError(f"expansion point has shape {rho.shape}, expected "
                               f"{(scheme.dim, scheme.dim)}")
    meta = dict(raw.get("diagnostics", {}))
    meta["scheme"] = raw["scheme"]
    meta["channel"] = raw["channel"]
    cert = DualCertificate(nu_pe, nu_tom, float(_require(raw, "g0")),
                           float(_require(raw, "eps_prime")), float(_require(raw, "primal_ub")),
                           meta, rho)
    lam, ok = math.nan, False
    if verify:
        _, grad = objective_and_gradient(rho, build_context(scheme.cutoff))
        lam, ok = verify_dual_certificate(grad, [op.data for op in ops], cert.nu)
    return LoadedCertificate(cert, scheme, channel, lam, bool(ok), digest)


def load_certificate(path: str | Path, expected_scheme: ModulationScheme | None = None,
                     verify: bool = True) -> LoadedCertificate:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CertificateError(f"{path}: not valid JSON ({exc})") from exc
    return certificate_from_dict(raw, expected_scheme, verify)


def certificate_filename(scheme: ModulationScheme, channel: HonestChannel) -> str:
    """Deterministic cache file name for one (scheme, channel) point."""
    return (f"cert_a{scheme.alpha:.6g}_A{scheme.delta_amp:.6g}_d{scheme.delta_mod:.6g}"
            f"_N{scheme.cutoff}_D{channel.distance_km:.6g}_att{channel.attenuation_db_per_km:.6g}"
            f"_xi{channel.excess_noise:.6g}.json")
