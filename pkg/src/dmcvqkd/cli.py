"""Command-line interface: operator checks, rate sweeps, certificate checks.

Exit codes: 0 success, 1 invariant or validation failure, 2 solver failure,
3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .certificate_io import (CertificateError, certificate_filename, load_certificate,
                             save_certificate)
from .config import ConfigError, RunConfig, load_config
from .convex_core import build_context, objective_and_gradient, perturbation_penalty
from .finite_rate import (SecurityParamError, asymptotic_rate,
                          multinoulli_deviation, optimize_rate)
from .fock_ops import (ModulationScheme, build_G_map, constraint_operators, ic_povm,
                       key_region_operator, operator_hash, pe_region_operator, pinched_G_map)
from .honest_model import HonestChannel, ec_leak_rate, honest_statistics, sample_rounds
from .pipeline import solve_instance
from .sdp_solver import SolverError

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

ASYMPTOTIC_COLUMNS = [
    "distance_km", "attenuation_db_per_km", "excess_noise_snu", "alpha", "delta_amp",
    "delta_mod", "cutoff", "ec_inefficiency", "rate", "primal_ub", "lower_bound", "gap",
    "eps_prime", "iterations", "lambda_min", "certified", "from_cache", "best_alpha", "status",
]
FINITE_COLUMNS = [
    "distance_km", "attenuation_db_per_km", "excess_noise_snu", "delta_amp", "delta_mod",
    "cutoff", "ec_inefficiency", "leak_scales_with_p_key", "n_rounds", "eps", "eps_phys_na",
    "eps_tom", "eps_ec", "eps_ec_c", "eps_pe_c", "output_alphabet_size", "alpha", "renyi_a",
    "p_key", "p_pe_cond", "asymptotic_rate", "finite_rate", "delta_pe", "delta_tom", "status",
]


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in columns})


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# --------------------------------------------------------------------------
# operators

def operator_report(scheme: ModulationScheme) -> list[tuple[str, float, float]]:
    """``(check, value, limit)`` triples; a check passes when ``value <= limit``."""
    nc = scheme.cutoff
    eye = np.eye(nc)
    key_sum = sum(key_region_operator(z, nc).data for z in range(4))
    pe_regions = [pe_region_operator(z, scheme).data for z in range(scheme.m)]
    g_map, pg_map = build_G_map(nc), pinched_G_map(nc)
    povm = [g.data for g in ic_povm()]
    span = np.array([p.ravel() for p in povm])
    ops = [op.data for op, _ in constraint_operators(scheme)]
    min_eig = min(float(np.linalg.eigvalsh(op)[0]) for op in ops + pe_regions)
    return [
        ("key_regions_sum_to_identity", float(np.abs(key_sum - eye).max()), 1e-9),
        ("pe_regions_sum_to_identity", float(np.abs(sum(pe_regions) - eye).max()), 1e-9),
        ("postprocessing_map_trace_preserving", g_map.trace_defect(), 1e-8),
        ("pinched_map_trace_preserving", pg_map.trace_defect(), 1e-8),
        ("povm_sums_to_identity", float(np.abs(sum(povm) - np.eye(4)).max()), 1e-12),
        ("povm_span_rank_deficit", float(16 - np.linalg.matrix_rank(span, tol=1e-10)), 0.0),
        ("constraint_operators_psd", max(0.0, -min_eig), 1e-12),
    ]


def cmd_operators(cfg: RunConfig, args) -> int:
    failed = False
    seen = set()
    for scheme in cfg.scheme.schemes():
        key = (scheme.delta_amp, scheme.delta_mod, scheme.cutoff)
        if key in seen:  # operators do not depend on alpha
            continue
        seen.add(key)
        print(f"operators delta_amp={scheme.delta_amp} delta_mod={scheme.delta_mod} "
              f"cutoff={scheme.cutoff} m={scheme.m}")
        for name, value, limit in operator_report(scheme):
            ok = value <= limit
            failed |= not ok
            print(f"  {'ok  ' if ok else 'FAIL'} {name:40s} {value:.3e} (limit {limit:.0e})")
        print(f"  hash {operator_hash([op for op, _ in constraint_operators(scheme)])}")
    return EXIT_INVALID if failed else EXIT_OK


# --------------------------------------------------------------------------
# asymptotic sweep

def _points(cfg: RunConfig) -> list[tuple[HonestChannel, ModulationScheme]]:
    return sorted(((ch, sc) for ch in cfg.channel.channels() for sc in cfg.scheme.schemes()),
                  key=lambda p: (p[0].distance_km, p[1].alpha))


def _asymptotic_point(task) -> dict:
    cfg, channel, scheme, cache_dir = task
    row = {
        "distance_km": channel.distance_km,
        "attenuation_db_per_km": channel.attenuation_db_per_km,
        "excess_noise_snu": channel.excess_noise, "alpha": scheme.alpha,
        "delta_amp": scheme.delta_amp, "delta_mod": scheme.delta_mod, "cutoff": scheme.cutoff,
        "ec_inefficiency": cfg.protocol.ec_inefficiency, "best_alpha": False,
    }
    path = Path(cache_dir) / certificate_filename(scheme, channel)
    try:
        if path.exists():
            loaded = load_certificate(path, expected_scheme=scheme)
            if not loaded.certified:
                raise CertificateError(f"cached certificate {path} fails verification")
            cert, cached = loaded.certificate, True
            cert.meta.update(lambda_min=loaded.lambda_min, certified=loaded.certified)
            stats = honest_statistics(channel, scheme)
        else:
            res = solve_instance(scheme, channel, cfg.solver.fw_options())
            cert, stats, cached = res.certificate, res.stats, False
            save_certificate(path, cert, scheme, channel)
    except (SolverError, CertificateError, OSError, ValueError) as exc:
        row.update(status=f"{type(exc).__name__}: {exc}", rate=math.nan)
        return row
    leak = ec_leak_rate(stats.ec, cfg.protocol.ec_inefficiency, 1.0)
    meta = cert.meta
    row.update(
        rate=asymptotic_rate(cert, stats, leak), primal_ub=cert.primal_ub,
        lower_bound=cert.bound_at(stats.pe, stats.tom), gap=meta.get("gap", math.nan),
        eps_prime=cert.eps_prime, iterations=meta.get("iterations", ""),
        lambda_min=meta.get("lambda_min", math.nan), certified=meta.get("certified", ""),
        from_cache=cached, status="ok",
    )
    return row


def _run_tasks(fn: Callable, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def run_asymptotic(cfg: RunConfig, cache_dir: Path, workers: int = 1) -> list[dict]:
    """One row per (distance, alpha), solving or loading certificates."""
    tasks = [(cfg, ch, sc, str(cache_dir)) for ch, sc in _points(cfg)]
    rows = _run_tasks(_asymptotic_point, tasks, workers)
    rows.sort(key=lambda r: (r["distance_km"], r["alpha"]))
    for d in sorted({r["distance_km"] for r in rows}):
        group = [r for r in rows if r["distance_km"] == d and r["status"] == "ok"]
        if group:
            max(group, key=lambda r: (r["rate"], -r["alpha"]))["best_alpha"] = True
    return rows


def cmd_asymptotic(cfg: RunConfig, args) -> int:
    rows = run_asymptotic(cfg, Path(args.cache), args.workers)
    out = Path(args.out) / "asymptotic.csv"
    _write_csv(out, ASYMPTOTIC_COLUMNS, rows)
    for r in rows:
        mark = "*" if r["best_alpha"] else " "
        print(f"{mark} D={r['distance_km']:g} km alpha={r['alpha']:g} rate={r['rate']:.6g} "
              f"[{r['status']}]")
    print(f"wrote {out}")
    return EXIT_SOLVER if any(r["status"] != "ok" for r in rows) else EXIT_OK


# --------------------------------------------------------------------------
# finite-size sweep

def _load_certificates(cfg: RunConfig, channel: HonestChannel, cache_dir: Path):
    certs = {}
    for scheme in cfg.scheme.schemes():
        path = cache_dir / certificate_filename(scheme, channel)
        if not path.exists():
            raise CliError(f"no certificate for D={channel.distance_km:g} km, "
                           f"alpha={scheme.alpha:g} in {cache_dir}; run the 'asymptotic' "
                           "command with the same config first", EXIT_IO)
        loaded = load_certificate(path, expected_scheme=scheme)
        if not loaded.certified:
            raise CliError(f"certificate {path} fails verification "
                           f"(lambda_min {loaded.lambda_min:.3e})", EXIT_INVALID)
        certs[scheme.alpha] = (loaded.certificate, honest_statistics(channel, scheme))
    return certs


def run_finite(cfg: RunConfig, cache_dir: Path) -> list[dict]:
    """Grid-optimized finite rate per (distance, n) from cached certificates."""
    sec, proto, sch = cfg.security, cfg.protocol, cfg.scheme
    m = sch.schemes()[0].m
    rows = []
    for channel in sorted(cfg.channel.channels(), key=lambda c: c.distance_km):
        certs = _load_certificates(cfg, channel, cache_dir)
        for n in sorted(sec.n_rounds_grid):
            row = {
                "distance_km": channel.distance_km,
                "attenuation_db_per_km": channel.attenuation_db_per_km,
                "excess_noise_snu": channel.excess_noise, "delta_amp": sch.delta_amp,
                "delta_mod": sch.delta_mod, "cutoff": sch.cutoff,
                "ec_inefficiency": proto.ec_inefficiency,
                "leak_scales_with_p_key": proto.leak_scales_with_p_key, "n_rounds": n,
                "eps": sec.eps, "eps_phys_na": sec.eps_phys_na, "eps_tom": sec.eps_tom,
                "eps_ec": sec.eps_ec, "eps_ec_c": sec.eps_ec_c, "eps_pe_c": sec.eps_pe_c,
                "output_alphabet_size": sec.output_alphabet_size or "",
            }
            try:
                pt = optimize_rate(certs, sec.params(n), m, proto.ec_inefficiency,
                                   sec.renyi_a_grid, sec.p_key_grid, sec.p_pe_cond_grid,
                                   sec.output_alphabet_size, proto.leak_scales_with_p_key)
            except (SecurityParamError, ValueError) as exc:
                row.update(status=f"{type(exc).__name__}: {exc}", finite_rate=math.nan)
            else:
                row.update(alpha=pt.alpha, renyi_a=pt.a, p_key=pt.p_key,
                           p_pe_cond=pt.p_pe_cond, asymptotic_rate=pt.asymptotic_rate,
                           finite_rate=pt.finite_rate, delta_pe=pt.delta_pe,
                           delta_tom=pt.delta_tom, status="ok")
            rows.append(row)
    return rows


def cmd_finite(cfg: RunConfig, args) -> int:
    rows = run_finite(cfg, Path(args.cache))
    out = Path(args.out) / "finite.csv"
    _write_csv(out, FINITE_COLUMNS, rows)
    for r in rows:
        print(f"D={r['distance_km']:g} km n={r['n_rounds']:.0e} rate={r['finite_rate']:.6g} "
              f"[{r['status']}]")
    print(f"wrote {out}")
    return EXIT_INVALID if any(r["status"] != "ok" for r in rows) else EXIT_OK


# --------------------------------------------------------------------------
# verify

def verify_report(path: Path, expected_scheme: ModulationScheme | None = None) -> dict:
    """Re-derive dual feasibility and constant-term consistency of a certificate file."""
    loaded = load_certificate(path, expected_scheme=expected_scheme)
    cert = loaded.certificate
    ctx = build_context(loaded.scheme.cutoff)
    f_val, grad = objective_and_gradient(cert.rho, ctx)
    g0_raw = f_val - float(np.real(np.vdot(grad, cert.rho)))
    g0_max = g0_raw - cert.eps_prime * float(np.abs(cert.nu).sum()) - perturbation_penalty(ctx)
    slack = 1e-9 * max(1.0, abs(g0_max))
    return {
        "path": str(path),
        "operator_hash": loaded.operator_hash,
        "lambda_min": loaded.lambda_min,
        "certified": loaded.certified,
        "eps_prime": cert.eps_prime,
        "eps_prime_ok": 0.0 < cert.eps_prime < 1.0,
        "g0": cert.g0,
        "g0_max": g0_max,
        "g0_ok": cert.g0 <= g0_max + slack,
    }


def cmd_verify(cfg: RunConfig | None, args) -> int:
    expected = cfg.scheme.schemes()[0] if cfg is not None else None
    rep = verify_report(Path(args.certificate), expected)
    ok = rep["certified"] and rep["eps_prime_ok"] and rep["g0_ok"]
    for k, v in rep.items():
        print(f"{k}: {v}")
    print("CERTIFIED" if ok else "UNCERTIFIED")
    return EXIT_OK if ok else EXIT_INVALID


# --------------------------------------------------------------------------
# Monte Carlo checks

def sampling_check(channel: HonestChannel, scheme: ModulationScheme, n: int, seed: int,
                   reference: HonestChannel | None = None) -> list[tuple[str, float]]:
    """Largest binomial z-score of sampled vs analytic cells, for PE and key tables."""
    counts = sample_rounds(channel, scheme, n, seed=seed)
    stats = honest_statistics(reference or channel, scheme)
    out = []
    for name, freq, p in (("pe", counts.pe_freq, stats.pe), ("key", counts.key_freq, stats.ec)):
        sd = np.sqrt(np.clip(p * (1 - p), 1e-300, None) / n)
        out.append((name, float(np.max(np.abs(freq - p) / sd))))
    return out


def concentration_violation_rate(pi: np.ndarray, h: np.ndarray, n: int, eps_fail: float,
                                 trials: int, rng: np.random.Generator) -> tuple[float, float]:
    """Fraction of multinomial draws whose ``h``-mean deviates by more than the bound.

    Returns ``(violation_rate, bound)``.
    """
    bound = multinoulli_deviation(pi, h, n, eps_fail)
    counts = rng.multinomial(n, pi, size=trials)
    dev = np.abs(counts @ h / n - float(np.dot(pi, h)))
    return float(np.mean(dev > bound)), bound


def cmd_mc_check(cfg: RunConfig, args) -> int:
    mc = cfg.mc
    seeds = np.random.SeedSequence(args.seed)
    failed = False
    for (channel, scheme), ss in zip(_points(cfg), seeds.spawn(len(_points(cfg)))):
        reference = None
        if args.reference_excess_noise is not None:
            reference = HonestChannel(channel.distance_km, channel.attenuation_db_per_km,
                                      args.reference_excess_noise)
        sample_seed = int(ss.generate_state(1)[0])
        for name, z in sampling_check(channel, scheme, mc.n_samples, sample_seed, reference):
            ok = z <= mc.z_threshold
            failed |= not ok
            print(f"{'ok  ' if ok else 'FAIL'} sampling D={channel.distance_km:g} "
                  f"alpha={scheme.alpha:g} {name}: max |z| = {z:.3f} "
                  f"(limit {mc.z_threshold:g}, n={mc.n_samples})")
        stats = honest_statistics(channel, scheme)
        rng = np.random.default_rng(ss.spawn(1)[0])
        # test-round share 0.1, as in a sparse-testing protocol
        for name, table in (("pe", 0.1 * stats.pe.ravel()), ("tom", 0.1 * stats.tom)):
            pi = np.append(table, max(0.0, 1.0 - table.sum()))
            pi /= pi.sum()
            h = np.append(rng.uniform(-1.0, 0.0, table.size), 0.0)
            eps_fail = 1e-2
            rate, bound = concentration_violation_rate(pi, h, mc.concentration_n, eps_fail,
                                                       mc.concentration_trials, rng)
            ok = rate <= eps_fail
            failed |= not ok
            print(f"{'ok  ' if ok else 'FAIL'} concentration D={channel.distance_km:g} "
                  f"alpha={scheme.alpha:g} {name}: violation rate {rate:.2e} "
                  f"(eps {eps_fail:g}, bound {bound:.3e}, n={mc.concentration_n})")
    return EXIT_INVALID if failed else EXIT_OK


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration (defaults if omitted)")
    common.add_argument("--out", default="results", help="output directory for CSV files")
    common.add_argument("--cache", default=None,
                        help="certificate directory (default: OUT/certificates)")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    common.add_argument("--seed", type=int, default=0, help="seed for Monte Carlo checks")
    parser = argparse.ArgumentParser(prog="dmcvqkd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("operators", parents=[common], help="build operators and check identities")
    sub.add_parser("asymptotic", parents=[common], help="certified asymptotic rates")
    sub.add_parser("finite", parents=[common], help="finite-size rates from certificates")
    ver = sub.add_parser("verify", parents=[common], help="re-verify a certificate file")
    ver.add_argument("certificate", help="certificate JSON file")
    mcp = sub.add_parser("mc-check", parents=[common], help="Monte Carlo oracle checks")
    mcp.add_argument("--reference-excess-noise", type=float, default=None,
                     help="excess noise used for the analytic reference (sensitivity test)")
    return parser


COMMANDS = {
    "operators": cmd_operators,
    "asymptotic": cmd_asymptotic,
    "finite": cmd_finite,
    "verify": cmd_verify,
    "mc-check": cmd_mc_check,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.cache is None:
        args.cache = str(Path(args.out) / "certificates")
    if args.workers < 1 or not 0 <= args.seed < 2 ** 64:
        print("error: --workers must be >= 1 and --seed must fit in 64 bits", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config)
        if args.command == "verify" and args.config is None:
            cfg = None
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, CertificateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
