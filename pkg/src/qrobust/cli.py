"""Command line front end.

Modes map onto the analysis entry points: certification of a quadratic
(theorem3) or scalar polynomial (theorem4) perturbation, brute-force
verification of the operator identities behind a certificate
(oracle_verify), parameter sweeps, and time-domain simulation.

Exit codes: 0 when the requested check passed (certificate issued, all
sweep points stable, all oracle checks passed, simulation completed),
2 when the analysis itself reports failure, 1 on bad input or errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import fock_oracle as fo
from . import moment_sim as ms
from .fileio import (
    SystemFileError,
    apply_override,
    build_from_raw,
    certificate_to_dict,
    dump_json,
    load_system,
)
from .model import (
    PolynomialPerturbation,
    QuadraticPerturbation,
    random_structured_positive,
)
from .sbr_analysis import (
    NotHurwitzError,
    QmiInfeasibleError,
    certify_polynomial,
    certify_quadratic,
    double_commutator_constant,
)

MODES = ("theorem3", "theorem4", "oracle_verify", "sweep", "simulate")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qrobust",
        description="Robust mean-square stability analysis of open quadratic quantum systems.",
    )
    p.add_argument("--system", required=True, type=Path, help="JSON or TOML model file")
    p.add_argument("--mode", required=True, choices=MODES, help="what to run")
    p.add_argument("--out", type=Path, default=Path("."), help="directory for output files")
    p.add_argument("--gamma", type=float, default=None, help="override the perturbation gain bound")
    p.add_argument(
        "--sweep",
        default=None,
        metavar="PARAM:LO:HI:N",
        help="dotted parameter path plus linspace range, e.g. coupling.kappa:3:8:11",
    )
    p.add_argument("--cutoff", type=int, default=None, help="Fock levels per mode for the oracle")
    p.add_argument("--guard", type=int, default=None, help="guard band width for the oracle")
    p.add_argument("--t-final", type=float, default=5.0, help="simulation end time")
    p.add_argument("--t-points", type=int, default=201, help="number of simulation grid points")
    p.add_argument(
        "--engine",
        choices=("moments", "oracle"),
        default="moments",
        help="simulate second moments exactly or the full master equation",
    )
    p.add_argument("--jobs", type=int, default=None, help="worker threads for sweeps")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized oracle checks")
    return p


def _with_gamma(pert, gamma):
    if gamma is None or pert is None:
        return pert
    return dataclasses.replace(pert, gamma=float(gamma))


def _certify(system, pert):
    if isinstance(pert, QuadraticPerturbation):
        return certify_quadratic(system, pert)
    if isinstance(pert, PolynomialPerturbation):
        return certify_polynomial(system, pert)
    raise SystemFileError("this mode needs a perturbation block in the system file")


def _print_certificate(cert) -> None:
    print(f"verdict: {cert.verdict}" + (f" ({cert.reason})" if cert.reason else ""))
    print(f"spectral abscissa of F: {cert.spectral_abscissa:.6g}")
    if not np.isnan(cert.hinf_norm):
        print(
            f"closed-loop gain: {cert.hinf_norm:.9g}  "
            f"(margin to gamma/2 = {cert.gamma / 2:.9g}: {cert.gamma_margin:.3g})"
        )
    if cert.stable:
        print(
            f"decay rate c = {cert.c:.6g}, lambda = {cert.lam:.6g}, "
            f"c1 = {cert.c1:.6g}, c3 = {cert.c3:.6g}"
        )


def _run_certify(args, system, pert, want) -> int:
    if want is QuadraticPerturbation and not isinstance(pert, QuadraticPerturbation):
        print("theorem3 mode needs a quadratic perturbation", file=sys.stderr)
        return 1
    if want is PolynomialPerturbation and not isinstance(pert, PolynomialPerturbation):
        print("theorem4 mode needs a polynomial perturbation", file=sys.stderr)
        return 1
    cert = _certify(system, pert)
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "certificate.json"
    dump_json(certificate_to_dict(cert), out_path)
    _print_certificate(cert)
    print(f"wrote {out_path}")
    return 0 if cert.stable else 2


def _make_space(args, system, pert) -> fo.FockSpace:
    cutoff = args.cutoff or fo.default_cutoff(system.n_modes)
    if args.guard is not None:
        guard = args.guard
    else:
        degree = 2
        if isinstance(pert, PolynomialPerturbation):
            degree = max(degree, pert.degree())
        guard = degree + 2
    return fo.FockSpace(system.n_modes, cutoff, guard=guard)


def _run_oracle_verify(args, system, pert) -> int:
    space = _make_space(args, system, pert)
    rng = np.random.default_rng(args.seed)
    dissipation = None
    mu_formula = None
    cert = None
    if pert is not None:
        try:
            cert = _certify(system, pert)
        except (NotHurwitzError, QmiInfeasibleError):
            cert = None
    if cert is not None and cert.stable:
        P = cert.P
        dissipation = (cert.c, cert.lambda_tilde)
        if isinstance(pert, PolynomialPerturbation):
            mu_formula = cert.mu
    else:
        P = random_structured_positive(system.n_modes, rng)
        if isinstance(pert, PolynomialPerturbation):
            from .model import doubled_J, doubled_Sigma

            mu_formula = double_commutator_constant(
                P.full(),
                pert.doubled_row(),
                doubled_J(system.n_modes),
                doubled_Sigma(system.n_modes),
            )
    checks = fo.identity_battery(
        space, system, pert=pert, P=P, mu_formula=mu_formula, dissipation=dissipation
    )
    report = {
        "space": {"n_modes": space.n_modes, "cutoff": space.cutoff, "guard": space.guard},
        "certificate_used": bool(cert is not None and cert.stable),
        "checks": [
            {
                "name": c.name,
                "kind": c.kind,
                "value": c.value,
                "tol": c.tol,
                "passed": c.passed,
            }
            for c in checks
        ],
        "all_passed": all(c.passed for c in checks),
    }
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "oracle_report.json"
    dump_json(report, out_path)
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "pass" if c.passed else "FAIL"
        print(f"{c.name:<{width}}  {c.kind:<8}  {c.value: .3e}  {status}")
    print(f"wrote {out_path}")
    return 0 if report["all_passed"] else 2


def _parse_sweep(spec: str):
    parts = spec.split(":")
    if len(parts) != 4:
        raise SystemFileError(f"--sweep must look like PARAM:LO:HI:N, got {spec!r}")
    path, lo, hi, n = parts
    try:
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise SystemFileError(f"--sweep range is not numeric: {spec!r}") from None
    if n < 1:
        raise SystemFileError("--sweep needs at least one point")
    return path, np.linspace(lo, hi, n)


def _run_sweep(args, raw) -> int:
    if args.sweep is None:
        print("sweep mode needs --sweep PARAM:LO:HI:N", file=sys.stderr)
        return 1
    path, values = _parse_sweep(args.sweep)

    def one(value: float):
        try:
            overridden = apply_override(raw, path, float(value))
            system, pert = build_from_raw(overridden)
            pert = _with_gamma(pert, args.gamma)
            cert = _certify(system, pert)
            return value, cert.hinf_norm, cert.gamma_margin, cert.verdict
        except Exception as exc:  # noqa: BLE001 - a sweep point must not kill the sweep
            return value, float("nan"), float("nan"), f"Error({type(exc).__name__})"

    jobs = args.jobs or min(8, len(values))
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        rows = list(pool.map(one, values))

    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "sweep.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([path, "hinf_norm", "gamma_margin", "verdict"])
        for value, norm, margin, verdict in rows:
            writer.writerow([f"{value:.12e}", f"{norm:.12e}", f"{margin:.12e}", verdict])
    n_stable = sum(1 for r in rows if r[3] == "RobustlyMeanSquareStable")
    print(f"{n_stable}/{len(rows)} points certified stable")
    print(f"wrote {out_path}")
    return 0 if n_stable == len(rows) else 2


def _run_simulate(args, system, pert) -> int:
    t_grid = np.linspace(0.0, args.t_final, args.t_points)
    cert = None
    if pert is not None:
        try:
            cert = _certify(system, pert)
        except (NotHurwitzError, QmiInfeasibleError):
            cert = None
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "trajectory.csv"

    if args.engine == "moments":
        if isinstance(pert, PolynomialPerturbation):
            print(
                "moment simulation needs a quadratic (or absent) perturbation; "
                "use --engine oracle for polynomial models",
                file=sys.stderr,
            )
            return 1
        F = ms.closed_loop_drift(system, pert)
        calib = ms.calibrate_noise(system, pert)
        if not calib.trusted:
            print(
                f"noise calibration residual {calib.residual:.3e} exceeds "
                f"{ms.CALIBRATION_TOL:.0e}",
                file=sys.stderr,
            )
            return 1
        Q0 = ms.vacuum_moments(system.n_modes)
        traj = ms.simulate_moments(F, calib.G, Q0, t_grid, certificate=cert)
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "tr_Q", "bound"])
            for t, tr, b in zip(traj.times, traj.trace, traj.bound):
                writer.writerow([f"{t:.12e}", f"{tr:.12e}", f"{b:.12e}"])
        print(f"tr Q: {traj.trace[0]:.6g} -> {traj.trace[-1]:.6g}")
    else:
        space = _make_space(args, system, pert)
        H = fo.nominal_hamiltonian(space, system)
        if pert is not None:
            H = H + fo.perturbation_hamiltonian(space, pert)
        L_ops = fo.coupling_operators(space, system)
        if cert is not None and cert.stable:
            Pf = cert.P.full()
        else:
            Pf = np.eye(2 * system.n_modes, dtype=complex)
        V = fo.lyapunov_operator(space, Pf)
        rho0 = fo.vacuum_state(space)
        traj = fo.simulate_master_equation(space, H, L_ops, rho0, t_grid, [V])
        v_exp = traj.expectations[:, 0].real
        if cert is not None and cert.stable:
            bound = np.exp(-cert.c * t_grid) * v_exp[0] + cert.lam / cert.c
        else:
            bound = np.full_like(t_grid, np.nan)
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "V_expectation", "bound", "leakage"])
            for t, v, b, leak in zip(traj.times, v_exp, bound, traj.leakage):
                writer.writerow([f"{t:.12e}", f"{v:.12e}", f"{b:.12e}", f"{leak:.3e}"])
        if not traj.trusted:
            print(f"warning: leakage reached {traj.leakage.max():.3e}", file=sys.stderr)
        print(f"<V>: {v_exp[0]:.6g} -> {v_exp[-1]:.6g}")
    print(f"wrote {out_path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        system, pert, raw = load_system(args.system)
        pert = _with_gamma(pert, args.gamma)
        if args.mode == "theorem3":
            return _run_certify(args, system, pert, QuadraticPerturbation)
        if args.mode == "theorem4":
            return _run_certify(args, system, pert, PolynomialPerturbation)
        if args.mode == "oracle_verify":
            return _run_oracle_verify(args, system, pert)
        if args.mode == "sweep":
            return _run_sweep(args, raw)
        return _run_simulate(args, system, pert)
    except (SystemFileError, NotHurwitzError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except QmiInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
