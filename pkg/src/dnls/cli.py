"""Command-line entry point: simulate, rays, check-geometry, scatter.

Exit codes: 0 success, 2 configuration error, 3 stability abort,
4 negative verdict under --strict. Each run owns its output directory and
writes a manifest.json listing every file produced plus the config hash;
partial outputs after an abort are flagged status=incomplete.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STABILITY = 3
EXIT_VERDICT = 4

_FLOAT_FMT = "%.17g"


def _fmt(x: float) -> str:
    return _FLOAT_FMT % x


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _tool_versions() -> dict:
    import scipy

    from . import __version__

    return {
        "package": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": sys.version.split()[0],
    }


class _RunDir:
    """Output directory plus the manifest bookkeeping."""

    def __init__(self, out_dir: Path, subcommand: str, config_hash: str, seed: int):
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.warnings: list[str] = []
        self.manifest = {
            "created_utc": _utc_now(),
            "tool": _tool_versions(),
            "subcommand": subcommand,
            "config_hash": config_hash,
            "seed": seed,
            "status": "incomplete",
            "files": self.files,
            "warnings": self.warnings,
        }
        self.write_manifest()

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.dir / name

    def write_manifest(self) -> None:
        with open(self.dir / "manifest.json", "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def finalize(self, status: str = "complete", extra: dict | None = None) -> None:
        self.manifest["status"] = status
        if extra:
            self.manifest.update(extra)
        self.write_manifest()


def _write_series_csv(run: _RunDir, name: str, times, values) -> None:
    with open(run.path(f"series_{name}.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "value"])
        for t, v in zip(times, values):
            writer.writerow([_fmt(t), _fmt(v)])


def _write_matrix_csv(run: _RunDir, name: str, times, matrix) -> None:
    with open(run.path(name), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [_fmt(t) for t in times])
        for t, row in zip(times, matrix):
            writer.writerow([_fmt(t)] + [_fmt(v) for v in row])


def _control_report_dict(report) -> dict:
    return {
        "satisfied": bool(report.satisfied),
        "violation_count": report.violation_count,
        "delta0": None if np.isinf(report.delta0) else report.delta0,
        "support_count": report.support_count,
    }


def _cmd_check_geometry(args, cfg) -> int:
    from .geometry import check_control, coercivity_constant, gradient_bound_constant

    spec = cfg.grid_spec()
    metric, damping = cfg.build_geometry(spec)
    report = check_control(metric, damping, cfg.geometry.g_tol, cfg.geometry.a_min)
    payload = {
        "preset": cfg.geometry.preset,
        "control": _control_report_dict(report),
        "coercivity_constant": coercivity_constant(metric),
        "gradient_bound_constant_eps_0.01": gradient_bound_constant(damping, 0.01),
    }
    if args.out:
        run = _RunDir(Path(args.out), "check-geometry", cfg.config_hash(),
                      cfg.run.seed)
        with open(run.path("geometry_report.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        run.finalize()
    if not args.quiet:
        print(json.dumps(payload, indent=2, sort_keys=True))
    if args.strict and not report.satisfied:
        return EXIT_VERDICT
    return EXIT_OK


def _cmd_rays(args, cfg) -> int:
    from .geometry import check_control
    from .rays import sample_ensemble, verify_exterior_control

    spec = cfg.grid_spec()
    metric, damping = cfg.build_geometry(spec)
    x0, xi0 = sample_ensemble(
        spec.dim, cfg.rays.count, cfg.rays.sample_radius,
        seed=cfg.run.seed, mode=cfg.rays.sampling,
    )
    escape_radius = cfg.resolved_escape_radius(metric, damping)
    summary = verify_exterior_control(
        metric, damping, x0, xi0,
        horizon=cfg.rays.horizon, dt=cfg.rays.dt,
        escape_radius=escape_radius, a_min=cfg.geometry.a_min,
    )
    run = _RunDir(Path(args.out), "rays", cfg.config_hash(), cfg.run.seed)
    with open(run.path("config.ini"), "w") as fh:
        fh.write(cfg.to_text())
    with open(run.path("rays.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = spec.dim
        header = (
            [f"x0_{j}" for j in range(dim)]
            + [f"xi0_{j}" for j in range(dim)]
            + ["fate", "t_exit", "t_first_hit", "time_in_control",
               "hamiltonian_drift"]
        )
        writer.writerow(header)
        for i, fate in enumerate(summary.fates):
            writer.writerow(
                [_fmt(v) for v in summary.x0[i]]
                + [_fmt(v) for v in summary.xi0[i]]
                + [fate.kind, _fmt(fate.t_exit), _fmt(fate.t_first_hit),
                   _fmt(fate.time_in_control), _fmt(fate.hamiltonian_drift)]
            )
    control = check_control(metric, damping, cfg.geometry.g_tol, cfg.geometry.a_min)
    run.finalize(extra={
        "counts": summary.counts,
        "exterior_control_holds": summary.exterior_control_holds,
        "escape_radius": escape_radius,
        "control": _control_report_dict(control),
    })
    if not args.quiet:
        print(f"ray ensemble: {summary.counts} (escape radius {escape_radius:g})")
    if args.strict and not summary.exterior_control_holds:
        return EXIT_VERDICT
    return EXIT_OK


def _run_standard_simulation(args, cfg, run: _RunDir):
    from .errors import ConfigError
    from .geometry import check_control
    from .grid import weight_tables
    from .observables import (
        energy_lambda_bound_check,
        energy_law_residual,
        energy_law_residual_flux_form,
        interaction_inequality_check,
        l4_accumulator,
        lambda_accumulator,
        mass_law_residual,
        morawetz_rate_residual,
        standard_monitors,
    )
    from .snapshots import read_snapshot, write_snapshot
    from .solver import simulate

    spec = cfg.grid_spec()
    metric, damping = cfg.build_geometry(spec)
    tables = weight_tables(spec)
    control = check_control(metric, damping, cfg.geometry.g_tol, cfg.geometry.a_min)
    solver_cfg = cfg.solver_config()

    if args.resume:
        u0, t0 = read_snapshot(args.resume)
        if u0.spec != spec:
            raise ConfigError(
                f"snapshot grid {u0.spec} does not match configured grid {spec}"
            )
    else:
        u0, t0 = cfg.initial_field(spec), 0.0

    cutoff = cfg.cutoff(spec)
    monitors = standard_monitors(
        metric, damping, tables,
        record_every=cfg.observables.record_every,
        interaction_every=cfg.observables.interaction_every,
        local_radius=cfg.observables.local_radius,
        cutoff=cutoff,
        cutoff_exponents=cfg.observables.cutoff_exponents,
        nonlinearity=solver_cfg.nonlinearity,
        g_tol=cfg.geometry.g_tol,
        a_min=cfg.geometry.a_min,
    )

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = simulate(
            u0, metric, damping, solver_cfg,
            monitors=monitors,
            snapshot_every=cfg.scattering.snapshot_every,
            t0=t0,
            control_satisfied=control.satisfied,
        )
    for w in caught:
        run.warnings.append(str(w.message))

    for name, series in result.series.items():
        _write_series_csv(run, name, series.times, series.values)

    snapshot_files = []
    for idx, (t, field) in enumerate(result.snapshots):
        name = f"snap_{idx:06d}.dnls"
        write_snapshot(run.path(name), field, t)
        snapshot_files.append(name)

    series = result.series
    reports: dict = {"control": _control_report_dict(control)}
    r_mass = mass_law_residual(series["mass"], series["damping_mass"])
    _write_series_csv(run, r_mass.name, r_mass.times, r_mass.values)
    reports["mass_law_max_residual"] = float(np.max(np.abs(r_mass.values)))
    r_energy = energy_law_residual(
        series["energy"], series["damping_energy"], series["mass_lapGa"]
    )
    _write_series_csv(run, r_energy.name, r_energy.times, r_energy.values)
    reports["energy_law_max_residual"] = float(np.max(np.abs(r_energy.values)))
    r_energy_alt = energy_law_residual_flux_form(
        series["energy"], series["damping_energy"], series["energy_flux_alt"]
    )
    reports["energy_law_two_form_gap"] = float(
        np.max(np.abs(r_energy.values - r_energy_alt.values))
    )
    lam = lambda_accumulator(series["lambda_density"])
    _write_series_csv(run, "lambda", lam.times, lam.values)
    bound = energy_lambda_bound_check(
        series["energy"], lam, metric, damping, tables
    )
    reports["energy_lambda_bound"] = {
        "passed": bound.passed,
        "constant": bound.constant,
        "worst_margin": bound.worst_margin,
        "worst_time": bound.worst_time,
    }
    try:
        mor = morawetz_rate_residual(
            series["virial"], series["virial_rhs"], series.get("morawetz_proxy")
        )
        _write_series_csv(run, mor.residual.name, mor.residual.times,
                          mor.residual.values)
        reports["morawetz_rate"] = {
            "max_residual": float(np.max(np.abs(mor.residual.values))),
            "fitted_constant": mor.fitted_constant,
        }
    except Exception as exc:  # sparse cadence: report instead of failing the run
        reports["morawetz_rate"] = {"error": str(exc)}
    l4_report = l4_accumulator(series["l4"])
    _write_series_csv(run, "l4_accumulator", l4_report.accumulator.times,
                      l4_report.accumulator.values)
    reports["l4_tail"] = {
        "tail_fraction": l4_report.tail_fraction,
        "bounded": l4_report.bounded,
    }
    inter = interaction_inequality_check(
        series["l4"], series["interaction"], series["h1_sq"], series["supp_a_h1"]
    )
    reports["interaction_inequality"] = {
        "passed": inter.passed,
        "fitted_constant": inter.fitted_constant,
        "worst_margin": inter.worst_margin,
    }
    with open(run.path("reports.json"), "w") as fh:
        json.dump(reports, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result, control, reports, snapshot_files


def _cmd_simulate(args, cfg) -> int:
    from .errors import StabilityError

    run = _RunDir(Path(args.out), "simulate", cfg.config_hash(), cfg.run.seed)
    with open(run.path("config.ini"), "w") as fh:
        fh.write(cfg.to_text())
    try:
        result, control, reports, snapshot_files = _run_standard_simulation(
            args, cfg, run
        )
    except StabilityError as exc:
        run.warnings.append(str(exc))
        run.finalize(status="incomplete", extra={"error": str(exc)})
        if not args.quiet:
            print(f"stability abort: {exc}", file=sys.stderr)
        return EXIT_STABILITY
    run.finalize(extra={
        "final_time": result.state.t,
        "steps": result.state.step,
        "snapshots": snapshot_files,
        "boundary_mass_warned": result.boundary_mass_warned,
    })
    if not args.quiet:
        print(
            f"simulate: {result.state.step} steps to t={result.state.t:g}; "
            f"outputs in {run.dir}"
        )
    if args.strict and not control.satisfied:
        return EXIT_VERDICT
    return EXIT_OK


def _cmd_scatter(args, cfg_unused) -> int:
    from .config import parse_config
    from .scattering import extract_profile
    from .snapshots import read_snapshot, write_snapshot

    manifest_path = Path(args.manifest)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base = manifest_path.parent
    cfg = parse_config(base / "config.ini")
    snapshot_names = manifest.get("snapshots", [])
    if len(snapshot_names) < 3:
        print(
            f"manifest lists {len(snapshot_names)} snapshots; scatter needs >= 3 "
            "(set [scattering] snapshot_every > 0 in the simulate run)",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    snapshots = []
    for name in snapshot_names:
        field, t = read_snapshot(base / name)
        snapshots.append((t, field))
    snapshots.sort(key=lambda pair: pair[0])

    # default to a subdirectory so the simulate manifest is never clobbered
    out_dir = Path(args.out) if args.out else base / "scatter"
    run = _RunDir(out_dir, "scatter", cfg.config_hash(), cfg.run.seed)
    report = extract_profile(
        snapshots, cfg.scattering.s_values, cfg.scattering.tol_mono
    )
    for s in report.s_values:
        _write_matrix_csv(run, f"cauchy_s{s:g}.csv", report.times, report.cauchy[s])
        _write_series_csv(run, f"mismatch_s{s:g}", report.times, report.mismatch[s])
    write_snapshot(run.path("u_plus.dnls"), report.u_plus, report.times[-1])
    payload = {
        "s_values": list(report.s_values),
        "verdicts": {f"{s:g}": bool(v) for s, v in report.verdicts.items()},
        "final_mismatch": {f"{s:g}": report.final_mismatch[s] for s in report.s_values},
    }
    with open(run.path("scatter_report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    run.finalize(extra={"scatter": payload})
    if not args.quiet:
        print(json.dumps(payload["verdicts"], indent=2, sort_keys=True))
    if args.strict and not all(report.verdicts.values()):
        return EXIT_VERDICT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dnls",
        description="Damped variable-coefficient cubic NLS workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True, needs_out=True):
        if needs_config:
            p.add_argument("--config", required=True, help="run configuration file")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--strict", action="store_true",
                       help="nonzero exit on negative verdicts")
        p.add_argument("--quiet", action="store_true")

    p_sim = sub.add_parser("simulate", help="advance the PDE and record observables")
    common(p_sim)
    p_sim.add_argument("--resume", help="snapshot file to resume from")

    p_rays = sub.add_parser("rays", help="classify a Hamiltonian ray ensemble")
    common(p_rays)

    p_geo = sub.add_parser("check-geometry", help="validate the control condition")
    p_geo.add_argument("--config", required=True)
    p_geo.add_argument("--out", help="optional output directory")
    p_geo.add_argument("--strict", action="store_true")
    p_geo.add_argument("--quiet", action="store_true")

    p_scat = sub.add_parser("scatter", help="scattering analysis from a run manifest")
    p_scat.add_argument("--manifest", required=True,
                        help="manifest.json of a simulate run with snapshots")
    p_scat.add_argument("--out", help="output directory (default: run directory)")
    p_scat.add_argument("--strict", action="store_true")
    p_scat.add_argument("--quiet", action="store_true")

    return parser


def main(argv: list[str] | None = None) -> int:
    from .config import parse_config
    from .errors import ConfigError

    args = build_parser().parse_args(argv)
    try:
        if args.command == "scatter":
            return _cmd_scatter(args, None)
        cfg = parse_config(args.config)
        if args.command == "simulate":
            return _cmd_simulate(args, cfg)
        if args.command == "rays":
            return _cmd_rays(args, cfg)
        if args.command == "check-geometry":
            return _cmd_check_geometry(args, cfg)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
