"""Command line interface: run | tau-study | eps-sweep | selftest.

Exit codes: 0 ok, 2 invariant violation, 3 solver failure, 4 configuration
error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import diagnostics, output, plotting
from .config import ConfigError, RunConfig
from .energy import ReducedEnergy, SolverFailure
from .refinement import tau_study
from .stepper import RunFailure, run
from .vanishing import viscosity_sweep

EXIT_OK, EXIT_INVARIANT, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3, 4
DEFAULT_PRESET = {"run": "ramp1d", "tau-study": "ramp1d", "eps-sweep": "homogeneous"}

log = logging.getLogger("vvdamage")


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors here, not invariant violations."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _load(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig.from_preset(args.preset or DEFAULT_PRESET.get(args.command, "ramp1d"))
    if args.seed is not None:
        cfg["run"]["seed"] = args.seed
    return cfg


def _prepare_out(path) -> Path:
    out = Path(path)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out: Path, cfg: RunConfig, traj, status: str, violations, figures: bool, extra=None) -> None:
    output.write_trajectory_csv(out / "trajectory.csv", traj)
    output.write_snapshots(out / "snapshots", traj, cfg["run"]["snapshot_every"])
    (out / "config.ini").write_text(cfg.to_text())
    data = {
        "status": status,
        "invariant_violations": violations,
        "n_steps_completed": traj.n_completed,
        "diagnostics": diagnostics.summary(traj),
        "config": cfg.values,
    }
    if extra:
        data.update(extra)
    output.write_json(out / "summary.json", data)
    if figures and traj.n_completed:
        plotting.plot_energetics(traj, out / "figures" / "energetics.png")
        plotting.plot_damage(traj, out / "figures" / "damage.png")


def run_single(cfg: RunConfig, out, figures: bool = True) -> int:
    out = _prepare_out(out)
    grid = cfg.grid()
    energy = ReducedEnergy(grid, cfg.model(), cfg.loads())
    z0 = cfg.z0(grid)
    try:
        traj = run(energy, cfg.solver(), z0)
    except RunFailure as exc:
        log.error("solver failure: %s", exc)
        _write_run(out, cfg, exc.trajectory, "solver_failure", [], figures, {"failure": str(exc)})
        return EXIT_SOLVER
    violations = traj.invariant_violations()
    status = "invariant_violation" if violations else "ok"
    _write_run(out, cfg, traj, status, violations, figures)
    for v in violations:
        log.error("%s", v)
    s = diagnostics.summary(traj)
    print(f"run: {traj.n_completed} steps, final energy {traj.energies()[-1]:.10g}, "
          f"worst per-step gap {s['worst_basic_gap']:.3e}, max KKT {s['max_kkt']:.3e} -> {status}")
    return EXIT_INVARIANT if violations else EXIT_OK


def run_tau_study(cfg: RunConfig, out, workers: int = 1, figures: bool = True) -> int:
    out = _prepare_out(out)
    grid = cfg.grid()
    study = tau_study(cfg.solver(), grid, cfg.model(), cfg.loads(), cfg.z0(grid),
                      cfg["tau_study"]["levels"], workers)
    output.write_rows(out / "tau_study.csv", ["level", "tau", "distance_to_next", "ratio", "order",
                                             "identity_defect"], study.rows())
    violations = []
    for j, traj in enumerate(study.trajectories):
        if traj is not None and study.failures[j] is None:
            violations += [f"tau = {study.taus[j]!r}: {v}" for v in traj.invariant_violations()]
    ratios = study.ratios
    data = {
        "taus": study.taus,
        "distances": study.distances,
        "ratios": ratios,
        "orders": study.orders,
        "identity_defects": study.defects,
        "final_ratio_le_0.75": bool(ratios and ratios[-1] <= 0.75),
        "failures": study.failures,
        "invariant_violations": violations,
        "config": cfg.values,
    }
    output.write_json(out / "tau_study.json", data)
    (out / "config.ini").write_text(cfg.to_text())
    if figures and study.distances:
        plotting.plot_tau_study(study.taus, study.distances, out / "figures" / "tau_study.png")
    print(f"{'tau':>12} {'distance':>14} {'ratio':>8} {'order':>7} {'defect':>12}")
    for _, tau, dist, ratio, order, defect in study.rows():
        print(f"{tau:12.6g} {dist:14.6e} {ratio:8.4f} {order:7.3f} {defect:12.4e}")
    if any(f is not None for f in study.failures):
        log.error("solver failures: %s", [f for f in study.failures if f])
        return EXIT_SOLVER
    return EXIT_INVARIANT if violations else EXIT_OK


def run_eps_sweep(cfg: RunConfig, out, workers: int = 1, figures: bool = True) -> int:
    out = _prepare_out(out)
    grid = cfg.grid()
    base = cfg.solver()
    report = viscosity_sweep(base, grid, cfg.model(), cfg.loads(), cfg.z0(grid), cfg.eps_levels(), workers)
    violations = []
    for lv in report.levels:
        if lv.ok:
            output.write_segments_csv(out / f"segments_eps_{lv.eps:.6g}.csv", lv.ptraj)
            violations += [f"eps = {lv.eps!r}: {v}" for v in lv.trajectory.invariant_violations()]
    data = report.to_dict()
    data["invariant_violations"] = violations
    data["config"] = cfg.values
    output.write_json(out / "sweep.json", data)
    (out / "config.ini").write_text(cfg.to_text())
    if figures and any(lv.ok for lv in report.levels):
        plotting.plot_sweep(report, out / "figures" / "sweep.png")
    print(f"{'eps':>10} {'tau':>10} {'S_eps':>12} {'jump':>5} {'r.i.':>5} {'stuck':>6} {'flagged':>8}")
    for lv in report.levels:
        if not lv.ok:
            print(f"{lv.eps:10.4g} {lv.tau:10.4g}  failed: {lv.failure}")
            continue
        h = lv.ptraj.regime_histogram()
        print(f"{lv.eps:10.4g} {lv.tau:10.4g} {lv.ptraj.S:12.8f} {h['jump']:5d} {h['rate_independent']:5d} "
              f"{h['stuck']:6d} {sum(lv.ptraj.flags):8d}")
    print(f"S_eps ratio (last 3) {report.s_ratio_last(3):.6f}; distances {['%.3e' % d for d in report.distances]}")
    if any(not lv.ok for lv in report.levels):
        return EXIT_SOLVER
    return EXIT_INVARIANT if violations else EXIT_OK


def run_selftest(seed: int) -> int:
    from .selftest import run_all

    results = run_all(seed)
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="configuration file (key = value with sections)")
    common.add_argument("--preset", help="preset used when no --config is given")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--workers", type=int, default=1, help="worker processes for studies and sweeps")
    common.add_argument("--seed", type=int, default=None, help="seed for randomized checks")
    common.add_argument("--no-figures", action="store_true", help="skip the matplotlib report")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="vvdamage", description="Viscous damage evolution and vanishing-viscosity studies.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="single run with per-step CSV and diagnostics")
    sub.add_parser("tau-study", parents=[common], help="time-step refinement at fixed eps")
    sub.add_parser("eps-sweep", parents=[common], help="vanishing-viscosity sweep in arclength")
    sub.add_parser("selftest", parents=[common], help="property checks against independent oracles")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "selftest":
        return run_selftest(0 if args.seed is None else args.seed)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    figures = not args.no_figures
    try:
        if args.command == "run":
            return run_single(cfg, args.out, figures)
        if args.command == "tau-study":
            return run_tau_study(cfg, args.out, args.workers, figures)
        return run_eps_sweep(cfg, args.out, args.workers, figures)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
