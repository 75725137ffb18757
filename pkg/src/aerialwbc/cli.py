"""Command-line front end: scenario runs, integral ablations, model checks.

Exit codes: 0 success, 1 failed validation property, 2 bad configuration,
3 a control step fell back to the gravity hold.  Output files are written
atomically (temp file + rename); figures are rendered from the CSV after it
is on disk.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import dynamics_terms, forward_dynamics, total_energy
from .kinematics import SystemState, rotation_exp
from .model import ParseError, ValidationError, load_gains, load_model
from .simulator import (RunLog, _atomic_write, _plant_substeps, load_scenario,
                        run_scenario)

log = logging.getLogger("aerialwbc")

_DATA = resources.files("aerialwbc") / "data"


def _default(name: str) -> str:
    return str(_DATA / name)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default=_default("model.yaml"),
                   help="model description file")
    p.add_argument("--gains", default=_default("gains.yaml"),
                   help="controller gains file")
    p.add_argument("--scenario", required=True, help="scenario file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.add_argument("--integral", choices=["on", "off"], default=None,
                   help="override the scenario's integral_enabled flag")
    p.add_argument("--duration", type=float, default=None,
                   help="override scenario duration [s]")
    p.add_argument("--no-plots", action="store_true",
                   help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="aerialwbc",
        description="Whole-body QP control simulation for a quadrotor-arm system")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario, write CSV + summary")
    _add_common(p_run)

    p_abl = sub.add_parser("ablate",
                           help="run a scenario with integral on and off, compare")
    _add_common(p_abl)

    p_val = sub.add_parser("validate", help="check a model file and its dynamics")
    p_val.add_argument("--model", default=_default("model.yaml"))

    p_plot = sub.add_parser("plot", help="render figures from an existing run CSV")
    p_plot.add_argument("csv", help="run CSV file")
    p_plot.add_argument("--out", default=None,
                        help="figure directory (default: next to the CSV)")
    return ap


def _load_inputs(args):
    if not Path(args.model).exists():
        raise ParseError(f"model: {args.model} not found")
    if not Path(args.gains).exists():
        raise ParseError(f"gains_path: {args.gains} not found")
    if not Path(args.scenario).exists():
        raise ParseError(f"scenario: {args.scenario} not found")
    model = load_model(args.model)
    gains = load_gains(args.gains, n=model.n_joints)
    cfg = load_scenario(args.scenario, model)
    return model, gains, cfg


def _integral_flag(args):
    if args.integral is None:
        return None
    return args.integral == "on"


def _finish_run(log_: RunLog, out_dir: Path, stem: str, plots: bool) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    log_.write_csv(csv_path)
    log_.write_summary(out_dir / f"{stem}_summary.json")
    if plots:
        from . import plots as _plots
        _plots.render_run(csv_path, out_dir / "figures")
    return csv_path


def cmd_run(args) -> int:
    model, gains, cfg = _load_inputs(args)
    result = run_scenario(model, gains, cfg, integral=_integral_flag(args),
                          duration=args.duration, seed=args.seed)
    out_dir = Path(args.out)
    _finish_run(result, out_dir, cfg.name, not args.no_plots)
    print(json.dumps(result.metrics, indent=2, sort_keys=True))
    if result.metrics["gravity_hold_steps"] > 0:
        log.warning("run hit the gravity-hold fallback on %d steps",
                    result.metrics["gravity_hold_steps"])
        return 3
    return 0


def cmd_ablate(args) -> int:
    model, gains, cfg = _load_inputs(args)
    out_dir = Path(args.out)
    on = run_scenario(model, gains, cfg, integral=True,
                      duration=args.duration, seed=args.seed)
    off = run_scenario(model, gains, cfg, integral=False,
                       duration=args.duration, seed=args.seed)
    csv_on = _finish_run(on, out_dir, f"{cfg.name}_integral_on", not args.no_plots)
    csv_off = _finish_run(off, out_dir, f"{cfg.name}_integral_off", not args.no_plots)

    def ratio(a, b):
        return float(a / b) if b > 0 else float("inf")

    comparison = {
        "scenario": cfg.name,
        "rmse_base_on": on.metrics["rmse_base"],
        "rmse_base_off": off.metrics["rmse_base"],
        "rmse_ee_on": on.metrics["rmse_ee"],
        "rmse_ee_off": off.metrics["rmse_ee"],
        "mean_abs_yaw_error_on": on.metrics["mean_abs_yaw_error"],
        "mean_abs_yaw_error_off": off.metrics["mean_abs_yaw_error"],
        "ee_rmse_ratio_off_over_on": ratio(off.metrics["rmse_ee_norm"],
                                           on.metrics["rmse_ee_norm"]),
        "base_rmse_ratio_off_over_on": ratio(off.metrics["rmse_base_norm"],
                                             on.metrics["rmse_base_norm"]),
    }
    _atomic_write(out_dir / "ablation.json",
                  json.dumps(comparison, indent=2, sort_keys=True) + "\n")
    if not args.no_plots:
        from . import plots as _plots
        _plots.render_ablation(csv_on, csv_off, out_dir / "figures")

    hdr = f"{'metric':<28}{'integral on':>16}{'integral off':>16}"
    print(hdr)
    print("-" * len(hdr))
    for i, lab in enumerate("xyz"):
        print(f"{'base RMSE ' + lab + ' [m]':<28}"
              f"{on.metrics['rmse_base'][i]:>16.5f}"
              f"{off.metrics['rmse_base'][i]:>16.5f}")
    print(f"{'mean |yaw err| [rad]':<28}"
          f"{on.metrics['mean_abs_yaw_error']:>16.5f}"
          f"{off.metrics['mean_abs_yaw_error']:>16.5f}")
    for i, lab in enumerate("xyz"):
        print(f"{'ee RMSE ' + lab + ' [m]':<28}"
              f"{on.metrics['rmse_ee'][i]:>16.5f}"
              f"{off.metrics['rmse_ee'][i]:>16.5f}")
    print(f"{'ee RMSE ratio off/on':<28}"
          f"{comparison['ee_rmse_ratio_off_over_on']:>32.2f}")
    if (on.metrics["gravity_hold_steps"] or off.metrics["gravity_hold_steps"]):
        return 3
    return 0


def cmd_validate(args) -> int:
    try:
        model = load_model(args.model)
    except (ParseError, ValidationError) as e:
        print(f"FAIL load: {e}", file=sys.stderr)
        return 2
    print(f"loaded {args.model}: {model.n_joints} joints, "
          f"total mass {model.total_mass:.3f} kg")

    rng = np.random.default_rng(0)
    d = 6 + model.n_joints

    def random_state():
        return SystemState(
            p_B=rng.normal(size=3),
            R=rotation_exp(rng.normal(size=3)),
            q_M=rng.uniform(model.q_min * 0.8, model.q_max * 0.8),
            nu=rng.normal(size=d))

    def flow(s, h):
        return SystemState(s.p_B + s.v_B * h, s.R @ rotation_exp(s.omega_B * h),
                           s.q_M + s.qd_M * h, s.nu.copy())

    checks = []

    def check(name, fn):
        ok, detail = fn()
        checks.append((name, ok))
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok

    def sym_pd():
        worst_sym, min_eig = 0.0, np.inf
        for _ in range(200):
            t = dynamics_terms(model, random_state())
            worst_sym = max(worst_sym, float(np.max(np.abs(t.M - t.M.T))))
            min_eig = min(min_eig, float(np.linalg.eigvalsh(t.M)[0]))
        return (worst_sym <= 1e-10 and min_eig > 0,
                f"max asymmetry {worst_sym:.2e}, min eigenvalue {min_eig:.2e}")

    def skewsym():
        h, worst = 1e-6, 0.0
        for _ in range(100):
            s = random_state()
            t = dynamics_terms(model, s)
            Mdot = (dynamics_terms(model, flow(s, h)).M
                    - dynamics_terms(model, flow(s, -h)).M) / (2 * h)
            worst = max(worst, abs(s.nu @ ((Mdot - 2 * t.C) @ s.nu))
                        / float(s.nu @ s.nu))
        return worst <= 1e-5, f"max |nu^T (Mdot-2C) nu| / |nu|^2 = {worst:.2e}"

    def energy():
        s = SystemState(np.array([0.0, 0.0, 2.0]),
                        rotation_exp(np.array([0.2, -0.1, 0.3])),
                        np.clip(0.3 * np.ones(model.n_joints),
                                model.q_min, model.q_max),
                        0.3 * np.ones(d))
        e0 = total_energy(model, s)
        for _ in range(100):
            s = _plant_substeps(model, s, np.zeros(4),
                                np.zeros(model.n_joints), 1e-3, 5, 0.0)
        drift = abs(total_energy(model, s) - e0) / abs(e0)
        return drift <= 1e-6, f"relative drift over 0.5 s = {drift:.2e}"

    def roundtrip():
        from .dynamics import inverse_dynamics
        worst = 0.0
        for _ in range(200):
            s = random_state()
            t = dynamics_terms(model, s)
            nudot = rng.normal(size=d)
            u = inverse_dynamics(t, nudot, s.nu, np.zeros(d), np.zeros((d, d)))
            worst = max(worst, float(np.max(np.abs(
                forward_dynamics(model, s, u) - nudot))))
        return worst <= 1e-8, f"max reconstruction error {worst:.2e}"

    for name, fn in (("mass-matrix symmetry/positivity", sym_pd),
                     ("coriolis skew-symmetry", skewsym),
                     ("energy conservation", energy),
                     ("inverse/forward round trip", roundtrip)):
        if not check(name, fn):
            return 1
    return 0


def cmd_plot(args) -> int:
    csv_path = Path(args.csv)
    if not csv_path.exists():
        print(f"csv: {csv_path} not found", file=sys.stderr)
        return 2
    from . import plots as _plots
    out = Path(args.out) if args.out else csv_path.parent / "figures"
    written = _plots.render_run(csv_path, out)
    for p in written:
        print(p)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("AERIALWBC_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "plot":
            return cmd_plot(args)
    except (ParseError, ValidationError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
