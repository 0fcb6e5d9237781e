"""Command-line entry point.

Exit codes: 0 success, 2 config or input error, 3 numerical failure,
4 audit failure.
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import ConfigError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_AUDIT = 4


def _run_one(source, out, decimate, svg, audit):
    """Run one scenario and write its outputs; returns ``(exit_code, message)``."""
    from . import report, scenarios

    try:
        cfg = scenarios.load_scenario(source)
    except ConfigError as exc:
        return EXIT_CONFIG, f"config error: {exc}"
    try:
        result = scenarios.run(cfg, audit=audit)
    except NumericalError as exc:
        return EXIT_NUMERICAL, f"{cfg.name}: numerical failure: {exc}"
    os.makedirs(out, exist_ok=True)
    base = os.path.join(out, cfg.name)
    every = cfg.decimate if decimate is None else decimate
    traj = result.trajectory.subsample(every)
    report.write_csv(traj, base + ".csv")
    extra = {"scenario": cfg.name, "controller": cfg.controller, "model": cfg.model,
             "decimate": every}
    if cfg.controller == "flexible_two_phase":
        extra["k_x"] = cfg.flex.k_x
    report.write_meta(report.meta_path(base + ".csv"), cfg.params, cfg.integrator.h, extra)
    metrics = dict(result.metrics)
    if result.audit is not None:
        metrics["audit"] = result.audit.to_dict()
    report.write_json(base + ".metrics.json", metrics)
    if svg:
        report.write_svg(traj, cfg.params, base + ".svg")
    lines = [f"{cfg.name}: wrote {base}.csv ({len(traj)} rows)"]
    for key in ("final_e_q", "final_e_R", "final_e_x", "late_tension_error", "vibration_index",
                "final_position_error_rel"):
        if metrics.get(key) is not None:
            lines.append(f"  {key} = {metrics[key]:.4g}")
    if result.audit is not None:
        a = result.audit
        lines.append(f"  audit {'passed' if a.passed else 'FAILED'}: "
                     f"drift {a.max_constraint_drift:.2e}, EL residual "
                     f"{a.max_el_residual:.2e}, bound violations {a.bound_violations}")
        if not a.passed:
            return EXIT_AUDIT, "\n".join(lines)
    return EXIT_OK, "\n".join(lines)


def cmd_run(args):
    if args.decimate is not None and args.decimate < 1:
        print("--decimate must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    jobs = [(s, args.out, args.decimate, args.svg, args.audit) for s in args.scenario]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*j) for j in jobs]
    code = EXIT_OK
    for rc, msg in results:
        print(msg, file=sys.stdout if rc == EXIT_OK else sys.stderr)
        code = max(code, rc)
    return code


def cmd_gains(args):
    from . import scenarios
    from .verify import lyapunov_certificate

    try:
        cfg = scenarios.load_scenario(args.scenario)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    np.set_printoptions(precision=6, suppress=True, linewidth=160)
    if cfg.controller == "flexible_two_phase":
        try:
            g = scenarios.stabilizer_gains(cfg)
        except NumericalError as exc:
            print(f"gain synthesis failed: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"K_x ({g.K_x.shape[0]}x{g.K_x.shape[1]}):\n{g.K_x}")
        print(f"K_xd ({g.K_xd.shape[0]}x{g.K_xd.shape[1]}):\n{g.K_xd}")
        print(f"closed-loop max real part: {g.max_real:.6f} (certified below {-g.margin})")
        return EXIT_OK
    gn = cfg.gains
    print(f"direction loop: k_q = {gn.k_q}, k_w = {gn.k_w}, c_q = {gn.c_q}")
    print(f"attitude loop: k_R = {gn.k_R}, k_Om = {gn.k_Om}, eps = {gn.eps}")
    cert = lyapunov_certificate(gn, 1.0)
    print(f"P_lower:\n{cert.P_lower}\nP_upper:\n{cert.P_upper}\nW_q:\n{cert.W_q}")
    print(f"certificate valid: {cert.is_valid}")
    return EXIT_OK if cert.is_valid else EXIT_NUMERICAL


def cmd_verify(args):
    from . import report
    from .verify import audit

    meta_file = args.meta or report.meta_path(args.csv)
    try:
        traj = report.read_csv(args.csv)
        meta = report.read_meta(meta_file)
    except (OSError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if meta["params"].n != traj.n:
        print(f"input error: {meta_file} describes {meta['params'].n} links, "
              f"the CSV has {traj.n}", file=sys.stderr)
        return EXIT_CONFIG
    rep = audit(meta["params"], traj, k_x=meta.get("k_x"), hold=meta.get("h"))
    for key, val in rep.to_dict().items():
        print(f"{key}: {val}")
    return EXIT_OK if rep.passed else EXIT_AUDIT


def build_parser():
    p = argparse.ArgumentParser(prog="tetherquad",
                                description="Tethered quadrotor simulation and control.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate scenarios from config files or presets")
    r.add_argument("scenario", nargs="+", help="config file or preset (fig2, fig3, fig4, fig5)")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.add_argument("--svg", action="store_true", help="also write an SVG plot")
    r.add_argument("--decimate", type=int, default=None,
                   help="keep every N-th step in the CSV (default: config, 10)")
    r.add_argument("--audit", action="store_true", help="run the trajectory audits")
    r.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gains", help="print the synthesized feedback gains")
    g.add_argument("scenario", help="config file or preset")
    g.set_defaults(func=cmd_gains)

    v = sub.add_parser("verify", help="re-run the audits on a trajectory CSV")
    v.add_argument("csv", help="trajectory CSV written by 'run'")
    v.add_argument("--meta", default=None, help="metadata JSON (default: <csv>.meta.json)")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
