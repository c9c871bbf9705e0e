"""Command line entry point: ``plastopt run|verify|reanalyze|export``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

THREADS_ENV = "PLASTOPT_THREADS"


def _cmd_run(args) -> int:
    from .config import RunConfig
    from .runner import run

    cfg = RunConfig.load(args.config)
    if args.cycles is not None:
        cfg.optimization.max_cycles = args.cycles
    _, summary = run(cfg, args.out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if summary.get("constraints_satisfied") else 1


def _cmd_verify(args) -> int:
    from .verification import appendix_case, fd_check, mixed_sign_audit, path_refinement

    ok = True
    for load in ("point", "distributed"):
        mesh, bc, xbar, mat = appendix_case(load, symmetric=args.symmetric)
        rep = fd_check(mesh, bc, xbar, mat, schedule=args.increments, central=args.central)
        print(f"\n{load} load, {rep.metadata['increments']} increments")
        print(rep.table())
        print(f"sign pattern as expected: {mixed_sign_audit(rep)}")
        ok &= rep.passed
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            rep.to_csv(os.path.join(args.out, f"verification_{load}.csv"))
        if args.refinement:
            res = path_refinement(mesh, bc, xbar, mat)
            base = res[10][1]
            for n, (_, sens) in res.items():
                if n != 10:
                    shift = np.max(np.abs(sens - base) / np.abs(base))
                    print(f"  {n} increments: max relative shift {shift:.3e}")
    return 0 if ok else 1


def _cmd_reanalyze(args) -> int:
    from .config import RunConfig
    from .runner import binary_field, read_density_grid, reanalyze

    cfg = RunConfig.load(args.config)
    mesh, bc = cfg.problem.build()
    xbar = read_density_grid(args.grid, mesh)
    fld, vf = binary_field(xbar, args.threshold)
    res = reanalyze(mesh, bc, fld.xbar, cfg.material, u_p=args.u_p, increments=args.increments,
                    options=cfg.solver)
    out = args.out or os.path.dirname(os.path.abspath(args.grid))
    os.makedirs(out, exist_ok=True)
    res.write_curve(os.path.join(out, "reanalysis_curve.csv"))
    print(json.dumps({"volume_fraction": vf, "yield_increment": res.yield_increment,
                      "yield_load": res.yield_load, "final_load": float(res.load[-1])},
                     indent=2))
    return 0


def _cmd_export(args) -> int:
    from .config import RunConfig
    from .fea import run_analysis
    from .runner import export_fields

    cfg = RunConfig.load(os.path.join(args.run_dir, "config.yaml"))
    problem = cfg.design_problem()
    x = np.load(os.path.join(args.run_dir, "x.npy"))
    summary_path = os.path.join(args.run_dir, "summary.json")
    if os.path.exists(summary_path):
        with open(summary_path) as fh:
            st = json.load(fh)["final_schedule"]
    else:
        s = cfg.schedule.state(cfg.optimization.max_cycles)
        st = {"p_E": s.p_E, "p_sy": s.p_sy, "beta": s.beta}
    fld = problem.param.forward(x, st["beta"])
    mat = cfg.material.with_penalty(st["p_E"], st["p_sy"])
    model, hist = run_analysis(problem.mesh, problem.bc, fld.xbar, mat, "auto", cfg.solver)
    paths = export_fields(model, hist, fld, args.out or args.run_dir, raw=args.raw)
    for k, p in paths.items():
        print(f"{k}: {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plastopt", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize a configured problem")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: output_dir of the config)")
    p.add_argument("--cycles", type=int, help="override max_cycles")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="finite-difference check on the 2x2 beam")
    p.add_argument("--increments", type=int, default=10)
    p.add_argument("--central", action="store_true", help="central differences")
    p.add_argument("--symmetric", action="store_true", help="add rollers on the right edge")
    p.add_argument("--refinement", action="store_true", help="also compare 30 and 50 increments")
    p.add_argument("--out", help="directory for CSV reports")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("reanalyze", help="elasto-plastic response of a density grid")
    p.add_argument("grid")
    p.add_argument("config")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--u-p", type=float, default=0.02)
    p.add_argument("--increments", type=int, default=40)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_reanalyze)

    p = sub.add_parser("export", help="re-run the final design of a run and export fields")
    p.add_argument("run_dir")
    p.add_argument("--raw", action="store_true", help="also write per-Gauss-point values")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    from .config import ConfigError

    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(threads)):
                return args.func(args)
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
