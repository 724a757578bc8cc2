"""Command-line front end.

Exit codes: 0 success, 1 reproduction check failure, 2 usage/validation
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys as _sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import delay_margin, root_locus, simulate, stability_region
from .errors import ComputationError, ValidationError
from .model import (PIDFilterController, assemble_closed_loop, load_controller,
                    load_system, validate_controller, validate_system)
from .optimize import (MinimizeOptions, PenaltyConfig, check_gradient,
                       design_filtered_pid)
from .repro import TARGETS, data_path, run_all, run_target
from .sensitivity import parameter_labels
from .spectrum import SpectrumOptions, compute_roots

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _resolve(path):
    """Existing file path, else the bundled data file of the same name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = data_path(Path(path).name)
    if bundled.is_file():
        return bundled
    raise ValidationError(f"file not found: {path}")


def _spectrum_opts(args):
    opts = SpectrumOptions()
    if getattr(args, "degree", None):
        opts.degree = args.degree
    if getattr(args, "tol", None):
        opts.refine_tol = args.tol
    if getattr(args, "seed", None):
        opts.seed = args.seed
    return opts


def _load_pair(args, controller_required=True):
    sys = load_system(_resolve(args.system))
    if args.controller:
        ctl = load_controller(_resolve(args.controller))
    elif controller_required:
        raise ValidationError("this command needs --controller")
    else:
        ctl = PIDFilterController.zero(sys.m, sys.p)
    return sys, ctl


def _outdir(args):
    out = Path(getattr(args, "out", None) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(args, text):
    if not args.quiet:
        print(text)


def _emit_json(args, payload):
    if args.json:
        print(json.dumps(payload, indent=2))


def cmd_validate(args):
    sys = load_system(_resolve(args.system))
    report = validate_system(sys)
    issues = list(report.issues)
    if args.controller:
        ctl = load_controller(_resolve(args.controller))
        issues += validate_controller(sys, ctl).issues
    if issues:
        for issue in issues:
            print(f"invalid: {issue}", file=_sys.stderr)
        return EXIT_VALIDATION
    _say(args, f"valid: n={sys.n} m={sys.m} p={sys.p} "
               f"state delays={[t for t, _ in sys.state_terms]} tau0={sys.tau0}")
    _emit_json(args, {"valid": True, "n": sys.n, "m": sys.m, "p": sys.p})
    return EXIT_OK


def cmd_roots(args):
    sys, ctl = _load_pair(args, controller_required=False)
    cl = assemble_closed_loop(sys, ctl, reduce=not args.full)
    spec = compute_roots(cl, search_floor=args.floor, opts=_spectrum_opts(args))
    out = _outdir(args)
    csv_path = out / "roots.csv"
    spec.write_csv(csv_path)
    from .plots import save_spectrum_plot
    png_path = save_spectrum_plot(spec, out / "roots.png")
    _say(args, f"{len(spec.roots)} roots right of floor {spec.search_floor:g} "
               f"(degree {spec.discretization_degree}, converged={spec.converged})")
    for r in spec.roots[:10]:
        _say(args, f"  {r.value.real:+.6f} {r.value.imag:+.6f}j  residual {r.residual:.2e}")
    _say(args, f"wrote {csv_path} and {png_path}")
    _emit_json(args, {"abscissa": spec.abscissa, "converged": spec.converged,
                      "degree": spec.discretization_degree,
                      "roots": [{"re": r.value.real, "im": r.value.imag,
                                 "residual": r.residual, "refined": r.refined}
                                for r in spec.roots]})
    return EXIT_OK


def cmd_abscissa(args):
    sys, ctl = _load_pair(args, controller_required=False)
    cl = assemble_closed_loop(sys, ctl, reduce=not args.full)
    spec = compute_roots(cl, search_floor=args.floor, opts=_spectrum_opts(args))
    _say(args, f"spectral abscissa: {spec.abscissa:.6f} "
               f"({'stable' if spec.abscissa < 0 else 'not stable'})")
    _emit_json(args, {"abscissa": spec.abscissa, "converged": spec.converged})
    return EXIT_OK


def cmd_optimize(args):
    sys, init = _load_pair(args)
    cfg = PenaltyConfig(T_min=args.tmin, T_max=args.tmax, alpha=args.alpha)
    if args.check_grad:
        rel, grad, num = check_gradient(sys, init, cfg, spectrum_opts=_spectrum_opts(args))
        labels = parameter_labels(sys.m, sys.p)
        _say(args, f"gradient audit: max relative error {rel:.3e}")
        for lab, a, b in zip(labels, grad, num):
            _say(args, f"  {lab:10s} analytic {a:+.8f}  central-diff {b:+.8f}")
    if not (cfg.T_min <= init.T <= cfg.T_max):
        clamped = min(max(init.T, cfg.T_min), cfg.T_max)
        _say(args, f"initial T={init.T:g} clamped into the window -> {clamped:g}")
        init = init.with_T(clamped)
    opts = MinimizeOptions(max_iter=args.max_iter, grad_tol=args.opt_tol,
                           seed=args.seed, starts=args.starts)
    res = design_filtered_pid(sys, init, cfg, opts=opts,
                              spectrum_opts=_spectrum_opts(args))
    payload = {"gains": {"Kp": res.params.Kp.tolist(), "Ki": res.params.Ki.tolist(),
                         "Kd": res.params.Kd.tolist()},
               "T": res.params.T, "rho": res.rho, "status": res.status,
               "iterations": res.iterations}
    out = _outdir(args)
    result_path = out / "optimize_result.json"
    result_path.write_text(json.dumps(payload, indent=2) + "\n")
    hist_path = out / "optimize_history.csv"
    with open(hist_path, "w") as fh:
        fh.write("iteration,objective\n")
        for it, f in res.history:
            fh.write(f"{it},{f:.17g}\n")
    _say(args, f"status {res.status} after {res.iterations} iterations; rho = {res.rho:.6f}")
    _say(args, f"T = {res.params.T:.6g}, Kp = {res.params.Kp.tolist()}, "
               f"Ki = {res.params.Ki.tolist()}, Kd = {res.params.Kd.tolist()}")
    _say(args, f"wrote {result_path} and {hist_path}")
    _emit_json(args, payload)
    if res.status == "infeasible_start":
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_margin(args):
    sys, ctl = _load_pair(args)
    res = delay_margin(sys, ctl, tau_hi=args.tau_hi, tol=args.mtol,
                       spectrum_opts=_spectrum_opts(args))
    if res.crossing_found:
        _say(args, f"delay margin: {res.value:.6f}")
    else:
        _say(args, f"no crossing found up to tau0 = {res.value:g}")
    _emit_json(args, {"margin": res.value, "crossing_found": res.crossing_found})
    return EXIT_OK


def cmd_region(args):
    sys, ctl = _load_pair(args)
    region = stability_region(sys, (ctl.Kp, ctl.Ki, ctl.Kd),
                              (args.tmin, args.tmax, args.tcount),
                              (args.tau_min, args.tau_max, args.tau_count),
                              spectrum_opts=_spectrum_opts(args))
    out = _outdir(args)
    csv_path = out / "region.csv"
    region.write_csv(csv_path)
    from .plots import save_region_plot
    png_path = save_region_plot(region, out / "region.png")
    frac = region.stable.mean()
    _say(args, f"stable on {region.stable.sum()}/{region.stable.size} grid points "
               f"({100 * frac:.1f}%), {len(region.boundary)} boundary polylines")
    _say(args, f"wrote {csv_path} and {png_path}")
    _emit_json(args, {"stable_fraction": float(frac),
                      "boundary_polylines": len(region.boundary)})
    return EXIT_OK


def cmd_locus(args):
    sys, ctl = _load_pair(args)
    locus = root_locus(sys, ctl, args.param, args.lo, args.hi, args.count,
                       k=args.k, spectrum_opts=_spectrum_opts(args))
    out = _outdir(args)
    csv_path = out / "locus.csv"
    locus.write_csv(csv_path)
    from .plots import save_locus_plot
    png_path = save_locus_plot(locus, out / "locus.png")
    _say(args, f"traced {len(locus.traces)} root branches over "
               f"{args.param} in [{args.lo}, {args.hi}]")
    _say(args, f"wrote {csv_path} and {png_path}")
    return EXIT_OK


def cmd_simulate(args):
    sys, ctl = _load_pair(args)
    cl = assemble_closed_loop(sys, ctl, reduce=not args.full)
    if args.phi == "ones":
        phi = np.ones(cl.n_ext)
    else:
        phi = np.array([float(v) for v in args.phi.split(",")])
        if phi.size != cl.n_ext:
            raise ValidationError(f"--phi needs {cl.n_ext} components, got {phi.size}")
    traj = simulate(cl, phi, horizon=args.horizon, dt=args.dt)
    out = _outdir(args)
    csv_path = out / "trajectory.csv"
    traj.write_csv(csv_path)
    from .plots import save_trajectory_plot
    png_path = save_trajectory_plot(traj, out / "trajectory.png")
    _say(args, f"fitted decay exponent {traj.norm_log_slope:.5f}"
               + (" (diverged)" if traj.diverged else ""))
    _say(args, f"wrote {csv_path} and {png_path}")
    _emit_json(args, {"norm_log_slope": traj.norm_log_slope, "diverged": traj.diverged})
    return EXIT_OK


def cmd_repro(args):
    outdir = _outdir(args) if args.out else None
    if args.target == "all":
        reports = run_all(seed=args.seed, outdir=outdir)
    else:
        reports = [run_target(args.target, seed=args.seed, outdir=outdir)]
    failed = 0
    for rep in reports:
        _say(args, f"== {rep.target} ({rep.elapsed:.1f}s) ==")
        for c in rep.checks:
            mark = "PASS" if c.passed else "FAIL"
            _say(args, f"  [{mark}] {c.name}: expected {c.expected}, computed {c.computed}")
            failed += 0 if c.passed else 1
        if outdir:
            report_path = outdir / f"repro_{rep.target.replace('-', '_')}_report.json"
            report_path.write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
    if args.json:
        print(json.dumps([rep.to_dict() for rep in reports], indent=2))
    _say(args, f"{'all checks passed' if failed == 0 else f'{failed} check(s) failed'}")
    return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tdpid",
        description="Spectrum-based analysis and filtered-PID co-design "
                    "for linear time-delay systems.")
    parser.add_argument("--version", action="version", version=f"tdpid {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument("--out", default=None, help="output directory for artifacts")
    common.add_argument("--quiet", action="store_true", help="suppress human-readable output")
    common.add_argument("--json", action="store_true", help="emit machine-readable JSON to stdout")

    io_sys = argparse.ArgumentParser(add_help=False)
    io_sys.add_argument("--system", required=True, help="system JSON (path or bundled name)")
    io_sys.add_argument("--controller", default=None, help="controller JSON (path or bundled name)")

    spect_core = argparse.ArgumentParser(add_help=False)
    spect_core.add_argument("--floor", type=float, default=None,
                            help="left boundary of the search half-plane")
    spect_core.add_argument("--degree", type=int, default=None,
                            help="initial collocation degree")
    spect_core.add_argument("--full", action="store_true",
                            help="keep integrator/filter states even for exactly zero gains")
    spect = argparse.ArgumentParser(add_help=False, parents=[spect_core])
    spect.add_argument("--tol", type=float, default=None, help="Newton refinement tolerance")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common, io_sys], help="validate a system/controller description")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("roots", parents=[common, io_sys, spect], help="characteristic roots to CSV/PNG")
    p.set_defaults(func=cmd_roots)
    p = sub.add_parser("abscissa", parents=[common, io_sys, spect], help="spectral abscissa")
    p.set_defaults(func=cmd_abscissa)

    p = sub.add_parser("optimize", parents=[common, io_sys, spect_core],
                       help="co-design gains and filter constant")
    p.add_argument("--tmin", type=float, required=True)
    p.add_argument("--tmax", type=float, required=True)
    p.add_argument("--alpha", type=float, default=None, help="penalty slope (default: auto)")
    p.add_argument("--starts", type=int, default=1, help="number of optimizer starts")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", dest="opt_tol", type=float, default=1e-6,
                   help="stationarity tolerance")
    p.add_argument("--check-grad", action="store_true",
                   help="audit the analytic gradient against central differences")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("margin", parents=[common, io_sys, spect], help="input-delay margin")
    p.add_argument("--tau-hi", type=float, default=1.0, help="upper end of the search interval")
    p.add_argument("--mtol", type=float, default=1e-4, help="bisection tolerance")
    p.set_defaults(func=cmd_margin)

    p = sub.add_parser("region", parents=[common, io_sys, spect],
                       help="stability chart over (T, tau0)")
    p.add_argument("--tmin", type=float, required=True)
    p.add_argument("--tmax", type=float, required=True)
    p.add_argument("--tcount", type=int, default=80)
    p.add_argument("--tau-min", type=float, default=0.0)
    p.add_argument("--tau-max", type=float, required=True)
    p.add_argument("--tau-count", type=int, default=80)
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("locus", parents=[common, io_sys, spect],
                       help="rightmost roots along a parameter sweep")
    p.add_argument("--param", choices=("tau0", "T"), required=True)
    p.add_argument("--lo", type=float, required=True)
    p.add_argument("--hi", type=float, required=True)
    p.add_argument("--count", type=int, default=40)
    p.add_argument("-k", type=int, default=8, help="roots tracked per sweep point")
    p.set_defaults(func=cmd_locus)

    p = sub.add_parser("simulate", parents=[common, io_sys, spect],
                       help="method-of-steps time response")
    p.add_argument("--horizon", type=float, default=30.0)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--phi", default="ones",
                   help="'ones' or comma-separated initial extended state")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("repro", parents=[common],
                       help="re-run a bundled case study and check recorded values")
    p.add_argument("target", choices=sorted(TARGETS) + ["all"])
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_VALIDATION
    except ComputationError as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
