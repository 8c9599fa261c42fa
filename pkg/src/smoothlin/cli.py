"""Command-line front end.

Commands: ``spectrum``, ``conditions``, ``linearize`` and ``verify``.
Exit codes: 0 success, 2 condition or verification failure, 3 numerical
failure, 64 configuration error.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from .config import load_config
from .errors import (BudgetViolation, ConfigError, DomainError, NonHyperbolicError,
                     SmoothLinError)
from .pipeline import Run

log = logging.getLogger("smoothlin")

EXIT_OK, EXIT_FAIL, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 64
BANNER = "*** outside guaranteed regime: smallness budget not satisfied ***"


# ---------------------------------------------------------------------------
# writers

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _plots(fn, *args):
    try:
        from . import plotting
        getattr(plotting, fn)(*args)
    except Exception as exc:  # figures are optional output
        log.warning("plot %s skipped: %s", fn, exc)


# ---------------------------------------------------------------------------
# commands

def _spectrum_files(run, out):
    spec = run.spectrum()
    write_json(os.path.join(out, "spectrum.json"), spec.to_json())
    write_csv(os.path.join(out, "spectrum_scan.csv"), ["mu", "passes", "margin"], spec.scan)
    _plots("plot_spectrum_scan", spec.scan, spec, os.path.join(out, "spectrum_scan.svg"))
    return spec


def cmd_spectrum(run, out, args):
    """Estimate the dichotomy spectrum and write the mu scan."""
    spec = _spectrum_files(run, out)
    print(f"spectrum: k={spec.k} r={spec.r} intervals="
          + ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in spec.intervals))
    return EXIT_OK


def _conditions(run, out, args, banner=True):
    spec = _spectrum_files(run, out)
    if not spec.hyperbolic:
        write_json(os.path.join(out, "conditions.json"),
                   {"spectral_bound": {"pass": False, "reason": "non-hyperbolic spectrum"}})
        print("conditions: FAIL non-hyperbolic spectrum (an interval contains 1)")
        return EXIT_FAIL
    bound = run.conditions()
    write_json(os.path.join(out, "conditions.json"), run.conditions_json())
    if not bound.passed:
        print(f"conditions: FAIL spectral bound violated at index {bound.violating}")
        return EXIT_FAIL
    a = run.alpha
    amax = f"{a.alpha_max:.6g}" if math.isfinite(a.alpha_max) else "inf"
    print(f"conditions: spectral bound PASS; alpha_max={amax} chosen={a.chosen:.6g} "
          f"({a.branch})")
    print(f"budget: {'satisfied' if run.budget.satisfied else 'NOT satisfied'}; "
          f"delta={run.budget.delta:.3e} rho_tilde={run.budget.rho_tilde:.3e}")
    if not run.budget.satisfied:
        if banner or not args.override_budget:
            print(BANNER)
        if not args.override_budget:
            return EXIT_FAIL
    return EXIT_OK


def cmd_conditions(run, out, args):
    """Check the spectral bound, alpha, the nonlinearity audit and the budget."""
    return _conditions(run, out, args)


def cmd_linearize(run, out, args):
    """Build the conjugacy, run verification and render the report."""
    code = _conditions(run, out, args, banner=False)
    if code != EXIT_OK:
        return code
    run.conjugacy()
    rows = run.conjugacy_dump()
    d = run.dim
    header = ["n"] + [f"x{i}" for i in range(d)] + [f"h{i}" for i in range(d)] + ["residual"]
    write_csv(os.path.join(out, "conjugacy_dump.csv"), header,
              [[n, *x, *hx, r] for n, x, hx, r in rows])
    fol = None
    if run.cfg["foliation"]["enabled"]:
        fol = run.foliation()
        write_csv(os.path.join(out, "foliation_log.csv"), ["iteration", "weighted_sup_norm"],
                  fol.log)
        _plots("plot_foliation", fol.log, os.path.join(out, "foliation_log.svg"))
    rep = run.verify()
    if fol is not None:
        rep.extra["foliation_contraction"] = fol.contraction
        rep.extra["foliation_bound"] = fol.bound
        rep.extra["foliation_converged"] = fol.converged
    rep.extra["max_dump_residual"] = max((r[3] for r in rows), default=0.0)
    rows_dy = []
    for key, dy in run.dyadic.items():
        for rad, ratio in zip(dy.radii, dy.ratios):
            rows_dy.append([key, int(round(-math.log2(rad))), rad, ratio])
    with open(os.path.join(out, "dyadic_ratios.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["map", "j", "radius", "ratio"])
        for m, j, rad, ratio in rows_dy:
            w.writerow([m, j, repr(rad), repr(ratio)])
    write_json(os.path.join(out, "verification.json"), rep.to_json())
    with open(os.path.join(out, "verification.txt"), "w") as fh:
        fh.write(rep.to_text())
    _plots("plot_holder", run.holder, os.path.join(out, "holder.svg"))
    _plots("plot_dyadic", run.dyadic, os.path.join(out, "dyadic_ratios.svg"))
    sys.stdout.write(rep.to_text())
    if not rep.passed:
        return EXIT_FAIL
    if not run.guaranteed and not args.override_budget:
        return EXIT_FAIL
    return EXIT_OK


def cmd_verify(run, out, args):
    """Re-evaluate h_n on the points of an existing conjugacy dump."""
    path = args.dump or os.path.join(out, "conjugacy_dump.csv")
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read dump {path}: {exc}") from exc
    header, body = rows[0], rows[1:]
    d = sum(1 for c in header if c.startswith("x"))
    if d != run.dim or len(header) != 2 * d + 2:
        raise ConfigError(f"dump {path} does not match system dimension {run.dim}")
    run.spectrum()
    run.conditions()
    if not run.bound.passed:
        print("verify: spectral bound fails; nothing to check")
        return EXIT_FAIL
    run.conjugacy()
    data = np.array([[float(v) for v in r] for r in body])
    worst_diff = 0.0
    worst_res = 0.0
    for n in np.unique(data[:, 0]).astype(int):
        sel = data[:, 0] == n
        X = data[sel, 1:1 + d]
        Hd = data[sel, 1 + d:1 + 2 * d]
        Hx = run.h.solve_h(int(n), X)
        worst_diff = max(worst_diff, float(np.max(np.abs(Hx - Hd))))
        worst_res = max(worst_res, float(np.max(run.h.residual(int(n), X))))
    tol = run.cfg["lp"]["tol_conj"]
    ok = worst_diff <= 1e-10 and worst_res <= tol
    result = {"dump": os.path.basename(path), "rows": len(data), "max_difference": worst_diff,
              "max_residual": worst_res, "tol_conj": tol, "pass": ok}
    write_json(os.path.join(out, "verify_dump.json"), result)
    print(f"verify: {'PASS' if ok else 'FAIL'} rows={len(data)} "
          f"max_difference={worst_diff:.3e} max_residual={worst_res:.3e}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"spectrum": cmd_spectrum, "conditions": cmd_conditions,
            "linearize": cmd_linearize, "verify": cmd_verify}


def build_parser():
    p = argparse.ArgumentParser(prog="smoothlin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0]
                            if fn.__doc__ else name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="random seed (overrides config)")
        sp.add_argument("--override-budget", action="store_true",
                        help="do not fail when the smallness budget is violated")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            sp.add_argument("--dump", help="conjugacy dump CSV (default: OUT/conjugacy_dump.csv)")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        out = args.out or cfg["output"]
        os.makedirs(out, exist_ok=True)
        run = Run(cfg, override_budget=args.override_budget)
        return COMMANDS[args.command](run, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonHyperbolicError, BudgetViolation, DomainError) as exc:
        print(f"condition failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except SmoothLinError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
