"""Command-line interface.

Every run that names an output file also writes ``<out>.manifest.json``
holding the resolved configuration; ``momentstein --from-manifest FILE``
replays it. Exit status: 0 success, 1 usage or input error, 2 a checked
inequality or bound failed.
"""
import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import (
    KernelInvariantError, MomentSteinError, NoExplicitConstantError, OutsideRangeError, SingularHessianError,
)

EXIT_OK, EXIT_INPUT, EXIT_ASSERT = 0, 1, 2
_INTERNAL = {"func", "from_manifest", "command"}


class InputError(Exception):
    """Bad user input; reported with exit status 1."""


class CheckFailed(Exception):
    """A verified inequality or bound does not hold; exit status 2."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def human(x):
    """Six significant digits; integral values keep a trailing ``.0``."""
    s = f"{x:.6g}"
    return s + ".0" if s.lstrip("-").isdigit() else s


def _write_json(data, path):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path):
    """Parse a JSON file, turning syntax errors into ``path:line:column`` diagnostics."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _measure(path):
    from .measures import make_measure

    data = load_json(path)
    if not isinstance(data, dict):
        raise InputError(f"{path}:1:1: expected a JSON object with family, dim and params")
    try:
        return make_measure(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _map(path):
    from .moment_map import map_from_dict

    data = load_json(path)
    try:
        return map_from_dict(data)
    except KeyError as exc:
        raise InputError(f"{path}: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _cloud_or_measure(path):
    """A JSON measure description or a CSV point cloud."""
    from .measures import empirical, load_cloud_csv

    if path.endswith(".json"):
        return _measure(path)
    try:
        pts, w = load_cloud_csv(path)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return empirical(pts, w, check_support=False)


def resolve_threads(value):
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("MOMENTSTEIN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"MOMENTSTEIN_THREADS={env!r} is not an integer") from None
    return 1


def _int_list(text):
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_solve_moment_map(args):
    from .moment_map import solve_map

    mu = _measure(args.measure)
    phi = solve_map(mu, backend=args.backend, tol=args.tol, nodes=args.nodes)
    phi.to_json(args.out)
    print(f"{phi.backend} map for {mu.family} (d={mu.dim}) written to {args.out}")
    return EXIT_OK


def _eval_points(path):
    data = load_json(path)
    if isinstance(data, dict) and "points" in data:
        data = data["points"]
    if isinstance(data, dict):
        try:
            lo, hi, count = data["lo"], data["hi"], int(data["count"])
        except KeyError as exc:
            raise InputError(f"{path}: grid needs points or lo/hi/count, missing {exc}") from None
        lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
        axes = [np.linspace(a, b, count) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    try:
        pts = np.asarray(data, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{path}: points must be numbers") from None
    return pts[:, None] if pts.ndim == 1 else pts


def cmd_stein_kernel(args):
    from .stein import kernel_from_moment_map

    phi = _map(args.map)
    pts = _eval_points(args.eval_grid)
    if pts.shape[1] != phi.dim:
        raise InputError(f"{args.eval_grid}: points have dimension {pts.shape[1]}, map has {phi.dim}")
    tau = kernel_from_moment_map(phi)
    try:
        tau.to_csv(pts, args.out)
    except OutsideRangeError as exc:
        raise InputError(f"{args.eval_grid}: {exc}") from None
    print(f"{len(pts)} kernel evaluations written to {args.out}")
    return EXIT_OK


def cmd_discrepancy(args):
    from .metrics import stein_discrepancy_upper

    phi = _map(args.map)
    value = stein_discrepancy_upper(phi)
    if args.out:
        _write_json({"stein_discrepancy_upper": value, "map": args.map, "backend": phi.backend}, args.out)
    print(human(value))
    return EXIT_OK


def cmd_wp(args):
    from . import metrics

    a, b = _cloud_or_measure(args.a), _cloud_or_measure(args.b)
    if a.dim != b.dim:
        raise InputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    method = args.method
    if method == "auto":
        if a.dim == 1:
            method = "quantile_1d"
        elif a.kind == "analytic" or b.kind == "analytic":
            raise InputError("multivariate analytic inputs need samples; pass CSV clouds")
        elif len(a.points) * len(b.points) <= 10**6:
            method = "exact_lp"
        else:
            method = "entropic"
    if method != "quantile_1d" and (a.kind == "analytic" or b.kind == "analytic"):
        raise InputError(f"method {method} needs point clouds")
    if method == "quantile_1d":
        if a.dim != 1:
            raise InputError("quantile_1d is one-dimensional")
        res = metrics.w1d_exact(a, b, args.p)
    elif method == "exact_lp":
        res = metrics.wp_exact_lp(a, b, args.p)
    else:
        res = metrics.wp_entropic(a, b, args.p, reg=args.reg, threads=args.threads)
    if args.out:
        _write_json(res.to_dict(), args.out)
    print(f"W_{args.p:g} = {human(res.value)} ({res.method}, error {human(res.error_estimate)})")
    return EXIT_OK


def _factor_potential(f):
    """``V = -log density`` of a 1D factor with its Hessian, where one exists."""
    from .measures import GaussianFactor, PotentialFactor
    from .stein import Potential1D

    loc, s = f.loc, f.scale
    if isinstance(f, GaussianFactor):
        return Potential1D(lambda x: 0.5 * ((x - loc) / s) ** 2, lambda x: (x - loc) / s**2,
                           lambda x: np.full(np.shape(x), 1.0 / s**2), name="gaussian")
    if isinstance(f, PotentialFactor) and f.d2potential is not None:
        return Potential1D(lambda x: f.potential((x - loc) / s), lambda x: f.dpotential((x - loc) / s) / s,
                           lambda x: f.d2potential((x - loc) / s) / s**2, name=f.family)
    raise SingularHessianError(f"Hess V is not available or vanishes for the {f.family} family")


def check_kernel_csv(path, tol=1e-10):
    """Symmetry and PSD of every row of a kernel CSV; returns a report dict."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        dcols = [h for h in header if h.startswith("y")]
        d = len(dcols)
        if d == 0 or len(header) != d + d * d:
            raise InputError(f"{path}:1:1: expected header y1..yd,t11..tdd")
        violations = []
        rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}:{min(len(row), len(header)) + 1}: expected {len(header)} columns")
            vals = []
            for col, v in enumerate(row, start=1):
                try:
                    vals.append(float(v))
                except ValueError:
                    raise InputError(f"{path}:{lineno}:{col}: not a number: {v.strip()!r}") from None
            rows += 1
            T = np.array(vals[d:]).reshape(d, d)
            scale = 1.0 + np.max(np.abs(T))
            asym = float(np.max(np.abs(T - T.T)))
            if asym > tol * scale:
                violations.append({"invariant": "symmetric", "line": lineno, "asymmetry": asym})
                continue
            lam = float(np.min(np.linalg.eigvalsh(0.5 * (T + T.T))))
            if lam < -tol * scale:
                violations.append({"invariant": "positive semidefinite", "line": lineno, "min_eigenvalue": lam})
    return {"name": "kernel_invariants", "file": path, "rows": rows, "passed": not violations,
            "violations": violations}


def cmd_verify_inequalities(args):
    from . import inequalities as ineq
    from .stein import kernel_from_moment_map

    report = {"suite": args.suite}
    if args.kernel:
        report["kernel"] = check_kernel_csv(args.kernel)
    if args.map:
        if not args.measure:
            raise InputError("--map needs --measure")
        phi, mu = _map(args.map), _measure(args.measure)
        if phi.dim != mu.dim:
            raise InputError(f"map dimension {phi.dim} differs from measure dimension {mu.dim}")
        tau = kernel_from_moment_map(phi)
        if args.suite in ("all", "poincare", "klartag"):
            sub = "all" if args.suite == "all" else args.suite
            report.update(ineq.run_suite(tau, mu, sub, seed=args.seed))
            report.pop("passed", None)
        if args.suite in ("all", "brascamp-lieb") and mu.kind == "analytic":
            try:
                V = [_factor_potential(f) for f in mu.factors]
                report["brascamp_lieb"] = ineq.brascamp_lieb_check(V).to_dict()
            except SingularHessianError as exc:
                if args.suite == "brascamp-lieb":
                    raise InputError(str(exc)) from None
                report["brascamp_lieb"] = {"skipped": str(exc), "passed": True}
    elif not args.kernel:
        raise InputError("nothing to verify: pass --map and --measure, or --kernel")
    passed = all(v["passed"] for v in report.values() if isinstance(v, dict))
    report["passed"] = passed
    if args.out:
        _write_json(report, args.out)
    for key, val in report.items():
        if isinstance(val, dict):
            line = f"{key}: {'pass' if val['passed'] else 'FAIL'}"
            if "worst_margin" in val:
                line += f" (worst margin {human(val['worst_margin'])} at {val['worst_test']})"
            for v in val.get("violations", [])[:5]:
                line += f"\n  line {v['line']}: {v['invariant']} violated"
            print(line)
    if not passed:
        raise CheckFailed("inequality or kernel invariant violated", report)
    return EXIT_OK


def cmd_clt_rates(args):
    from . import clt_bench

    mu = _measure(args.factor)
    try:
        records = clt_bench.run_clt_experiment(
            mu, args.dims, args.ns, p=args.p, N=args.samples, replicates=args.reps, seed=args.seed,
            threads=args.threads, budget=args.budget, method=args.method,
        )
    except NoExplicitConstantError as exc:
        raise InputError(str(exc)) from None
    clt_bench.write_csv(records, args.out)
    summary = clt_bench.summarize(records)
    _write_json({"summary": summary, "records": clt_bench.records_to_dicts(records)}, args.out + ".json")
    if args.plot:
        clt_bench.plot_rates(records, args.plot)
    for d, s in summary.items():
        slope = human(s["slope"]) if "slope" in s else "n/a"
        line = f"d={d}: slope {slope}"
        if "bound_holds" in s:
            line += f", certified bound {'holds' if s['bound_holds'] else 'VIOLATED'}"
        print(line)
    if any(s.get("bound_holds") is False for s in summary.values()):
        raise CheckFailed("empirical W_2 exceeds the certified bound", summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $MOMENTSTEIN_THREADS or 1)")

    parser = _Parser(prog="momentstein", description="Stein kernels from moment maps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--from-manifest", metavar="FILE", help="replay a run from its manifest")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve-moment-map", parents=[common], help="solve for the moment map of a measure")
    p.add_argument("--measure", required=True, help="measure description (JSON)")
    p.add_argument("--backend", default="auto",
                   choices=["auto", "closed_form", "grid", "max_affine", "smoothed_max_affine"])
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--out", required=True, help="output map (JSON)")
    p.set_defaults(func=cmd_solve_moment_map)

    p = sub.add_parser("stein-kernel", parents=[common], help="evaluate the moment-map Stein kernel")
    p.add_argument("--map", required=True)
    p.add_argument("--eval-grid", required=True, help="JSON points list or {lo, hi, count}")
    p.add_argument("--out", required=True, help="CSV y1..yd,t11..tdd")
    p.set_defaults(func=cmd_stein_kernel)

    p = sub.add_parser("discrepancy", parents=[common], help="Stein discrepancy upper bound of a map")
    p.add_argument("--map", required=True)
    p.add_argument("--out", help="JSON record")
    p.set_defaults(func=cmd_discrepancy)

    p = sub.add_parser("wp", parents=[common], help="Wasserstein distance between two inputs")
    p.add_argument("--a", required=True, help="CSV cloud or JSON measure")
    p.add_argument("--b", required=True, help="CSV cloud or JSON measure")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--method", default="auto", choices=["auto", "quantile_1d", "exact_lp", "entropic"])
    p.add_argument("--reg", type=float, default=None, help="entropic regularization")
    p.add_argument("--out", help="JSON record")
    p.set_defaults(func=cmd_wp)

    p = sub.add_parser("verify-inequalities", parents=[common], help="weighted Poincare, Brascamp-Lieb, moments")
    p.add_argument("--map")
    p.add_argument("--measure")
    p.add_argument("--suite", default="all", choices=["all", "poincare", "klartag", "brascamp-lieb"])
    p.add_argument("--kernel", help="kernel CSV to check for symmetry and PSD")
    p.add_argument("--seed", type=int, default=0, help="seed for random directions")
    p.add_argument("--out", help="JSON report")
    p.set_defaults(func=cmd_verify_inequalities)

    p = sub.add_parser("clt-rates", parents=[common], help="empirical CLT rates with certified bounds")
    p.add_argument("--factor", required=True, help="isotropic 1D factor (JSON)")
    p.add_argument("--dims", type=_int_list, default=[1])
    p.add_argument("--ns", type=_int_list, default=[1, 2, 4, 8, 16, 32, 64])
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=10**9)
    p.add_argument("--method", default="auto",
                   choices=["auto", "quantile_1d", "exact_lp", "product_marginal", "entropic"])
    p.add_argument("--out", required=True, help="CSV of records")
    p.add_argument("--plot", help="SVG log-log chart")
    p.set_defaults(func=cmd_clt_rates)
    return parser


def config_of(args):
    """Resolved configuration of a parsed command line."""
    cfg = {k: v for k, v in vars(args).items() if k not in _INTERNAL}
    cfg["threads"] = resolve_threads(cfg.get("threads"))
    return {"subcommand": args.command, "config": cfg}


def manifest_path(out):
    return f"{out}.manifest.json"


def write_manifest(config, path):
    _write_json({"version": __version__, **config}, path)


def read_manifest(path):
    data = load_json(path)
    if not isinstance(data, dict) or "subcommand" not in data or "config" not in data:
        raise InputError(f"{path}: not a run manifest")
    return {"subcommand": data["subcommand"], "config": data["config"]}


def _namespace(config, parser):
    choices = parser._subparsers._group_actions[0].choices
    if config["subcommand"] not in choices:
        raise InputError(f"unknown subcommand {config['subcommand']!r} in manifest")
    defaults = {a.dest: a.default for a in choices[config["subcommand"]]._actions if a.dest != "help"}
    ns = argparse.Namespace(**{**defaults, **config["config"]})
    ns.command = config["subcommand"]
    return ns


def dispatch(args):
    """Run a parsed command; returns the exit status."""
    args.threads = resolve_threads(args.threads)
    config = config_of(args)
    status = EXIT_OK
    try:
        status = args.func(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        status = EXIT_ASSERT
    if getattr(args, "out", None):
        write_manifest(config, manifest_path(args.out))
    return status


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help and --version exit 0; usage errors exit 1
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    try:
        if args.from_manifest:
            if args.command:
                print("momentstein: error: --from-manifest replays a whole run; do not add a subcommand",
                      file=sys.stderr)
                return EXIT_INPUT
            ns = _namespace(read_manifest(args.from_manifest), parser)
            ns.func = _func(parser, ns.command)
            return dispatch(ns)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_INPUT
        return dispatch(args)
    except InputError as exc:
        print(f"momentstein: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except KernelInvariantError as exc:
        print(f"momentstein: check failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except (MomentSteinError, ValueError, ArithmeticError) as exc:
        print(f"momentstein: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def _func(parser, command):
    choices = parser._subparsers._group_actions[0].choices
    return choices[command].get_default("func")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
