"""Command-line entry point: ``python -m mvlmm <command> ...``.

Exit codes: 0 success, 1 input error, 2 nonconvergence, 3 numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmark, io
from .exceptions import (
    DataError,
    EmNumericalError,
    InitError,
    LoadError,
    NotPositiveDefinite,
    ParameterShapeError,
)
from .fitter import FitOptions, advised_init, fit, naive_init
from .simulator import simulate

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_NUMERICAL = 0, 1, 2, 3


def _emit(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_simulate(args):
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.sizes:
        sizes = benchmark.parse_sizes(args.sizes)
        if len(sizes) != 1:
            raise LoadError("simulate takes a single --sizes entry")
        overrides["n_total"], overrides["n_groups"] = sizes[0]
    cfg = io.parse_sim_config(text, **overrides)
    data = simulate(cfg)
    out = Path(args.out or "simulated.csv")
    io.write_csv(out, data)
    truth_path = out.with_suffix(out.suffix + ".truth.json")
    truth_path.write_text(json.dumps(cfg.truth(), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {data.N} rows to {out} and truth to {truth_path}")
    return EXIT_OK


def fit_report(data, res, spec):
    return {
        "beta1": res.beta.beta1.tolist(), "beta2": res.beta.beta2.tolist(),
        "sigma1": res.sigma1, "sigma2": res.sigma2,
        "gamma_bar": np.asarray(res.gamma_bar).tolist(),
        "criterion": res.criterion, "criterion_value": res.criterion_value,
        "iterations": res.iterations, "outer_iterations": res.outer_iterations,
        "converged": res.converged, "init": spec.init,
        "init_used": np.asarray(res.init_used).tolist(),
        "N": data.N, "n_groups": data.n_groups, "message": res.message,
    }


def cmd_fit(args):
    spec = io.load_spec(args.spec) if args.spec else io.default_spec()
    if args.criterion:
        spec = io.ModelSpec(spec.group_column, spec.dim1, spec.dim2, args.criterion,
                            spec.init, spec.init_values)
    if args.init:
        spec = io.ModelSpec(spec.group_column, spec.dim1, spec.dim2, spec.criterion,
                            args.init, spec.init_values)
    data = io.load_csv(args.data, spec)
    seed = 0 if args.seed is None else args.seed
    opts = FitOptions(criterion=spec.criterion, rng_seed=seed)
    if spec.init == "explicit":
        init = spec.init_values
    elif spec.init == "naive":
        init = naive_init((data.t1, data.t2), np.random.default_rng(seed))
    else:
        init = advised_init(data, opts)
    res = fit(data, init, opts)
    report = fit_report(data, res, spec)
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    if not res.converged:
        print("warning: optimizer did not converge; report is partial", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _finish(report, args):
    _emit(report.to_jsonl(), args.out)
    sys.stdout.write(report.table()) if args.out else sys.stderr.write(report.table())
    return EXIT_OK if all(r["converged"] for r in report.records) else EXIT_NONCONVERGED


def cmd_benchmark_mse(args):
    sizes = benchmark.parse_sizes(args.sizes or "600x50,3000x100")
    report = benchmark.run_mse(sizes, args.reps, 0 if args.seed is None else args.seed,
                               criterion=args.criterion or "ML", workers=args.workers)
    return _finish(report, args)


def cmd_benchmark_em(args):
    sizes = benchmark.parse_sizes(args.sizes or "1000x100")
    if len(sizes) != 1:
        raise LoadError("benchmark-em takes a single --sizes entry")
    report = benchmark.run_em(args.reps, args.init or "naive", 0 if args.seed is None else args.seed,
                              size=sizes[0], workers=args.workers)
    return _finish(report, args)


def build_parser():
    p = argparse.ArgumentParser(prog="mvlmm", description="Bivariate linear mixed models.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, reps=False):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--sizes", help="design sizes N x groups, e.g. 600x50,3000x100")
        sp.add_argument("--out", help="output path (stdout if omitted)")
        if reps:
            sp.add_argument("--reps", type=int, default=20)
            sp.add_argument("--workers", type=int, default=1, help="parallel replications")

    s = sub.add_parser("simulate", help="write a simulated data set and its truth file")
    s.add_argument("--config", help="INI file with a [simulation] section")
    common(s)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a CSV data set")
    f.add_argument("data")
    f.add_argument("--spec", help="model specification file")
    f.add_argument("--criterion", type=str.upper, choices=["ML", "REML"])
    f.add_argument("--init", choices=["naive", "advised"])
    common(f)
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("benchmark-mse", help="squared error by design size")
    m.add_argument("--criterion", type=str.upper, choices=["ML", "REML"])
    common(m, reps=True)
    m.set_defaults(func=cmd_benchmark_mse)

    e = sub.add_parser("benchmark-em", help="profiled fit against EM")
    e.add_argument("--init", choices=["naive", "advised"])
    common(e, reps=True)
    e.set_defaults(func=cmd_benchmark_em)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LoadError, DataError, ParameterShapeError, InitError, OSError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (NotPositiveDefinite, EmNumericalError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
