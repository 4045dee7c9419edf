"""Command-line interface: ``robsparse fit | simulate | oracle``.

Every command writes JSON with a ``schema_version`` field. Options may also
come from a ``key = value`` file given with ``--config``; keys are option
names without the leading dashes, and command-line flags take precedence.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import simlab
from .covariance import ESTIMATORS, JointCovariance, estimate_joint, read_csv
from .errors import DomainError, RobSparseError
from .hyperopt import make_tuner, tuned_fit
from .optimizer import OptimizerSettings, fit
from .oracle import true_directions
from .problem import PenaltyConfig

SCHEMA_VERSION = 1
THREADS_ENV = "ROBSPARSE_THREADS"

CSV_HELP = (
    "The per-replicate CSV has one row per replicate and order with columns: "
    + ", ".join(simlab.CSV_COLUMNS)
    + ". Angles are in radians; failed replicates carry an error message."
)


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DomainError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _add_common(p):
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-level", default="WARNING")


def _add_solver(p):
    p.add_argument("--orders", type=int, default=1)
    p.add_argument("--alpha-a", type=float, default=1.0, help="elastic net mixing for a (1 = lasso)")
    p.add_argument("--alpha-b", type=float, default=1.0)
    p.add_argument("--init", choices=("orthogonal", "naive"), default="orthogonal")
    p.add_argument("--budget", type=int, default=30, help="evaluations per order in the bound search")
    p.add_argument("--n0", type=int, default=None, help="size of the initial design")
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--max-inner", type=int, default=5000)
    p.add_argument("--max-outer", type=int, default=60)


def build_parser():
    parser = argparse.ArgumentParser(prog="robsparse", description="Robust sparse maximum association.")
    sub = parser.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("fit", help="fit directions to two CSV data files")
    _add_common(pf)
    _add_solver(pf)
    pf.add_argument("--x", help="CSV with the x variables (rows are observations)")
    pf.add_argument("--y", help="CSV with the y variables")
    pf.add_argument("--estimator", choices=ESTIMATORS, default="pearson")
    pf.add_argument("--ca", type=float, default=None, help="fixed bound for a; searched when omitted")
    pf.add_argument("--cb", type=float, default=None, help="fixed bound for b; searched when omitted")
    pf.add_argument("--search", choices=("bayes", "random"), default="bayes")
    pf.add_argument("--standardize", type=_bool, default=False,
                    help="apply the bounds to coefficients of standardized variables")
    pf.add_argument("--repair-pd", type=_bool, default=False)
    pf.add_argument("--test-fraction", type=float, default=0.0,
                    help="hold out this share of rows and report the residual score on them")
    pf.add_argument("--trim", type=float, default=0.0, help="trimming share for the residual score")
    pf.add_argument("--output", help="JSON path (default: standard output)")

    ps = sub.add_parser("simulate", help="run a simulation scenario", epilog=CSV_HELP)
    _add_common(ps)
    _add_solver(ps)
    ps.add_argument("--setting", choices=simlab.SETTINGS, default="low_dim")
    ps.add_argument("--estimator", choices=ESTIMATORS, default="pearson")
    ps.add_argument("--n", type=int, default=None)
    ps.add_argument("--q", type=int, default=None, help="y dimension of the runtime setting")
    ps.add_argument("--replicates", type=int, default=10)
    ps.add_argument("--contamination-rate", type=float, default=0.0)
    ps.add_argument("--contamination-shift", type=float, default=2.0)
    ps.add_argument("--distribution", choices=simlab.DISTRIBUTIONS, default="normal")
    ps.add_argument("--penalties", choices=("known", "bayes", "random"), default="known",
                    help="bounds from the true directions, or searched")
    ps.add_argument("--standardize", type=_bool, default=True)
    ps.add_argument("--threads", type=int, default=None,
                    help=f"replicate-level parallelism (default: ${THREADS_ENV} or 1)")
    ps.add_argument("--output-dir", default=".", help="where replicates.csv and summary.json go")

    po = sub.add_parser("oracle", help="exact directions of a known covariance")
    _add_common(po)
    src = po.add_mutually_exclusive_group()
    src.add_argument("--setting", choices=simlab.SETTINGS)
    src.add_argument("--cov", help="CSV with the joint (p + q) x (p + q) covariance")
    po.add_argument("--p", type=int, default=None, help="number of x variables in --cov")
    po.add_argument("--q", type=int, default=None, help="y dimension of the runtime setting")
    po.add_argument("--orders", type=int, default=None)
    po.add_argument("--output", help="JSON path (default: standard output)")
    parser.commands = {"fit": pf, "simulate": ps, "oracle": po}
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config(args.config)
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        except DomainError as exc:
            parser.error(str(exc))
        sub = parser.commands[args.command]
        actions = {a.dest: a for a in sub._actions}
        unknown = sorted(set(values) - set(actions) - {"config"})
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        for key, value in values.items():
            choices = actions[key].choices
            if choices is not None and value not in choices:
                parser.error(f"config {key} = {value!r}: choose from {', '.join(map(str, choices))}")
        # argparse converts string defaults with each option's type
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    # required options may come from the config file, so check them here
    if args.command == "fit" and not (args.x and args.y):
        parser.commands["fit"].error("--x and --y are required")
    if args.command == "oracle" and bool(args.setting) == bool(args.cov):
        parser.commands["oracle"].error("give exactly one of --setting and --cov")
    return args


def _settings(args):
    return OptimizerSettings(alpha0=args.learning_rate, max_inner=args.max_inner,
                             max_outer=args.max_outer, seed=args.seed)


def _dump(payload, path):
    text = json.dumps(payload, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _named(values, names):
    return {name: float(v) for name, v in zip(names, values)}


def _split(n, fraction, seed):
    if not 0.0 <= fraction < 1.0:
        raise DomainError("test fraction must lie in [0, 1)")
    n_test = int(round(fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    if n - n_test < 2:
        raise DomainError("too few training rows after the split")
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def cmd_fit(args):
    x, y = read_csv(args.x), read_csv(args.y)
    p, q = x.values.shape[1], y.values.shape[1]
    names_x = x.column_names or [f"x{j + 1}" for j in range(p)]
    names_y = y.column_names or [f"y{j + 1}" for j in range(q)]
    if x.values.shape[0] != y.values.shape[0]:
        # let estimate_joint raise the alignment error
        estimate_joint(x.values, y.values, args.estimator)
    train, test = _split(x.values.shape[0], args.test_fraction, args.seed)
    cov = estimate_joint(x.values[train], y.values[train], args.estimator, repair_pd=args.repair_pd)
    settings = _settings(args)
    alphas = (args.alpha_a, args.alpha_b)
    if args.ca is not None and args.cb is not None:
        pens = (PenaltyConfig(alphas[0], args.ca), PenaltyConfig(alphas[1], args.cb))
        result = fit(cov, args.orders, pens, settings, args.init, standardize=args.standardize)
        bounds = [(args.ca, args.cb)] * args.orders
        searched = False
    elif args.ca is None and args.cb is None:
        tuned = tuned_fit(cov, args.orders, settings, args.init, args.standardize, alphas,
                          args.budget, args.n0, args.seed, args.search)
        result, bounds, searched = tuned.result, tuned.params, True
    else:
        raise DomainError("give both --ca and --cb, or neither to search them")

    orders = []
    for k, (pair, diag) in enumerate(zip(result.directions, result.diagnostics)):
        orders.append({
            "order": k + 1,
            "association": float(result.associations[k]),
            "a": _named(pair.a, names_x),
            "b": _named(pair.b, names_y),
            "nonzero_a": result.nonzero_counts[k][0],
            "nonzero_b": result.nonzero_counts[k][1],
            "c_a": float(bounds[k][0]),
            "c_b": float(bounds[k][1]),
            "converged": bool(diag.converged),
            "stop_reason": diag.reason,
            "outer_iterations": diag.outer_iterations,
            "residual_norm": diag.residual_norm,
        })
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "estimator": args.estimator,
        "n_train": int(train.size),
        "p": p,
        "q": q,
        "alpha_a": args.alpha_a,
        "alpha_b": args.alpha_b,
        "bounds_searched": searched,
        "search_method": args.search if searched else None,
        "standardize": args.standardize,
        "seed": args.seed,
        "converged": bool(all(result.converged)),
        "orders": orders,
    }
    if test.size:
        # center held-out rows with the training medians
        tx = x.values[test] - np.median(x.values[train], axis=0)
        ty = y.values[test] - np.median(y.values[train], axis=0)
        payload["test"] = {
            "n_test": int(test.size),
            "trim": args.trim,
            "residual_score": simlab.residual_score(list(result.a), list(result.b), tx, ty, args.trim),
        }
    _dump(payload, args.output)
    return 0


def _table(summary):
    lines = ["order  theta_a  theta_b  tpr_a  tnr_a  tpr_b  tnr_b  association  converged"]
    for e in summary.get("orders", []):
        lines.append(
            f"{e['order']:>5}  {e['theta_a']:7.3f}  {e['theta_b']:7.3f}  {e['tpr_a']:5.2f}  {e['tnr_a']:5.2f}  "
            f"{e['tpr_b']:5.2f}  {e['tnr_b']:5.2f}  {e['association']:11.3f}  {e['converged_fraction']:9.2f}"
        )
    lines.append(f"replicates {summary['replicates']}, failed {summary['failed']}")
    return "\n".join(lines)


def cmd_simulate(args):
    config = simlab.ScenarioConfig(
        args.setting, n=args.n, contamination_rate=args.contamination_rate,
        contamination_shift=args.contamination_shift, distribution=args.distribution,
        seed=args.seed, replicates=args.replicates, q=args.q,
    )
    alphas = (args.alpha_a, args.alpha_b)
    if args.penalties == "known":
        if alphas[0] != alphas[1]:
            raise DomainError("known penalties use one alpha for both sides")
        penalties = "known"
    else:
        penalties = make_tuner(alphas, args.budget, args.n0, args.seed, args.penalties)
    threads = args.threads if args.threads is not None else _default_threads()
    _, truth = simlab.build_sigma(config.setting, config.q)
    orders = min(args.orders, len(truth.rhos))
    reports = simlab.run_scenario(config, args.estimator, penalties, _settings(args), orders, args.init,
                                  alphas[0], threads=threads, standardize=args.standardize)
    summary = simlab.summarize(reports)
    os.makedirs(args.output_dir, exist_ok=True)
    simlab.write_csv(reports, os.path.join(args.output_dir, "replicates.csv"))
    # runtimes vary between runs, so they stay out of the summary file
    stable = {k: v for k, v in summary.items() if not k.startswith("runtime")}
    simlab.write_summary(stable, os.path.join(args.output_dir, "summary.json"), config,
                         {"schema_version": SCHEMA_VERSION, "command": "simulate", "estimator": args.estimator,
                          "penalties": args.penalties})
    print(_table(summary))
    return 0


def cmd_oracle(args):
    if args.setting:
        sigma, _ = simlab.build_sigma(args.setting, args.q)
        names_x = names_y = None
    else:
        if args.p is None:
            raise DomainError("--cov needs --p, the number of x variables")
        data = read_csv(args.cov)
        m = data.values
        if m.shape[0] != m.shape[1]:
            raise DomainError(f"covariance must be square, got {m.shape}")
        scale = max(np.abs(m).max(), 1.0)
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-10 * scale):
            raise DomainError("covariance matrix is not symmetric")
        sigma = JointCovariance.from_full(0.5 * (m + m.T), args.p)
        names = data.column_names
        names_x = names[: args.p] if names else None
        names_y = names[args.p :] if names else None
    sol = true_directions(sigma, args.orders)
    names_x = names_x or [f"x{j + 1}" for j in range(sigma.p)]
    names_y = names_y or [f"y{j + 1}" for j in range(sigma.q)]
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "oracle",
        "source": args.setting or os.path.basename(args.cov),
        "p": sigma.p,
        "q": sigma.q,
        "rhos": [float(r) for r in sol.rhos],
        "orders": [
            {"order": k + 1, "rho": float(sol.rhos[k]), "a": _named(sol.a_vectors[k], names_x),
             "b": _named(sol.b_vectors[k], names_y)}
            for k in range(len(sol.rhos))
        ],
    }
    _dump(payload, args.output)
    return 0


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "oracle": cmd_oracle}


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (RobSparseError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
