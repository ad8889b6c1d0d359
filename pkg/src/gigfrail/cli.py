"""Command-line front end.

Subcommands::

    gigfrail fit       DATA.csv [--lambda L[,L...]] [--cuts K] [--baseline pe|weibull] ...
    gigfrail simulate  [--replicas N --fit L:K,...] [--frailty gamma] [--m 200] ...
    gigfrail profile   DATA.csv --min -5 --max 5 --step 0.1
    gigfrail rfv       --lambdas -0.5,0,0.5,1 --target-rfv0 0.7
    gigfrail km        DATA.csv [--group COLUMN]

Input files are comma-separated with a header whose first three columns are
``cluster_id,time,status``; any further columns are covariates. Output is
CSV on stdout or, with ``--out``, written atomically to a file. Floats are
written with ``repr`` so values survive a round trip unchanged.

Exit codes: 0 success, 1 a fit did not converge, 2 bad input.
"""

import argparse
import csv
import io
import logging
import math
import os
import sys
import tempfile

import numpy as np

from .baseline import CutMethod
from .distributions import FrailtyLaw
from .em import EmConfig, Optimizer, fit_em
from .inference import (
    bootstrap_se,
    fit_parametric_weibull,
    kaplan_meier,
    profile_lambda,
    rfv,
    rfv_alpha_for_target,
)
from .likelihood import Dataset
from .simulate import Scenario, generate, run_study, write_summary_csv

log = logging.getLogger("gigfrail")

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT = 0, 1, 2
REQUIRED_COLUMNS = ("cluster_id", "time", "status")
NAMED_LAMBDAS = {"ig": -0.5, "hyp": 0.0, "rig": 0.5, "phyp": 1.0}


class InputError(ValueError):
    """Malformed input file or arguments."""


# -- I/O -------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_dataset(path):
    """Parse an input CSV into a :class:`Dataset`; errors name the offending line."""
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise InputError(f"{path}: empty file, a header is required")
    header = [h.strip() for h in rows[0]]
    if tuple(header[:3]) != REQUIRED_COLUMNS:
        raise InputError(f"{path}: header must start with {','.join(REQUIRED_COLUMNS)}, got {','.join(header[:3])}")
    cov_names = tuple(header[3:])
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names in header")
    ids, times, status, covs = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        where = f"{path}, line {lineno}"
        if len(row) != len(header):
            raise InputError(f"{where}: expected {len(header)} fields, found {len(row)}")
        cells = [c.strip() for c in row]
        for name, c in zip(header, cells):
            if c == "" or c.lower() in ("na", "nan"):
                raise InputError(f"{where}: missing value in column '{name}'")
        try:
            t = float(cells[1])
        except ValueError:
            raise InputError(f"{where}: time '{cells[1]}' is not a number") from None
        if not (math.isfinite(t) and t > 0):
            raise InputError(f"{where}: time must be positive and finite, got {cells[1]}")
        if cells[2] not in ("0", "1"):
            raise InputError(f"{where}: status must be 0 or 1, got '{cells[2]}'")
        x = []
        for name, c in zip(cov_names, cells[3:]):
            try:
                v = float(c)
            except ValueError:
                raise InputError(f"{where}: column '{name}' value '{c}' is not a number") from None
            if not math.isfinite(v):
                raise InputError(f"{where}: column '{name}' must be finite")
            x.append(v)
        ids.append(cells[0])
        times.append(t)
        status.append(int(cells[2]))
        covs.append(x)
    if not ids:
        raise InputError(f"{path}: no data rows")
    if sum(status) == 0:
        raise InputError(f"{path}: no events (every status is 0); nothing to fit")
    x = np.array(covs, dtype=float).reshape(len(ids), len(cov_names))
    return Dataset.from_arrays(times, status, x, np.array(ids, dtype=object), covariate_names=cov_names)


def dataset_rows(data):
    header = list(REQUIRED_COLUMNS) + list(data.covariate_names)
    rows = []
    for i in range(data.n_obs):
        rows.append([str(data.cluster_labels[data.cluster[i]]), _fmt(data.time[i]), str(int(data.status[i]))]
                    + [_fmt(v) for v in data.covariates[i]])
    return header, rows


def _render(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([[_fmt(v) for v in r] for r in rows])
    return buf.getvalue()


def write_output(text, out):
    """Write ``text`` to ``out`` atomically, or to stdout when ``out`` is None or '-'."""
    if out in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    directory = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- argument helpers -----------------------------------------------------


def _float_list(s):
    try:
        out = [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{s}'") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _lambda_value(s):
    s = s.strip().lower()
    return NAMED_LAMBDAS[s] if s in NAMED_LAMBDAS else float(s)


def _lambda_list(s):
    try:
        out = [_lambda_value(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers or ig/hyp/rig/phyp, got '{s}'") from None
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _fit_specs(s):
    specs = []
    for item in s.split(","):
        try:
            lam, k = item.split(":")
            specs.append((_lambda_value(lam), int(k)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"fit spec '{item}' is not LAMBDA:K") from None
    return specs


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _em_config(args, lam):
    cuts = getattr(args, "cuts", 10)
    return EmConfig(lam=lam, k_cuts=cuts, cut_method=CutMethod(args.cut_method), tol=args.tol,
                    max_iter=args.max_iter, optimizer=Optimizer(args.optimizer))


def _add_fit_options(p):
    p.add_argument("--cuts", type=int, default=10, help="number of cut points k (k+1 intervals)")
    p.add_argument("--cut-method", choices=[m.value for m in CutMethod], default="quantile")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--optimizer", choices=[o.value for o in Optimizer], default="newton")


def _frailty_law(args):
    name = args.frailty.lower()
    if name == "gamma":
        return FrailtyLaw.gamma(args.alpha)
    if name == "ge":
        return FrailtyLaw.generalized_exponential(args.alpha)
    if name == "lognormal":
        return FrailtyLaw.lognormal(args.alpha)
    if name in NAMED_LAMBDAS:
        return FrailtyLaw.gig(args.alpha, NAMED_LAMBDAS[name])
    if name == "gig":
        if args.frailty_lambda is None:
            raise InputError("--frailty gig needs --frailty-lambda")
        return FrailtyLaw.gig(args.alpha, args.frailty_lambda)
    raise InputError(f"unknown frailty '{args.frailty}'")


# -- commands --------------------------------------------------------------


def _fit_one(data, lam, args):
    cfg = _em_config(args, lam)
    if args.baseline == "weibull":
        return fit_parametric_weibull(data, lam, cfg)
    return fit_em(data, cfg)


def cmd_fit(args):
    data = read_dataset(args.data)
    header, rows, status = None, [], EXIT_OK
    for lam in args.lam:
        fit = _fit_one(data, lam, args)
        est = fit.estimates()
        boot = None
        if args.bootstrap:
            boot = bootstrap_se(data, _em_config(args, lam), B=args.bootstrap, seed=args.seed,
                                baseline=args.baseline)
        rec = {"lambda": lam, "baseline": args.baseline,
               "k": args.cuts if args.baseline == "pe" else "", "n_obs": data.n_obs,
               "n_clusters": data.n_clusters}
        for name in data.covariate_names:
            b = est[f"beta_{name}"]
            rec[f"beta_{name}"] = b
            rec[f"hr_{name}"] = math.exp(b)
            if boot is not None:
                rec[f"se_beta_{name}"] = boot.standard_errors.get(f"beta_{name}", float("nan"))
        rec["var"] = est["var"]
        rec["alpha"] = est["alpha"]
        if boot is not None:
            rec["se_var"] = boot.standard_errors["var"]
            rec["se_alpha"] = boot.standard_errors["alpha"]
            rec["bootstrap_B"] = boot.n_resamples
            rec["bootstrap_failed"] = boot.n_failed
        if args.baseline == "weibull":
            rec["sigma"], rec["gamma"] = est["sigma"], est["gamma"]
        rec["loglik"] = fit.loglik
        rec["aic"] = fit.aic
        rec["n_iter"] = fit.n_iter
        rec["converged"] = fit.converged
        header = header or list(rec)
        rows.append([rec[h] for h in header])
        log.info("lambda=%g loglik=%.6f alpha=%.6g var=%.6g converged=%s",
                 lam, fit.loglik, est["alpha"], est["var"], fit.converged)
        if not fit.converged:
            log.error("fit at lambda=%g did not converge (%s)", lam, fit.message or f"{fit.n_iter} iterations")
            status = EXIT_NOT_CONVERGED
    write_output(_render(header, rows), args.out)
    return status


def cmd_simulate(args):
    scn = Scenario(frailty=_frailty_law(args), m=args.m, cluster_size=args.cluster_size,
                   event_weibull=(args.event_sigma, args.event_gamma),
                   censor_weibull=(args.censor_sigma, args.censor_gamma),
                   beta_true=tuple(args.beta), seed=args.seed, name=args.name)
    if args.replicas is None:
        data = generate(scn, np.random.default_rng(np.random.SeedSequence(args.seed)))
        header, rows = dataset_rows(data)
        write_output(_render(header, rows), args.out)
        return EXIT_OK
    if not args.fit:
        raise InputError("--replicas needs --fit LAMBDA:K[,LAMBDA:K...]")
    cfg = EmConfig(cut_method=CutMethod(args.cut_method), tol=args.tol, max_iter=args.max_iter,
                   optimizer=Optimizer(args.optimizer))
    rows = run_study(scn, args.fit, args.replicas, cfg)
    buf = io.StringIO()
    write_summary_csv(rows, buf)
    write_output(buf.getvalue(), args.out)
    return EXIT_OK


def _grid(lo, hi, step):
    if not step > 0:
        raise InputError("--step must be positive")
    if hi < lo:
        raise InputError("--max must not be below --min")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    # rounding keeps 0.1-type grids on their decimal values
    return [round(lo + i * step, 12) for i in range(n)]


def cmd_profile(args):
    data = read_dataset(args.data)
    grid = _grid(args.min, args.max, args.step)
    points = profile_lambda(data, grid, _em_config(args, 0.0))
    rows = [[pt.lam, pt.loglik, pt.params.alpha, int(pt.converged)] for pt in points]
    write_output(_render(["lambda", "loglik", "alpha", "converged"], rows), args.out)
    if points:
        best = max(points, key=lambda pt: pt.loglik)
        log.info("profile maximum at lambda=%g (loglik %.6f)", best.lam, best.loglik)
    return EXIT_OK if all(pt.converged for pt in points) else EXIT_NOT_CONVERGED


def cmd_rfv(args):
    s = np.array(_grid(args.s_min, args.s_max, args.s_step))
    rows = []
    for lam in args.lambdas:
        try:
            alpha = args.alpha if args.alpha is not None else rfv_alpha_for_target(lam, args.target_rfv0)
            values = np.atleast_1d(rfv(alpha, s, lam))
        except ValueError as exc:
            log.error("lambda=%g skipped: %s", lam, exc)
            continue
        rows.extend([lam, alpha, si, vi] for si, vi in zip(s, values))
    write_output(_render(["lambda", "alpha", "s", "rfv"], rows), args.out)
    return EXIT_OK


def cmd_km(args):
    data = read_dataset(args.data)
    if args.group is None:
        groups = [("all", np.ones(data.n_obs, dtype=bool))]
    elif args.group == "cluster_id":
        groups = [(lab, data.cluster == c) for c, lab in enumerate(data.cluster_labels)]
    else:
        if args.group not in data.covariate_names:
            raise InputError(f"--group column '{args.group}' not in {', '.join(data.covariate_names)}")
        col = data.covariates[:, data.covariate_names.index(args.group)]
        groups = [(_fmt(v), col == v) for v in np.unique(col)]
    rows = []
    for label, mask in groups:
        t, surv = kaplan_meier(data.time[mask], data.status[mask])
        rows.extend([label, ti, si] for ti, si in zip(t, surv))
    write_output(_render(["group", "time", "survival"], rows), args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="gigfrail", description="GIG frailty models for clustered survival data.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output CSV path (default stdout)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("fit", parents=[common], help="fit the model to a CSV file")
    p.add_argument("data")
    p.add_argument("--lambda", dest="lam", type=_lambda_list, default=[0.0],
                   help="GIG index (number or ig/hyp/rig/phyp); a comma-separated list gives one row each")
    p.add_argument("--baseline", choices=["pe", "weibull"], default="pe")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B", help="number of cluster bootstrap resamples")
    _add_fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", parents=[common], help="simulate a dataset or run a Monte Carlo study")
    p.add_argument("--frailty", default="gamma", help="gamma, ig, hyp, rig, phyp, gig, ge or lognormal")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--frailty-lambda", type=float)
    p.add_argument("--m", type=_positive_int, default=200, help="number of clusters")
    p.add_argument("--cluster-size", type=_positive_int, default=2)
    p.add_argument("--event-sigma", type=float, default=0.25)
    p.add_argument("--event-gamma", type=float, default=2.0)
    p.add_argument("--censor-sigma", type=float, default=0.05)
    p.add_argument("--censor-gamma", type=float, default=2.0)
    p.add_argument("--beta", type=_float_list, default=[1.5, -1.0])
    p.add_argument("--name", default="scenario")
    p.add_argument("--replicas", type=_positive_int, help="run a study with this many replicas")
    p.add_argument("--fit", type=_fit_specs, help="study fit specs, e.g. rig:10,-0.5:10")
    _add_fit_options(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("profile", parents=[common], help="profile log-likelihood over a lambda grid")
    p.add_argument("data")
    p.add_argument("--min", type=float, default=-5.0)
    p.add_argument("--max", type=float, default=5.0)
    p.add_argument("--step", type=float, default=0.1)
    _add_fit_options(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("rfv", parents=[common], help="relative frailty variance curves")
    p.add_argument("--lambdas", type=_lambda_list, default=[-0.5, 0.0, 0.5, 1.0])
    p.add_argument("--target-rfv0", type=float, default=0.7)
    p.add_argument("--alpha", type=float, help="use this alpha instead of calibrating to --target-rfv0")
    p.add_argument("--s-min", type=float, default=0.0)
    p.add_argument("--s-max", type=float, default=10.0)
    p.add_argument("--s-step", type=float, default=0.1)
    p.set_defaults(func=cmd_rfv)

    p = sub.add_parser("km", parents=[common], help="Kaplan-Meier curves")
    p.add_argument("data")
    p.add_argument("--group", help="covariate column (or cluster_id) defining the groups")
    p.set_defaults(func=cmd_km)
    return parser


# options whose values may start with '-' without being plain negative numbers
_LIST_OPTIONS = ("--lambda", "--lambdas", "--beta", "--fit")


def _attach_list_values(argv):
    """Rewrite ``--lambdas -0.5,0`` as ``--lambdas=-0.5,0`` so argparse does not read a flag."""
    out = []
    i = 0
    while i < len(argv):
        if argv[i] in _LIST_OPTIONS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_attach_list_values(argv))
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
