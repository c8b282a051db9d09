"""Command-line front end: ``fit``, ``predict``, ``select``, ``simulate`` and ``curves``.

Exit codes: 0 success, 1 input or configuration error, 2 non-convergence
(the report is still written).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from .copulas import CopulaDomainError, CopulaNumericError
from .estimate import FitOptions, fit, select
from .likelihood import DEFAULT_NODES
from .margins import MarginDomainError
from .model import ClusteredDataset, DataError, ModelSpec, ParamVector
from .predict import PredictionError, cond_mean, cond_quantile, latent_posterior, link_curve
from .simulate import harness
from .simulate.dgp import CATALOG, dgp

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2
COPULAS = ("clayton", "frank", "gaussian", "gumbel", "student")
MARGINS = ("gaussian", "poisson", "bernoulli")
MISSING = {"", "na", "nan", "null", "none"}


class InputError(Exception):
    """Problem with the user's files or flags; reported with exit code 1."""


# Formatting ------------------------------------------------------------------

def fmt(x) -> str:
    """17-significant-digit text for CSV cells."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return format(x, ".17g")
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def write_json(obj, path):
    fh, close = _open_out(path)
    try:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")
    finally:
        if close:
            fh.close()


def write_csv(header, rows, path):
    fh, close = _open_out(path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    finally:
        if close:
            fh.close()


# Input -----------------------------------------------------------------------

def _split_names(text):
    if not text:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def read_table(path, cluster_col, response_col, covariates):
    """Read a CSV into a dataset; returns ``(data, info)``.

    Rows missing any required value are dropped and counted.  Non-numeric
    cells raise :class:`InputError` with the file line number.
    """
    try:
        fh = sys.stdin if path == "-" else open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError("no data rows")
        header = [h.strip() for h in header]
        needed = [cluster_col, response_col] + [c for c in covariates if c not in
                                                (cluster_col, response_col)]
        needed = list(dict.fromkeys(needed))
        missing = [c for c in needed if c not in header]
        if missing:
            raise InputError(f"missing column(s) in {path}: {', '.join(missing)}")
        idx = {c: header.index(c) for c in needed}
        cl, y, cov = [], [], {c: [] for c in covariates}
        rejected = 0
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            cells = {c: (row[i].strip() if i < len(row) else "") for c, i in idx.items()}
            if any(cells[c].lower() in MISSING for c in needed):
                rejected += 1
                continue
            try:
                y.append(float(cells[response_col]))
                for c in covariates:
                    cov[c].append(float(cells[c]))
            except ValueError:
                bad = next(c for c in [response_col] + list(covariates)
                           if not _is_number(cells[c]))
                raise InputError(f"non-numeric value {cells[bad]!r} in column {bad!r} "
                                 f"at row {line_no}") from None
            if not all(map(math.isfinite, [y[-1]] + [cov[c][-1] for c in covariates])):
                raise InputError(f"non-finite value at row {line_no}")
            cl.append(cells[cluster_col])
    if not y:
        raise InputError("no data rows")
    data = ClusteredDataset.from_arrays(np.array(y), np.array(cl, dtype=object),
                                        {c: np.array(v) for c, v in cov.items()})
    return data, {"rows_used": len(y), "rows_rejected": rejected}


def _is_number(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def _spec_from_args(args, copula=None):
    return ModelSpec.make(copula or args.copula, args.margin,
                          _split_names(args.margin_covariates),
                          _split_names(args.copula_covariates), df=args.df)


def _options(args):
    return FitOptions(max_iter=args.max_iter, tol_grad=args.tol_grad,
                      start_tau=args.start_tau, quad_nodes=args.quad_nodes)


def _load_data(args, spec):
    covs = list(dict.fromkeys(list(spec.margin_covariates) + list(spec.copula_covariates)))
    data, info = read_table(args.data, args.cluster_col, args.response_col, covs)
    check_support(spec.margin.name, data.y)
    return data, info


def check_support(margin, y):
    """Reject responses the margin gives zero probability."""
    if margin == "poisson":
        bad = (y < 0) | (y != np.floor(y))
        what = "non-negative integers"
    elif margin == "bernoulli":
        bad = (y != 0) & (y != 1)
        what = "0 or 1"
    else:
        return
    if bad.any():
        raise InputError(f"{int(bad.sum())} response value(s) outside the {margin} support "
                         f"({what}), first {fmt(y[bad][0])}")


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON: {exc}") from None


def _params_from_report(obj, spec):
    """Parameter values from a fit report or a plain ``{name: value}`` mapping."""
    if isinstance(obj, dict) and "parameters" in obj:
        values = {p["name"]: p["estimate"] for p in obj["parameters"]}
    elif isinstance(obj, dict):
        values = obj
    elif isinstance(obj, list):
        return ParamVector(np.asarray(obj, dtype=float), spec)
    else:
        raise InputError("parameter file must hold a fit report, a mapping or a list")
    try:
        return ParamVector.from_dict(spec, values)
    except (ValueError, TypeError) as exc:
        raise InputError(str(exc)) from None


def _start(args, spec):
    if args.start in (None, "auto"):
        return None
    return _params_from_report(_read_json(args.start, "start file"), spec)


# Commands ----------------------------------------------------------------------

def _latent_rows(spec, theta, data, rule):
    posts = latent_posterior(spec, theta, data, rule)
    return posts, [{"cluster": p.cluster, "v_median": p.median, "v_mean": p.mean,
                    "degenerate": p.degenerate} for p in posts]


def cmd_fit(args) -> int:
    spec = _spec_from_args(args)
    data, info = _load_data(args, spec)
    opts = _options(args)
    rule = opts.rule()
    res = fit(spec, data, rule, start=_start(args, spec), options=opts)
    report = res.to_dict()
    report["data"] = {**info, "n_clusters": data.n_clusters, "cluster_col": args.cluster_col,
                      "response_col": args.response_col}
    report["start"] = {"method": "auto" if args.start in (None, "auto") else "file",
                       "start_tau": args.start_tau, "values": res.start.tolist(),
                       "loglik": res.start_loglik}
    report["neg_inf_clusters"] = [data.labels[k] for k in res.neg_inf_clusters]
    if np.isfinite(res.loglik):
        report["latent"] = _latent_rows(spec, res.theta, data, rule)[1]
    else:
        report["latent"] = []
    write_json(report, args.out)
    if not res.converged:
        print(f"warning: fit did not converge ({res.message})", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _quantile_levels(text):
    levels = [float(q) for q in _split_names(text)]
    if any(not 0 < q < 1 for q in levels):
        raise InputError("quantile levels must lie in (0, 1)")
    return levels


def cmd_predict(args) -> int:
    spec = _spec_from_args(args)
    data, info = _load_data(args, spec)
    opts = _options(args)
    rule = opts.rule()
    status = EXIT_OK
    if args.params:
        theta = _params_from_report(_read_json(args.params, "parameter file"), spec).values
    else:
        res = fit(spec, data, rule, start=_start(args, spec), options=opts)
        theta = res.theta
        if not res.converged:
            print(f"warning: fit did not converge ({res.message})", file=sys.stderr)
            status = EXIT_NONCONVERGED
    levels = _quantile_levels(args.quantiles)
    posts, _ = _latent_rows(spec, theta, data, rule)
    index = {lab: k for k, lab in enumerate(data.labels)}
    if args.new:
        covs = list(dict.fromkeys(list(spec.margin_covariates) + list(spec.copula_covariates)))
        new_rows = _read_new(args.new, args.cluster_col, covs)
        unknown = sorted({c for c, _ in new_rows if c not in index}, key=str)
        if unknown:
            raise InputError(f"cluster(s) not present in the fitted data: "
                             f"{', '.join(map(str, unknown))}")
        labels = [c for c, _ in new_rows]
        xrow = {c: np.array([r[c] for _, r in new_rows]) for c in covs}
        codes = np.array([index[c] for c in labels], dtype=int)
    else:
        labels = [data.labels[k] for k in data.cluster]
        xrow = data.covariates
        codes = data.cluster
    n = len(labels)
    xm = np.column_stack([xrow[c] for c in spec.margin_covariates]) if spec.margin_covariates \
        else np.zeros((n, 0))
    xc = np.column_stack([xrow[c] for c in spec.copula_covariates]) if spec.copula_covariates \
        else np.zeros((n, 0))
    vmed = np.array([p.median for p in posts])[codes]
    vmean = np.array([p.mean for p in posts])[codes]
    vhat = vmed if args.estimator == "median" else vmean
    mean = np.asarray(cond_mean(spec, theta, xm, xc, vhat), dtype=float).reshape(-1)
    qcols = [np.asarray(cond_quantile(spec, theta, np.full(n, q), xm, xc, vhat),
                        dtype=float).reshape(-1) for q in levels]
    header = ["cluster", "row", "v_median", "v_mean", "mean"] + [f"q{q:g}" for q in levels]
    rows = [[labels[i], i + 1, vmed[i], vmean[i], mean[i]] + [c[i] for c in qcols]
            for i in range(n)]
    write_csv(header, rows, args.out)
    return status


def _read_new(path, cluster_col, covariates):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        missing = [c for c in [cluster_col] + covariates if c not in fields]
        if missing:
            raise InputError(f"missing column(s) in {path}: {', '.join(missing)}")
        out = []
        for line_no, row in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            vals = {}
            for c in covariates:
                if not _is_number(row[c]):
                    raise InputError(f"non-numeric value {row[c]!r} in column {c!r} "
                                     f"at row {line_no}")
                vals[c] = float(row[c])
            out.append((row[cluster_col], vals))
    if not out:
        raise InputError("no data rows")
    return out


def cmd_select(args) -> int:
    names = _split_names(args.copulas) or list(COPULAS)
    bad = [c for c in names if c not in COPULAS]
    if bad:
        raise InputError(f"unknown copula(s): {', '.join(bad)}")
    specs = [_spec_from_args(args, c) for c in names]
    data, info = _load_data(args, specs[0])
    opts = _options(args)
    ranked = select(specs, data, opts.rule(), criterion=args.criterion, options=opts)
    header = ["rank", "copula", "n_params", "loglik", "aic", "bic", "converged", "chosen",
              "error"]
    rows = []
    for i, c in enumerate(ranked):
        r = c.result
        rows.append([i + 1, c.spec.copula.name, c.spec.n_params,
                     r.loglik if r else float("nan"), r.aic if r else float("nan"),
                     r.bic if r else float("nan"), bool(r and r.converged), i == 0, c.error])
    write_csv(header, rows, args.out)
    if ranked[0].flagged:
        print("warning: the chosen candidate did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.config:
        cfg = harness.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        report = harness.run(cfg)
        if not args.out or args.out == "-":
            raise InputError("--out must name a directory for harness runs")
        harness.write_report(report, args.out)
        if report.summary["failed"]:
            print(f"warning: {report.summary['failed']} replication(s) failed", file=sys.stderr)
        return EXIT_OK
    if not args.dgp:
        raise InputError("simulate needs --dgp or --config")
    if args.K is None:
        raise InputError("simulate --dgp needs --K")
    rng = np.random.default_rng(args.seed)
    draw = dgp(args.dgp, args.K, args.n, rng)
    data = draw.data
    covs = list(data.covariates)
    header = [args.cluster_col, args.response_col] + covs
    inv = np.empty_like(data.order)
    inv[data.order] = np.arange(data.order.size)
    rows = []
    for i in inv:
        rows.append([data.labels[data.cluster[i]], data.y[i]] + [data.covariates[c][i]
                                                                 for c in covs])
    write_csv(header, rows, args.out)
    if args.truth:
        write_json({"dgp": draw.name, "model": draw.spec.describe(),
                    "parameters": dict(zip(draw.spec.param_names(), draw.theta.tolist())),
                    "fit_margin_covariates": list(draw.fit_margin_covariates),
                    "fit_copula_covariates": list(draw.fit_copula_covariates),
                    "latent": draw.v.tolist(), "seed": args.seed}, args.truth)
    return EXIT_OK


def cmd_curves(args) -> int:
    if args.independence:
        copula, beta = "gaussian", [0.0]
    else:
        copula = args.copula
        beta = [float(b) for b in _split_names(args.beta)] if args.beta else None
    cov = args.covariate
    spec = ModelSpec.make(copula, "bernoulli", (cov,), (), df=args.df)
    if args.params:
        theta = _params_from_report(_read_json(args.params, "parameter file"), spec).values
    else:
        alpha = [float(a) for a in _split_names(args.alpha)]
        if len(alpha) != 2:
            raise InputError("--alpha needs intercept,slope for the link covariate")
        if beta is None or len(beta) != 1:
            raise InputError("--beta needs the copula predictor (one value)")
        theta = np.array(alpha + beta)
    if args.x_points < 2 or not args.x_max > args.x_min:
        raise InputError("need --x-points >= 2 and --x-max > --x-min")
    x = np.linspace(args.x_min, args.x_max, args.x_points)
    v = [float(t) for t in _split_names(args.v)]
    curves = link_curve(spec, theta, x[:, None], None, v)
    rows = [[x[j], v[i], curves[i, j]] for i in range(len(v)) for j in range(x.size)]
    write_csv([cov, "v", "logit"], rows, args.out)
    return EXIT_OK


# Parser --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; exit 2 is reserved for non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _model_flags(p, copula_required=True):
    if copula_required:
        p.add_argument("--copula", required=True, choices=COPULAS)
    p.add_argument("--margin", required=True, choices=MARGINS)
    p.add_argument("--df", type=float, default=15.0, help="Student copula degrees of freedom")
    p.add_argument("--margin-covariates", default="", help="comma-separated column names")
    p.add_argument("--copula-covariates", default="", help="comma-separated column names")


def _data_flags(p):
    p.add_argument("data", help="input CSV with a header row ('-' for stdin)")
    p.add_argument("--cluster-col", default="cluster")
    p.add_argument("--response-col", default="y")


def _fit_flags(p):
    p.add_argument("--quad-nodes", type=int, default=DEFAULT_NODES)
    p.add_argument("--start", default="auto", help="'auto' or a JSON file of starting values")
    p.add_argument("--start-tau", type=float, default=0.5)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol-grad", type=float, default=None)
    p.add_argument("--seed", type=int, default=None, help="accepted for uniformity; fits are "
                   "deterministic")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="factorcop",
                     description="Factor copula regression for clustered data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model and write a JSON report")
    _data_flags(p)
    _model_flags(p)
    _fit_flags(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="latent estimates and conditional predictions")
    _data_flags(p)
    _model_flags(p)
    _fit_flags(p)
    p.add_argument("--params", help="fit report (or name->value JSON) to predict from")
    p.add_argument("--new", help="CSV of new rows in existing clusters")
    p.add_argument("--quantiles", default="", help="comma-separated levels in (0, 1)")
    p.add_argument("--estimator", choices=("median", "mean"), default="median")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("select", help="rank copula candidates by AIC or BIC")
    _data_flags(p)
    _model_flags(p, copula_required=False)
    _fit_flags(p)
    p.add_argument("--copulas", default=",".join(COPULAS))
    p.add_argument("--criterion", choices=("aic", "bic"), default="bic")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="draw a dataset or run a replication campaign")
    p.add_argument("--dgp", choices=sorted(CATALOG))
    p.add_argument("--K", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="JSON harness configuration")
    p.add_argument("--cluster-col", default="cluster")
    p.add_argument("--response-col", default="y")
    p.add_argument("--truth", help="also write the generating parameters as JSON")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("curves", help="logit P(Y=1 | x, v) table for a Bernoulli model")
    p.add_argument("--copula", choices=COPULAS, default="gaussian")
    p.add_argument("--df", type=float, default=15.0)
    p.add_argument("--independence", action="store_true")
    p.add_argument("--params", help="fit report with one margin covariate")
    p.add_argument("--alpha", help="margin intercept,slope")
    p.add_argument("--beta", help="copula linear predictor")
    p.add_argument("--covariate", default="x")
    p.add_argument("--x-min", type=float, default=-4.0)
    p.add_argument("--x-max", type=float, default=6.0)
    p.add_argument("--x-points", type=int, default=101)
    p.add_argument("--v", default="0.1,0.5,0.9")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "quad_nodes", 1) < 1:
        print("error: --quad-nodes must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, DataError, harness.ConfigError, PredictionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CopulaDomainError, MarginDomainError, CopulaNumericError, KeyError,
            ValueError) as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
