"""Monte-Carlo replication harness: parameter RMSE, prediction error, selection rates.

A run is described by a plain mapping (usually loaded from a JSON file)::

    {
      "dgp": "exp1",              # catalog name or a custom-design mapping
      "K": 100, "n": 5,
      "replications": 100,
      "seed": 20261017,
      "metrics": ["rmse", "prediction", "selection"],
      "candidates": ["clayton", "gaussian"],   # copulas fitted for selection
      "criterion": "bic",
      "independence": true,       # add the no-dependence baseline
      "start": "auto",            # or "true": start at the generating values
      "start_tau": 0.5,
      "quad_nodes": 25,
      "n_new": 100,               # new observations per replication
      "workers": 1
    }

Every replication draws from its own Philox stream spawned from the master
seed, so results do not depend on the number of workers or the order in which
replications finish.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..estimate import INDEPENDENCE, FitOptions, fit, fit_independence
from ..likelihood import DEFAULT_NODES
from ..model import ClusteredDataset, ModelSpec, QuadratureRule
from ..predict import cond_mean, latent_posterior
from .dgp import dgp, resolve

METRICS = ("rmse", "prediction", "selection")
COPULAS = ("clayton", "frank", "gaussian", "gumbel", "student")
TOP_COUNT = 5

_DEFAULTS = {
    "n": None,
    "replications": 100,
    "seed": 0,
    "metrics": ["rmse"],
    "candidates": None,
    "criterion": "bic",
    "independence": False,
    "start": "auto",
    "start_tau": 0.5,
    "quad_nodes": DEFAULT_NODES,
    "max_iter": 500,
    "n_new": 100,
    "workers": 1,
}


class ConfigError(ValueError):
    """Invalid harness configuration."""


def normalize_config(config: dict) -> dict:
    """Fill defaults and validate a harness configuration."""
    unknown = set(config) - set(_DEFAULTS) - {"dgp", "K", "name"}
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    if "dgp" not in config or "K" not in config:
        raise ConfigError("config needs at least 'dgp' and 'K'")
    cfg = {**_DEFAULTS, **config}
    try:
        resolve(cfg["dgp"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc.args[0] if exc.args else exc)) from None
    for key in ("K", "replications", "quad_nodes", "max_iter", "n_new", "workers"):
        if int(cfg[key]) < 1:
            raise ConfigError(f"{key} must be a positive integer")
        cfg[key] = int(cfg[key])
    if cfg["n"] is not None:
        cfg["n"] = int(cfg["n"])
    metrics = [m.lower() for m in cfg["metrics"]]
    bad = [m for m in metrics if m not in METRICS]
    if bad:
        raise ConfigError(f"unknown metric(s): {', '.join(bad)}")
    cfg["metrics"] = metrics
    cfg["criterion"] = str(cfg["criterion"]).lower()
    if cfg["criterion"] not in ("aic", "bic"):
        raise ConfigError("criterion must be aic or bic")
    if cfg["start"] not in ("auto", "true"):
        raise ConfigError("start must be 'auto' or 'true'")
    if cfg["candidates"] is not None:
        cands = [c.lower() for c in cfg["candidates"]]
        bad = [c for c in cands if c not in COPULAS]
        if bad:
            raise ConfigError(f"unknown candidate copula(s): {', '.join(bad)}")
        cfg["candidates"] = cands
    elif "selection" in metrics:
        cfg["candidates"] = list(COPULAS)
    if not 0 < float(cfg["start_tau"]) < 1:
        raise ConfigError("start_tau must lie in (0, 1)")
    return cfg


def load_config(path: str) -> dict:
    """Read a JSON harness configuration."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return normalize_config(raw)


def replication_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent counter-based generators, one per replication."""
    children = np.random.SeedSequence(int(seed)).spawn(int(count))
    return [np.random.Generator(np.random.Philox(c)) for c in children]


# Single replication ----------------------------------------------------------

def prediction_errors(y, yhat, top: int = TOP_COUNT) -> tuple[float, float]:
    """RMSE over all targets and over the ``top`` largest realized targets."""
    y = np.asarray(y, dtype=float)
    err = np.asarray(yhat, dtype=float) - y
    rmse = float(np.sqrt(np.mean(err**2)))
    idx = np.argsort(y, kind="stable")[-min(top, y.size):]
    return rmse, float(np.sqrt(np.mean(err[idx] ** 2)))


def _split_rows(data: ClusteredDataset, n_train: int):
    """Training rows (first ``n_train`` per cluster) and the held-out rest."""
    pos = np.arange(data.n_obs) - data.starts[data.cluster]
    train = pos < n_train

    def take(mask):
        return ClusteredDataset.from_arrays(
            data.y[mask], data.cluster[mask], {k: v[mask] for k, v in data.covariates.items()})

    return take(train), ~train


def _fit_record(res) -> dict:
    return {"theta": res.theta.tolist(), "se": res.se.tolist(), "loglik": res.loglik,
            "aic": res.aic, "bic": res.bic, "converged": res.converged,
            "iterations": res.iterations, "nan_encountered": res.nan_encountered,
            "grad_norm": res.grad_norm}


def _predict_new(spec, theta, train, data, test_mask, rule):
    posts = latent_posterior(spec, theta, train, rule)
    vhat = np.array([p.point for p in posts])
    xm = data.design(spec.margin_covariates)[test_mask]
    xc = data.design(spec.copula_covariates)[test_mask]
    # training keeps every cluster in the same first-appearance order
    v_rows = vhat[data.cluster[test_mask]]
    return np.asarray(cond_mean(spec, theta, xm, xc, v_rows), dtype=float).reshape(-1)


def run_replication(cfg: dict, index: int, rng: np.random.Generator) -> dict:
    """One replication; failures are recorded in the result, never raised."""
    record = {"rep": int(index), "ok": True, "error": "", "fits": {}, "prediction": {},
              "chosen": {}}
    try:
        entry = resolve(cfg["dgp"])
        n = entry.default_n if cfg["n"] is None else cfg["n"]
        want_pred = "prediction" in cfg["metrics"]
        extra = int(math.ceil(cfg["n_new"] / cfg["K"])) if want_pred else 0
        draw = dgp(entry, cfg["K"], n + extra, rng)
        record["true"] = draw.theta.tolist()
        record["true_copula"] = draw.spec.copula.name
        if extra:
            train, pool = _split_rows(draw.data, n)
            test = np.zeros(draw.data.n_obs, bool)
            # first n_new held-out rows in stored order
            test[np.flatnonzero(pool)[:cfg["n_new"]]] = True
        else:
            train, test = draw.data, None
        rule = QuadratureRule.gauss_legendre(cfg["quad_nodes"])
        opts = FitOptions(max_iter=cfg["max_iter"], start_tau=float(cfg["start_tau"]),
                          quad_nodes=cfg["quad_nodes"])
        true_name = draw.spec.copula.name
        names = list(cfg["candidates"] or [])
        if ("rmse" in cfg["metrics"] or want_pred) and true_name not in names:
            names.insert(0, true_name)
        results = {}
        for name in names:
            spec = draw.fit_spec(name)
            start = draw.theta if (cfg["start"] == "true" and name == true_name) else None
            try:
                results[name] = fit(spec, train, rule, start=start, options=opts)
                record["fits"][name] = _fit_record(results[name])
            except (ValueError, ArithmeticError) as exc:
                record["fits"][name] = {"error": str(exc)}
        if cfg["independence"]:
            res = fit_independence(draw.fit_spec(), train, rule, options=opts)
            results[INDEPENDENCE] = res
            record["fits"][INDEPENDENCE] = _fit_record(res)
        if "selection" in cfg["metrics"]:
            for crit in ("aic", "bic"):
                pool_names = [m for m in cfg["candidates"] if m in results]
                if cfg["independence"]:
                    pool_names.append(INDEPENDENCE)
                vals = [(results[m].criterion(crit) if np.isfinite(results[m].loglik)
                         else np.inf, results[m].n_params, i, m)
                        for i, m in enumerate(pool_names)]
                record["chosen"][crit] = min(vals)[3] if vals else None
        if want_pred:
            y_new = draw.data.y[test]
            record["n_new"] = int(test.sum())
            for name, res in results.items():
                if not np.isfinite(res.loglik):
                    continue
                yhat = _predict_new(res.spec, res.theta, train, draw.data, test, rule)
                rmse, rmse_top = prediction_errors(y_new, yhat)
                record["prediction"][name] = {"rmse": rmse, "rmse95": rmse_top}
    except Exception as exc:  # a broken replication must not stop the campaign
        record["ok"] = False
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


def _run_one(args):
    cfg, index, rng = args
    return run_replication(cfg, index, rng)


# Campaign --------------------------------------------------------------------

@dataclass
class HarnessReport:
    config: dict
    replications: list
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "summary": self.summary,
                "replications": self.replications}


def run(config: dict) -> HarnessReport:
    """Run every replication and aggregate the results."""
    cfg = normalize_config(config)
    rngs = replication_rngs(cfg["seed"], cfg["replications"])
    jobs = [(cfg, i, rng) for i, rng in enumerate(rngs)]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    return HarnessReport(cfg, records, summarize(cfg, records))


def summarize(cfg: dict, records: list) -> dict:
    """Aggregate replication records into RMSE, coverage, selection and prediction tables."""
    ok = [r for r in records if r["ok"]]
    out = {"replications": len(records), "failed": len(records) - len(ok),
           "errors": [{"rep": r["rep"], "error": r["error"]} for r in records if not r["ok"]]}
    if "rmse" in cfg["metrics"] and ok:
        true_name = ok[0]["true_copula"]
        fits = [(r["true"], r["fits"].get(true_name, {})) for r in ok]
        used = [(t, f) for t, f in fits if f.get("converged")]
        spec = ModelSpec.make(true_name, *_margin_layout(cfg))
        names = spec.param_names()
        table = []
        if used:
            err = np.array([np.subtract(f["theta"], t) for t, f in used])
            se = np.array([f["se"] for _, f in used], dtype=float)
            cover = np.abs(err) <= 1.959963984540054 * se
            for j, name in enumerate(names):
                table.append({"parameter": name,
                              "true": float(np.mean([t[j] for t, _ in used])),
                              "rmse": float(np.sqrt(np.mean(err[:, j] ** 2))),
                              "bias": float(np.mean(err[:, j])),
                              "mean_abs_error": float(np.mean(np.abs(err[:, j]))),
                              "coverage": float(np.mean(cover[:, j])),
                              "se_available": int(np.sum(np.isfinite(se[:, j])))})
        out["rmse"] = {"model": true_name, "used": len(used),
                       "not_converged": len(fits) - len(used), "parameters": table}
    if "selection" in cfg["metrics"] and ok:
        models = list(cfg["candidates"]) + ([INDEPENDENCE] if cfg["independence"] else [])
        sel = {}
        for crit in ("aic", "bic"):
            picks = [r["chosen"].get(crit) for r in ok]
            sel[crit] = {m: 100.0 * picks.count(m) / len(ok) for m in models}
        out["selection"] = sel
    if "prediction" in cfg["metrics"] and ok:
        models = sorted({m for r in ok for m in r["prediction"]})
        pred = {}
        for m in models:
            rows = [r["prediction"][m] for r in ok if m in r["prediction"]]
            pred[m] = {"rmse": float(np.mean([p["rmse"] for p in rows])),
                       "rmse95": float(np.mean([p["rmse95"] for p in rows])),
                       "rmse95_ge_rmse": float(np.mean([p["rmse95"] >= p["rmse"] for p in rows])),
                       "replications": len(rows)}
        out["prediction"] = pred
        true_name = ok[0]["true_copula"]
        if cfg["independence"]:
            wins = [r["prediction"][true_name]["rmse95"] < r["prediction"][INDEPENDENCE]["rmse95"]
                    for r in ok if {true_name, INDEPENDENCE} <= set(r["prediction"])]
            out["true_beats_independence_rmse95"] = float(np.mean(wins)) if wins else None
    return out


def _margin_layout(cfg):
    entry = resolve(cfg["dgp"])
    probe = dgp(entry, 1, 1, np.random.default_rng(0))
    return probe.spec.margin.name, probe.fit_margin_covariates, probe.fit_copula_covariates


# Output ------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return x


def write_report(report: HarnessReport, out_dir: str) -> dict:
    """Write ``summary.json`` plus CSV tables; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"summary": os.path.join(out_dir, "summary.json")}
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(_jsonable(report.to_dict()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    s = report.summary
    if "rmse" in s:
        paths["rmse"] = os.path.join(out_dir, "rmse.csv")
        cols = ["parameter", "true", "rmse", "bias", "mean_abs_error", "coverage",
                "se_available"]
        _write_csv(paths["rmse"], cols, s["rmse"]["parameters"])
    if "selection" in s:
        paths["selection"] = os.path.join(out_dir, "selection.csv")
        rows = [{"model": m, "aic_percent": s["selection"]["aic"][m],
                 "bic_percent": s["selection"]["bic"][m]} for m in s["selection"]["bic"]]
        _write_csv(paths["selection"], ["model", "aic_percent", "bic_percent"], rows)
    if "prediction" in s:
        paths["prediction"] = os.path.join(out_dir, "prediction.csv")
        rows = [{"model": m, **v} for m, v in s["prediction"].items()]
        _write_csv(paths["prediction"],
                   ["model", "rmse", "rmse95", "rmse95_ge_rmse", "replications"], rows)
    paths["replications"] = os.path.join(out_dir, "replications.csv")
    rows = []
    for r in report.replications:
        for m, f in (r["fits"] or {"": {}}).items():
            p = r["prediction"].get(m, {})
            rows.append({"rep": r["rep"], "ok": r["ok"], "model": m,
                         "converged": f.get("converged", ""), "loglik": f.get("loglik", ""),
                         "aic": f.get("aic", ""), "bic": f.get("bic", ""),
                         "rmse": p.get("rmse", ""), "rmse95": p.get("rmse95", ""),
                         "error": r["error"] or f.get("error", "")})
    _write_csv(paths["replications"], ["rep", "ok", "model", "converged", "loglik", "aic",
                                       "bic", "rmse", "rmse95", "error"], rows)
    return paths


def _write_csv(path, cols, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow({c: _fmt(row.get(c, "")) for c in cols})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
