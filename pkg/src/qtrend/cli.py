"""Command line front end: ``python -m qtrend <command> ...``.

Every flag can also come from a flat ``key = value`` config file given with
``--config``; keys are the flag names (dashes or underscores), and flags on
the command line override the file.
"""
import argparse
from dataclasses import dataclass, field
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import metrics
from .consensus import (DEFAULT_GAMMA, DEFAULT_OVERLAP, StoppingRule, fit_windows,
                        make_layout)
from .errors import ConvergenceError, InputError, QTrendError
from .selection import CRITERIA, LambdaGrid, select_lambdas
from .simulate import PeaksDesign, RacineDesign, RACINE_KINDS, gen_peaks, gen_racine
from .solver import QuantileSpec, WeightMask, objective

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3

RACINE_TAUS = (0.05, 0.25, 0.5, 0.75, 0.95)
BASELINE_TAUS = (0.01, 0.05, 0.1)
TIMING_TAUS = (0.05, 0.1, 0.15)
DEFAULT_LEVELS = (0.90, 0.95, 0.99)


def _floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    parts = [p for p in str(text).replace(";", ",").split(",") if p.strip()]
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise InputError(f"expected a comma separated list of numbers, got {text!r}") from None


def _ints(text):
    return tuple(int(round(v)) for v in _floats(text))


# --------------------------------------------------------------------------
# input / output

@dataclass
class Series:
    t: np.ndarray
    y: np.ndarray
    mask: WeightMask
    time_name: str = "t"


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def ingest(path, value_col=None, time_col=None, missing="mask"):
    """Read one numeric series from a CSV file with a header row.

    Empty or NaN cells are missing: masked out (``missing="mask"``) or
    linearly interpolated in time (``missing="interpolate"``).
    """
    if missing not in ("mask", "interpolate"):
        raise InputError(f"missing policy must be mask or interpolate, got {missing!r}")
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        rows = list(reader)
    if value_col is None:
        candidates = [h for h in header if h != time_col and h.lower() not in ("t", "time", "")]
        value_col = "y" if "y" in header else (candidates[0] if candidates else None)
    if value_col not in header:
        raise InputError(f"{path}: column {value_col!r} not found in {header}")
    if time_col is None and "t" in header:
        time_col = "t"
    if time_col is not None and time_col not in header:
        raise InputError(f"{path}: time column {time_col!r} not found in {header}")
    vi = header.index(value_col)
    ti = None if time_col is None else header.index(time_col)
    y, t, bad = [], [], []
    for lineno, row in enumerate(rows, 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            bad.append(lineno)
            continue
        cell = row[vi].strip()
        try:
            y.append(float(cell) if cell and cell.lower() not in ("na", "nan") else math.nan)
            t.append(float(row[ti]) if ti is not None else float(len(t) + 1))
        except ValueError:
            bad.append(lineno)
    if bad:
        shown = ", ".join(str(b) for b in bad[:10])
        raise InputError(f"{path}: unparseable rows at lines {shown}"
                         + (" ..." if len(bad) > 10 else ""))
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    if y.size == 0 or not np.any(np.isfinite(y)):
        raise InputError(f"{path}: no observed values")
    if np.any(np.diff(t) <= 0):
        raise InputError(f"{path}: timestamps must be strictly increasing")
    obs = np.isfinite(y)
    if missing == "interpolate":
        y = np.interp(t, t[obs], y[obs])
        obs = np.ones(y.size, dtype=bool)
    return Series(t, y, WeightMask(obs.astype(float)), time_col or "t")


def write_table(path, columns):
    """Write named columns to CSV; floats are written at full precision."""
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(names)
        for i in range(len(cols[0])):
            out.writerow([_cell(c[i]) for c in cols])


def _cell(v):
    if isinstance(v, (np.floating, float)):
        return "" if not math.isfinite(v) else repr(float(v))
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return str(v)


def read_table(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    return {h: np.array([float(r[i]) if r[i] != "" else math.nan for r in rows])
            for i, h in enumerate(header)}


def _tau_name(tau):
    return f"tau_{tau:g}"


# --------------------------------------------------------------------------
# plots

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "qtrend"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    fig.clf()


def plot_trends(path, t, y, theta, taus):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(t, y, ".", color="0.6", markersize=2, label="observed")
    for j, tau in enumerate(taus):
        ax.plot(t, theta[:, j], lw=1.5, label=f"tau = {tau:g}")
    ax.set_xlabel("time")
    ax.set_ylabel("value")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_rug(path, t, resid, thresholds, labels):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, resid, lw=0.6, color="0.3")
    lo = float(np.nanmin(resid))
    for k, (thr, lab) in enumerate(zip(thresholds, labels)):
        ax.axhline(thr, ls="--", lw=0.8, color=f"C{k}", label=lab)
    ax.plot(t[resid > thresholds[0]], np.full(int(np.sum(resid > thresholds[0])), lo), "|",
            color="C3", markersize=8)
    ax.set_xlabel("time")
    ax.set_ylabel("detrended")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_vi(path, labels, raw, detrended):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3))
    x = np.arange(len(labels))
    ax.bar(x - 0.2, raw, width=0.4, label="raw")
    ax.bar(x + 0.2, detrended, width=0.4, label="detrended")
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylabel("VI")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


# --------------------------------------------------------------------------
# pipelines

@dataclass
class RunConfig:
    input: str = None
    input2: str = None
    time_col: str = None
    value_col: str = None
    taus: tuple = BASELINE_TAUS
    k: int = 2
    lam: tuple = None
    grid: tuple = None
    criterion: str = None
    windows: int = 1
    overlap: int = DEFAULT_OVERLAP
    gamma: float = DEFAULT_GAMMA
    eps_abs: float = 0.01
    eps_rel: float = 0.001
    max_iterations: int = 100
    missing: str = "mask"
    levels: tuple = DEFAULT_LEVELS
    output: str = "."
    seed: int = 0
    plots: bool = True

    def __post_init__(self):
        if self.windows < 1:
            raise InputError("windows must be >= 1")
        if any(not 0 < t < 1 for t in self.taus):
            raise InputError(f"taus must lie in (0, 1): {self.taus}")
        if self.criterion is not None and self.criterion not in CRITERIA:
            raise InputError(f"criterion must be one of {CRITERIA}")
        if any(not 0 < q <= 1 for q in self.levels):
            raise InputError("threshold levels must lie in (0, 1]")


def _fit(series, cfg):
    """Selection (if asked) and the final fit; returns (result, report, trace)."""
    y = series.y
    report = None
    if cfg.lam is not None and cfg.criterion is None:
        lams = cfg.lam
    else:
        grid = LambdaGrid(cfg.grid) if cfg.grid else LambdaGrid.default(y.size)
        report, res = select_lambdas(y, cfg.taus, grid, cfg.criterion or "ebic", k=cfg.k,
                                     mask=series.mask)
        lams = report.chosen
        if cfg.windows == 1:
            return res, report, None
    spec = QuantileSpec(cfg.taus, lams, cfg.k)
    layout = make_layout(y.size, cfg.windows, cfg.overlap, cfg.k)
    rule = StoppingRule(cfg.eps_abs, cfg.eps_rel, cfg.max_iterations)
    res, trace = fit_windows(y, spec, layout, cfg.gamma, rule, mask=series.mask)
    return res, report, (trace if cfg.windows > 1 else None)


def run_detrend(cfg, select_only=False):
    os.makedirs(cfg.output, exist_ok=True)
    series = ingest(cfg.input, cfg.value_col, cfg.time_col, cfg.missing)
    out = lambda name: os.path.join(cfg.output, name)
    try:
        res, report, trace = _fit(series, cfg)
    except ConvergenceError as exc:
        _write_partial(cfg, exc)
        raise
    if report is not None:
        report.to_json(out("selection_report.json"))
    t, y = series.t, series.y
    taus = cfg.taus
    write_table(out("trends.csv"), {series.time_name: t,
                                    **{_tau_name(tau): res.theta[:, j] for j, tau in enumerate(taus)}})
    spec = QuantileSpec(taus, report.chosen if report is not None else cfg.lam, cfg.k)
    summary = {
        "taus": list(taus),
        "lambdas": list(spec.lambdas),
        "k": cfg.k,
        "windows": cfg.windows,
        "objective": objective(np.where(series.mask.weights > 0, y, 0.0), res.theta, spec,
                               series.mask),
        "knots": list(res.knots),
        "converged": bool(res.converged),
        "n": int(y.size),
        "missing": int(np.sum(series.mask.weights == 0)),
    }
    if trace is not None:
        trace.to_csv(out("convergence_trace.csv"))
        summary["outer_iterations"] = len(trace)
        summary["converged"] = bool(trace.converged)
    if select_only:
        _dump(out("summary.json"), summary)
        return summary

    resid = y[:, None] - res.theta
    write_table(out("residuals.csv"), {series.time_name: t,
                                       **{_tau_name(tau): resid[:, j] for j, tau in enumerate(taus)}})
    classes = {series.time_name: t}
    thresholds = {}
    for j, tau in enumerate(taus):
        thr = metrics.quantile_thresholds(y, res.theta[:, j], cfg.levels)
        thresholds[_tau_name(tau)] = thr
        for q, th in zip(cfg.levels, thr):
            classes[f"{_tau_name(tau)}_q{q:g}"] = metrics.classify(y, res.theta[:, j], th)
    write_table(out("classifications.csv"), classes)
    summary["thresholds"] = thresholds

    if cfg.input2:
        summary["vi"] = _compare(cfg, series, res)
    _dump(out("summary.json"), summary)
    if cfg.plots:
        plot_trends(out("trends.svg"), t, y, res.theta, taus)
        thr = thresholds[_tau_name(taus[0])]
        plot_rug(out("rug.svg"), t, resid[:, 0], thr, [f"q{q:g}" for q in cfg.levels])
        if cfg.input2:
            labels = [f"q{q:g}" for q in cfg.levels]
            plot_vi(out("vi.svg"), labels, summary["vi"]["raw"], summary["vi"]["detrended"])
    if trace is not None and not trace.converged:
        raise ConvergenceError(f"consensus stopped after {len(trace)} iterations without meeting "
                               "the stopping rule", iterations=len(trace))
    return summary


def _compare(cfg, series, res):
    """VI between the two series' classifications, raw and after detrending (lowest level)."""
    other = ingest(cfg.input2, cfg.value_col, cfg.time_col, cfg.missing)
    if other.y.size != series.y.size or not np.array_equal(other.t, series.t):
        raise InputError("the two inputs must share the same time index")
    res2, _, _ = _fit(other, cfg)
    raw, det = [], []
    for q in cfg.levels:
        a = (series.y > metrics.nearest_rank(series.y, q)).astype(np.int8)
        b = (other.y > metrics.nearest_rank(other.y, q)).astype(np.int8)
        raw.append(metrics.vi(a, b))
        r1 = series.y - res.theta[:, 0]
        r2 = other.y - res2.theta[:, 0]
        da = metrics.classify(series.y, res.theta[:, 0], metrics.nearest_rank(r1, q))
        db = metrics.classify(other.y, res2.theta[:, 0], metrics.nearest_rank(r2, q))
        det.append(metrics.vi(da, db))
    return {"levels": list(cfg.levels), "raw": raw, "detrended": det}


def _write_partial(cfg, exc):
    _dump(os.path.join(cfg.output, "failure.json"),
          {"error": str(exc), "iterations": exc.iterations,
           "primal_residual": exc.primal_residual, "dual_residual": exc.dual_residual})


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def run_simulate(design, n, seed, output, taus=()):
    if design == "peaks":
        s = gen_peaks(PeaksDesign(n, seed=seed))
    elif design in RACINE_KINDS:
        s = gen_racine(RacineDesign(design, n, seed=seed))
    else:
        raise InputError(f"unknown design {design!r}")
    cols = {"t": np.arange(1, n + 1), "y": s.y, "trend": s.trend, "signal": s.signal}
    if taus:
        q = s.true_quantiles(taus)
        cols.update({f"q_{tau:g}": q[:, j] for j, tau in enumerate(taus)})
    write_table(output, cols)
    return s


def run_timing(sizes, windows, replicates, seed, overlap=DEFAULT_OVERLAP, taus=TIMING_TAUS,
               gamma=DEFAULT_GAMMA, rule=None, output=None):
    """Wall time per (n, W) over peaks-design replicates with lambda = n / 5."""
    rule = rule or StoppingRule()
    seeds = np.random.SeedSequence(seed).generate_state(replicates * len(sizes)).tolist()
    rows = []
    for si, n in enumerate(sizes):
        for r in range(replicates):
            rs = int(seeds[si * replicates + r])
            s = gen_peaks(PeaksDesign(n, seed=rs))
            spec = QuantileSpec(taus, (n / 5.0,), 2)
            for W in windows:
                layout = make_layout(n, W, overlap, spec.k)
                t0 = time.perf_counter()
                _, trace = fit_windows(s.y, spec, layout, gamma, rule)
                dt = time.perf_counter() - t0
                rows.append({"n": n, "windows": W, "replicate": r, "seed": rs, "seconds": dt,
                             "outer_iterations": len(trace), "converged": int(trace.converged)})
    if output is not None:
        write_table(output, {k: [row[k] for row in rows] for k in rows[0]})
    return rows


def timing_medians(rows):
    out = {}
    for key in sorted({(r["n"], r["windows"]) for r in rows}):
        out[key] = float(np.median([r["seconds"] for r in rows if (r["n"], r["windows"]) == key]))
    return out


def run_classify(args):
    series = ingest(args.input, args.value_col, args.time_col, args.missing)
    trends = read_table(args.trends)
    col = args.column or next(h for h in trends if h.startswith("tau_"))
    if col not in trends:
        raise InputError(f"column {col!r} not in {args.trends}")
    theta = trends[col]
    if theta.size != series.y.size:
        raise InputError("trend and series lengths differ")
    if args.threshold is not None:
        thr = float(args.threshold)
    else:
        thr = metrics.nearest_rank(series.y - theta, float(args.level))
    labels = metrics.classify(series.y, theta, thr)
    write_table(args.output, {"t": series.t, "label": labels})
    return {"threshold": thr, "positives": int(labels.sum())}


def run_metrics(args):
    out = {}
    if args.truth and args.est:
        a = read_table(args.truth)[args.label_col]
        b = read_table(args.est)[args.label_col]
        out["vi"] = metrics.vi(a, b)
        try:
            out["caa"] = metrics.caa(a, b)
        except ValueError as exc:
            out["caa"] = None
            out["caa_error"] = str(exc)
    if args.trend and args.true_trend:
        est = read_table(args.trend)[args.column]
        truth = read_table(args.true_trend)[args.true_column]
        out["rmse"] = metrics.rmse(est, truth)
    if not out:
        raise InputError("give --truth/--est label files or --trend/--true-trend files")
    return out


# --------------------------------------------------------------------------
# argument parsing

def _common(p):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--input", "-i")
    p.add_argument("--time-col")
    p.add_argument("--value-col")
    p.add_argument("--missing", choices=("mask", "interpolate"), default="mask")
    p.add_argument("--tau", default=",".join(f"{t:g}" for t in BASELINE_TAUS))
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--lambda", dest="lam")
    p.add_argument("--grid")
    p.add_argument("--criterion", choices=CRITERIA)
    p.add_argument("--windows", type=int, default=1)
    p.add_argument("--overlap", type=int, default=DEFAULT_OVERLAP)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--eps-abs", type=float, default=0.01)
    p.add_argument("--eps-rel", type=float, default=0.001)
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default=".")


def build_parser():
    ap = argparse.ArgumentParser(prog="qtrend", description="Quantile trend filtering.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detrend", help="fit quantile trends and classify the residuals")
    _common(p)
    p.add_argument("--input2", help="second co-located series for VI comparison")
    p.add_argument("--thresholds", default=",".join(f"{q:g}" for q in DEFAULT_LEVELS),
                   help="empirical quantile levels of the detrended series")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("select", help="choose penalties by an information criterion")
    _common(p)

    p = sub.add_parser("simulate", help="write a synthetic series")
    p.add_argument("--config")
    p.add_argument("--design", default="peaks", choices=("peaks",) + RACINE_KINDS)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", default="")
    p.add_argument("--output", "-o", default="simulated.csv")

    p = sub.add_parser("classify", help="label points whose detrended value exceeds a threshold")
    p.add_argument("--config")
    p.add_argument("--input", "-i", required=False)
    p.add_argument("--time-col")
    p.add_argument("--value-col")
    p.add_argument("--missing", choices=("mask", "interpolate"), default="mask")
    p.add_argument("--trends", required=False)
    p.add_argument("--column")
    p.add_argument("--threshold", type=float)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--output", "-o", default="classifications.csv")

    p = sub.add_parser("metrics", help="score classifications or trends")
    p.add_argument("--config")
    p.add_argument("--truth")
    p.add_argument("--est")
    p.add_argument("--label-col", default="label")
    p.add_argument("--trend")
    p.add_argument("--column", default="tau_0.5")
    p.add_argument("--true-trend")
    p.add_argument("--true-column", default="trend")

    p = sub.add_parser("timing", help="wall time by series length and window count")
    p.add_argument("--config")
    p.add_argument("--sizes", default="20000")
    p.add_argument("--windows", default="1,2,4")
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--overlap", type=int, default=DEFAULT_OVERLAP)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default="timing.csv")
    return ap


def parse_args(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        conf = read_config(args.config)
        sp = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        alias = {"lambda": "lam", "tau": "tau"}
        conf = {alias.get(k, k): v for k, v in conf.items()}
        unknown = sorted(set(conf) - known)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        for a in sp._actions:
            if a.dest in conf and a.type is not None:
                conf[a.dest] = a.type(conf[a.dest])
            elif a.dest in conf and isinstance(a, argparse._StoreTrueAction):
                conf[a.dest] = conf[a.dest].lower() in ("1", "true", "yes")
        sp.set_defaults(**conf)
        args = ap.parse_args(argv)
    return args


def config_from_args(args):
    return RunConfig(
        input=args.input, input2=getattr(args, "input2", None), time_col=args.time_col,
        value_col=args.value_col, taus=_floats(args.tau), k=args.k,
        lam=_floats(args.lam) if args.lam else None,
        grid=_floats(args.grid) if args.grid else None, criterion=args.criterion,
        windows=args.windows, overlap=args.overlap, gamma=args.gamma, eps_abs=args.eps_abs,
        eps_rel=args.eps_rel, max_iterations=args.max_iterations, missing=args.missing,
        levels=_floats(getattr(args, "thresholds", ",".join(map(str, DEFAULT_LEVELS)))),
        output=args.output, seed=args.seed, plots=not getattr(args, "no_plots", False),
    )


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        if args.command in ("detrend", "select"):
            cfg = config_from_args(args)
            if not cfg.input:
                raise InputError("--input is required")
            result = run_detrend(cfg, select_only=args.command == "select")
            print(json.dumps({"objective": result["objective"], "lambdas": result["lambdas"],
                              "converged": result["converged"]}))
        elif args.command == "simulate":
            run_simulate(args.design, args.n, args.seed, args.output, _floats(args.tau))
        elif args.command == "classify":
            if not (args.input and args.trends):
                raise InputError("--input and --trends are required")
            print(json.dumps(run_classify(args)))
        elif args.command == "metrics":
            print(json.dumps(run_metrics(args), default=_json_default))
        elif args.command == "timing":
            rows = run_timing(_ints(args.sizes), _ints(args.windows), args.replicates, args.seed,
                              args.overlap, gamma=args.gamma, output=args.output)
            med = timing_medians(rows)
            print(json.dumps([{"n": n, "windows": w, "median_seconds": s}
                              for (n, w), s in med.items()]))
    except ConvergenceError as exc:
        print(f"qtrend: not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (InputError, QTrendError, ValueError, KeyError, OSError) as exc:
        print(f"qtrend: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK
