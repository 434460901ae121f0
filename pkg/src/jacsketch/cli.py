"""Command-line harness: run methods, print theory reports, sweep tau, emit data.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .data_io import DataError, load_svmlight, scale_columns, skewed_column_norms, synthesize_ridge, write_svmlight
from .presets import NEEDS_TAU, PRESETS, PresetError, baseline_grid, build_custom_method, build_method
from .problem import (
    ConvergenceError,
    FiniteSumProblem,
    ProblemError,
    reference_solution,
    smoothness_profile,
    subset_smoothness,
)
from .sampling import SamplingError
from .sketch import SketchError
from .solver import SolverConfig, SolverError, lyapunov_general, lyapunov_stochastic, run
from .theory import TheoryError, tau_tradeoff_curve

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
CONFIG_ERRORS = (PresetError, ProblemError, SamplingError, SketchError, SolverError, TheoryError, ConvergenceError)

DEFAULTS = {
    "loss": "ridge",
    "lambda": None,
    "method": ["saga-uni"],
    "tau": None,
    "weight": "identity",
    "probs": "uniform",
    "stepsize": "theory",
    "epochs": 50.0,
    "tol": 1e-4,
    "seeds": [0],
    "jobs": 1,
    "out": None,
    "synthetic": None,
    "dataset": None,
}


class ConfigError(ValueError):
    pass


def _csv_list(text, cast=str):
    return [cast(t) for t in str(text).split(",") if t.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="jacsketch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config; flags override it")
        sp.add_argument("--dataset", help="SVMLight file")
        sp.add_argument("--synthetic", help="n,d[,seed] Gaussian ridge instance instead of a file")
        sp.add_argument("--skewed", action="store_true", default=None,
                        help="rescale synthetic columns to squared norms (1, 1/n^2, ...)")
        sp.add_argument("--loss", choices=["ridge", "logistic"])
        sp.add_argument("--lambda", dest="lam",
                        help="regularization: a number, 'inv-n2' (1/n^2) or 'lmax-over-n' (L_max / n)")
        sp.add_argument("--method", help=f"comma list from {', '.join(PRESETS)} (theory also takes 'all')")
        sp.add_argument("--tau", type=int)
        sp.add_argument("--weight", choices=["identity", "ldiag"])
        sp.add_argument("--probs", choices=["uniform", "opt"], help="partition cell probabilities")
        sp.add_argument("--stepsize", help="theory, practical, grid (gd/sgd only) or a number")
        sp.add_argument("--out", help="output directory (file for synth)")

    r = sub.add_parser("run", help="run methods and write CSV traces")
    common(r)
    r.add_argument("--epochs", type=float)
    r.add_argument("--tol", type=float)
    r.add_argument("--seeds")
    r.add_argument("--jobs", type=int)

    t = sub.add_parser("theory", help="print constants, stepsizes and complexity per method")
    common(t)

    s = sub.add_parser("tau-sweep", help="complexity of tau-nice SAGA across minibatch sizes")
    common(s)
    s.add_argument("--taus", help="comma list of tau values (default 1..n)")

    g = sub.add_parser("synth", help="write a synthetic ridge dataset in SVMLight format")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--noise", type=float, default=1e-3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--skewed", action="store_true")
    g.add_argument("--out", help="output file (stdout when omitted)")
    return p


def resolve_config(args):
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS) - {"checkpoint_every", "variance_probe", "taus"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    overrides = {
        "dataset": args.dataset, "loss": args.loss, "lambda": args.lam, "tau": args.tau,
        "weight": args.weight, "probs": args.probs, "stepsize": args.stepsize, "out": args.out,
    }
    if args.method:
        overrides["method"] = _csv_list(args.method)
    if args.synthetic:
        parts = _csv_list(args.synthetic, int)
        if len(parts) not in (2, 3):
            raise ConfigError("--synthetic expects n,d or n,d,seed")
        overrides["synthetic"] = {"n": parts[0], "d": parts[1], "seed": parts[2] if len(parts) == 3 else 0}
    for key in ("epochs", "tol", "jobs"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "seeds", None):
        overrides["seeds"] = _csv_list(args.seeds, int)
    if getattr(args, "taus", None):
        overrides["taus"] = _csv_list(args.taus, int)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if args.skewed:
        cfg["synthetic"] = dict(cfg.get("synthetic") or {}, skewed=True)
    if isinstance(cfg["method"], str):
        cfg["method"] = _csv_list(cfg["method"])
    if not cfg["method"]:
        raise ConfigError("at least one method is required")
    if not cfg["seeds"]:
        raise ConfigError("at least one seed is required")
    if cfg["dataset"] is None and cfg["synthetic"] is None:
        raise ConfigError("give --dataset, --synthetic or a config with a problem")
    return cfg


def build_problem(cfg):
    if cfg["dataset"] is not None:
        ds = load_svmlight(cfg["dataset"])
    else:
        syn = cfg["synthetic"]
        try:
            ds, _ = synthesize_ridge(int(syn["n"]), int(syn["d"]), float(syn.get("noise", 1e-3)),
                                     int(syn.get("seed", 0)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad synthetic spec: {exc}") from None
        if syn.get("skewed"):
            ds = scale_columns(ds, skewed_column_norms(ds.n))
    n = ds.n
    lam = cfg["lambda"]
    if lam is None or lam == "inv-n2":
        lam = 1.0 / n**2
    elif lam == "lmax-over-n":
        lam = smoothness_profile(FiniteSumProblem(ds.features, ds.labels, 0.0, cfg["loss"])).max_L / n
    else:
        try:
            lam = float(lam)
        except ValueError:
            raise ConfigError(f"bad --lambda value {lam!r}") from None
    return FiniteSumProblem(ds.features, ds.labels, lam, cfg["loss"])


def _methods(problem, cfg, names=None):
    names = names or cfg["method"]
    stepsize = cfg["stepsize"]
    if stepsize not in ("theory", "practical", "grid"):
        try:
            stepsize = float(stepsize)
        except ValueError:
            raise ConfigError(f"bad --stepsize {stepsize!r}") from None
    out = []
    eps = min(cfg["tol"], 0.5) if cfg["tol"] else 1e-4
    for name in names:
        if isinstance(name, dict):
            out.append(build_custom_method(problem, name, eps))
            continue
        if stepsize == "grid" and name not in ("gd", "sgd"):
            raise ConfigError("the stepsize grid only applies to the gd and sgd baselines")
        step = "theory" if stepsize == "grid" else stepsize
        out.append(build_method(problem, name, tau=cfg["tau"], weight=cfg["weight"], probs=cfg["probs"],
                                stepsize=step, eps=eps))
    return out, stepsize == "grid"


# -- run -----------------------------------------------------------------------


def _lyapunov_for(problem, method, ref, step):
    """Lyapunov callback matching the method's rate, or None."""
    rep, rule, sampling = method.report, method.rule, method.sampling
    if rule.theta_mode != "bias_correcting":
        return None
    if rep.l2:
        return lambda x, J: lyapunov_general(problem, ref, x, J, step, rep.l2, rule.weight)
    if hasattr(sampling, "cells") and rule.weight.is_identity:
        mode = "exact_ridge" if problem.loss == "ridge" else "average_bound"
        Lc = [subset_smoothness(problem, c, mode) for c in sampling.cells()]
        return lambda x, J: lyapunov_stochastic(problem, ref, x, J, step, sampling, Lc)
    return None


def _one_run(job):
    problem, method, seed, epochs, tol, ref, steps, opts = job
    best = None
    for step in steps:
        cfg = SolverConfig(method.sampling, method.rule, step, max_epochs=epochs, tolerance=tol, seed=seed,
                           decreasing_mu=method.decreasing_mu, **opts)
        res = run(problem, cfg, reference=ref, lyapunov=_lyapunov_for(problem, method, ref, step))
        gap = res.trace.column("f_gap")[-1]
        key = (res.status == "diverged", gap if np.isfinite(gap) else np.inf)
        if best is None or key < best[0]:
            best = (key, step, res)
    _, step, res = best
    return method.label, seed, step, res.trace


def cmd_run(cfg):
    problem = build_problem(cfg)
    ref = reference_solution(problem)
    methods, grid = _methods(problem, cfg)
    out = cfg["out"] or "jacsketch-out"
    os.makedirs(out, exist_ok=True)
    opts = {"checkpoint_every": cfg.get("checkpoint_every"), "probe_variance": bool(cfg.get("variance_probe"))}
    jobs = []
    for m in methods:
        steps = baseline_grid(smoothness_profile(problem).max_L) if grid else [m.stepsize]
        for seed in cfg["seeds"]:
            jobs.append((problem, m, seed, float(cfg["epochs"]), float(cfg["tol"] or 0.0), ref, steps, opts))
    if cfg["jobs"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as ex:
            results = list(ex.map(_one_run, jobs))
    else:
        results = [_one_run(j) for j in jobs]
    reports = {m.label: m.report for m in methods}
    summary, diverged = [], False
    for label, seed, step, trace in results:
        path = os.path.join(out, f"{label}_seed{seed}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            trace.to_csv(fh)
        gaps = trace.column("f_gap")
        rep = reports[label]
        summary.append({
            "method": label, "seed": seed, "status": trace.status, "stepsize": step,
            "final_f_gap": float(gaps[-1]), "epochs": float(trace.column("epoch")[-1]),
            "epochs_to_tol": trace.epochs_to(cfg["tol"]) if cfg["tol"] else None,
            "wall_time_s": float(trace.column("wall_time_s")[-1]),
            "predicted_epochs": (rep.complexity * rep.log_factor / problem.n) if rep.complexity else None,
            "theory": rep.to_dict(),
        })
        diverged |= trace.status == "diverged"
        print(f"{label:28s} seed={seed:<4d} {trace.status:10s} gap={gaps[-1]:.3e} -> {path}")
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, default=_json_default)
    return EXIT_DIVERGED if diverged else EXIT_OK


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not np.isfinite(o):
        return None
    raise TypeError(type(o).__name__)


# -- theory --------------------------------------------------------------------


def _all_variants(problem, cfg):
    n = problem.n
    tau = cfg["tau"] or next((t for t in (2, 3, 4, 5) if n % t == 0 and t < n), 1)
    specs = [("gd", {}), ("sgd", {}), ("saga-uni", {}), ("saga-li", {}), ("saga-opt", {}), ("sag-opt", {})]
    for w in ("identity", "ldiag"):
        specs.append(("minibatch-saga-nice", {"tau": tau, "weight": w}))
        specs.append(("minibatch-saga-partition", {"tau": tau, "weight": w}))
    specs.append(("minibatch-saga-partition", {"tau": tau, "probs": "opt"}))
    specs.append(("saga-reduced", {"tau": tau, "probs": "opt"}))
    return [build_method(problem, name, **kw) for name, kw in specs]


def cmd_theory(cfg):
    problem = build_problem(cfg)
    if cfg["method"] == ["all"]:
        methods = _all_variants(problem, cfg)
    else:
        methods, _ = _methods(problem, cfg)
    rows = []
    for m in methods:
        for rep in [m.report] + m.companions:
            d = rep.to_dict()
            d["primary"] = rep is m.report
            d["label"] = m.label
            rows.append(d)
    cols = ["label", "formula_tag", "primary", "l1", "l2", "kappa", "rho", "rho_kind", "stepsize", "complexity"]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(cols)
    for d in rows:
        w.writerow([_cell(d.get(c)) for c in cols])
    if cfg["out"]:
        os.makedirs(cfg["out"], exist_ok=True)
        with open(os.path.join(cfg["out"], "theory.json"), "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2, default=_json_default)
    return EXIT_OK


def _cell(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return "" if v is None else str(v)


# -- tau sweep -----------------------------------------------------------------


def cmd_tau_sweep(cfg):
    problem = build_problem(cfg)
    curve = tau_tradeoff_curve(problem, weight=cfg["weight"], taus=cfg.get("taus"))
    rows = list(curve.rows())
    cols = list(rows[0])
    if cfg["out"]:
        os.makedirs(cfg["out"], exist_ok=True)
        fh = open(os.path.join(cfg["out"], "tau_sweep.csv"), "w", encoding="utf-8", newline="")
    else:
        fh = sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    print(f"# best tau (total complexity): {curve.best_tau}", file=sys.stderr)
    return EXIT_OK


# -- synth ---------------------------------------------------------------------


def cmd_synth(args):
    ds, _ = synthesize_ridge(args.n, args.d, args.noise, args.seed)
    if args.skewed:
        ds = scale_columns(ds, skewed_column_norms(ds.n))
    if args.out:
        write_svmlight(ds, args.out)
    else:
        sys.stdout.write(write_svmlight(ds))
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        cfg = resolve_config(args)
        if cfg["tau"] is None and any(isinstance(m, str) and m in NEEDS_TAU for m in cfg["method"]):
            raise ConfigError("this method needs --tau")
        handler = {"run": cmd_run, "theory": cmd_theory, "tau-sweep": cmd_tau_sweep}[args.command]
        return handler(cfg)
    except (ConfigError, DataError, *CONFIG_ERRORS) as exc:
        code = EXIT_IO if isinstance(exc, DataError) else EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
