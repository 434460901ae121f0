"""Named methods: sampling + sketch rule + stepsize + theory report.

Every method is a JacSketch configuration. The theory report carries the
constants behind the stepsize and the complexity row that applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import theory as th
from .problem import FiniteSumProblem, smoothness_profile, subset_smoothness
from .sampling import FullBatch, Sampling, SingleElement, TauNice, TauPartition
from .sketch import SketchRule, WeightMatrix

PRESETS = (
    "gd",
    "sgd",
    "saga-uni",
    "saga-li",
    "saga-opt",
    "sag-opt",
    "minibatch-saga-nice",
    "minibatch-saga-partition",
    "saga-reduced",
)
NEEDS_TAU = {"minibatch-saga-nice", "minibatch-saga-partition", "saga-reduced"}
EXACT_NICE_N = th.MC_THRESHOLD_N


class PresetError(ValueError):
    """Unknown preset or incompatible options."""


@dataclass
class Method:
    name: str
    sampling: Sampling
    rule: SketchRule
    stepsize: float
    report: th.TheoryReport
    companions: list = field(default_factory=list)
    decreasing_mu: float | None = None

    @property
    def label(self):
        tau = self.report.extra.get("tau")
        return self.name if tau is None or self.name not in NEEDS_TAU else f"{self.name}-{tau}"


def _lc_mode(problem):
    return "exact_ridge" if problem.loss == "ridge" else "average_bound"


def _cell_constants(problem, cells):
    mode = _lc_mode(problem)
    return np.array([subset_smoothness(problem, c, mode) for c in cells])


def _weight(kind, prof, n):
    if kind == "identity":
        return WeightMatrix.identity(n)
    if kind == "ldiag":
        return WeightMatrix.from_smoothness(prof.per_function)
    raise PresetError(f"unknown weight {kind!r}")


def _report(tag, step, cx, **kw):
    extra = kw.pop("extra", {})
    return th.TheoryReport(
        l1=kw.get("l1"), l2=kw.get("l2"), kappa=kw.get("kappa"), rho=kw.get("rho"),
        stepsize=step, complexity=cx.factor if cx is not None else None, formula_tag=str(tag),
        rho_kind=kw.get("rho_kind", "exact"), l1_kind=kw.get("l1_kind", "exact"),
        log_factor=cx.log_factor if cx is not None else math.log(1e4), extra=extra,
    )


def _general(problem, prof, sampling, weight, l1, l1_kind, tag, eps, extra):
    """Report for the general-rate row with the given L1."""
    n = problem.n
    l2 = th.expected_smoothness_l2(prof.per_function, sampling, weight)
    kappa = th.stochastic_condition_kappa(sampling, weight)
    rho, rho_kind = th.rho_with_kind(sampling, weight)
    step = th.stepsize("general_thm36", L1=l1, L2=l2, kappa=kappa, rho=rho, mu=prof.mu, n=n)
    cx = th.iteration_complexity(1, eps, L1=l1, L2=l2, kappa=kappa, rho=rho, mu=prof.mu, n=n)
    rep = _report(tag, step, cx, l1=l1, l2=l2, kappa=kappa, rho=rho, rho_kind=rho_kind,
                  l1_kind=l1_kind, extra=extra)
    return rep


def _partition(problem, sampling, cells, probs, tag, eps, extra, mu_cells=None):
    n, tau = problem.n, len(cells[0])
    Lc = _cell_constants(problem, cells)
    mu = th.partition_strong_convexity(problem, sampling) if mu_cells is None else mu_cells
    step = th.stepsize("partition_thm52", p_cells=probs, L_cells=Lc, mu=mu, n=n, tau=tau)
    cx = th.iteration_complexity(2, eps, p_cells=probs, L_cells=Lc, mu=mu, n=n, tau=tau)
    rep = _report(tag, step, cx, extra=dict(extra, mu_cells=mu))
    return rep, Lc, mu


def build_method(
    problem: FiniteSumProblem,
    name: str,
    tau: int | None = None,
    weight: str = "identity",
    probs: str = "uniform",
    stepsize="theory",
    eps: float = 1e-4,
) -> Method:
    """Assemble a named method. ``stepsize`` is 'theory', 'practical' or a number."""
    if name not in PRESETS:
        raise PresetError(f"unknown method {name!r}; choose from {', '.join(PRESETS)}")
    prof = smoothness_profile(problem)
    if not prof.strongly_convex:
        raise PresetError("problem is not strongly convex (mu = 0); add regularization")
    n, mu, L = problem.n, prof.mu, prof.per_function
    if name in NEEDS_TAU:
        if tau is None:
            raise PresetError(f"{name} needs --tau")
        if not 1 <= tau <= n:
            raise PresetError(f"tau must lie in [1, {n}]")
    W = _weight(weight, prof, n)
    extra = {"method": name, "tau": tau, "weight": W.preset, "mu": mu}
    base = dict(L=prof.global_L, L_max=prof.max_L, mean_L=prof.mean_L, mu=mu, n=n)
    companions = []
    decreasing = None

    if name == "gd":
        sampling, rule = FullBatch(n), SketchRule("column", W)
        rep = _general(problem, prof, sampling, W, prof.global_L, "exact", 3, eps, extra)
        rep.complexity = th.iteration_complexity(3, eps, **base).factor
        rep4, _, _ = _partition(problem, sampling, sampling.cells(), np.ones(1), 4, eps, extra)
        rep4.complexity = th.iteration_complexity(4, eps, **base).factor
        companions.append(rep4)
        practical = 1.0 / prof.global_L

    elif name == "sgd":
        sampling, rule = SingleElement.uniform_over(n), SketchRule("column", W, "none")
        step = 1.0 / (4.0 * prof.max_L)
        rep = _report("none", step, None, l1=prof.max_L, extra=dict(extra, note="no control variate"))
        decreasing = mu
        practical = 1.0 / prof.max_L

    elif name == "saga-uni":
        sampling, rule = SingleElement.uniform_over(n), SketchRule("column", W)
        rep = _general(problem, prof, sampling, W, prof.max_L, "exact", 5 if W.is_identity else 1, eps, extra)
        if W.is_identity:
            rep.complexity = th.iteration_complexity(5, eps, **base).factor
        rep6, _, _ = _partition(problem, sampling, sampling.cells(), sampling.p, 6, eps, extra)
        companions.append(rep6)
        practical = th.stepsize_practical(n, mu, prof.mean_L)

    elif name in ("saga-li", "saga-opt", "sag-opt"):
        cells = [np.array([i]) for i in range(n)]
        mu_c = th.partition_strong_convexity(problem, SingleElement.uniform_over(n))
        if name == "saga-li":
            p = th.smoothness_proportional_probabilities(L)
        else:
            p = th.optimal_probabilities(L, mu_c, n, 1)
        sampling = SingleElement(p)
        rule = SketchRule("column", WeightMatrix.identity(n), "relaxed" if name == "sag-opt" else "bias_correcting")
        tag = 2 if name == "saga-li" else 8
        x = dict(extra, weight="identity")
        if name == "sag-opt":
            x["note"] = "biased estimator; rate shown is the unbiased counterpart"
        rep, Lc, mu_c = _partition(problem, sampling, cells, p, tag, eps, x, mu_c)
        if name == "saga-li":
            rep.extra["closed_form"] = th.row_saga_li(n, prof.mean_L, prof.min_L, mu_c)
        else:
            rep.complexity = th.iteration_complexity(8, eps, **dict(base, mu=mu_c)).factor
        l1 = th.expected_smoothness_l1(problem, sampling, _lc_mode(problem))
        rep7 = _general(problem, prof, sampling, WeightMatrix.identity(n), l1, "exact", 7, eps, x)
        companions.append(rep7)
        practical = th.stepsize_practical(n, mu, prof.mean_L)

    elif name == "minibatch-saga-nice":
        sampling, rule = TauNice(n, tau), SketchRule("column", W)
        lc_mode = _lc_mode(problem)
        if n <= EXACT_NICE_N:
            lg, lg_kind = th.expected_smoothness_l1(problem, sampling, lc_mode), "exact"
        else:
            # rigorous: average-bound subset constants dominate the exact ones
            lg, lg_kind = th.expected_smoothness_l1(problem, sampling, "average_bound"), "upper bound"
        row = 10 if W.is_identity else 11
        rep = _general(problem, prof, sampling, W, lg, lg_kind, row, eps, extra)
        rho = rep.rho
        if not W.is_identity:
            rho, rep.rho_kind = th.sketch_residual_rho(sampling, W, "bound"), "bound"
            rep.rho = rho
        rep.stepsize = th.stepsize("uniform_minibatch", lg_max=lg, rho=rho, L=L, w=W.diag, mu=mu, n=n, tau=tau)
        rep.complexity = th.iteration_complexity(row, eps, **dict(base, tau=tau, lg_max=lg)).factor
        rep9 = _general(problem, prof, sampling, W, lg, lg_kind, 9, eps, extra)
        rep9.rho, rep9.rho_kind = rho, rep.rho_kind
        rep9.complexity = th.iteration_complexity(
            9, eps, **dict(base, tau=tau, lg_max=lg, rho=rho, L=L, w=W.diag)).factor
        companions.append(rep9)
        practical = th.stepsize_practical(n, mu, prof.mean_L)

    else:  # partition-based: minibatch-saga-partition, saga-reduced
        if n % tau:
            raise PresetError(f"tau={tau} must divide n={n} for a partition sampling")
        cells = [np.arange(k, k + tau) for k in range(0, n, tau)]
        Lc = _cell_constants(problem, cells)
        reduced = name == "saga-reduced"
        if reduced and not W.is_identity:
            raise PresetError("saga-reduced needs the identity weight")
        mu_c = th.partition_strong_convexity(problem, TauPartition(cells))
        if probs == "opt":
            p = th.optimal_probabilities(Lc, mu_c, n, tau)
        elif probs == "uniform":
            p = np.full(len(cells), 1.0 / len(cells))
        else:
            raise PresetError(f"unknown probabilities {probs!r}")
        sampling = TauPartition(cells, p)
        rule = SketchRule("averaged" if reduced else "column", W)
        x = dict(extra, probs=probs)
        if reduced or probs == "opt":
            tag = 14 if probs == "opt" else 2
            rep, _, _ = _partition(problem, sampling, cells, p, tag, eps, x, mu_c)
            if probs == "opt":
                rep.complexity = th.iteration_complexity(
                    14, eps, n=n, tau=tau, mu=mu_c, L_cells=Lc).factor
        else:
            lg = float(np.max(Lc))  # c1 = 1: each element lies in one cell
            row = 12 if W.is_identity else 13
            rep = _general(problem, prof, sampling, W, lg, "exact", row, eps, x)
            rho = th.sketch_residual_rho(sampling, W, "bound")
            rep.rho, rep.rho_kind = rho, "bound"
            rep.stepsize = th.stepsize("uniform_minibatch", lg_max=lg, rho=rho, L=L, w=W.diag, mu=mu, n=n, tau=tau)
            cell_sums = max(float(L[c].sum()) for c in cells)
            rep.complexity = th.iteration_complexity(
                row, eps, **dict(base, tau=tau, lg_max=lg, max_cell_L_sum=cell_sums)).factor
            rep9 = _general(problem, prof, sampling, W, lg, "exact", 9, eps, x)
            rep9.rho, rep9.rho_kind = rho, "bound"
            rep9.complexity = th.iteration_complexity(
                9, eps, **dict(base, tau=tau, lg_max=lg, rho=rho, L=L, w=W.diag)).factor
            companions.append(rep9)
        rep2, _, _ = _partition(problem, sampling, cells, p, 2, eps, x, mu_c)
        if rep.formula_tag != "2":
            companions.append(rep2)
        practical = th.stepsize_practical(n, mu, prof.mean_L)

    if rep.l1 is not None and rep.formula_tag not in ("1", "7", "none"):
        # the generic general-rate row applies to every unbiased method
        companions.append(_general(problem, prof, sampling, W, rep.l1, rep.l1_kind, 1, eps, extra))
    elif name == "minibatch-saga-partition" and rep.l1 is None:
        companions.append(_general(problem, prof, sampling, W, float(np.max(Lc)), "exact", 1, eps, extra))

    if stepsize == "theory":
        step = rep.stepsize
    elif stepsize == "practical":
        step = practical
    else:
        step = float(stepsize)
        if not (step > 0 and np.isfinite(step)):
            raise PresetError("stepsize must be positive")
    rep.extra["stepsize_used"] = step
    return Method(name=name, sampling=sampling, rule=rule, stepsize=step, report=rep,
                  companions=companions, decreasing_mu=decreasing)


def baseline_grid(max_L):
    """Stepsize grid for the GD / SGD baselines: L_max * 2^m."""
    ms = list(range(21, -10, -2)) + [-10, -11]
    return [max_L * 2.0**m for m in ms]


def scheme_from_config(spec, n) -> Sampling:
    """Sampling from a config dict; cells and sets use 1-based indices."""
    from .sampling import CustomSampling

    kind = spec.get("kind")
    try:
        if kind == "single":
            p = spec.get("probs")
            return SingleElement.uniform_over(n) if p is None else SingleElement(p)
        if kind == "tau-nice":
            return TauNice(n, int(spec["tau"]))
        if kind == "tau-partition":
            cells = [np.asarray(c, dtype=np.intp) - 1 for c in spec["cells"]]
            return TauPartition(cells, spec.get("probs"))
        if kind == "full":
            return FullBatch(n)
        if kind == "custom":
            sets = [np.asarray(c, dtype=np.intp) - 1 for c in spec["sets"]]
            return CustomSampling(n, sets, spec["probs"])
    except KeyError as exc:
        raise PresetError(f"scheme {kind!r} needs {exc.args[0]!r}") from None
    raise PresetError(f"unknown scheme kind {kind!r}")


def build_custom_method(problem: FiniteSumProblem, spec: dict, eps: float = 1e-4) -> Method:
    """Explicit scheme/rule/stepsize method; reports the two generic rows."""
    prof = smoothness_profile(problem)
    if not prof.strongly_convex:
        raise PresetError("problem is not strongly convex (mu = 0); add regularization")
    n = problem.n
    sampling = scheme_from_config(spec.get("scheme", {}), n)
    W = _weight(spec.get("weight", "identity"), prof, n)
    rule = SketchRule(spec.get("family", "column"), W, spec.get("theta", "bias_correcting"))
    rule.check_sampling(sampling)
    label = spec.get("label", "custom")
    extra = {"method": label, "tau": sampling.tau, "weight": W.preset, "mu": prof.mu}
    reports = []
    if rule.family == "column":
        l1 = th.expected_smoothness_l1(problem, sampling, _lc_mode(problem))
        reports.append(_general(problem, prof, sampling, W, l1, "exact", 1, eps, extra))
    if sampling.is_partition and W.is_identity:
        cells = sampling.cells() if hasattr(sampling, "cells") else sampling.support().sets
        probs = sampling.cell_probabilities() if hasattr(sampling, "cell_probabilities") else sampling.support().probs
        rep2, _, _ = _partition(problem, sampling, cells, probs, 2, eps, extra)
        reports.append(rep2)
    step = spec.get("stepsize", "theory")
    if not reports:
        if step == "theory":
            raise PresetError("no stepsize theory covers this scheme; give a numeric stepsize")
        reports.append(_report("none", None, None, extra=extra))
    rep = max(reports, key=lambda r: r.stepsize or 0.0)
    if step == "theory":
        step = rep.stepsize
    elif step == "practical":
        step = th.stepsize_practical(n, prof.mu, prof.mean_L)
    else:
        step = float(step)
    rep.extra["stepsize_used"] = step
    return Method(name=label, sampling=sampling, rule=rule, stepsize=step, report=rep,
                  companions=[r for r in reports if r is not rep])
