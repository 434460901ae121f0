"""Constants that drive the stepsize and iteration-complexity guarantees.

Notation used throughout:

* ``L1``    expected smoothness of the sketched gradient
* ``L2``    expected smoothness of the sketched Jacobian residual (W^{-1} norm)
* ``kappa`` smallest eigenvalue of E[Pi_S] (stochastic condition number)
* ``rho``   largest eigenvalue of W^{1/2} (E[theta^2 Pi e e^T Pi^T] - e e^T) W^{1/2}

Quantities that come from enumerating the support are exact. Monte Carlo
estimates are marked approximate wherever they are reported.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .problem import FiniteSumProblem, ProblemError, smoothness_profile, subset_strong_convexity
from .sampling import (
    DEFAULT_CAP,
    CapacityError,
    CustomSampling,
    FullBatch,
    Sampling,
    SingleElement,
    TauNice,
    TauPartition,
    make_rng,
)
from .sketch import WeightMatrix

MC_THRESHOLD_N = 20


class TheoryError(ValueError):
    """A closed form or constant is unavailable for the given inputs."""


# -- subset smoothness in bulk ----------------------------------------------


def _lc_batch(problem, gram, sets_array, lc_mode):
    """L_C for a k x tau array of index sets."""
    tau = sets_array.shape[1]
    if lc_mode == "average_bound":
        return problem.sample_smoothness()[sets_array].mean(axis=1)
    if lc_mode != "exact_ridge":
        raise ProblemError(f"unknown L_C mode {lc_mode!r}")
    if problem.loss != "ridge":
        raise ProblemError("exact_ridge mode only applies to the ridge loss")
    if tau == 1:
        top = gram[sets_array[:, 0], sets_array[:, 0]]
    else:
        sub = gram[sets_array[:, :, None], sets_array[:, None, :]]
        top = np.linalg.eigvalsh(sub)[:, -1]
    return np.maximum(top, 0.0) / tau + problem.lam


def subset_constants(problem: FiniteSumProblem, sets, lc_mode="average_bound") -> np.ndarray:
    """L_C for a list of index sets (any sizes)."""
    gram = problem.A.T @ problem.A if lc_mode == "exact_ridge" else None
    out = np.empty(len(sets))
    by_size = {}
    for k, s in enumerate(sets):
        by_size.setdefault(len(s), []).append(k)
    for size, ks in by_size.items():
        arr = np.array([sets[k] for k in ks], dtype=np.intp).reshape(len(ks), size)
        out[ks] = _lc_batch(problem, gram, arr, lc_mode)
    return out


def _nice_lg(problem, tau, lc_mode, gram=None, chunk=20_000):
    """Per-element averages (1/c1) sum_{C containing i} L_C over all tau-subsets."""
    n = problem.n
    if lc_mode == "average_bound":
        L = problem.sample_smoothness()
        if n == 1:
            return L.copy()
        return L / tau + (tau - 1) / tau * (L.sum() - L) / (n - 1)
    if gram is None:
        gram = problem.A.T @ problem.A
    acc = np.zeros(n)
    combos = itertools.combinations(range(n), tau)
    while True:
        block = np.fromiter(
            itertools.chain.from_iterable(itertools.islice(combos, chunk)), dtype=np.intp
        )
        if block.size == 0:
            break
        block = block.reshape(-1, tau)
        lc = _lc_batch(problem, gram, block, lc_mode)
        acc += np.bincount(block.ravel(), weights=np.repeat(lc, tau), minlength=n)
    return acc / math.comb(n - 1, tau - 1)


def _nice_lg_estimate(problem, tau, lc_mode, samples, rng, gram=None):
    n = problem.n
    if gram is None and lc_mode == "exact_ridge":
        gram = problem.A.T @ problem.A
    keys = rng.random((samples, n))
    block = np.sort(np.argpartition(keys, tau - 1, axis=1)[:, :tau], axis=1).astype(np.intp)
    lc = _lc_batch(problem, gram, block, lc_mode)
    sums = np.bincount(block.ravel(), weights=np.repeat(lc, tau), minlength=n)
    hits = np.bincount(block.ravel(), minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = sums / hits
    return np.where(hits > 0, avg, np.nan)


# -- L1 and L2 ----------------------------------------------------------------


def expected_smoothness_l1(
    problem: FiniteSumProblem,
    sampling: Sampling,
    lc_mode="average_bound",
    mode="enumerate",
    samples=10_000,
    rng=None,
    cap=DEFAULT_CAP,
) -> float:
    """L1 = (1/(n c1^2)) max_i sum_{C containing i} |C| L_C / p_C."""
    n = problem.n
    if sampling.n != n:
        raise TheoryError("sampling and problem disagree on n")
    if isinstance(sampling, TauNice):
        if mode == "estimate" and lc_mode != "average_bound":
            rng = rng if rng is not None else make_rng(0)
            return float(np.nanmax(_nice_lg_estimate(problem, sampling.tau, lc_mode, samples, rng)))
        if lc_mode == "average_bound" or sampling.support_size() <= cap:
            return float(_nice_lg(problem, sampling.tau, lc_mode).max())
        raise CapacityError("support too large; use mode='estimate'")
    if mode == "estimate":
        raise TheoryError("Monte Carlo L1 is only implemented for tau-nice sampling")
    sup = sampling.support(cap)
    if sup.c1 is None:
        raise TheoryError("L1 needs a c1-uniform support")
    lc = subset_constants(problem, sup.sets, lc_mode)
    acc = np.zeros(n)
    for s, q, l in zip(sup.sets, sup.probs, lc):
        acc[s] += len(s) * l / q
    return float(acc.max() / (n * sup.c1**2))


def group_smoothness_max(problem, sampling, lc_mode="exact_ridge", cap=DEFAULT_CAP) -> float:
    """max_i (1/c1) sum_{C containing i} L_C, the tau-uniform form of L1."""
    if isinstance(sampling, TauNice):
        return float(_nice_lg(problem, sampling.tau, lc_mode).max())
    sup = sampling.support(cap)
    if sup.c1 is None:
        raise TheoryError("needs a c1-uniform support")
    lc = subset_constants(problem, sup.sets, lc_mode)
    acc = np.zeros(problem.n)
    for s, l in zip(sup.sets, lc):
        acc[s] += l
    return float(acc.max() / sup.c1)


def mean_group_smoothness(problem, sampling, lc_mode="exact_ridge", cap=DEFAULT_CAP) -> float:
    """(1/|G|) sum_C L_C."""
    sup = sampling.support(cap)
    return float(np.mean(subset_constants(problem, sup.sets, lc_mode)))


def expected_smoothness_l2(L, sampling: Sampling, weight: WeightMatrix | None = None) -> float:
    """L2 = n max_i p_i L_i / w_i."""
    L = np.asarray(L, dtype=float)
    w = np.ones_like(L) if weight is None else weight.diag
    p = sampling.element_probabilities()
    return float(L.size * np.max(p * L / w))


# -- kappa and rho --------------------------------------------------------------


def expected_projection(sampling, weight, family="column", cap=DEFAULT_CAP):
    from .sketch import SketchRule, projection_matrix

    rule = SketchRule(family, weight)
    sup = sampling.support(cap)
    E = np.zeros((sampling.n, sampling.n))
    for s, q in zip(sup.sets, sup.probs):
        E += q * projection_matrix(rule, s, sampling.n)
    return E


def stochastic_condition_kappa(
    sampling: Sampling, weight: WeightMatrix | None = None, mode="closed_form", family="column", cap=DEFAULT_CAP
) -> float:
    weight = weight or WeightMatrix.identity(sampling.n)
    if mode == "closed_form":
        p = sampling.element_probabilities()
        if family == "column":
            return float(p.min())
        if (sampling.tau or 0) > 1:
            # E[Pi] is block rank one, so it is singular
            return 0.0
        return float(p.min())
    if mode != "brute_force":
        raise TheoryError(f"unknown mode {mode!r}")
    E = expected_projection(sampling, weight, family, cap)
    r = np.sqrt(weight.diag)
    sym = (r[:, None] * E) / r[None, :]
    sym = 0.5 * (sym + sym.T)
    return float(np.linalg.eigvalsh(sym)[0])


def residual_matrix(sampling: Sampling, cap=DEFAULT_CAP) -> np.ndarray:
    """B = E[theta^2 e_S e_S^T] - e e^T with the bias-correcting theta."""
    n = sampling.n
    sup = sampling.support(cap)
    B = -np.ones((n, n))
    for s, q in zip(sup.sets, sup.probs):
        th = sampling.theta(s)
        B[np.ix_(s, s)] += q * th * th
    return B


def _uniform_probs(sup):
    return np.allclose(sup.probs, sup.probs[0], rtol=1e-12, atol=0)


def sketch_residual_rho(
    sampling: Sampling, weight: WeightMatrix | None = None, mode="closed_form", cap=DEFAULT_CAP
) -> float:
    weight = weight or WeightMatrix.identity(sampling.n)
    n = sampling.n
    w = weight.diag
    if mode == "brute_force":
        B = residual_matrix(sampling, cap)
        r = np.sqrt(w)
        return float(np.linalg.eigvalsh(r[:, None] * B * r[None, :])[-1])
    if mode == "closed_form":
        if isinstance(sampling, FullBatch):
            return 0.0
        if not weight.is_identity:
            raise TheoryError("closed-form rho is only available for the identity weight")
        if isinstance(sampling, TauNice) or (isinstance(sampling, SingleElement) and sampling.uniform):
            tau = sampling.tau
            if n == 1:
                return 0.0
            return n * (n - tau) / (tau * (n - 1))
        if isinstance(sampling, CustomSampling):
            sup = sampling.support(cap)
            if sup.c1 is not None and sup.c2 is not None and _uniform_probs(sup):
                g, c1, c2 = sup.size, sup.c1, sup.c2
                a = g / c1 * (1 + (n - 1) * c2 / c1) - n
                b = g / c1 * (1 - c2 / c1)
                return float(max(a, b))
        raise TheoryError(f"no closed-form rho for {sampling.describe()} sampling")
    if mode == "bound":
        if isinstance(sampling, (SingleElement, TauPartition, FullBatch)) or (
            isinstance(sampling, CustomSampling) and sampling.is_partition
        ):
            if isinstance(sampling, FullBatch):
                return 0.0
            if isinstance(sampling, CustomSampling):
                sup = sampling.support(cap)
                cells, probs = sup.sets, sup.probs
            else:
                cells, probs = sampling.cells(), sampling.cell_probabilities()
            return float(max(w[c].sum() / q for c, q in zip(cells, probs)))
        if isinstance(sampling, TauNice):
            tau = sampling.tau
            if n == 1:
                return 0.0
            rest = (w.sum() - w) / (n - 1)
            return float((n - tau) / tau * np.max(w + rest))
        if isinstance(sampling, CustomSampling):
            sup = sampling.support(cap)
            if sup.c1 is not None and sup.c2 is not None and _uniform_probs(sup):
                g, c1, c2 = sup.size, sup.c1, sup.c2
                off = abs(g * c2 / c1**2 - 1.0)
                return float(np.max((g / c1 - 1.0) * w + off * (w.sum() - w)))
        raise TheoryError(f"no rho bound for {sampling.describe()} sampling")
    if mode == "auto":
        value, _ = rho_with_kind(sampling, weight, cap)
        return value
    raise TheoryError(f"unknown mode {mode!r}")


def rho_with_kind(sampling, weight=None, cap=DEFAULT_CAP):
    """Best available rho and whether it is exact or an upper bound."""
    try:
        return sketch_residual_rho(sampling, weight, "closed_form", cap), "exact"
    except TheoryError:
        pass
    if sampling.support_size() <= min(cap, 5000):
        return sketch_residual_rho(sampling, weight, "brute_force", cap), "exact"
    return sketch_residual_rho(sampling, weight, "bound", cap), "bound"


# -- probabilities and stepsizes -----------------------------------------------


def optimal_probabilities(L_cells, mu, n, tau=1) -> np.ndarray:
    """Cell probabilities proportional to mu n + 4 tau L_C."""
    L_cells = np.asarray(L_cells, dtype=float)
    raw = mu * n + 4.0 * tau * L_cells
    return raw / raw.sum()


def smoothness_proportional_probabilities(L_cells) -> np.ndarray:
    L_cells = np.asarray(L_cells, dtype=float)
    return L_cells / L_cells.sum()


def stepsize_general(L1, L2, kappa, rho, mu, n) -> float:
    return float(min(1.0 / (4.0 * L1), kappa / (4.0 * L2 * rho / n**2 + mu)))


def stepsize_uniform_minibatch(lg_max, rho, L, w, mu, n, tau) -> float:
    L, w = np.asarray(L, dtype=float), np.asarray(w, dtype=float)
    return float(0.25 * min(1.0 / lg_max, 1.0 / (rho / n * np.max(L / w) + 0.25 * mu * n / tau)))


def stepsize_partition(p_cells, L_cells, mu, n, tau) -> float:
    p_cells, L_cells = np.asarray(p_cells, dtype=float), np.asarray(L_cells, dtype=float)
    return float(np.min(p_cells / (mu + 4.0 * L_cells * tau / n)))


def stepsize_practical(n, mu, mean_L) -> float:
    return float(1.0 / (n * mu + mean_L))


_STEP_ARGS = {
    "general_thm36": ("L1", "L2", "kappa", "rho", "mu", "n"),
    "uniform_minibatch": ("lg_max", "rho", "L", "w", "mu", "n", "tau"),
    "partition_thm52": ("p_cells", "L_cells", "mu", "n", "tau"),
    "practical": ("n", "mu", "mean_L"),
}
_STEP_FUNCS = {
    "general_thm36": stepsize_general,
    "uniform_minibatch": stepsize_uniform_minibatch,
    "partition_thm52": stepsize_partition,
    "practical": stepsize_practical,
}


def stepsize(regime, **constants) -> float:
    if regime not in _STEP_FUNCS:
        raise TheoryError(f"unknown stepsize regime {regime!r}")
    missing = [k for k in _STEP_ARGS[regime] if constants.get(k) is None]
    if missing:
        raise TheoryError(f"regime {regime} needs {', '.join(missing)}")
    if constants["mu"] <= 0:
        raise TheoryError("stepsize needs a strictly positive strong convexity constant")
    return _STEP_FUNCS[regime](**{k: constants[k] for k in _STEP_ARGS[regime]})


def partition_strong_convexity(problem, sampling) -> float:
    """Smallest strong convexity modulus among the cells of a partition sampling."""
    if isinstance(sampling, FullBatch):
        return smoothness_profile(problem).mu
    cells = sampling.cells() if hasattr(sampling, "cells") else sampling.support().sets
    return float(min(subset_strong_convexity(problem, c) for c in cells))


# -- iteration complexity -------------------------------------------------------


@dataclass(frozen=True)
class Complexity:
    factor: float
    log_factor: float

    @property
    def iterations(self) -> float:
        return self.factor * self.log_factor


def _safe_ratio(num, den):
    return 0.0 if num == 0 else num / den


def row_general(L1, L2, kappa, rho, mu, n):
    return max(4 * L1 / mu, 1 / kappa + 4 * rho * L2 / (kappa * mu * n**2))


def row_partition(p_cells, L_cells, mu, n, tau):
    p, Lc = np.asarray(p_cells, float), np.asarray(L_cells, float)
    return float(np.max(1 / p + tau / (n * p) * 4 * Lc / mu))


def row_hofmann(n, tau, L_max, mu):
    K = 4 * L_max / mu
    return 0.5 * (n / tau + K + math.sqrt((n / tau) ** 2 + K**2))


def row_saga_li(n, mean_L, min_L, mu):
    return n * mean_L / min_L + 4 * mean_L / mu


# tag -> (description, function of keyword constants)
TABLE_ROWS = {
    1: ("general sketch, general rate", lambda c: row_general(c["L1"], c["L2"], c["kappa"], c["rho"], c["mu"], c["n"])),
    2: ("partition sketch, stochastic Lyapunov rate",
        lambda c: row_partition(c["p_cells"], c["L_cells"], c["mu"], c["n"], c["tau"])),
    3: ("gradient descent, general rate", lambda c: 4 * c["L"] / c["mu"]),
    4: ("gradient descent, partition rate", lambda c: 1 + 4 * c["L"] / c["mu"]),
    5: ("uniform SAGA, general rate", lambda c: c["n"] + 4 * c["L_max"] / c["mu"]),
    6: ("uniform SAGA, partition rate", lambda c: c["n"] + 4 * c["L_max"] / c["mu"]),
    7: ("importance SAGA, general rate",
        lambda c: row_general(c["L1"], c["L2"], c["kappa"], c["rho"], c["mu"], c["n"])),
    8: ("importance SAGA, partition rate", lambda c: c["n"] + 4 * c["mean_L"] / c["mu"]),
    9: ("minibatch SAGA, general rate",
        lambda c: max(4 * c["lg_max"] / c["mu"],
                      c["n"] / c["tau"] + 4 * c["rho"] / (c["mu"] * c["n"]) * np.max(np.asarray(c["L"]) / c["w"]))),
    10: ("tau-nice SAGA, identity weight",
         lambda c: max(4 * c["lg_max"] / c["mu"],
                       c["n"] / c["tau"] + _safe_ratio(c["n"] - c["tau"], (c["n"] - 1) * c["tau"]) * 4 * c["L_max"] / c["mu"])),
    11: ("tau-nice SAGA, smoothness weight",
         lambda c: max(4 * c["lg_max"] / c["mu"],
                       c["n"] / c["tau"] + _nice_ldiag_term(c))),
    12: ("tau-partition SAGA, identity weight",
         lambda c: max(4 * c["lg_max"] / c["mu"], c["n"] / c["tau"] + 4 * c["L_max"] / c["mu"])),
    13: ("tau-partition SAGA, smoothness weight",
         lambda c: max(4 * c["lg_max"] / c["mu"], c["n"] / c["tau"] + 4 * c["max_cell_L_sum"] / (c["mu"] * c["tau"]))),
    14: ("tau-partition SAGA, optimal probabilities",
         lambda c: c["n"] / c["tau"] + 4 * float(np.mean(c["L_cells"])) / c["mu"]),
}


def _nice_ldiag_term(c):
    n, tau = c["n"], c["tau"]
    if n == 1 or n == tau:
        return 0.0
    weighted = (n - 2) / (n - 1) * c["L_max"] + n / (n - 1) * c["mean_L"]
    return (n - tau) / (tau * n) * 4 * weighted / c["mu"]


def iteration_complexity(row, eps=1e-4, **constants) -> Complexity:
    """Pre-log factor of a complexity row and log(1/eps), reported separately."""
    if row not in TABLE_ROWS:
        raise TheoryError(f"unknown complexity row {row!r}")
    if not 0 < eps < 1:
        raise TheoryError("eps must lie in (0, 1)")
    if constants.get("mu", 1.0) <= 0:
        raise TheoryError("complexity needs a strictly positive strong convexity constant")
    try:
        factor = float(TABLE_ROWS[row][1](constants))
    except KeyError as exc:
        raise TheoryError(f"row {row} needs constant {exc.args[0]!r}") from None
    return Complexity(factor=factor, log_factor=math.log(1.0 / eps))


# -- tau trade-off ----------------------------------------------------------------


@dataclass
class TauCurve:
    tau: np.ndarray
    lg_max: np.ndarray
    c_tau: np.ndarray
    iteration: np.ndarray
    total: np.ndarray
    hofmann: np.ndarray
    approximate: np.ndarray
    weight: str

    @property
    def best_tau(self) -> int:
        return int(self.tau[int(np.argmin(self.total))])

    def rows(self):
        for k in range(self.tau.size):
            yield {
                "tau": int(self.tau[k]),
                "lg_max": float(self.lg_max[k]),
                "c_tau": float(self.c_tau[k]),
                "iteration_complexity": float(self.iteration[k]),
                "total_complexity": float(self.total[k]),
                "hofmann": float(self.hofmann[k]),
                "approximate": bool(self.approximate[k]),
            }


def tau_tradeoff_curve(problem, weight="identity", taus=None, lc_mode=None, samples=10_000, seed=0):
    """Iteration and total complexity of tau-nice SAGA for each minibatch size."""
    prof = smoothness_profile(problem)
    if prof.mu <= 0:
        raise TheoryError("tau sweep needs a strongly convex problem")
    n, mu = problem.n, prof.mu
    lc_mode = lc_mode or ("exact_ridge" if problem.loss == "ridge" else "average_bound")
    taus = np.arange(1, n + 1) if taus is None else np.asarray(sorted(set(int(t) for t in taus)))
    if taus.min() < 1 or taus.max() > n:
        raise TheoryError(f"tau values must lie in [1, {n}]")
    gram = problem.A.T @ problem.A if lc_mode == "exact_ridge" else None
    rng = make_rng(seed)
    lg, approx = [], []
    for t in taus:
        estimate = n > MC_THRESHOLD_N and lc_mode != "average_bound" and 1 < t < n
        if estimate:
            vals = _nice_lg_estimate(problem, int(t), lc_mode, samples, rng, gram)
            lg.append(float(np.nanmax(vals)))
        else:
            lg.append(float(_nice_lg(problem, int(t), lc_mode, gram).max()))
        approx.append(estimate)
    lg = np.array(lg)
    tf = taus.astype(float)
    frac = np.where(tf == n, 0.0, (n - tf) / max(n - 1, 1))
    c_tau = frac / tf * prof.max_L + 0.25 * mu * n / tf
    consts = dict(n=n, mu=mu, L_max=prof.max_L, mean_L=prof.mean_L)
    row = 10 if weight == "identity" else 11
    it = np.array([TABLE_ROWS[row][1](dict(consts, tau=int(t), lg_max=g)) for t, g in zip(taus, lg)])
    hof = np.array([row_hofmann(n, int(t), prof.max_L, mu) for t in taus])
    return TauCurve(tau=taus, lg_max=lg, c_tau=c_tau, iteration=it, total=tf * it, hofmann=hof,
                    approximate=np.array(approx), weight=weight)


# -- assumption probes ------------------------------------------------------------


def assumption_probes(problem, sampling, rule, x, reference, cap=DEFAULT_CAP):
    """Left-hand sides of the two expected-smoothness inequalities at x.

    Returns (E||grad_S(x) - grad_S(x*)||^2, E||(Jac(x) - Jac(x*)) Pi_S||^2_{W^-1},
    f(x) - f(x*)); the inequalities read lhs <= 2 L (f - f*).
    """
    from .sketch import projection_apply

    n = problem.n
    D = problem.jacobian(x) - reference.jacobian
    e = np.ones(n)
    sup = sampling.support(cap)
    lhs1 = lhs2 = 0.0
    for s, q in zip(sup.sets, sup.probs):
        th = sampling.theta(s)
        DP = projection_apply(rule, s, D)
        v = th / n * (DP @ e)
        lhs1 += q * float(v @ v)
        lhs2 += q * rule.weight.inv_norm_sq(DP)
    return lhs1, lhs2, problem.evaluate(x) - reference.f


# -- report -----------------------------------------------------------------------


@dataclass
class TheoryReport:
    l1: float | None
    l2: float | None
    kappa: float | None
    rho: float | None
    stepsize: float | None
    complexity: float | None
    formula_tag: str
    rho_kind: str = "exact"
    l1_kind: str = "exact"
    log_factor: float = field(default=math.log(1e4))
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        extra = d.pop("extra")
        d.update(extra)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)
