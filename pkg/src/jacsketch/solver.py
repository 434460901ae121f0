"""The JacSketch iteration.

Each step draws S, evaluates the gradients of f_i for i in S, forms

    g = (1/n) J e + (theta_S / n) (Jac(x) - J) Pi_S e

then moves x <- x - alpha g and updates J through the sketch. The sketch
family, weight and theta mode select which classical method comes out
(gradient descent, SGD, SAG, SAGA and their minibatch variants).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .problem import FiniteSumProblem, ReferenceSolution
from .sampling import Sampling, make_rng
from .sketch import CompressedJacobian, DenseJacobian, SketchRule, projection_apply

TRACE_HEADER = ("epoch", "f_gap", "dist_sq", "lyapunov", "grad_var", "wall_time_s")
DIVERGENCE_FACTOR = 1e12


class SolverError(ValueError):
    """Invalid solver configuration."""


@dataclass
class SolverConfig:
    sampling: Sampling
    rule: SketchRule
    stepsize: float
    max_epochs: float = 50.0
    tolerance: float = 0.0
    seed: int = 0
    j0: object = "zero"  # "zero", "jacobian" or a d x n array
    x0: np.ndarray | None = None
    storage: str = "dense"  # or "compressed"
    decreasing_mu: float | None = None  # SGD schedule alpha / (1 + mu alpha k)
    checkpoint_every: int | None = None  # in gradient evaluations, default n/4
    probe_every: int | None = None  # lyapunov/variance cadence, default n
    probe_variance: bool = False

    def validate(self, problem):
        n = problem.n
        if self.sampling.n != n:
            raise SolverError(f"sampling is over {self.sampling.n} elements but the problem has {n}")
        self.rule.check_sampling(self.sampling)
        if not (np.isfinite(self.stepsize) and self.stepsize > 0):
            raise SolverError("stepsize must be a positive finite number")
        if self.max_epochs <= 0:
            raise SolverError("max_epochs must be positive")
        if self.storage not in ("dense", "compressed"):
            raise SolverError(f"unknown storage {self.storage!r}")
        if self.storage == "compressed" and self.rule.family != "column":
            raise SolverError("compressed storage supports column sketches only")
        if isinstance(self.j0, str) and self.j0 not in ("zero", "jacobian"):
            raise SolverError(f"unknown j0 {self.j0!r}")


@dataclass
class Trace:
    records: list = field(default_factory=list)
    status: str = "running"
    iterations: int = 0
    evaluations: int = 0

    def append(self, **row):
        self.records.append(tuple(row.get(k, float("nan")) for k in TRACE_HEADER))

    def column(self, name):
        k = TRACE_HEADER.index(name)
        return np.array([r[k] for r in self.records], dtype=float)

    def to_csv(self, stream=None):
        out = stream or io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.records:
            w.writerow([_fmt(v) for v in r])
        return out.getvalue() if stream is None else None

    def status_json(self):
        return json.dumps({"status": self.status, "iterations": self.iterations,
                           "evaluations": self.evaluations})

    def epochs_to(self, rel_gap):
        """First checkpoint epoch where f_gap <= rel_gap * f_gap[0]; inf if never."""
        gaps = self.column("f_gap")
        if gaps.size == 0 or not np.isfinite(gaps[0]):
            return float("inf")
        hit = np.nonzero(gaps <= rel_gap * gaps[0])[0]
        return float(self.column("epoch")[hit[0]]) if hit.size else float("inf")


def _fmt(v):
    if isinstance(v, float) and not np.isfinite(v):
        return "nan" if np.isnan(v) else ("inf" if v > 0 else "-inf")
    return repr(float(v))


@dataclass
class RunResult:
    x: np.ndarray
    jacobian: object
    trace: Trace

    @property
    def status(self):
        return self.trace.status


def initial_jacobian(problem, config, x0):
    if isinstance(config.j0, str):
        if config.j0 == "zero":
            J = np.zeros((problem.d, problem.n))
        else:
            J = problem.jacobian(x0)
    else:
        J = np.asarray(config.j0, dtype=float)
        if J.shape != (problem.d, problem.n):
            raise SolverError(f"custom j0 must have shape {(problem.d, problem.n)}")
    if config.storage == "dense":
        return DenseJacobian(J)
    if isinstance(config.j0, str):
        alpha = np.zeros(problem.n) if config.j0 == "zero" else problem.data_slopes(x0)
        return CompressedJacobian(problem.A, alpha)
    raise SolverError("custom j0 is not supported with compressed storage")


def full_estimate(problem, jac, x):
    """Dense d x n view of the current estimate (compressed adds the regularizer)."""
    if jac.compressed:
        return jac.matrix() + problem.lam * x[:, None]
    return jac.matrix()


def gradient_estimate(problem, rule, sampling, J, x, S, th=None):
    """g for a given draw S and dense estimate J (reference implementation)."""
    n = problem.n
    if th is None:
        th = 1.0 if rule.theta_mode == "relaxed" else sampling.theta(S)
    jac = problem.jacobian(x)
    if rule.theta_mode == "none":
        return th / n * projection_apply(rule, S, jac).sum(axis=1)
    return J.sum(axis=1) / n + th / n * projection_apply(rule, S, jac - J).sum(axis=1)


def lyapunov_general(problem, reference, x, J, alpha, L2, weight):
    """||x - x*||^2 + alpha / (2 L2) ||J - Jac(x*)||^2 in the W^{-1} norm."""
    dx = x - reference.x
    return float(dx @ dx + alpha / (2.0 * L2) * weight.inv_norm_sq(J - reference.jacobian))


def lyapunov_stochastic(problem, reference, x, J, alpha, sampling, L_cells, cell=None):
    """Stochastic Lyapunov value for a partition sampling (identity weight).

    With ``cell`` given, the value for that cell; otherwise its expectation
    over the cell probabilities.
    """
    n, tau = problem.n, sampling.tau
    dx = x - reference.x
    R = J - reference.jacobian
    dist = float(dx @ dx)
    cells, probs = sampling.cells(), sampling.cell_probabilities()
    terms = []
    for c, p, Lc in zip(cells, probs, L_cells):
        sigma = n / (4.0 * tau * Lc)
        v = R[:, c].sum(axis=1) / (p * n)
        terms.append(2.0 * alpha * sigma * float(v @ v))
    if cell is None:
        return dist + float(np.dot(probs, terms))
    key = np.unique(np.asarray(cell, dtype=np.intp))
    for k, c in enumerate(cells):
        if np.array_equal(np.sort(c), key):
            return dist + terms[k]
    raise SolverError("cell is not part of the partition")


@dataclass(frozen=True)
class VarianceProbe:
    variance: float
    second_moment: float
    bound: float | None
    bias: float  # ||E[g] - grad f(x)||, zero for unbiased estimators


def variance_probe(problem, rule, sampling, x, J, reference=None, L1=None, rho=None):
    """E||g - grad f(x)||^2 and E||g||^2 over the support, plus their upper bound."""
    n = problem.n
    jac = problem.jacobian(x)
    grad = jac.sum(axis=1) / n
    base = J.sum(axis=1) / n
    sup = sampling.support()
    var = sec = 0.0
    mean = np.zeros_like(grad)
    for s, q in zip(sup.sets, sup.probs):
        th = 1.0 if rule.theta_mode == "relaxed" else sampling.theta(s)
        if rule.theta_mode == "none":
            g = th / n * projection_apply(rule, s, jac).sum(axis=1)
        else:
            g = base + th / n * projection_apply(rule, s, jac - J).sum(axis=1)
        r = g - grad
        mean += q * g
        var += q * float(r @ r)
        sec += q * float(g @ g)
    bound = None
    if reference is not None and L1 is not None and rho is not None:
        gap = problem.evaluate(x) - reference.f
        bound = 4.0 * L1 * gap + 2.0 * rho / n**2 * rule.weight.inv_norm_sq(J - reference.jacobian)
    return VarianceProbe(var, sec, bound, float(np.linalg.norm(mean - grad)))


def run(
    problem: FiniteSumProblem,
    config: SolverConfig,
    reference: ReferenceSolution | None = None,
    lyapunov: Callable | None = None,
) -> RunResult:
    """Iterate until max_epochs, the relative-gap tolerance, or divergence.

    ``lyapunov(x, J)`` is evaluated on the dense estimate every probe period.
    """
    config.validate(problem)
    n, lam = problem.n, problem.lam
    rng = make_rng(config.seed)
    x = np.zeros(problem.d) if config.x0 is None else np.array(config.x0, dtype=float)
    jac = initial_jacobian(problem, config, x)
    rule, sampling = config.rule, config.sampling
    mode = rule.theta_mode
    relaxed = mode == "relaxed"
    compressed = config.storage == "compressed"
    alpha0 = config.stepsize
    check_every = config.checkpoint_every or max(1, n // 4)
    probe_every = config.probe_every or n
    budget = int(np.ceil(config.max_epochs * n))

    f_ref = reference.f if reference is not None else 0.0
    trace = Trace()
    t0 = time.perf_counter()
    overhead = 0.0  # time spent in checkpoints, excluded from wall time

    def record(evals, probe):
        nonlocal overhead
        t_in = time.perf_counter()
        f = problem.evaluate(x)
        row = {"epoch": evals / n, "f_gap": f - f_ref, "wall_time_s": t_in - t0 - overhead}
        if reference is not None:
            dx = x - reference.x
            row["dist_sq"] = float(dx @ dx)
        if probe:
            J = full_estimate(problem, jac, x)
            if lyapunov is not None:
                row["lyapunov"] = lyapunov(x, J)
            if config.probe_variance:
                row["grad_var"] = variance_probe(problem, rule, sampling, x, J).variance
        trace.append(**row)
        overhead += time.perf_counter() - t_in
        return f - f_ref

    gap0 = record(0, True)
    scale0 = abs(gap0) if gap0 != 0 else 1.0
    evals = k = 0
    next_check, next_probe = check_every, probe_every
    status = "max_epochs"
    while evals < budget:
        S = sampling.draw(rng)
        th = 1.0 if relaxed else sampling.draw_theta(S)
        alpha = alpha0 if config.decreasing_mu is None else alpha0 / (1.0 + config.decreasing_mu * alpha0 * k)
        if compressed:
            slopes = problem.data_slopes(x, S)
            AS = problem.A[:, S]
            if mode == "none":
                g = th / n * (AS @ slopes) + (th * len(S) / n) * lam * x
            else:
                g = jac.row_sum / n + th / n * (AS @ (slopes - jac.alpha[S])) + lam * x
                jac.update(rule, S, slopes)
        else:
            fresh = problem.columns(x, S)
            if mode == "none":
                g = th / n * fresh.sum(axis=1)
            else:
                old = jac.columns(S)
                # Pi_S e = e_S for both sketch families
                g = jac.row_sum / n + th / n * (fresh.sum(axis=1) - old.sum(axis=1))
                jac.update(rule, S, fresh, old)
        x = x - alpha * g
        k += 1
        evals += len(S)
        if not np.all(np.isfinite(x)):
            status = "diverged"
            break
        if evals >= next_check or evals >= budget:
            probe = evals >= next_probe
            gap = record(evals, probe)
            while next_check <= evals:
                next_check += check_every
            while probe and next_probe <= evals:
                next_probe += probe_every
            if not np.isfinite(gap) or abs(gap) > DIVERGENCE_FACTOR * scale0:
                status = "diverged"
                break
            if reference is not None and config.tolerance > 0 and gap <= config.tolerance * scale0:
                status = "converged"
                break
    trace.status = status
    trace.iterations, trace.evaluations = k, evals
    return RunResult(x=x, jacobian=jac, trace=trace)
