"""Finite-sum objectives f(x) = (1/n) sum_i f_i(x) for regularized linear models.

Data is stored column-wise: ``A`` is d x n and column ``a_i`` belongs to
sample ``i``. Each summand carries the full regularizer,

    ridge:     f_i(x) = 0.5 * (a_i.x - y_i)**2 + (lam/2) ||x||^2
    logistic:  f_i(x) = log(1 + exp(-y_i a_i.x)) + (lam/2) ||x||^2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

LOSSES = ("ridge", "logistic")


class ProblemError(ValueError):
    """Invalid problem data or arguments."""


class ConvergenceError(RuntimeError):
    """Reference solver hit its iteration cap."""


def _as_subset(subset, n):
    if subset is None:
        return None
    idx = np.asarray(subset, dtype=np.intp).ravel()
    if idx.size == 0:
        raise ProblemError("subset must be non-empty")
    if idx.min() < 0 or idx.max() >= n:
        raise ProblemError(f"subset indices must lie in [0, {n})")
    return idx


@dataclass(frozen=True, eq=False)
class FiniteSumProblem:
    A: np.ndarray
    y: np.ndarray
    lam: float
    loss: str = "ridge"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if A.ndim != 2:
            raise ProblemError("A must be a d x n matrix")
        if A.shape[1] < 1:
            raise ProblemError("need at least one sample")
        if y.shape[0] != A.shape[1]:
            raise ProblemError(f"y has {y.shape[0]} entries but A has {A.shape[1]} columns")
        if self.loss not in LOSSES:
            raise ProblemError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ProblemError("regularization must be finite and >= 0")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
            raise ProblemError("data contains non-finite values")
        if self.loss == "logistic" and not np.all(np.abs(y) == 1.0):
            raise ProblemError("logistic loss needs labels in {-1, +1}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    # -- per-sample scalar pieces -------------------------------------------

    def margins(self, x, idx=None):
        """a_i.x for the selected columns (all when idx is None)."""
        A = self.A if idx is None else self.A[:, idx]
        return A.T @ x

    def loss_values(self, z, y):
        if self.loss == "ridge":
            return 0.5 * (z - y) ** 2
        return np.logaddexp(0.0, -y * z)

    def loss_slopes(self, z, y):
        """Derivative of the scalar loss with respect to the margin."""
        if self.loss == "ridge":
            return z - y
        return -y * expit(-y * z)

    def data_slopes(self, x, idx=None):
        """phi_i'(a_i.x) so that the data part of grad f_i is slope_i * a_i."""
        y = self.y if idx is None else self.y[idx]
        return self.loss_slopes(self.margins(x, idx), y)

    # -- objective, gradients, Jacobian -------------------------------------

    def evaluate(self, x, subset=None) -> float:
        x = np.asarray(x, dtype=float)
        idx = _as_subset(subset, self.n)
        y = self.y if idx is None else self.y[idx]
        vals = self.loss_values(self.margins(x, idx), y)
        return float(np.mean(vals) + 0.5 * self.lam * (x @ x))

    def gradient(self, x, subset=None) -> np.ndarray:
        """Gradient of the average of f_i over ``subset`` (all samples by default)."""
        x = np.asarray(x, dtype=float)
        idx = _as_subset(subset, self.n)
        A = self.A if idx is None else self.A[:, idx]
        s = self.data_slopes(x, idx)
        return A @ s / s.size + self.lam * x

    def columns(self, x, idx) -> np.ndarray:
        """Gradients of the individual f_i, i in idx, stacked as d x |idx|."""
        A = self.A[:, idx]
        return A * self.data_slopes(x, idx) + self.lam * x[:, None]

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.A * self.data_slopes(x) + self.lam * x[:, None]

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.loss == "ridge":
            curv = np.ones(self.n)
        else:
            s = expit(self.margins(x))
            curv = s * (1.0 - s)
        return (self.A * curv) @ self.A.T / self.n + self.lam * np.eye(self.d)

    # -- smoothness constants -----------------------------------------------

    @property
    def curvature_cap(self) -> float:
        # sup of the scalar loss second derivative
        return 1.0 if self.loss == "ridge" else 0.25

    def sample_smoothness(self) -> np.ndarray:
        return self.curvature_cap * np.sum(self.A**2, axis=0) + self.lam


@dataclass(frozen=True)
class SmoothnessProfile:
    per_function: np.ndarray
    max_L: float
    mean_L: float
    global_L: float
    mu: float
    strongly_convex: bool = field(default=True)

    @property
    def min_L(self) -> float:
        return float(np.min(self.per_function))


def _gram_extremes(A):
    """Largest and smallest eigenvalue of A A^T, via the smaller Gram matrix."""
    d, n = A.shape
    G = A.T @ A if n < d else A @ A.T
    ev = np.linalg.eigvalsh(G)
    top = max(float(ev[-1]), 0.0)
    low = max(float(ev[0]), 0.0) if n >= d else 0.0
    return top, low


def smoothness_profile(problem: FiniteSumProblem) -> SmoothnessProfile:
    L = problem.sample_smoothness()
    top, low = _gram_extremes(problem.A)
    cap = problem.curvature_cap
    global_L = cap * top / problem.n + problem.lam
    if problem.loss == "ridge":
        mu = low / problem.n + problem.lam
    else:
        # the logistic data term has no uniform curvature floor
        mu = problem.lam
    return SmoothnessProfile(
        per_function=L,
        max_L=float(L.max()),
        mean_L=float(L.mean()),
        global_L=float(global_L),
        mu=float(mu),
        strongly_convex=bool(mu > 0.0),
    )


def subset_smoothness(problem: FiniteSumProblem, subset, mode="average_bound") -> float:
    """Smoothness constant of f_C = (1/|C|) sum_{i in C} f_i."""
    idx = _as_subset(subset, problem.n)
    if mode == "average_bound":
        return float(np.mean(problem.sample_smoothness()[idx]))
    if mode == "exact_ridge":
        if problem.loss != "ridge":
            raise ProblemError("exact_ridge mode only applies to the ridge loss")
        top, _ = _gram_extremes(problem.A[:, idx])
        return top / idx.size + problem.lam
    raise ProblemError(f"unknown mode {mode!r}")


def subset_strong_convexity(problem: FiniteSumProblem, subset) -> float:
    """Strong convexity modulus of f_C (ridge: exact, logistic: lam)."""
    idx = _as_subset(subset, problem.n)
    if problem.loss == "logistic":
        return problem.lam
    _, low = _gram_extremes(problem.A[:, idx])
    return low / idx.size + problem.lam


@dataclass(frozen=True)
class ReferenceSolution:
    x: np.ndarray
    f: float
    jacobian: np.ndarray
    grad_norm: float


def reference_solution(problem: FiniteSumProblem, tol=1e-10, max_iter=1_000_000) -> ReferenceSolution:
    """Minimizer of f to gradient norm ``tol``."""
    d = problem.d
    if problem.loss == "ridge":
        n = problem.n
        H = problem.A @ problem.A.T / n + problem.lam * np.eye(d)
        rhs = problem.A @ problem.y / n
        try:
            x = np.linalg.solve(H, rhs)
        except np.linalg.LinAlgError:
            x = np.linalg.lstsq(H, rhs, rcond=None)[0]
        # a couple of refinement sweeps tighten ill-conditioned solves
        for _ in range(3):
            g = problem.gradient(x)
            if np.linalg.norm(g) <= tol:
                break
            x = x - np.linalg.lstsq(H, g, rcond=None)[0]
    else:
        x = _logistic_minimizer(problem, tol, max_iter)
    g = problem.gradient(x)
    return ReferenceSolution(
        x=x, f=problem.evaluate(x), jacobian=problem.jacobian(x), grad_norm=float(np.linalg.norm(g))
    )


def _logistic_minimizer(problem, tol, max_iter):
    prof = smoothness_profile(problem)
    x = np.zeros(problem.d)
    if problem.d <= 2000:
        # damped Newton converges in a handful of steps for desk-sized d
        for _ in range(100):
            g = problem.gradient(x)
            if np.linalg.norm(g) <= tol:
                return x
            try:
                step = np.linalg.solve(problem.hessian(x), g)
            except np.linalg.LinAlgError:
                break
            t, f0 = 1.0, problem.evaluate(x)
            while problem.evaluate(x - t * step) > f0 - 0.25 * t * (g @ step) and t > 1e-12:
                t *= 0.5
            x = x - t * step
    # plain gradient descent fallback
    alpha = 2.0 / (prof.global_L + prof.mu) if prof.mu > 0 else 1.0 / prof.global_L
    for _ in range(max_iter):
        g = problem.gradient(x)
        if np.linalg.norm(g) <= tol:
            return x
        x = x - alpha * g
    raise ConvergenceError(f"gradient norm still {np.linalg.norm(g):.3e} after {max_iter} steps")
