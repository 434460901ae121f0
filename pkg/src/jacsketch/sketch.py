"""Sketched Jacobian updates.

The Jacobian estimate J (d x n) is moved toward the true Jacobian only
along a random sketch: J <- J + (Jac - J) Pi_S with
Pi_S = S (S^T W S)^+ S^T W. Two sketch families are specialized here,
both with a diagonal weight W:

* ``column``   S = I_S, so Pi_S keeps the columns in S (minibatch SAGA)
* ``averaged`` S = e_S, every column in S becomes the mean fresh gradient
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import FullBatch, Sampling, SingleElement, TauPartition

FAMILIES = ("column", "averaged")
THETA_MODES = ("bias_correcting", "relaxed", "none")


class SketchError(ValueError):
    """Incompatible sketch rule, weight or sampling."""


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Positive diagonal weight; ``preset`` is identity, ldiag or custom."""

    diag: np.ndarray
    preset: str = "custom"

    def __post_init__(self):
        w = np.asarray(self.diag, dtype=float).ravel()
        if w.size == 0 or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise SketchError("weights must be finite and strictly positive")
        object.__setattr__(self, "diag", w)

    @classmethod
    def identity(cls, n):
        return cls(np.ones(n), "identity")

    @classmethod
    def from_smoothness(cls, L):
        return cls(np.asarray(L, dtype=float), "ldiag")

    @property
    def n(self):
        return self.diag.size

    @property
    def is_identity(self):
        return bool(np.all(self.diag == 1.0))

    def matrix(self):
        return np.diag(self.diag)

    def inv_norm_sq(self, M):
        """||M||^2 in the W^{-1} trace norm: Tr(M W^{-1} M^T)."""
        return float(np.sum(M * M / self.diag))


@dataclass(frozen=True)
class SketchRule:
    family: str
    weight: WeightMatrix
    theta_mode: str = "bias_correcting"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SketchError(f"unknown sketch family {self.family!r}")
        if self.theta_mode not in THETA_MODES:
            raise SketchError(f"unknown theta mode {self.theta_mode!r}")
        if self.family == "averaged" and not self.weight.is_identity:
            raise SketchError("averaged sketches need the identity weight")

    def check_sampling(self, sampling: Sampling):
        if sampling.n != self.weight.n:
            raise SketchError(f"weight has size {self.weight.n} but sampling has n={sampling.n}")
        if self.family == "averaged" and not isinstance(sampling, (TauPartition, SingleElement, FullBatch)):
            raise SketchError("averaged sketches need a partition sampling")


def projection_matrix(rule: SketchRule, S, n) -> np.ndarray:
    """Dense Pi_S (n x n)."""
    S = np.asarray(S, dtype=np.intp)
    P = np.zeros((n, n))
    if rule.family == "column":
        P[S, S] = 1.0
    else:
        w = rule.weight.diag[S]
        P[np.ix_(S, S)] = np.outer(np.ones(S.size), w) / w.sum()
    return P


def projection_apply(rule: SketchRule, S, M) -> np.ndarray:
    """M Pi_S without forming Pi_S."""
    S = np.asarray(S, dtype=np.intp)
    out = np.zeros_like(M, dtype=float)
    if rule.family == "column":
        out[:, S] = M[:, S]
    else:
        w = rule.weight.diag[S]
        out[:, S] = (M[:, S] @ w / w.sum())[:, None]
    return out


def theta(rule: SketchRule, sampling: Sampling, S) -> float:
    if rule.theta_mode == "relaxed":
        return 1.0
    return sampling.theta(S)


def generic_sketch_and_project(J, Jac, S_mat, W) -> np.ndarray:
    """J - (J - Jac) S (S^T W S)^+ S^T W for any sketch matrix and (dense) weight."""
    J = np.asarray(J, dtype=float)
    S_mat = np.asarray(S_mat, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = np.diag(W)
    if S_mat.ndim == 1:
        S_mat = S_mat[:, None]
    core = np.linalg.pinv(S_mat.T @ W @ S_mat, rcond=1e-12)
    return J - (J - Jac) @ S_mat @ core @ S_mat.T @ W


def sketch_matrix(rule: SketchRule, S, n) -> np.ndarray:
    """Explicit sketch matrix for the specialized families."""
    S = np.asarray(S, dtype=np.intp)
    if rule.family == "column":
        M = np.zeros((n, S.size))
        M[S, np.arange(S.size)] = 1.0
        return M
    v = np.zeros((n, 1))
    v[S, 0] = 1.0
    return v


def bias_check(rule: SketchRule, sampling: Sampling) -> float:
    """|| E[theta_S Pi_S e] - e ||_inf over the enumerated support."""
    n = sampling.n
    sup = sampling.support()
    acc = np.zeros(n)
    e = np.ones((1, n))
    for s, q in zip(sup.sets, sup.probs):
        th = 1.0 if rule.theta_mode == "relaxed" else sampling.theta(s)
        acc += q * th * projection_apply(rule, s, e)[0]
    return float(np.max(np.abs(acc - 1.0)))


class DenseJacobian:
    """Full d x n estimate with a cached row sum J e."""

    compressed = False

    def __init__(self, J):
        self.J = np.array(J, dtype=float)
        self.n = self.J.shape[1]
        self.row_sum = self.J.sum(axis=1)
        self._writes = 0

    def columns(self, S):
        return self.J[:, S]

    def matrix(self):
        return self.J.copy()

    def update(self, rule: SketchRule, S, fresh, old=None):
        """Write fresh gradients (d x |S|) into J through the sketch."""
        if old is None:
            old = self.J[:, S]
        if rule.family == "column":
            new = fresh
        else:
            w = rule.weight.diag[S]
            new = np.repeat((fresh @ w / w.sum())[:, None], len(S), axis=1)
        self.J[:, S] = new
        self._writes += len(S)
        if self._writes >= self.n:
            # exact refresh bounds floating-point drift of the running sum
            self.row_sum = self.J.sum(axis=1)
            self._writes = 0
        else:
            self.row_sum += new.sum(axis=1) - old.sum(axis=1)


class CompressedJacobian:
    """Columns stored as alpha_i * a_i, for the data part of linear models."""

    compressed = True

    def __init__(self, A, alpha):
        self.A = A
        self.alpha = np.array(alpha, dtype=float)
        self.n = self.alpha.size
        self.row_sum = A @ self.alpha
        self._writes = 0

    def columns(self, S):
        return self.A[:, S] * self.alpha[S]

    def matrix(self):
        return self.A * self.alpha

    def update(self, rule: SketchRule, S, fresh_slopes, old=None):
        if rule.family != "column":
            raise SketchError("compressed storage supports column sketches only")
        delta = fresh_slopes - self.alpha[S]
        self.alpha[S] = fresh_slopes
        self._writes += len(S)
        if self._writes >= self.n:
            self.row_sum = self.A @ self.alpha
            self._writes = 0
        else:
            self.row_sum += self.A[:, S] @ delta
