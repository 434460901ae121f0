"""Random index sets S drawn from a proper sampling over {0, ..., n-1}.

Every scheme knows its support G (the sets drawn with positive probability),
the probability p_C of each set, and the bias-correcting weight
theta_C = 1 / (c1 p_C) used when the support is c1-uniform (each element lies
in exactly c1 support sets). Random draws take an external numpy Generator.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

DEFAULT_CAP = 1_000_000


class SamplingError(ValueError):
    """Invalid sampling scheme."""


class CapacityError(RuntimeError):
    """Support too large to enumerate."""


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; identical seeds give identical streams everywhere."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class Support:
    sets: list
    probs: np.ndarray
    c1: int | None
    c2: int | None
    cardinality: int | None

    @property
    def size(self) -> int:
        return len(self.sets)

    @property
    def is_c1_uniform(self) -> bool:
        return self.c1 is not None

    @property
    def is_pair_uniform(self) -> bool:
        return self.c2 is not None

    @property
    def is_tau_uniform(self) -> bool:
        return self.cardinality is not None

    def indicator(self, n) -> np.ndarray:
        """|G| x n membership matrix."""
        M = np.zeros((len(self.sets), n))
        for k, s in enumerate(self.sets):
            M[k, s] = 1.0
        return M


def _describe(sets, probs, n) -> Support:
    sup = Support(sets=list(sets), probs=np.asarray(probs, dtype=float), c1=None, c2=None, cardinality=None)
    M = sup.indicator(n)
    counts = M.sum(axis=0)
    c1 = int(counts[0]) if np.all(counts == counts[0]) else None
    c2 = None
    if n >= 2:
        pair = M.T @ M
        off = pair[~np.eye(n, dtype=bool)]
        if np.all(off == off[0]):
            c2 = int(off[0])
    else:
        c2 = 0
    sizes = {len(s) for s in sets}
    card = sizes.pop() if len(sizes) == 1 else None
    return Support(sets=list(sets), probs=np.asarray(probs, dtype=float), c1=c1, c2=c2, cardinality=card)


class Sampling:
    """Base class. Subclasses fill in draw, support and the closed forms."""

    kind = "abstract"

    def __init__(self, n: int):
        if int(n) != n or n < 1:
            raise SamplingError("n must be a positive integer")
        self.n = int(n)

    # cardinality when every drawn set has the same size, else None
    tau: int | None = None

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def support(self, cap: int = DEFAULT_CAP) -> Support:
        raise NotImplementedError

    def set_probability(self, S) -> float:
        raise NotImplementedError

    def theta(self, S) -> float:
        """1 / (c1 p_S); raises if S is outside the support."""
        raise NotImplementedError

    def draw_theta(self, S) -> float:
        """theta for a set produced by ``draw`` (no membership check)."""
        return self.theta(S)

    def element_probabilities(self) -> np.ndarray:
        sup = self.support()
        p = np.zeros(self.n)
        for s, q in zip(sup.sets, sup.probs):
            p[s] += q
        return p

    def probability_matrix(self) -> np.ndarray:
        """P_ij = Prob(i in S and j in S)."""
        sup = self.support()
        M = sup.indicator(self.n)
        return (M.T * sup.probs) @ M

    def support_size(self) -> int:
        return self.support().size

    @property
    def is_partition(self) -> bool:
        return False

    def describe(self) -> str:
        return self.kind


class SingleElement(Sampling):
    """S = {i} with probability p_i."""

    kind = "single"

    def __init__(self, probs):
        p = np.asarray(probs, dtype=float).ravel()
        super().__init__(p.size)
        _check_probs(p)
        if np.any(p <= 0):
            raise SamplingError("every element needs positive probability")
        self.p = p
        self.tau = 1
        self.uniform = bool(np.allclose(p, p[0], rtol=0, atol=1e-15))
        self._cdf = np.cumsum(p)
        self._cdf[-1] = 1.0

    @classmethod
    def uniform_over(cls, n):
        return cls(np.full(n, 1.0 / n))

    def draw(self, rng):
        if self.uniform:
            i = int(rng.integers(self.n))
        else:
            i = int(np.searchsorted(self._cdf, rng.random(), side="right"))
            i = min(i, self.n - 1)
        return np.array([i], dtype=np.intp)

    def support(self, cap=DEFAULT_CAP):
        _check_cap(self.n, cap)
        sets = [np.array([i], dtype=np.intp) for i in range(self.n)]
        return Support(sets=sets, probs=self.p.copy(), c1=1, c2=0 if self.n >= 2 else 0, cardinality=1)

    def set_probability(self, S):
        S = _as_set(S)
        if S.size != 1 or not 0 <= S[0] < self.n:
            return 0.0
        return float(self.p[S[0]])

    def theta(self, S):
        q = self.set_probability(S)
        if q == 0.0:
            raise SamplingError(f"set {list(map(int, np.atleast_1d(S)))} is outside the support")
        return 1.0 / q

    def draw_theta(self, S):
        return 1.0 / self.p[S[0]]

    def element_probabilities(self):
        return self.p.copy()

    def probability_matrix(self):
        return np.diag(self.p)

    def support_size(self):
        return self.n

    @property
    def is_partition(self):
        return True

    def cells(self):
        return [np.array([i], dtype=np.intp) for i in range(self.n)]

    def cell_probabilities(self):
        return self.p.copy()

    def describe(self):
        return "single-uniform" if self.uniform else "single-importance"


class TauNice(Sampling):
    """Uniformly random subset of fixed size tau."""

    kind = "tau-nice"

    def __init__(self, n, tau):
        super().__init__(n)
        if int(tau) != tau or not 1 <= tau <= n:
            raise SamplingError(f"tau must be an integer in [1, {n}]")
        self.tau = int(tau)

    def draw(self, rng):
        if self.tau == 1:
            return np.array([int(rng.integers(self.n))], dtype=np.intp)
        S = rng.choice(self.n, size=self.tau, replace=False)
        S.sort()
        return S.astype(np.intp, copy=False)

    def support(self, cap=DEFAULT_CAP):
        _check_cap(math.comb(self.n, self.tau), cap)
        sets = [np.array(c, dtype=np.intp) for c in itertools.combinations(range(self.n), self.tau)]
        q = 1.0 / len(sets)
        n, t = self.n, self.tau
        c2 = math.comb(n - 2, t - 2) if (n >= 2 and t >= 2) else 0
        return Support(
            sets=sets, probs=np.full(len(sets), q), c1=math.comb(n - 1, t - 1), c2=c2, cardinality=t
        )

    def set_probability(self, S):
        S = _as_set(S)
        if not _valid_set(S, self.n) or S.size != self.tau:
            return 0.0
        return 1.0 / math.comb(self.n, self.tau)

    def theta(self, S):
        if self.set_probability(S) == 0.0:
            raise SamplingError("set is outside the support")
        return self.n / self.tau

    def draw_theta(self, S):
        return self.n / self.tau

    def element_probabilities(self):
        return np.full(self.n, self.tau / self.n)

    def probability_matrix(self):
        n, t = self.n, self.tau
        off = t * (t - 1) / (n * (n - 1)) if n > 1 else 0.0
        P = np.full((n, n), off)
        np.fill_diagonal(P, t / n)
        return P

    def support_size(self):
        return math.comb(self.n, self.tau)

    def describe(self):
        return f"{self.tau}-nice"


class TauPartition(Sampling):
    """Pick one cell of a fixed partition, cell C with probability p_C."""

    kind = "tau-partition"

    def __init__(self, cells, probs=None):
        cells = [np.sort(np.asarray(c, dtype=np.intp).ravel()) for c in cells]
        if not cells or any(c.size == 0 for c in cells):
            raise SamplingError("partition cells must be non-empty")
        flat = np.concatenate(cells)
        n = flat.size
        super().__init__(n)
        if not np.array_equal(np.sort(flat), np.arange(n)):
            raise SamplingError("cells must partition {0, ..., n-1} without overlap")
        sizes = {c.size for c in cells}
        if len(sizes) != 1:
            raise SamplingError("partition cells must all have the same size")
        self.tau = sizes.pop()
        self._cells = cells
        m = len(cells)
        p = np.full(m, 1.0 / m) if probs is None else np.asarray(probs, dtype=float).ravel()
        if p.size != m:
            raise SamplingError("need one probability per cell")
        _check_probs(p)
        if np.any(p <= 0):
            raise SamplingError("every cell needs positive probability")
        self.p = p
        self.cell_of = np.empty(n, dtype=np.intp)
        for k, c in enumerate(cells):
            self.cell_of[c] = k
        self._cdf = np.cumsum(p)
        self._cdf[-1] = 1.0

    @classmethod
    def contiguous(cls, n, tau, probs=None):
        if n % tau:
            raise SamplingError(f"tau={tau} does not divide n={n}")
        return cls([np.arange(k, k + tau) for k in range(0, n, tau)], probs)

    def cells(self):
        return [c.copy() for c in self._cells]

    def cell_probabilities(self):
        return self.p.copy()

    def draw(self, rng):
        k = int(np.searchsorted(self._cdf, rng.random(), side="right"))
        return self._cells[min(k, len(self._cells) - 1)]

    def support(self, cap=DEFAULT_CAP):
        _check_cap(len(self._cells), cap)
        m = len(self._cells)
        c2 = 0 if self.tau == 1 else (1 if m == 1 else None)
        if self.n == 1:
            c2 = 0
        return Support(sets=self.cells(), probs=self.p.copy(), c1=1, c2=c2, cardinality=self.tau)

    def set_probability(self, S):
        S = _as_set(S)
        if not _valid_set(S, self.n):
            return 0.0
        k = self.cell_of[S[0]]
        if not np.array_equal(S, self._cells[k]):
            return 0.0
        return float(self.p[k])

    def theta(self, S):
        q = self.set_probability(S)
        if q == 0.0:
            raise SamplingError("set is outside the support")
        return 1.0 / q

    def draw_theta(self, S):
        return 1.0 / self.p[self.cell_of[S[0]]]

    def element_probabilities(self):
        return self.p[self.cell_of]

    def probability_matrix(self):
        same = self.cell_of[:, None] == self.cell_of[None, :]
        return np.where(same, self.p[self.cell_of][:, None], 0.0)

    def support_size(self):
        return len(self._cells)

    @property
    def is_partition(self):
        return True

    def describe(self):
        return f"{self.tau}-partition"


class FullBatch(Sampling):
    """Always S = {0, ..., n-1}."""

    kind = "full"

    def __init__(self, n):
        super().__init__(n)
        self.tau = self.n
        self._all = np.arange(self.n, dtype=np.intp)

    def draw(self, rng):
        return self._all

    def support(self, cap=DEFAULT_CAP):
        return Support(sets=[self._all.copy()], probs=np.ones(1), c1=1, c2=1 if self.n >= 2 else 0,
                       cardinality=self.n)

    def set_probability(self, S):
        S = _as_set(S)
        return 1.0 if np.array_equal(S, self._all) else 0.0

    def theta(self, S):
        if self.set_probability(S) == 0.0:
            raise SamplingError("set is outside the support")
        return 1.0

    def draw_theta(self, S):
        return 1.0

    def element_probabilities(self):
        return np.ones(self.n)

    def probability_matrix(self):
        return np.ones((self.n, self.n))

    def support_size(self):
        return 1

    @property
    def is_partition(self):
        return True

    def cells(self):
        return [self._all.copy()]

    def cell_probabilities(self):
        return np.ones(1)


class CustomSampling(Sampling):
    """Arbitrary list of sets with probabilities."""

    kind = "custom"

    def __init__(self, n, sets, probs):
        super().__init__(n)
        sets = [np.unique(np.asarray(s, dtype=np.intp).ravel()) for s in sets]
        p = np.asarray(probs, dtype=float).ravel()
        if len(sets) != p.size:
            raise SamplingError("need one probability per set")
        _check_probs(p)
        keep = p > 0
        sets = [s for s, k in zip(sets, keep) if k]
        p = p[keep]
        for s in sets:
            if s.size == 0:
                raise SamplingError("support sets must be non-empty")
            if not _valid_set(s, n):
                raise SamplingError(f"set indices must lie in [0, {n})")
        keys = [tuple(s.tolist()) for s in sets]
        if len(set(keys)) != len(keys):
            raise SamplingError("duplicate support sets; merge their probabilities")
        self._sets, self.p = sets, p
        self._index = {k: i for i, k in enumerate(keys)}
        self._support = _describe(sets, p, n)
        elem = self.element_probabilities()
        if np.any(elem <= 0):
            raise SamplingError("sampling is not proper: some element is never drawn")
        # tau-uniform needs a fixed cardinality and uniform element probabilities
        uniform = np.allclose(elem, elem[0], rtol=1e-12, atol=0)
        self.tau = self._support.cardinality if uniform else None
        self._cdf = np.cumsum(p)
        self._cdf[-1] = 1.0

    def draw(self, rng):
        k = int(np.searchsorted(self._cdf, rng.random(), side="right"))
        return self._sets[min(k, len(self._sets) - 1)]

    def support(self, cap=DEFAULT_CAP):
        _check_cap(len(self._sets), cap)
        return self._support

    def set_probability(self, S):
        k = self._index.get(tuple(_as_set(S).tolist()))
        return 0.0 if k is None else float(self.p[k])

    def theta(self, S):
        if self._support.c1 is None:
            raise SamplingError("bias-correcting weight needs a c1-uniform support")
        q = self.set_probability(S)
        if q == 0.0:
            raise SamplingError("set is outside the support")
        return 1.0 / (self._support.c1 * q)

    def element_probabilities(self):
        p = np.zeros(self.n)
        for s, q in zip(self._sets, self.p):
            p[s] += q
        return p

    @property
    def is_partition(self):
        return self._support.c1 == 1


def _as_set(S):
    return np.unique(np.asarray(S, dtype=np.intp).ravel())


def _valid_set(S, n):
    return S.size > 0 and S[0] >= 0 and S[-1] < n


def _check_probs(p):
    if p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise SamplingError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise SamplingError(f"probabilities sum to {p.sum():.12g}, not 1")


def _check_cap(size, cap):
    if size > cap:
        raise CapacityError(f"support has {size} sets, above the enumeration cap {cap}")


def expectation(sampling: Sampling, fn, cap=DEFAULT_CAP):
    """Sum over the support of p_C * fn(C)."""
    sup = sampling.support(cap)
    total = None
    for s, q in zip(sup.sets, sup.probs):
        v = q * fn(s)
        total = v if total is None else total + v
    return total
