"""SVMLight parsing and writing, synthetic ridge data, column scaling."""

from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass

import numpy as np


class DataError(ValueError):
    """Malformed or unusable dataset."""


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray  # d x n, one column per sample
    labels: np.ndarray
    source: str = ""

    @property
    def d(self):
        return self.features.shape[0]

    @property
    def n(self):
        return self.features.shape[1]


def load_svmlight(path, n_features=None) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        ds = parse_svmlight(fh, n_features)
    return Dataset(ds.features, ds.labels, source=os.fspath(path))


def parse_svmlight(src, n_features=None) -> Dataset:
    """Parse ``label idx:val idx:val ...`` lines (indices 1-based, strictly increasing).

    ``src`` is an open text stream or the text itself. Labels {0, 1} and
    {1, 2} are remapped to {-1, +1}; other labels are kept as real numbers.
    """
    if hasattr(src, "read"):
        text, name = src.read(), getattr(src, "name", "<stream>")
    else:
        text, name = str(src), "<text>"
    labels, rows, cols, vals = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].replace("−", "-").strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise DataError(f"line {lineno}: bad label {tokens[0]!r}") from None
        sample = len(labels)
        labels.append(label)
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise DataError(f"line {lineno}: malformed token {tok!r}")
            if key == "qid":
                continue
            try:
                idx, v = int(key), float(val)
            except ValueError:
                raise DataError(f"line {lineno}: malformed token {tok!r}") from None
            if idx < 1:
                raise DataError(f"line {lineno}: feature index {idx} must be >= 1")
            if idx == prev:
                raise DataError(f"line {lineno}: duplicate feature index {idx}")
            if idx < prev:
                raise DataError(f"line {lineno}: feature index {idx} after {prev} is not increasing")
            if not np.isfinite(v):
                raise DataError(f"line {lineno}: non-finite value for feature {idx}")
            prev = idx
            rows.append(idx - 1)
            cols.append(sample)
            vals.append(v)
    if not labels:
        raise DataError("no samples")
    d = max(rows) + 1 if rows else 0
    if n_features is not None:
        if d > n_features:
            raise DataError(f"found feature index {d} above n_features={n_features}")
        d = n_features
    X = np.zeros((max(d, 1), len(labels)))
    X[rows, cols] = vals
    return Dataset(features=X, labels=_remap_labels(np.array(labels)), source=name)


def _remap_labels(y):
    values = set(np.unique(y).tolist())
    if values <= {-1.0, 1.0}:
        return y
    if values <= {0.0, 1.0}:
        warnings.warn("labels {0, 1} remapped to {-1, +1}", stacklevel=3)
        return np.where(y > 0, 1.0, -1.0)
    if values <= {1.0, 2.0}:
        warnings.warn("labels {1, 2} remapped to {-1, +1}", stacklevel=3)
        return np.where(y > 1, 1.0, -1.0)
    return y


def write_svmlight(dataset: Dataset, dest=None):
    """Write in SVMLight format with round-trip exact floats; returns text if dest is None."""
    out = io.StringIO()
    X, y = dataset.features, dataset.labels
    for j in range(dataset.n):
        nz = np.nonzero(X[:, j])[0]
        parts = [_num(y[j])] + [f"{i + 1}:{_num(X[i, j])}" for i in nz]
        out.write(" ".join(parts) + "\n")
    text = out.getvalue()
    if dest is None:
        return text
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    return None


def _num(v):
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def synthesize_ridge(n, d, noise_sigma=1e-3, seed=0):
    """Gaussian design A (d x n), planted x ~ N(0, I), labels y = A^T x - noise.

    Returns (dataset, planted_x). ``noise_sigma`` is the noise standard deviation.
    """
    if n < 1 or d < 1:
        raise DataError("n and d must be positive")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, n))
    x = rng.standard_normal(d)
    eps = noise_sigma * rng.standard_normal(n)
    ds = Dataset(features=A, labels=A.T @ x - eps, source=f"synthetic(n={n}, d={d}, seed={seed})")
    return ds, x


def skewed_column_norms(n) -> np.ndarray:
    """Squared norms 1 for the first column and 1/n^2 for the rest."""
    sq = np.full(n, 1.0 / n**2)
    sq[0] = 1.0
    return sq


def scale_columns(dataset: Dataset, squared_norms) -> Dataset:
    """Rescale each column so ||a_i||^2 equals the target."""
    target = np.asarray(squared_norms, dtype=float).ravel()
    if target.size != dataset.n:
        raise DataError(f"need {dataset.n} target norms, got {target.size}")
    if np.any(~(target > 0)):
        raise DataError("target norms must be strictly positive")
    cur = np.sum(dataset.features**2, axis=0)
    zero = np.nonzero(cur == 0)[0]
    if zero.size:
        raise DataError(f"column {int(zero[0])} is zero and cannot be rescaled")
    X = dataset.features * np.sqrt(target / cur)
    return Dataset(features=X, labels=dataset.labels.copy(), source=dataset.source + " [scaled]")
