"""Measurement operators y = A vec(X) with column-major vectorization."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.fft
from scipy.stats import ortho_group

from .errors import ConfigError

OperatorKind = Literal["partial-dct", "partial-haar", "gaussian"]

# Dense payloads (Haar rotation, Gaussian matrix) are refused above this many entries.
MAX_DENSE_ENTRIES = 64_000_000


@dataclass(frozen=True)
class SpectrumDescriptor:
    """Singular spectrum of A: either all ones or an explicit vector of length m."""

    m: int
    all_ones: bool = True
    values: np.ndarray | None = None

    def __post_init__(self):
        if not self.all_ones:
            if self.values is None or len(self.values) != self.m:
                raise ConfigError("explicit spectrum must have length m")
            if np.any(self.values <= 0):
                raise ConfigError("singular values must be strictly positive")

    def squared(self) -> np.ndarray:
        if self.all_ones:
            return np.ones(self.m)
        return np.asarray(self.values) ** 2


@dataclass(frozen=True, eq=False)
class LinearOperator:
    kind: OperatorKind
    n1: int
    n2: int
    m: int
    seed: int
    selection: np.ndarray | None
    spectrum: SpectrumDescriptor
    # Haar: the selected rows (m x n). Gaussian: the matrix itself.
    _dense: np.ndarray | None = field(default=None, repr=False)
    # Gaussian only: thin SVD factors of A, A = U diag(s) Vt.
    _svd: tuple[np.ndarray, np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.n1 * self.n2

    @property
    def alpha(self) -> float:
        return self.m / self.n

    @property
    def is_partial_orthonormal(self) -> bool:
        return self.kind in ("partial-dct", "partial-haar")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n1": self.n1, "n2": self.n2, "m": self.m, "seed": self.seed}

    def dense(self) -> np.ndarray:
        """Materialize the m x n matrix (small sizes only; used by tests and oracles)."""
        if self._dense is not None:
            return self._dense.copy()
        eye = np.eye(self.n)
        return np.stack([self.apply_vec(col) for col in eye], axis=1)

    def apply_vec(self, x: np.ndarray) -> np.ndarray:
        if x.shape != (self.n,):
            raise ConfigError(f"expected a vector of length {self.n}, got shape {x.shape}")
        if self.kind == "partial-dct":
            return scipy.fft.dct(x, type=2, norm="ortho")[self.selection]
        return self._dense @ x

    def adjoint_vec(self, y: np.ndarray) -> np.ndarray:
        if y.shape != (self.m,):
            raise ConfigError(f"expected a vector of length {self.m}, got shape {y.shape}")
        if self.kind == "partial-dct":
            z = np.zeros(self.n)
            z[self.selection] = y
            return scipy.fft.idct(z, type=2, norm="ortho")
        return self._dense.T @ y


def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).reshape(-1, order="F")


def unvec(x: np.ndarray, n1: int, n2: int) -> np.ndarray:
    return np.asarray(x).reshape((n1, n2), order="F")


def apply(op: LinearOperator, X: np.ndarray) -> np.ndarray:
    """A vec(X)."""
    X = np.asarray(X, dtype=float)
    if X.shape != (op.n1, op.n2):
        raise ConfigError(f"operator expects a {op.n1}x{op.n2} matrix, got {X.shape}")
    return op.apply_vec(vec(X))


def apply_adjoint(op: LinearOperator, y: np.ndarray) -> np.ndarray:
    """unvec(A^T y)."""
    return unvec(op.adjoint_vec(np.asarray(y, dtype=float)), op.n1, op.n2)


def _check_dims(n1: int, n2: int, m: int) -> None:
    if n1 < 1 or n2 < 1:
        raise ConfigError("matrix dimensions must be positive")
    if not 1 <= m <= n1 * n2:
        raise ConfigError(f"need 1 <= m <= n = {n1 * n2}, got m = {m}")


def _select_rows(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(n, size=m, replace=False)


def make_partial_dct(n1: int, n2: int, m: int, seed: int, selection=None) -> LinearOperator:
    """A = P W with W the orthonormal DCT-II of size n and P a random row selection.

    ``selection`` overrides the random rows (used by oracles).
    """
    _check_dims(n1, n2, m)
    n = n1 * n2
    if selection is None:
        selection = _select_rows(n, m, np.random.default_rng(seed))
    else:
        selection = np.asarray(selection, dtype=np.int64)
        if selection.shape != (m,) or len(np.unique(selection)) != m:
            raise ConfigError("selection must hold m distinct indices")
        if selection.min() < 0 or selection.max() >= n:
            raise ConfigError("selection indices out of range")
    return LinearOperator("partial-dct", n1, n2, m, seed, selection, SpectrumDescriptor(m))


def make_partial_haar(n: int, m: int, seed: int, n1: int | None = None,
                      n2: int | None = None) -> LinearOperator:
    """A = P V with V Haar-distributed on O(n); m rows kept without repetition."""
    n1, n2 = (n, 1) if n1 is None else (n1, n2 if n2 is not None else n // n1)
    if n1 * n2 != n:
        raise ConfigError("n1 * n2 must equal n")
    _check_dims(n1, n2, m)
    if n * n > MAX_DENSE_ENTRIES:
        raise ConfigError(f"partial-haar needs an n x n rotation; n = {n} exceeds the dense cap")
    rng = np.random.default_rng(seed)
    V = ortho_group.rvs(n, random_state=rng) if n > 1 else np.ones((1, 1))
    sel = _select_rows(n, m, rng)
    return LinearOperator("partial-haar", n1, n2, m, seed, sel, SpectrumDescriptor(m),
                          _dense=np.ascontiguousarray(V[sel]))


def make_gaussian(n: int, m: int, seed: int, n1: int | None = None,
                  n2: int | None = None) -> LinearOperator:
    """Entries i.i.d. N(0, 1/n); the singular spectrum is computed once and cached."""
    n1, n2 = (n, 1) if n1 is None else (n1, n2 if n2 is not None else n // n1)
    if n1 * n2 != n:
        raise ConfigError("n1 * n2 must equal n")
    _check_dims(n1, n2, m)
    if m * n > MAX_DENSE_ENTRIES:
        raise ConfigError(f"gaussian operator of size {m}x{n} exceeds the dense cap")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n)) / np.sqrt(n)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return LinearOperator("gaussian", n1, n2, m, seed, None,
                          SpectrumDescriptor(m, all_ones=False, values=s),
                          _dense=A, _svd=(U, s, Vt))


def make_operator(kind: str, n1: int, n2: int, m: int, seed: int) -> LinearOperator:
    if kind == "partial-dct":
        return make_partial_dct(n1, n2, m, seed)
    if kind == "partial-haar":
        return make_partial_haar(n1 * n2, m, seed, n1, n2)
    if kind == "gaussian":
        return make_gaussian(n1 * n2, m, seed, n1, n2)
    raise ConfigError(f"unknown operator kind {kind!r}")


def from_dict(d: dict) -> LinearOperator:
    """Rebuild an operator from its JSON descriptor; payloads regenerate from the seed."""
    return make_operator(d["kind"], int(d["n1"]), int(d["n2"]), int(d["m"]), int(d["seed"]))
