"""Dense / CSR matrix helpers, norms and the Gram spectral norm.

Dense matrices are plain 2-D ``numpy.ndarray`` objects.  Solver code works
in float64; anything that is serialized is float32.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import CapacityError, FormatError, InvalidInputError

logger = logging.getLogger(__name__)

SOLVER_DTYPE = np.float64
STORAGE_DTYPE = np.float32
U32_MAX = 2**32 - 1

POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000


def as_matrix(M, *, name: str = "matrix", dtype=SOLVER_DTYPE) -> np.ndarray:
    """Validate ``M`` as a finite 2-D array and return it as ``dtype``.

    Never returns a view that aliases a caller-owned array of a different
    dtype; arrays already of ``dtype`` are returned as-is (callers must not
    mutate them).
    """
    arr = np.asarray(M, dtype=dtype)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


def frobenius_norm(M) -> float:
    return float(np.linalg.norm(as_matrix(M), "fro"))


def entrywise_l1_norm(M) -> float:
    """Sum of absolute values of all entries (L1 norm of vec(M))."""
    return float(np.abs(as_matrix(M)).sum())


def sparsity_fraction(M) -> float:
    """Fraction of entries that are exactly zero. No tolerance is applied."""
    arr = np.asarray(M)
    if arr.size == 0:
        return 0.0
    return float(np.count_nonzero(arr == 0)) / arr.size


class GramNorm(NamedTuple):
    value: float
    iterations: int
    converged: bool


def power_iteration_gram(C, *, tol: float = POWER_TOL,
                         max_iter: int = POWER_MAX_ITER) -> GramNorm:
    """Largest eigenvalue of ``C @ C.T`` by power iteration.

    Iterates on whichever of ``C.T @ C`` / ``C @ C.T`` is smaller; both share
    their nonzero spectrum.  Stops when successive Rayleigh quotients differ
    by at most ``tol`` relative.  If the cap is hit, returns
    ``||C C^T||_F`` (an upper bound on the spectral norm) with
    ``converged=False``.
    """
    C = as_matrix(C, name="C")
    if C.size == 0:
        raise InvalidInputError(f"spectral norm of an empty matrix (shape {C.shape})")
    # A.T @ A is the smaller Gram matrix
    A = C if C.shape[1] <= C.shape[0] else C.T
    if not np.any(A):
        return GramNorm(0.0, 0, True)

    v = np.full(A.shape[1], 1.0 / np.sqrt(A.shape[1]))
    restarted = False
    prev = None
    for it in range(1, max_iter + 1):
        u = A @ v
        rayleigh = float(u @ u)
        w = A.T @ u
        w_norm = np.linalg.norm(w)
        if w_norm == 0.0:
            if restarted:
                break
            # start vector in the null space; retry from a fixed pseudo-random one
            v = np.random.default_rng(0).standard_normal(A.shape[1])
            v /= np.linalg.norm(v)
            restarted = True
            prev = None
            continue
        if prev is not None and abs(rayleigh - prev) <= tol * rayleigh:
            return GramNorm(rayleigh, it, True)
        prev = rayleigh
        v = w / w_norm

    bound = float(np.linalg.norm(A.T @ A, "fro"))
    logger.warning("power iteration did not converge in %d steps; using Frobenius bound", max_iter)
    return GramNorm(bound, max_iter, False)


def spectral_norm_gram(C, **kwargs) -> float:
    """sigma_max(C C^T) = sigma_max(C)**2.

    Emits a ``RuntimeWarning`` when power iteration falls back to the
    Frobenius bound; use :func:`power_iteration_gram` to inspect the flag.
    """
    res = power_iteration_gram(C, **kwargs)
    if not res.converged:
        warnings.warn("spectral_norm_gram fell back to the Frobenius bound", RuntimeWarning,
                      stacklevel=2)
    return res.value


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Canonical compressed-sparse-row matrix with u32 indices and f32 values."""

    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", np.ascontiguousarray(self.row_ptr, dtype="<u4"))
        object.__setattr__(self, "col_idx", np.ascontiguousarray(self.col_idx, dtype="<u4"))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype="<f4"))
        for arr in (self.row_ptr, self.col_idx, self.values):
            arr.setflags(write=False)
        self.validate()

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def validate(self) -> None:
        if not (0 <= self.rows <= U32_MAX and 0 <= self.cols <= U32_MAX):
            raise FormatError(f"shape {self.shape} exceeds u32 range")
        if self.row_ptr.shape != (self.rows + 1,):
            raise FormatError(f"row_ptr must have {self.rows + 1} entries, got {self.row_ptr.size}")
        nnz = self.values.size
        if self.col_idx.size != nnz:
            raise FormatError("col_idx and values lengths differ")
        if self.row_ptr[0] != 0 or int(self.row_ptr[-1]) != nnz:
            raise FormatError("row_ptr must start at 0 and end at nnz")
        ptr = self.row_ptr.astype(np.int64)
        if np.any(np.diff(ptr) < 0):
            raise FormatError("row_ptr is not non-decreasing")
        if nnz:
            cols = self.col_idx.astype(np.int64)
            if cols.max() >= self.cols:
                raise FormatError("column index out of range")
            # strictly increasing within a row: every step that is not a row start must increase
            step_ok = np.diff(cols) > 0
            row_starts = np.zeros(nnz, dtype=bool)
            row_starts[ptr[:-1][ptr[:-1] < nnz]] = True
            if np.any(~step_ok & ~row_starts[1:]):
                raise FormatError("column indices not strictly increasing within a row")
            if np.any(self.values == 0):
                raise FormatError("explicit zero stored in CSR values")
            if not np.all(np.isfinite(self.values)):
                raise FormatError("CSR values contain NaN or Inf")


def _check_u32(count: int, what: str) -> None:
    if count > U32_MAX:
        raise CapacityError(f"{what}={count} does not fit a 32-bit index")


def dense_to_csr(M) -> CsrMatrix:
    """Encode ``M`` (cast to float32) as canonical CSR.

    Both signed zeros are treated as zero, so ``-0.0`` decodes as ``+0.0``.
    """
    arr = as_matrix(M, dtype=STORAGE_DTYPE)
    rows, cols = arr.shape
    _check_u32(rows, "rows")
    _check_u32(cols, "cols")
    r, c = np.nonzero(arr)
    _check_u32(r.size, "nnz")
    counts = np.bincount(r, minlength=rows)
    row_ptr = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    return CsrMatrix(rows, cols, row_ptr, c, arr[r, c])


def csr_to_dense(S: CsrMatrix, dtype=STORAGE_DTYPE) -> np.ndarray:
    S.validate()
    out = np.zeros((S.rows, S.cols), dtype=dtype)
    row_of = np.repeat(np.arange(S.rows), np.diff(S.row_ptr.astype(np.int64)))
    out[row_of, S.col_idx.astype(np.int64)] = S.values
    return out
