"""The concept-erasure loss on a single projection matrix.

For original weights ``W0`` (n x m) and concept embeddings stored column-wise
(``C_e``, ``C_g``: m x n_E, ``C_p``: m x n_P) the smooth loss is::

    L(W) = s*||W C_e - W0 C_g||^2 + l1*||W C_p - W0 C_p||^2 + l2*||W - W0||^2

with ``s`` the erase scale (1 by default).  Adding ``lam * sum|w_ij|`` gives
the sparse objective minimized by :mod:`space_erase.solver`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import IllConditionedError, InvalidInputError
from .matrix import as_matrix, entrywise_l1_norm, spectral_norm_gram

MAX_CONDITION = 1e14


def _columns(C, m: int | None, name: str) -> np.ndarray:
    if C is None:
        if m is None:
            raise InvalidInputError(f"{name} is missing and m is unknown")
        return np.zeros((m, 0))
    arr = np.asarray(C, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 0:
        return arr
    return as_matrix(arr, name=name)


@dataclass(frozen=True, eq=False)
class ConceptMatrices:
    """Erase, guide and preserve embeddings, one concept per column."""

    C_e: np.ndarray
    C_g: np.ndarray
    C_p: np.ndarray

    def __post_init__(self):
        C_e = _columns(self.C_e, None, "C_e")
        m = C_e.shape[0]
        C_g = _columns(self.C_g, m, "C_g")
        C_p = _columns(self.C_p, m, "C_p")
        if C_e.shape != C_g.shape:
            raise InvalidInputError(f"C_e {C_e.shape} and C_g {C_g.shape} must match")
        if C_p.shape[0] != m:
            raise InvalidInputError(f"C_p has {C_p.shape[0]} rows, expected {m}")
        for name, arr in (("C_e", C_e), ("C_g", C_g), ("C_p", C_p)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, m: int) -> "ConceptMatrices":
        z = np.zeros((m, 0))
        return cls(z, z, z)

    @property
    def m(self) -> int:
        return self.C_e.shape[0]

    @property
    def n_erase(self) -> int:
        return self.C_e.shape[1]

    @property
    def n_preserve(self) -> int:
        return self.C_p.shape[1]


@dataclass(frozen=True, eq=False)
class ErasureObjective:
    """One layer's problem instance.

    ``require_anchor=False`` admits ``lambda2 == 0``; the closed form is then
    only defined when the concept Gram matrix itself is invertible.
    """

    W0: np.ndarray
    concepts: ConceptMatrices
    lambda1: float = 1.0
    lambda2: float = 1.0
    erase_scale: float = 1.0
    require_anchor: bool = field(default=True, repr=False)

    def __post_init__(self):
        W0 = as_matrix(self.W0, name="W0").copy()
        W0.setflags(write=False)
        object.__setattr__(self, "W0", W0)
        if W0.shape[1] != self.concepts.m:
            raise InvalidInputError(
                f"W0 has {W0.shape[1]} columns but concepts have dimension {self.concepts.m}")
        if not self.lambda1 >= 0:
            raise InvalidInputError("lambda1 must be non-negative")
        if self.require_anchor and not self.lambda2 > 0:
            raise InvalidInputError("lambda2 must be positive")
        if not self.lambda2 >= 0:
            raise InvalidInputError("lambda2 must be non-negative")
        if not self.erase_scale > 0:
            raise InvalidInputError("erase_scale must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.W0.shape

    # Targets are fixed from the original weights and never recomputed.
    @cached_property
    def erase_target(self) -> np.ndarray:
        return self.W0 @ self.concepts.C_g

    @cached_property
    def preserve_target(self) -> np.ndarray:
        return self.W0 @ self.concepts.C_p

    @cached_property
    def _stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Erase and preserve columns side by side with their targets and weights.

        Both data terms share the form ``w * ||W c - t||^2`` so one product
        ``W @ C`` serves the loss and the gradient.
        """
        c = self.concepts
        keep = self.lambda1 > 0 and c.n_preserve > 0
        C = np.hstack([c.C_e, c.C_p]) if keep else c.C_e
        G = np.hstack([c.C_g, c.C_p]) if keep else c.C_g
        # same product shape as W @ C, so the residual is exactly 0 when W = W0 and C_g = C_e
        T = self.W0 @ np.ascontiguousarray(G)
        w = np.concatenate([np.full(c.n_erase, float(self.erase_scale)),
                            np.full(c.n_preserve if keep else 0, float(self.lambda1))])
        return np.ascontiguousarray(C), np.ascontiguousarray(T), w

    def check_shape(self, W) -> np.ndarray:
        W = as_matrix(W, name="W")
        if W.shape != self.W0.shape:
            raise InvalidInputError(f"W has shape {W.shape}, expected {self.W0.shape}")
        return W


def smooth_loss(obj: ErasureObjective, W) -> float:
    return _smooth_loss(obj, obj.check_shape(W))


def _smooth_loss(obj: ErasureObjective, W: np.ndarray) -> float:
    C, T, w = obj._stacked
    R = W @ C - T
    D = W - obj.W0
    return float(np.einsum("ij,ij,j->", R, R, w) + obj.lambda2 * np.einsum("ij,ij->", D, D))


def total_objective(obj: ErasureObjective, W, lam: float) -> float:
    if not lam >= 0:
        raise InvalidInputError("lambda must be non-negative")
    return smooth_loss(obj, W) + lam * entrywise_l1_norm(W)


def gradient(obj: ErasureObjective, W) -> np.ndarray:
    W = obj.check_shape(W)
    return _gradient(obj, W)


def _gradient(obj: ErasureObjective, W: np.ndarray) -> np.ndarray:
    # unchecked variant for the solver's inner loop
    C, T, w = obj._stacked
    g = W - obj.W0
    g *= 2.0 * obj.lambda2
    if C.shape[1]:
        R = W @ C
        R -= T
        R *= 2.0 * w
        g += R @ C.T
    return g


def _gram_terms(obj: ErasureObjective) -> tuple[np.ndarray, np.ndarray]:
    c = obj.concepts
    m = c.m
    keep = obj.lambda1 * (c.C_p @ c.C_p.T) + obj.lambda2 * np.eye(m)
    lhs = obj.erase_scale * (c.C_e @ c.C_e.T) + keep
    rhs = obj.erase_scale * (c.C_g @ c.C_e.T) + keep
    return rhs, lhs


def closed_form_uce(obj: ErasureObjective) -> np.ndarray:
    """Unique minimizer of :func:`smooth_loss` (dense one-shot edit).

    Returns ``W0 @ R @ inv(G)`` where ``R`` and ``G`` are the guide/target
    and target/target Gram systems, solved without forming the inverse.
    """
    rhs, lhs = _gram_terms(obj)
    cond = np.linalg.cond(lhs)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedError(f"closed-form system condition number {cond:.3e} exceeds "
                                  f"{MAX_CONDITION:.0e}")
    # W lhs = W0 rhs  <=>  lhs W^T = (W0 rhs)^T since lhs is symmetric
    Wt = scipy.linalg.solve(lhs, (obj.W0 @ rhs).T, assume_a="sym")
    return np.ascontiguousarray(Wt.T)


def _gram_spectral(C: np.ndarray) -> float:
    return spectral_norm_gram(C) if C.shape[1] else 0.0


def lipschitz_constant(obj: ErasureObjective) -> float:
    """Gradient Lipschitz constant from the spectral norms of the concept Grams."""
    c = obj.concepts
    return 2.0 * (obj.erase_scale * _gram_spectral(c.C_e)
                  + obj.lambda1 * _gram_spectral(c.C_p)
                  + obj.lambda2)


def frobenius_lipschitz_constant(obj: ErasureObjective) -> float:
    """Looser Lipschitz constant with Frobenius norms in place of spectral ones.

    Each Gram term is bounded separately, so this never undercuts
    :func:`lipschitz_constant`.
    """
    c = obj.concepts
    return 2.0 * (obj.erase_scale * np.linalg.norm(c.C_e.T @ c.C_e)
                  + obj.lambda1 * np.linalg.norm(c.C_p.T @ c.C_p)
                  + obj.lambda2 * np.sqrt(c.m))


def zero_solution_threshold(obj: ErasureObjective) -> float:
    """Smallest L1 weight for which the all-zero matrix is optimal."""
    g0 = _gradient(obj, np.zeros(obj.shape))
    return float(np.abs(g0).max()) if g0.size else 0.0
