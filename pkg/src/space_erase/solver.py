"""Proximal-gradient solvers (FISTA and plain ISTA) for the sparse objective."""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .matrix import sparsity_fraction
from .objective import ErasureObjective, _gradient, _smooth_loss, lipschitz_constant

DEFAULT_ITERATIONS = 1000
_EARLY_STOP_WINDOW = 10


class Algorithm(str, enum.Enum):
    FISTA = "fista"
    ISTA = "ista"


@dataclass(frozen=True)
class SolverConfig:
    algorithm: Algorithm = Algorithm.FISTA
    iterations: int = DEFAULT_ITERATIONS
    lam: float = 0.0
    rel_objective_tol: float | None = None
    trace_stride: int = 1
    record_trace: bool = True

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.iterations < 0:
            raise InvalidInputError("iterations must be >= 0")
        if not self.lam >= 0:
            raise InvalidInputError("lambda must be >= 0")
        if self.trace_stride < 1:
            raise InvalidInputError("trace_stride must be >= 1")
        if self.rel_objective_tol is not None and not self.rel_objective_tol > 0:
            raise InvalidInputError("rel_objective_tol must be positive")


@dataclass(frozen=True, eq=False)
class SolverState:
    W_curr: np.ndarray
    W_prev: np.ndarray
    theta: np.ndarray
    t: float
    k: int

    @classmethod
    def initial(cls, obj: ErasureObjective) -> "SolverState":
        W0 = obj.W0
        return cls(W_curr=W0, W_prev=W0, theta=W0, t=1.0, k=0)


@dataclass
class SolveTrace:
    objective_history: list[tuple[int, float]] = field(default_factory=list)
    sparsity_history: list[tuple[int, float]] = field(default_factory=list)
    lipschitz_used: float = math.nan
    step_size: float = math.nan
    wall_time: float = 0.0
    iterations_run: int = 0
    stopped_early: bool = False

    def summary(self) -> dict:
        last_obj = self.objective_history[-1][1] if self.objective_history else None
        last_sp = self.sparsity_history[-1][1] if self.sparsity_history else None
        return {
            "iterations": self.iterations_run,
            "lipschitz": self.lipschitz_used,
            "step_size": self.step_size,
            "wall_time": self.wall_time,
            "final_objective": last_obj,
            "final_sparsity": last_sp,
            "stopped_early": self.stopped_early,
        }


def shrinkage(X, alpha: float) -> np.ndarray:
    """Soft thresholding ``(|x| - alpha)_+ * sgn(x)``.

    Entries with ``|x| <= alpha`` come out as exact (+0.0) zeros.
    """
    if not alpha >= 0:
        raise InvalidInputError(f"shrinkage threshold must be >= 0, got {alpha}")
    return _shrink(np.asarray(X, dtype=np.float64), alpha)


def _shrink(X: np.ndarray, alpha: float) -> np.ndarray:
    # x - clip(x) is x -/+ alpha rounded once, and exactly +0.0 when |x| <= alpha
    return X - np.clip(X, -alpha, alpha)


def momentum_next(t: float) -> float:
    if not t >= 1:
        raise InvalidInputError("momentum t must be >= 1")
    return (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0


def _prox_grad(obj, theta, gamma, lam):
    return _shrink(theta - gamma * _gradient(obj, theta), lam * gamma)


def _check_step(obj: ErasureObjective, state: SolverState, gamma: float, lam: float) -> None:
    if not gamma > 0:
        raise InvalidInputError("step size must be positive")
    if not lam >= 0:
        raise InvalidInputError("lambda must be >= 0")
    for name in ("W_curr", "W_prev", "theta"):
        if getattr(state, name).shape != obj.shape:
            raise InvalidInputError(f"state.{name} shape does not match W0 {obj.shape}")


def fista_step(obj: ErasureObjective, state: SolverState, gamma: float, lam: float) -> SolverState:
    """One accelerated proximal-gradient iteration.

    The returned state holds ``W_curr = W^(k)``, ``W_prev = W^(k-1)``,
    ``theta = theta^(k+1)`` and ``t = t_k`` (so ``t`` starts at ``t_0 = 1``).
    """
    _check_step(obj, state, gamma, lam)
    W_new = _prox_grad(obj, state.theta, gamma, lam)
    t_next = momentum_next(state.t)
    theta = W_new + ((state.t - 1.0) / t_next) * (W_new - state.W_curr)
    return SolverState(W_curr=W_new, W_prev=state.W_curr, theta=theta, t=t_next, k=state.k + 1)


def ista_step(obj: ErasureObjective, state: SolverState, gamma: float, lam: float) -> SolverState:
    _check_step(obj, state, gamma, lam)
    W_new = _prox_grad(obj, state.theta, gamma, lam)
    return SolverState(W_curr=W_new, W_prev=state.W_curr, theta=W_new, t=state.t, k=state.k + 1)


_STEPS = {Algorithm.FISTA: fista_step, Algorithm.ISTA: ista_step}


def solve(obj: ErasureObjective, cfg: SolverConfig | None = None, **overrides):
    """Run ``cfg.iterations`` proximal-gradient steps from ``W0``.

    Returns ``(W, trace)`` where ``W`` is the last shrinkage output, so its
    zeros are exact.  Keyword overrides are forwarded to ``SolverConfig``.
    """
    if cfg is None:
        cfg = SolverConfig(**overrides)
    elif overrides:
        cfg = SolverConfig(**{**cfg.__dict__, **overrides})
    start = time.perf_counter()
    L = lipschitz_constant(obj)
    gamma = 1.0 / L
    trace = SolveTrace(lipschitz_used=L, step_size=gamma)
    step = _STEPS[cfg.algorithm]
    lam = cfg.lam

    state = SolverState.initial(obj)
    window: list[float] = []
    for k in range(1, cfg.iterations + 1):
        state = step(obj, state, gamma, lam)
        need_obj = cfg.rel_objective_tol is not None
        record = cfg.record_trace and (k % cfg.trace_stride == 0 or k == cfg.iterations)
        if record or need_obj:
            J = _smooth_loss(obj, state.W_curr) + lam * float(np.abs(state.W_curr).sum())
            if record:
                trace.objective_history.append((k, J))
                trace.sparsity_history.append((k, sparsity_fraction(state.W_curr)))
            if need_obj:
                window.append(J)
                if len(window) > _EARLY_STOP_WINDOW:
                    old = window.pop(0)
                    if abs(old - J) <= cfg.rel_objective_tol * max(abs(J), np.finfo(float).tiny):
                        trace.stopped_early = True
                        if cfg.record_trace and not record:
                            trace.objective_history.append((k, J))
                            trace.sparsity_history.append((k, sparsity_fraction(state.W_curr)))
                        break
    trace.iterations_run = state.k
    trace.wall_time = time.perf_counter() - start
    return state.W_curr, trace


def optimality_residual(obj: ErasureObjective, W, lam: float) -> float:
    """Largest violation of ``0 in grad L(W) + lam * d||W||_1``."""
    W = obj.check_shape(W)
    if not lam >= 0:
        raise InvalidInputError("lambda must be >= 0")
    g = _gradient(obj, W)
    nz = W != 0
    res = np.where(nz, np.abs(g + lam * np.sign(W)), np.maximum(np.abs(g) - lam, 0.0))
    return float(res.max()) if res.size else 0.0


def iterations_to_tolerance(history, target: float, rel_tol: float) -> int | None:
    """First ``k`` in an objective history with ``J - target <= rel_tol * target``."""
    bound = rel_tol * abs(target)
    for k, J in history:
        if J - target <= bound:
            return k
    return None


__all__ = [
    "Algorithm", "SolverConfig", "SolverState", "SolveTrace", "shrinkage", "momentum_next",
    "fista_step", "ista_step", "solve", "optimality_residual", "iterations_to_tolerance",
]
