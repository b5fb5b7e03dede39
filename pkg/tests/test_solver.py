import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from space_erase.errors import InvalidInputError
from space_erase.matrix import sparsity_fraction
from space_erase.objective import (
    ConceptMatrices,
    ErasureObjective,
    closed_form_uce,
    gradient,
    lipschitz_constant,
    total_objective,
    zero_solution_threshold,
)
from space_erase.solver import (
    Algorithm,
    SolverConfig,
    SolverState,
    fista_step,
    ista_step,
    iterations_to_tolerance,
    momentum_next,
    optimality_residual,
    shrinkage,
    solve,
)

from oracles import scalar_fista


class TestShrinkage:
    def test_identity_at_zero_threshold(self, rng):
        X = rng.standard_normal((4, 5))
        assert np.array_equal(shrinkage(X, 0.0), X)

    def test_scalar_examples(self):
        assert shrinkage(np.array([[2.0]]), 0.5)[0, 0] == 1.5
        out = shrinkage(np.array([[-0.4]]), 1.0)[0, 0]
        assert out == 0.0 and not math.copysign(1.0, out) < 0

    def test_boundary_is_exact_zero(self):
        out = shrinkage(np.array([[1.0, -1.0]]), 1.0)
        assert np.array_equal(out.view(np.uint64), np.zeros((1, 2), np.uint64))

    def test_negative_threshold(self):
        with pytest.raises(InvalidInputError):
            shrinkage(np.ones((2, 2)), -0.1)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-1e3, 1e3, allow_nan=False)),
           st.floats(0, 1e3, allow_nan=False))
    def test_elementwise_oracle(self, X, alpha):
        out = shrinkage(X, alpha)
        assert out.shape == X.shape
        for x, y in zip(X.ravel(), out.ravel()):
            assert abs(y) <= abs(x)
            if abs(x) <= alpha:
                assert y == 0.0
            else:
                assert np.sign(y) == np.sign(x)
                assert y == pytest.approx(x - math.copysign(alpha, x), abs=1e-12 * max(1, abs(x)))


class TestMomentum:
    def test_values(self):
        t1 = momentum_next(1.0)
        assert t1 == pytest.approx((1 + math.sqrt(5)) / 2, abs=1e-10)
        # (1 + sqrt(1 + 4 * phi**2)) / 2 with phi**2 = phi + 1
        assert momentum_next(t1) == pytest.approx((1 + math.sqrt(5 + 2 * math.sqrt(5) + 2)) / 2, rel=1e-14)
        assert momentum_next(t1) == pytest.approx(2.19353, abs=1e-5)

    def test_growth_bound(self):
        t = 1.0
        for k in range(51):
            assert t >= (k + 2) / 2 - 1e-12 or k == 0
            t_next = momentum_next(t)
            assert t_next > t
            t = t_next

    def test_rejects_small_t(self):
        with pytest.raises(InvalidInputError):
            momentum_next(0.5)


def _fixed_point_objective(rng):
    C = rng.standard_normal((5, 2))
    return ErasureObjective(rng.standard_normal((4, 5)), ConceptMatrices(C, C, rng.standard_normal((5, 1))))


class TestSteps:
    @pytest.mark.parametrize("step", [fista_step, ista_step])
    def test_fixed_point(self, rng, step):
        obj = _fixed_point_objective(rng)
        state = SolverState.initial(obj)
        new = step(obj, state, 1.0 / lipschitz_constant(obj), 0.0)
        assert np.array_equal(new.W_curr, obj.W0)
        assert np.array_equal(new.theta, obj.W0)
        assert new.k == 1

    def test_first_step_is_plain_proximal_step(self, make_objective, rng):
        obj = make_objective(rng, 4, 5, 2, 1)
        gamma, lam = 1.0 / lipschitz_constant(obj), 0.05
        state = SolverState.initial(obj)
        f, i = fista_step(obj, state, gamma, lam), ista_step(obj, state, gamma, lam)
        expected = shrinkage(obj.W0 - gamma * gradient(obj, obj.W0), lam * gamma)
        assert np.array_equal(f.W_curr, expected)
        assert np.array_equal(i.W_curr, expected)
        # zero momentum on the first extrapolation
        assert np.array_equal(f.theta, f.W_curr)

    def test_matches_scalar_pseudocode(self, make_objective, rng):
        obj = make_objective(rng, 4, 5, 2, 2)
        L, lam = lipschitz_constant(obj), 0.1
        state = SolverState.initial(obj)
        for _ in range(10):
            state = fista_step(obj, state, 1.0 / L, lam)
        ref = scalar_fista(obj.W0.tolist(), lambda X: gradient(obj, X), L, lam, 10)
        np.testing.assert_allclose(state.W_curr, ref, rtol=0, atol=1e-12)

    def test_bad_step(self, make_objective, rng):
        obj = make_objective(rng, 3, 4, 1, 1)
        with pytest.raises(InvalidInputError):
            fista_step(obj, SolverState.initial(obj), 0.0, 0.1)
        with pytest.raises(InvalidInputError):
            ista_step(obj, SolverState.initial(obj), 0.1, -1.0)


class TestSolve:
    def test_zero_iterations(self, make_objective, rng):
        obj = make_objective(rng, 3, 4, 1, 1)
        W, trace = solve(obj, iterations=0, lam=0.5)
        assert np.array_equal(W, obj.W0)
        assert trace.objective_history == [] and trace.sparsity_history == []

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            SolverConfig(iterations=-1)
        with pytest.raises(InvalidInputError):
            SolverConfig(lam=-0.1)
        with pytest.raises(InvalidInputError):
            SolverConfig(trace_stride=0)
        assert SolverConfig(algorithm="ista").algorithm is Algorithm.ISTA

    def test_lambda_zero_reaches_closed_form(self, make_objective, rng):
        obj = make_objective(rng, 64, 96, 3, 6)
        W, _ = solve(obj, iterations=5000, lam=0.0, record_trace=False)
        U = closed_form_uce(obj)
        assert np.linalg.norm(W - U) / np.linalg.norm(U) <= 1e-6

    def test_above_threshold_gives_zero(self, make_objective, rng):
        obj = make_objective(rng, 8, 12, 2, 2)
        thr = zero_solution_threshold(obj)
        W, trace = solve(obj, iterations=2000, lam=1.01 * thr)
        assert np.linalg.norm(W) <= 1e-8 * np.linalg.norm(obj.W0)
        assert optimality_residual(obj, W, 1.01 * thr) == 0.0
        assert trace.sparsity_history[-1] == (2000, 1.0)

    def test_trace(self, make_objective, rng):
        obj = make_objective(rng, 5, 6, 1, 2)
        W, trace = solve(obj, iterations=25, lam=0.05, trace_stride=10)
        assert [k for k, _ in trace.objective_history] == [10, 20, 25]
        assert [k for k, _ in trace.sparsity_history] == [10, 20, 25]
        assert trace.objective_history[-1][1] == total_objective(obj, W, 0.05)
        assert trace.sparsity_history[-1][1] == sparsity_fraction(W)
        assert trace.step_size == pytest.approx(1.0 / trace.lipschitz_used)
        assert trace.lipschitz_used == lipschitz_constant(obj)
        assert trace.wall_time > 0 and trace.iterations_run == 25

    def test_early_stopping(self, make_objective, rng):
        obj = make_objective(rng, 5, 6, 1, 2)
        W, trace = solve(obj, iterations=100000, lam=0.05, rel_objective_tol=1e-12)
        assert trace.stopped_early
        assert trace.iterations_run < 100000
        assert trace.objective_history[-1][0] == trace.iterations_run

    def test_deterministic(self, make_objective, rng):
        obj = make_objective(rng, 6, 8, 2, 2)
        W1, t1 = solve(obj, iterations=300, lam=0.1)
        W2, t2 = solve(obj, iterations=300, lam=0.1)
        assert np.array_equal(W1.view(np.uint64), W2.view(np.uint64))
        assert t1.objective_history == t2.objective_history
        assert t1.sparsity_history == t2.sparsity_history

    def test_zeros_are_exact(self, make_objective, rng):
        obj = make_objective(rng, 10, 12, 2, 2)
        W, _ = solve(obj, iterations=500, lam=0.3 * zero_solution_threshold(obj))
        zeros = W == 0
        assert zeros.any()
        assert np.all(W[zeros].view(np.uint64) == 0)

    @pytest.mark.parametrize("algo", ["fista", "ista"])
    def test_never_worse_than_start(self, make_objective, rng, algo):
        for _ in range(5):
            obj = make_objective(rng, 6, 9, 2, 3)
            lam = rng.uniform(0, 0.5) * zero_solution_threshold(obj)
            W, _ = solve(obj, iterations=60, lam=lam, algorithm=algo)
            assert total_objective(obj, W, lam) <= total_objective(obj, obj.W0, lam) + 1e-9

    def test_ista_and_fista_share_the_limit(self, make_objective, rng):
        obj = make_objective(rng, 6, 8, 2, 2)
        lam = 0.2 * zero_solution_threshold(obj)
        Wf, _ = solve(obj, iterations=3000, lam=lam, record_trace=False)
        Wi, _ = solve(obj, iterations=20000, lam=lam, algorithm="ista", record_trace=False)
        Jf, Ji = total_objective(obj, Wf, lam), total_objective(obj, Wi, lam)
        assert abs(Jf - Ji) <= 1e-8 * Jf


class TestOptimalityResidual:
    def test_closed_form_at_zero_lambda(self, make_objective, rng):
        obj = make_objective(rng, 5, 7, 2, 2)
        W = closed_form_uce(obj)
        assert optimality_residual(obj, W, 0.0) <= 1e-9 * np.abs(gradient(obj, obj.W0)).max()

    def test_zero_matrix_above_threshold(self, make_objective, rng):
        obj = make_objective(rng, 5, 7, 2, 2)
        thr = zero_solution_threshold(obj)
        assert optimality_residual(obj, np.zeros(obj.shape), thr) == 0.0
        assert optimality_residual(obj, np.zeros(obj.shape), 0.5 * thr) > 0.0

    def test_solver_drives_residual_down(self, make_objective, rng):
        for _ in range(3):
            obj = make_objective(rng, 8, 10, 2, 3)
            lam = 0.3 * zero_solution_threshold(obj)
            start = optimality_residual(obj, obj.W0, lam)
            W, _ = solve(obj, iterations=5000, lam=lam, record_trace=False)
            assert optimality_residual(obj, W, lam) <= 1e-6 * start


def test_iterations_to_tolerance():
    hist = [(1, 10.0), (2, 5.0), (3, 1.0000001), (4, 1.0)]
    assert iterations_to_tolerance(hist, 1.0, 1e-6) == 3
    assert iterations_to_tolerance(hist, 0.5, 1e-6) is None
