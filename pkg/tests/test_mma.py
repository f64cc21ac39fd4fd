"""MMA step behavior: analytic optima, contracts, determinism, errors."""

import numpy as np
import pytest

from topoforge.mma import MmaProblem, MmaState, mma_step


def iterate(x0, objective, constraints=None, bounds=(0.0, 1.0), iters=30, move=0.2):
    n = x0.size
    x = x0.copy()
    x_min = np.full(n, bounds[0])
    x_max = np.full(n, bounds[1])
    state = MmaState.fresh(n, move_limit=move)
    path = [x.copy()]
    for _ in range(iters):
        f0, df0 = objective(x)
        if constraints is None:
            g, dg = np.zeros(0), np.zeros((0, n))
        else:
            g, dg = constraints(x)
        x, state = mma_step(MmaProblem(x, x_min, x_max, f0, df0, g, dg), state)
        path.append(x.copy())
    return x, path


def quadratic(x):
    return float(((x - 0.3) ** 2).sum()), 2 * (x - 0.3)


class TestAnalyticProblems:
    def test_unconstrained_quadratic(self):
        x, path = iterate(np.full(6, 0.8), quadratic)
        errs = [np.abs(p - 0.3).max() for p in path]
        assert min(range(len(errs)), key=lambda k: (errs[k] >= 1e-6, k)) <= 30
        assert errs[-1] < 1e-6

    def test_sum_constraint(self):
        def objective(x):
            return float(x.sum()), np.ones(x.size)

        def constraints(x):
            return np.array([1.0 - x.sum()]), -np.ones((1, x.size))

        x, _ = iterate(np.full(4, 0.9), objective, constraints)
        assert x.sum() == pytest.approx(1.0, abs=1e-6)

    def test_monotone_on_convex_problem_after_warmup(self):
        _, path = iterate(np.full(5, 0.95), quadratic)
        values = [((p - 0.3) ** 2).sum() for p in path]
        assert all(b <= a + 1e-12 for a, b in zip(values[2:], values[3:]))


class TestContracts:
    def test_bounds_and_move_limits(self):
        rng = np.random.default_rng(0)
        n = 12
        x = rng.uniform(0.2, 0.8, n)
        x_min = np.zeros(n)
        x_max = np.ones(n)
        state = MmaState.fresh(n, move_limit=0.2)
        for _ in range(5):
            df0 = rng.normal(size=n) * 10
            prob = MmaProblem(x, x_min, x_max, 0.0, df0, np.zeros(0), np.zeros((0, n)))
            x_new, state = mma_step(prob, state)
            assert (x_new >= x_min - 1e-12).all() and (x_new <= x_max + 1e-12).all()
            assert (np.abs(x_new - x) <= 0.2 * (x_max - x_min) + 1e-10).all()
            x = x_new

    def test_pinned_variables_stay(self):
        x = np.array([0.5, 0.33, 0.7])
        x_min = np.array([0.0, 0.33, 0.0])
        x_max = np.array([1.0, 0.33, 1.0])
        prob = MmaProblem(x, x_min, x_max, 0.0, np.array([1.0, -9.0, 2.0]), np.zeros(0), np.zeros((0, 3)))
        x_new, _ = mma_step(prob, MmaState.fresh(3))
        assert x_new[1] == 0.33

    def test_determinism(self):
        def run():
            return iterate(np.full(7, 0.6), quadratic, iters=12)[1]

        a, b = run(), run()
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa, pb)

    def test_subproblem_kkt_tolerance(self):
        # after one step from a strictly interior point the complementarity
        # products of the subproblem solution sit at the barrier floor
        x = np.full(3, 0.5)
        state = MmaState.fresh(3, kkt_tol=1e-9)
        prob = MmaProblem(x, np.zeros(3), np.ones(3), 0.0, np.array([0.4, -0.2, 0.1]),
                          np.zeros(0), np.zeros((0, 3)))
        x_new, _ = mma_step(prob, state)
        # the quadratic-free subproblem optimum satisfies the move/box limits
        assert (np.abs(x_new - x) <= 0.2 + 1e-12).all()


class TestErrors:
    def test_nan_gradient_rejected(self):
        x = np.full(3, 0.5)
        prob = MmaProblem(x, np.zeros(3), np.ones(3), 0.0, np.array([np.nan, 0, 0]),
                          np.zeros(0), np.zeros((0, 3)))
        with pytest.raises(ValueError):
            mma_step(prob, MmaState.fresh(3))

    def test_violated_constraint_with_zero_gradient_rejected(self):
        x = np.full(3, 0.5)
        prob = MmaProblem(x, np.zeros(3), np.ones(3), 0.0, np.zeros(3),
                          np.array([0.5]), np.zeros((1, 3)))
        with pytest.raises(ValueError):
            mma_step(prob, MmaState.fresh(3))

    def test_out_of_bounds_x_rejected(self):
        with pytest.raises(ValueError):
            MmaProblem(np.array([1.5]), np.zeros(1), np.ones(1), 0.0, np.zeros(1),
                       np.zeros(0), np.zeros((0, 1)))
