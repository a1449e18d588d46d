import itertools
import unittest

import numpy as np
import scipy.linalg
import scipy.optimize

import sagfree.banded as bd
import sagfree.bcqp as qp
import sagfree.strands as st
from sagfree.banded import ActiveSet, BandedSym
from sagfree.exceptions import ConfigError, DimensionMismatchError, NotSpdError
from sagfree.optimizer import AlmOptions, newton_problem


def random_problem(rng, n, bounded=True):
    """Banded, diagonally dominant QP with mixed finite and infinite bounds."""

    hbw = int(rng.integers(0, n))
    bands = np.zeros((hbw + 1, n))
    for k in range(1, hbw + 1):
        bands[k, : n - k] = rng.uniform(-1.0, 1.0, n - k)
    off = np.zeros(n)
    for k in range(1, hbw + 1):
        off[: n - k] += np.abs(bands[k, : n - k])
        off[k:] += np.abs(bands[k, : n - k])
    bands[0] = off + rng.uniform(0.1, 2.0, n)
    A = BandedSym(bands)
    b = 3.0 * rng.standard_normal(n)
    if not bounded:
        return qp.BcqpProblem(A, b)
    lo = rng.uniform(-1.0, 0.5, n)
    hi = lo + rng.uniform(0.1, 2.0, n)
    lo[rng.random(n) < 0.2] = -np.inf
    hi[rng.random(n) < 0.2] = np.inf
    return qp.BcqpProblem(A, b, lo, hi)


def enumeration_oracle(problem):
    """Minimizer over all 3^n patterns of lower, free and upper DOFs."""

    A = problem.A.to_dense()
    b, lo, hi = problem.b, problem.lo, problem.hi
    best, best_value = None, np.inf
    for pattern in itertools.product((-1, 0, 1), repeat=problem.n):
        pattern = np.array(pattern)
        fixed = np.where(pattern < 0, lo, np.where(pattern > 0, hi, 0.0))
        if not np.all(np.isfinite(fixed[pattern != 0])):
            continue
        x = np.where(pattern != 0, fixed, 0.0)
        free = pattern == 0
        if free.any():
            rhs = b[free] - A[np.ix_(free, ~free)] @ x[~free]
            x[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            continue
        value = 0.5 * x @ A @ x - b @ x
        if value < best_value:
            best, best_value = x, value
    return best


def least_squares_oracle(problem):
    """Minimizer as a bounded least-squares problem ``|R x - R^-T b|``."""

    A = problem.A.to_dense()
    R = scipy.linalg.cholesky(A)
    target = scipy.linalg.solve_triangular(R, problem.b, trans="T")
    res = scipy.optimize.lsq_linear(
        R, target, bounds=(problem.lo, problem.hi), method="bvls"
    )
    return res.x


def feasible(problem, x):
    return bool(np.all(x >= problem.lo) and np.all(x <= problem.hi))


def kkt_residual(problem, x):
    free, chopped = qp.projected_gradient_parts(
        problem.A, problem.b, x, problem.lo, problem.hi
    )
    return np.linalg.norm(free + chopped)


class TestBcqpProblem(unittest.TestCase):
    def test_defaults(self):
        problem = qp.BcqpProblem(BandedSym([[2.0, 2.0]]), [1.0, 1.0])
        np.testing.assert_array_equal(problem.lo, -np.inf)
        np.testing.assert_array_equal(problem.hi, np.inf)
        np.testing.assert_array_equal(problem.x0, 0.0)
        self.assertEqual(problem.objective([1.0, 0.0]), 0.0)
        np.testing.assert_array_equal(problem.gradient([1.0, 0.0]), [1, -1])

    def test_start_projected(self):
        problem = qp.BcqpProblem(
            BandedSym([[1.0, 1.0]]), [0, 0], [0, 0], [1, 1], x0=[2.0, -1.0]
        )
        np.testing.assert_array_equal(problem.x0, [1.0, 0.0])

    def test_invalid(self):
        A = BandedSym([[1.0, 1.0]])
        with self.assertRaises(DimensionMismatchError) as cm:
            qp.BcqpProblem(A, [1.0])
        self.assertEqual(
            str(cm.exception),
            "Expected a right-hand side of length 2, got length 1.",
        )
        with self.assertRaises(ValueError) as cm:
            qp.BcqpProblem(A, [1.0, 1.0], [0.0, 1.0], [1.0, 0.0])
        self.assertEqual(
            str(cm.exception), "Lower bounds exceed upper bounds."
        )


class TestOptions(unittest.TestCase):
    def test_invalid(self):
        with self.assertRaises(ConfigError) as cm:
            qp.BcqpOptions(tol_abs=0.0)
        self.assertEqual(str(cm.exception), "Tolerances must be positive.")
        with self.assertRaises(ConfigError) as cm:
            qp.BcqpOptions(abar=-1.0)
        self.assertEqual(
            str(cm.exception), "The expansion step length must be positive."
        )
        with self.assertRaises(ConfigError) as cm:
            qp.BcqpOptions(preconditioner="ic")
        self.assertEqual(
            str(cm.exception),
            "Unknown preconditioner `ic`. Available: asc, diagonal, jacobi, "
            "none, ssor.",
        )


class TestProjectedGradientParts(unittest.TestCase):
    def setUp(self):
        self.A = BandedSym([[2.0, 2.0], [-1.0, 0.0]])

    def test_unconstrained(self):
        free, chopped = qp.projected_gradient_parts(
            self.A, [1.0, 1.0], [0.5, 0.5], [-1, -1], [1, 1]
        )
        np.testing.assert_array_equal(free, [-0.5, -0.5])
        np.testing.assert_array_equal(chopped, 0.0)

    def test_hand_case(self):
        # g = A x - b = (2, -1) at x = (1, 0) with b = 0
        lo, hi = np.array([0.0, 0.0]), np.array([1.0, 1.0])
        free, chopped = qp.projected_gradient_parts(
            self.A, [0.0, 0.0], [1.0, 0.0], lo, hi
        )
        np.testing.assert_array_equal(free, [0.0, 0.0])
        np.testing.assert_array_equal(chopped, [2.0, -1.0])
        # satisfied bounds leave nothing
        free, chopped = qp.projected_gradient_parts(
            self.A, [-2.0, 3.0], [0.0, 1.0], lo, hi
        )
        np.testing.assert_array_equal(free, [0.0, 0.0])
        np.testing.assert_array_equal(chopped, [0.0, 0.0])

    def test_fixed_dof(self):
        free, chopped = qp.projected_gradient_parts(
            self.A, [5.0, 0.0], [0.0, 0.0], [0.0, -1.0], [0.0, 1.0]
        )
        np.testing.assert_array_equal(free, [0.0, 0.0])
        np.testing.assert_array_equal(chopped, [0.0, 0.0])


class TestMprgp(unittest.TestCase):
    def test_identity(self):
        problem = qp.BcqpProblem(BandedSym([[1.0, 1.0, 1.0]]), [1, -2, 3])
        for name in ("none", "diagonal", "asc"):
            result = qp.mprgp(problem, qp.BcqpOptions(preconditioner=name))
            np.testing.assert_allclose(result.x, [1, -2, 3])
            self.assertEqual(result.iterations, 1)
            self.assertTrue(result.converged)

    def test_one_dimensional(self):
        problem = qp.BcqpProblem(BandedSym([[2.0]]), [2.0], [0.0], [0.5])
        result = qp.mprgp(problem)
        self.assertEqual(result.x[0], 0.5)
        self.assertEqual(result.final_active.flags.tolist(), [1])

    def test_enumeration_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            problem = random_problem(rng, int(rng.integers(1, 7)))
            expected = enumeration_oracle(problem)
            for name in ("asc", "diagonal"):
                result = qp.mprgp(
                    problem, qp.BcqpOptions(preconditioner=name)
                )
                self.assertTrue(result.converged)
                np.testing.assert_allclose(result.x, expected, atol=1e-8)

    def test_random_problems(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            problem = random_problem(rng, int(rng.integers(1, 13)))
            result = qp.mprgp(problem)
            self.assertTrue(result.converged)
            x = result.x
            self.assertTrue(feasible(problem, x))
            tol = max(1e-10, 1e-10 * np.linalg.norm(problem.b))
            self.assertLessEqual(kkt_residual(problem, x), tol * (1 + 1e-9))
            np.testing.assert_allclose(
                x, least_squares_oracle(problem), atol=1e-8
            )

    def test_fixed_dofs(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            problem = random_problem(rng, 6)
            lo, hi = problem.lo.copy(), problem.hi.copy()
            k = int(rng.integers(0, 6))
            lo[k] = hi[k] = 0.25
            fixed = qp.BcqpProblem(problem.A, problem.b, lo, hi)
            result = qp.mprgp(fixed)
            self.assertTrue(result.converged)
            self.assertEqual(result.x[k], 0.25)
            np.testing.assert_allclose(
                result.x, enumeration_oracle(fixed), atol=1e-8
            )

    def test_asc_one_iteration_without_bounds(self):
        rng = np.random.default_rng(3)
        for n in (1, 5, 40, 200):
            problem = random_problem(rng, n, bounded=False)
            result = qp.mprgp(problem, qp.BcqpOptions(preconditioner="asc"))
            self.assertEqual(result.iterations, 1)
            residual = np.linalg.norm(problem.gradient(result.x))
            self.assertLessEqual(residual, 1e-10 * np.linalg.norm(problem.b))

    def test_feasible_and_monotone(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            problem = random_problem(rng, 12)
            values = [problem.objective(problem.x0)]

            def check(x):
                self.assertTrue(feasible(problem, x))
                values.append(problem.objective(x))

            for name in qp.get_preconditioner_names():
                values[1:] = []
                qp.mprgp(problem, qp.BcqpOptions(preconditioner=name), check)
                diffs = np.diff(values)
                slack = 1e-12 * max(1.0, np.abs(values).max())
                self.assertTrue(np.all(diffs <= slack), name)

    def test_warm_start(self):
        rng = np.random.default_rng(5)
        problem = random_problem(rng, 10)
        x = qp.mprgp(problem).x
        warm = qp.BcqpProblem(
            problem.A, problem.b, problem.lo, problem.hi, x0=x
        )
        self.assertEqual(qp.mprgp(warm).iterations, 0)

    def test_history(self):
        rng = np.random.default_rng(6)
        result = qp.mprgp(random_problem(rng, 10))
        self.assertEqual(len(result.residual_history), result.iterations + 1)
        iters = [row[0] for row in result.residual_history]
        self.assertEqual(iters, list(range(result.iterations + 1)))
        wall = [row[1] for row in result.residual_history]
        self.assertEqual(wall, sorted(wall))
        self.assertEqual(sum(result.steps.values()), result.iterations)

    def test_max_iter(self):
        rng = np.random.default_rng(7)
        problem = random_problem(rng, 30, bounded=False)
        result = qp.mprgp(
            problem, qp.BcqpOptions(preconditioner="none", max_iter=2)
        )
        self.assertEqual(result.termination, qp.Termination.MAX_ITER)
        self.assertFalse(result.converged)
        self.assertEqual(result.iterations, 2)

    def test_not_spd(self):
        A = BandedSym([[1.0, -1.0]])
        problem = qp.BcqpProblem(A, [1.0, 1.0])
        with self.assertRaises(NotSpdError):
            qp.mprgp(problem, qp.BcqpOptions(preconditioner="none"))


class TestPreconditioners(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(8)
        self.A = random_problem(rng, 9).A
        self.r = rng.standard_normal(9)

    def test_asc_exact_without_active(self):
        z = qp.asc_preconditioner(self.A).apply(self.r, ActiveSet.empty(9))
        np.testing.assert_allclose(
            self.A.matvec(z), self.r, rtol=1e-10, atol=1e-12
        )

    def test_all_active(self):
        active = ActiveSet(np.ones(9))
        for name in qp.get_preconditioner_names():
            z = qp.make_preconditioner(name, self.A).apply(self.r, active)
            np.testing.assert_array_equal(z, 0.0)

    def test_symmetric_on_free_face(self):
        rng = np.random.default_rng(9)
        active = ActiveSet(rng.integers(-1, 2, 9))
        free = active.free
        for name in ("asc", "diagonal", "ssor"):
            P = qp.make_preconditioner(name, self.A)
            M = np.array([P.apply(e, active) for e in np.eye(9)]).T
            self.assertTrue(np.all(M[~free] == 0.0), name)
            np.testing.assert_allclose(M, M.T, atol=1e-12, err_msg=name)

    def test_registry(self):
        class Scaled(qp.Preconditioner):
            name = "half"

            def apply(self, r, active):
                return np.where(active.free, 0.5 * r, 0.0)

        qp.register_preconditioner(Scaled)
        try:
            self.assertIn("half", qp.get_preconditioner_names())
            with self.assertRaises(ValueError) as cm:
                qp.register_preconditioner(Scaled)
            self.assertEqual(
                str(cm.exception),
                "Preconditioner identifier already in use. Deregister "
                "`half` first.",
            )
            problem = qp.BcqpProblem(self.A, self.r)
            result = qp.mprgp(problem, qp.BcqpOptions(preconditioner="half"))
            self.assertTrue(result.converged)
        finally:
            qp.deregister_preconditioner("half")
        with self.assertRaises(ConfigError):
            qp.make_preconditioner("half", self.A)

    def test_base_apply_not_implemented(self):
        class Deferred(qp.Preconditioner):
            name = "deferred"

            def apply(self, r, active):
                return super().apply(r, active)

        with self.assertRaises(NotImplementedError):
            Deferred(self.A).apply(self.r, ActiveSet.empty(9))
        with self.assertRaises(TypeError):
            qp.Preconditioner(self.A)

    def test_diagonal_rejects_non_positive(self):
        with self.assertRaises(NotSpdError) as cm:
            qp.DiagonalPreconditioner(BandedSym([[1.0, 0.0]]))
        self.assertEqual(
            str(cm.exception), "The matrix has a non-positive diagonal entry."
        )


class TestPgs(unittest.TestCase):
    def test_diagonal_one_sweep(self):
        problem = qp.BcqpProblem(
            BandedSym([[2.0, 4.0, 1.0]]),
            [4.0, -4.0, 0.5],
            [0, 0, 0],
            [1, 1, 1],
        )
        np.testing.assert_allclose(qp.pgs_solve(problem, 1), [1.0, 0.0, 0.5])

    def test_kkt_fixed_point(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            problem = random_problem(rng, int(rng.integers(1, 9)))
            x = qp.pgs_solve(problem, 100000, tol=1e-14)
            np.testing.assert_allclose(
                x, enumeration_oracle(problem), atol=1e-8
            )
            self.assertTrue(feasible(problem, x))


class TestNewtonSystem(unittest.TestCase):
    def test_factor_is_exact(self):
        config, state = st.make_scene("horizontal", 30, 0.1)
        rest = st.naive_rest_params(config, state)
        problem = newton_problem(config, state, rest, AlmOptions(mu=0.4))
        diag = problem.A.diagonal()
        self.assertGreater(diag.max() / diag.min(), 1e12)
        F = bd.ldlt_factorize(problem.A)
        self.assertEqual(F.clamp_count, 0)
        z = bd.solve(F, problem.b)
        residual = problem.A.matvec(z) - problem.b
        self.assertLessEqual(
            np.linalg.norm(residual), 1e-8 * np.linalg.norm(problem.b)
        )

    def test_asc_beats_diagonal(self):
        config, state = st.make_scene("horizontal", 30, 0.1)
        rest = st.naive_rest_params(config, state)
        problem = newton_problem(config, state, rest, AlmOptions(mu=0.4))
        asc = qp.mprgp(
            problem, qp.BcqpOptions(preconditioner="asc", max_iter=50)
        )
        diagonal = qp.mprgp(
            problem, qp.BcqpOptions(preconditioner="diagonal", max_iter=50)
        )
        self.assertTrue(asc.converged)
        self.assertLessEqual(asc.iterations, 50)
        self.assertTrue(
            not diagonal.converged or asc.iterations < diagonal.iterations
        )


if __name__ == "__main__":
    unittest.main()
