import os
import tempfile
import unittest

import numpy as np
import scipy.io
import scipy.linalg

import sagfree.banded as bd
from sagfree.exceptions import (
    BadDimensionError,
    DimensionMismatchError,
    OutOfBandError,
)


def random_spd(rng, n, hbw):
    """Diagonally dominant random SPD band matrix."""

    bands = np.zeros((hbw + 1, n))
    for k in range(1, hbw + 1):
        bands[k, : n - k] = rng.uniform(-1.0, 1.0, n - k)
    dense_off = np.zeros(n)
    for k in range(1, hbw + 1):
        dense_off[: n - k] += np.abs(bands[k, : n - k])
        dense_off[k:] += np.abs(bands[k, : n - k])
    bands[0] = dense_off + rng.uniform(0.5, 2.0, n)
    return bd.BandedSym(bands)


class TestBandedSym(unittest.TestCase):
    def setUp(self):
        self.A = bd.assemble(
            3, 1, [(0, 0, 2), (1, 0, -1), (1, 1, 2), (2, 1, -1), (2, 2, 2)]
        )

    def test_data(self):
        self.assertEqual(self.A.n, 3)
        self.assertEqual(self.A.hbw, 1)
        np.testing.assert_array_equal(self.A.diagonal(), [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(
            self.A.to_dense(),
            [[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]],
        )

    def test_matvec(self):
        np.testing.assert_array_equal(self.A.matvec([1, 1, 1]), [1, 0, 1])
        np.testing.assert_array_equal(bd.matvec(self.A, [1, 0, 0]), [2, -1, 0])

    def test_upper_entries_mirrored_and_summed(self):
        A = bd.assemble(2, 1, [(0, 1, 1.5), (1, 0, 0.5), (0, 0, 1), (1, 1, 1)])
        np.testing.assert_array_equal(A.to_dense(), [[1, 2], [2, 1]])

    def test_padding_zeroed(self):
        A = bd.BandedSym([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        np.testing.assert_array_equal(A.bands[1], [4.0, 5.0, 0.0])

    def test_bands_read_only(self):
        with self.assertRaises(ValueError):
            self.A.bands[0, 0] = 1.0

    def test_from_dense_round_trip(self):
        rng = np.random.default_rng(3)
        A = random_spd(rng, 9, 3)
        B = bd.BandedSym.from_dense(A.to_dense())
        self.assertEqual(B.hbw, 3)
        np.testing.assert_array_equal(B.bands, A.bands)

    def test_from_dense_out_of_band(self):
        with self.assertRaises(OutOfBandError) as cm:
            bd.BandedSym.from_dense(np.ones((3, 3)), hbw=1)
        self.assertEqual(
            str(cm.exception),
            "Entry (2, 0) lies outside the half-bandwidth 1.",
        )

    def test_with_diagonal_added_and_scaled(self):
        B = self.A.with_diagonal_added([1.0, 2.0, 3.0]).scaled(2.0)
        np.testing.assert_array_equal(B.diagonal(), [6.0, 8.0, 10.0])
        self.assertEqual(B.to_dense()[1, 0], -2.0)
        np.testing.assert_array_equal(self.A.diagonal(), [2.0, 2.0, 2.0])

    def test_scaled_symmetric(self):
        d = np.array([1.0, 10.0, 100.0])
        B = self.A.scaled_symmetric(d)
        np.testing.assert_allclose(
            B.to_dense(), np.diag(d) @ self.A.to_dense() @ np.diag(d)
        )
        with self.assertRaises(DimensionMismatchError):
            self.A.scaled_symmetric([1.0, 2.0])

    def test_to_sparse(self):
        S = self.A.to_sparse()
        self.assertEqual(S.nnz, 7)
        np.testing.assert_array_equal(S.toarray(), self.A.to_dense())

    def test_invalid_matvec_length(self):
        with self.assertRaises(DimensionMismatchError) as cm:
            self.A.matvec([1, 2])
        self.assertEqual(
            str(cm.exception), "Expected a vector of length 3, got length 2."
        )


class TestAssemble(unittest.TestCase):
    def test_out_of_band(self):
        with self.assertRaises(OutOfBandError) as cm:
            bd.assemble(3, 0, [(1, 0, 1.0)])
        self.assertEqual(
            str(cm.exception),
            "Entry (1, 0) lies outside the half-bandwidth 0.",
        )
        self.assertEqual((cm.exception.row, cm.exception.col), (1, 0))

    def test_outside_matrix(self):
        with self.assertRaises(BadDimensionError) as cm:
            bd.assemble(3, 1, [(3, 2, 1.0)])
        self.assertEqual(
            str(cm.exception), "Entry (3, 2) lies outside a 3 x 3 matrix."
        )

    def test_invalid_bandwidth(self):
        with self.assertRaises(BadDimensionError) as cm:
            bd.BandedSym.zeros(3, 3)
        self.assertEqual(
            str(cm.exception),
            "The half-bandwidth 3 must satisfy 0 <= hbw < 3.",
        )

    def test_invalid_size(self):
        with self.assertRaises(BadDimensionError) as cm:
            bd.assemble(0, 0, [])
        self.assertEqual(str(cm.exception), "A banded matrix needs n >= 1.")

    def test_errors_are_value_errors(self):
        with self.assertRaises(ValueError):
            bd.assemble(3, 0, [(2, 0, 1.0)])


class TestLdlt(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_example(self):
        A = bd.assemble(
            3, 1, [(0, 0, 2), (1, 0, -1), (1, 1, 2), (2, 1, -1), (2, 2, 2)]
        )
        F = bd.ldlt_factorize(A)
        np.testing.assert_allclose(bd.solve(F, [1, 0, 1]), [1, 1, 1])
        self.assertEqual(F.clamp_count, 0)

    def test_reconstruct(self):
        for n, hbw in ((1, 0), (5, 1), (20, 4), (33, 10)):
            A = random_spd(self.rng, n, hbw)
            F = bd.ldlt_factorize(A)
            self.assertEqual(F.hbw, hbw)
            np.testing.assert_allclose(
                F.reconstruct().to_dense(), A.to_dense(), atol=1e-12
            )
            L = F.lower_dense()
            np.testing.assert_array_equal(np.diag(L), np.ones(n))
            np.testing.assert_array_equal(np.triu(L, 1), np.zeros((n, n)))

    def test_solve_matches_scipy(self):
        for n, hbw in ((6, 2), (40, 10), (25, 7)):
            A = random_spd(self.rng, n, hbw)
            b = self.rng.normal(size=n)
            expected = scipy.linalg.solveh_banded(A.bands, b, lower=True)
            np.testing.assert_allclose(
                bd.solve(bd.ldlt_factorize(A), b), expected, rtol=1e-10
            )

    def test_pivots_match_dense_ldl(self):
        A = random_spd(self.rng, 8, 2)
        C = scipy.linalg.cholesky(A.to_dense(), lower=True)
        np.testing.assert_allclose(
            bd.ldlt_factorize(A).diag, np.diag(C) ** 2, rtol=1e-12
        )

    def test_clamped_pivots(self):
        A = bd.BandedSym([[1.0, 0.0, -1.0]])
        with self.assertLogs("sagfree.banded", "WARNING") as logs:
            F = bd.ldlt_factorize(A)
        self.assertEqual(F.clamp_count, 2)
        np.testing.assert_array_equal(F.diag, [1.0, 1e-12, 1e-12])
        self.assertIn("Clamped 2 of 3 pivots", logs.output[0])

    def test_badly_scaled(self):
        n = 40
        B = random_spd(self.rng, n, 5)
        s = np.sqrt(np.logspace(0, 20, n))
        A = B.scaled_symmetric(s)
        F = bd.ldlt_factorize(A)
        self.assertEqual(F.clamp_count, 0)
        b = s * self.rng.normal(size=n)
        y = scipy.linalg.solveh_banded(B.bands, b / s, lower=True)
        z = bd.solve(F, b)
        self.assertLessEqual(
            np.linalg.norm(s * z - y), 1e-10 * np.linalg.norm(y)
        )

    def test_floor_relative_to_own_diagonal(self):
        A = bd.BandedSym([[1e20, 1.0, 1e-3]])
        F = bd.ldlt_factorize(A)
        self.assertEqual(F.clamp_count, 0)
        np.testing.assert_array_equal(F.diag, [1e20, 1.0, 1e-3])
        F = bd.ldlt_factorize(A, pivot_floor=1.0)
        self.assertEqual(F.clamp_count, 1)
        self.assertEqual(F.diag[2], 1.0)

    def test_invalid_pivot_floor(self):
        A = bd.BandedSym([[1.0, 1.0]])
        with self.assertRaises(BadDimensionError) as cm:
            bd.ldlt_factorize(A, pivot_floor=-1.0)
        self.assertEqual(
            str(cm.exception), "The pivot floor must be positive."
        )

    def test_invalid_rhs_length(self):
        F = bd.ldlt_factorize(bd.BandedSym([[1.0, 1.0]]))
        with self.assertRaises(DimensionMismatchError):
            bd.solve(F, [1.0, 2.0, 3.0])


class TestActiveSet(unittest.TestCase):
    def test_from_bounds(self):
        a = bd.ActiveSet.from_bounds(
            [0.0, 1.0, 0.5, 2.0],
            [0.0, -np.inf, 0.0, 2.0],
            [1.0, 1.0, 1.0, 2.0],
        )
        np.testing.assert_array_equal(a.flags, [-1, 1, 0, -1])
        np.testing.assert_array_equal(a.free, [False, False, True, False])
        self.assertEqual(a.n_active, 3)
        self.assertEqual(len(a), 4)

    def test_tolerance(self):
        a = bd.ActiveSet.from_bounds([1e6 + 1e-9, 1e-13], [1e6, 0.0], [2e6, 1])
        np.testing.assert_array_equal(a.flags, [-1, 0])

    def test_infinite_bounds_never_active(self):
        a = bd.ActiveSet.from_bounds([np.inf], [-np.inf], [np.inf])
        self.assertEqual(a, bd.ActiveSet.empty(1))

    def test_invalid_flags(self):
        with self.assertRaises(ValueError) as cm:
            bd.ActiveSet([0, 2])
        self.assertEqual(
            str(cm.exception), "Active set flags must be -1, 0 or 1."
        )


class TestSolveFiltered(unittest.TestCase):
    def test_filtered_algebra(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            n = int(rng.integers(1, 30))
            hbw = int(rng.integers(0, n))
            F = bd.ldlt_factorize(random_spd(rng, n, min(hbw, 10)))
            a = bd.ActiveSet(rng.choice([-1, 0, 0, 1], size=n))
            r1, r2 = rng.normal(size=(2, n))
            z1 = bd.solve_filtered(F, r1, a)
            z2 = bd.solve_filtered(F, r2, a)

            self.assertTrue(np.all(z1[~a.free] == 0.0))
            lhs, rhs = z1 @ r2, r1 @ z2
            scale = np.linalg.norm(z1) * np.linalg.norm(r2) + 1e-300
            self.assertLessEqual(abs(lhs - rhs), 1e-10 * scale)

            empty = bd.solve_filtered(F, r1, bd.ActiveSet.empty(n))
            np.testing.assert_array_equal(empty, bd.solve(F, r1))

    def test_free_block_inverse(self):
        rng = np.random.default_rng(5)
        A = random_spd(rng, 12, 3)
        F = bd.ldlt_factorize(A)
        a = bd.ActiveSet([0, 1, 0, 0, -1, 0, 0, 0, 1, 0, 0, 0])
        r = rng.normal(size=12)
        z = bd.solve_filtered(F, r, a)
        self.assertTrue(np.all(np.isfinite(z)))
        # all free: exact inverse
        np.testing.assert_allclose(
            A.matvec(bd.solve_filtered(F, r, bd.ActiveSet.empty(12))),
            r,
            atol=1e-10,
        )

    def test_length_mismatch(self):
        F = bd.ldlt_factorize(bd.BandedSym([[1.0, 1.0]]))
        with self.assertRaises(DimensionMismatchError) as cm:
            bd.solve_filtered(F, [1.0, 1.0], bd.ActiveSet.empty(3))
        self.assertEqual(
            str(cm.exception),
            "Expected an active set of length 2, got length 3.",
        )


class TestMatrixMarket(unittest.TestCase):
    def setUp(self):
        self.dir = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.dir.cleanup()

    def test_banded_dump(self):
        A = random_spd(np.random.default_rng(1), 7, 2)
        path = os.path.join(self.dir.name, "a.mtx")
        bd.write_matrix_market(path, A, "test matrix")
        B = scipy.io.mmread(path)
        np.testing.assert_allclose(B.toarray(), A.to_dense())

    def test_factor_dump(self):
        A = random_spd(np.random.default_rng(2), 6, 1)
        F = bd.ldlt_factorize(A)
        path = os.path.join(self.dir.name, "f.mtx")
        bd.write_matrix_market(path, F)
        packed = scipy.io.mmread(path).toarray()
        np.testing.assert_allclose(np.diag(packed), F.diag)
        np.testing.assert_allclose(
            np.tril(packed, -1), np.tril(F.lower_dense(), -1)
        )

    def test_invalid_type(self):
        with self.assertRaises(TypeError) as cm:
            bd.write_matrix_market("x.mtx", np.eye(2))
        self.assertEqual(
            str(cm.exception),
            "Expected a BandedSym or an LdlFactor, got ndarray.",
        )


if __name__ == "__main__":
    unittest.main()
