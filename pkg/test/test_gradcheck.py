import unittest

import numpy as np

import sagfree.gradcheck as gc


class TestRelativeError(unittest.TestCase):
    def test_values(self):
        self.assertEqual(gc.relative_error([1.0, 2.0], [1.0, 2.0]), 0.0)
        self.assertEqual(gc.relative_error([0.0], [0.0]), 0.0)
        self.assertAlmostEqual(gc.relative_error([1.0, 4.0], [1.0, 3.0]), 0.25)
        self.assertAlmostEqual(
            gc.relative_error([1e-9], [0.0], floor=1e-3), 1e-6
        )

    def test_slack(self):
        self.assertEqual(
            gc.relative_error([1.0, 2.0], [1.0, 2.001], slack=1e-3), 0.0
        )
        self.assertAlmostEqual(
            gc.relative_error([1.0, 2.0], [1.0, 2.001], slack=5e-4),
            5e-4 / 2.001,
        )


class TestRandomStrand(unittest.TestCase):
    def test_seeded(self):
        first = gc.random_strand(np.random.default_rng(4))
        second = gc.random_strand(np.random.default_rng(4))
        np.testing.assert_array_equal(first[1].x, second[1].x)
        np.testing.assert_array_equal(first[2].beta, second[2].beta)
        self.assertEqual(first[1].N, 10)


class TestCheckGradients(unittest.TestCase):
    def test_passes(self):
        report = gc.check_gradients(samples=6, seed=3)
        self.assertTrue(report.passed, report.format())
        self.assertEqual(report.failures(), [])
        for row in report.rows():
            self.assertLessEqual(row["worst_rel_err"], row["tolerance"])
        self.assertEqual(report.tolerances["alm_gradient_lbar"], 1e-4)
        self.assertEqual(report.tolerances["jacobian"], 1e-6)

    def test_jacobian_within_tolerance(self):
        for dims in (2, 4):
            errors = gc.check_strand(
                np.random.default_rng(0), curvature_dims=dims
            )
            self.assertLessEqual(errors["jacobian"], 1e-6, dims)
            flipped = gc.check_strand(
                np.random.default_rng(0), curvature_dims=dims, flip="jacobian"
            )
            self.assertGreater(flipped["jacobian"], 0.5, dims)

    def test_flip_is_detected(self):
        for category in ("bend", "jacobian", "alm_gradient"):
            report = gc.check_gradients(samples=2, seed=0, flip=category)
            self.assertFalse(report.passed)
            self.assertIn(category, report.failures())
            self.assertIn("FAILED", report.format())

    def test_deterministic(self):
        first = gc.check_gradients(samples=2, seed=7)
        second = gc.check_gradients(samples=2, seed=7)
        self.assertEqual(first.to_dict(), second.to_dict())
        self.assertEqual(first.to_dict()["seed"], 7)

    def test_tolerance_override(self):
        report = gc.check_gradients(
            samples=1, seed=0, tolerances={"stretch": 0.0}
        )
        if report.worst["stretch"] > 0.0:
            self.assertIn("stretch", report.failures())
        self.assertEqual(report.tolerances["bend"], 1e-6)

    def test_invalid(self):
        with self.assertRaises(ValueError) as cm:
            gc.check_gradients(samples=1, flip="gravity")
        self.assertTrue(
            str(cm.exception).startswith("Unknown category `gravity`.")
        )
        with self.assertRaises(ValueError) as cm:
            gc.check_gradients(samples=1, N=3)
        self.assertEqual(
            str(cm.exception), "A strand needs at least 4 vertices."
        )


if __name__ == "__main__":
    unittest.main()
