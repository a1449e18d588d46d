import unittest

import numpy as np

import sagfree.parameters as par
import sagfree.strands as st
from sagfree.optimizer import AlmOptions


def wavy_rest(N=8):
    config, state = st.make_scene("wavy", N, 0.1, c_st=2e9, c_tw=5e8)
    return st.naive_rest_params(config, state)


class TestStiffnessScaling(unittest.TestCase):
    def test_per_edge(self):
        s, alpha, beta, gamma = par.stiffness_scaling(
            [7.0, 3.0, 6.0], [3.0, 6.0], [3.0, 6.0]
        )
        # edge 0 does not enter the scale
        self.assertAlmostEqual(s, 4.5)
        np.testing.assert_allclose(alpha, np.array([7.0, 3.0, 6.0]) / 4.5)
        np.testing.assert_allclose(beta, np.array([3.0, 6.0]) / 4.5)
        np.testing.assert_allclose(gamma * s, [3.0, 6.0])

    def test_per_vertex(self):
        s, alpha, _, _ = par.stiffness_scaling([3.0, 3.0], 3.0, 3.0)
        self.assertEqual(s, 3.0)
        np.testing.assert_array_equal(alpha, [1.0, 1.0])

    def test_multipliers_order_one(self):
        s, alpha, beta, gamma = par.stiffness_scaling(
            np.full(20, 1e9), np.full(19, 2e9), np.full(19, 3e9)
        )
        self.assertAlmostEqual(s, 2e9)
        self.assertAlmostEqual(np.mean(alpha[1:] + beta + gamma) / 3, 1.0)

    def test_invalid_lengths(self):
        with self.assertRaises(ValueError) as cm:
            par.stiffness_scaling([1.0] * 5, [1.0, 1.0], [1.0, 1.0])
        self.assertEqual(
            str(cm.exception),
            "Stretching coefficients must be given per edge or per interior "
            "vertex.",
        )
        with self.assertRaises(ValueError) as cm:
            par.stiffness_scaling([1.0] * 3, [1.0, 1.0], [1.0])
        self.assertEqual(
            str(cm.exception),
            "Bending and twisting coefficients differ in length.",
        )

    def test_invalid_values(self):
        with self.assertRaises(ValueError) as cm:
            par.stiffness_scaling([1.0, 0.0], [1.0, 1.0], [1.0, 1.0])
        self.assertEqual(
            str(cm.exception), "Stiffness coefficients must be positive."
        )


class TestParamLayout(unittest.TestCase):
    def test_full_layout(self):
        layout = par.ParamLayout.from_options(30)
        self.assertEqual(layout.n_params, 196)
        self.assertEqual(layout.n_vertices, 28)
        self.assertEqual(layout.column("length", 1), 5)
        self.assertEqual(layout.column("kappa0", 2), 7)
        self.assertTrue(layout.reduced_curvature)
        self.assertTrue(layout.has_stiffness)

    def test_rest_shape_only(self):
        layout = par.ParamLayout.from_options(30, rest_shape_only=True)
        self.assertEqual(
            layout.fields, ("kappa0", "kappa1", "twist", "length")
        )
        self.assertFalse(layout.has_stiffness)
        self.assertEqual(layout.n_params, 4 * 28)

    def test_four_curvatures(self):
        layout = par.ParamLayout.from_options(10, curvature_dims=4)
        self.assertEqual(layout.n_params, 9 * 8)
        self.assertFalse(layout.reduced_curvature)

    def test_blocked(self):
        layout = par.ParamLayout.from_options(6, interleaved=False)
        np.testing.assert_array_equal(layout.columns("beta"), [8, 9, 10, 11])
        self.assertEqual(layout.describe(9), ("beta", 2))

    def test_describe_inverts_column(self):
        for interleaved in (True, False):
            layout = par.ParamLayout.from_options(
                7, curvature_dims=4, interleaved=interleaved
            )
            for col in range(layout.n_params):
                field, vertex = layout.describe(col)
                self.assertEqual(layout.column(field, vertex), col)

    def test_field_mask(self):
        layout = par.ParamLayout.from_options(5, rest_shape_only=True)
        mask = layout.field_mask("length", "alpha")
        np.testing.assert_array_equal(np.nonzero(mask)[0], [3, 7, 11])

    def test_equality(self):
        self.assertEqual(
            par.ParamLayout.from_options(8), par.ParamLayout(8)
        )
        self.assertNotEqual(
            par.ParamLayout.from_options(8),
            par.ParamLayout.from_options(8, interleaved=False),
        )

    def test_invalid(self):
        with self.assertRaises(ValueError) as cm:
            par.ParamLayout(3)
        self.assertEqual(
            str(cm.exception), "A strand needs at least 4 vertices."
        )
        with self.assertRaises(ValueError) as cm:
            par.ParamLayout.from_options(8, curvature_dims=3)
        self.assertEqual(
            str(cm.exception), "The curvature dimension must be 2 or 4."
        )
        with self.assertRaises(ValueError) as cm:
            par.ParamLayout(8, ("kappa0", "kappa2"))
        self.assertEqual(
            str(cm.exception),
            "Rest curvature fields must be kappa0, kappa1 or all four slots.",
        )
        with self.assertRaises(ValueError):
            par.ParamLayout(8, ("length", "length"))

    def test_missing_field(self):
        layout = par.ParamLayout.from_options(8, rest_shape_only=True)
        with self.assertRaises(KeyError):
            layout.columns("beta")
        with self.assertRaises(IndexError) as cm:
            layout.column("length", 7)
        self.assertEqual(
            str(cm.exception), "Vertex 7 is not an interior vertex."
        )


class TestPackUnpack(unittest.TestCase):
    def setUp(self):
        self.rest = wavy_rest()
        self.layout = par.ParamLayout.from_options(8)

    def test_pack(self):
        p = self.layout.pack(self.rest)
        np.testing.assert_array_equal(
            p[self.layout.columns("length")], self.rest.rest_len[1:]
        )
        np.testing.assert_array_equal(
            p[self.layout.columns("kappa1")], self.rest.rest_curv[:, 1]
        )
        np.testing.assert_array_equal(
            p[self.layout.columns("gamma")], self.rest.gamma
        )

    def test_unpack_keeps_edge_zero(self):
        p = self.layout.pack(self.rest) * 1.5
        rest = self.layout.unpack(p, self.rest)
        self.assertEqual(rest.rest_len[0], self.rest.rest_len[0])
        self.assertEqual(rest.alpha[0], self.rest.alpha[0])
        np.testing.assert_allclose(
            rest.rest_len[1:], 1.5 * self.rest.rest_len[1:]
        )
        self.assertEqual(rest.s, self.rest.s)

    def test_unpack_synchronizes(self):
        p = self.layout.pack(self.rest)
        p[self.layout.columns("kappa0")] = 0.25
        rest = self.layout.unpack(p, self.rest)
        np.testing.assert_array_equal(rest.rest_curv[:, 0], 0.25)
        np.testing.assert_array_equal(rest.rest_curv[:, 2], 0.25)
        np.testing.assert_array_equal(
            rest.rest_curv[:, 3], rest.rest_curv[:, 1]
        )

    def test_unpack_four_slots(self):
        layout = par.ParamLayout.from_options(8, curvature_dims=4)
        p = layout.pack(self.rest)
        p[layout.columns("kappa2")] = -0.5
        rest = layout.unpack(p, self.rest)
        np.testing.assert_array_equal(rest.rest_curv[:, 2], -0.5)
        np.testing.assert_array_equal(
            rest.rest_curv[:, 0], self.rest.rest_curv[:, 0]
        )

    def test_unpack_rest_only_keeps_stiffness(self):
        layout = par.ParamLayout.from_options(8, rest_shape_only=True)
        rest = layout.unpack(layout.pack(self.rest) + 0.1, self.rest)
        np.testing.assert_array_equal(rest.beta, self.rest.beta)
        np.testing.assert_array_equal(rest.alpha, self.rest.alpha)

    def test_unpack_wrong_size(self):
        with self.assertRaises(ValueError) as cm:
            self.layout.unpack(np.zeros(3), self.rest)
        self.assertEqual(str(cm.exception), "Expected 42 parameters, got 3.")


class TestBounds(unittest.TestCase):
    def setUp(self):
        self.layout = par.ParamLayout.from_options(8)
        self.p0 = self.layout.pack(wavy_rest())

    def test_compute_bounds(self):
        options = AlmOptions(mu=0.2, eps=1e-6, stiffness_max=10.0)
        lo, hi = par.compute_bounds(self.p0, self.layout, options)
        length = self.layout.columns("length")
        np.testing.assert_array_equal(lo[length], 1e-6)
        np.testing.assert_array_equal(hi[length], np.inf)
        beta = self.layout.columns("beta")
        np.testing.assert_array_equal(lo[beta], 1e-6)
        np.testing.assert_array_equal(hi[beta], 10.0)
        kappa = self.layout.columns("kappa1")
        np.testing.assert_allclose(hi[kappa] - lo[kappa], 0.4)
        twist = self.layout.columns("twist")
        np.testing.assert_allclose(hi[twist] - self.p0[twist], 0.05)
        self.assertTrue(np.all(lo <= self.p0) and np.all(self.p0 <= hi))

    def test_lbar_min(self):
        options = AlmOptions(lbar_min=1e-3)
        lo, _ = par.compute_bounds(self.p0, self.layout, options)
        np.testing.assert_array_equal(lo[self.layout.columns("length")], 1e-3)
        np.testing.assert_array_equal(lo[self.layout.columns("alpha")], 1e-10)

    def test_weight_diagonal(self):
        w = par.weight_diagonal(self.layout, 1e3, 1.0)
        self.assertTrue(np.all(w[self.layout.columns("gamma")] == 1e3))
        self.assertTrue(np.all(w[self.layout.columns("twist")] == 1.0))


class TestParamVector(unittest.TestCase):
    def setUp(self):
        self.layout = par.ParamLayout(4, ("length",))
        self.lo = np.zeros(2)
        self.hi = np.ones(2)

    def test_projects(self):
        params = par.ParamVector(
            [2.0, -1.0], [0.5, 0.5], self.lo, self.hi, self.layout
        )
        np.testing.assert_array_equal(params.values, [1.0, 0.0])
        self.assertTrue(params.is_feasible())
        self.assertFalse(params.is_feasible([1.0 + 1e-15, 0.5]))
        params.values = [0.25, 3.0]
        np.testing.assert_array_equal(params.values, [0.25, 1.0])

    def test_invalid(self):
        with self.assertRaises(ValueError) as cm:
            par.ParamVector([0.0], [0.0], self.lo, self.hi, self.layout)
        self.assertEqual(
            str(cm.exception), "Parameter arrays must have length 2."
        )
        with self.assertRaises(ValueError) as cm:
            par.ParamVector(self.lo, self.lo, self.hi, self.lo, self.layout)
        self.assertEqual(
            str(cm.exception), "Lower bounds exceed upper bounds."
        )


if __name__ == "__main__":
    unittest.main()
