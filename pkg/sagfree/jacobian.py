"""
Jacobian of the generalized force with respect to the parameter vector and
the equilibrium constraint.

The force on the active DOFs is linear in the rest curvatures, rest twists
and stiffness multipliers and depends on the rest lengths through the
stiffness coefficients. Every parameter touches only the force DOFs of its
stencil, so the Jacobian is stored column by column as a contiguous slab of
rows (:class:`BandedRect`). With the interleaved parameter layout the row
ranges of consecutive columns overlap only locally and the normal matrix
``Jᵀ M⁻¹ J`` is banded::

    import sagfree.strands as st
    import sagfree.parameters as par
    import sagfree.jacobian as jc

    config, state = st.make_scene("horizontal", 30, 0.1)
    rest = st.naive_rest_params(config, state)
    layout = par.ParamLayout.from_options(30)
    J = jc.assemble_jacobian(config, state, rest, layout)
    J.shape                      # (112, 196)
    mass = st.mass_matrix(config, rest.rest_len)
    A = J.normal_matrix(1 / mass.active)

Second derivatives of the force with respect to the rest lengths are not
formed.
"""

import numpy as np
import scipy.sparse

from .banded import BandedSym
from .energies import stiffness
from .exceptions import DimensionMismatchError
from .strands import N_CLAMPED, STENCIL, StrandGeometry

SLAB = 15
"""Widest column slab: the rest length of an edge reaches 15 force DOFs."""


class BandedRect:
    """
    A sparse matrix whose column ``c`` is nonzero only in the rows
    ``starts[c] <= r < starts[c] + heights[c]``.

    ``slabs[c, k]`` holds the entry of row ``starts[c] + k``.
    """

    def __init__(self, n_rows, starts, heights, slabs):
        """
        Constructor.

        Parameters
        ----------
        n_rows : :class:`int`
            Row count.
        starts, heights : array_like of :class:`int`
            First row and height of every column slab.
        slabs : array_like
            Slab values, shape ``(n_cols, width)``; entries beyond a column's
            height must be zero.

        Raises
        ------
        ValueError
            If a slab leaves the matrix.
        """
        self._n_rows = int(n_rows)
        self._starts = np.asarray(starts, dtype=np.intp)
        self._heights = np.asarray(heights, dtype=np.intp)
        self._slabs = np.asarray(slabs, dtype=float)
        n_cols = self._starts.size
        if self._heights.shape != (n_cols,) or self._slabs.shape[0] != n_cols:
            raise ValueError("Slab arrays must have one entry per column.")
        if np.any(self._heights > self._slabs.shape[1]):
            raise ValueError("A slab is higher than the slab width.")
        if np.any(self._starts < 0) or np.any(
            self._starts + self._heights > self._n_rows
        ):
            raise ValueError("A column slab leaves the matrix.")

    @property
    def shape(self):
        """``(n_rows, n_cols)``."""

        return self._n_rows, self._starts.size

    @property
    def starts(self):
        """First row of every column slab."""

        return self._starts.copy()

    @property
    def heights(self):
        """Height of every column slab."""

        return self._heights.copy()

    @property
    def slabs(self):
        """Slab values."""

        return self._slabs.copy()

    def _rows(self):
        width = self._slabs.shape[1]
        offset = np.arange(width)
        rows = self._starts[:, None] + offset
        valid = offset < self._heights[:, None]
        return np.where(valid, rows, 0), valid

    def column(self, c):
        """Dense column ``c``."""

        out = np.zeros(self._n_rows)
        h = self._heights[c]
        out[self._starts[c] : self._starts[c] + h] = self._slabs[c, :h]
        return out

    def matvec(self, x):
        """
        Product ``J x``.

        Raises
        ------
        DimensionMismatchError
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self._starts.size,):
            raise DimensionMismatchError(self._starts.size, x.size)
        rows, valid = self._rows()
        y = np.zeros(self._n_rows)
        np.add.at(y, rows[valid], (self._slabs * x[:, None])[valid])
        return y

    def rmatvec(self, y):
        """
        Product ``Jᵀ y``.

        Raises
        ------
        DimensionMismatchError
        """
        y = np.asarray(y, dtype=float)
        if y.shape != (self._n_rows,):
            raise DimensionMismatchError(self._n_rows, y.size)
        rows, valid = self._rows()
        return np.sum(np.where(valid, self._slabs * y[rows], 0.0), axis=1)

    def to_sparse(self):
        """
        Copy as a :class:`scipy.sparse.csc_matrix`.

        Returns
        -------
        :class:`scipy.sparse.csc_matrix`
        """
        rows, valid = self._rows()
        cols = np.broadcast_to(
            np.arange(self._starts.size)[:, None], rows.shape
        )
        return scipy.sparse.csc_matrix(
            (self._slabs[valid], (rows[valid], cols[valid])), shape=self.shape
        )

    def to_dense(self):
        """Dense copy."""

        return self.to_sparse().toarray()

    def _overlap_reach(self):
        # last column c' >= c whose row range overlaps the one of c
        n = self._starts.size
        ends = self._starts + self._heights
        nonempty = self._heights > 0
        if np.all(np.diff(self._starts) >= 0) and np.all(nonempty):
            reach = np.searchsorted(self._starts, ends, side="left") - 1
            return np.maximum(reach, np.arange(n))
        c = np.arange(n)
        overlap = (
            (self._starts[None, :] < ends[:, None])
            & (ends[None, :] > self._starts[:, None])
            & nonempty[None, :]
            & nonempty[:, None]
            & (c[None, :] >= c[:, None])
        )
        return np.where(
            overlap.any(axis=1),
            n - 1 - np.argmax(overlap[:, ::-1], axis=1),
            c,
        )

    @property
    def normal_hbw(self):
        """Half-bandwidth of ``Jᵀ D J`` implied by the row ranges."""

        if self._starts.size == 0:
            return 0
        reach = self._overlap_reach()
        return int(np.max(reach - np.arange(self._starts.size)))

    def normal_matrix(self, weights=None):
        """
        The normal matrix ``Jᵀ diag(weights) J`` as a :class:`BandedSym`.

        Entries are gathered band by band from overlapping slabs; no dense
        intermediate is formed.

        Parameters
        ----------
        weights : array_like, optional
            Row weights, by default ones.

        Returns
        -------
        :class:`~sagfree.banded.BandedSym`
        """
        n_rows, n = self.shape
        w = np.ones(n_rows) if weights is None else np.asarray(weights)
        if w.shape != (n_rows,):
            raise DimensionMismatchError(n_rows, w.size, "weight vector")
        hbw = min(self.normal_hbw, n - 1)
        rows, valid = self._rows()
        weighted = np.where(valid, self._slabs * w[rows], 0.0)
        width = self._slabs.shape[1]
        offset = np.arange(width)

        bands = np.zeros((hbw + 1, n))
        for k in range(hbw + 1):
            c = np.arange(n - k)
            other = c + k
            idx = self._starts[c, None] + offset - self._starts[other, None]
            inside = (idx >= 0) & (idx < self._heights[other, None])
            gathered = np.where(
                inside,
                self._slabs[other[:, None], np.clip(idx, 0, width - 1)],
                0.0,
            )
            bands[k, : n - k] = np.sum(weighted[c] * gathered, axis=1)
        return BandedSym(bands)


def normal_nnz(J):
    """
    Structural nonzero count of ``Jᵀ M⁻¹ J`` (both triangles).

    Two columns couple when their row ranges overlap.

    Parameters
    ----------
    J : :class:`BandedRect`

    Returns
    -------
    :class:`int`
    """
    starts = J.starts
    ends = starts + J.heights
    order = np.argsort(starts, kind="stable")
    sorted_starts = starts[order]
    # columns c' with start[c'] < end[c] and end[c'] > start[c]
    total = 0
    for c in range(starts.size):
        if J.heights[c] == 0:
            continue
        candidates = order[: np.searchsorted(sorted_starts, ends[c])]
        total += int(
            np.count_nonzero(
                (ends[candidates] > starts[c]) & (J.heights[candidates] > 0)
            )
        )
    return total


def constraint(mass, f):
    """
    Equilibrium constraint ``c = M^{-1/2} f`` on the active DOFs.

    Parameters
    ----------
    mass : :class:`~sagfree.strands.MassMatrix` or array_like
        Mass, or its diagonal over the active DOFs.
    f : :class:`~sagfree.energies.ForceVector` or array_like

    Returns
    -------
    :class:`numpy.ndarray`
    """
    m = mass.active if hasattr(mass, "active") else np.asarray(mass)
    f = f.values if hasattr(f, "values") else np.asarray(f, dtype=float)
    if m.shape != f.shape:
        raise DimensionMismatchError(m.size, f.size, "force")
    return f / np.sqrt(m)


def jac_stretch(config, state, rest, i, geometry=None):
    """
    Force derivatives of the stretching term of edge ``i``.

    Returns
    -------
    (:class:`numpy.ndarray`, :class:`numpy.ndarray`)
        Columns for ``l̄_i`` and ``alpha_i``, shape ``(2, 3)`` each: the
        entries on ``x_i`` and on ``x_{i+1}``.
    """
    if not 1 <= i <= state.N - 2:
        raise IndexError(f"Edge {i} carries no stretching energy.")
    geom = StrandGeometry(state) if geometry is None else geometry
    area = np.pi * config.radius**2
    l, lbar, t = geom.lengths[i], rest.rest_len[i], geom.tangents[i]
    d_len = rest.s * rest.alpha[i] * area * l / lbar**2 * t
    d_alpha = -rest.s * area * (l / lbar - 1.0) * t
    return np.stack([-d_len, d_len]), np.stack([-d_alpha, d_alpha])


def jac_bend(config, state, rest, i, geometry=None, curvature_dims=2):
    """
    Force derivatives of the bending term of vertex ``i`` over its stencil.

    Returns
    -------
    :class:`dict`
        ``"length"`` (the identical columns for ``l̄_{i-1}`` and ``l̄_i``),
        ``"beta"`` and one entry per optimized rest curvature slot
        (``"kappa0"``, ``"kappa1"`` for the reduced layout, in which a slot
        also drives its synchronized twin). Each is an 11-vector.
    """
    if not 1 <= i <= state.N - 2:
        raise IndexError(f"Vertex {i} is not an interior vertex.")
    geom = StrandGeometry(state) if geometry is None else geometry
    k = stiffness(config, rest)
    j = i - 1
    grad = geom.grad_kappa[j]
    force = -k.k_be[j] * (geom.kappa[j] - rest.rest_curv[j]) @ grad
    out = {
        "length": -force / k.edge_sum[j],
        "beta": force / rest.beta[j],
    }
    for slot in range(curvature_dims):
        column = k.k_be[j] * grad[slot]
        if curvature_dims == 2:
            column = column + k.k_be[j] * grad[slot + 2]
        out[f"kappa{slot}"] = column
    return out


def jac_twist(config, state, rest, i, geometry=None):
    """
    Force derivatives of the twisting term of vertex ``i`` over its stencil.

    Returns
    -------
    :class:`dict`
        ``"length"``, ``"twist"`` and ``"gamma"`` columns, 11-vectors each.
    """
    if not 1 <= i <= state.N - 2:
        raise IndexError(f"Vertex {i} is not an interior vertex.")
    geom = StrandGeometry(state) if geometry is None else geometry
    k = stiffness(config, rest)
    j = i - 1
    force = (
        -k.k_tw[j] * (geom.twist[j] - rest.rest_twist[j]) * geom.grad_twist[j]
    )
    return {
        "length": -force / k.edge_sum[j],
        "twist": k.k_tw[j] * geom.grad_twist[j],
        "gamma": force / rest.gamma[j],
    }


def assemble_jacobian(config, state, rest, layout, geometry=None):
    """
    Jacobian ``J = df/dp`` of the active force in layout column order.

    The inertial force does not depend on the parameters, and the mass
    defining the gravity load is held fixed.

    Parameters
    ----------
    config : :class:`~sagfree.strands.StrandConfig`
    state : :class:`~sagfree.strands.StrandState`
    rest : :class:`~sagfree.strands.RestParams`
    layout : :class:`~sagfree.parameters.ParamLayout`
    geometry : :class:`~sagfree.strands.StrandGeometry`, optional
        Cached geometry of ``state``.

    Returns
    -------
    :class:`BandedRect`
        Shape ``(4N - 8, layout.n_params)``.
    """
    N = state.N
    if layout.N != N:
        raise DimensionMismatchError(layout.N, N, "parameter layout")
    geom = StrandGeometry(state) if geometry is None else geometry
    k = stiffness(config, rest)
    nv = N - 2
    area = np.pi * config.radius**2

    # stencil force terms, vertex index j = i - 1
    res_k = geom.kappa - rest.rest_curv
    bend_force = -np.einsum(
        "jk,jkl->jl", k.k_be[:, None] * res_k, geom.grad_kappa
    )
    res_m = geom.twist - rest.rest_twist
    twist_force = -(k.k_tw * res_m)[:, None] * geom.grad_twist
    stencil_len = (bend_force + twist_force) / k.edge_sum[:, None]

    # stretch of the edge i = j + 1
    edge = np.arange(1, N - 1)
    l, lbar = geom.lengths[edge], rest.rest_len[edge]
    t = geom.tangents[edge]
    st_len = (rest.s * rest.alpha[edge] * area * l / lbar**2)[:, None] * t
    st_alpha = (-rest.s * area * (l / lbar - 1.0))[:, None] * t

    n_cols = layout.n_params
    starts = np.zeros(n_cols, dtype=np.intp)
    heights = np.zeros(n_cols, dtype=np.intp)
    slabs = np.zeros((n_cols, SLAB))
    vertex = np.arange(1, N - 1)
    g_start = 4 * vertex - 4

    def place(field, g_first, g_end, values):
        # values cover global rows g_first .. g_first + width - 1
        cols = layout.columns(field)
        lo = np.maximum(g_first, N_CLAMPED)
        starts[cols] = lo - N_CLAMPED
        heights[cols] = g_end - lo
        skip = lo - g_first
        for c, s, h, row in zip(cols, skip, g_end - lo, values):
            slabs[c, :h] = row[s : s + h]

    for field in layout.fields:
        if field.startswith("kappa"):
            slot = int(field[-1])
            column = k.k_be[:, None] * geom.grad_kappa[:, slot]
            if layout.reduced_curvature:
                column = column + (
                    k.k_be[:, None] * geom.grad_kappa[:, slot + 2]
                )
            place(field, g_start, g_start + STENCIL, column)
        elif field == "beta":
            column = bend_force / rest.beta[:, None]
            place(field, g_start, g_start + STENCIL, column)
        elif field == "twist":
            column = k.k_tw[:, None] * geom.grad_twist
            place(field, g_start, g_start + STENCIL, column)
        elif field == "gamma":
            column = twist_force / rest.gamma[:, None]
            place(field, g_start, g_start + STENCIL, column)
        elif field == "alpha":
            column = np.zeros((nv, 7))
            column[:, 0:3] = -st_alpha
            column[:, 4:7] = st_alpha
            place(field, 4 * vertex, 4 * vertex + 7, column)
        elif field == "length":
            # edge i is the second edge of vertex i and the first of vertex
            # i + 1; rows 4i - 4 .. 4i + 10
            column = np.zeros((nv, SLAB))
            column[:, :STENCIL] += -stencil_len
            column[:-1, 4:SLAB] += -stencil_len[1:]
            column[:, 4:7] -= st_len
            column[:, 8:11] += st_len
            g_end = np.minimum(4 * vertex + 11, 4 * N - 1)
            place(field, g_start, g_end, column)
    return BandedRect(4 * N - 8, starts, heights, slabs)
