"""
Symmetric banded matrices, their square-root free factorization and the
filtered triangular solves behind active-set Cholesky preconditioning.

Storage
-------

A :class:`BandedSym` stores only its lower band, one diagonal per row of
:attr:`BandedSym.bands` (diagonal-major, the LAPACK "lower" band layout
used by :func:`scipy.linalg.solveh_banded`)::

    bands[k, j] == A[j + k, j]      for 0 <= k <= hbw, j + k < n

Entries with ``j + k >= n`` are padding and always zero. A matrix is
usually built from coordinate entries with :func:`assemble`::

    import sagfree.banded as bd

    A = bd.assemble(
        3, 1, [(0, 0, 2), (1, 0, -1), (1, 1, 2), (2, 1, -1), (2, 2, 2)]
    )
    A.matvec([1, 1, 1])     # array([1., 0., 1.])

Factorization
-------------

:func:`ldlt_factorize` computes ``A = L D Lᵀ`` with unit lower ``L`` inside
the band of ``A``. A pivot below ``1e-12`` times its own diagonal entry
``|A_jj|`` is clamped to that floor instead of failing and counted in
:attr:`LdlFactor.clamp_count`. Zero diagonal entries fall back to ``1e-12``
times the largest diagonal magnitude, so badly scaled matrices keep their
small but legitimate pivots::

    F = bd.ldlt_factorize(A)
    bd.solve(F, [1, 0, 1])     # array([1., 1., 1.])

Filtered solves
---------------

Given an :class:`ActiveSet`, :func:`solve_filtered` runs the forward and
backward substitutions on the free DOFs only. Active rows are skipped and
return exact zeros, and the map ``r -> z`` stays symmetric, so the result
can precondition conjugate gradients restricted to the free face::

    a = bd.ActiveSet([0, -1, 0])
    z = bd.solve_filtered(F, r, a)     # z[1] == 0.0
"""

import logging

import numpy as np
import scipy.io
import scipy.sparse

from .exceptions import (
    BadDimensionError,
    DimensionMismatchError,
    OutOfBandError,
)

logger = logging.getLogger(__name__)


class BandedSym:
    """
    A symmetric matrix stored by its lower band.
    """

    def __init__(self, bands):
        """
        Constructor.

        Parameters
        ----------
        bands : :class:`numpy.ndarray`
            Array of shape ``(hbw + 1, n)`` with ``bands[k, j] = A[j + k, j]``.

        Raises
        ------
        BadDimensionError
            If the shape does not describe a band with ``0 <= hbw < n``.
        """
        bands = np.array(bands, dtype=float, ndmin=2)
        if bands.ndim != 2 or bands.shape[1] < 1:
            raise BadDimensionError("A banded matrix needs n >= 1.")
        if bands.shape[0] > bands.shape[1]:
            raise BadDimensionError(
                f"The half-bandwidth {bands.shape[0] - 1} must be smaller "
                f"than the dimension {bands.shape[1]}."
            )
        for k in range(1, bands.shape[0]):
            bands[k, bands.shape[1] - k :] = 0.0
        self._bands = bands

    @classmethod
    def zeros(cls, n, hbw):
        """
        Create a zero matrix.

        Parameters
        ----------
        n : :class:`int`
            Dimension.
        hbw : :class:`int`
            Half-bandwidth.

        Returns
        -------
        :class:`BandedSym`
        """
        _check_shape(n, hbw)
        return cls(np.zeros((hbw + 1, n)))

    @classmethod
    def from_dense(cls, A, hbw=None):
        """
        Create from a dense symmetric matrix, reading its lower triangle.

        Parameters
        ----------
        A : array_like
            Square matrix.
        hbw : :class:`int`, optional
            Half-bandwidth. By default, the smallest band that holds every
            nonzero of the lower triangle.

        Returns
        -------
        :class:`BandedSym`

        Raises
        ------
        OutOfBandError
            If a nonzero lies outside the requested band.
        """
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise BadDimensionError("A dense matrix must be square.")
        n = A.shape[0]
        rows, cols = np.nonzero(np.tril(A))
        width = int(np.max(rows - cols)) if rows.size else 0
        if hbw is None:
            hbw = width
        elif width > hbw:
            i = int(np.argmax(rows - cols))
            raise OutOfBandError(int(rows[i]), int(cols[i]), hbw)
        _check_shape(n, hbw)
        bands = np.zeros((hbw + 1, n))
        for k in range(hbw + 1):
            bands[k, : n - k] = np.diagonal(A, -k)
        return cls(bands)

    @property
    def n(self):
        """Dimension as an :class:`int`."""

        return self._bands.shape[1]

    @property
    def hbw(self):
        """Number of stored sub-diagonals as an :class:`int`."""

        return self._bands.shape[0] - 1

    @property
    def bands(self):
        """A read-only view of the band storage."""

        view = self._bands.view()
        view.flags.writeable = False
        return view

    def diagonal(self):
        """
        Main diagonal.

        Returns
        -------
        :class:`numpy.ndarray`
        """
        return self._bands[0].copy()

    def with_diagonal_added(self, d):
        """
        Return ``A + diag(d)``.

        Parameters
        ----------
        d : array_like or :class:`float`
            Values added to the diagonal.

        Returns
        -------
        :class:`BandedSym`
        """
        bands = self._bands.copy()
        bands[0] += d
        return BandedSym(bands)

    def scaled(self, factor):
        """Return ``factor * A``."""

        return BandedSym(factor * self._bands)

    def scaled_symmetric(self, d):
        """
        Return ``diag(d) A diag(d)``.

        Parameters
        ----------
        d : array_like
            Vector of length :attr:`n`.

        Returns
        -------
        :class:`BandedSym`

        Raises
        ------
        DimensionMismatchError
            If ``len(d) != n``.
        """
        d = np.asarray(d, dtype=float)
        n = self.n
        if d.shape != (n,):
            raise DimensionMismatchError(n, d.size)
        bands = self._bands.copy()
        for k in range(self.hbw + 1):
            bands[k, : n - k] *= d[k:] * d[: n - k]
        return BandedSym(bands)

    def matvec(self, x):
        """
        Product ``A x``.

        Parameters
        ----------
        x : array_like
            Vector of length :attr:`n`.

        Returns
        -------
        :class:`numpy.ndarray`

        Raises
        ------
        DimensionMismatchError
            If ``len(x) != n``.
        """
        x = np.asarray(x, dtype=float)
        n = self.n
        if x.shape != (n,):
            raise DimensionMismatchError(n, x.size)
        ab = self._bands
        y = ab[0] * x
        for k in range(1, self.hbw + 1):
            y[k:] += ab[k, : n - k] * x[: n - k]
            y[: n - k] += ab[k, : n - k] * x[k:]
        return y

    def to_dense(self):
        """
        Dense copy.

        Returns
        -------
        :class:`numpy.ndarray`
        """
        return self.to_sparse().toarray()

    def to_sparse(self):
        """
        Copy as a :class:`scipy.sparse.csr_matrix` holding both triangles.

        Returns
        -------
        :class:`scipy.sparse.csr_matrix`
        """
        n = self.n
        diags = [self._bands[0]]
        offsets = [0]
        for k in range(1, self.hbw + 1):
            diags += [self._bands[k, : n - k], self._bands[k, : n - k]]
            offsets += [-k, k]
        return scipy.sparse.diags(diags, offsets, shape=(n, n), format="csr")

    def __repr__(self):
        return f"BandedSym(n={self.n}, hbw={self.hbw})"


class LdlFactor:
    """
    The factorization ``A = L D Lᵀ`` of a :class:`BandedSym`.

    ``L`` is unit lower triangular with the half-bandwidth of ``A``; its unit
    diagonal is implicit and its sub-diagonals are stored like
    :attr:`BandedSym.bands` without the main diagonal::

        lower[k - 1, j] == L[j + k, j]      for 1 <= k <= hbw
    """

    def __init__(self, lower, diag, clamp_count=0):
        """
        Constructor.

        Parameters
        ----------
        lower : :class:`numpy.ndarray`
            Sub-diagonals of ``L``, shape ``(hbw, n)``.
        diag : :class:`numpy.ndarray`
            Pivots ``D``, shape ``(n,)``.
        clamp_count : :class:`int`, optional
            Number of clamped pivots, by default 0.
        """
        self._lower = np.asarray(lower, dtype=float).reshape(-1, len(diag))
        self._diag = np.asarray(diag, dtype=float)
        self._clamp_count = int(clamp_count)
        n, hbw = self.n, self.hbw
        # Row-major copy of L for the forward sweep:
        # rows[i, k - 1] == L[i, i - k]
        rows = np.zeros((n, hbw))
        for k in range(1, hbw + 1):
            rows[k:, k - 1] = self._lower[k - 1, : n - k]
        self._rows = rows

    @property
    def n(self):
        """Dimension as an :class:`int`."""

        return self._diag.size

    @property
    def hbw(self):
        """Half-bandwidth as an :class:`int`."""

        return self._lower.shape[0]

    @property
    def lower(self):
        """Sub-diagonals of the unit lower factor."""

        return self._lower.copy()

    @property
    def diag(self):
        """Pivots ``D``."""

        return self._diag.copy()

    @property
    def clamp_count(self):
        """Number of pivots clamped to the pivot floor."""

        return self._clamp_count

    def lower_dense(self):
        """
        Dense unit lower factor ``L``.

        Returns
        -------
        :class:`numpy.ndarray`
        """
        n = self.n
        L = np.eye(n)
        for k in range(1, self.hbw + 1):
            L += np.diag(self._lower[k - 1, : n - k], -k)
        return L

    def reconstruct(self):
        """
        Rebuild ``L D Lᵀ`` as a :class:`BandedSym`.

        Returns
        -------
        :class:`BandedSym`
        """
        L = self.lower_dense()
        return BandedSym.from_dense((L * self._diag) @ L.T, self.hbw)

    def _substitute(self, r, free):
        n = self.n
        r = np.asarray(r, dtype=float)
        if r.shape != (n,):
            raise DimensionMismatchError(n, r.size)
        if free is not None and free.shape != (n,):
            raise DimensionMismatchError(n, free.size, "active set")
        hbw = self.hbw
        rows, lower, diag = self._rows, self._lower, self._diag

        # forward sweep L w = S r, merged with the scaling y = D^-1 w
        w = np.zeros(n)
        for i in range(n):
            if free is not None and not free[i]:
                continue
            m = min(hbw, i)
            if m:
                w[i] = r[i] - rows[i, :m] @ w[i - 1 :: -1][:m]
            else:
                w[i] = r[i]
        z = w / diag

        # backward sweep Lᵀ z = y; active entries of z stay exactly zero
        for i in range(n - 2, -1, -1):
            if free is not None and not free[i]:
                continue
            m = min(hbw, n - 1 - i)
            if m:
                z[i] -= lower[:m, i] @ z[i + 1 : i + 1 + m]
        return z

    def __repr__(self):
        return (
            f"LdlFactor(n={self.n}, hbw={self.hbw}, "
            f"clamp_count={self.clamp_count})"
        )


class ActiveSet:
    """
    Bound activity of every DOF: ``-1`` at the lower bound, ``+1`` at the
    upper bound, ``0`` free. The induced selection matrix keeps the free
    DOFs, ``S_ii = 1 - |a_i|``.
    """

    def __init__(self, flags):
        """
        Constructor.

        Parameters
        ----------
        flags : array_like of :class:`int`
            Values in ``{-1, 0, 1}``.

        Raises
        ------
        ValueError
            If a flag is not one of -1, 0 or 1.
        """
        flags = np.array(flags, dtype=np.int8).ravel()
        if not np.all(np.isin(flags, (-1, 0, 1))):
            raise ValueError("Active set flags must be -1, 0 or 1.")
        self._flags = flags

    @classmethod
    def empty(cls, n):
        """An active set with every DOF free."""

        return cls(np.zeros(n, dtype=np.int8))

    @classmethod
    def from_bounds(cls, x, lo, hi):
        """
        Detect the DOFs sitting at a bound.

        A DOF is at a bound when ``|x_i - bound| <= 1e-14 * max(1, |bound|)``.
        A DOF at both bounds (``lo == hi``) is reported at the lower one.

        Parameters
        ----------
        x, lo, hi : array_like
            Iterate and bounds; infinite bounds are never active.

        Returns
        -------
        :class:`ActiveSet`
        """
        x = np.asarray(x, dtype=float)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        with np.errstate(invalid="ignore"):
            at_lo = np.isfinite(lo) & (
                np.abs(x - lo) <= 1e-14 * np.maximum(1.0, np.abs(lo))
            )
            at_hi = np.isfinite(hi) & (
                np.abs(x - hi) <= 1e-14 * np.maximum(1.0, np.abs(hi))
            )
        flags = np.zeros(x.size, dtype=np.int8)
        flags[at_hi] = 1
        flags[at_lo] = -1
        return cls(flags)

    @property
    def flags(self):
        """The flag vector."""

        return self._flags.copy()

    @property
    def free(self):
        """Boolean mask of the free DOFs (the diagonal of ``S``)."""

        return self._flags == 0

    @property
    def n_active(self):
        """Number of DOFs at a bound."""

        return int(np.count_nonzero(self._flags))

    def __len__(self):
        return self._flags.size

    def __eq__(self, other):
        if not isinstance(other, ActiveSet):
            return NotImplemented
        return np.array_equal(self._flags, other._flags)

    def __repr__(self):
        return f"ActiveSet(n={len(self)}, active={self.n_active})"


def _check_shape(n, hbw):
    if n < 1:
        raise BadDimensionError("A banded matrix needs n >= 1.")
    if not 0 <= hbw < n:
        raise BadDimensionError(
            f"The half-bandwidth {hbw} must satisfy 0 <= hbw < {n}."
        )


def assemble(n, hbw, entries):
    """
    Assemble a :class:`BandedSym` from coordinate entries.

    Duplicate coordinates are summed. Upper-triangle coordinates are mirrored
    to the lower triangle.

    Parameters
    ----------
    n : :class:`int`
        Dimension.
    hbw : :class:`int`
        Half-bandwidth.
    entries : iterable of (:class:`int`, :class:`int`, :class:`float`)
        ``(row, col, value)`` triplets.

    Returns
    -------
    :class:`BandedSym`

    Raises
    ------
    BadDimensionError
        If ``n`` or ``hbw`` are invalid or an index lies outside the matrix.
    OutOfBandError
        If ``|row - col| > hbw``.
    """
    _check_shape(n, hbw)
    bands = np.zeros((hbw + 1, n))
    for row, col, value in entries:
        row, col = int(row), int(col)
        if not (0 <= row < n and 0 <= col < n):
            raise BadDimensionError(
                f"Entry ({row}, {col}) lies outside a {n} x {n} matrix."
            )
        if row < col:
            row, col = col, row
        if row - col > hbw:
            raise OutOfBandError(row, col, hbw)
        bands[row - col, col] += value
    return BandedSym(bands)


def matvec(A, x):
    """
    Product ``A x`` of a :class:`BandedSym` and a vector.

    See :meth:`BandedSym.matvec`.
    """
    return A.matvec(x)


def ldlt_factorize(A, pivot_floor=None, pivot_rtol=1e-12):
    """
    Square-root free factorization ``A = L D Lᵀ`` without pivoting.

    The factor keeps the half-bandwidth of ``A``; no fill-in happens outside
    the band. Pivot ``j`` is clamped to its floor, and counted, when it drops
    below ``pivot_rtol * |A_jj|`` (negative pivots included). Rows with a
    zero diagonal use ``pivot_rtol * max|A_ii|`` instead.

    Parameters
    ----------
    A : :class:`BandedSym`
        Symmetric matrix, typically SPD.
    pivot_floor : :class:`float`, optional
        Absolute floor used for every pivot, overriding ``pivot_rtol``.
    pivot_rtol : :class:`float`, optional
        Floor relative to the diagonal entry of the pivot, by default
        ``1e-12``.

    Returns
    -------
    :class:`LdlFactor`

    Raises
    ------
    BadDimensionError
        If ``pivot_floor`` or ``pivot_rtol`` is not positive.
    """
    n, hbw = A.n, A.hbw
    work = np.array(A.bands)
    if pivot_floor is None:
        if not pivot_rtol > 0:
            raise BadDimensionError("The pivot tolerance must be positive.")
        scale = np.abs(work[0])
        fallback = pivot_rtol * float(np.max(scale, initial=0.0))
        floors = np.where(scale > 0, pivot_rtol * scale, fallback)
        floors = np.maximum(floors, np.finfo(float).tiny)
    elif not pivot_floor > 0:
        raise BadDimensionError("The pivot floor must be positive.")
    else:
        floors = np.full(n, float(pivot_floor))

    lower = np.zeros((hbw, n))
    diag = np.empty(n)
    clamp_count = 0
    for j in range(n):
        d = work[0, j]
        if d < floors[j]:
            d = floors[j]
            clamp_count += 1
        diag[j] = d
        m = min(hbw, n - 1 - j)
        if m == 0:
            continue
        col = work[1 : m + 1, j]
        lj = col / d
        lower[:m, j] = lj
        # right-looking update of the trailing band
        for k in range(1, m + 1):
            work[: m - k + 1, j + k] -= col[k - 1] * lj[k - 1 :]

    if clamp_count:
        logger.warning("Clamped %d of %d pivots.", clamp_count, n)
    return LdlFactor(lower, diag, clamp_count)


def solve(F, r):
    """
    Solve ``A z = r`` with a factorization of ``A``.

    Parameters
    ----------
    F : :class:`LdlFactor`
    r : array_like

    Returns
    -------
    :class:`numpy.ndarray`

    Raises
    ------
    DimensionMismatchError
        If ``len(r) != F.n``.
    """
    return F._substitute(r, None)


def solve_filtered(F, r, a):
    """
    Filtered forward and backward substitution with the active set ``a``.

    With ``S`` the selection of the free DOFs::

        y_i = (r_i - sum_{j<i} S_jj L_ij D_jj y_j) / D_ii   if S_ii != 0
        z_i = y_i - sum_{j>i} S_jj L_ji z_j                 if S_ii != 0

    and zero at active DOFs. The map ``r -> z`` is linear and symmetric, and
    for an empty active set it is the exact solve.

    Parameters
    ----------
    F : :class:`LdlFactor`
    r : array_like
    a : :class:`ActiveSet`

    Returns
    -------
    :class:`numpy.ndarray`

    Raises
    ------
    DimensionMismatchError
        If the lengths of ``r`` or ``a`` differ from ``F.n``.
    """
    if len(a) != F.n:
        raise DimensionMismatchError(F.n, len(a), "active set")
    free = a.free
    return F._substitute(r, None if free.all() else free)


def write_matrix_market(target, matrix, comment=""):
    """
    Dump a :class:`BandedSym` or :class:`LdlFactor` in MatrixMarket
    coordinate format.

    A :class:`BandedSym` is written as a symmetric matrix. An
    :class:`LdlFactor` is written as the lower triangular matrix holding
    ``L`` below the diagonal and ``D`` on it.

    Parameters
    ----------
    target : :class:`str` or path-like
        Output file.
    matrix : :class:`BandedSym` or :class:`LdlFactor`
    comment : :class:`str`, optional
        Header comment.
    """
    if isinstance(matrix, BandedSym):
        data = scipy.sparse.tril(matrix.to_sparse()).tocoo()
        scipy.io.mmwrite(target, data, comment=comment, symmetry="symmetric")
    elif isinstance(matrix, LdlFactor):
        packed = matrix.lower_dense() - np.eye(matrix.n) + np.diag(matrix.diag)
        scipy.io.mmwrite(
            target,
            scipy.sparse.coo_matrix(packed),
            comment=comment or "L strictly lower, D on the diagonal",
            symmetry="general",
        )
    else:
        raise TypeError(
            "Expected a BandedSym or an LdlFactor, got "
            f"{type(matrix).__name__}."
        )
