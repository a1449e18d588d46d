"""
The optimization variable ``p``: which rest-shape and stiffness parameters
are optimized, in which order, and within which bounds.

Per interior vertex ``i`` (``1 <= i <= N - 2``) the full layout holds seven
columns, interleaved so that the Hessian of the optimization stays banded::

    (kappa0_i, kappa1_i, beta_i, twist_i, gamma_i, length_i, alpha_i)

``kappa0``/``kappa1`` are the two reduced rest curvature slots (the slots of
the second incident edge are kept synchronized), ``twist`` the rest twist,
``length`` the rest length of edge ``i`` and ``alpha``, ``beta``, ``gamma``
the scaled stretching, bending and twisting stiffnesses. The rest length of
edge 0 is never optimized.

::

    import sagfree.parameters as par

    layout = par.ParamLayout.from_options(30)
    layout.n_params                  # 196
    layout.column("length", 1)      # 5

    rest_only = par.ParamLayout.from_options(30, rest_shape_only=True)
    rest_only.fields                 # ('kappa0', 'kappa1', 'twist', 'length')

Layouts can also carry all four rest curvature slots
(``curvature_dims=4``) or be ordered block by block
(``interleaved=False``); the latter is only useful to show how much wider
the band of the Hessian becomes without interleaving.

Stiffness coefficients are scaled by a single constant ``s`` so that all
parameters are of order one (:func:`stiffness_scaling`). The bounds of
:func:`compute_bounds` keep lengths and stiffnesses positive and limit how
far rest curvatures and rest twists move from their initial values.
"""

import dataclasses

import numpy as np

STIFFNESS_FIELDS = ("alpha", "beta", "gamma")
"""Fields weighted and bounded as stiffness multipliers."""

CURVATURE_FIELDS = ("kappa0", "kappa1", "kappa2", "kappa3")

_FULL_2D = ("kappa0", "kappa1", "beta", "twist", "gamma", "length", "alpha")
_FULL_4D = (
    "kappa0",
    "kappa1",
    "kappa2",
    "kappa3",
    "beta",
    "twist",
    "gamma",
    "length",
    "alpha",
)
_REST_2D = ("kappa0", "kappa1", "twist", "length")
_REST_4D = ("kappa0", "kappa1", "kappa2", "kappa3", "twist", "length")


def stiffness_scaling(c_st, c_be, c_tw):
    """
    Scale stiffness coefficients to unitless multipliers.

    ``s`` is the mean over interior vertices of
    ``(c_st_i + c_be_i + c_tw_i) / 3``; the multipliers are the coefficients
    divided by ``s``.

    Parameters
    ----------
    c_st : array_like
        Stretching coefficients per edge (length ``N - 1``; edge 0 does not
        enter ``s``) or per interior vertex (length ``N - 2``).
    c_be, c_tw : array_like
        Bending and twisting coefficients per interior vertex.

    Returns
    -------
    (:class:`float`, :class:`numpy.ndarray`, ...)
        ``s`` and the multipliers ``alpha``, ``beta``, ``gamma`` with the
        shapes of the inputs.

    Raises
    ------
    ValueError
        If a coefficient is not positive or the lengths are inconsistent.
    """
    c_st = np.atleast_1d(np.asarray(c_st, dtype=float))
    c_be = np.atleast_1d(np.asarray(c_be, dtype=float))
    c_tw = np.atleast_1d(np.asarray(c_tw, dtype=float))
    if c_be.shape != c_tw.shape:
        raise ValueError("Bending and twisting coefficients differ in length.")
    if c_st.size == c_be.size + 1:
        c_st_inner = c_st[1:]
    elif c_st.size == c_be.size:
        c_st_inner = c_st
    else:
        raise ValueError(
            "Stretching coefficients must be given per edge or per interior "
            "vertex."
        )
    if min(c_st.min(), c_be.min(), c_tw.min()) <= 0:
        raise ValueError("Stiffness coefficients must be positive.")
    s = float(np.mean(c_st_inner + c_be + c_tw) / 3.0)
    return s, c_st / s, c_be / s, c_tw / s


class ParamLayout:
    """
    Column order of the parameter vector for a strand of ``N`` vertices.
    """

    def __init__(self, N, fields=_FULL_2D, interleaved=True):
        """
        Constructor.

        Parameters
        ----------
        N : :class:`int`
            Vertex count of the strand.
        fields : :class:`tuple` (:class:`str`), optional
            Per-vertex field order, by default the full reduced layout.
        interleaved : :class:`bool`, optional
            Interleave fields per vertex (default) or store them block by
            block.

        Raises
        ------
        ValueError
            If ``N < 4`` or a field is unknown or repeated.
        """
        if N < 4:
            raise ValueError("A strand needs at least 4 vertices.")
        known = set(_FULL_4D)
        if not set(fields) <= known or len(set(fields)) != len(fields):
            raise ValueError(f"Invalid parameter fields {fields}.")
        kappas = [f for f in fields if f in CURVATURE_FIELDS]
        if kappas not in (["kappa0", "kappa1"], list(CURVATURE_FIELDS), []):
            raise ValueError(
                "Rest curvature fields must be kappa0, kappa1 or all four "
                "slots."
            )
        self._N = int(N)
        self._fields = tuple(fields)
        self._interleaved = bool(interleaved)

    @classmethod
    def from_options(
        cls, N, rest_shape_only=False, curvature_dims=2, interleaved=True
    ):
        """
        Create one of the standard layouts.

        Parameters
        ----------
        N : :class:`int`
            Vertex count.
        rest_shape_only : :class:`bool`, optional
            Drop the stiffness columns, by default False.
        curvature_dims : :class:`int`, optional
            2 for the reduced rest curvature (default) or 4.
        interleaved : :class:`bool`, optional
            See :class:`ParamLayout`.

        Returns
        -------
        :class:`ParamLayout`
        """
        if curvature_dims == 2:
            fields = _REST_2D if rest_shape_only else _FULL_2D
        elif curvature_dims == 4:
            fields = _REST_4D if rest_shape_only else _FULL_4D
        else:
            raise ValueError("The curvature dimension must be 2 or 4.")
        return cls(N, fields, interleaved)

    @property
    def N(self):
        """Vertex count."""

        return self._N

    @property
    def fields(self):
        """Per-vertex field order."""

        return self._fields

    @property
    def interleaved(self):
        """True when fields are interleaved per vertex."""

        return self._interleaved

    @property
    def n_vertices(self):
        """Number of interior vertices, ``N - 2``."""

        return self._N - 2

    @property
    def n_params(self):
        """Total column count."""

        return len(self._fields) * self.n_vertices

    @property
    def reduced_curvature(self):
        """True when only two rest curvature slots are optimized."""

        return "kappa0" in self._fields and "kappa2" not in self._fields

    @property
    def has_stiffness(self):
        """True when stiffness multipliers are optimized."""

        return any(f in self._fields for f in STIFFNESS_FIELDS)

    def columns(self, field):
        """
        Columns of ``field`` for the interior vertices ``1 .. N - 2``.

        Parameters
        ----------
        field : :class:`str`

        Returns
        -------
        :class:`numpy.ndarray` of :class:`int`

        Raises
        ------
        KeyError
            If the layout does not carry ``field``.
        """
        if field not in self._fields:
            raise KeyError(f"The layout has no `{field}` field.")
        k = self._fields.index(field)
        nv, nf = self.n_vertices, len(self._fields)
        if self._interleaved:
            return np.arange(nv) * nf + k
        return k * nv + np.arange(nv)

    def column(self, field, vertex):
        """
        Column of ``field`` at interior vertex ``vertex``.

        Parameters
        ----------
        field : :class:`str`
        vertex : :class:`int`
            Vertex index in ``1 .. N - 2``.

        Returns
        -------
        :class:`int`
        """
        if not 1 <= vertex <= self._N - 2:
            raise IndexError(f"Vertex {vertex} is not an interior vertex.")
        return int(self.columns(field)[vertex - 1])

    def describe(self, col):
        """
        Field and vertex of a column.

        Returns
        -------
        (:class:`str`, :class:`int`)
        """
        nv, nf = self.n_vertices, len(self._fields)
        if not 0 <= col < self.n_params:
            raise IndexError(f"Column {col} is outside the layout.")
        if self._interleaved:
            return self._fields[col % nf], col // nf + 1
        return self._fields[col // nv], col % nv + 1

    def field_mask(self, *fields):
        """Boolean mask of the columns belonging to ``fields``."""

        mask = np.zeros(self.n_params, dtype=bool)
        for field in fields:
            if field in self._fields:
                mask[self.columns(field)] = True
        return mask

    def pack(self, rest):
        """
        Gather the parameter vector from a rest parameter set.

        Parameters
        ----------
        rest : :class:`~sagfree.strands.RestParams`

        Returns
        -------
        :class:`numpy.ndarray`
        """
        p = np.empty(self.n_params)
        for field in self._fields:
            p[self.columns(field)] = _read_field(rest, field)
        return p

    def unpack(self, p, rest):
        """
        Scatter a parameter vector into a copy of ``rest``.

        Fields missing from the layout keep the values of ``rest``. With the
        reduced curvature layout the slots of the second incident edge are
        synchronized: ``kappa2 = kappa0`` and ``kappa3 = kappa1``.

        Parameters
        ----------
        p : array_like
            Parameter vector.
        rest : :class:`~sagfree.strands.RestParams`
            Template.

        Returns
        -------
        :class:`~sagfree.strands.RestParams`
        """
        p = np.asarray(p, dtype=float)
        if p.shape != (self.n_params,):
            raise ValueError(
                f"Expected {self.n_params} parameters, got {p.size}."
            )
        values = {
            "rest_len": rest.rest_len.copy(),
            "rest_curv": rest.rest_curv.copy(),
            "rest_twist": rest.rest_twist.copy(),
            "alpha": rest.alpha.copy(),
            "beta": rest.beta.copy(),
            "gamma": rest.gamma.copy(),
        }
        for field in self._fields:
            column = p[self.columns(field)]
            if field in CURVATURE_FIELDS:
                values["rest_curv"][:, int(field[-1])] = column
            elif field == "twist":
                values["rest_twist"][:] = column
            elif field == "length":
                values["rest_len"][1:] = column
            elif field == "alpha":
                values["alpha"][1:] = column
            else:
                values[field][:] = column
        if self.reduced_curvature:
            values["rest_curv"][:, 2:] = values["rest_curv"][:, :2]
        return dataclasses.replace(rest, **values)

    def __eq__(self, other):
        if not isinstance(other, ParamLayout):
            return NotImplemented
        return (self._N, self._fields, self._interleaved) == (
            other._N,
            other._fields,
            other._interleaved,
        )

    def __repr__(self):
        return (
            f"ParamLayout(N={self._N}, fields={self._fields}, "
            f"interleaved={self._interleaved})"
        )


def _read_field(rest, field):
    if field in CURVATURE_FIELDS:
        return rest.rest_curv[:, int(field[-1])]
    if field == "twist":
        return rest.rest_twist
    if field == "length":
        return rest.rest_len[1:]
    if field == "alpha":
        return rest.alpha[1:]
    return getattr(rest, field)


def compute_bounds(p0, layout, options):
    """
    Box bounds of the parameter vector around its initial value.

    ========================  ==========================================
    field                     bounds
    ========================  ==========================================
    ``length``                ``[max(eps, lbar_min), inf)``
    ``alpha/beta/gamma``      ``[eps, stiffness_max]``
    ``kappa*``                ``kappa0 -+ mu``
    ``twist``                 ``twist0 -+ eta``
    ========================  ==========================================

    Parameters
    ----------
    p0 : array_like
        Initial parameter vector.
    layout : :class:`ParamLayout`
    options : :class:`~sagfree.optimizer.AlmOptions`
        Supplies ``eps``, ``mu``, ``eta``, ``lbar_min`` and
        ``stiffness_max``.

    Returns
    -------
    (:class:`numpy.ndarray`, :class:`numpy.ndarray`)
        ``p_min`` and ``p_max``.
    """
    p0 = np.asarray(p0, dtype=float)
    lo = np.full(p0.size, -np.inf)
    hi = np.full(p0.size, np.inf)

    lbar_min = options.eps if options.lbar_min is None else options.lbar_min
    length = layout.field_mask("length")
    lo[length] = max(options.eps, lbar_min)

    stiff = layout.field_mask(*STIFFNESS_FIELDS)
    lo[stiff] = options.eps
    hi[stiff] = options.stiffness_max

    kappa = layout.field_mask(*CURVATURE_FIELDS)
    lo[kappa] = p0[kappa] - options.mu
    hi[kappa] = p0[kappa] + options.mu

    twist = layout.field_mask("twist")
    lo[twist] = p0[twist] - options.eta
    hi[twist] = p0[twist] + options.eta
    return lo, hi


def weight_diagonal(layout, w_stiff, w_rest):
    """
    Diagonal of the regularization weight ``W``.

    Parameters
    ----------
    layout : :class:`ParamLayout`
    w_stiff : :class:`float`
        Weight of stiffness columns.
    w_rest : :class:`float`
        Weight of rest-shape columns.

    Returns
    -------
    :class:`numpy.ndarray`
    """
    return np.where(layout.field_mask(*STIFFNESS_FIELDS), w_stiff, w_rest)


class ParamVector:
    """
    A parameter vector with its initial snapshot and box bounds.
    """

    def __init__(self, values, p0, lo, hi, layout):
        """
        Constructor.

        Parameters
        ----------
        values : array_like
            Current iterate; projected into ``[lo, hi]``.
        p0 : array_like
            Initial snapshot used by the regularizer.
        lo, hi : array_like
            Bounds.
        layout : :class:`ParamLayout`

        Raises
        ------
        ValueError
            If the sizes disagree or ``lo > hi`` somewhere.
        """
        self.p0 = np.array(p0, dtype=float)
        self.lo = np.array(lo, dtype=float)
        self.hi = np.array(hi, dtype=float)
        self.layout = layout
        n = layout.n_params
        if not (self.p0.shape == self.lo.shape == self.hi.shape == (n,)):
            raise ValueError(f"Parameter arrays must have length {n}.")
        if np.any(self.lo > self.hi):
            raise ValueError("Lower bounds exceed upper bounds.")
        self.values = values

    @property
    def values(self):
        """Current iterate, always within the bounds."""

        return self._values

    @values.setter
    def values(self, values):
        self._values = self.project(values)

    def project(self, x):
        """Clamp ``x`` into the bounds."""

        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def is_feasible(self, x=None):
        """Exact bound check of ``x`` (default the current values)."""

        x = self._values if x is None else np.asarray(x)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))
