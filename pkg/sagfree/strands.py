"""
Discrete elastic rod strands: material configuration, generalized
coordinates, frames, curvature and twist measures, lumped mass and scene
generators.

Coordinates
-----------

A strand of ``N`` vertices has the generalized coordinates::

    q = (x_0, theta_0, x_1, theta_1, ..., theta_{N-2}, x_{N-1})

with ``4N - 1`` entries: three per vertex position and one angle per edge.
The root is minimally clamped: ``x_0``, ``theta_0`` and ``x_1`` (the first
:data:`N_CLAMPED` entries of ``q``) are prescribed and the remaining
``4N - 8`` DOFs are active.

Each edge carries a reference frame ``(d1, d2)`` orthogonal to its tangent.
The material frame is the reference frame rotated by the edge angle. The
bending of interior vertex ``i`` is measured by the curvature binormal and
its projections on the material frames of both incident edges (a 4-vector
``kappa_i``); the twist ``m_i`` is the angle difference of the incident
edges plus the reference twist between their reference frames.

Scenes
------

Strands are created from a file (see :mod:`sagfree.formats`) or by a scene
generator::

    import sagfree.strands as st

    config, state = st.make_scene("vertical", 30, 1.0)
    state.x[-1]     # array([0., 0., -1.])

Scene generators live in a registry. ``vertical`` hangs from the root in the
direction of gravity, ``horizontal`` extends along +x, ``coil`` is a hanging
helix and ``wavy`` a hanging strand with planar sine-shaped turning. All
produce uniform segment lengths. Scenes use hair-like SI material defaults
that can be overridden by keyword::

    config, state = st.make_scene("coil", 200, 0.5, turns=8, density=1e3)

New generators can be added with :func:`register_scene`. A generator takes
``(N, length, gravity, **kwargs)`` and returns the ``(N, 3)`` vertex array.

Material parameters may be given as :class:`~pint.Quantity` via
:meth:`StrandConfig.from_quantities`::

    from sagfree import Q_

    config = st.StrandConfig.from_quantities(
        30,
        radius=Q_(50, "um"),
        density=Q_(1.3, "g/cm**3"),
        c_be=Q_(1, "GPa"),
    )
"""

import copy
import dataclasses
import logging

import numpy as np

from . import Q_, ureg
from .exceptions import (
    AntiparallelTangentsError,
    BadDimensionError,
    DegenerateEdgeError,
    DimensionMismatchError,
)
from .parameters import stiffness_scaling

logger = logging.getLogger(__name__)

N_CLAMPED = 7
"""Number of clamped generalized coordinates (x_0, theta_0, x_1)."""

STENCIL = 11
"""Size of the bending/twisting stencil (x_{i-1}, theta_{i-1}, x_i,
theta_i, x_{i+1})."""

DEFAULT_STEPS_PER_FRAME = 4


class StrandConfig:
    """
    Material and environment of a strand of ``N`` vertices. Values are SI
    magnitudes.
    """

    def __init__(
        self,
        N,
        radius=5e-5,
        density=1.0,
        c_st=1e9,
        c_be=1e9,
        c_tw=1e9,
        gravity=(0.0, 0.0, -9.81),
        dt=None,
    ):
        """
        Constructor.

        Parameters
        ----------
        N : :class:`int`
            Vertex count, at least 4.
        radius : :class:`float`, optional
            Cross-section radius, by default 5e-5 (m).
        density : :class:`float`, optional
            Mass density, by default 1.0 (kg/m³).
        c_st : :class:`float` or array_like, optional
            Stretching coefficients, scalar or one per edge, by default 1e9.
        c_be : :class:`float` or array_like, optional
            Bending coefficients, scalar or one per interior vertex, by
            default 1e9.
        c_tw : :class:`float` or array_like, optional
            Twisting coefficients, scalar or one per interior vertex, by
            default 1e9.
        gravity : array_like, optional
            Gravity acceleration, by default (0, 0, -9.81).
        dt : :class:`float`, optional
            Forward simulation time step. By default one animation frame
            divided by the default number of steps per frame.

        Raises
        ------
        ValueError
            If a value violates its constraint.
        """
        if int(N) < 4:
            raise BadDimensionError("A strand needs at least 4 vertices.")
        self._N = int(N)
        self.radius = radius
        self.density = density
        self.c_st = c_st
        self.c_be = c_be
        self.c_tw = c_tw
        self.gravity = gravity
        if dt is None:
            dt = (Q_(1, "frame") / DEFAULT_STEPS_PER_FRAME).m_as("s")
        self.dt = dt

    @classmethod
    @ureg.check(
        None,
        None,
        "[length]",
        "[density]",
        "[pressure]",
        "[pressure]",
        "[pressure]",
        None,
        "[time]",
    )
    def from_quantities(
        cls,
        N,
        radius=Q_(50, "um"),
        density=Q_(1.0, "kg/m**3"),
        c_st=Q_(1, "GPa"),
        c_be=Q_(1, "GPa"),
        c_tw=Q_(1, "GPa"),
        gravity=None,
        dt=Q_(1 / DEFAULT_STEPS_PER_FRAME, "frame"),
    ):
        """
        Create from :class:`~pint.Quantity` values.

        Parameters
        ----------
        N : :class:`int`
            Vertex count.
        radius : :class:`~pint.Quantity` [length], optional
        density : :class:`~pint.Quantity` [density], optional
        c_st, c_be, c_tw : :class:`~pint.Quantity` [pressure], optional
            Scalar or array coefficients.
        gravity : :class:`~pint.Quantity` [acceleration], optional
            3-vector, by default 9.81 m/s² along -z.
        dt : :class:`~pint.Quantity` [time], optional

        Returns
        -------
        :class:`StrandConfig`

        Raises
        ------
        pint.DimensionalityError
            If a value does not have the expected dimension.
        """
        if gravity is None:
            gravity = Q_(np.array([0.0, 0.0, -9.81]), "m/s**2")
        return cls(
            N,
            radius=radius.m_as("m"),
            density=density.m_as("kg/m**3"),
            c_st=c_st.m_as("Pa"),
            c_be=c_be.m_as("Pa"),
            c_tw=c_tw.m_as("Pa"),
            gravity=gravity.m_as("m/s**2"),
            dt=dt.m_as("s"),
        )

    @property
    def N(self):
        """Vertex count."""

        return self._N

    @property
    def radius(self):
        """Cross-section radius."""

        return self._radius

    @radius.setter
    def radius(self, value):
        if not value > 0:
            raise ValueError("The radius must be positive.")
        self._radius = float(value)

    @property
    def density(self):
        """Mass density."""

        return self._density

    @density.setter
    def density(self, value):
        if not value > 0:
            raise ValueError("The density must be positive.")
        self._density = float(value)

    @property
    def c_st(self):
        """Stretching coefficients, one per edge."""

        return self._c_st

    @c_st.setter
    def c_st(self, value):
        self._c_st = self._coefficients(value, self._N - 1, "c_st")

    @property
    def c_be(self):
        """Bending coefficients, one per interior vertex."""

        return self._c_be

    @c_be.setter
    def c_be(self, value):
        self._c_be = self._coefficients(value, self._N - 2, "c_be")

    @property
    def c_tw(self):
        """Twisting coefficients, one per interior vertex."""

        return self._c_tw

    @c_tw.setter
    def c_tw(self, value):
        self._c_tw = self._coefficients(value, self._N - 2, "c_tw")

    @property
    def gravity(self):
        """Gravity acceleration vector."""

        return self._gravity

    @gravity.setter
    def gravity(self, value):
        g = np.array(value, dtype=float)
        if g.shape != (3,):
            raise ValueError("Gravity must be a 3-vector.")
        self._gravity = g

    @property
    def dt(self):
        """Forward simulation time step."""

        return self._dt

    @dt.setter
    def dt(self, value):
        if not value > 0:
            raise ValueError("The time step must be positive.")
        self._dt = float(value)

    @property
    def area(self):
        """Cross-section area ``pi r²``."""

        return np.pi * self._radius**2

    @staticmethod
    def _coefficients(value, size, name):
        c = np.array(value, dtype=float)
        if c.ndim == 0:
            c = np.full(size, float(c))
        if c.shape != (size,):
            raise ValueError(
                f"{name} must be a scalar or have {size} entries."
            )
        if np.any(c <= 0):
            raise ValueError("Stiffness coefficients must be positive.")
        return c

    def copy(self):
        """Deep copy."""

        return copy.deepcopy(self)

    def __repr__(self):
        return (
            f"StrandConfig(N={self._N}, radius={self._radius:g}, "
            f"density={self._density:g})"
        )


@dataclasses.dataclass(frozen=True)
class RestParams:
    """
    Rest shape and stiffness parameters of a strand.

    ``rest_len`` and ``alpha`` have one entry per edge (edge 0 included,
    although it carries no stretching energy); ``rest_curv`` (shape
    ``(N - 2, 4)``), ``rest_twist``, ``beta`` and ``gamma`` have one entry per
    interior vertex, index ``i - 1`` for vertex ``i``. ``s`` is the global
    stiffness scale, so the physical coefficients are ``s * alpha`` etc.
    """

    rest_len: np.ndarray
    rest_curv: np.ndarray
    rest_twist: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    s: float

    def __post_init__(self):
        for name in ("rest_len", "rest_curv", "rest_twist"):
            object.__setattr__(
                self, name, np.array(getattr(self, name), dtype=float)
            )
        for name in ("alpha", "beta", "gamma"):
            object.__setattr__(
                self, name, np.array(getattr(self, name), dtype=float)
            )
        n_edges = self.rest_len.size
        if n_edges < 3:
            raise BadDimensionError("A strand needs at least 4 vertices.")
        if self.rest_curv.shape != (n_edges - 1, 4):
            raise DimensionMismatchError(
                n_edges - 1, self.rest_curv.shape[0], "rest curvature array"
            )
        for name, size in (
            ("rest_twist", n_edges - 1),
            ("alpha", n_edges),
            ("beta", n_edges - 1),
            ("gamma", n_edges - 1),
        ):
            if getattr(self, name).shape != (size,):
                raise DimensionMismatchError(
                    size, getattr(self, name).size, f"{name} array"
                )
        if np.any(self.rest_len <= 0):
            raise ValueError("Rest lengths must be positive.")
        if not self.s > 0:
            raise ValueError("The stiffness scale must be positive.")

    @property
    def N(self):
        """Vertex count."""

        return self.rest_len.size + 1

    def synchronized(self):
        """
        Copy with ``kappa2 = kappa0`` and ``kappa3 = kappa1`` at every
        interior vertex.
        """
        curv = self.rest_curv.copy()
        curv[:, 2:] = curv[:, :2]
        return dataclasses.replace(self, rest_curv=curv)


class MassMatrix:
    """
    Diagonal generalized mass over the ``4N - 1`` coordinates.
    """

    def __init__(self, diag):
        """
        Constructor.

        Parameters
        ----------
        diag : array_like
            Positive diagonal entries.

        Raises
        ------
        ValueError
            If an entry is not positive.
        """
        diag = np.array(diag, dtype=float)
        if np.any(diag <= 0):
            raise ValueError("Mass entries must be positive.")
        self._diag = diag

    @property
    def diag(self):
        """Diagonal over all generalized coordinates."""

        return self._diag.copy()

    @property
    def active(self):
        """Diagonal over the active DOFs."""

        return self._diag[N_CLAMPED:].copy()

    @property
    def vertex_masses(self):
        """Lumped mass of every vertex."""

        n_vertices = (self._diag.size + 1) // 4
        return self._diag[4 * np.arange(n_vertices)]


class StrandState:
    """
    Generalized positions, frames and velocities of a strand.
    """

    def __init__(self, x, theta, d1, d2, ref_twist, velocity=None):
        """
        Constructor.

        Parameters
        ----------
        x : array_like
            Vertex positions, shape ``(N, 3)``.
        theta : array_like
            Edge angles, shape ``(N - 1,)``.
        d1, d2 : array_like
            Reference directors per edge, shape ``(N - 1, 3)``.
        ref_twist : array_like
            Reference twist per interior vertex, shape ``(N - 2,)``.
        velocity : array_like, optional
            Generalized velocity, shape ``(4N - 1,)``; zero by default.

        Raises
        ------
        DegenerateEdgeError
            If an edge has zero length.
        ValueError
            If the frames are not orthonormal, right-handed and orthogonal
            to the tangents within 1e-12.
        """
        self._x = np.array(x, dtype=float).reshape(-1, 3)
        N = self._x.shape[0]
        if N < 4:
            raise BadDimensionError("A strand needs at least 4 vertices.")
        self._theta = _shaped(theta, (N - 1,), "edge angle array")
        self._d1 = _shaped(d1, (N - 1, 3), "director array")
        self._d2 = _shaped(d2, (N - 1, 3), "director array")
        self._ref_twist = _shaped(ref_twist, (N - 2,), "reference twist array")
        if velocity is None:
            velocity = np.zeros(4 * N - 1)
        self._velocity = _shaped(velocity, (4 * N - 1,), "velocity")

        t, _ = tangents_lengths(self._x)
        tol = 1e-12
        if (
            np.max(np.abs(_norm(self._d1) - 1.0)) > tol
            or np.max(np.abs(_norm(self._d2) - 1.0)) > tol
            or np.max(np.abs(_dot(self._d1, t))) > tol
            or np.max(np.abs(_dot(self._d2, t))) > tol
            or np.max(np.abs(self._d2 - np.cross(t, self._d1))) > tol
        ):
            raise ValueError(
                "Reference frames must be orthonormal, right-handed and "
                "orthogonal to the tangents."
            )

    @classmethod
    def from_positions(cls, x, theta=None, velocity=None):
        """
        Create a state with space-parallel reference frames.

        The first director is the component of a fixed axis orthogonal to the
        first tangent; it is then parallel transported along the strand, so
        every reference twist is zero.

        Parameters
        ----------
        x : array_like
            Vertex positions, shape ``(N, 3)``.
        theta : array_like, optional
            Edge angles, zero by default.
        velocity : array_like, optional
            Generalized velocity, zero by default.

        Returns
        -------
        :class:`StrandState`
        """
        x = np.array(x, dtype=float).reshape(-1, 3)
        N = x.shape[0]
        if N < 4:
            raise BadDimensionError("A strand needs at least 4 vertices.")
        t, _ = tangents_lengths(x)
        d1 = np.empty_like(t)
        d1[0] = _perpendicular(t[0])
        for e in range(1, N - 1):
            d1[e] = parallel_transport(d1[e - 1], t[e - 1], t[e])
        d1 = _orthonormalize(d1, t)
        d2 = np.cross(t, d1)
        if theta is None:
            theta = np.zeros(N - 1)
        ref_twist = reference_twist(d1, t)
        return cls(x, theta, d1, d2, ref_twist, velocity)

    @property
    def N(self):
        """Vertex count."""

        return self._x.shape[0]

    @property
    def x(self):
        """Vertex positions, shape ``(N, 3)``."""

        return self._x.copy()

    @property
    def theta(self):
        """Edge angles."""

        return self._theta.copy()

    @property
    def d1(self):
        """First reference directors."""

        return self._d1.copy()

    @property
    def d2(self):
        """Second reference directors."""

        return self._d2.copy()

    @property
    def ref_twist(self):
        """Reference twist per interior vertex."""

        return self._ref_twist.copy()

    @property
    def velocity(self):
        """Generalized velocity."""

        return self._velocity.copy()

    @property
    def q(self):
        """Generalized coordinates ``(x_0, theta_0, x_1, ...)``."""

        return pack_q(self._x, self._theta)

    @property
    def length(self):
        """Total arc length."""

        return float(np.sum(_norm(np.diff(self._x, axis=0))))

    def with_q(self, q, velocity=None):
        """
        Move the strand to new generalized coordinates.

        Reference frames follow the tangents by time-parallel transport and
        the reference twists are recomputed, continuous with the current
        ones.

        Parameters
        ----------
        q : array_like
            New generalized coordinates.
        velocity : array_like, optional
            New generalized velocity; unchanged by default.

        Returns
        -------
        :class:`StrandState`
        """
        x, theta = unpack_q(q, self.N)
        t_old, _ = tangents_lengths(self._x)
        t_new, _ = tangents_lengths(x)
        d1 = _orthonormalize(
            parallel_transport(self._d1, t_old, t_new), t_new
        )
        d2 = np.cross(t_new, d1)
        ref_twist = reference_twist(d1, t_new, previous=self._ref_twist)
        if velocity is None:
            velocity = self._velocity
        return StrandState(x, theta, d1, d2, ref_twist, velocity)

    def with_velocity(self, velocity):
        """Copy with a new generalized velocity."""

        return StrandState(
            self._x,
            self._theta,
            self._d1,
            self._d2,
            self._ref_twist,
            velocity,
        )

    def rotated(self, R):
        """
        Rigidly rotate positions, frames and velocities about the origin.

        Parameters
        ----------
        R : array_like
            3 x 3 rotation matrix.

        Returns
        -------
        :class:`StrandState`
        """
        R = np.asarray(R, dtype=float)
        v_x, v_theta = unpack_q(self._velocity, self.N)
        velocity = pack_q(v_x @ R.T, v_theta)
        return StrandState(
            self._x @ R.T,
            self._theta,
            self._d1 @ R.T,
            self._d2 @ R.T,
            self._ref_twist,
            velocity,
        )

    def __repr__(self):
        return f"StrandState(N={self.N}, length={self.length:g})"


class StrandGeometry:
    """
    Derived geometry of a state: edge lengths and tangents, material frames,
    curvature binormals, 4D curvatures and twists with their gradients over
    the 11-entry stencil of every interior vertex.

    Arrays indexed by interior vertex use index ``i - 1`` for vertex ``i``.
    """

    def __init__(self, state):
        """
        Constructor.

        Parameters
        ----------
        state : :class:`StrandState`

        Raises
        ------
        DegenerateEdgeError
        AntiparallelTangentsError
        """
        self.N = state.N
        self.tangents, self.lengths = tangents_lengths(state.x)
        self.m1, self.m2 = material_frames(state.d1, state.d2, state.theta)
        self.kb, self.chi = curvature_binormal(self.tangents)
        self.kappa = curvature4(self.tangents, self.m1, self.m2)
        self.twist = twist(state.theta, state.ref_twist)
        self.grad_kappa = curvature_gradient(
            self.tangents,
            self.lengths,
            self.m1,
            self.m2,
            self.kb,
            self.chi,
            self.kappa,
        )
        self.grad_twist = twist_gradient(self.kb, self.lengths)

    @property
    def stencil_index(self):
        """Global coordinate indices of each vertex stencil, ``(N-2, 11)``."""

        return stencil_index(self.N)


def _shaped(value, shape, what):
    arr = np.array(value, dtype=float)
    if arr.shape != shape:
        raise DimensionMismatchError(
            int(np.prod(shape)), arr.size, what
        )
    return arr


def _norm(v):
    return np.linalg.norm(v, axis=-1)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _perpendicular(t):
    axis = np.array([0.0, 0.0, 1.0])
    if abs(t[2]) > 0.9:
        axis = np.array([1.0, 0.0, 0.0])
    d = axis - np.dot(axis, t) * t
    return d / np.linalg.norm(d)


def _orthonormalize(d1, t):
    d1 = d1 - _dot(d1, t)[..., None] * t
    return d1 / _norm(d1)[..., None]


def pack_q(x, theta):
    """
    Interleave positions and edge angles into generalized coordinates.

    Parameters
    ----------
    x : array_like
        Shape ``(N, 3)``.
    theta : array_like
        Shape ``(N - 1,)``.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(4N - 1,)``.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    N = x.shape[0]
    q = np.empty(4 * N - 1)
    q[vertex_index(N)] = x
    q[4 * np.arange(N - 1) + 3] = theta
    return q


def unpack_q(q, N):
    """
    Split generalized coordinates into positions and edge angles.

    Returns
    -------
    (:class:`numpy.ndarray`, :class:`numpy.ndarray`)
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (4 * N - 1,):
        raise DimensionMismatchError(4 * N - 1, q.size, "coordinate vector")
    return q[vertex_index(N)], q[4 * np.arange(N - 1) + 3].copy()


def vertex_index(N):
    """Coordinate indices of the vertex positions, shape ``(N, 3)``."""

    return 4 * np.arange(N)[:, None] + np.arange(3)


def stencil_index(N):
    """
    Coordinate indices of the stencil of every interior vertex.

    The stencil of vertex ``i`` is ``(x_{i-1}, theta_{i-1}, x_i, theta_i,
    x_{i+1})``, the coordinates ``4i - 4 .. 4i + 6``.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(N - 2, 11)``.
    """
    return 4 * np.arange(N - 2)[:, None] + np.arange(STENCIL)


def tangents_lengths(x):
    """
    Unit tangents and lengths of the edges.

    Parameters
    ----------
    x : array_like
        Vertex positions, shape ``(N, 3)``.

    Returns
    -------
    (:class:`numpy.ndarray`, :class:`numpy.ndarray`)
        Tangents ``(N - 1, 3)`` and lengths ``(N - 1,)``.

    Raises
    ------
    DegenerateEdgeError
        If an edge is shorter than ``1e-12`` times the strand length.
    """
    e = np.diff(np.asarray(x, dtype=float).reshape(-1, 3), axis=0)
    lengths = _norm(e)
    short = np.nonzero(lengths < 1e-12 * np.sum(lengths))[0]
    if short.size or not np.sum(lengths) > 0:
        raise DegenerateEdgeError(int(short[0]) if short.size else 0)
    return e / lengths[:, None], lengths


def parallel_transport(v, t_from, t_to):
    """
    Rotate ``v`` by the minimal rotation taking ``t_from`` to ``t_to``.

    The rotation axis is ``t_from x t_to``. For antiparallel tangents the
    minimal rotation is not unique; the rotation by pi about the axis
    orthogonal to ``t_from`` chosen by a fixed rule is used instead.
    Arguments broadcast over leading dimensions.

    Parameters
    ----------
    v : array_like
        Vector(s) to transport.
    t_from, t_to : array_like
        Unit tangents.

    Returns
    -------
    :class:`numpy.ndarray`
    """
    v = np.asarray(v, dtype=float)
    t_from = np.asarray(t_from, dtype=float)
    t_to = np.asarray(t_to, dtype=float)
    v, t_from, t_to = np.broadcast_arrays(v, t_from, t_to)
    b = np.cross(t_from, t_to)
    sin = _norm(b)
    cos = _dot(t_from, t_to)

    out = v.copy()
    turn = sin > 1e-15
    if np.any(turn):
        n = b[turn] / sin[turn][:, None] if b.ndim > 1 else b / sin
        t1, t2, w = t_from[turn], t_to[turn], v[turn]
        if b.ndim == 1:
            t1, t2, w = t_from, t_to, v
        p1 = np.cross(t1, n)
        p2 = np.cross(t2, n)
        moved = (
            _dot(w, t1)[..., None] * t2
            + _dot(w, n)[..., None] * n
            + _dot(w, p1)[..., None] * p2
        )
        if b.ndim == 1:
            out = moved
        else:
            out[turn] = moved

    flip = ~turn & (cos < 0)
    if np.any(flip):
        if b.ndim == 1:
            n = _perpendicular(t_from)
            out = 2.0 * np.dot(v, n) * n - v
        else:
            for k in np.nonzero(flip)[0]:
                n = _perpendicular(t_from[k])
                out[k] = 2.0 * np.dot(v[k], n) * n - v[k]
    return out


def material_frames(d1, d2, theta):
    """
    Rotate reference frames by the edge angles.

    ``m1 = cos(theta) d1 + sin(theta) d2`` and
    ``m2 = -sin(theta) d1 + cos(theta) d2``.

    Returns
    -------
    (:class:`numpy.ndarray`, :class:`numpy.ndarray`)
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    c = np.cos(theta)[..., None]
    s = np.sin(theta)[..., None]
    return c * d1 + s * d2, -s * d1 + c * d2


def curvature_binormal(t):
    """
    Curvature binormals ``2 (t_{i-1} x t_i) / (1 + t_{i-1} . t_i)``.

    Parameters
    ----------
    t : array_like
        Unit tangents, shape ``(N - 1, 3)``.

    Returns
    -------
    (:class:`numpy.ndarray`, :class:`numpy.ndarray`)
        Binormals ``(N - 2, 3)`` and ``chi = 1 + t_{i-1} . t_i``.

    Raises
    ------
    AntiparallelTangentsError
        If ``chi < 1e-10`` at some vertex.
    """
    t = np.asarray(t, dtype=float)
    chi = 1.0 + _dot(t[:-1], t[1:])
    bad = np.nonzero(chi < 1e-10)[0]
    if bad.size:
        raise AntiparallelTangentsError(int(bad[0]) + 1)
    kb = 2.0 * np.cross(t[:-1], t[1:]) / chi[:, None]
    return kb, chi


def curvature4(t, m1, m2):
    """
    4D curvature of every interior vertex.

    ``kappa_i = (kb . m2^{i-1}, -kb . m1^{i-1}, kb . m2^i, -kb . m1^i)``.

    Parameters
    ----------
    t : array_like
        Unit tangents, shape ``(N - 1, 3)``.
    m1, m2 : array_like
        Material frames, shape ``(N - 1, 3)``.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(N - 2, 4)``.

    Raises
    ------
    AntiparallelTangentsError
    """
    kb, _ = curvature_binormal(t)
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    return np.stack(
        [
            _dot(kb, m2[:-1]),
            -_dot(kb, m1[:-1]),
            _dot(kb, m2[1:]),
            -_dot(kb, m1[1:]),
        ],
        axis=1,
    )


def signed_angle(u, v, axis):
    """Angle from ``u`` to ``v`` measured about ``axis``."""

    return np.arctan2(_dot(np.cross(u, v), axis), _dot(u, v))


def reference_twist(d1, t, previous=None):
    """
    Reference twist of every interior vertex.

    ``d1`` of edge ``i - 1`` is parallel transported to edge ``i``; the
    reference twist is the signed angle from it to ``d1`` of edge ``i`` about
    ``t_i``. When ``previous`` is given, multiples of 2 pi are added so that
    each value is the one closest to its previous value.

    Parameters
    ----------
    d1 : array_like
        First reference directors, shape ``(N - 1, 3)``.
    t : array_like
        Unit tangents, shape ``(N - 1, 3)``.
    previous : array_like, optional
        Reference twists before a frame update.

    Returns
    -------
    :class:`numpy.ndarray`
    """
    d1 = np.asarray(d1, dtype=float)
    t = np.asarray(t, dtype=float)
    u = parallel_transport(d1[:-1], t[:-1], t[1:])
    angle = signed_angle(u, d1[1:], t[1:])
    if previous is not None:
        angle = angle + 2 * np.pi * np.round(
            (np.asarray(previous) - angle) / (2 * np.pi)
        )
    return angle


def twist(theta, ref_twist, i=None):
    """
    Twist ``m_i = theta_i - theta_{i-1} + ref_twist_i``.

    Parameters
    ----------
    theta : array_like
        Edge angles, shape ``(N - 1,)``.
    ref_twist : array_like
        Reference twists, shape ``(N - 2,)``.
    i : :class:`int`, optional
        Interior vertex; all vertices by default.

    Returns
    -------
    :class:`float` or :class:`numpy.ndarray`
    """
    theta = np.asarray(theta, dtype=float)
    m = np.diff(theta) + np.asarray(ref_twist, dtype=float)
    if i is None:
        return m
    return float(m[i - 1])


def curvature_gradient(t, lengths, m1, m2, kb, chi, kappa):
    """
    Gradients of the 4D curvatures over each 11-entry stencil.

    With ``a = i - 1``, ``b = i``, ``tt = (t_a + t_b) / chi`` and ``u`` the
    material director defining the component (``kappa = kb . u``)::

        d kappa / d e_a = (-kappa tt + 2 t_b x u / chi) / l_a
        d kappa / d e_b = (-kappa tt - 2 t_a x u / chi) / l_b

    and the edge-angle derivatives rotate the pair of components belonging to
    the same edge.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(N - 2, 4, 11)``.
    """
    ta, tb = t[:-1], t[1:]
    la, lb = lengths[:-1, None], lengths[1:, None]
    chi = chi[:, None]
    tt = (ta + tb) / chi
    directors = (m2[:-1], -m1[:-1], m2[1:], -m1[1:])

    n = kb.shape[0]
    grad = np.zeros((n, 4, STENCIL))
    for j, u in enumerate(directors):
        k = kappa[:, j, None]
        de_a = (-k * tt + 2.0 * np.cross(tb, u) / chi) / la
        de_b = (-k * tt - 2.0 * np.cross(ta, u) / chi) / lb
        grad[:, j, 0:3] = -de_a
        grad[:, j, 4:7] = de_a - de_b
        grad[:, j, 8:11] = de_b

    grad[:, 0, 3] = kappa[:, 1]
    grad[:, 1, 3] = -kappa[:, 0]
    grad[:, 2, 7] = kappa[:, 3]
    grad[:, 3, 7] = -kappa[:, 2]
    return grad


def twist_gradient(kb, lengths):
    """
    Gradients of the twists over each 11-entry stencil.

    ``d m / d e_a = kb / (2 l_a)``, ``d m / d e_b = kb / (2 l_b)`` and the
    edge-angle entries are exactly -1 and +1.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(N - 2, 11)``.
    """
    de_a = kb / (2.0 * lengths[:-1, None])
    de_b = kb / (2.0 * lengths[1:, None])
    grad = np.zeros((kb.shape[0], STENCIL))
    grad[:, 0:3] = -de_a
    grad[:, 3] = -1.0
    grad[:, 4:7] = de_a - de_b
    grad[:, 7] = 1.0
    grad[:, 8:11] = de_b
    return grad


def mass_matrix(config, rest_len):
    """
    Lumped generalized mass.

    Each edge of rest length ``l`` contributes half of ``rho pi r² l`` to
    both of its vertices; the angle of an edge gets the rotational inertia
    ``rho pi r² l r² / 2``.

    Parameters
    ----------
    config : :class:`StrandConfig`
    rest_len : array_like
        Positive rest lengths, one per edge.

    Returns
    -------
    :class:`MassMatrix`
    """
    rest_len = np.asarray(rest_len, dtype=float)
    N = rest_len.size + 1
    if np.any(rest_len <= 0):
        raise ValueError("Rest lengths must be positive.")
    edge_mass = config.density * config.area * rest_len
    vertex_mass = np.zeros(N)
    vertex_mass[:-1] += edge_mass / 2
    vertex_mass[1:] += edge_mass / 2
    diag = np.empty(4 * N - 1)
    diag[vertex_index(N)] = vertex_mass[:, None]
    diag[4 * np.arange(N - 1) + 3] = edge_mass * config.radius**2 / 2
    return MassMatrix(diag)


def gravity_force(config, mass):
    """
    Gravity as a generalized force over all coordinates.

    Parameters
    ----------
    config : :class:`StrandConfig`
    mass : :class:`MassMatrix`

    Returns
    -------
    :class:`numpy.ndarray`
    """
    N = config.N
    f = np.zeros(4 * N - 1)
    f[vertex_index(N)] = mass.vertex_masses[:, None] * config.gravity
    return f


def naive_rest_params(config, state):
    """
    Rest parameters matching the current shape.

    Rest lengths, curvatures and twists are those of ``state``; stiffness
    multipliers come from :func:`~sagfree.parameters.stiffness_scaling`.
    Every elastic energy vanishes at ``state``.

    Parameters
    ----------
    config : :class:`StrandConfig`
    state : :class:`StrandState`

    Returns
    -------
    :class:`RestParams`
    """
    if config.N != state.N:
        raise DimensionMismatchError(config.N, state.N, "strand")
    geom = StrandGeometry(state)
    s, alpha, beta, gamma = stiffness_scaling(
        config.c_st, config.c_be, config.c_tw
    )
    return RestParams(
        rest_len=geom.lengths,
        rest_curv=geom.kappa,
        rest_twist=geom.twist,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        s=s,
    )


_CONFIG_KEYS = ("radius", "density", "c_st", "c_be", "c_tw", "gravity", "dt")

HAIR_DEFAULTS = {
    "radius": 5e-5,
    "density": 1.3e3,
    "c_st": 1e9,
    "c_be": 1e9,
    "c_tw": 1e9,
    "gravity": (0.0, 0.0, -9.81),
}
"""Hair-like SI material defaults of the registered scenes."""

_scene_registry = {}


def register_scene(name, generator, **defaults):
    """
    Register a scene generator.

    Parameters
    ----------
    name : :class:`str`
        Identifier.
    generator : callable
        ``generator(N, length, gravity, **kwargs) -> (N, 3) array``.
    **defaults
        Default keyword arguments of the generator.

    Raises
    ------
    ValueError
        If the name identifier is already in use.
    """
    if name in _scene_registry:
        raise ValueError(
            "Scene identifier already in use. " f"Deregister `{name}` first."
        )
    _scene_registry[name] = (generator, defaults)


def deregister_scene(name):
    """
    Deregister a scene generator.

    Parameters
    ----------
    name : :class:`str`
        Identifier.
    """
    _scene_registry.pop(name, None)


def get_scene_kinds():
    """
    Names of the registered scene generators.

    Returns
    -------
    :class:`list` (:class:`str`)
    """
    return sorted(_scene_registry)


def make_scene(kind, N, length, **kwargs):
    """
    Create a clamped-root strand with uniform segment lengths.

    Parameters
    ----------
    kind : :class:`str`
        Registered scene name, e.g. ``"vertical"``, ``"horizontal"``,
        ``"coil"`` or ``"wavy"``.
    N : :class:`int`
        Vertex count, at least 4.
    length : :class:`float`
        Arc length of the strand.
    **kwargs
        Material overrides (``radius``, ``density``, ``c_st``, ``c_be``,
        ``c_tw``, ``gravity``, ``dt``) and generator arguments.

    Returns
    -------
    (:class:`StrandConfig`, :class:`StrandState`)

    Raises
    ------
    BadDimensionError
        If ``N < 4`` or ``length <= 0``.
    ValueError
        If ``kind`` is not registered.
    """
    if kind not in _scene_registry:
        raise ValueError(
            f"Unknown scene `{kind}`. Registered scenes: "
            f"{', '.join(get_scene_kinds())}."
        )
    if int(N) < 4:
        raise BadDimensionError("A strand needs at least 4 vertices.")
    if not length > 0:
        raise BadDimensionError("The strand length must be positive.")
    generator, defaults = _scene_registry[kind]
    material = dict(HAIR_DEFAULTS)
    material.update({k: v for k, v in kwargs.items() if k in _CONFIG_KEYS})
    options = dict(defaults)
    options.update({k: v for k, v in kwargs.items() if k not in _CONFIG_KEYS})

    config = StrandConfig(int(N), **material)
    x = generator(int(N), float(length), config.gravity, **options)
    logger.debug("Created %s scene with %d vertices.", kind, N)
    return config, StrandState.from_positions(x)


def batch_scene(kind, count, N, length, seed=0, spacing=None, **kwargs):
    """
    A deterministic set of similar strands with roots on a grid.

    Every strand is rotated about the gravity axis by a random angle and its
    length varies by up to 10 percent.

    Parameters
    ----------
    kind : :class:`str`
        Scene name.
    count : :class:`int`
        Number of strands.
    N : :class:`int`
        Vertex count per strand.
    length : :class:`float`
        Nominal strand length.
    seed : :class:`int`, optional
        Random seed, by default 0.
    spacing : :class:`float`, optional
        Root spacing, by default ``length / 10``.
    **kwargs
        Passed to :func:`make_scene`.

    Returns
    -------
    :class:`list` of (:class:`StrandConfig`, :class:`StrandState`)
    """
    rng = np.random.default_rng(seed)
    spacing = length / 10 if spacing is None else spacing
    side = int(np.ceil(np.sqrt(count)))
    strands = []
    for k in range(count):
        scale = 1.0 + 0.1 * (2 * rng.random() - 1)
        angle = 2 * np.pi * rng.random()
        config, state = make_scene(kind, N, length * scale, **kwargs)
        up = -config.gravity / np.linalg.norm(config.gravity)
        R = _axis_rotation(up, angle)
        e1 = _perpendicular(up)
        e2 = np.cross(up, e1)
        root = spacing * ((k % side) * e1 + (k // side) * e2)
        x = state.rotated(R).x + root
        strands.append((config, StrandState.from_positions(x)))
    return strands


def _axis_rotation(axis, angle):
    axis = np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    K = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def _down(gravity):
    g = np.asarray(gravity, dtype=float)
    norm = np.linalg.norm(g)
    if norm == 0:
        return np.array([0.0, 0.0, -1.0])
    return g / norm


def _vertical(N, length, gravity):
    """
    Straight strand hanging from the root at the origin: it points along
    +gravity, so the root is the top vertex and the strand is in tension.
    """
    h = length / (N - 1)
    return np.arange(N)[:, None] * h * _down(gravity)


def _horizontal(N, length, gravity):
    h = length / (N - 1)
    x = np.zeros((N, 3))
    x[:, 0] = np.arange(N) * h
    return x


def _coil(N, length, gravity, turns=5.0, coil_radius=None):
    """
    Hanging helix of arc length ``length``. The default radius
    ``length / (4 pi turns)`` makes the circumference half of the arc length
    per turn; the pitch follows from the arc length.
    """
    down = _down(gravity)
    e1 = _perpendicular(down)
    e2 = np.cross(down, e1)
    if coil_radius is None:
        coil_radius = length / (4 * np.pi * turns)
    per_turn = length / turns
    circumference = 2 * np.pi * coil_radius
    if circumference >= per_turn:
        raise ValueError("The coil radius is too large for the arc length.")
    pitch = np.sqrt(per_turn**2 - circumference**2)
    phi = np.linspace(0.0, 2 * np.pi * turns, N)
    x = (
        coil_radius * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
        + (pitch / (2 * np.pi)) * phi[:, None] * down
    )
    return x - x[0]


def _wavy(N, length, gravity, amplitude=0.6, waves=3.0):
    """
    Hanging planar strand whose direction oscillates by up to ``amplitude``
    radians about the gravity direction, ``waves`` times along its length.
    """
    down = _down(gravity)
    side = _perpendicular(down)
    h = length / (N - 1)
    k = np.arange(N - 1)
    angle = amplitude * np.sin(2 * np.pi * waves * k / (N - 1))
    steps = h * (
        np.cos(angle)[:, None] * down + np.sin(angle)[:, None] * side
    )
    x = np.zeros((N, 3))
    x[1:] = np.cumsum(steps, axis=0)
    return x


register_scene("vertical", _vertical)
register_scene("horizontal", _horizontal)
register_scene("coil", _coil, turns=5.0)
register_scene("wavy", _wavy, amplitude=0.6, waves=3.0)
