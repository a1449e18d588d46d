"""
Elastic and inertial energies of a strand, their gradients and the
generalized force.

The elastic energy is the sum of

* stretching, per edge ``e >= 1``: ``1/2 k_st (l_e - l̄_e)²`` with
  ``k_st = s alpha_e pi r² / l̄_e``;
* bending, per interior vertex: ``1/2 k_be |kappa_i - kappa̅_i|²`` with
  ``k_be = s beta_i pi r⁴ / (4 (l̄_{i-1} + l̄_i))``;
* twisting, per interior vertex: ``1/2 k_tw (m_i - m̄_i)²`` with
  ``k_tw = s gamma_i pi r⁴ / (l̄_{i-1} + l̄_i)``.

Edge 0 carries no stretching energy. The inertial energy of implicit Euler
is ``|q - q*|²_M / (2 dt²)`` with the predicted position
``q* = q + dt v + dt² M⁻¹ f_ext``.

The generalized force on the active DOFs is ``f = -grad E + f_ext``::

    import sagfree.strands as st
    import sagfree.energies as en

    config, state = st.make_scene("horizontal", 30, 0.1)
    rest = st.naive_rest_params(config, state)
    f = en.total_force(config, state, rest)
    f.values[-3:]    # the weight of the tip vertex

Gradients are scattered in ascending element order so evaluations are
bit-reproducible.
"""

import dataclasses

import numpy as np

from .banded import BandedSym
from .exceptions import DimensionMismatchError
from .strands import (
    N_CLAMPED,
    STENCIL,
    StrandGeometry,
    gravity_force,
    mass_matrix,
    stencil_index,
    vertex_index,
)


@dataclasses.dataclass(frozen=True)
class Stiffness:
    """
    Physical stiffness coefficients derived from the rest parameters.

    ``k_st`` has one entry per edge (zero for edge 0); ``k_be`` and ``k_tw``
    one per interior vertex. ``edge_sum`` is ``l̄_{i-1} + l̄_i``.
    """

    k_st: np.ndarray
    k_be: np.ndarray
    k_tw: np.ndarray
    edge_sum: np.ndarray


class ForceVector:
    """
    Generalized force restricted to the active DOFs of a strand.
    """

    def __init__(self, values, N):
        """
        Constructor.

        Parameters
        ----------
        values : array_like
            Force on the ``4N - 8`` active DOFs.
        N : :class:`int`
            Vertex count.

        Raises
        ------
        DimensionMismatchError
            If ``values`` does not have ``4N - 8`` entries.
        """
        values = np.array(values, dtype=float)
        if values.shape != (4 * N - 8,):
            raise DimensionMismatchError(4 * N - 8, values.size, "force")
        self._values = values
        self._N = int(N)

    @classmethod
    def from_global(cls, f):
        """Restrict a force over all ``4N - 1`` coordinates."""

        f = np.asarray(f, dtype=float)
        return cls(f[N_CLAMPED:], (f.size + 1) // 4)

    @property
    def values(self):
        """Force over the active DOFs."""

        return self._values.copy()

    @property
    def N(self):
        """Vertex count."""

        return self._N

    @property
    def index(self):
        """Global coordinate index of every entry."""

        return np.arange(N_CLAMPED, 4 * self._N - 1)

    def to_global(self):
        """Force over all coordinates, zero on the clamped ones."""

        f = np.zeros(4 * self._N - 1)
        f[N_CLAMPED:] = self._values
        return f

    def norm(self):
        """Euclidean norm."""

        return float(np.linalg.norm(self._values))

    def __len__(self):
        return self._values.size

    def __repr__(self):
        return f"ForceVector(N={self._N}, norm={self.norm():g})"


def stiffness(config, rest):
    """
    Stiffness coefficients of every energy term.

    Parameters
    ----------
    config : :class:`~sagfree.strands.StrandConfig`
    rest : :class:`~sagfree.strands.RestParams`

    Returns
    -------
    :class:`Stiffness`
    """
    if config.N != rest.N:
        raise DimensionMismatchError(config.N, rest.N, "rest parameter set")
    r = config.radius
    lbar = rest.rest_len
    edge_sum = lbar[:-1] + lbar[1:]
    k_st = rest.s * rest.alpha * np.pi * r**2 / lbar
    k_st[0] = 0.0
    k_be = rest.s * rest.beta * np.pi * r**4 / (4.0 * edge_sum)
    k_tw = rest.s * rest.gamma * np.pi * r**4 / edge_sum
    return Stiffness(k_st, k_be, k_tw, edge_sum)


def inertia_target(q, velocity, mass, f_ext, dt):
    """
    Predicted position ``q + dt v + dt² M⁻¹ f_ext``.

    Parameters
    ----------
    q, velocity, f_ext : array_like
        Vectors over the same coordinates.
    mass : array_like
        Mass diagonal over those coordinates.
    dt : :class:`float`

    Returns
    -------
    :class:`numpy.ndarray`
    """
    return (
        np.asarray(q)
        + dt * np.asarray(velocity)
        + dt**2 * np.asarray(f_ext) / np.asarray(mass)
    )


def energy_inertia(q, q_star, mass, dt):
    """
    Inertial energy ``|q - q*|²_M / (2 dt²)``.

    Parameters
    ----------
    q, q_star : array_like
    mass : array_like
        Mass diagonal.
    dt : :class:`float`
        Positive time step.

    Returns
    -------
    :class:`float`
    """
    if not dt > 0:
        raise ValueError("The time step must be positive.")
    d = np.asarray(q) - np.asarray(q_star)
    return float(np.dot(np.asarray(mass) * d, d) / (2 * dt**2))


def grad_inertia(q, q_star, mass, dt):
    """
    Gradient ``M (q - q*) / dt²`` of :func:`energy_inertia`.

    Returns
    -------
    :class:`numpy.ndarray`
    """
    if not dt > 0:
        raise ValueError("The time step must be positive.")
    return np.asarray(mass) * (np.asarray(q) - np.asarray(q_star)) / dt**2


def _geometry(state, geometry):
    return StrandGeometry(state) if geometry is None else geometry


def _check_edge(N, i):
    if not 1 <= i <= N - 2:
        raise IndexError(f"Edge {i} carries no stretching energy.")


def _check_vertex(N, i):
    if not 1 <= i <= N - 2:
        raise IndexError(f"Vertex {i} is not an interior vertex.")


def energy_stretch(config, state, rest, i, geometry=None):
    """
    Stretching energy of edge ``i`` (``1 <= i <= N - 2``).

    Returns
    -------
    :class:`float`
    """
    _check_edge(state.N, i)
    geom = _geometry(state, geometry)
    k = stiffness(config, rest).k_st[i]
    return 0.5 * k * (geom.lengths[i] - rest.rest_len[i]) ** 2


def grad_stretch(config, state, rest, i, geometry=None):
    """
    Gradient of the stretching energy of edge ``i`` on its two vertices.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(2, 3)``: the gradient on ``x_i`` and on ``x_{i+1}``.
    """
    _check_edge(state.N, i)
    geom = _geometry(state, geometry)
    k = stiffness(config, rest).k_st[i]
    g = k * (geom.lengths[i] - rest.rest_len[i]) * geom.tangents[i]
    return np.stack([-g, g])


def energy_bend(config, state, rest, i, geometry=None):
    """
    Bending energy of interior vertex ``i``.

    Returns
    -------
    :class:`float`
    """
    _check_vertex(state.N, i)
    geom = _geometry(state, geometry)
    k = stiffness(config, rest).k_be[i - 1]
    r = geom.kappa[i - 1] - rest.rest_curv[i - 1]
    return 0.5 * k * float(np.dot(r, r))


def grad_bend(config, state, rest, i, geometry=None):
    """
    Gradient of the bending energy of vertex ``i`` over its stencil.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(11,)`` over coordinates ``4i - 4 .. 4i + 6``.
    """
    _check_vertex(state.N, i)
    geom = _geometry(state, geometry)
    k = stiffness(config, rest).k_be[i - 1]
    r = geom.kappa[i - 1] - rest.rest_curv[i - 1]
    return k * r @ geom.grad_kappa[i - 1]


def energy_twist(config, state, rest, i, geometry=None):
    """
    Twisting energy of interior vertex ``i``.

    Returns
    -------
    :class:`float`
    """
    _check_vertex(state.N, i)
    geom = _geometry(state, geometry)
    k = stiffness(config, rest).k_tw[i - 1]
    return 0.5 * k * (geom.twist[i - 1] - rest.rest_twist[i - 1]) ** 2


def grad_twist(config, state, rest, i, geometry=None):
    """
    Gradient of the twisting energy of vertex ``i`` over its stencil.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(11,)``.
    """
    _check_vertex(state.N, i)
    geom = _geometry(state, geometry)
    k = stiffness(config, rest).k_tw[i - 1]
    m = geom.twist[i - 1] - rest.rest_twist[i - 1]
    return k * m * geom.grad_twist[i - 1]


def elastic_energy(config, state, rest, geometry=None):
    """
    Total elastic energy.

    Returns
    -------
    :class:`float`
    """
    geom = _geometry(state, geometry)
    k = stiffness(config, rest)
    dl = geom.lengths - rest.rest_len
    dk = geom.kappa - rest.rest_curv
    dm = geom.twist - rest.rest_twist
    return 0.5 * float(
        np.sum(k.k_st * dl**2)
        + np.sum(k.k_be * np.sum(dk**2, axis=1))
        + np.sum(k.k_tw * dm**2)
    )


def elastic_gradient(config, state, rest, geometry=None):
    """
    Gradient of the elastic energy over all ``4N - 1`` coordinates.

    Returns
    -------
    :class:`numpy.ndarray`
    """
    geom = _geometry(state, geometry)
    k = stiffness(config, rest)
    N = state.N
    g = np.zeros(4 * N - 1)

    gs = (k.k_st * (geom.lengths - rest.rest_len))[:, None] * geom.tangents
    vi = vertex_index(N)
    np.add.at(g, vi[:-1], -gs)
    np.add.at(g, vi[1:], gs)

    bend = k.k_be[:, None] * (geom.kappa - rest.rest_curv)
    stencil = np.einsum("jk,jkl->jl", bend, geom.grad_kappa)
    tw = k.k_tw * (geom.twist - rest.rest_twist)
    stencil += tw[:, None] * geom.grad_twist
    np.add.at(g, stencil_index(N), stencil)
    return g


def total_energy(config, state, rest, mass=None, geometry=None):
    """
    Elastic energy plus the gravitational potential ``-f_ext . q``.

    Its negative gradient on the active DOFs is :func:`total_force`.

    Parameters
    ----------
    config : :class:`~sagfree.strands.StrandConfig`
    state : :class:`~sagfree.strands.StrandState`
    rest : :class:`~sagfree.strands.RestParams`
    mass : :class:`~sagfree.strands.MassMatrix`, optional
        By default computed from the rest lengths.

    Returns
    -------
    :class:`float`
    """
    if mass is None:
        mass = mass_matrix(config, rest.rest_len)
    f_ext = gravity_force(config, mass)
    return elastic_energy(config, state, rest, geometry) - float(
        np.dot(f_ext, state.q)
    )


def total_force(config, state, rest, mass=None, geometry=None):
    """
    Generalized force ``f = -grad E_elastic + f_ext`` on the active DOFs.

    In the static case the inertial term contributes exactly the external
    force, so ``f`` vanishes at equilibrium.

    Parameters
    ----------
    config : :class:`~sagfree.strands.StrandConfig`
    state : :class:`~sagfree.strands.StrandState`
    rest : :class:`~sagfree.strands.RestParams`
    mass : :class:`~sagfree.strands.MassMatrix`, optional
        Mass defining the gravity load, by default computed from the rest
        lengths.
    geometry : :class:`~sagfree.strands.StrandGeometry`, optional
        Cached geometry of ``state``.

    Returns
    -------
    :class:`ForceVector`
    """
    if config.N != state.N:
        raise DimensionMismatchError(config.N, state.N, "strand")
    if mass is None:
        mass = mass_matrix(config, rest.rest_len)
    f = gravity_force(config, mass) - elastic_gradient(
        config, state, rest, geometry
    )
    return ForceVector.from_global(f)


def _project_psd(H):
    w, V = np.linalg.eigh(H)
    w = np.clip(w, 0.0, None)
    return np.einsum("...ik,...k,...jk->...ij", V, w, V)


def elastic_hessian(config, state, rest, geometry=None):
    """
    SPD approximation of the elastic Hessian over all coordinates.

    Stretching uses the exact per-edge Hessian with negative eigenvalues
    zeroed; bending and twisting use the Gauss-Newton terms
    ``k_be J_kappaᵀ J_kappa`` and ``k_tw grad m grad mᵀ``.

    Returns
    -------
    :class:`~sagfree.banded.BandedSym`
        Half-bandwidth 10.
    """
    geom = _geometry(state, geometry)
    k = stiffness(config, rest)
    N = state.N
    n = 4 * N - 1
    bands = np.zeros((STENCIL, n))

    t = geom.tangents
    ratio = (geom.lengths - rest.rest_len) / geom.lengths
    tt = np.einsum("ei,ej->eij", t, t)
    H_e = k.k_st[:, None, None] * (
        tt + ratio[:, None, None] * (np.eye(3) - tt)
    )
    H_e = _project_psd(H_e)
    # the 6x6 edge block is [[H, -H], [-H, H]]
    local = np.array([0, 1, 2, 4, 5, 6])
    block = np.zeros((N - 1, 6, 6))
    block[:, :3, :3] = H_e
    block[:, 3:, 3:] = H_e
    block[:, 3:, :3] = -H_e
    block[:, :3, 3:] = -H_e
    start = 4 * np.arange(N - 1)
    for a in range(6):
        for b in range(a + 1):
            bands[local[a] - local[b], start + local[b]] += block[:, a, b]

    J = geom.grad_kappa
    H_s = k.k_be[:, None, None] * np.einsum("jka,jkb->jab", J, J)
    gm = geom.grad_twist
    H_s += k.k_tw[:, None, None] * np.einsum("ja,jb->jab", gm, gm)
    start = 4 * np.arange(N - 2)
    for a in range(STENCIL):
        for b in range(a + 1):
            bands[a - b, start + b] += H_s[:, a, b]
    return BandedSym(bands)


def newton_hessian(config, state, rest, mass, dt, geometry=None):
    """
    Implicit Euler system matrix ``M / dt² + H_elastic`` on the active DOFs.

    Parameters
    ----------
    mass : :class:`~sagfree.strands.MassMatrix`
    dt : :class:`float`

    Returns
    -------
    :class:`~sagfree.banded.BandedSym`
    """
    H = elastic_hessian(config, state, rest, geometry)
    n_active = H.n - N_CLAMPED
    active = BandedSym(H.bands[: min(STENCIL, n_active), N_CLAMPED:].copy())
    return active.with_diagonal_added(mass.active / dt**2)
