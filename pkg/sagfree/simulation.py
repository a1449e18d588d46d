"""
Forward simulation with implicit Euler, one Newton iteration per step.

Each step predicts ``q* = q + dt v + dt² M⁻¹ f_ext``, moves the clamped
coordinates to their scripted targets and takes one Newton step on the
incremental potential ``|q - q*|²_M / (2 dt²) + E(q)`` over the active DOFs.
The system matrix ``M / dt² + H`` uses the SPD-projected stretching Hessian
and Gauss-Newton bending and twisting terms, so it is banded with
half-bandwidth 10 and factorized without pivoting. Reference frames follow
the new tangents by time-parallel transport.

::

    import sagfree.strands as st
    import sagfree.simulation as sim

    config, state = st.make_scene("horizontal", 30, 0.1)
    rest = st.naive_rest_params(config, state)
    traj = sim.simulate(config, state, rest, sim.SimOptions(frames=60))
    traj.drift()      # the naive strand sags

Root motion is scripted with :class:`RootMotion` keyframes on the clamped
coordinates ``(x_0, theta_0, x_1)``, linearly interpolated in time.
"""

import dataclasses
import logging

import numpy as np
import scipy.interpolate

from .banded import ldlt_factorize, solve
from .energies import (
    elastic_energy,
    elastic_gradient,
    grad_inertia,
    inertia_target,
    newton_hessian,
)
from .exceptions import DimensionMismatchError, SolverFailure
from .strands import (
    DEFAULT_STEPS_PER_FRAME,
    N_CLAMPED,
    StrandGeometry,
    gravity_force,
    mass_matrix,
    tangents_lengths,
)

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-6


class RootMotion:
    """
    Piecewise-linear trajectory of the clamped coordinates.

    Before the first and after the last keyframe the end values are held.
    """

    def __init__(self, times, values):
        """
        Constructor.

        Parameters
        ----------
        times : array_like
            Increasing keyframe times in seconds.
        values : array_like
            Clamped coordinates per keyframe, shape ``(len(times), 7)``.

        Raises
        ------
        ValueError
            If the times are not increasing or the shapes disagree.
        """
        times = np.array(times, dtype=float).ravel()
        values = np.array(values, dtype=float).reshape(times.size, -1)
        if values.shape[1] != N_CLAMPED:
            raise DimensionMismatchError(
                N_CLAMPED, values.shape[1], "keyframe"
            )
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("Keyframe times must be increasing.")
        self.times = times
        self.values = values
        if times.size == 1:
            self._interp = None
        else:
            self._interp = scipy.interpolate.interp1d(
                times,
                values,
                axis=0,
                bounds_error=False,
                fill_value=(values[0], values[-1]),
            )

    @classmethod
    def static(cls, state):
        """Roots held at their current values."""

        return cls([0.0], [state.q[:N_CLAMPED]])

    @classmethod
    def oscillation(
        cls,
        state,
        amplitude,
        period,
        cycles=1.0,
        direction=(0.0, 0.0, 1.0),
        samples_per_period=16,
    ):
        """
        Translate the root back and forth, then hold it at rest.

        Parameters
        ----------
        state : :class:`~sagfree.strands.StrandState`
        amplitude : :class:`float`
            Peak displacement.
        period : :class:`float`
            Period in seconds.
        cycles : :class:`float`, optional
            Number of periods, by default 1.
        direction : array_like, optional
            Displacement direction, by default +z.
        samples_per_period : :class:`int`, optional
            Keyframes per period.

        Returns
        -------
        :class:`RootMotion`
        """
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.linalg.norm(direction)
        n = max(int(np.ceil(samples_per_period * cycles)), 1)
        times = np.linspace(0.0, period * cycles, n + 1)
        offset = amplitude * np.sin(2 * np.pi * times / period)
        offset[-1] = 0.0
        base = state.q[:N_CLAMPED]
        values = np.tile(base, (times.size, 1))
        values[:, 0:3] += offset[:, None] * direction
        values[:, 4:7] += offset[:, None] * direction
        return cls(times, values)

    def __call__(self, t):
        """Clamped coordinates at time ``t``."""

        if self._interp is None:
            return self.values[0].copy()
        return np.asarray(self._interp(t), dtype=float)


@dataclasses.dataclass
class SimOptions:
    """
    Forward simulation settings. ``dt`` defaults to the strand's time step.
    """

    dt: float = None
    steps_per_frame: int = DEFAULT_STEPS_PER_FRAME
    frames: int = 0
    root_motion: RootMotion = None

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("The time step must be positive.")
        if self.steps_per_frame < 1:
            raise ValueError("At least one step per frame is required.")
        if self.frames < 0:
            raise ValueError("The frame count must not be negative.")


@dataclasses.dataclass
class Trajectory:
    """
    Per-frame vertex positions and kinetic energies of a simulation.
    """

    times: np.ndarray
    positions: np.ndarray
    kinetic_energy: np.ndarray
    final_state: object
    length: float

    @property
    def n_frames(self):
        """Number of recorded frames, the initial one included."""

        return self.positions.shape[0]

    def displacement(self):
        """Largest vertex distance from the initial pose, per frame."""

        d = np.linalg.norm(self.positions - self.positions[0], axis=2)
        return d.max(axis=1)

    def drift(self):
        """Largest vertex displacement over all frames over strand length."""

        return float(self.displacement().max() / self.length)


def kinetic_energy(state, mass):
    """``1/2 vᵀ M v``."""

    v = state.velocity
    return 0.5 * float(v @ (mass.diag * v))


def mechanical_energy(config, state, rest, mass):
    """Kinetic plus elastic plus gravitational potential energy."""

    return (
        kinetic_energy(state, mass)
        + elastic_energy(config, state, rest)
        - float(gravity_force(config, mass) @ state.q)
    )


def sim_step(config, state, rest, dt=None, mass=None, clamped=None):
    """
    Advance the strand by one implicit Euler step.

    Parameters
    ----------
    config : :class:`~sagfree.strands.StrandConfig`
    state : :class:`~sagfree.strands.StrandState`
    rest : :class:`~sagfree.strands.RestParams`
    dt : :class:`float`, optional
        Time step, by default ``config.dt``.
    mass : :class:`~sagfree.strands.MassMatrix`, optional
        By default lumped from the edge lengths of ``state``.
    clamped : array_like, optional
        Target of the 7 clamped coordinates at the end of the step; held by
        default.

    Returns
    -------
    :class:`~sagfree.strands.StrandState`

    Raises
    ------
    SolverFailure
        If the factorized system is solved with a relative residual above
        1e-6.
    """
    dt = config.dt if dt is None else dt
    if mass is None:
        mass = mass_matrix(config, tangents_lengths(state.x)[1])
    q = state.q
    q_star = inertia_target(
        q, state.velocity, mass.diag, gravity_force(config, mass), dt
    )

    start = state
    q0 = q.copy()
    if clamped is not None:
        q0[:N_CLAMPED] = clamped
        if np.any(q0[:N_CLAMPED] != q[:N_CLAMPED]):
            start = state.with_q(q0)
    geom = StrandGeometry(start)
    g = grad_inertia(q0, q_star, mass.diag, dt) + elastic_gradient(
        config, start, rest, geom
    )
    rhs = -g[N_CLAMPED:]
    H = newton_hessian(config, start, rest, mass, dt, geom)
    factor = ldlt_factorize(H)
    dq = solve(factor, rhs)

    residual = np.linalg.norm(H.matvec(dq) - rhs)
    scale = np.linalg.norm(rhs)
    if residual > RESIDUAL_TOL * scale:
        raise SolverFailure(
            f"The step solve has a relative residual of "
            f"{residual / scale:.3e}."
        )

    q1 = q0.copy()
    q1[N_CLAMPED:] += dq
    return start.with_q(q1, velocity=(q1 - q) / dt)


def simulate(config, state, rest, options=None, mass=None):
    """
    Simulate ``options.frames`` frames.

    Parameters
    ----------
    config : :class:`~sagfree.strands.StrandConfig`
    state : :class:`~sagfree.strands.StrandState`
    rest : :class:`~sagfree.strands.RestParams`
    options : :class:`SimOptions`, optional
    mass : :class:`~sagfree.strands.MassMatrix`, optional
        Fixed for the whole run; by default lumped from the edge lengths
        of the initial ``state``.

    Returns
    -------
    :class:`Trajectory`
    """
    options = SimOptions() if options is None else options
    dt = config.dt if options.dt is None else options.dt
    if mass is None:
        mass = mass_matrix(config, tangents_lengths(state.x)[1])
    motion = options.root_motion
    length = state.length

    times = [0.0]
    positions = [state.x]
    energies = [kinetic_energy(state, mass)]
    step = 0
    for frame in range(1, options.frames + 1):
        for _ in range(options.steps_per_frame):
            step += 1
            target = None if motion is None else motion(step * dt)
            state = sim_step(config, state, rest, dt, mass, target)
        times.append(step * dt)
        positions.append(state.x)
        energies.append(kinetic_energy(state, mass))
        logger.debug(
            "Frame %d: kinetic energy %.3e.", frame, energies[-1]
        )

    trajectory = Trajectory(
        times=np.array(times),
        positions=np.array(positions),
        kinetic_energy=np.array(energies),
        final_state=state,
        length=length,
    )
    if options.frames:
        logger.info(
            "Simulated %d frames, drift %.3e.",
            options.frames,
            trajectory.drift(),
        )
    return trajectory
