"""
Sag-free parameter optimization.

Given a strand in its target shape, the rest shape and stiffness parameters
``p`` are changed as little as possible, in the regularization metric ``W``,
subject to zero net force at the target shape::

    minimize 1/2 |p - p0|²_W   subject to   c(p) = M^{-1/2} f(p) = 0,
                                            p_min <= p <= p_max

The equality constraint is handled by an augmented Lagrangian::

    L(p, lambda) = 1/2 |p - p0|²_W - lambdaᵀ c(p) + rho/2 |c(p)|²

Every outer iteration takes one Newton step on ``L`` with the Gauss-Newton
Hessian ``W + rho Jᵀ M⁻¹ J``, restricted to the box by a box-constrained QP
solved with MPRGP, backtracks along it, and updates the multipliers with
``lambda -= rho c(p)``. The run converges once the step is below ``eps_p``
(relative to ``max(1, |p|)``) while ``|c|`` meets the equality tolerance.
A short step with ``|c|`` still above it only updates the multipliers.

::

    import sagfree.strands as st
    import sagfree.optimizer as opt

    config, state = st.make_scene("horizontal", 30, 0.1)
    rest0 = st.naive_rest_params(config, state)
    rest, report = opt.optimize(config, state, rest0, opt.AlmOptions(mu=0.2))
    report.termination      # <Termination.CONVERGED: 'converged'>

The target shape is fixed during the optimization, so the geometry (and its
curvature and twist gradients) is computed once. The mass defining the
gravity load and the constraint metric is lumped from the edge lengths of
the target shape, as in :func:`~sagfree.simulation.simulate`.
"""

import dataclasses
import enum
import logging
import time

import numpy as np

from .bcqp import BcqpOptions, BcqpProblem, mprgp
from .energies import total_force
from .exceptions import ConfigError, DimensionMismatchError
from .jacobian import assemble_jacobian, constraint
from .parameters import (
    ParamLayout,
    ParamVector,
    compute_bounds,
    weight_diagonal,
)
from .strands import StrandGeometry, gravity_force, mass_matrix

logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
MAX_HALVINGS = 20


class Termination(enum.Enum):
    """Reason the outer loop stopped."""

    CONVERGED = "converged"
    NOT_CONVERGED = "not_converged"
    MAX_ITER = "max_iter"
    LINE_SEARCH_STALLED = "line_search_stalled"


def _inner_defaults():
    return BcqpOptions(max_iter=100)


@dataclasses.dataclass
class AlmOptions:
    """
    Optimization settings.

    ``mu`` bounds the change of every rest curvature and ``eta`` (default
    ``mu / 4``) the change of every rest twist. ``eps`` is the lower bound
    of rest lengths and stiffness multipliers, raised to ``lbar_min`` for the
    rest lengths when given. The run is converged when the step norm drops
    below ``eps_p * max(1, |p|)`` and ``|c|`` has dropped below ``eq_tol``
    times its initial value, or below the round-off level of the forces
    (:meth:`AlmObjective.constraint_floor`) when that is larger.
    ``rest_shape_only`` freezes the stiffnesses and
    ``penalty_only`` freezes the multipliers at zero.
    """

    rho: float = 1e6
    w_stiff: float = 1e3
    w_rest: float = 1.0
    eps_p: float = 1e-8
    k_max: int = 100
    mu: float = 1.0
    eta: float = None
    eps: float = 1e-10
    rest_shape_only: bool = False
    penalty_only: bool = False
    lbar_min: float = None
    stiffness_max: float = np.inf
    eq_tol: float = 1e-6
    curvature_dims: int = 2
    interleaved: bool = True
    bcqp: BcqpOptions = dataclasses.field(default_factory=_inner_defaults)

    def __post_init__(self):
        if self.eta is None:
            self.eta = self.mu / 4
        if not self.rho > 0:
            raise ConfigError("The penalty rho must be positive.")
        if not self.mu > 0:
            raise ConfigError("The curvature bound mu must be positive.")
        if not self.eta > 0:
            raise ConfigError("The twist bound eta must be positive.")
        if not self.eps > 0:
            raise ConfigError("The lower bound eps must be positive.")
        if not (self.w_stiff > 0 and self.w_rest > 0):
            raise ConfigError("Regularization weights must be positive.")
        if self.k_max < 1:
            raise ConfigError("At least one iteration is required.")
        if self.lbar_min is not None and not self.lbar_min > 0:
            raise ConfigError("The rest length bound must be positive.")
        if not self.stiffness_max > self.eps:
            raise ConfigError("The stiffness upper bound must exceed eps.")
        if self.curvature_dims not in (2, 4):
            raise ConfigError("The curvature dimension must be 2 or 4.")


@dataclasses.dataclass
class DualState:
    """Lagrange multipliers of the equilibrium constraint."""

    lam: np.ndarray

    @classmethod
    def zeros(cls, n):
        """Multipliers initialized to zero."""

        return cls(np.zeros(n))

    def updated(self, c, rho):
        """``lambda - rho c``."""

        return DualState(dual_update(self.lam, c, rho))


@dataclasses.dataclass
class IterationRecord:
    """One outer iteration."""

    k: int
    norm_dp: float
    norm_c: float
    mprgp_iters: int
    wall_ns: int
    step: float
    value: float


@dataclasses.dataclass
class AlmReport:
    """Outcome of :func:`optimize`."""

    termination: Termination
    iterations: int
    norm_c0: float
    norm_c: float
    wall_ns: int
    records: list = dataclasses.field(default_factory=list)
    feasible: bool = True
    n_params: int = 0
    tolerance: float = 0.0

    @property
    def converged(self):
        """True for :attr:`Termination.CONVERGED`."""

        return self.termination is Termination.CONVERGED

    @property
    def reduction(self):
        """``|c(p)| / |c(p0)|``; zero when both vanish."""

        if self.norm_c0 == 0:
            return 0.0 if self.norm_c == 0 else np.inf
        return self.norm_c / self.norm_c0

    def to_dict(self):
        """JSON-ready summary."""

        return {
            "termination": self.termination.value,
            "iterations": self.iterations,
            "norm_c0": self.norm_c0,
            "norm_c": self.norm_c,
            "wall_ns": self.wall_ns,
            "feasible": self.feasible,
            "n_params": self.n_params,
            "tolerance": self.tolerance,
        }


class AlmObjective:
    """
    The augmented Lagrangian of one strand at a fixed target shape.
    """

    def __init__(self, config, state, rest0, layout, options):
        """
        Constructor.

        Parameters
        ----------
        config : :class:`~sagfree.strands.StrandConfig`
        state : :class:`~sagfree.strands.StrandState`
            Target shape.
        rest0 : :class:`~sagfree.strands.RestParams`
            Initial parameters; also the template for parameters outside the
            layout.
        layout : :class:`~sagfree.parameters.ParamLayout`
        options : :class:`AlmOptions`
        """
        if layout.N != state.N:
            raise DimensionMismatchError(layout.N, state.N, "parameter layout")
        self.config = config
        self.state = state
        self.rest0 = rest0
        self.layout = layout
        self.options = options
        self.geometry = StrandGeometry(state)
        self.mass = mass_matrix(config, self.geometry.lengths)
        self.f_ext = gravity_force(config, self.mass)
        self.p0 = layout.pack(rest0)
        self.weights = weight_diagonal(
            layout, options.w_stiff, options.w_rest
        )
        self._inv_sqrt_m = 1.0 / np.sqrt(self.mass.active)

    def rest(self, p):
        """Rest parameters of the vector ``p``."""

        return self.layout.unpack(p, self.rest0)

    def force(self, p):
        """Active force at the target shape."""

        return total_force(
            self.config, self.state, self.rest(p), self.mass, self.geometry
        )

    def constraint(self, p):
        """``c(p) = M^{-1/2} f(p)``."""

        return constraint(self.mass, self.force(p))

    def constraint_floor(self):
        """
        Round-off level of ``|c|``: machine epsilon times the axial force of
        a unit strain at unit stiffness multiplier, in the constraint metric
        of the lightest vertex.
        """
        force = self.rest0.s * self.config.area
        return float(np.finfo(float).eps * force * np.max(self._inv_sqrt_m))

    def jacobian(self, p):
        """Force Jacobian at ``p``."""

        return assemble_jacobian(
            self.config, self.state, self.rest(p), self.layout, self.geometry
        )

    def value(self, p, lam):
        """Augmented Lagrangian value."""

        d = np.asarray(p) - self.p0
        c = self.constraint(p)
        return float(
            0.5 * d @ (self.weights * d)
            - lam @ c
            + 0.5 * self.options.rho * c @ c
        )

    def gradient(self, p, lam, J=None):
        """
        ``W (p - p0) - Jᵀ M^{-1/2} lambda + rho Jᵀ M⁻¹ f``.

        Second derivatives of the force with respect to the rest lengths
        are dropped.
        """
        J = self.jacobian(p) if J is None else J
        c = self.constraint(p)
        y = self._inv_sqrt_m * (self.options.rho * c - lam)
        return self.weights * (np.asarray(p) - self.p0) + J.rmatvec(y)

    def hessian(self, p, J=None):
        """Gauss-Newton Hessian ``W + rho Jᵀ M⁻¹ J`` as a banded matrix."""

        J = self.jacobian(p) if J is None else J
        A = J.normal_matrix(self.options.rho / self.mass.active)
        return A.with_diagonal_added(self.weights)


def alm_value(objective, p, lam):
    """
    Augmented Lagrangian value, see :meth:`AlmObjective.value`.
    """
    return objective.value(p, lam)


def alm_gradient(objective, p, lam):
    """
    Augmented Lagrangian gradient, see :meth:`AlmObjective.gradient`.
    """
    return objective.gradient(p, lam)


def gn_hessian(objective, p):
    """
    Gauss-Newton Hessian, see :meth:`AlmObjective.hessian`.
    """
    return objective.hessian(p)


def newton_step(H, grad, p, lo, hi, dp_prev=None, options=None):
    """
    Box-constrained Newton step.

    Solves ``min 1/2 dpᵀ H dp + gradᵀ dp`` over ``lo - p <= dp <= hi - p``
    with MPRGP, warm-started from ``dp_prev`` projected into the box.

    The stretching columns of the Gauss-Newton Hessian are many orders of
    magnitude stiffer than the stiffness and curvature columns, so MPRGP
    runs on the Jacobi-scaled QP in ``y = dp / d`` with
    ``d = diag(H)^(-1/2)``. The box stays a box and the scaled matrix has a
    unit diagonal. Components at a bound are returned exactly at the bound.

    Parameters
    ----------
    H : :class:`~sagfree.banded.BandedSym`
        SPD with a positive diagonal.
    grad, p, lo, hi : array_like
    dp_prev : array_like, optional
    options : :class:`~sagfree.bcqp.BcqpOptions`, optional

    Returns
    -------
    (:class:`numpy.ndarray`, :class:`~sagfree.bcqp.BcqpResult`)
        The step and the MPRGP result in scaled variables.
    """
    p = np.asarray(p, dtype=float)
    lo = np.asarray(lo, dtype=float) - p
    hi = np.asarray(hi, dtype=float) - p
    d = 1.0 / np.sqrt(H.diagonal())
    problem = BcqpProblem(
        H.scaled_symmetric(d),
        -d * np.asarray(grad, dtype=float),
        lo / d,
        hi / d,
        x0=None if dp_prev is None else np.asarray(dp_prev) / d,
    )
    result = mprgp(problem, options)
    if not result.converged:
        logger.warning(
            "Inner solve stopped after %d iterations, residual %.3e.",
            result.iterations,
            result.residual_history[-1][2],
        )
    flags = result.final_active.flags
    dp = np.clip(d * result.x, lo, hi)
    dp = np.where(flags < 0, lo, np.where(flags > 0, hi, dp))
    return dp, result


def newton_problem(config, state, rest0, options=None):
    """
    The box-constrained QP of the first Newton step of :func:`optimize`.

    Used to benchmark the inner solvers on the system the optimizer
    actually solves.

    Parameters
    ----------
    config : :class:`~sagfree.strands.StrandConfig`
    state : :class:`~sagfree.strands.StrandState`
    rest0 : :class:`~sagfree.strands.RestParams`
    options : :class:`AlmOptions`, optional

    Returns
    -------
    :class:`~sagfree.bcqp.BcqpProblem`
        Over the step ``dp``, starting at zero.
    """
    options = AlmOptions() if options is None else options
    layout = ParamLayout.from_options(
        state.N,
        rest_shape_only=options.rest_shape_only,
        curvature_dims=options.curvature_dims,
        interleaved=options.interleaved,
    )
    objective = AlmObjective(config, state, rest0, layout, options)
    lo, hi = compute_bounds(objective.p0, layout, options)
    p = np.clip(objective.p0, lo, hi)
    lam = np.zeros(4 * state.N - 8)
    J = objective.jacobian(p)
    return BcqpProblem(
        objective.hessian(p, J),
        -objective.gradient(p, lam, J),
        lo - p,
        hi - p,
    )


def line_search_update(objective, params, dp, lam, grad, value=None):
    """
    Backtracking line search with the Armijo condition.

    Tries ``tau = 1, 1/2, 1/4, ...`` (at most 20 halvings) until
    ``L(p + tau dp) <= L(p) + c1 tau gradᵀ dp`` with ``c1 = 1e-4``. The
    accepted point is clamped into the bounds; rest curvature slots are
    synchronized when the parameters are unpacked.

    Parameters
    ----------
    objective : :class:`AlmObjective`
    params : :class:`~sagfree.parameters.ParamVector`
        Current iterate and bounds.
    dp : array_like
        Newton step.
    lam : array_like
        Multipliers.
    grad : array_like
        ``grad L`` at the current iterate.
    value : :class:`float`, optional
        ``L`` at the current iterate.

    Returns
    -------
    (:class:`numpy.ndarray`, :class:`bool`, :class:`float`)
        Next iterate, acceptance flag and step length.
    """
    p = params.values
    dp = np.asarray(dp, dtype=float)
    if not np.any(dp):
        return p, True, 1.0
    if value is None:
        value = objective.value(p, lam)
    slope = float(np.asarray(grad) @ dp)
    tau = 1.0
    for _ in range(MAX_HALVINGS + 1):
        trial = params.project(p + tau * dp)
        if objective.value(trial, lam) <= value + ARMIJO_C1 * tau * slope:
            return trial, True, tau
        logger.debug("Line search: halving step %.3e.", tau)
        tau *= 0.5
    return p, False, 0.0


def dual_update(lam, c, rho):
    """
    Multiplier update ``lambda - rho c``.

    Raises
    ------
    DimensionMismatchError
    """
    lam = np.asarray(lam, dtype=float)
    c = np.asarray(c, dtype=float)
    if lam.shape != c.shape:
        raise DimensionMismatchError(lam.size, c.size, "constraint")
    return lam - rho * c


def optimize(config, state, rest0, options=None, callback=None):
    """
    Optimize rest shape and stiffness parameters for static equilibrium.

    Parameters
    ----------
    config : :class:`~sagfree.strands.StrandConfig`
    state : :class:`~sagfree.strands.StrandState`
        Target shape.
    rest0 : :class:`~sagfree.strands.RestParams`
        Initial parameters, typically
        :func:`~sagfree.strands.naive_rest_params`.
    options : :class:`AlmOptions`, optional
    callback : callable, optional
        Called with every accepted :class:`~sagfree.parameters.ParamVector`.

    Returns
    -------
    (:class:`~sagfree.strands.RestParams`, :class:`AlmReport`)
    """
    options = AlmOptions() if options is None else options
    start = time.perf_counter_ns()
    layout = ParamLayout.from_options(
        state.N,
        rest_shape_only=options.rest_shape_only,
        curvature_dims=options.curvature_dims,
        interleaved=options.interleaved,
    )
    objective = AlmObjective(config, state, rest0, layout, options)
    lo, hi = compute_bounds(objective.p0, layout, options)
    params = ParamVector(objective.p0, objective.p0, lo, hi, layout)
    dual = DualState.zeros(4 * state.N - 8)

    c = objective.constraint(params.values)
    norm_c0 = norm_c = float(np.linalg.norm(c))
    tolerance = max(options.eq_tol * norm_c0, objective.constraint_floor())
    logger.info(
        "Optimizing %d parameters, |c(p0)| = %.3e, tolerance %.3e.",
        layout.n_params,
        norm_c0,
        tolerance,
    )
    records = []
    dp = np.zeros(layout.n_params)
    termination = Termination.MAX_ITER
    feasible = True
    k = 0
    for k in range(1, options.k_max + 1):
        p = params.values
        J = objective.jacobian(p)
        value = objective.value(p, dual.lam)
        grad = objective.gradient(p, dual.lam, J)
        H = objective.hessian(p, J)
        dp, inner = newton_step(H, grad, p, lo, hi, dp, options.bcqp)
        norm_dp = float(np.linalg.norm(dp))
        stationary = norm_dp <= options.eps_p * max(1.0, np.linalg.norm(p))

        if stationary and (norm_c <= tolerance or options.penalty_only):
            if norm_c <= tolerance:
                termination = Termination.CONVERGED
            else:
                termination = Termination.NOT_CONVERGED
            records.append(
                IterationRecord(
                    k,
                    norm_dp,
                    norm_c,
                    inner.iterations,
                    time.perf_counter_ns() - start,
                    0.0,
                    value,
                )
            )
            break

        tau = 0.0
        if not stationary:
            p_next, accepted, tau = line_search_update(
                objective, params, dp, dual.lam, grad, value
            )
            if not accepted:
                termination = Termination.LINE_SEARCH_STALLED
                logger.warning("Line search stalled at iteration %d.", k)
                break
            params.values = p_next
            feasible = feasible and params.is_feasible()
            if callback is not None:
                callback(params)
            c = objective.constraint(params.values)
            norm_c = float(np.linalg.norm(c))

        if not options.penalty_only:
            dual = dual.updated(c, options.rho)
        records.append(
            IterationRecord(
                k,
                norm_dp,
                norm_c,
                inner.iterations,
                time.perf_counter_ns() - start,
                tau,
                value,
            )
        )
        logger.info(
            "ALM %d: |dp| = %.3e, |c| = %.3e, step %.3g, %d inner iterations.",
            k,
            norm_dp,
            norm_c,
            tau,
            inner.iterations,
        )

    report = AlmReport(
        termination=termination,
        iterations=k,
        norm_c0=norm_c0,
        norm_c=norm_c,
        wall_ns=time.perf_counter_ns() - start,
        records=records,
        feasible=feasible,
        n_params=layout.n_params,
        tolerance=tolerance,
    )
    logger.info(
        "Optimization %s after %d iterations, |c| = %.3e.",
        termination.value,
        k,
        norm_c,
    )
    return objective.rest(params.values), report
