"""
Box-constrained quadratic programs::

    minimize 1/2 xᵀ A x - bᵀ x    subject to lo <= x <= hi

with a symmetric positive definite banded ``A``, solved by MPRGP (modified
proportioning with reduced gradient projections). MPRGP alternates

* conjugate gradient steps on the free DOFs, truncated when a bound would be
  crossed,
* expansion steps that move to the blocking bound and take a fixed-length
  projected gradient step, and
* proportioning steps that release DOFs whose chopped gradient dominates
  the free gradient.

The free gradient is preconditioned. The preconditioners are classes derived
from :class:`Preconditioner` and live in a registry::

    import sagfree.bcqp as qp

    problem = qp.BcqpProblem(A, b, lo, hi)
    result = qp.mprgp(problem, qp.BcqpOptions(preconditioner="asc"))
    result.x, result.iterations, result.termination

``asc`` (active-set Cholesky) factorizes ``A`` once and applies the factor
through substitutions filtered by the current active set, so the
preconditioned operator stays symmetric on the free face. Without active
bounds it is the exact inverse and MPRGP converges in one iteration.
``none``, ``diagonal``, ``jacobi`` (two weighted Jacobi sweeps) and ``ssor``
are available for comparison. New preconditioners can be added with
:func:`register_preconditioner`.

:func:`pgs_solve` (projected Gauss-Seidel) is a slow but simple reference
solver.
"""

import abc
import dataclasses
import enum
import logging
import time

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .banded import ActiveSet, BandedSym, ldlt_factorize, solve_filtered
from .exceptions import (
    ConfigError,
    DimensionMismatchError,
    NotSpdError,
)

logger = logging.getLogger(__name__)


class Termination(enum.Enum):
    """Reason an MPRGP run stopped."""

    CONVERGED = "converged"
    MAX_ITER = "max_iter"


class BcqpProblem:
    """
    A box-constrained QP with matrix ``A``, linear term ``b`` and bounds.
    """

    def __init__(self, A, b, lo=None, hi=None, x0=None):
        """
        Constructor.

        Parameters
        ----------
        A : :class:`~sagfree.banded.BandedSym`
            SPD matrix.
        b : array_like
            Right-hand side.
        lo, hi : array_like, optional
            Bounds, infinite entries allowed. Unbounded by default.
        x0 : array_like, optional
            Starting point, projected into the bounds. Zero by default.

        Raises
        ------
        DimensionMismatchError
            If a vector does not have ``A.n`` entries.
        ValueError
            If ``lo > hi`` somewhere.
        """
        n = A.n
        self.A = A
        self.b = self._vector(b, n, "right-hand side")
        self.lo = (
            np.full(n, -np.inf) if lo is None else self._vector(lo, n, "bound")
        )
        self.hi = (
            np.full(n, np.inf) if hi is None else self._vector(hi, n, "bound")
        )
        if np.any(self.lo > self.hi):
            raise ValueError("Lower bounds exceed upper bounds.")
        x0 = np.zeros(n) if x0 is None else self._vector(x0, n, "start")
        self.x0 = self.project(x0)

    @staticmethod
    def _vector(v, n, what):
        v = np.array(v, dtype=float)
        if v.shape != (n,):
            raise DimensionMismatchError(n, v.size, what)
        return v

    @property
    def n(self):
        """Dimension."""

        return self.A.n

    def project(self, x):
        """Clamp ``x`` into the bounds."""

        return np.clip(x, self.lo, self.hi)

    def objective(self, x):
        """``1/2 xᵀ A x - bᵀ x``."""

        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.A.matvec(x) - self.b @ x)

    def gradient(self, x):
        """``A x - b``."""

        return self.A.matvec(x) - self.b


@dataclasses.dataclass
class BcqpOptions:
    """
    MPRGP settings.

    ``abar`` is the expansion step length; by default ``1 / lambda`` with
    ``lambda`` estimated by 30 power iterations. ``gamma`` is the
    proportioning constant.
    """

    tol_abs: float = 1e-10
    tol_rel: float = 1e-10
    max_iter: int = 10000
    gamma: float = 1.0
    abar: float = None
    preconditioner: str = "asc"

    def __post_init__(self):
        if not (self.tol_abs > 0 and self.tol_rel > 0):
            raise ConfigError("Tolerances must be positive.")
        if self.max_iter < 0:
            raise ConfigError("The iteration limit must not be negative.")
        if not self.gamma > 0:
            raise ConfigError("The proportioning constant must be positive.")
        if self.abar is not None and not self.abar > 0:
            raise ConfigError("The expansion step length must be positive.")
        if (
            isinstance(self.preconditioner, str)
            and self.preconditioner not in _preconditioner_registry
        ):
            raise ConfigError(
                f"Unknown preconditioner `{self.preconditioner}`. "
                f"Available: {', '.join(get_preconditioner_names())}."
            )


@dataclasses.dataclass
class BcqpResult:
    """
    Outcome of an MPRGP run.

    ``residual_history`` holds ``(iteration, wall_ns, residual)`` rows with
    the wall time in nanoseconds since the start of the run.
    """

    x: np.ndarray
    iterations: int
    termination: Termination
    final_active: ActiveSet
    residual_history: list = dataclasses.field(default_factory=list)
    steps: dict = dataclasses.field(default_factory=dict)

    @property
    def converged(self):
        """True when the residual tolerance was met."""

        return self.termination is Termination.CONVERGED


class Preconditioner(abc.ABC):
    """
    A symmetric preconditioner of ``A`` restricted to the free DOFs.

    Derived classes implement :meth:`apply`, which must return exact zeros
    on the active DOFs.
    """

    name = None

    def __init__(self, A):
        """
        Constructor.

        Parameters
        ----------
        A : :class:`~sagfree.banded.BandedSym`
        """
        self.A = A

    @abc.abstractmethod
    def apply(self, r, active):
        """
        Apply the preconditioner.

        Parameters
        ----------
        r : :class:`numpy.ndarray`
            Free gradient.
        active : :class:`~sagfree.banded.ActiveSet`

        Returns
        -------
        :class:`numpy.ndarray`
        """

        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(n={self.A.n})"


class IdentityPreconditioner(Preconditioner):
    """No preconditioning."""

    name = "none"

    def apply(self, r, active):
        return np.where(active.free, r, 0.0)


class DiagonalPreconditioner(Preconditioner):
    """Inverse of the diagonal of ``A``."""

    name = "diagonal"

    def __init__(self, A):
        super().__init__(A)
        d = A.diagonal()
        if np.any(d <= 0):
            raise NotSpdError("The matrix has a non-positive diagonal entry.")
        self._inv = 1.0 / d

    def apply(self, r, active):
        return np.where(active.free, self._inv * r, 0.0)


class ActiveSetCholesky(Preconditioner):
    """
    Active-set Cholesky: one ``L D Lᵀ`` factorization of the full ``A``,
    applied by filtered substitution.
    """

    name = "asc"

    def __init__(self, A):
        super().__init__(A)
        self.factor = ldlt_factorize(A)

    def apply(self, r, active):
        return solve_filtered(self.factor, r, active)


class WeightedJacobi(Preconditioner):
    """Weighted Jacobi sweeps on the free DOFs, starting from zero."""

    name = "jacobi"
    omega = 0.5
    sweeps = 2

    def __init__(self, A):
        super().__init__(A)
        self._inv = 1.0 / A.diagonal()

    def apply(self, r, active):
        free = active.free
        r = np.where(free, r, 0.0)
        z = np.zeros_like(r)
        for _ in range(self.sweeps):
            residual = r - np.where(free, self.A.matvec(z), 0.0)
            z = z + self.omega * self._inv * residual
        return z


class Ssor(Preconditioner):
    """
    Symmetric successive over-relaxation on the free DOFs:
    ``M = (D/w + L) (w / (2 - w) D)⁻¹ (D/w + L)ᵀ``.
    """

    name = "ssor"
    omega = 1.2

    def __init__(self, A):
        super().__init__(A)
        sparse = A.to_sparse()
        self._diag = A.diagonal()
        self._lower = (
            scipy.sparse.tril(sparse, k=-1)
            + scipy.sparse.diags(self._diag / self.omega)
        ).tocsr()

    def apply(self, r, active):
        free = active.free
        z = np.zeros_like(r)
        if not free.any():
            return z
        idx = np.nonzero(free)[0]
        lower = self._lower[idx][:, idx].tocsr()
        y = scipy.sparse.linalg.spsolve_triangular(lower, r[idx], lower=True)
        y *= self._diag[idx] * (2.0 - self.omega) / self.omega
        upper = lower.T.tocsr()
        z[idx] = scipy.sparse.linalg.spsolve_triangular(upper, y, lower=False)
        return z


_preconditioner_registry = {}


def register_preconditioner(cls):
    """
    Register a :class:`Preconditioner` subclass under its ``name``.

    Raises
    ------
    ValueError
        If the name identifier is already in use.
    """
    if cls.name in _preconditioner_registry:
        raise ValueError(
            "Preconditioner identifier already in use. "
            f"Deregister `{cls.name}` first."
        )
    _preconditioner_registry[cls.name] = cls
    return cls


def deregister_preconditioner(name):
    """Deregister a preconditioner."""

    _preconditioner_registry.pop(name, None)


def get_preconditioner_names():
    """
    Names of the registered preconditioners.

    Returns
    -------
    :class:`list` (:class:`str`)
    """
    return sorted(_preconditioner_registry)


def make_preconditioner(name, A):
    """
    Instantiate a registered preconditioner for ``A``.

    Raises
    ------
    ConfigError
        If ``name`` is not registered.
    """
    try:
        cls = _preconditioner_registry[name]
    except KeyError:
        raise ConfigError(
            f"Unknown preconditioner `{name}`. "
            f"Available: {', '.join(get_preconditioner_names())}."
        ) from None
    return cls(A)


for _cls in (
    IdentityPreconditioner,
    DiagonalPreconditioner,
    ActiveSetCholesky,
    WeightedJacobi,
    Ssor,
):
    register_preconditioner(_cls)


def asc_preconditioner(A):
    """
    Factorize ``A`` once for active-set Cholesky preconditioning.

    Returns
    -------
    :class:`ActiveSetCholesky`
    """
    return ActiveSetCholesky(A)


def projected_gradient_parts(A, b, x, lo, hi):
    """
    Split the gradient ``g = A x - b`` at a feasible ``x``.

    The free gradient is ``g`` on the free DOFs. The chopped gradient is
    ``min(g, 0)`` at lower-bound DOFs and ``max(g, 0)`` at upper-bound DOFs.
    Both vanish elsewhere, including DOFs fixed by ``lo == hi``.

    Returns
    -------
    (:class:`numpy.ndarray`, :class:`numpy.ndarray`)
    """
    g = A.matvec(x) - np.asarray(b, dtype=float)
    active = ActiveSet.from_bounds(x, lo, hi)
    return _split(g, active, np.asarray(lo) == np.asarray(hi))


def _split(g, active, fixed):
    flags = np.where(fixed, 0, active.flags)
    free = np.where(active.free, g, 0.0)
    chopped = np.where(flags < 0, np.minimum(g, 0.0), 0.0) + np.where(
        flags > 0, np.maximum(g, 0.0), 0.0
    )
    return free, chopped


def _reduced_free(phi, x, lo, hi, abar):
    with np.errstate(invalid="ignore"):
        up = np.minimum((x - lo) / abar, phi)
        down = np.maximum((x - hi) / abar, phi)
    return np.where(phi > 0, up, np.where(phi < 0, down, 0.0))


def _feasible_step(x, p, lo, hi):
    # largest a >= 0 with lo <= x - a p <= hi, and the blocking DOF
    with np.errstate(divide="ignore", invalid="ignore"):
        steps = np.where(
            p > 0, (x - lo) / p, np.where(p < 0, (x - hi) / p, np.inf)
        )
    steps = np.where(np.isnan(steps), np.inf, steps)
    k = int(np.argmin(steps))
    return max(float(steps[k]), 0.0), k


def estimate_norm(A, iterations=30, seed=0):
    """
    Power-iteration estimate of the largest eigenvalue of ``A``.

    Returns
    -------
    :class:`float`
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        w = A.matvec(v)
        lam = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0:
            break
        v = w / norm
    return lam


def mprgp(problem, options=None, callback=None, preconditioner=None):
    """
    Solve a box-constrained QP with MPRGP.

    Parameters
    ----------
    problem : :class:`BcqpProblem`
    options : :class:`BcqpOptions`, optional
    callback : callable, optional
        Called with every accepted iterate.
    preconditioner : :class:`Preconditioner`, optional
        Prebuilt preconditioner of ``problem.A``, overriding
        ``options.preconditioner``.

    Returns
    -------
    :class:`BcqpResult`

    Raises
    ------
    NotSpdError
        If a search direction shows non-positive curvature.
    """
    options = BcqpOptions() if options is None else options
    A, b, lo, hi = problem.A, problem.b, problem.lo, problem.hi
    if preconditioner is None:
        preconditioner = make_preconditioner(options.preconditioner, A)
    abar = options.abar
    if abar is None:
        lam = estimate_norm(A)
        if not lam > 0:
            raise NotSpdError("The matrix has non-positive curvature.")
        abar = 1.0 / lam
    tol = max(options.tol_abs, options.tol_rel * float(np.linalg.norm(b)))
    gamma2 = options.gamma**2
    fixed = lo == hi

    start = time.perf_counter_ns()
    history = []
    steps = {"cg": 0, "expansion": 0, "proportioning": 0}

    def snap(x):
        x = problem.project(x)
        active = ActiveSet.from_bounds(x, lo, hi)
        flags = active.flags
        x = np.where(flags < 0, lo, np.where(flags > 0, hi, x))
        return x, active

    x, active = snap(problem.x0)
    g = A.matvec(x) - b
    phi, beta = _split(g, active, fixed)
    z = preconditioner.apply(phi, active)
    p = z.copy()

    iteration = 0
    while True:
        residual = float(np.linalg.norm(phi + beta))
        history.append((iteration, time.perf_counter_ns() - start, residual))
        if residual <= tol:
            termination = Termination.CONVERGED
            break
        if iteration >= options.max_iter:
            termination = Termination.MAX_ITER
            break
        iteration += 1

        phi_tilde = _reduced_free(phi, x, lo, hi, abar)
        if beta @ beta <= gamma2 * (phi_tilde @ phi):
            Ap = A.matvec(p)
            pAp = float(p @ Ap)
            if not pAp > 0:
                raise NotSpdError(
                    "Non-positive curvature along a search direction."
                )
            a_cg = float(phi @ p) / pAp
            a_f, k = _feasible_step(x, p, lo, hi)
            if a_cg <= a_f:
                steps["cg"] += 1
                x, active = snap(x - a_cg * p)
                g = A.matvec(x) - b
                phi, beta = _split(g, active, fixed)
                z = preconditioner.apply(phi, active)
                p = z - (float(z @ Ap) / pAp) * p
                p = np.where(active.free, p, 0.0)
                logger.debug("MPRGP %d: cg step %.3e", iteration, a_cg)
            else:
                steps["expansion"] += 1
                x = x - a_f * p
                x[k] = lo[k] if p[k] > 0 else hi[k]
                x, active = snap(x)
                g = A.matvec(x) - b
                phi, _ = _split(g, active, fixed)
                x, active = snap(x - abar * phi)
                g = A.matvec(x) - b
                phi, beta = _split(g, active, fixed)
                z = preconditioner.apply(phi, active)
                p = z.copy()
                logger.debug(
                    "MPRGP %d: expansion, %d active",
                    iteration,
                    active.n_active,
                )
        else:
            steps["proportioning"] += 1
            d = beta
            Ad = A.matvec(d)
            dAd = float(d @ Ad)
            if not dAd > 0:
                raise NotSpdError(
                    "Non-positive curvature along a search direction."
                )
            a_f, _ = _feasible_step(x, d, lo, hi)
            a = min(float(g @ d) / dAd, a_f)
            x, active = snap(x - a * d)
            g = A.matvec(x) - b
            phi, beta = _split(g, active, fixed)
            z = preconditioner.apply(phi, active)
            p = z.copy()
            logger.debug("MPRGP %d: proportioning", iteration)

        if callback is not None:
            callback(x)

    logger.debug(
        "MPRGP stopped (%s) after %d iterations, residual %.3e.",
        termination.value,
        iteration,
        residual,
    )
    return BcqpResult(
        x=x,
        iterations=iteration,
        termination=termination,
        final_active=active,
        residual_history=history,
        steps=steps,
    )


def pgs_solve(problem, iters, tol=0.0):
    """
    Projected Gauss-Seidel sweeps.

    Each coordinate is set to the minimizer along its axis, clamped into its
    bounds. Sweeping stops after ``iters`` sweeps or when no coordinate
    moves by more than ``tol``.

    Parameters
    ----------
    problem : :class:`BcqpProblem`
    iters : :class:`int`
        Maximum number of sweeps.
    tol : :class:`float`, optional
        Change threshold, by default 0.

    Returns
    -------
    :class:`numpy.ndarray`
    """
    A = problem.A.to_sparse().tocsr()
    indptr, indices, data = A.indptr, A.indices, A.data
    diag = problem.A.diagonal()
    b, lo, hi = problem.b, problem.lo, problem.hi
    x = problem.x0.copy()
    for _ in range(iters):
        change = 0.0
        for i in range(problem.n):
            cols = indices[indptr[i] : indptr[i + 1]]
            g = data[indptr[i] : indptr[i + 1]] @ x[cols] - b[i]
            new = min(max(x[i] - g / diag[i], lo[i]), hi[i])
            change = max(change, abs(new - x[i]))
            x[i] = new
        if change <= tol:
            break
    return x
