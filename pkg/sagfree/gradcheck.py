"""
Finite-difference verification of every analytic derivative.

:func:`check_gradients` draws random strands from a seeded generator and
compares, with central differences, the inertial gradient, the per-element
stretching, bending and twisting gradients, the total force, every column
of the force Jacobian and the augmented Lagrangian gradient against the
analytic results::

    import sagfree.gradcheck as gc

    report = gc.check_gradients(samples=20, seed=1)
    report.passed
    print(report.format())

The relative error of one comparison is ``|a - b|_inf / max(|a|_inf,
|b|_inf, floor)``, where ``floor`` is a millionth of the largest magnitude
of the same quantity on the strand; the report keeps the worst error per
category. ``flip`` negates the analytic result of one category, which must
make the report fail.
"""

import dataclasses
import logging
import time

import numpy as np

from .energies import (
    energy_inertia,
    grad_bend,
    grad_inertia,
    grad_stretch,
    grad_twist,
    stiffness,
    total_force,
)
from .jacobian import assemble_jacobian
from .optimizer import AlmObjective, AlmOptions
from .parameters import ParamLayout
from .strands import (
    N_CLAMPED,
    StrandConfig,
    StrandGeometry,
    StrandState,
    curvature4,
    gravity_force,
    mass_matrix,
    material_frames,
    naive_rest_params,
    stencil_index,
    tangents_lengths,
    twist,
    vertex_index,
)

logger = logging.getLogger(__name__)

CATEGORIES = (
    "inertia",
    "stretch",
    "bend",
    "twist",
    "total_force",
    "jacobian",
    "alm_gradient",
    "alm_gradient_lbar",
)

TOLERANCES = dict.fromkeys(CATEGORIES, 1e-6)
TOLERANCES["alm_gradient_lbar"] = 1e-4

FD_STEP = 1e-6
"""Central difference step relative to the characteristic scale."""


@dataclasses.dataclass
class GradCheckReport:
    """Worst relative error per category over all sampled strands."""

    worst: dict
    tolerances: dict
    samples: int
    seed: int
    N: int
    wall_ns: int = 0

    @property
    def passed(self):
        """True if no category exceeds its tolerance."""

        return not self.failures()

    def failures(self):
        """Categories whose worst error exceeds the tolerance."""

        return [
            c for c in CATEGORIES if not self.worst[c] <= self.tolerances[c]
        ]

    def rows(self):
        """Summary rows, one per category."""

        return [
            {
                "category": c,
                "worst_rel_err": self.worst[c],
                "tolerance": self.tolerances[c],
                "ok": self.worst[c] <= self.tolerances[c],
            }
            for c in CATEGORIES
        ]

    def format(self):
        """Plain-text table of :meth:`rows`."""

        lines = [f"{'category':<20}{'worst':>12}{'tolerance':>12}  status"]
        for row in self.rows():
            lines.append(
                f"{row['category']:<20}{row['worst_rel_err']:>12.3e}"
                f"{row['tolerance']:>12.0e}  "
                f"{'ok' if row['ok'] else 'FAILED'}"
            )
        return "\n".join(lines)

    def to_dict(self):
        """JSON-friendly copy without timing, identical for equal seeds."""

        return {
            "seed": self.seed,
            "samples": self.samples,
            "N": self.N,
            "worst": dict(self.worst),
            "tolerances": dict(self.tolerances),
            "passed": self.passed,
        }


def relative_error(analytic, numeric, floor=0.0, slack=0.0):
    """
    ``|a - b|_inf / max(|a|_inf, |b|_inf, floor)``; zero if both vanish.

    ``slack`` is subtracted from the numerator first, so differences within
    the uncertainty of a finite-difference estimate count as zero.
    """
    a = np.ravel(analytic)
    b = np.ravel(numeric)
    denom = max(
        np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor
    )
    if denom == 0.0:
        return 0.0
    diff = max(np.max(np.abs(a - b), initial=0.0) - slack, 0.0)
    return float(diff / denom)


def random_strand(rng, N=10):
    """
    Random non-degenerate strand at unit scale with perturbed rest values.

    Edges have lengths in ``[0.8, 1.2]`` and turn by bounded random angles;
    rest lengths, curvatures, twists and stiffness multipliers are moved
    away from the current shape so that every energy term is loaded.

    Returns
    -------
    (StrandConfig, StrandState, RestParams)
    """
    t = rng.normal(size=3)
    t /= np.linalg.norm(t)
    edges = []
    for _ in range(N - 1):
        while True:
            u = t + 0.6 * rng.normal(size=3)
            u /= np.linalg.norm(u)
            if u @ t > -0.3:
                break
        t = u
        edges.append(rng.uniform(0.8, 1.2) * t)
    x = np.vstack([np.zeros(3), np.cumsum(edges, axis=0)])
    theta = rng.uniform(-0.5, 0.5, N - 1)
    config = StrandConfig(
        N,
        radius=0.5,
        density=0.1,
        c_st=1.0,
        c_be=1.0,
        c_tw=1.0,
        gravity=(0.0, 0.0, -1.0),
    )
    state = StrandState.from_positions(x, theta)
    naive = naive_rest_params(config, state)
    rest = dataclasses.replace(
        naive,
        rest_len=naive.rest_len * rng.uniform(0.9, 1.1, N - 1),
        rest_curv=naive.rest_curv + rng.normal(scale=0.2, size=(N - 2, 4)),
        rest_twist=naive.rest_twist + rng.normal(scale=0.2, size=N - 2),
        alpha=naive.alpha * rng.uniform(0.5, 2.0, N - 1),
        beta=naive.beta * rng.uniform(0.5, 2.0, N - 2),
        gamma=naive.gamma * rng.uniform(0.5, 2.0, N - 2),
    )
    return config, state, rest


def _element_energies(config, state, rest):
    x, theta = state.x, state.theta
    t, lengths = tangents_lengths(x)
    m1, m2 = material_frames(state.d1, state.d2, theta)
    k = stiffness(config, rest)
    e_st = 0.5 * k.k_st * (lengths - rest.rest_len) ** 2
    dk = curvature4(t, m1, m2) - rest.rest_curv
    e_be = 0.5 * k.k_be * np.sum(dk**2, axis=1)
    dm = twist(theta, state.ref_twist) - rest.rest_twist
    e_tw = 0.5 * k.k_tw * dm**2
    return e_st, e_be, e_tw


def _energy_derivatives(config, state, rest, h):
    """Central differences of every element energy, shape ``(4N-1, ...)``."""

    q = state.q
    out = [np.zeros((q.size, rest.N - 1)), np.zeros((q.size, rest.N - 2))]
    out.append(np.zeros((q.size, rest.N - 2)))
    for k in range(q.size):
        dq = np.zeros(q.size)
        dq[k] = h[k]
        plus = _element_energies(config, state.with_q(q + dq), rest)
        minus = _element_energies(config, state.with_q(q - dq), rest)
        for d, ep, em in zip(out, plus, minus):
            d[k] = (ep - em) / (2 * h[k])
    return out


def _fd_columns(fun, p, h):
    cols = []
    for k in range(p.size):
        dp = np.zeros(p.size)
        dp[k] = h[k]
        cols.append((fun(p + dp) - fun(p - dp)) / (2 * h[k]))
    return np.array(cols).T


def _sign(flip, category):
    return -1.0 if flip == category else 1.0


def _check_inertia(rng, n, flip):
    q = rng.normal(size=n)
    q_star = rng.normal(size=n)
    mass = rng.uniform(0.5, 2.0, n)
    dt = rng.uniform(0.05, 0.5)
    analytic = _sign(flip, "inertia") * grad_inertia(q, q_star, mass, dt)
    h = np.full(n, FD_STEP)
    numeric = np.array(
        [
            (
                energy_inertia(q + h[k] * e, q_star, mass, dt)
                - energy_inertia(q - h[k] * e, q_star, mass, dt)
            )
            / (2 * h[k])
            for k, e in enumerate(np.eye(n))
        ]
    )
    return relative_error(analytic, numeric)


def _check_elements(config, state, rest, geom, flip):
    N = state.N
    scale = state.length / (N - 1)
    h = np.full(4 * N - 1, FD_STEP * scale)
    h[3::4] = FD_STEP
    d_st, d_be, d_tw = _energy_derivatives(config, state, rest, h)
    vi = vertex_index(N)
    si = stencil_index(N)
    worst = dict.fromkeys(("stretch", "bend", "twist"), 0.0)

    st = [
        _sign(flip, "stretch") * grad_stretch(config, state, rest, i, geom)
        for i in range(1, N - 1)
    ]
    floor = 1e-6 * max(np.max(np.abs(g)) for g in st)
    for i, g in zip(range(1, N - 1), st):
        numeric = np.stack([d_st[vi[i], i], d_st[vi[i + 1], i]])
        worst["stretch"] = max(
            worst["stretch"], relative_error(g, numeric, floor)
        )

    for name, fun, deriv in (
        ("bend", grad_bend, d_be),
        ("twist", grad_twist, d_tw),
    ):
        grads = [
            _sign(flip, name) * fun(config, state, rest, i, geom)
            for i in range(1, N - 1)
        ]
        floor = 1e-6 * max(np.max(np.abs(g)) for g in grads)
        for j, g in enumerate(grads):
            err = relative_error(g, deriv[si[j], j], floor)
            worst[name] = max(worst[name], err)

    mass = mass_matrix(config, rest.rest_len)
    f_ext = gravity_force(config, mass)
    total = d_st.sum(axis=1) + d_be.sum(axis=1) + d_tw.sum(axis=1) - f_ext
    force = total_force(config, state, rest, mass, geom).values
    worst["total_force"] = relative_error(
        _sign(flip, "total_force") * force, -total[N_CLAMPED:]
    )
    return worst


def _parameter_steps(p):
    return FD_STEP * np.maximum(np.abs(p), 1.0)


def _check_jacobian(config, state, rest, geom, layout, flip):
    mass = mass_matrix(config, rest.rest_len)
    p = layout.pack(rest)
    base = layout.unpack(p, rest)
    J = _sign(flip, "jacobian") * assemble_jacobian(
        config, state, base, layout, geom
    ).to_dense()

    def force(v):
        return total_force(
            config, state, layout.unpack(v, rest), mass, geom
        ).values

    steps = _parameter_steps(p)
    numeric = _fd_columns(force, p, steps)
    # Per-column uncertainty: change of the estimate when the step doubles.
    spread = np.max(
        np.abs(numeric - _fd_columns(force, p, 2 * steps)), axis=0
    )
    floor = 1e-6 * np.max(np.abs(numeric))
    return max(
        relative_error(J[:, c], numeric[:, c], floor, spread[c])
        for c in range(layout.n_params)
    )


def _check_alm(rng, config, state, rest, layout, flip):
    options = AlmOptions(
        rho=10.0,
        w_stiff=1.0,
        w_rest=1.0,
        curvature_dims=2 if layout.reduced_curvature else 4,
    )
    objective = AlmObjective(config, state, rest, layout, options)
    p = objective.p0 * rng.uniform(0.95, 1.05, layout.n_params)
    lam = rng.normal(size=4 * state.N - 8)
    analytic = objective.gradient(p, lam)
    numeric = _fd_columns(
        lambda v: np.array([objective.value(v, lam)]), p, _parameter_steps(p)
    )[0]
    lbar = layout.field_mask("length")
    floor = 1e-6 * np.max(np.abs(numeric))
    return {
        "alm_gradient": relative_error(
            _sign(flip, "alm_gradient") * analytic[~lbar],
            numeric[~lbar],
            floor,
        ),
        "alm_gradient_lbar": relative_error(
            _sign(flip, "alm_gradient_lbar") * analytic[lbar],
            numeric[lbar],
            floor,
        ),
    }


def check_strand(rng, N=10, curvature_dims=2, flip=None):
    """
    Worst relative error per category on one random strand.

    Parameters
    ----------
    rng : :class:`numpy.random.Generator`
    N : :class:`int`, optional
        Vertex count, by default 10.
    curvature_dims : :class:`int`, optional
        Curvature columns of the checked parameter layout, 2 or 4.
    flip : :class:`str`, optional
        Category whose analytic result is negated.

    Returns
    -------
    :class:`dict`
    """
    config, state, rest = random_strand(rng, N)
    geom = StrandGeometry(state)
    layout = ParamLayout.from_options(N, curvature_dims=curvature_dims)
    errors = {"inertia": _check_inertia(rng, 4 * N - 1, flip)}
    errors.update(_check_elements(config, state, rest, geom, flip))
    errors["jacobian"] = _check_jacobian(
        config, state, rest, geom, layout, flip
    )
    errors.update(_check_alm(rng, config, state, rest, layout, flip))
    return errors


def check_gradients(samples=100, N=10, seed=0, flip=None, tolerances=None):
    """
    Run the finite-difference suite over random strands.

    Even samples use the reduced curvature layout, odd samples the 4D one.

    Parameters
    ----------
    samples : :class:`int`, optional
        Number of random strands, by default 100.
    N : :class:`int`, optional
        Vertex count, by default 10.
    seed : :class:`int`, optional
        Generator seed.
    flip : :class:`str`, optional
        Category whose analytic result is negated.
    tolerances : :class:`dict`, optional
        Overrides of :data:`TOLERANCES`.

    Returns
    -------
    :class:`GradCheckReport`

    Raises
    ------
    ValueError
        If ``flip`` is not a category or fewer than 4 vertices are asked
        for.
    """
    if flip is not None and flip not in CATEGORIES:
        raise ValueError(
            f"Unknown category `{flip}`. Available: {', '.join(CATEGORIES)}."
        )
    if N < 4:
        raise ValueError("A strand needs at least 4 vertices.")
    limits = dict(TOLERANCES)
    limits.update(tolerances or {})
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(CATEGORIES, 0.0)
    start = time.perf_counter_ns()
    for k in range(samples):
        errors = check_strand(rng, N, 2 if k % 2 == 0 else 4, flip)
        for c in CATEGORIES:
            worst[c] = max(worst[c], errors[c])
        logger.debug("Strand %d: %s", k, errors)
    report = GradCheckReport(
        worst=worst,
        tolerances=limits,
        samples=samples,
        seed=seed,
        N=N,
        wall_ns=time.perf_counter_ns() - start,
    )
    logger.info(
        "Checked %d strands in %.2f s, %s.",
        samples,
        report.wall_ns * 1e-9,
        "passed" if report.passed else "FAILED",
    )
    return report
