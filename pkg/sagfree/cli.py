"""
The ``sagfree`` command line.

::

    sagfree optimize --scene vertical --n 30 --c-st 1e3 --lbar-min 1e-2
    sagfree simulate --scene vertical --n 30 --c-st 1e3 --params params.json
    sagfree check-grad --samples 100 --seed 0
    sagfree bench-bcqp --scene horizontal --n 30 --mu 0.4

Every command accepts ``--config FILE``, a JSON object whose keys are the
command's long option names (dashes or underscores); options given on the
command line win over the file. Data goes to files under ``--out-dir``, the
summary table to stdout and the log to stderr.

Exit codes:

====  ==============================================================
0     success
2     an optimization did not converge or a check exceeded tolerance
3     invalid input file or configuration
4     a file could not be read or written
5     solver or geometry failure
====  ==============================================================
"""

import argparse
import concurrent.futures
import json
import logging
import pathlib
import sys
import time

import numpy as np

from . import __version__, formats
from .banded import write_matrix_market
from .bcqp import (
    BcqpOptions,
    BcqpProblem,
    get_preconditioner_names,
    mprgp,
    pgs_solve,
    projected_gradient_parts,
)
from .exceptions import ConfigError, IoError, SagfreeError
from .gradcheck import CATEGORIES, check_gradients
from .optimizer import AlmOptions, newton_problem, optimize
from .simulation import RootMotion, SimOptions, simulate
from .strands import (
    batch_scene,
    get_scene_kinds,
    make_scene,
    naive_rest_params,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_SOLVER = 5

SCENE_LENGTHS = {"vertical": 1.0, "coil": 1.0}
"""Default strand length per scene; other scenes use 0.1 m."""

_MATERIAL = ("radius", "density", "c_st", "c_be", "c_tw", "gravity")


class _Options:
    """Collects the destinations of every option of a command."""

    def __init__(self, parser):
        self.parser = parser
        self.keys = set()

    def add(self, *flags, **kwargs):
        action = self.parser.add_argument(*flags, **kwargs)
        self.keys.add(action.dest)
        return action


def _common_options(opts):
    opts.add(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="more log output, repeatable",
    )
    opts.add(
        "-q", "--quiet", action="count", default=0, help="less log output"
    )
    opts.add("--config", help="JSON file of option values")
    opts.add(
        "--out-dir", default=".", help="output directory (default: .)"
    )


def _strand_options(opts, scene=None, n=30):
    opts.add("--input", help="strand JSON or CSV file")
    opts.add("--scene", default=scene, help="synthetic scene name")
    opts.add("--n", type=int, default=n, help=f"vertex count (default {n})")
    opts.add(
        "--length",
        type=float,
        help="strand length in m (default 1 for vertical and coil, else 0.1)",
    )
    opts.add("--count", type=int, default=1, help="number of scene strands")
    opts.add("--seed", type=int, default=0, help="random seed")
    opts.add("--spacing", type=float, help="root spacing of scene strands")
    opts.add("--radius", type=float, help="radius in m")
    opts.add("--density", type=float, help="density in kg/m³")
    opts.add("--c-st", type=float, help="stretching modulus in Pa")
    opts.add("--c-be", type=float, help="bending modulus in Pa")
    opts.add("--c-tw", type=float, help="twisting modulus in Pa")
    opts.add("--gravity", type=float, nargs=3, help="gravity in m/s²")
    opts.add(
        "--workers",
        type=int,
        default=1,
        help="worker processes for multi-strand inputs",
    )


def _alm_options(opts):
    defaults = AlmOptions()
    opts.add("--rho", type=float, default=defaults.rho, help="penalty")
    opts.add("--w-stiff", type=float, default=defaults.w_stiff)
    opts.add("--w-rest", type=float, default=defaults.w_rest)
    opts.add("--eps-p", type=float, default=defaults.eps_p)
    opts.add("--k-max", type=int, default=defaults.k_max)
    opts.add(
        "--mu",
        type=float,
        default=defaults.mu,
        help="bound on rest curvature changes",
    )
    opts.add("--eta", type=float, help="bound on rest twist changes")
    opts.add("--eps", type=float, default=defaults.eps)
    opts.add("--lbar-min", type=float, help="lower bound of rest lengths")
    opts.add("--stiffness-max", type=float, default=defaults.stiffness_max)
    opts.add("--eq-tol", type=float, default=defaults.eq_tol)
    opts.add(
        "--curvature-dims", type=int, choices=(2, 4), default=2
    )
    opts.add(
        "--blocked",
        action="store_true",
        help="order parameters by kind instead of per vertex",
    )
    opts.add("--rest-shape-only", action="store_true")
    opts.add("--penalty-only", action="store_true")
    opts.add(
        "--inner-iters",
        type=int,
        default=defaults.bcqp.max_iter,
        help="MPRGP iteration limit per Newton step",
    )
    opts.add(
        "--preconditioner",
        default=defaults.bcqp.preconditioner,
        help="MPRGP preconditioner of the Newton steps",
    )


def build_parser():
    """
    The argument parser and, per command, its subparser and option names.

    Returns
    -------
    (:class:`argparse.ArgumentParser`, :class:`dict`)
    """
    parser = argparse.ArgumentParser(
        prog="sagfree",
        description="Sag-free initialization of elastic rod strands.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    options = {}

    sub = commands.add_parser(
        "optimize", help="optimize rest shape and stiffness parameters"
    )
    opts = options["optimize"] = _Options(sub)
    _common_options(opts)
    _strand_options(opts)
    _alm_options(opts)
    opts.add(
        "--allow-partial",
        action="store_true",
        help="exit 0 even if some strand did not converge",
    )
    sub.set_defaults(func=cmd_optimize)

    sub = commands.add_parser(
        "simulate", help="simulate strands with static or scripted roots"
    )
    opts = options["simulate"] = _Options(sub)
    _common_options(opts)
    _strand_options(opts)
    opts.add("--params", help="optimized parameter JSON (default: naive)")
    opts.add("--frames", type=int, default=300)
    opts.add("--steps-per-frame", type=int, default=4)
    opts.add("--dt", type=float, help="time step in s")
    opts.add("--format", choices=("csv", "obj"), default="csv")
    opts.add(
        "--oscillate",
        type=float,
        default=0.0,
        help="amplitude in m of a vertical root oscillation",
    )
    opts.add("--period", type=float, default=0.5, help="in s")
    opts.add("--cycles", type=float, default=1.0)
    sub.set_defaults(func=cmd_simulate)

    sub = commands.add_parser(
        "check-grad", help="verify derivatives by finite differences"
    )
    opts = options["check-grad"] = _Options(sub)
    _common_options(opts)
    opts.add("--samples", type=int, default=100)
    opts.add("--n", type=int, default=10)
    opts.add("--seed", type=int, default=0)
    opts.add(
        "--flip",
        choices=CATEGORIES,
        help="negate one analytic result; the check must then fail",
    )
    opts.add("--output", help="JSON report file")
    sub.set_defaults(func=cmd_check_grad)

    sub = commands.add_parser(
        "bench-bcqp", help="compare box-constrained QP solvers"
    )
    opts = options["bench-bcqp"] = _Options(sub)
    _common_options(opts)
    _strand_options(opts, scene="horizontal")
    _alm_options(opts)
    opts.add("--matrix", help="MatrixMarket system instead of a scene")
    opts.add("--rhs", help="right-hand side for --matrix")
    opts.add("--lower", type=float, default=-np.inf)
    opts.add("--upper", type=float, default=np.inf)
    opts.add(
        "--preconditioners",
        default="diagonal,asc",
        help="comma separated, from: "
        + ", ".join(get_preconditioner_names()),
    )
    opts.add("--max-iter", type=int, default=10000)
    opts.add("--tol", type=float, default=1e-10)
    opts.add(
        "--pgs-sweeps",
        type=int,
        default=0,
        help="add a projected Gauss-Seidel run with this many sweeps",
    )
    opts.add("--dump", help="write the system matrix as MatrixMarket")
    sub.set_defaults(func=cmd_bench_bcqp, mu=0.4)
    return parser, options


def load_config(path, keys):
    """
    Option values from a JSON config file.

    Raises
    ------
    ConfigError
        If the file does not hold an object or names unknown options.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise ConfigError(
            f"Cannot read config {path}: {err.strerror}."
        ) from err
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"Config {path} is not valid JSON: {err.msg}."
        ) from err
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object.")
    values = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = sorted(set(values) - keys - {"config"})
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}.")
    return values


def parse_args(argv=None):
    """
    Parse the command line, filling unset options from ``--config``.

    Returns
    -------
    :class:`argparse.Namespace`
    """
    parser, options = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        command = options[args.command]
        command.parser.set_defaults(**load_config(args.config, command.keys))
        args = parser.parse_args(argv)
    return args


def _setup_logging(args):
    level = logging.WARNING + 10 * (args.quiet - args.verbose)
    logging.basicConfig(
        level=min(max(level, logging.DEBUG), logging.CRITICAL),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _material(args):
    return {
        key: getattr(args, key)
        for key in _MATERIAL
        if getattr(args, key) is not None
    }


def load_strands(args):
    """
    The strands named by ``--input`` or ``--scene``.

    Returns
    -------
    :class:`list` of (StrandConfig, StrandState)

    Raises
    ------
    ConfigError
        If neither or both are given, or a value is invalid.
    """
    if (args.input is None) == (args.scene is None):
        raise ConfigError("Give exactly one of --input and --scene.")
    material = _material(args)
    if args.input is not None:
        return formats.read_strands(args.input, **material)
    if args.scene not in get_scene_kinds():
        raise ConfigError(
            f"Unknown scene `{args.scene}`. Available: "
            f"{', '.join(get_scene_kinds())}."
        )
    length = args.length
    if length is None:
        length = SCENE_LENGTHS.get(args.scene, 0.1)
    try:
        if args.count == 1:
            return [make_scene(args.scene, args.n, length, **material)]
        return batch_scene(
            args.scene,
            args.count,
            args.n,
            length,
            seed=args.seed,
            spacing=args.spacing,
            **material,
        )
    except SagfreeError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from err


def alm_options(args):
    """:class:`~sagfree.optimizer.AlmOptions` from parsed arguments."""

    return AlmOptions(
        rho=args.rho,
        w_stiff=args.w_stiff,
        w_rest=args.w_rest,
        eps_p=args.eps_p,
        k_max=args.k_max,
        mu=args.mu,
        eta=args.eta,
        eps=args.eps,
        rest_shape_only=args.rest_shape_only,
        penalty_only=args.penalty_only,
        lbar_min=args.lbar_min,
        stiffness_max=args.stiffness_max,
        eq_tol=args.eq_tol,
        curvature_dims=args.curvature_dims,
        interleaved=not args.blocked,
        bcqp=BcqpOptions(
            max_iter=args.inner_iters, preconditioner=args.preconditioner
        ),
    )


def _out_dir(args):
    path = pathlib.Path(args.out_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise IoError(
            f"Cannot create {path}: {err.strerror}."
        ) from err
    return path


def _name(stem, k, count, suffix=""):
    return f"{stem}{suffix}" if count == 1 else f"{stem}_{k:04d}{suffix}"


def _run(worker, tasks, workers):
    """Map ``worker`` over ``tasks``; results keep the task order."""

    if workers <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=min(workers, len(tasks))
    ) as pool:
        return list(pool.map(worker, tasks))


def _optimize_task(task):
    config, state, options = task
    rest0 = naive_rest_params(config, state)
    return optimize(config, state, rest0, options)


def _simulate_task(task):
    config, state, rest, options, oscillation = task
    if rest is None:
        rest = naive_rest_params(config, state)
    if oscillation is not None:
        amplitude, period, cycles = oscillation
        motion = RootMotion.oscillation(state, amplitude, period, cycles)
        options = SimOptions(
            dt=options.dt,
            steps_per_frame=options.steps_per_frame,
            frames=options.frames,
            root_motion=motion,
        )
    return simulate(config, state, rest, options)


def cmd_optimize(args):
    """
    Optimize every strand and write ``params.json``, the convergence logs
    and ``summary.tsv``.
    """
    strands = load_strands(args)
    options = alm_options(args)
    out = _out_dir(args)
    tasks = [(config, state, options) for config, state in strands]
    results = _run(_optimize_task, tasks, args.workers)

    rows = []
    for k, (rest, report) in enumerate(results):
        formats.write_convergence_csv(
            out / _name("convergence", k, len(results), ".csv"),
            report.records,
        )
        rows.append(
            {
                "strand": k,
                "termination": report.termination.value,
                "iterations": report.iterations,
                "norm_c0": report.norm_c0,
                "norm_c": report.norm_c,
                "reduction": report.reduction,
                "wall_ms": report.wall_ns * 1e-6,
            }
        )
    formats.write_params_json(
        out / "params.json",
        [(rest, report.to_dict()) for rest, report in results],
    )
    formats.write_summary_tsv(out / "summary.tsv", rows)
    print(formats.format_summary(rows))

    failed = [k for k, (_, r) in enumerate(results) if not r.converged]
    if failed and not args.allow_partial:
        logger.error(
            "%d of %d strands did not converge.", len(failed), len(results)
        )
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_simulate(args):
    """
    Simulate every strand and write trajectories, kinetic energies and
    ``summary.tsv``.
    """
    strands = load_strands(args)
    if args.params is not None:
        params = [rest for rest, _ in formats.read_params_json(args.params)]
        if len(params) != len(strands):
            raise ConfigError(
                f"{args.params} holds {len(params)} parameter sets for "
                f"{len(strands)} strands."
            )
        for (config, _), rest in zip(strands, params):
            if rest.N != config.N:
                raise ConfigError(
                    f"Parameters for {rest.N} vertices do not fit a strand "
                    f"with {config.N}."
                )
    else:
        params = [None] * len(strands)
    try:
        options = SimOptions(
            dt=args.dt,
            steps_per_frame=args.steps_per_frame,
            frames=args.frames,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err
    oscillation = None
    if args.oscillate:
        oscillation = (args.oscillate, args.period, args.cycles)
    out = _out_dir(args)
    tasks = [
        (config, state, rest, options, oscillation)
        for (config, state), rest in zip(strands, params)
    ]
    trajectories = _run(_simulate_task, tasks, args.workers)

    rows = []
    count = len(trajectories)
    for k, traj in enumerate(trajectories):
        if args.format == "obj":
            formats.write_trajectory_obj(
                out / _name("trajectory", k, count, ".obj"), traj
            )
        else:
            formats.write_trajectory_csv(
                out / _name("trajectory", k, count), traj
            )
        formats.write_kinetic_csv(
            out / _name("kinetic", k, count, ".csv"), traj
        )
        rows.append(
            {
                "strand": k,
                "frames": traj.n_frames - 1,
                "drift": traj.drift(),
                "max_kinetic": float(traj.kinetic_energy.max()),
                "final_kinetic": float(traj.kinetic_energy[-1]),
            }
        )
    formats.write_summary_tsv(out / "summary.tsv", rows)
    print(formats.format_summary(rows))
    return EXIT_OK


def cmd_check_grad(args):
    """Run the finite-difference suite and print the worst errors."""

    try:
        report = check_gradients(
            samples=args.samples, N=args.n, seed=args.seed, flip=args.flip
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err
    print(report.format())
    if args.output:
        out = _out_dir(args)
        path = out / args.output
        try:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(report.to_dict(), fh, indent=2)
        except OSError as err:
            raise IoError(
                f"Cannot write {path}: {err.strerror}."
            ) from err
    if not report.passed:
        logger.error(
            "Derivative check failed for %s.", ", ".join(report.failures())
        )
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def bench_problem(args):
    """
    The benchmark system: the first Newton step of a scene, or a matrix
    file with its right-hand side and scalar bounds.

    Returns
    -------
    :class:`~sagfree.bcqp.BcqpProblem`
    """
    if args.matrix is not None:
        A = formats.read_matrix_market(args.matrix)
        if args.rhs is not None:
            b = formats.read_vector(args.rhs)
        else:
            b = np.random.default_rng(args.seed).normal(size=A.n)
        try:
            return BcqpProblem(
                A, b, np.full(A.n, args.lower), np.full(A.n, args.upper)
            )
        except ValueError as err:
            raise ConfigError(str(err)) from err
    config, state = load_strands(args)[0]
    rest0 = naive_rest_params(config, state)
    return newton_problem(config, state, rest0, alm_options(args))


def cmd_bench_bcqp(args):
    """
    Solve one box-constrained QP with every requested preconditioner and
    write the residual histories and ``summary.tsv``.
    """
    names = [n.strip() for n in args.preconditioners.split(",") if n.strip()]
    available = get_preconditioner_names()
    for name in names:
        if name not in available:
            raise ConfigError(
                f"Unknown preconditioner `{name}`. "
                f"Available: {', '.join(available)}."
            )
    problem = bench_problem(args)
    out = _out_dir(args)
    if args.dump:
        write_matrix_market(out / args.dump, problem.A, "benchmark system")

    rows = []
    for name in names:
        options = BcqpOptions(
            tol_abs=args.tol,
            tol_rel=args.tol,
            max_iter=args.max_iter,
            preconditioner=name,
        )
        start = time.perf_counter_ns()
        result = mprgp(problem, options)
        wall = time.perf_counter_ns() - start
        formats.write_residual_csv(
            out / f"residual_{name}.csv", result.residual_history
        )
        history = result.residual_history
        residual = history[-1][2] if history else float("nan")
        rows.append(
            {
                "solver": f"mprgp-{name}",
                "iterations": result.iterations,
                "wall_ms": wall * 1e-6,
                "residual": residual,
                "termination": result.termination.value,
                "active": result.final_active.n_active,
            }
        )

    if args.pgs_sweeps > 0:
        start = time.perf_counter_ns()
        x = pgs_solve(problem, args.pgs_sweeps)
        wall = time.perf_counter_ns() - start
        free, chopped = projected_gradient_parts(
            problem.A, problem.b, x, problem.lo, problem.hi
        )
        rows.append(
            {
                "solver": "pgs",
                "iterations": args.pgs_sweeps,
                "wall_ms": wall * 1e-6,
                "residual": float(np.linalg.norm(free + chopped)),
                "termination": "max_iter",
                "active": int(
                    np.count_nonzero((x <= problem.lo) | (x >= problem.hi))
                ),
            }
        )
    formats.write_summary_tsv(out / "summary.tsv", rows)
    print(formats.format_summary(rows))
    return EXIT_OK


def main(argv=None):
    """
    Entry point of the ``sagfree`` command.

    Returns
    -------
    :class:`int`
        Exit code.
    """
    try:
        args = parse_args(argv)
    except SagfreeError as err:
        print(f"sagfree: {err}", file=sys.stderr)
        return err.exit_code
    _setup_logging(args)
    try:
        return args.func(args)
    except SagfreeError as err:
        logger.error("%s", err)
        return err.exit_code
    except ValueError as err:
        logger.error("%s", err)
        return EXIT_CONFIG
    except OSError as err:
        logger.error("%s", err)
        return EXIT_IO
    except ArithmeticError as err:
        logger.error("%s", err)
        return EXIT_SOLVER
