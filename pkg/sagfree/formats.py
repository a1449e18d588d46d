"""
Reading and writing strands, optimized parameters, logs and trajectories.

Strand JSON holds a single strand object or ``{"strands": [...]}``::

    {
        "vertices": [[0, 0, 0], [0.01, 0, 0], ...],
        "thetas": [0, 0, ...],              (optional)
        "radius": "50 um",                  (number in m or pint string)
        "density": 1300,                    (number in kg/m³ or pint string)
        "c_st": 1e9, "c_be": 1e9, "c_tw": 1e9,
        "gravity": [0, 0, -9.81]
    }

The keys ``x`` and ``theta`` are accepted in place of ``vertices`` and
``thetas``. Scalar stiffness coefficients broadcast over the strand.

Strand CSV has the columns ``strand, vertex, x, y, z``. A file without a
header row, or with only ``x, y, z`` columns, holds a single strand with one
vertex per row. Material values come from keyword arguments.

Optimized parameters are written as::

    {"s": ..., "rest_len": [...], "rest_curv_2d": [[k0, k1], ...],
     "rest_twist": [...], "alpha": [...], "beta": [...], "gamma": [...],
     "report": {...}}

with ``"rest_curv_4d"`` added when the two slot pairs differ. Several
strands are written as ``{"strands": [...]}``.

Tables (convergence logs, residual histories, kinetic energies) are CSV with
a header row; summaries are TSV.
"""

import csv
import json
import logging
import pathlib

import numpy as np
import scipy.io
import scipy.sparse

from . import Q_
from .banded import BandedSym
from .exceptions import IoError, ParseError
from .strands import RestParams, StrandConfig, StrandState

logger = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = ("k", "norm_dp", "norm_c", "mprgp_iters", "wall_ns")
RESIDUAL_COLUMNS = ("iteration", "wall_ns", "residual")
KINETIC_COLUMNS = ("frame", "time", "kinetic_energy")

_UNITS = {
    "radius": "m",
    "density": "kg/m**3",
    "c_st": "Pa",
    "c_be": "Pa",
    "c_tw": "Pa",
}

_ALIASES = {"vertices": "x", "thetas": "theta"}


def _open(path, mode):
    try:
        return open(path, mode, encoding="utf-8", newline="")
    except OSError as err:
        raise IoError(f"Cannot open {path}: {err.strerror}.") from err


def _load_json(path):
    with _open(path, "r") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise ParseError(f"{path} is not valid JSON: {err.msg}.") from err


def _dump_json(path, data):
    with _open(path, "w") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def _magnitude(value, key):
    if isinstance(value, str):
        try:
            return Q_(value).m_as(_UNITS[key])
        except Exception as err:
            raise ParseError(f"Invalid quantity `{value}` for {key}.") from err
    return value


def strand_from_dict(data, **defaults):
    """
    Build a strand from a JSON object.

    Returns
    -------
    (StrandConfig, StrandState)

    Raises
    ------
    ParseError
        If a key is missing or a value is invalid.
    """
    if not isinstance(data, dict):
        raise ParseError("A strand must be a JSON object.")
    unknown = set(data) - {*_ALIASES, *_ALIASES.values(), "gravity", "dt"}
    unknown -= set(_UNITS)
    if unknown:
        raise ParseError(f"Unknown strand keys: {', '.join(sorted(unknown))}.")
    data = dict(data)
    for key, alias in _ALIASES.items():
        if alias in data:
            if key in data:
                raise ParseError(f"Give either `{key}` or `{alias}`.")
            data[key] = data.pop(alias)
    if "vertices" not in data:
        raise ParseError(
            "A strand needs a `vertices` array of vertex positions."
        )
    try:
        x = np.array(data["vertices"], dtype=float)
        if x.ndim != 2 or x.shape[1] != 3:
            raise ParseError("Vertex positions must be rows of 3 numbers.")
        material = dict(defaults)
        for key in _UNITS:
            if key in data:
                material[key] = _magnitude(data[key], key)
        for key in ("gravity", "dt"):
            if key in data:
                material[key] = data[key]
        config = StrandConfig(x.shape[0], **material)
        state = StrandState.from_positions(x, data.get("thetas"))
    except ParseError:
        raise
    except (TypeError, ValueError) as err:
        raise ParseError(f"Invalid strand: {err}") from err
    return config, state


def strand_to_dict(config, state):
    """JSON object of a strand."""

    return {
        "vertices": state.x.tolist(),
        "thetas": state.theta.tolist(),
        "radius": config.radius,
        "density": config.density,
        "c_st": config.c_st.tolist(),
        "c_be": config.c_be.tolist(),
        "c_tw": config.c_tw.tolist(),
        "gravity": config.gravity.tolist(),
        "dt": config.dt,
    }


def read_strands_json(path, **defaults):
    """
    Read one or several strands from JSON.

    Parameters
    ----------
    path : :class:`str` or path-like
    **defaults
        Material values for keys missing from the file.

    Returns
    -------
    :class:`list` of (StrandConfig, StrandState)

    Raises
    ------
    IoError
    ParseError
    """
    data = _load_json(path)
    items = data.get("strands", [data]) if isinstance(data, dict) else data
    if not isinstance(items, list) or not items:
        raise ParseError(f"{path} holds no strands.")
    return [strand_from_dict(item, **defaults) for item in items]


def write_strands_json(path, strands):
    """Write ``(config, state)`` pairs as JSON."""

    items = [strand_to_dict(c, s) for c, s in strands]
    _dump_json(path, items[0] if len(items) == 1 else {"strands": items})


def read_strands_csv(path, **material):
    """
    Read strands from CSV rows ``strand, vertex, x, y, z``.

    Rows of plain ``x, y, z`` values, with or without a header, form a
    single strand in file order.

    Returns
    -------
    :class:`list` of (StrandConfig, StrandState)

    Raises
    ------
    IoError
    ParseError
    """
    with _open(path, "r") as fh:
        table = [row for row in csv.reader(fh) if any(c.strip() for c in row)]
    if not table:
        raise ParseError(f"{path} holds no strands.")
    if _is_numeric(table[0]):
        header = ["x", "y", "z"] if len(table[0]) == 3 else []
    else:
        header = [cell.strip().lower() for cell in table.pop(0)]
    if not {"x", "y", "z"} <= set(header):
        raise ParseError(f"{path} needs x, y and z columns.")
    grouped = "strand" in header and "vertex" in header
    rows = {}
    for n, cells in enumerate(table):
        if len(cells) != len(header):
            raise ParseError(f"Invalid strand row in {path}.")
        row = dict(zip(header, cells))
        try:
            key = int(row["strand"]) if grouped else 0
            rows.setdefault(key, []).append(
                (
                    int(row["vertex"]) if grouped else n,
                    float(row["x"]),
                    float(row["y"]),
                    float(row["z"]),
                )
            )
        except ValueError as err:
            raise ParseError(f"Invalid strand row in {path}.") from err
    if not rows:
        raise ParseError(f"{path} holds no strands.")
    strands = []
    for key in sorted(rows):
        vertices = sorted(rows[key])
        x = np.array([v[1:] for v in vertices])
        try:
            config = StrandConfig(x.shape[0], **material)
            strands.append((config, StrandState.from_positions(x)))
        except ValueError as err:
            raise ParseError(f"Invalid strand {key}: {err}") from err
    return strands


def _is_numeric(cells):
    try:
        [float(cell) for cell in cells]
    except ValueError:
        return False
    return True


def write_strands_csv(path, strands):
    """Write strand vertex positions as CSV."""

    with _open(path, "w") as fh:
        writer = csv.writer(fh)
        writer.writerow(("strand", "vertex", "x", "y", "z"))
        for k, (_, state) in enumerate(strands):
            for i, (x, y, z) in enumerate(state.x):
                writer.writerow((k, i, _num(x), _num(y), _num(z)))


def read_strands(path, **defaults):
    """Read strands from ``.json`` or ``.csv`` by extension."""

    suffix = pathlib.Path(path).suffix.lower()
    if suffix == ".csv":
        return read_strands_csv(path, **defaults)
    return read_strands_json(path, **defaults)


def params_to_dict(rest, report=None):
    """JSON object of optimized parameters."""

    data = {
        "s": rest.s,
        "rest_len": rest.rest_len.tolist(),
        "rest_curv_2d": rest.rest_curv[:, :2].tolist(),
        "rest_twist": rest.rest_twist.tolist(),
        "alpha": rest.alpha.tolist(),
        "beta": rest.beta.tolist(),
        "gamma": rest.gamma.tolist(),
    }
    if not np.array_equal(rest.rest_curv[:, :2], rest.rest_curv[:, 2:]):
        data["rest_curv_4d"] = rest.rest_curv.tolist()
    if report is not None:
        data["report"] = report
    return data


def params_from_dict(data):
    """
    Rest parameters from a JSON object.

    Returns
    -------
    (RestParams, :class:`dict` or None)

    Raises
    ------
    ParseError
    """
    try:
        if "rest_curv_4d" in data:
            curv = np.array(data["rest_curv_4d"], dtype=float)
        else:
            half = np.array(data["rest_curv_2d"], dtype=float)
            curv = np.hstack([half, half])
        rest = RestParams(
            rest_len=data["rest_len"],
            rest_curv=curv,
            rest_twist=data["rest_twist"],
            alpha=data["alpha"],
            beta=data["beta"],
            gamma=data["gamma"],
            s=float(data["s"]),
        )
    except KeyError as err:
        raise ParseError(f"Missing parameter `{err.args[0]}`.") from err
    except (TypeError, ValueError) as err:
        raise ParseError(f"Invalid parameters: {err}") from err
    return rest, data.get("report")


def write_params_json(path, results):
    """
    Write optimized parameters.

    Parameters
    ----------
    path : :class:`str` or path-like
    results : :class:`list` of (RestParams, :class:`dict` or None)
        Parameters and report per strand.
    """
    items = [params_to_dict(rest, report) for rest, report in results]
    _dump_json(path, items[0] if len(items) == 1 else {"strands": items})


def read_params_json(path):
    """
    Read optimized parameters.

    Returns
    -------
    :class:`list` of (RestParams, :class:`dict` or None)

    Raises
    ------
    IoError
    ParseError
    """
    data = _load_json(path)
    if not isinstance(data, dict):
        raise ParseError(f"{path} does not hold a parameter object.")
    items = data.get("strands", [data])
    return [params_from_dict(item) for item in items]


def _num(value):
    return repr(float(value))


def _write_table(path, columns, rows, delimiter=","):
    with _open(path, "w") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)


def _read_table(path, columns, types):
    with _open(path, "r") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != tuple(columns):
            raise ParseError(f"{path} does not have the columns {columns}.")
        rows = []
        try:
            for row in reader:
                if len(row) != len(types):
                    raise ValueError
                rows.append(tuple(t(v) for t, v in zip(types, row)))
        except (TypeError, ValueError) as err:
            raise ParseError(f"Invalid row in {path}.") from err
    return rows


def write_convergence_csv(path, records):
    """Write :class:`~sagfree.optimizer.IterationRecord` rows."""

    _write_table(
        path,
        CONVERGENCE_COLUMNS,
        (
            (r.k, _num(r.norm_dp), _num(r.norm_c), r.mprgp_iters, r.wall_ns)
            for r in records
        ),
    )


def read_convergence_csv(path):
    """Rows ``(k, norm_dp, norm_c, mprgp_iters, wall_ns)``."""

    return _read_table(
        path, CONVERGENCE_COLUMNS, (int, float, float, int, int)
    )


def write_residual_csv(path, history):
    """Write ``(iteration, wall_ns, residual)`` rows."""

    _write_table(
        path,
        RESIDUAL_COLUMNS,
        ((it, ns, _num(res)) for it, ns, res in history),
    )


def read_residual_csv(path):
    """Rows ``(iteration, wall_ns, residual)``."""

    return _read_table(path, RESIDUAL_COLUMNS, (int, int, float))


def write_kinetic_csv(path, trajectory):
    """Write the per-frame kinetic energy of a trajectory."""

    _write_table(
        path,
        KINETIC_COLUMNS,
        (
            (k, _num(t), _num(e))
            for k, (t, e) in enumerate(
                zip(trajectory.times, trajectory.kinetic_energy)
            )
        ),
    )


def read_kinetic_csv(path):
    """Rows ``(frame, time, kinetic_energy)``."""

    return _read_table(path, KINETIC_COLUMNS, (int, float, float))


def write_trajectory_csv(directory, trajectory, prefix="frame"):
    """
    Write one CSV per frame with rows ``vertex, x, y, z``.

    Returns
    -------
    :class:`list` of :class:`pathlib.Path`
    """
    directory = pathlib.Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise IoError(f"Cannot create {directory}: {err.strerror}.") from err
    paths = []
    for k, x in enumerate(trajectory.positions):
        path = directory / f"{prefix}_{k:04d}.csv"
        _write_table(
            path,
            ("vertex", "x", "y", "z"),
            ((i, _num(a), _num(b), _num(c)) for i, (a, b, c) in enumerate(x)),
        )
        paths.append(path)
    return paths


def read_frame_csv(path):
    """Vertex positions of one trajectory frame."""

    rows = _read_table(
        path, ("vertex", "x", "y", "z"), (int, float, float, float)
    )
    return np.array([row[1:] for row in sorted(rows)])


def write_trajectory_obj(path, trajectory):
    """
    Write all frames to one OBJ file, one object and polyline per frame.
    """
    with _open(path, "w") as fh:
        offset = 1
        for k, x in enumerate(trajectory.positions):
            fh.write(f"o frame_{k:04d}\n")
            for a, b, c in x:
                fh.write(f"v {_num(a)} {_num(b)} {_num(c)}\n")
            indices = " ".join(str(offset + i) for i in range(len(x)))
            fh.write(f"l {indices}\n")
            offset += len(x)


def read_trajectory_obj(path):
    """
    Frames of an OBJ polyline file.

    Returns
    -------
    :class:`numpy.ndarray`
        Shape ``(frames, N, 3)``.
    """
    frames = []
    with _open(path, "r") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "o":
                frames.append([])
            elif parts[0] == "v":
                if not frames:
                    raise ParseError(f"Vertex outside an object in {path}.")
                try:
                    frames[-1].append([float(v) for v in parts[1:4]])
                except ValueError as err:
                    raise ParseError(f"Invalid vertex in {path}.") from err
    try:
        return np.array(frames, dtype=float)
    except ValueError as err:
        raise ParseError(f"Frames in {path} differ in size.") from err


def write_summary_tsv(path, rows):
    """
    Write summary rows (dicts with the same keys) as TSV.
    """
    rows = list(rows)
    columns = tuple(rows[0]) if rows else ()
    _write_table(
        path, columns, ([row[c] for c in columns] for row in rows), "\t"
    )


def format_summary(rows):
    """Summary rows as a TSV string for the terminal."""

    rows = list(rows)
    if not rows:
        return ""
    columns = list(rows[0])
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join(_cell(row[c]) for c in columns))
    return "\n".join(lines)


def _cell(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def read_matrix_market(path):
    """
    Read a symmetric matrix dumped with
    :func:`~sagfree.banded.write_matrix_market` (or any MatrixMarket file).

    Returns
    -------
    :class:`~sagfree.banded.BandedSym`
        With the smallest half-bandwidth holding every nonzero.

    Raises
    ------
    IoError
    ParseError
        If the file is malformed or the matrix is not square.
    """
    try:
        data = scipy.io.mmread(path)
    except OSError as err:
        raise IoError(f"Cannot open {path}: {err.strerror}.") from err
    except ValueError as err:
        raise ParseError(f"{path} is not a MatrixMarket file: {err}") from err
    A = data.toarray() if scipy.sparse.issparse(data) else np.asarray(data)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ParseError(f"{path} does not hold a square matrix.")
    return BandedSym.from_dense(A)


def read_vector(path):
    """
    Read a vector from a MatrixMarket file or a whitespace separated text
    file.

    Returns
    -------
    :class:`numpy.ndarray`
    """
    try:
        if pathlib.Path(path).suffix.lower() == ".mtx":
            data = scipy.io.mmread(path)
            if scipy.sparse.issparse(data):
                data = data.toarray()
            return np.asarray(data, dtype=float).ravel()
        return np.loadtxt(path, dtype=float, ndmin=1)
    except OSError as err:
        raise IoError(f"Cannot open {path}: {err.strerror}.") from err
    except ValueError as err:
        raise ParseError(f"{path} does not hold a vector: {err}") from err
