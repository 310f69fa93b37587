"""Plain-text artifacts: CSV fields, PGM label images, measurements, histories.

Floats are written with ``repr`` (shortest round-trip decimal), so reading a
file back gives the in-memory values bit for bit and rewriting it gives the
same bytes.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .envelope import GridSpec, InterfaceGeometry, LevelFunctionSet, PhaseLabelField
from .errors import DataError, PreconditionError

_COORDS = ("x", "y", "z")


def _fmt(v) -> str:
    return repr(float(v))


def _write_rows(path, header, rows):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    return path


def _read_table(path, header):
    path = Path(path)
    try:
        with path.open(encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows or [c.strip() for c in rows[0]] != list(header):
        got = rows[0] if rows else []
        raise DataError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
    try:
        return np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


# -- level functions -------------------------------------------------------------


def write_field_csv(path, grid: GridSpec, values) -> Path:
    """One nodal field as ``x,y[,z],value`` rows in node order."""
    values = np.asarray(values, dtype=float).reshape(-1)
    nodes = grid.nodes()
    header = list(_COORDS[: grid.dim]) + ["value"]
    rows = ([*(_fmt(c) for c in p), _fmt(v)] for p, v in zip(nodes, values))
    return _write_rows(path, header, rows)


def read_field_csv(path, dim: int = 2) -> tuple[GridSpec, np.ndarray]:
    """Inverse of :func:`write_field_csv`; the grid is inferred from the row count."""
    data = _read_table(path, list(_COORDS[:dim]) + ["value"])
    n = round(len(data) ** (1.0 / dim)) - 1
    if n < 2 or (n + 1) ** dim != len(data):
        raise DataError(f"{path}: {len(data)} rows do not form a {dim}D node grid")
    grid = GridSpec(n, dim)
    if not np.allclose(data[:, :dim], grid.nodes(), atol=1e-12, rtol=0):
        raise DataError(f"{path}: node coordinates are not in grid order")
    return grid, data[:, dim].reshape(grid.shape)


def write_level_set(directory, phi: LevelFunctionSet, prefix: str = "phi") -> list[Path]:
    """``<prefix>_<k>.csv`` for every field."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [write_field_csv(directory / f"{prefix}_{k}.csv", phi.grid, phi.values[k]) for k in range(phi.kappa)]


def read_level_set(directory, prefix: str = "phi", dim: int | None = None) -> LevelFunctionSet:
    """Read ``<prefix>_0.csv, <prefix>_1.csv, ...``; field 0 is pinned if it is identically zero."""
    directory = Path(directory)
    files = []
    k = 0
    while (directory / f"{prefix}_{k}.csv").exists():
        files.append(directory / f"{prefix}_{k}.csv")
        k += 1
    if len(files) < 2:
        raise DataError(f"no level-function files {prefix}_0.csv, {prefix}_1.csv, ... in {directory}")
    if dim is None:
        with files[0].open(encoding="utf-8") as fh:
            dim = len(fh.readline().strip().split(",")) - 1
    fields = [read_field_csv(f, dim) for f in files]
    grid = fields[0][0]
    if any(g != grid for g, _ in fields):
        raise DataError(f"level-function files in {directory} use different grids")
    vals = np.stack([v for _, v in fields])
    return LevelFunctionSet(grid, vals, pinned_zero=bool(np.max(np.abs(vals[0])) == 0.0))


def write_nodal_csv(path, nodes, values) -> Path:
    """A finite-element field as ``node,x,y,value``."""
    values = np.asarray(values, dtype=float).reshape(-1)
    rows = ([str(i), _fmt(p[0]), _fmt(p[1]), _fmt(v)] for i, (p, v) in enumerate(zip(nodes, values)))
    return _write_rows(path, ["node", "x", "y", "value"], rows)


# -- label images ------------------------------------------------------------------


def pgm_text(labels: PhaseLabelField) -> str:
    """ASCII PGM (``P2``) of a 2D label field, top row = largest ``x2``.

    gray = round(255 * label / (kappa - 1)).
    """
    if labels.grid.dim != 2:
        raise PreconditionError("PGM output is 2D only")
    lab = np.asarray(labels.labels)
    gray = np.rint(255.0 * lab / max(labels.kappa - 1, 1)).astype(int)
    nx, ny = gray.shape
    lines = ["P2", f"{nx} {ny}", "255"]
    for iy in range(ny - 1, -1, -1):
        lines.append(" ".join(str(g) for g in gray[:, iy]))
    return "\n".join(lines) + "\n"


def write_pgm(path, labels: PhaseLabelField) -> Path:
    path = Path(path)
    path.write_text(pgm_text(labels), encoding="ascii")
    return path


def read_pgm(path) -> np.ndarray:
    """Gray values as an ``[ix, iy]`` array (inverse of the row flip in :func:`pgm_text`)."""
    tokens = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise DataError(f"{path}: not an ASCII PGM file")
    nx, ny = int(tokens[1]), int(tokens[2])
    img = np.array([int(t) for t in tokens[4:]], dtype=int)
    if img.size != nx * ny:
        raise DataError(f"{path}: expected {nx * ny} pixels, got {img.size}")
    return img.reshape(ny, nx)[::-1].T


# -- interface geometry -----------------------------------------------------------


def write_tuple_points(path, points) -> Path:
    points = np.asarray(points, dtype=float)
    dim = points.shape[1] if points.ndim == 2 and points.shape[1] else 2
    return _write_rows(path, list(_COORDS[:dim]), ([_fmt(c) for c in p] for p in points))


def write_angles(path, points, angles) -> Path:
    """``x,y,beta_0,beta_1,beta_2`` per triple point, angles in radians."""
    rows = ([*(_fmt(c) for c in p), *(_fmt(b) for b in a)] for p, a in zip(points, angles))
    return _write_rows(path, ["x", "y", "beta_0", "beta_1", "beta_2"], rows)


def write_interfaces(path, geom: InterfaceGeometry) -> Path:
    """Segments ``k,l,kind,x0,y0,x1,y1`` with kind ``true`` or ``ghost``."""
    rows = []
    for (k, l), segs in sorted(geom.segments.items()):
        for kind, arr in (("true", segs), ("ghost", geom.ghost[(k, l)])):
            for s in arr:
                rows.append([str(k), str(l), kind, _fmt(s[0, 0]), _fmt(s[0, 1]), _fmt(s[1, 0]), _fmt(s[1, 1])])
    return _write_rows(path, ["k", "l", "kind", "x0", "y0", "x1", "y1"], rows)


def write_areas(path, labels: PhaseLabelField) -> Path:
    areas = labels.areas()
    return _write_rows(path, ["phase", "area"], ([str(k), _fmt(a)] for k, a in enumerate(areas)))


# -- EIT data -------------------------------------------------------------------------


def write_measurements(directory, meas, mesh) -> list[Path]:
    """One ``current_<i>.csv`` (``node,x,y,h``) per current plus ``measurements.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    gauge = meas.gauge if meas.gauge is not None else np.zeros(meas.m)
    meta = [
        f"n = {meas.n}",
        f"currents = {','.join(str(c) for c in meas.currents)}",
        f"noisy = {'true' if meas.noisy else 'false'}",
        f"delta = {meas.delta!r}",
        f"seed = {meas.seed}",
        f"gauge = {','.join(_fmt(g) for g in gauge)}",
    ]
    out = [directory / "measurements.txt"]
    out[0].write_text("\n".join(meta) + "\n", encoding="utf-8")
    xy = mesh.nodes[meas.nodes]
    for i, c in enumerate(meas.currents):
        rows = ([str(int(k)), _fmt(p[0]), _fmt(p[1]), _fmt(v)] for k, p, v in zip(meas.nodes, xy, meas.h[i]))
        out.append(_write_rows(directory / f"current_{c:02d}.csv", ["node", "x", "y", "h"], rows))
    return out


def read_measurements(directory):
    """Inverse of :func:`write_measurements`."""
    from .eit import MeasurementSet

    directory = Path(directory)
    meta_path = directory / "measurements.txt"
    if not directory.is_dir() or not meta_path.exists():
        raise DataError(f"no measurement set in {directory}")
    meta = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            meta[k] = v
    try:
        n = int(meta["n"])
        currents = tuple(int(c) for c in meta["currents"].split(","))
        gauge = np.array([float(g) for g in meta["gauge"].split(",")])
        noisy = meta["noisy"] == "true"
        delta = float(meta["delta"])
        seed = int(meta["seed"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{meta_path}: malformed ({exc})") from None
    nodes, hs = None, []
    for c in currents:
        data = _read_table(directory / f"current_{c:02d}.csv", ["node", "x", "y", "h"])
        ids = data[:, 0].astype(np.intp)
        if nodes is None:
            nodes = ids
        elif not np.array_equal(nodes, ids):
            raise DataError(f"current {c} uses different boundary nodes")
        hs.append(data[:, 3])
    return MeasurementSet(n, nodes, np.array(hs), noisy, delta, seed, gauge, currents)


def write_history(path, state) -> Path:
    path = Path(path)
    path.write_text(state.history_csv(), encoding="utf-8")
    return path


def read_history(path) -> np.ndarray:
    return _read_table(path, ["iter", "cost", "error_pct", "step"])


def write_shape_gradient(path, S) -> Path:
    """``element,S1_xx,S1_xy,S1_yx,S1_yy,S0_x,S0_y`` for debugging."""
    S1 = np.asarray(S.S1).reshape(-1, 4)
    S0 = np.asarray(S.S0).reshape(-1, 2)
    rows = ([str(e), *(_fmt(v) for v in a), *(_fmt(v) for v in b)] for e, (a, b) in enumerate(zip(S1, S0)))
    return _write_rows(path, ["element", "S1_xx", "S1_xy", "S1_yx", "S1_yy", "S0_x", "S0_y"], rows)
