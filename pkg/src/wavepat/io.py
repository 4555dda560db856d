"""File formats: CSV tables, spline fields, trace bundles, PGM images, MatrixMarket."""
from __future__ import annotations

import configparser
import csv
import json
from pathlib import Path

import numpy as np
import scipy.io

from .pat import ForwardTrace, SplineField2D
from .spline import Constraint, make_space


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_csv(path, columns: list[str], rows, config: dict | None = None) -> None:
    """CSV with a ``# config:`` comment line followed by a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(config or {}, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    config = {}
    rows = []
    header = None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("config:"):
                    try:
                        config = json.loads(body[len("config:"):])
                    except json.JSONDecodeError as e:
                        raise FormatError(f"{path}:{lineno}: bad config comment ({e})") from None
                continue
            if not line.strip():
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = cells
            else:
                if len(cells) != len(header):
                    raise FormatError(f"{path}:{lineno}: expected {len(header)} columns, got {len(cells)}")
                rows.append(cells)
    if header is None:
        raise FormatError(f"{path}: no header row")
    return config, header, rows


# -- spline fields -----------------------------------------------------------------

def write_field(path, field: SplineField2D, extra: dict | None = None) -> None:
    s = field.space
    meta = {"kind": "spline-field-2d", "degree": s.degree, "level": s.level,
            "interval": list(s.interval), "constraint": s.constraint.value}
    meta.update(extra or {})
    n = s.dim
    cols = [f"c{j}" for j in range(n)]
    write_csv(path, cols, [list(map(float, field.coeffs[i])) for i in range(n)], meta)


def read_field(path) -> SplineField2D:
    meta, header, rows = read_csv(path)
    if meta.get("kind") != "spline-field-2d":
        raise FormatError(f"{path}:1: not a spline field file (kind={meta.get('kind')!r})")
    space = make_space(meta["degree"], meta["level"], tuple(meta["interval"]), Constraint(meta["constraint"]))
    try:
        C = np.array([[float(v) for v in r] for r in rows])
    except ValueError as e:
        raise FormatError(f"{path}: non-numeric coefficient ({e})") from None
    if C.shape != (space.dim, space.dim):
        raise FormatError(f"{path}: expected {space.dim}x{space.dim} coefficients, got {C.shape}")
    return SplineField2D(space, C)


# -- traces ------------------------------------------------------------------------

def save_trace(path, trace: ForwardTrace) -> None:
    """``.npz`` (binary, JSON header inside) or ``.csv`` (JSON header comment)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = trace.header()
    if path.suffix == ".csv":
        nq = trace.points.size
        cols = ["step", "time"] + [f"f{f}_q{q}" for f in range(4) for q in range(nq)]
        header = dict(header, points=trace.points.tolist(), weights=trace.weights.tolist())
        rows = ([n, float(t)] + trace.samples[n].ravel().tolist() for n, t in enumerate(trace.times))
        write_csv(path, cols, rows, header)
    else:
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header)), times=trace.times, points=trace.points,
                     weights=trace.weights, samples=trace.samples)


def load_trace(path) -> ForwardTrace:
    path = Path(path)
    if path.suffix == ".csv":
        header, cols, rows = read_csv(path)
        if header.get("format") != "wavepat-trace":
            raise FormatError(f"{path}:1: not a trace file")
        pts = np.array(header["points"])
        wts = np.array(header["weights"])
        data = np.array([[float(v) for v in r] for r in rows])
        times = data[:, 1]
        samples = data[:, 2:].reshape(len(rows), 4, pts.size)
    else:
        try:
            with np.load(path) as z:
                header = json.loads(str(z["header"]))
                times, pts, wts, samples = z["times"], z["points"], z["weights"], z["samples"]
        except (OSError, KeyError, ValueError) as e:
            raise FormatError(f"{path}: unreadable trace bundle ({e})") from None
        if header.get("format") != "wavepat-trace":
            raise FormatError(f"{path}: not a trace bundle")
    if samples.shape != (times.size, 4, pts.size):
        raise FormatError(f"{path}: sample array shape {samples.shape} does not match header")
    if not np.all(np.isfinite(samples)):
        raise FormatError(f"{path}: non-finite samples")
    return ForwardTrace(times, tuple(header["omega_s"]), pts, wts, samples, int(header["level"]),
                        float(header["h_t"]), float(header["T"]), header.get("phantom", {}))


# -- images and matrices -------------------------------------------------------------

def write_pgm(path, values: np.ndarray, vmin: float | None = None, vmax: float | None = None,
              maxval: int = 255) -> None:
    """Binary PGM; row 0 of ``values`` is the top image row.

    The default gray range is ``[min(0, min v), max v]`` so that nonnegative
    images keep zero as black.
    """
    v = np.asarray(values, dtype=float)
    lo = min(0.0, float(v.min())) if vmin is None else float(vmin)
    hi = float(v.max()) if vmax is None else float(vmax)
    if hi <= lo:
        img = np.zeros(v.shape)
    else:
        img = np.rint(np.clip((v - lo) / (hi - lo), 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{v.shape[1]} {v.shape[0]}\n{maxval}\n".encode())
        fh.write(img.astype(dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FormatError(f"{path}:1: not a binary PGM written by write_pgm")
    w, h = map(int, parts[1].split())
    maxval = int(parts[2])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w)


def render_field(field: SplineField2D, grid: int = 512) -> np.ndarray:
    """Field sampled on a cell-centred ``grid x grid`` raster, y pointing up."""
    g = (np.arange(grid) + 0.5) / grid
    a, b = field.space.interval
    g = a + (b - a) * g
    return field.grid(g, g).T[::-1]


def write_matrix(path, M, comment: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(path), M, comment=comment, precision=17, symmetry="general")


# -- config files ----------------------------------------------------------------------

def read_config(path) -> dict:
    """Flat ``key = value`` entries from every section of an INI-style file."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as e:
        raise FormatError(f"{path}: {e}") from None
    out = {}
    for section in cp.sections():
        for k, v in cp.items(section):
            out[k.replace("-", "_")] = v
    return out
