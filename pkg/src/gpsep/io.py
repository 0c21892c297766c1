"""Reading and writing data matrices.

Binary layout (all integers and floats little-endian)::

    offset  size  field
    0       8     magic b"GPSEPMAT"
    8       4     version (uint32, currently 1)
    12      8     rows (uint64)
    20      8     cols (uint64)
    28      4     flags (uint32): bit 0 row-major payload,
                  bit 1 grid present, bit 2 times present
    32      4     grid height (uint32, 0 when absent)
    36      4     grid width (uint32, 0 when absent)
    40      ...   rows * cols float64 values
    ...     ...   rows float64 times, when bit 2 is set

The CSV alternative has one row per subject. Optional leading comment lines
carry the same metadata: ``# grid H W`` declares the lattice and ``# times``
declares that the first column holds the observation times. Files without
comments are plain numeric tables.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .model import DataMatrix, GridGeometry

__all__ = [
    "MatrixFileError",
    "MalformedHeaderError",
    "SizeMismatchError",
    "NonFiniteError",
    "MAGIC",
    "VERSION",
    "read_matrix",
    "write_matrix",
    "read_array",
    "write_array",
]

MAGIC = b"GPSEPMAT"
VERSION = 1
_HEADER = struct.Struct("<8sIQQIII")

FLAG_ROW_MAJOR = 1
FLAG_GRID = 2
FLAG_TIMES = 4
_KNOWN_FLAGS = FLAG_ROW_MAJOR | FLAG_GRID | FLAG_TIMES


class MatrixFileError(ValueError):
    """Base class for unreadable matrix files; ``code`` is the CLI exit status."""

    code = 4


class MalformedHeaderError(MatrixFileError):
    code = 4


class SizeMismatchError(MatrixFileError):
    code = 5


class NonFiniteError(MatrixFileError):
    code = 6


def _is_csv(path):
    return Path(path).suffix.lower() == ".csv"


def write_matrix(data, path):
    """Write ``data`` to ``path``; a ``.csv`` suffix selects the text format."""
    if _is_csv(path):
        _write_csv(data, path)
        return
    grid = data.grid
    flags = FLAG_ROW_MAJOR
    if grid.is_lattice:
        flags |= FLAG_GRID
    if data.observed_times is not None:
        flags |= FLAG_TIMES
    rows, cols = data.values.shape
    header = _HEADER.pack(
        MAGIC, VERSION, rows, cols, flags,
        grid.height if grid.is_lattice else 0,
        grid.width if grid.is_lattice else 0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data.values, dtype="<f8").tobytes())
        if data.observed_times is not None:
            fh.write(np.ascontiguousarray(data.observed_times, dtype="<f8").tobytes())


def read_matrix(path):
    """Read a :class:`DataMatrix` written by :func:`write_matrix` (binary or CSV).

    Raises
    ------
    FileNotFoundError
    MalformedHeaderError
        Wrong magic or version, unknown flags, or inconsistent grid.
    SizeMismatchError
        Payload shorter or longer than the header announces, or ragged CSV.
    NonFiniteError
        NaN or infinite values or times.
    """
    if _is_csv(path):
        return _read_csv(path)
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: file too short for a header")
    magic, version, rows, cols, flags, height, width = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if flags & ~_KNOWN_FLAGS:
        raise MalformedHeaderError(f"{path}: unknown flags {flags:#x}")
    if rows < 1 or cols < 1:
        raise MalformedHeaderError(f"{path}: empty matrix {rows}x{cols}")
    has_times = bool(flags & FLAG_TIMES)
    n_values = rows * cols + (rows if has_times else 0)
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * n_values:
        raise SizeMismatchError(f"{path}: payload has {len(payload)} bytes, header implies {8 * n_values}")
    arr = np.frombuffer(payload, dtype="<f8").astype(float)
    values = arr[: rows * cols]
    values = values.reshape(rows, cols) if flags & FLAG_ROW_MAJOR else values.reshape(cols, rows).T
    times = arr[rows * cols:] if has_times else None
    if flags & FLAG_GRID:
        if height * width != cols:
            raise MalformedHeaderError(f"{path}: grid {height}x{width} does not match {cols} columns")
        grid = GridGeometry(height, width)
    else:
        grid = GridGeometry.flat()
    _check_finite(path, values, times)
    return DataMatrix(np.ascontiguousarray(values), observed_times=times, grid=grid)


def _check_finite(path, values, times):
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{path}: non-finite values")
    if times is not None and not np.all(np.isfinite(times)):
        raise NonFiniteError(f"{path}: non-finite times")


def _write_csv(data, path):
    with open(path, "w", newline="") as fh:
        if data.grid.is_lattice:
            fh.write(f"# grid {data.grid.height} {data.grid.width}\n")
        times = data.observed_times
        if times is not None:
            fh.write("# times\n")
        w = csv.writer(fh, lineterminator="\n")
        for i, row in enumerate(data.values):
            cells = [repr(float(v)) for v in row]
            if times is not None:
                cells.insert(0, repr(float(times[i])))
            w.writerow(cells)


def _read_csv(path):
    grid = GridGeometry.flat()
    has_times = False
    rows = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                words = text[1:].split()
                if words[:1] == ["grid"]:
                    try:
                        grid = GridGeometry(int(words[1]), int(words[2]))
                    except (IndexError, ValueError) as exc:
                        raise MalformedHeaderError(f"{path}:{lineno}: bad grid line") from exc
                elif words[:1] == ["times"]:
                    has_times = True
                continue
            try:
                rows.append([float(c) for c in next(csv.reader([text]))])
            except ValueError as exc:
                raise MalformedHeaderError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise MalformedHeaderError(f"{path}: no data rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise SizeMismatchError(f"{path}: rows have differing lengths")
    arr = np.array(rows, dtype=float)
    times = None
    if has_times:
        if width < 2:
            raise SizeMismatchError(f"{path}: times column leaves no values")
        times, arr = arr[:, 0].copy(), arr[:, 1:]
    if grid.is_lattice and grid.n_features() != arr.shape[1]:
        raise MalformedHeaderError(f"{path}: grid {grid.height}x{grid.width} does not match {arr.shape[1]} columns")
    _check_finite(path, arr, times)
    return DataMatrix(np.ascontiguousarray(arr), observed_times=times, grid=grid)


def write_array(array, path, grid=None):
    """Write a bare 2-D array (for example fitted maps) in the matrix format."""
    write_matrix(DataMatrix(np.asarray(array, dtype=float), grid=grid or GridGeometry.flat()), path)


def read_array(path):
    return read_matrix(path).values
