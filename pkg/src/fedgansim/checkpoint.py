"""Bit-exact parameter checkpoints.

Layout::

    FGS1 <n_params>\\n
    <name> <ndim> <d0> <d1> ...\\n   followed by prod(d) little-endian float64
    ... repeated n_params times
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np

from .errors import FormatError
from .nn import ModelParams

MAGIC = b"FGS1"


def dumps(params: ModelParams) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + b" %d\n" % len(params))
    for name, arr in params.items():
        if not name or any(c.isspace() for c in name):
            raise FormatError(f"parameter name {name!r} must be non-empty without whitespace")
        dims = " ".join(str(d) for d in arr.shape)
        header = f"{name} {arr.ndim}" + (f" {dims}" if dims else "") + "\n"
        buf.write(header.encode("ascii"))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> ModelParams:
    stream = io.BytesIO(blob)
    first = stream.readline()
    parts = first.split()
    if len(parts) != 2 or parts[0] != MAGIC or not first.endswith(b"\n"):
        raise FormatError(f"bad checkpoint header {first[:40]!r}")
    try:
        count = int(parts[1])
    except ValueError:
        raise FormatError(f"bad parameter count {parts[1]!r}") from None
    params: ModelParams = {}
    for k in range(count):
        line = stream.readline()
        if not line.endswith(b"\n"):
            raise FormatError(f"truncated checkpoint at parameter {k}")
        fields = line.decode("ascii", errors="replace").split()
        try:
            name, ndim = fields[0], int(fields[1])
            shape = tuple(int(d) for d in fields[2:])
        except (IndexError, ValueError):
            raise FormatError(f"bad parameter line {line!r}") from None
        if len(shape) != ndim or any(d < 0 for d in shape):
            raise FormatError(f"parameter {name}: shape {shape} disagrees with ndim {ndim}")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        raw = stream.read(nbytes)
        if len(raw) != nbytes:
            raise FormatError(f"parameter {name}: expected {nbytes} bytes, got {len(raw)}")
        if name in params:
            raise FormatError(f"duplicate parameter {name}")
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if stream.read(1):
        raise FormatError("trailing bytes after last parameter")
    return params


def save(params: ModelParams, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    tmp.write_bytes(dumps(params))
    os.replace(tmp, path)


def load(path) -> ModelParams:
    return loads(Path(path).read_bytes())
