"""Self-describing binary checkpoints.

Layout: the 8-byte magic ``SCKVERS1``, an unsigned 64-bit little-endian
header length, a UTF-8 JSON header, then the raw little-endian arrays in
row-major order, in the order listed by ``header["arrays"]``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .grid import PhaseGrid, PositionGrid
from .hartree import MixedState, SpatialDensity
from .vlasov import KineticDensity

MAGIC = b"SCKVERS1"
DTYPES = {"f64le": np.dtype("<f8"), "c128le": np.dtype("<c16")}


class CheckpointError(RuntimeError):
    pass


def _grid_header(grid) -> dict:
    if isinstance(grid, PhaseGrid):
        return {"d": grid.d, "L": grid.pos.L, "N": grid.pos.N, "Nxi": grid.Nxi, "Xi": grid.Xi}
    return {"d": grid.d, "L": grid.L, "N": grid.N}


def _grid_from_header(g: dict):
    pos = PositionGrid(int(g["d"]), float(g["L"]), int(g["N"]))
    if "Nxi" in g:
        return PhaseGrid(pos, float(g["Xi"]), int(g["Nxi"]))
    return pos


def _encode(obj) -> tuple[dict, list[np.ndarray]]:
    if isinstance(obj, MixedState):
        head = {"kind": "mixedstate", "dims": list(obj.orbitals.shape), "hbar": obj.hbar,
                "dtype": "c128le", "grid": _grid_header(obj.grid), "t": obj.t,
                "arrays": [{"name": "weights", "dtype": "f64le", "shape": [obj.rank]},
                           {"name": "orbitals", "dtype": "c128le", "shape": list(obj.orbitals.shape)}]}
        return head, [obj.weights, obj.orbitals]
    if isinstance(obj, KineticDensity):
        head = {"kind": "kinetic", "dims": list(obj.values.shape), "hbar": None, "dtype": "f64le",
                "grid": _grid_header(obj.grid), "t": obj.t, "signed": obj.signed,
                "arrays": [{"name": "values", "dtype": "f64le", "shape": list(obj.values.shape)}]}
        return head, [obj.values]
    if isinstance(obj, SpatialDensity):
        head = {"kind": "spatial", "dims": list(obj.values.shape), "hbar": None, "dtype": "f64le",
                "grid": _grid_header(obj.grid), "t": 0.0,
                "arrays": [{"name": "values", "dtype": "f64le", "shape": list(obj.values.shape)}]}
        return head, [obj.values]
    raise CheckpointError(f"cannot checkpoint objects of type {type(obj).__name__}")


def write_checkpoint(path, obj, extra: dict | None = None) -> None:
    """Write atomically (temporary file in the target directory, then rename)."""
    head, arrays = _encode(obj)
    if extra:
        head["extra"] = extra
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for spec, a in zip(head["arrays"], arrays):
                fh.write(np.ascontiguousarray(a, dtype=DTYPES[spec["dtype"]]).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_header(fh) -> dict:
    magic = fh.read(8)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; not a checkpoint or unsupported version")
    raw = fh.read(8)
    if len(raw) < 8:
        raise CheckpointError("truncated checkpoint header")
    (n,) = struct.unpack("<Q", raw)
    blob = fh.read(n)
    if len(blob) < n:
        raise CheckpointError("truncated checkpoint header")
    try:
        head = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    for key in ("kind", "dims", "grid", "dtype", "arrays"):
        if key not in head:
            raise CheckpointError(f"checkpoint header lacks {key!r}")
    for spec in [head] + head["arrays"]:
        if spec["dtype"] not in DTYPES:
            raise CheckpointError(f"unsupported dtype tag {spec['dtype']!r} (expected one of {sorted(DTYPES)})")
    return head


def read_header(path) -> dict:
    """Header only; array payloads are not touched."""
    with open(path, "rb") as fh:
        return _read_header(fh)


def read_checkpoint(path, expect_kind: str | None = None):
    with open(path, "rb") as fh:
        head = _read_header(fh)
        if expect_kind is not None and head["kind"] != expect_kind:
            raise CheckpointError(f"expected a {expect_kind} checkpoint, found {head['kind']}")
        arrays = {}
        for spec in head["arrays"]:
            dt = DTYPES[spec["dtype"]]
            count = int(np.prod(spec["shape"]))
            raw = fh.read(count * dt.itemsize)
            if len(raw) < count * dt.itemsize:
                raise CheckpointError(f"truncated array {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(raw, dtype=dt).reshape(spec["shape"]).astype(dt.newbyteorder("="))
        if fh.read(1):
            raise CheckpointError("trailing bytes after the last array")
    grid = _grid_from_header(head["grid"])
    kind = head["kind"]
    if kind == "mixedstate":
        st = MixedState(head["hbar"], grid, arrays["weights"], arrays["orbitals"], t=head["t"])
        return st
    if kind == "kinetic":
        return KineticDensity(grid, arrays["values"], signed=head.get("signed", False), t=head["t"])
    if kind == "spatial":
        return SpatialDensity(grid, arrays["values"])
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")
