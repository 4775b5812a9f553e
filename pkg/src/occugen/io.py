"""Map and grid persistence.

Formats
-------
``OCCV1`` local grids: one ASCII header line
``OCCV1 <Dx> <Dy> <Dz> <resolution> <origin_x> <origin_y> <origin_z> <yaw>``
followed by little-endian float32 values, x-fastest.

``OCCW1`` ground-truth worlds: header
``OCCW1 <Nx> <Ny> <Nz> <resolution> <min_x> <min_y> <min_z> <yaw>``
followed by one material byte per cell, x-fastest.

``OCCG1`` global maps: header ``OCCG1 <resolution> <prior> <clamp_min>
<clamp_max> <n_cells>`` then one line per cell ``<i> <j> <k> <log_odds>
<provenance>``.

All writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import PREDICTED, SENSED, GlobalOccupancyMap, LocalGrid, Pose, pack_keys


class MapFileError(Exception):
    """Base class for unreadable map files."""


class MapFormatError(MapFileError):
    """Bad magic bytes or a malformed header."""


class MapVersionError(MapFileError):
    """Known format family, unsupported version."""


class TruncatedPayloadError(MapFileError):
    """Payload shorter (or longer) than the header promises."""


_FAMILIES = {"OCCV": "1", "OCCW": "1", "OCCG": "1"}


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _fmt(x: float) -> str:
    # repr round-trips float64 exactly
    return repr(float(x))


def _split_header(data: bytes, binary: bool) -> tuple[list[str], bytes]:
    nl = data.find(b"\n")
    if nl < 0:
        raise MapFormatError("missing header line")
    try:
        header = data[:nl].decode("ascii")
    except UnicodeDecodeError as exc:
        raise MapFormatError("header is not ASCII") from exc
    fields = header.split()
    if not fields:
        raise MapFormatError("empty header")
    magic = fields[0]
    family, version = magic[:4], magic[4:]
    if family not in _FAMILIES:
        raise MapFormatError(f"unknown magic {magic!r}")
    if version != _FAMILIES[family]:
        raise MapVersionError(f"unsupported version {magic!r}")
    return fields, data[nl + 1 :]


def _check_magic(fields, expected: str) -> None:
    if fields[0] != expected:
        raise MapFormatError(f"expected {expected} file, found {fields[0]}")


def grid_to_bytes(grid: LocalGrid) -> bytes:
    p = grid.origin_pose
    header = "OCCV1 {} {} {} {} {} {} {} {}\n".format(
        *grid.dims, _fmt(grid.resolution), _fmt(p.x), _fmt(p.y), _fmt(p.z), _fmt(p.yaw)
    )
    payload = np.asarray(grid.values, dtype="<f4").ravel(order="F").tobytes()
    return header.encode("ascii") + payload


def grid_from_bytes(data: bytes) -> LocalGrid:
    fields, payload = _split_header(data, binary=True)
    _check_magic(fields, "OCCV1")
    if len(fields) != 9:
        raise MapFormatError(f"OCCV1 header needs 8 fields, got {len(fields) - 1}")
    try:
        dims = tuple(int(v) for v in fields[1:4])
        resolution = float(fields[4])
        pose = Pose(*(float(v) for v in fields[5:9]))
    except ValueError as exc:
        raise MapFormatError("non-numeric header field") from exc
    if any(d <= 0 for d in dims):
        raise MapFormatError("dims must be positive")
    n = dims[0] * dims[1] * dims[2]
    if len(payload) != 4 * n:
        raise TruncatedPayloadError(f"expected {4 * n} payload bytes, got {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").reshape(dims, order="F")
    return LocalGrid(dims, resolution, pose, values)


def map_to_text(gmap: GlobalOccupancyMap) -> str:
    keys, lo, sensed = gmap.arrays()
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    lines = [
        "OCCG1 {} {} {} {} {}".format(
            _fmt(gmap.resolution), _fmt(gmap.prior), _fmt(gmap.clamp_min), _fmt(gmap.clamp_max), len(keys)
        )
    ]
    for r in order.tolist():
        i, j, k = keys[r].tolist()
        lines.append(f"{i} {j} {k} {_fmt(lo[r])} {SENSED if sensed[r] else PREDICTED}")
    return "\n".join(lines) + "\n"


def map_from_text(text: str) -> GlobalOccupancyMap:
    fields, body = _split_header(text.encode("utf-8"), binary=False)
    _check_magic(fields, "OCCG1")
    if len(fields) != 6:
        raise MapFormatError(f"OCCG1 header needs 5 fields, got {len(fields) - 1}")
    try:
        res, prior, cmin, cmax = (float(v) for v in fields[1:5])
        n = int(fields[5])
    except ValueError as exc:
        raise MapFormatError("non-numeric header field") from exc
    lines = [ln for ln in body.decode("utf-8").split("\n") if ln.strip()]
    if len(lines) != n:
        raise TruncatedPayloadError(f"expected {n} cells, found {len(lines)}")
    gmap = GlobalOccupancyMap(res, prior, cmin, cmax)
    if n == 0:
        return gmap
    keys = np.empty((n, 3), np.int64)
    lo = np.empty(n)
    sensed = np.empty(n, bool)
    for r, ln in enumerate(lines):
        parts = ln.split()
        if len(parts) != 5 or parts[4] not in (SENSED, PREDICTED):
            raise MapFormatError(f"malformed cell line {r + 1}: {ln!r}")
        try:
            keys[r] = [int(parts[0]), int(parts[1]), int(parts[2])]
            lo[r] = float(parts[3])
        except ValueError as exc:
            raise MapFormatError(f"malformed cell line {r + 1}: {ln!r}") from exc
        sensed[r] = parts[4] == SENSED
    if np.unique(pack_keys(keys)).size != n:
        raise MapFormatError("duplicate cell keys")
    rows = gmap._ensure(keys)
    # bypass clamping so the round trip is exact
    gmap._log_odds[rows] = lo
    gmap._sensed[rows] = sensed
    return gmap


def save_grid(path, obj) -> None:
    """Write a LocalGrid (OCCV1), GlobalOccupancyMap (OCCG1) or world (OCCW1)."""
    if isinstance(obj, LocalGrid):
        atomic_write_bytes(path, grid_to_bytes(obj))
    elif isinstance(obj, GlobalOccupancyMap):
        atomic_write_text(path, map_to_text(obj))
    elif hasattr(obj, "materials"):
        atomic_write_bytes(path, world_to_bytes(obj))
    else:
        raise TypeError(f"cannot save {type(obj).__name__}")


def load_grid(path):
    """Load whichever format the file's magic names."""
    data = Path(path).read_bytes()
    fields, _ = _split_header(data, binary=True)
    magic = fields[0]
    if magic == "OCCV1":
        return grid_from_bytes(data)
    if magic == "OCCG1":
        return map_from_text(data.decode("utf-8"))
    return world_from_bytes(data)


def world_to_bytes(world) -> bytes:
    lo = world.min_corner
    header = "OCCW1 {} {} {} {} {} {} {} {}\n".format(
        *world.materials.shape, _fmt(world.resolution), _fmt(lo[0]), _fmt(lo[1]), _fmt(lo[2]), _fmt(0.0)
    )
    payload = np.asarray(world.materials, dtype=np.uint8).ravel(order="F").tobytes()
    return header.encode("ascii") + payload


def world_from_bytes(data: bytes):
    from .sensor import GroundTruthWorld

    fields, payload = _split_header(data, binary=True)
    _check_magic(fields, "OCCW1")
    if len(fields) != 9:
        raise MapFormatError(f"OCCW1 header needs 8 fields, got {len(fields) - 1}")
    try:
        shape = tuple(int(v) for v in fields[1:4])
        resolution = float(fields[4])
        lo = np.array([float(v) for v in fields[5:8]])
    except ValueError as exc:
        raise MapFormatError("non-numeric header field") from exc
    n = shape[0] * shape[1] * shape[2]
    if len(payload) != n:
        raise TruncatedPayloadError(f"expected {n} payload bytes, got {len(payload)}")
    materials = np.frombuffer(payload, dtype=np.uint8).reshape(shape, order="F")
    offset = np.rint(lo / resolution).astype(np.int64)
    return GroundTruthWorld(resolution, materials.copy(), offset)
