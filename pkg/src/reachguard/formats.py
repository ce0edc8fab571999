"""Binary dumps for value functions and maps, and CSV/JSON writers for logs and tables.

Value dump (little-endian)::

    magic  b"HJVF"                4 bytes
    version                       uint32
    N_x, N_y, N_theta             uint32 x 3   (N_theta = 0 for planar grids)
    x_lo, x_hi, y_lo, y_hi, th_lo, th_hi
                                  float64 x 6
    horizon                       float64
    map revision                  uint64
    values                        float32, C order over (x, y, theta): theta fastest

Map dump (little-endian)::

    magic  b"OGMP"                4 bytes
    version                       uint32
    width, height                 uint32 x 2
    cell_size                     float64
    revision                      uint64
    n_zones                       uint32
    cells                         uint8 x width*height, C order over (ix, iy): iy fastest;
                                  0 free, 1 occupied, 2 unknown
    zones                         n_zones x (kind uint8, 4 x float64)
                                  kind 0: rect (xmin, ymin, xmax, ymax); kind 1: disc (cx, cy, r, 0)
    goal                          float64 x 3 (cx, cy, radius)
    start                         float64 x 3 (x, y, theta)
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .env import DiscZone, GoalRegion, GroundTruthMap, OccupancyGrid, RectZone
from .hj_solver import StateGrid, ValueFunction

VALUE_MAGIC = b"HJVF"
MAP_MAGIC = b"OGMP"
FORMAT_VERSION = 1

_VALUE_HEAD = struct.Struct("<4sI3I6ddQ")
_MAP_HEAD = struct.Struct("<4sIIIdQI")
_ZONE = struct.Struct("<B4d")
_TRIPLE = struct.Struct("<3d")


class FormatError(ValueError):
    """Raised for truncated, mislabelled, or inconsistent dump files."""


def encode_value_function(V: ValueFunction) -> bytes:
    g = V.grid
    if g.ndim == 3:
        nx, ny, nt = g.shape
        th = (g.lower[2], g.upper[2])
    elif g.ndim == 2:
        (nx, ny), nt, th = g.shape, 0, (0.0, 0.0)
    else:
        raise FormatError("only planar or (x, y, theta) grids can be dumped")
    head = _VALUE_HEAD.pack(VALUE_MAGIC, FORMAT_VERSION, nx, ny, nt,
                            g.lower[0], g.upper[0], g.lower[1], g.upper[1], th[0], th[1],
                            float(V.horizon), int(V.map_revision))
    return head + np.ascontiguousarray(V.values, dtype="<f4").tobytes()


def decode_value_function(data: bytes) -> ValueFunction:
    if len(data) < _VALUE_HEAD.size:
        raise FormatError("value dump truncated")
    (magic, version, nx, ny, nt, xl, xh, yl, yh, tl, th, horizon, rev) = _VALUE_HEAD.unpack_from(data)
    if magic != VALUE_MAGIC:
        raise FormatError("not a value dump")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported value dump version {version}")
    if nt:
        grid = StateGrid((xl, yl, tl), (xh, yh, th), (nx, ny, nt), (False, False, True))
    else:
        grid = StateGrid((xl, yl), (xh, yh), (nx, ny), (False, False))
    n = int(np.prod(grid.shape))
    body = data[_VALUE_HEAD.size:]
    if len(body) != 4 * n:
        raise FormatError("value dump size does not match its header")
    vals = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(grid.shape)
    clamp = float(np.max(np.abs(vals))) if vals.size else 0.0
    return ValueFunction(grid, vals, horizon, int(rev), clamp=clamp)


def write_value_dump(path, V: ValueFunction) -> None:
    with open(path, "wb") as f:
        f.write(encode_value_function(V))


def read_value_dump(path) -> ValueFunction:
    with open(path, "rb") as f:
        return decode_value_function(f.read())


@dataclass
class MapDump:
    grid: OccupancyGrid
    safe_zones: list
    goal: GoalRegion
    start: tuple

    def as_truth(self) -> GroundTruthMap:
        """Ground-truth view: anything not free counts as occupied."""
        return GroundTruthMap(self.grid.cell_size, self.grid.state != 0, list(self.safe_zones),
                              self.goal, tuple(self.start))


def encode_map(grid: OccupancyGrid, safe_zones, goal: GoalRegion, start) -> bytes:
    W, H = grid.shape
    parts = [_MAP_HEAD.pack(MAP_MAGIC, FORMAT_VERSION, W, H, grid.cell_size, grid.revision, len(safe_zones)),
             np.ascontiguousarray(grid.state, dtype=np.uint8).tobytes()]
    for z in safe_zones:
        if isinstance(z, RectZone):
            parts.append(_ZONE.pack(0, z.xmin, z.ymin, z.xmax, z.ymax))
        elif isinstance(z, DiscZone):
            parts.append(_ZONE.pack(1, z.cx, z.cy, z.radius, 0.0))
        else:
            raise FormatError(f"cannot encode zone {z!r}")
    parts.append(_TRIPLE.pack(goal.center[0], goal.center[1], goal.radius))
    parts.append(_TRIPLE.pack(*[float(v) for v in start]))
    return b"".join(parts)


def encode_truth(truth: GroundTruthMap) -> bytes:
    grid = OccupancyGrid(truth.width_cells, truth.height_cells, truth.cell_size,
                         truth.occupied.astype(np.uint8))
    return encode_map(grid, truth.safe_zones, truth.goal, truth.start)


def decode_map(data: bytes) -> MapDump:
    if len(data) < _MAP_HEAD.size:
        raise FormatError("map dump truncated")
    magic, version, W, H, h, rev, nz = _MAP_HEAD.unpack_from(data)
    if magic != MAP_MAGIC:
        raise FormatError("not a map dump")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported map dump version {version}")
    if W < 1 or H < 1 or not (h > 0 and math.isfinite(h)):
        raise FormatError("invalid map geometry")
    need = _MAP_HEAD.size + W * H + nz * _ZONE.size + 2 * _TRIPLE.size
    if len(data) != need:
        raise FormatError("map dump size does not match its header")
    off = _MAP_HEAD.size
    cells = np.frombuffer(data, dtype=np.uint8, count=W * H, offset=off).reshape(W, H).copy()
    if cells.max(initial=0) > 2:
        raise FormatError("cell states must be 0, 1 or 2")
    off += W * H
    zones = []
    try:
        for _ in range(nz):
            kind, a, b, c, d = _ZONE.unpack_from(data, off)
            off += _ZONE.size
            if kind == 0:
                zones.append(RectZone(a, b, c, d))
            elif kind == 1:
                zones.append(DiscZone(a, b, c))
            else:
                raise FormatError(f"unknown zone kind {kind}")
        gx, gy, gr = _TRIPLE.unpack_from(data, off)
        goal = GoalRegion((gx, gy), gr)
        start = _TRIPLE.unpack_from(data, off + _TRIPLE.size)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    return MapDump(OccupancyGrid(W, H, h, cells, rev), zones, goal, tuple(start))


def write_map_dump(path, grid: OccupancyGrid, safe_zones, goal, start) -> None:
    with open(path, "wb") as f:
        f.write(encode_map(grid, safe_zones, goal, start))


def read_map_dump(path) -> MapDump:
    with open(path, "rb") as f:
        return decode_map(f.read())


STEP_LOG_COLUMNS = ("step", "x", "y", "theta", "v", "omega", "V_at_state", "branch_tag", "ess",
                    "alive_counts", "recompute_flag", "mode")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_step_log(path, records) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(STEP_LOG_COLUMNS)
        for r in records:
            w.writerow([_fmt(r.step), _fmt(r.x), _fmt(r.y), _fmt(r.theta), _fmt(r.v), _fmt(r.omega),
                        _fmt(r.value), r.branch, _fmt(r.ess), _fmt(r.alive), _fmt(r.recomputed), r.mode])


def write_benchmark_table(path, rows, columns, timing: bool) -> None:
    """One row per variant; timing columns read ``nan`` unless ``timing`` is set."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            out = []
            for c in columns:
                v = row[c]
                if c.endswith("_time_ms") and not timing:
                    v = float("nan")
                out.append(v if isinstance(v, str) else f"{float(v):.6f}" if not math.isnan(float(v)) else "nan")
            w.writerow(out)


def read_csv(path) -> list:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_manifest(path, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
