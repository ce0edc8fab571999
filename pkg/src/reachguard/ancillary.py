"""Homotopy-distinct reference paths and tracking control sequences that seed the sampler."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .dynamics import ControlBounds, wrap_angle
from .env import cell_centers, obstacle_occupancy
from .hj_solver import ValueFunction
from .value_query import interpolate

_MOVES = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]


@dataclass
class PlanarPath:
    waypoints: np.ndarray            # (K, 2) meters, cell centers
    cells: list                      # [(ix, iy), ...]
    homotopy_signature: tuple = ()   # reduced word of signed ray crossings
    length: float = 0.0


@dataclass
class AncillaryMeans:
    sequences: list = field(default_factory=list)
    paths: list = field(default_factory=list)


def masked_planning_grid(occupancy: np.ndarray, V: ValueFunction, delta: float, cell_size: float) -> np.ndarray:
    """Cells that are occupied/unknown, or whose best heading still has V >= -delta."""
    occ = np.asarray(occupancy, dtype=bool)
    W, Hc = occ.shape
    pts = cell_centers(W, Hc, cell_size)
    if V.grid.ndim == 3:
        th = V.grid.axis(2)
        q = np.concatenate([np.broadcast_to(pts[:, :, None, :], (W, Hc, th.size, 2)),
                            np.broadcast_to(th[None, None, :, None], (W, Hc, th.size, 1))], axis=-1)
        best = interpolate(V, q).min(axis=-1)
    else:
        best = interpolate(V, pts)
    return occ | (best >= -delta)


def masked_grid_for(grid, V: ValueFunction, delta: float) -> np.ndarray:
    return masked_planning_grid(obstacle_occupancy(grid), V, delta, grid.cell_size)


@dataclass(frozen=True)
class _Rays:
    """Upward rays anchored at one cell of each interior obstacle component."""
    anchors: tuple  # ((ax, ay), ...) in cell indices

    def crossings(self, a, b):
        """Signed ray indices crossed moving from cell a to cell b (left-to-right positive)."""
        out = []
        if a[0] == b[0]:
            return out
        lo, hi = (a, b) if a[0] < b[0] else (b, a)
        sign = 1 if a[0] < b[0] else -1
        for j, (ax, ay) in enumerate(self.anchors):
            # ray sits at x = ax + 0.5 (between columns ax and ax+1), above row ay
            if lo[0] <= ax < hi[0]:
                # y where the move crosses the ray line; diagonal moves cross mid-way
                ycross = lo[1] + (hi[1] - lo[1]) * ((ax + 0.5 - lo[0]) / (hi[0] - lo[0]))
                if ycross > ay:
                    out.append(sign * (j + 1))
        # rays sharing a column: traverse them in mirrored order so reversals cancel
        return out if sign > 0 else out[::-1]


def _obstacle_rays(masked: np.ndarray) -> _Rays:
    labels, n = ndimage.label(masked, structure=np.ones((3, 3), dtype=bool))
    border = set(np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))) - {0}
    anchors = []
    for lab in range(1, n + 1):
        if lab in border:
            continue
        xs, ys = np.nonzero(labels == lab)
        # topmost cell of the rightmost column: the ray never re-enters its own component
        k = np.lexsort((ys, xs))[-1]
        anchors.append((int(xs[k]), int(ys[k])))
    return _Rays(tuple(anchors))


def _extend(word: tuple, crossings) -> tuple:
    w = list(word)
    for c in crossings:
        if w and w[-1] == -c:
            w.pop()
        else:
            w.append(c)
    return tuple(w)


def find_homotopy_paths(masked: np.ndarray, start, goal, max_paths: int, cell_size: float,
                        max_word: int | None = None, max_expansions: int = 200_000) -> list:
    """Up to ``max_paths`` shortest 8-connected grid paths with pairwise distinct signatures.

    A* runs over (cell, reduced crossing word); the first arrival at the goal in each
    word class is that class's shortest path, and the first arrival overall is the
    shortest path. ``max_word`` optionally prunes long words; ``max_expansions``
    bounds the search when fewer than ``max_paths`` classes are cheap to reach.
    """
    W, H = masked.shape
    s = (int(math.floor(start[0] / cell_size)), int(math.floor(start[1] / cell_size)))
    t = (int(math.floor(goal[0] / cell_size)), int(math.floor(goal[1] / cell_size)))
    for c in (s, t):
        if not (0 <= c[0] < W and 0 <= c[1] < H):
            return []
    if max_paths < 1 or masked[s] or masked[t]:
        return []
    # without corner cutting, reachability is plain 4-connectivity
    labels, _ = ndimage.label(~masked)
    if labels[s] != labels[t]:
        return []
    rays = _obstacle_rays(masked)

    def hfun(c):
        return math.hypot(c[0] - t[0], c[1] - t[1])

    start_key = (s, ())
    g = {start_key: 0.0}
    parent = {start_key: None}
    heap = [(hfun(s), 0.0, 0, start_key)]
    closed = set()
    found = []
    seen_words = set()
    tie = 1
    expansions = 0
    while heap and len(found) < max_paths and expansions < max_expansions:
        f, gc, _, key = heapq.heappop(heap)
        if key in closed:
            continue
        closed.add(key)
        expansions += 1
        cell, word = key
        if cell == t:
            if word not in seen_words:
                seen_words.add(word)
                found.append(_trace(parent, key, gc, word, cell_size))
            continue
        for dx, dy in _MOVES:
            nx, ny = cell[0] + dx, cell[1] + dy
            if not (0 <= nx < W and 0 <= ny < H) or masked[nx, ny]:
                continue
            if dx and dy and (masked[cell[0] + dx, cell[1]] or masked[cell[0], cell[1] + dy]):
                continue
            nw = _extend(word, rays.crossings(cell, (nx, ny)))
            if max_word is not None and len(nw) > max_word:
                continue
            nkey = ((nx, ny), nw)
            ng = gc + (math.sqrt(2.0) if dx and dy else 1.0)
            if ng < g.get(nkey, math.inf) - 1e-12:
                g[nkey] = ng
                parent[nkey] = key
                heapq.heappush(heap, (ng + hfun((nx, ny)), ng, tie, nkey))
                tie += 1
    return found


def _trace(parent, key, cost, word, cell_size) -> PlanarPath:
    cells = []
    while key is not None:
        cells.append(key[0])
        key = parent[key]
    cells.reverse()
    pts = (np.asarray(cells, dtype=float) + 0.5) * cell_size
    return PlanarPath(pts, cells, tuple(word), float(cost) * cell_size)


def nearest_reachable_cell(masked: np.ndarray, start, goal, cell_size: float, cost=None):
    """Center of the unmasked cell closest to ``goal`` in the start's 8-connected component.

    ``cost(xy)``, when given, replaces straight-line distance as the closeness measure.
    """
    s = (int(math.floor(start[0] / cell_size)), int(math.floor(start[1] / cell_size)))
    W, H = masked.shape
    if not (0 <= s[0] < W and 0 <= s[1] < H) or masked[s]:
        return None
    labels, _ = ndimage.label(~masked, structure=np.ones((3, 3), dtype=bool))
    xs, ys = np.nonzero(labels == labels[s])
    pts = np.stack([(xs + 0.5) * cell_size, (ys + 0.5) * cell_size], axis=-1)
    d = cost(pts) if cost is not None else np.hypot(pts[:, 0] - goal[0], pts[:, 1] - goal[1])
    k = int(np.argmin(d))
    return ((xs[k] + 0.5) * cell_size, (ys[k] + 0.5) * cell_size)


def path_to_controls(path: PlanarPath, x0, bounds: ControlBounds, N: int, dt: float,
                     lookahead: float = 0.4, k_p: float = 2.0) -> np.ndarray:
    """Pure-pursuit tracking rolled out from ``x0`` with the Euler stepper; returns (N, 2)."""
    pts = np.asarray(path.waypoints, dtype=float)
    if pts.size == 0:
        raise ValueError("path has no waypoints")
    x = np.array(x0, dtype=float)
    seg = np.r_[0.0, np.cumsum(np.hypot(*np.diff(pts, axis=0).T))]
    progress = 0
    out = np.empty((N, 2))
    for i in range(N):
        d = np.hypot(pts[progress:, 0] - x[0], pts[progress:, 1] - x[1])
        progress += int(np.argmin(d))
        target_s = seg[progress] + lookahead
        j = min(int(np.searchsorted(seg, target_s)), len(pts) - 1)
        tgt = pts[j]
        err = float(wrap_angle(math.atan2(tgt[1] - x[1], tgt[0] - x[0]) - x[2]))
        w = float(np.clip(k_p * err, -bounds.omega_max, bounds.omega_max))
        v = bounds.v_max * max(0.0, math.cos(err))
        # curvature of the arc to the lookahead point must be turnable at this speed
        dist = float(np.hypot(tgt[0] - x[0], tgt[1] - x[1]))
        curv = 2.0 * abs(math.sin(err)) / max(dist, 1e-9)
        if curv > 0:
            v = min(v, bounds.omega_max / curv)
        remaining = seg[-1] - seg[progress] + float(np.hypot(*(pts[progress] - x[:2])))
        v = min(v, remaining / dt)
        v = float(np.clip(v, bounds.v_min, bounds.v_max))
        out[i] = (v, w)
        x = x + dt * np.array([v * math.cos(x[2]), v * math.sin(x[2]), w])
        x[2] = float(wrap_angle(x[2]))
    return out
