"""Ground-truth worlds, the sensed occupancy grid, and grid distance fields.

Cell ``(ix, iy)`` covers ``[ix*h, (ix+1)*h] x [iy*h, (iy+1)*h]``; all 2-D arrays
are indexed ``[ix, iy]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

FREE, OCCUPIED, UNKNOWN = 0, 1, 2

# Degenerate signed-distance inputs are clamped at this multiple of the map diagonal.
SDF_CLAMP_FACTOR = 10.0


@dataclass(frozen=True)
class RectZone:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("rectangle must have positive area")

    def signed_distance(self, pts):
        pts = np.asarray(pts, dtype=float)
        cx, cy = 0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax)
        hx, hy = 0.5 * (self.xmax - self.xmin), 0.5 * (self.ymax - self.ymin)
        qx = np.abs(pts[..., 0] - cx) - hx
        qy = np.abs(pts[..., 1] - cy) - hy
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        inside = np.minimum(np.maximum(qx, qy), 0.0)
        return outside + inside

    def contains(self, pts):
        return self.signed_distance(pts) <= 0.0

    def bbox(self):
        return self.xmin, self.ymin, self.xmax, self.ymax


@dataclass(frozen=True)
class DiscZone:
    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disc radius must be positive")

    def signed_distance(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.hypot(pts[..., 0] - self.cx, pts[..., 1] - self.cy) - self.radius

    def contains(self, pts):
        return self.signed_distance(pts) <= 0.0

    def bbox(self):
        return self.cx - self.radius, self.cy - self.radius, self.cx + self.radius, self.cy + self.radius


@dataclass(frozen=True)
class GoalRegion:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("goal radius must be positive")

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.hypot(pts[..., 0] - self.center[0], pts[..., 1] - self.center[1]) <= self.radius


def cell_centers(width: int, height: int, h: float):
    xs = (np.arange(width) + 0.5) * h
    ys = (np.arange(height) + 0.5) * h
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([X, Y], axis=-1)


def zone_cells(zone, width: int, height: int, h: float):
    """Cells that overlap the zone (conservative rasterisation)."""
    c = cell_centers(width, height, h)
    return zone.signed_distance(c) <= h / math.sqrt(2.0)


@dataclass
class GroundTruthMap:
    cell_size: float
    occupied: np.ndarray
    safe_zones: list
    goal: GoalRegion
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def width_cells(self) -> int:
        return self.occupied.shape[0]

    @property
    def height_cells(self) -> int:
        return self.occupied.shape[1]

    @property
    def extent(self):
        return self.width_cells * self.cell_size, self.height_cells * self.cell_size

    def cell_of(self, pos):
        ix = int(math.floor(pos[0] / self.cell_size))
        iy = int(math.floor(pos[1] / self.cell_size))
        return ix, iy

    def in_safe_zone(self, pos) -> bool:
        p = np.asarray(pos, dtype=float)[:2]
        return any(bool(z.contains(p)) for z in self.safe_zones)

    def check_invariants(self):
        if not self.safe_zones:
            raise ValueError("at least one safe zone is required")
        W, H = self.extent
        regions = list(self.safe_zones) + [DiscZone(self.goal.center[0], self.goal.center[1], self.goal.radius)]
        for z in regions:
            x0, y0, x1, y1 = z.bbox()
            if x0 < 0 or y0 < 0 or x1 > W or y1 > H:
                raise ValueError(f"region {z} leaves the map")
            inside = z.signed_distance(cell_centers(self.width_cells, self.height_cells, self.cell_size)) <= 0
            if np.any(self.occupied & inside):
                raise ValueError(f"region {z} overlaps an obstacle")


class OccupancyGrid:
    """The robot's belief: per-cell FREE / OCCUPIED / UNKNOWN plus a revision counter."""

    def __init__(self, width: int, height: int, cell_size: float, state=None, revision: int = 0):
        self.cell_size = float(cell_size)
        if state is None:
            state = np.full((width, height), UNKNOWN, dtype=np.uint8)
        self.state = np.asarray(state, dtype=np.uint8)
        if self.state.shape != (width, height):
            raise ValueError("state array does not match grid size")
        self.revision = int(revision)

    @classmethod
    def unknown_like(cls, truth: GroundTruthMap):
        return cls(truth.width_cells, truth.height_cells, truth.cell_size)

    @property
    def shape(self):
        return self.state.shape

    def copy(self):
        return OccupancyGrid(*self.state.shape, self.cell_size, self.state.copy(), self.revision)

    def assign(self, mask, truth_occupied) -> int:
        """Resolve UNKNOWN cells in ``mask`` to the given truth; returns cells changed."""
        sel = mask & (self.state == UNKNOWN)
        n = int(sel.sum())
        if n:
            self.state[sel] = np.where(truth_occupied[sel], OCCUPIED, FREE)
            self.revision += 1
        return n


def obstacle_occupancy(grid: OccupancyGrid) -> np.ndarray:
    """Pessimistic obstacle mask: occupied or unknown."""
    return grid.state != FREE


def reveal(grid: OccupancyGrid, truth: GroundTruthMap, position, sensing_radius: float) -> int:
    """Ray-cast from ``position`` and reveal visible unknown cells within range.

    A cell is visible when no ground-truth occupied cell lies strictly between
    the robot's cell and it on the integer line traced by a DDA/Bresenham walk.
    """
    if sensing_radius <= 0:
        return 0
    h = grid.cell_size
    W, H = grid.shape
    r0 = (int(math.floor(position[0] / h)), int(math.floor(position[1] / h)))
    if not (0 <= r0[0] < W and 0 <= r0[1] < H):
        raise ValueError("position outside the map")
    rc = int(math.ceil(sensing_radius / h)) + 1
    x_lo, x_hi = max(0, r0[0] - rc), min(W, r0[0] + rc + 1)
    y_lo, y_hi = max(0, r0[1] - rc), min(H, r0[1] + rc + 1)
    ix, iy = np.meshgrid(np.arange(x_lo, x_hi), np.arange(y_lo, y_hi), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    cx, cy = (ix + 0.5) * h, (iy + 0.5) * h
    cand = (np.hypot(cx - position[0], cy - position[1]) <= sensing_radius) & (grid.state[ix, iy] == UNKNOWN)
    ix, iy = ix[cand], iy[cand]
    if ix.size == 0:
        return 0
    dx, dy = ix - r0[0], iy - r0[1]
    n = np.maximum(np.abs(dx), np.abs(dy))
    nmax = int(n.max()) if n.size else 0
    visible = np.ones(ix.size, dtype=bool)
    for k in range(1, nmax):
        active = k < n
        if not active.any():
            break
        t = k / np.where(active, n, 1)
        px = r0[0] + np.floor(dx * t + 0.5).astype(int)
        py = r0[1] + np.floor(dy * t + 0.5).astype(int)
        blocked = active & truth.occupied[np.clip(px, 0, W - 1), np.clip(py, 0, H - 1)]
        blocked &= ~((px == ix) & (py == iy))
        visible &= ~blocked
    mask = np.zeros(grid.shape, dtype=bool)
    mask[ix[visible], iy[visible]] = True
    return grid.assign(mask, truth.occupied)


def sdf_clamp(shape, cell_size: float) -> float:
    return SDF_CLAMP_FACTOR * cell_size * math.hypot(shape[0], shape[1])


def signed_distance(cells: np.ndarray, cell_size: float) -> np.ndarray:
    """Exact Euclidean signed distance to a set of marked cells, sampled at cell centers.

    The region boundary is taken half a cell beyond the marked cell centers, so a
    cell adjacent to a single marked cell reads ``cell_size / 2``. Values are
    negative inside, positive outside; degenerate inputs return +/- the clamp.
    """
    cells = np.asarray(cells, dtype=bool)
    clamp = sdf_clamp(cells.shape, cell_size)
    if not cells.any():
        return np.full(cells.shape, clamp)
    if cells.all():
        return np.full(cells.shape, -clamp)
    half = 0.5 * cell_size
    outside = ndimage.distance_transform_edt(~cells) * cell_size - half
    inside = ndimage.distance_transform_edt(cells) * cell_size - half
    return np.where(cells, -inside, outside)


# ---------------------------------------------------------------------------
# Environment generation
# ---------------------------------------------------------------------------

@dataclass
class EnvGenParams:
    width_cells: int = 60
    height_cells: int = 40
    cell_size: float = 0.15
    obstacle_count: int = 10
    obstacle_size_min: float = 0.3
    obstacle_size_max: float = 1.2
    safe_zone_count: int = 5
    safe_zone_radius: float = 0.5
    zone_y_step: float = 1.0
    last_zone_offset: float = 1.1
    goal_radius: float = 0.4
    min_clearance: float = 0.45
    trap_every: int = 4
    max_retries: int = 50


class EnvironmentGenerationError(RuntimeError):
    pass


def _border(width, height):
    occ = np.zeros((width, height), dtype=bool)
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    return occ


def _rect_cells(occ, h, x0, y0, x1, y1):
    W, H = occ.shape
    i0, i1 = max(0, int(math.floor(x0 / h))), min(W, int(math.ceil(x1 / h)))
    j0, j1 = max(0, int(math.floor(y0 / h))), min(H, int(math.ceil(y1 / h)))
    occ[i0:i1, j0:j1] = True


def _seg_dist(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-12), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _rect_polyline_dist(rect, poly):
    """Lower bound on distance from a rectangle to a polyline (dense sampling)."""
    x0, y0, x1, y1 = rect
    best = np.inf
    for a, b in zip(poly[:-1], poly[1:]):
        n = max(2, int(np.linalg.norm(b - a) / 0.05) + 1)
        pts = a + np.linspace(0, 1, n)[:, None] * (b - a)
        qx = np.maximum(np.maximum(x0 - pts[:, 0], pts[:, 0] - x1), 0.0)
        qy = np.maximum(np.maximum(y0 - pts[:, 1], pts[:, 1] - y1), 0.0)
        best = min(best, float(np.min(np.hypot(qx, qy))))
    return best


def connected_through_free_space(truth: GroundTruthMap) -> bool:
    """Start, goal and at least one safe zone share a 4-connected free component."""
    labels, _ = ndimage.label(~truth.occupied)
    ls = labels[truth.cell_of(truth.start)]
    lg = labels[truth.cell_of(truth.goal.center)]
    if ls == 0 or ls != lg:
        return False
    for z in truth.safe_zones:
        inside = z.signed_distance(cell_centers(truth.width_cells, truth.height_cells, truth.cell_size)) <= 0
        if np.any(labels[inside] == ls):
            return True
    return False


def _place_obstacles(rng, occ, params, keep_out, blocked_rects=()):
    h = params.cell_size
    W, H = occ.shape[0] * h, occ.shape[1] * h
    placed = []
    for _ in range(params.obstacle_count * 20):
        if len(placed) >= params.obstacle_count:
            break
        sx, sy = rng.uniform(params.obstacle_size_min, params.obstacle_size_max, size=2)
        x0 = rng.uniform(h, W - h - sx)
        y0 = rng.uniform(h, H - h - sy)
        rect = (x0, y0, x0 + sx, y0 + sy)
        if _rect_polyline_dist(rect, keep_out) < params.min_clearance:
            continue
        if any(rect[0] < bx1 and bx0 < rect[2] and rect[1] < by1 and by0 < rect[3]
               for bx0, by0, bx1, by1 in blocked_rects):
            continue
        placed.append(rect)
        _rect_cells(occ, h, *rect)
    return placed


def _random_world(rng, params: EnvGenParams) -> GroundTruthMap:
    h = params.cell_size
    W, H = params.width_cells * h, params.height_cells * h
    margin = 0.8
    sy = rng.uniform(margin, H - margin)
    gy = rng.uniform(margin, H - margin)
    start = np.array([margin, sy])
    goal = np.array([W - margin, gy])
    k = max(1, params.safe_zone_count)
    centers = [start]
    if k >= 2:
        # chain from the start to just short of the goal, jittered about the straight line
        last = goal + np.array([-params.last_zone_offset, 0.0])
        for f in np.linspace(0.0, 1.0, k)[1:-1]:
            c = start + f * (last - start)
            c[1] = float(np.clip(c[1] + rng.uniform(-0.5, 0.5) * params.zone_y_step, margin, H - margin))
            centers.append(c)
        centers.append(last)
    zones = [DiscZone(float(c[0]), float(c[1]), params.safe_zone_radius) for c in centers]
    poly = np.array(centers + [goal])
    occ = _border(params.width_cells, params.height_cells)
    _place_obstacles(rng, occ, params, poly)
    th0 = math.atan2(centers[1][1] - sy, centers[1][0] - start[0]) if len(centers) > 1 else 0.0
    return GroundTruthMap(h, occ, zones, GoalRegion((float(goal[0]), float(goal[1])), params.goal_radius),
                          (float(start[0]), float(start[1]), float(th0)))


def trap_world(rng, params: EnvGenParams) -> GroundTruthMap:
    """Dead-end pocket on the straight line to the goal; safe zones detour around it."""
    h = params.cell_size
    W, H = params.width_cells * h, params.height_cells * h
    mid = 0.5 * H + rng.uniform(-0.2, 0.2)
    flip = rng.random() < 0.5
    sgn = -1.0 if flip else 1.0
    start = np.array([0.8, mid])
    goal = np.array([W - 0.8, mid])
    px0 = 2.9 + rng.uniform(-0.2, 0.2)
    depth, half, t = 1.6, 0.8, 0.2
    occ = _border(params.width_cells, params.height_cells)
    walls = [
        (px0, mid + half, px0 + depth, mid + half + t),
        (px0, mid - half - t, px0 + depth, mid - half),
        (px0 + depth - t, mid - half, px0 + depth, mid + half),
    ]
    for r in walls:
        _rect_cells(occ, h, *r)
    side = mid + sgn * (half + 1.3)
    side = float(np.clip(side, 0.7, H - 0.7))
    last = np.array([W - 0.8 - params.last_zone_offset, mid])
    after = np.array([px0 + depth + 0.6, side])
    centers = [start, np.array([px0 - 0.6, side]), after, 0.5 * (after + last), last]
    zones = [DiscZone(float(c[0]), float(c[1]), params.safe_zone_radius) for c in centers]
    poly = np.array(centers + [goal])
    extra = EnvGenParams(**{**params.__dict__, "obstacle_count": max(0, params.obstacle_count // 3)})
    pocket = (px0 - 0.3, mid - half - 0.5, px0 + depth + 0.3, mid + half + 0.5)
    _place_obstacles(rng, occ, extra, np.vstack([poly, [[start[0], mid], [goal[0], mid]]]),
                     blocked_rects=[pocket])
    return GroundTruthMap(h, occ, zones, GoalRegion((float(goal[0]), float(goal[1])), params.goal_radius),
                          (float(start[0]), float(start[1]), 0.0))


def is_trap_seed(seed: int, params: EnvGenParams) -> bool:
    return params.trap_every > 0 and seed % params.trap_every == 0


def generate_random_environment(seed: int, params: EnvGenParams | None = None) -> GroundTruthMap:
    """Deterministic world for ``seed``; every ``trap_every``-th seed is a pocket fixture."""
    params = params or EnvGenParams()
    for attempt in range(params.max_retries):
        rng = np.random.default_rng([int(seed), attempt])
        world = trap_world(rng, params) if is_trap_seed(seed, params) else _random_world(rng, params)
        try:
            world.check_invariants()
        except ValueError:
            continue
        if connected_through_free_space(world):
            return world
    raise EnvironmentGenerationError(f"no valid environment for seed {seed} after {params.max_retries} attempts")
