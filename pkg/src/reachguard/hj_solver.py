"""Reach-avoid value functions by backward level-set integration on a state grid."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .env import sdf_clamp, signed_distance


@dataclass(frozen=True)
class StateGrid:
    lower: tuple
    upper: tuple
    shape: tuple
    periodic: tuple

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.shape) == len(self.periodic)):
            raise ValueError("grid metadata lengths differ")
        if any(n < 3 for n in self.shape):
            raise ValueError("every grid dimension needs at least 3 nodes")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValueError("upper bound must exceed lower bound")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(u - l) / (n if p else n - 1)
                         for l, u, n, p in zip(self.lower, self.upper, self.shape, self.periodic)])

    def axis(self, d: int) -> np.ndarray:
        return self.lower[d] + np.arange(self.shape[d]) * self.spacing[d]

    def states(self) -> np.ndarray:
        mesh = np.meshgrid(*[self.axis(d) for d in range(self.ndim)], indexing="ij")
        return np.stack(mesh, axis=-1)

    @classmethod
    def for_map(cls, width_cells: int, height_cells: int, cell_size: float, n_theta: int | None = 36):
        """Nodes on the map's cell centers; heading (if any) periodic over [-pi, pi)."""
        lo = (0.5 * cell_size, 0.5 * cell_size)
        hi = ((width_cells - 0.5) * cell_size, (height_cells - 0.5) * cell_size)
        if n_theta is None:
            return cls(lo, hi, (width_cells, height_cells), (False, False))
        return cls(lo + (-math.pi,), hi + (math.pi,), (width_cells, height_cells, n_theta), (False, False, True))


SCHEMES = ("upwind", "lax_friedrichs")


@dataclass
class SolverConfig:
    horizon: float = 2.0
    cfl_number: float = 0.8
    scheme: str = "upwind"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")


@dataclass(frozen=True)
class RecomputePolicy:
    n_cell: int = 1
    dt_recomp: float = 1.0

    def __post_init__(self):
        if self.n_cell < 1 or self.dt_recomp <= 0:
            raise ValueError("invalid recompute policy")


@dataclass
class ValueFunction:
    grid: StateGrid
    values: np.ndarray
    horizon: float
    map_revision: int = 0
    solve_wall_time: float = 0.0
    clamp: float = 1e3
    steps: int = 0
    # target and obstacle functions the solve started from; None for values read back from disk
    target: np.ndarray | None = field(default=None, repr=False)
    obstacle: np.ndarray | None = field(default=None, repr=False)
    cache: dict = field(default_factory=dict, repr=False, compare=False)


def should_recompute(policy: RecomputePolicy, changed_cells_since_last: int, elapsed_since_last: float) -> bool:
    return changed_cells_since_last >= policy.n_cell or elapsed_since_last >= policy.dt_recomp


def _xy_field_on_grid(grid: StateGrid, field2d: np.ndarray, cell_size: float) -> np.ndarray:
    """Sample a cell-centered 2-D field at the grid's (x, y) nodes and broadcast over heading."""
    xs, ys = grid.axis(0), grid.axis(1)
    fx = xs / cell_size - 0.5
    fy = ys / cell_size - 0.5
    if (fx.size == field2d.shape[0] and fy.size == field2d.shape[1]
            and np.allclose(fx, np.arange(fx.size)) and np.allclose(fy, np.arange(fy.size))):
        plane = field2d.astype(float)
    else:
        FX, FY = np.meshgrid(fx, fy, indexing="ij")
        plane = ndimage.map_coordinates(field2d.astype(float), [FX, FY], order=1, mode="nearest")
    extra = grid.shape[2:]
    return np.broadcast_to(plane.reshape(plane.shape + (1,) * len(extra)), grid.shape).copy()


def build_target_function(grid: StateGrid, safe_sets) -> np.ndarray:
    """Pointwise minimum of the safe zones' signed distances, constant in heading."""
    if not safe_sets:
        raise ValueError("at least one safe set is required")
    xs, ys = grid.axis(0), grid.axis(1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    plane = np.min([z.signed_distance(pts) for z in safe_sets], axis=0)
    extra = grid.shape[2:]
    return np.broadcast_to(plane.reshape(plane.shape + (1,) * len(extra)), grid.shape).copy()


def build_obstacle_function(grid: StateGrid, occupancy: np.ndarray, cell_size: float,
                            robot_radius: float) -> np.ndarray:
    """Positive where the robot disc overlaps an occupied (or unknown) cell."""
    sdf = signed_distance(occupancy, cell_size)
    return _xy_field_on_grid(grid, -sdf + robot_radius, cell_size)


def time_step(grid: StateGrid, dynamics, cfl_number: float) -> float:
    if not (0.0 < cfl_number <= 1.0):
        raise ValueError("cfl_number must lie in (0, 1]")
    rate = float(np.sum(dynamics.dissipation() / grid.spacing))
    dt = cfl_number / rate if rate > 0 else 0.0
    if not dt > 0:
        raise ValueError("CFL condition yields a non-positive time step")
    return dt


def _hamiltonian_fn(dynamics, grid: StateGrid):
    states = grid.states()
    if grid.ndim == 3 and hasattr(dynamics, "bounds"):
        b = dynamics.bounds
        c = np.cos(states[..., 2])
        s = np.sin(states[..., 2])

        def ham(p):
            k = p[0] * c + p[1] * s
            return np.minimum(b.v_min * k, b.v_max * k) - b.omega_max * np.abs(p[2])
        return ham
    return lambda p: dynamics.hamiltonian(states, np.stack(p, axis=-1))


def _upwind_fn(dynamics, grid: StateGrid):
    """Monotone upwind Hamiltonian built from (D-, D+) pairs.

    Each control vertex advects along a fixed direction, so its term takes the
    one-sided difference on the side the motion comes from; the minimum over
    monotone terms stays monotone.
    """
    if grid.ndim == 3 and hasattr(dynamics, "bounds"):
        b = dynamics.bounds
        th = grid.states()[..., 2]
        c, s = np.cos(th), np.sin(th)
        speeds = sorted({b.v_min, b.v_max} | ({0.0} if b.v_min < 0.0 < b.v_max else set()))

        def ham(dm, dp):
            fwd = c * np.where(c > 0, dp[0], dm[0]) + s * np.where(s > 0, dp[1], dm[1])
            bwd = c * np.where(c > 0, dm[0], dp[0]) + s * np.where(s > 0, dm[1], dp[1])
            lin = np.minimum.reduce([v * (fwd if v >= 0 else bwd) for v in speeds])
            turn = np.minimum(0.0, np.minimum(b.omega_max * dp[2], -b.omega_max * dm[2]))
            return lin + turn
        return ham
    if grid.ndim == 2 and hasattr(dynamics, "v_max"):
        vm = dynamics.v_max

        def ham(dm, dp):
            a2 = sum(np.maximum(np.maximum(m, 0.0), np.maximum(-p, 0.0)) ** 2 for m, p in zip(dm, dp))
            return -vm * np.sqrt(a2)
        return ham
    raise TypeError("upwind scheme supports Unicycle on 3-D grids and SingleIntegrator on 2-D grids")


def _one_sided(V, d, dx, periodic):
    """Backward and forward differences along axis ``d``."""
    if periodic:
        fwd = (np.roll(V, -1, axis=d) - V) / dx
        return np.roll(fwd, 1, axis=d), fwd
    diff = np.diff(V, axis=d) / dx
    pad_shape = list(V.shape)
    pad_shape[d] = 1
    z = np.zeros(pad_shape)
    # copy-extrapolated ghost nodes: zero slope across the outer face
    return np.concatenate([z, diff], axis=d), np.concatenate([diff, z], axis=d)


def solve_reach_avoid(l: np.ndarray, g: np.ndarray, grid: StateGrid, dynamics,
                      config: SolverConfig, map_revision: int = 0) -> ValueFunction:
    """Integrate the reach-avoid variational inequality backward over ``config.horizon``.

    Update per step: ``V <- max(g, V + dtau * min(0, H))`` from ``V = max(l, g)``.
    ``H`` is either the monotone upwind Hamiltonian or a global Lax-Friedrichs one,
    both over first-order one-sided differences.
    """
    if l.shape != grid.shape or g.shape != grid.shape:
        raise ValueError("l and g must be sampled on the grid")
    if getattr(dynamics, "state_dim", grid.ndim) != grid.ndim:
        raise ValueError("grid dimension does not match the dynamics state")
    if config.horizon < 0:
        raise ValueError("horizon must be non-negative")
    t0 = time.perf_counter()
    dt_max = time_step(grid, dynamics, config.cfl_number)
    n_steps = int(math.ceil(config.horizon / dt_max - 1e-9)) if config.horizon > 0 else 0
    dtau = config.horizon / n_steps if n_steps else 0.0
    alpha = dynamics.dissipation()
    dx = grid.spacing
    upwind = config.scheme == "upwind"
    ham = _upwind_fn(dynamics, grid) if upwind else _hamiltonian_fn(dynamics, grid)
    V = np.maximum(l, g)
    for _ in range(n_steps):
        if upwind:
            pairs = [_one_sided(V, d, dx[d], grid.periodic[d]) for d in range(grid.ndim)]
            h = ham([m for m, _ in pairs], [p for _, p in pairs])
            np.minimum(h, 0.0, out=h)
            V = np.maximum(g, V + dtau * h)
            continue
        p = []
        diss = np.zeros_like(V)
        for d in range(grid.ndim):
            dm, dp = _one_sided(V, d, dx[d], grid.periodic[d])
            p.append(0.5 * (dm + dp))
            diss += (0.5 * alpha[d]) * (dp - dm)
        h_lf = ham(p) + diss
        np.minimum(h_lf, 0.0, out=h_lf)
        V = np.maximum(g, V + dtau * h_lf)
    clamp = float(max(np.max(np.abs(g)), np.max(np.abs(l))))
    return ValueFunction(grid, V, float(config.horizon), int(map_revision),
                         time.perf_counter() - t0, clamp=clamp, steps=n_steps, target=l, obstacle=g)


def solve_on_map(occupancy: np.ndarray, cell_size: float, safe_zones, dynamics, grid: StateGrid,
                 config: SolverConfig, robot_radius: float, map_revision: int = 0) -> ValueFunction:
    """Convenience wrapper: build l and g for a pessimistic obstacle mask and solve."""
    l = build_target_function(grid, safe_zones)
    g = build_obstacle_function(grid, occupancy, cell_size, robot_radius)
    return solve_reach_avoid(l, g, grid, dynamics, config, map_revision)


__all__ = [
    "SCHEMES", "StateGrid", "SolverConfig", "RecomputePolicy", "ValueFunction", "should_recompute",
    "build_target_function", "build_obstacle_function", "solve_reach_avoid", "solve_on_map",
    "time_step", "sdf_clamp",
]
