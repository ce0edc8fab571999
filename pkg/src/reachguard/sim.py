"""Closed-loop episodes with limited sensing, online value recomputation, and benchmarking."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .ancillary import find_homotopy_paths, masked_grid_for, nearest_reachable_cell, path_to_controls
from .dynamics import ControlBounds, Unicycle
from .env import (OCCUPIED, EnvGenParams, GroundTruthMap, OccupancyGrid, generate_random_environment,
                  obstacle_occupancy, reveal, signed_distance, zone_cells)
from .hj_solver import (RecomputePolicy, SolverConfig, StateGrid, ValueFunction, build_obstacle_function,
                        build_target_function, should_recompute, solve_reach_avoid)
from .planner import VARIANTS, GoalCost, Planner, PlannerConfig, contingency_execute
from .value_query import interpolate, optimal_control

NOMINAL, CONTINGENCY = "NOMINAL", "CONTINGENCY"


@dataclass
class EpisodeConfig:
    env: EnvGenParams = field(default_factory=EnvGenParams)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    recompute: RecomputePolicy = field(default_factory=lambda: RecomputePolicy(n_cell=25, dt_recomp=2.0))
    bounds: ControlBounds = field(default_factory=ControlBounds)
    n_theta: int = 24
    robot_radius: float = 0.15
    sensing_radius: float = 2.5
    max_steps: int = 0                 # 0: four times the empty-map kinematic lower bound
    contingency_step: int | None = None
    contingency_substeps: int = 5
    variant: str = "SCRAMPPI"
    goal_cost: str = "geodesic"
    tracker_lookahead: float = 0.4
    tracker_gain: float = 2.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.goal_cost not in ("geodesic", "euclidean"):
            raise ValueError("goal_cost must be 'geodesic' or 'euclidean'")


@dataclass
class StepRecord:
    step: int
    x: float
    y: float
    theta: float
    v: float
    omega: float
    value: float
    branch: str
    ess: float
    alive: int
    recomputed: bool
    mode: str


@dataclass
class EpisodeResult:
    seed: int
    variant: str
    success: bool = False
    collided: bool = False
    steps: int = 0
    unsafe_states: int = 0
    valid_contingency_fraction: float = 1.0
    mean_ess: float = 0.0
    plan_ms: list = field(default_factory=list)
    solve_ms: list = field(default_factory=list)
    contingency: dict | None = None
    branches: dict = field(default_factory=dict)
    log: list = field(default_factory=list)


def disc_hits_cells(occupied: np.ndarray, cell_size: float, pos, radius: float) -> bool:
    """Whether a disc at ``pos`` overlaps any marked cell; leaving the map counts as a hit."""
    W, H = occupied.shape
    x, y = float(pos[0]), float(pos[1])
    if x - radius < 0 or y - radius < 0 or x + radius > W * cell_size or y + radius > H * cell_size:
        return True
    i0, i1 = max(0, int((x - radius) // cell_size)), min(W - 1, int((x + radius) // cell_size))
    j0, j1 = max(0, int((y - radius) // cell_size)), min(H - 1, int((y + radius) // cell_size))
    block = occupied[i0:i1 + 1, j0:j1 + 1]
    if not block.any():
        return False
    ix, iy = np.nonzero(block)
    cx0, cy0 = (ix + i0) * cell_size, (iy + j0) * cell_size
    dx = np.maximum(np.maximum(cx0 - x, x - (cx0 + cell_size)), 0.0)
    dy = np.maximum(np.maximum(cy0 - y, y - (cy0 + cell_size)), 0.0)
    return bool(np.any(dx * dx + dy * dy < radius * radius))


def audit_contingency_validity(state, V: ValueFunction) -> bool:
    return bool(interpolate(V, np.asarray(state, dtype=float)) <= 0.0)


def verify_contingency_by_execution(state, V: ValueFunction, occupancy: np.ndarray, cell_size: float,
                                    safe_zones, horizon: float, dynamics, dt_sim: float,
                                    robot_radius: float):
    """Run the HJ controller from ``state``; returns ``(reached, elapsed)``.

    Succeeds iff a safe zone is entered within ``horizon`` seconds without the robot disc
    touching an occupied or unknown cell.
    """
    x = np.array(state, dtype=float)
    t = 0.0
    n = int(math.ceil(horizon / dt_sim - 1e-9))
    for _ in range(n + 1):
        if any(bool(z.contains(x[:2])) for z in safe_zones):
            return True, t
        if t >= horizon - 1e-12:
            break
        u = optimal_control(V, x, dynamics)
        x = dynamics.step(x, u, dt_sim)
        t += dt_sim
        if disc_hits_cells(occupancy, cell_size, x, robot_radius):
            return False, t
    return False, t


def kinematic_steps(truth: GroundTruthMap, v_max: float, dt: float) -> int:
    d = math.hypot(truth.goal.center[0] - truth.start[0], truth.goal.center[1] - truth.start[1])
    return max(1, int(math.ceil(max(0.0, d - truth.goal.radius) / (v_max * dt))))


class _World:
    """Per-episode mutable state: belief map, current value function, and planning aids."""

    def __init__(self, cfg: EpisodeConfig, truth: GroundTruthMap):
        self.cfg = cfg
        self.truth = truth
        h = truth.cell_size
        self.grid = OccupancyGrid.unknown_like(truth)
        zmask = np.zeros(truth.occupied.shape, dtype=bool)
        for z in truth.safe_zones:
            zmask |= zone_cells(z, truth.width_cells, truth.height_cells, h)
        self.grid.assign(zmask, truth.occupied)
        self.sgrid = StateGrid.for_map(truth.width_cells, truth.height_cells, h, cfg.n_theta)
        self.grid2 = StateGrid.for_map(truth.width_cells, truth.height_cells, h, None)
        self.l = build_target_function(self.sgrid, truth.safe_zones)
        self.V: ValueFunction | None = None
        self.changed_since = 0
        self.time_since = 0.0
        self.goal_cost = GoalCost.euclidean(truth.goal.center)
        self.obstacle = None
        self.paths = []
        self.solve_ms = []

    def solve(self):
        occ = obstacle_occupancy(self.grid)
        g = build_obstacle_function(self.sgrid, occ, self.truth.cell_size, self.cfg.robot_radius)
        t0 = time.perf_counter()
        self.V = solve_reach_avoid(self.l, g, self.sgrid, Unicycle(self.cfg.bounds), self.cfg.solver,
                                   self.grid.revision)
        self.solve_ms.append(1e3 * (time.perf_counter() - t0))
        self.changed_since = 0
        self.time_since = 0.0

    def refresh_aids(self, x):
        cfg, truth, h = self.cfg, self.truth, self.truth.cell_size
        occ = obstacle_occupancy(self.grid)
        if cfg.goal_cost == "geodesic":
            self.goal_cost = GoalCost.geodesic(truth.goal.center, self.grid.state == OCCUPIED, h)
        g2 = -signed_distance(occ, h) + cfg.robot_radius
        gv = ValueFunction(self.grid2, g2, 0.0, self.grid.revision, clamp=float(np.max(np.abs(g2))))
        self.obstacle = lambda s: interpolate(gv, s) < -cfg.planner.delta
        self.paths = []
        if cfg.variant != "VanillaMPPI" and cfg.planner.M_a > 0:
            masked = masked_grid_for(self.grid, self.V, cfg.planner.delta)
            target = truth.goal.center
            ix, iy = int(target[0] // h), int(target[1] // h)
            if masked[ix, iy]:
                target = nearest_reachable_cell(masked, x, target, h, self.goal_cost)
            if target is not None:
                self.paths = find_homotopy_paths(masked, x, target, cfg.planner.M_a, h)

    def sense(self, x, force=False) -> bool:
        """Reveal around ``x`` and recompute V when the policy asks for it."""
        self.changed_since += reveal(self.grid, self.truth, x[:2], self.cfg.sensing_radius)
        if force or self.V is None or should_recompute(self.cfg.recompute, self.changed_since, self.time_since):
            self.solve()
            self.refresh_aids(x)
            return True
        return False

    def audit_value(self, x):
        """V at ``x`` on the current map; a stale V is re-solved only when it would flag x."""
        v = float(interpolate(self.V, x))
        if v > 0.0 and self.V.map_revision != self.grid.revision:
            self.solve()
            self.refresh_aids(x)
            v = float(interpolate(self.V, x))
        return v


def run_episode(config: EpisodeConfig, seed: int, on_recompute=None) -> EpisodeResult:
    """One closed-loop run on the world generated from ``seed``.

    ``on_recompute(step, world)`` is called after every value-function solve, with the
    belief grid and current V available as ``world.grid`` and ``world.V``.
    """
    truth = generate_random_environment(seed, config.env)
    world = _World(config, truth)
    dyn = Unicycle(config.bounds)
    pcfg = config.planner
    planner = Planner(pcfg, dyn, config.variant)
    res = EpisodeResult(seed=seed, variant=config.variant)
    max_steps = config.max_steps or 4 * kinematic_steps(truth, config.bounds.v_max, pcfg.dt)

    x = np.array(truth.start, dtype=float)
    recomputed = world.sense(x)
    if recomputed and on_recompute:
        on_recompute(0, world)
    valid = []
    ess = []
    n_solves = len(world.solve_ms)
    for step in range(max_steps):
        if config.contingency_step is not None and step == config.contingency_step:
            res.contingency = _run_contingency(world, x, dyn, config, res)
            break
        anc = [path_to_controls(p, x, config.bounds, pcfg.N, pcfg.dt, config.tracker_lookahead,
                                config.tracker_gain) for p in world.paths]
        t0 = time.perf_counter()
        plan = planner.plan(x, world.V, world.goal_cost, anc, seed=[seed, step], obstacle_survive=world.obstacle)
        res.plan_ms.append(1e3 * (time.perf_counter() - t0))
        x = dyn.step(x, plan.control, pcfg.dt)
        res.steps += 1
        world.time_since += pcfg.dt
        recomputed = world.sense(x)
        v = world.audit_value(x)
        recomputed = recomputed or len(world.solve_ms) > n_solves
        n_solves = len(world.solve_ms)
        if recomputed and on_recompute:
            on_recompute(res.steps, world)
        valid.append(v <= 0.0)
        res.unsafe_states += int(v > 0.0)
        ess.append(plan.ess)
        res.branches[plan.branch] = res.branches.get(plan.branch, 0) + 1
        res.log.append(StepRecord(res.steps, float(x[0]), float(x[1]), float(x[2]), float(plan.control[0]),
                                  float(plan.control[1]), v, plan.branch, plan.ess,
                                  int(plan.survivors[:, -1].sum()), recomputed, NOMINAL))
        if disc_hits_cells(truth.occupied, truth.cell_size, x, config.robot_radius):
            res.collided = True
            break
        if truth.goal.contains(x[:2]):
            res.success = True
            break
    res.valid_contingency_fraction = float(np.mean(valid)) if valid else 1.0
    res.mean_ess = float(np.mean(ess)) if ess else 0.0
    res.solve_ms = list(world.solve_ms)
    return res


def _run_contingency(world: _World, x, dyn, config: EpisodeConfig, res: EpisodeResult) -> dict:
    """Follow the HJ controller until a safe zone is entered (bounded by twice the horizon)."""
    truth = world.truth
    dt = config.planner.dt / config.contingency_substeps
    limit = 2.0 * max(config.solver.horizon, dt)
    t = 0.0
    while t < limit - 1e-12:
        if truth.in_safe_zone(x):
            return {"reached": True, "elapsed": t}
        u = contingency_execute(x, world.V, dyn)
        for _ in range(config.contingency_substeps):
            x = dyn.step(x, u, dt)
            t += dt
            u = contingency_execute(x, world.V, dyn)
        res.steps += 1
        world.sense(x)
        v = world.audit_value(x)
        res.unsafe_states += int(v > 0.0)
        res.log.append(StepRecord(res.steps, float(x[0]), float(x[1]), float(x[2]), float(u[0]), float(u[1]),
                                  v, "HJFallback", float("nan"), 0, False, CONTINGENCY))
        if disc_hits_cells(truth.occupied, truth.cell_size, x, config.robot_radius):
            res.collided = True
            return {"reached": False, "elapsed": t}
    return {"reached": bool(truth.in_safe_zone(x)), "elapsed": t}


BENCHMARK_COLUMNS = ("variant", "success_rate_pct", "avg_steps", "avg_ess", "valid_cont_pct",
                     "avg_unsafe_states", "mppi_time_ms", "solve_time_ms")


def summarize(variant: str, results: list) -> dict:
    succ = [r for r in results if r.success]
    plan = [t for r in results for t in r.plan_ms]
    solve = [t for r in results for t in r.solve_ms]
    return {
        "variant": variant,
        "success_rate_pct": 100.0 * len(succ) / len(results),
        "avg_steps": float(np.mean([r.steps for r in succ])) if succ else float("nan"),
        "avg_ess": float(np.mean([r.mean_ess for r in results])),
        "valid_cont_pct": 100.0 * float(np.mean([r.valid_contingency_fraction for r in results])),
        "avg_unsafe_states": float(np.mean([r.unsafe_states for r in results])),
        "mppi_time_ms": float(np.mean(plan)) if plan else float("nan"),
        "solve_time_ms": float(np.mean(solve)) if solve else float("nan"),
    }


def run_benchmark(n_envs: int, base_seed: int, variants, config: EpisodeConfig, progress=None):
    """Paired comparison: every variant runs on the same seeds ``base_seed .. base_seed+n_envs-1``.

    Returns ``(rows, episodes)`` where ``episodes[variant]`` lists results in seed order.
    """
    if n_envs < 1:
        raise ValueError("n_envs must be at least 1")
    seeds = [base_seed + k for k in range(n_envs)]
    episodes = {}
    rows = []
    for variant in variants:
        cfg = replace(config, variant=variant)
        eps = []
        for s in seeds:
            eps.append(run_episode(cfg, s))
            if progress:
                progress(variant, s, eps[-1])
        episodes[variant] = eps
        rows.append(summarize(variant, eps))
    return rows, episodes
