"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line.

The lines are collected and printed in the terminal summary (see ``conftest.py``);
running this file directly prints them as each criterion finishes.
"""
import math
import os
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import far_from_boundary, lattice_step, reach_oracle, zone_union_sd
from reachguard.cli import main
from reachguard.dynamics import ControlBounds, SingleIntegrator, Unicycle
from reachguard.env import (EnvGenParams, OccupancyGrid, generate_random_environment, is_trap_seed,
                            obstacle_occupancy, reveal)
from reachguard.hj_solver import (SolverConfig, StateGrid, build_obstacle_function, build_target_function,
                                  solve_on_map, solve_reach_avoid, time_step)
from reachguard.planner import VARIANTS, GoalCost, Planner, PlannerConfig
from reachguard.sim import EpisodeConfig, run_benchmark, run_episode, verify_contingency_by_execution
from reachguard.env import DiscZone
from reachguard.hj_solver import ValueFunction
from reachguard.value_query import interpolate

REPORT: list = []
UNI = Unicycle(ControlBounds(0.0, 1.0, 1.5))


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT.append(line)
    print(line, flush=True)


def check(n: int, ok: bool, detail: str) -> None:
    report(n, ok, detail)
    assert ok, detail


# ---------------------------------------------------------------------------
# 1. analytic reachable set of the single integrator
# ---------------------------------------------------------------------------

_C1 = {"worst": 0.0, "slowest": 0.0, "band_ok": True, "runs": 0}


@settings(max_examples=15, deadline=None)
@given(r=st.floats(0.2, 0.6), T=st.floats(0.2, 1.0), cx=st.floats(-0.2, 0.2), cy=st.floats(-0.2, 0.2),
       v_max=st.sampled_from([0.5, 1.0]))
def _analytic_disc(r, T, cx, cy, v_max):
    grid = StateGrid((-2.0, -2.0), (2.0, 2.0), (80, 80), (False, False))
    dyn = SingleIntegrator(v_max)
    l = build_target_function(grid, [DiscZone(cx, cy, r)])
    g = np.full(grid.shape, -10.0)
    t0 = time.perf_counter()
    V = solve_reach_avoid(l, g, grid, dyn, SolverConfig(T))
    wall = time.perf_counter() - t0
    S = grid.states()
    dist = np.hypot(S[..., 0] - cx, S[..., 1] - cy)
    truth = dist <= r + v_max * T
    wrong = (V.values <= 0) != truth
    h = grid.spacing[0]
    _C1["worst"] = max(_C1["worst"], wrong.mean())
    _C1["slowest"] = max(_C1["slowest"], wall)
    _C1["band_ok"] &= bool(np.all(np.abs(dist[wrong] - (r + v_max * T)) <= 2 * h))
    _C1["runs"] += 1
    assert wrong.mean() <= 0.02 and wall < 5.0 and _C1["band_ok"]


def test_criterion_1_analytic_single_integrator_disc():
    try:
        _analytic_disc()
        ok = True
    except AssertionError:
        ok = False
    check(1, ok and _C1["band_ok"],
          f"{_C1['runs']} draws, worst misclassified {100 * _C1['worst']:.2f}% (<= 2%), "
          f"all within 2 cells: {_C1['band_ok']}, slowest solve {_C1['slowest']:.2f}s (< 5s)")


# ---------------------------------------------------------------------------
# 2. unicycle against a brute-force lattice reachability oracle
# ---------------------------------------------------------------------------

def test_criterion_2_unicycle_matches_lattice_oracle():
    params = EnvGenParams(width_cells=60, height_cells=60, cell_size=0.1, trap_every=0)
    h, nt = params.cell_size, 24
    grid = StateGrid.for_map(60, 60, h, nt)
    steps = int(round(2.0 / lattice_step(grid, UNI)))
    T = steps * lattice_step(grid, UNI)
    delta = h
    t0 = time.perf_counter()
    agree, counted = [], 0
    for seed in range(1, 11):
        w = generate_random_environment(seed, params)
        V = solve_on_map(w.occupied, h, w.safe_zones, UNI, grid, SolverConfig(T), 0.15)
        reach = reach_oracle(zone_union_sd(w.safe_zones), w.occupied, h, 0.15, grid, UNI, steps)
        far = far_from_boundary(reach, 2)
        agree.append(((V.values < -delta) == reach)[far].mean())
        counted += int(far.sum())
    wall = time.perf_counter() - t0
    total = float(np.average(agree))
    check(2, total >= 0.97 and min(agree) >= 0.97 and wall < 60.0,
          f"agreement {100 * total:.2f}% overall, worst world {100 * min(agree):.2f}% (>= 97%) "
          f"over {counted} nodes, {wall:.1f}s (< 60s)")


# ---------------------------------------------------------------------------
# 3. monotone growth of the feasible set under reveals
# ---------------------------------------------------------------------------

def test_criterion_3_monotone_under_reveals():
    cfg = EpisodeConfig(planner=PlannerConfig(M=100, N=15))
    pairs = []
    for seed in range(1, 6):
        seen = []
        run_episode(cfg, seed, on_recompute=lambda step, world: seen.append(world.V))
        fresh = [V for k, V in enumerate(seen) if k == 0 or V.map_revision != seen[k - 1].map_revision]
        pairs += list(zip(fresh[:-1], fresh[1:]))[:4]
    value_ok = [bool(np.all(a.values >= b.values - 1e-6)) for a, b in pairs]
    set_ok = [bool(np.all(b.values[a.values <= 0] <= 0)) for a, b in pairs]
    check(3, len(pairs) >= 20 and all(value_ok) and all(set_ok),
          f"{len(pairs)} reveal events (>= 20), V_old >= V_new - 1e-6 in {sum(value_ok)}, "
          f"feasible set nested in {sum(set_ok)}")


# ---------------------------------------------------------------------------
# 4. zero horizon returns the initial condition bitwise
# ---------------------------------------------------------------------------

def test_criterion_4_zero_horizon_identity():
    w = generate_random_environment(3)
    grid = StateGrid.for_map(w.width_cells, w.height_cells, w.cell_size, 24)
    l = build_target_function(grid, w.safe_zones)
    g = build_obstacle_function(grid, w.occupied, w.cell_size, 0.15)
    same = []
    for scheme in ("upwind", "lax_friedrichs"):
        V = solve_reach_avoid(l, g, grid, UNI, SolverConfig(0.0, scheme=scheme))
        same.append(V.values.tobytes() == np.maximum(l, g).tobytes())
    check(4, all(same), f"bitwise equal to max(l, g) for upwind and Lax-Friedrichs: {same}")


# ---------------------------------------------------------------------------
# 5. resampling is a no-op when every sample survives
# ---------------------------------------------------------------------------

def test_criterion_5_rbr_noop_on_feasible_world():
    grid = StateGrid((-1.0, -2.0, -math.pi), (4.0, 2.0, math.pi), (51, 41, 16), (False, False, True))
    V = ValueFunction(grid, np.full(grid.shape, -5.0), 2.0, clamp=5.0)
    cfg = PlannerConfig()
    anc = [np.tile([0.8, 0.2], (cfg.N, 1)), np.tile([0.8, -0.2], (cfg.N, 1))]
    goal = GoalCost.euclidean((3.0, 0.0))
    x0 = np.zeros(3)
    worst = 0.0
    for seed in range(5):
        a = Planner(cfg, UNI, "SCRAMPPI").plan(x0, V, goal, anc, seed=[seed, 0])
        b = Planner(cfg, UNI, "SCRAMPPI_NoRBR").plan(x0, V, goal, anc, seed=[seed, 0])
        worst = max(worst, float(np.max(np.abs(a.mean - b.mean))))
    check(5, worst <= 1e-9, f"max |mean difference| {worst:.3e} (<= 1e-9) over 5 seeds, M={cfg.M}")


# ---------------------------------------------------------------------------
# 6. desk-scale comparison table
# ---------------------------------------------------------------------------

def test_criterion_6_paired_benchmark():
    cfg = EpisodeConfig()
    traps = sum(is_trap_seed(s, cfg.env) for s in range(1, 21))
    rows, _ = run_benchmark(20, 1, VARIANTS, cfg)
    r = {row["variant"]: row for row in rows}
    s, n, v = r["SCRAMPPI"], r["SCRAMPPI_NoRBR"], r["VanillaMPPI"]
    ok = (traps >= 5 and s["valid_cont_pct"] == 100.0 and s["avg_unsafe_states"] == 0.0
          and v["avg_unsafe_states"] > 0 and s["success_rate_pct"] >= n["success_rate_pct"]
          and s["avg_ess"] > n["avg_ess"])
    check(6, ok,
          f"{traps} traps; SCRAMPPI valid {s['valid_cont_pct']:.1f}% unsafe {s['avg_unsafe_states']:.2f} "
          f"success {s['success_rate_pct']:.0f}% ESS {s['avg_ess']:.3f}; NoRBR success "
          f"{n['success_rate_pct']:.0f}% ESS {n['avg_ess']:.3f}; Vanilla unsafe {v['avg_unsafe_states']:.2f}")


# ---------------------------------------------------------------------------
# 7. executing the HJ controller from sampled feasible states
# ---------------------------------------------------------------------------

def test_criterion_7_contingency_execution():
    params = EnvGenParams()
    h, delta, T, dt_sim = params.cell_size, 0.15, 2.0, 0.02
    grid = StateGrid.for_map(params.width_cells, params.height_cells, h, 24)
    rng = np.random.default_rng(7)
    runs = fails = 0
    band = []
    for seed in range(1, 11):
        w = generate_random_environment(seed, params)
        belief = OccupancyGrid.unknown_like(w)
        for k in range(6):
            reveal(belief, w, (w.start[0] + 1.2 * k, w.start[1]), 2.5)
        occ = obstacle_occupancy(belief)
        V = solve_on_map(occ, h, w.safe_zones, UNI, grid, SolverConfig(T), 0.15)
        lo, hi = np.zeros(2), np.array([w.width_cells * h, w.height_cells * h])
        n = 0
        while n < 100:
            x = np.append(rng.uniform(lo, hi), rng.uniform(-math.pi, math.pi))
            v = float(interpolate(V, x))
            if v < -delta:
                n += 1
                runs += 1
                ok, _ = verify_contingency_by_execution(x, V, occ, h, w.safe_zones, T, UNI, dt_sim, 0.15)
                fails += not ok
            elif v <= 0 and len(band) < 50:
                band.append(verify_contingency_by_execution(x, V, occ, h, w.safe_zones, T, UNI, dt_sim, 0.15)[0])
    check(7, runs == 1000 and fails == 0,
          f"{runs - fails}/{runs} feasible states reached a safe zone (need 1000/1000); "
          f"band -delta < V <= 0: {sum(band)}/{len(band)} reached (informational)")


# ---------------------------------------------------------------------------
# 8. solver wall-clock budget
# ---------------------------------------------------------------------------

def test_criterion_8_solver_budget():
    nx, ny, nt, h = 100, 60, 36, 0.1
    grid = StateGrid.for_map(nx, ny, h, nt)
    occ = np.zeros((nx, ny), dtype=bool)
    occ[[0, -1], :] = occ[:, [0, -1]] = True
    occ[30:34, 10:45] = True
    occ[60:64, 20:60] = True
    zones = [DiscZone(2.0, 3.0, 0.5), DiscZone(8.0, 1.5, 0.5)]
    T = 120 * time_step(grid, UNI, 0.8)
    l = build_target_function(grid, zones)
    g = build_obstacle_function(grid, occ, h, 0.15)
    t0 = time.perf_counter()
    V = solve_reach_avoid(l, g, grid, UNI, SolverConfig(T))
    wall = time.perf_counter() - t0
    check(8, wall < 5.0 and 115 <= V.steps <= 125,
          f"{nx}x{ny}x{nt} grid, {V.steps} steps, {wall:.2f}s (< 5s)")


# ---------------------------------------------------------------------------
# 9. benchmark output is reproducible byte for byte
# ---------------------------------------------------------------------------

def test_criterion_9_benchmark_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = main(["benchmark", "--seed", "3", "--n-envs", "2", "--out-dir", str(out)])
        assert code == 0
        outs.append({f: (out / f).read_bytes() for f in ("benchmark.csv", "benchmark_manifest.json")})
    same = outs[0] == outs[1]
    check(9, same, f"benchmark.csv and benchmark_manifest.json identical across two runs: {same}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([os.path.abspath(__file__), "-q", "-s"]))
