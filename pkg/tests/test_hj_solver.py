import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import empty_box, far_from_boundary, lattice_step, reach_oracle, zone_union_sd
from reachguard.dynamics import ControlBounds, SingleIntegrator, Unicycle
from reachguard.env import DiscZone, RectZone, sdf_clamp, signed_distance
from reachguard.hj_solver import (RecomputePolicy, SolverConfig, StateGrid, build_obstacle_function,
                                  build_target_function, should_recompute, solve_on_map, solve_reach_avoid,
                                  time_step)

UNI = Unicycle(ControlBounds(0.0, 1.0, 1.5))


def test_grid_spacing_rules():
    g = StateGrid((0.0, 0.0, -math.pi), (1.0, 2.0, math.pi), (11, 21, 8), (False, False, True))
    assert np.allclose(g.spacing, [0.1, 0.1, 2 * math.pi / 8])
    with pytest.raises(ValueError):
        StateGrid((0.0,), (1.0,), (2,), (False,))
    m = StateGrid.for_map(10, 6, 0.2, 12)
    assert m.shape == (10, 6, 12) and np.allclose(m.axis(0), (np.arange(10) + 0.5) * 0.2)


def test_recompute_policy():
    p = RecomputePolicy(n_cell=25, dt_recomp=2.0)
    assert not should_recompute(p, 0, 0.0)
    assert should_recompute(p, 25, 0.0)
    assert should_recompute(p, 0, 2.0)
    assert not should_recompute(p, 24, 1.99)
    with pytest.raises(ValueError):
        RecomputePolicy(0, 1.0)


def test_target_function():
    grid = StateGrid.for_map(32, 32, 0.1, 8)
    z1, z2 = DiscZone(0.8, 0.8, 0.3), RectZone(2.0, 2.0, 2.8, 2.6)
    l = build_target_function(grid, [z1, z2])
    S = grid.states()[..., :2]
    brute = np.minimum(np.hypot(S[..., 0] - 0.8, S[..., 1] - 0.8) - 0.3, z2.signed_distance(S))
    assert np.allclose(l, brute)
    assert np.allclose(l, l[..., :1])
    i, j = 7, 7   # node (0.75, 0.75) inside the disc
    assert (l[i, j] < 0).all()
    with pytest.raises(ValueError):
        build_target_function(grid, [])


def test_obstacle_function():
    h, r = 0.1, 0.15
    occ = np.zeros((30, 30), dtype=bool)
    occ[10:15, 10:15] = True
    grid = StateGrid.for_map(30, 30, h, 4)
    g = build_obstacle_function(grid, occ, h, r)
    assert g[12, 12, 0] > 0 and g[25, 25, 0] < 0
    assert np.allclose(g, g[..., :1])
    # zero level sits robot_radius outside the occupied square's edge (x = 1.0), within a cell
    row = g[:, 12, 0]
    xs = (np.arange(30) + 0.5) * h
    crossing = xs[np.flatnonzero((row[:-1] <= 0) & (row[1:] > 0))[0]]
    assert abs(crossing - (1.0 - r)) <= h


def test_cfl_step_and_errors():
    grid = StateGrid.for_map(20, 20, 0.1, 24)
    dt = time_step(grid, UNI, 0.8)
    assert dt == pytest.approx(0.8 / (1 / 0.1 + 1 / 0.1 + 1.5 / (2 * math.pi / 24)))
    with pytest.raises(ValueError):
        time_step(grid, UNI, 0.0)
    with pytest.raises(ValueError):
        SolverConfig(scheme="weno")


def _toy(n=24, nt=12, h=0.1):
    grid = StateGrid.for_map(n, n, h, nt)
    occ = empty_box(n, n)
    occ[n // 2, 3:n - 6] = True
    l = build_target_function(grid, [DiscZone(0.5, 0.5, 0.25)])
    g = build_obstacle_function(grid, occ, h, 0.1)
    return grid, occ, l, g


@pytest.mark.parametrize("scheme", ["upwind", "lax_friedrichs"])
def test_zero_horizon_identity(scheme):
    grid, _, l, g = _toy()
    V = solve_reach_avoid(l, g, grid, UNI, SolverConfig(0.0, 0.8, scheme))
    assert np.array_equal(V.values, np.maximum(l, g)) and V.steps == 0


def test_all_obstacle_is_fixed_point():
    grid, _, l, _ = _toy()
    g = np.full(grid.shape, sdf_clamp((24, 24), 0.1))
    V = solve_reach_avoid(l, g, grid, UNI, SolverConfig(1.0))
    assert np.array_equal(V.values, g)


@pytest.mark.parametrize("scheme", ["upwind", "lax_friedrichs"])
def test_bounds_by_initialisation_and_obstacles(scheme):
    grid, _, l, g = _toy()
    V = solve_reach_avoid(l, g, grid, UNI, SolverConfig(1.5, 0.8, scheme))
    assert np.all(V.values >= g) and np.all(V.values <= np.maximum(l, g))
    assert np.all(np.isfinite(V.values))


def test_single_integrator_disc_grows_at_speed():
    n, h = 61, 0.1
    grid = StateGrid((0.0, 0.0), (6.0, 6.0), (n, n), (False, False))
    l = build_target_function(grid, [DiscZone(3.0, 3.0, 0.5)])
    g = np.full(grid.shape, -100.0)
    V = solve_reach_avoid(l, g, grid, SingleIntegrator(1.0), SolverConfig(1.5))
    S = grid.states()
    d = np.hypot(S[..., 0] - 3, S[..., 1] - 3)
    truth = d <= 2.0
    wrong = (V.values <= 0) != truth
    assert np.all(np.abs(d[wrong] - 2.0) <= 2 * h)


def test_horizon_monotone():
    grid, _, l, g = _toy()
    prev = None
    for T in (0.3, 0.8, 1.6):
        V = solve_reach_avoid(l, g, grid, UNI, SolverConfig(T)).values
        if prev is not None:
            free = g < 0
            assert np.all(prev[free] >= V[free] - 1e-9)
        prev = V


@given(st.integers(0, 2**16))
def test_fewer_obstacles_never_raise_value(seed):
    rng = np.random.default_rng(seed)
    n, h = 20, 0.1
    grid = StateGrid.for_map(n, n, h, 8)
    occ_new = empty_box(n, n) | (rng.random((n, n)) < 0.08)
    occ_old = occ_new | (rng.random((n, n)) < 0.15)
    l = build_target_function(grid, [DiscZone(1.0, 1.0, 0.3)])
    cfg = SolverConfig(1.0)
    g_old = build_obstacle_function(grid, occ_old, h, 0.1)
    g_new = build_obstacle_function(grid, occ_new, h, 0.1)
    assert np.all(g_old >= g_new)
    V_old = solve_reach_avoid(l, g_old, grid, UNI, cfg).values
    V_new = solve_reach_avoid(l, g_new, grid, UNI, cfg).values
    assert np.all(V_old >= V_new - 1e-6)
    assert not np.any((V_old <= 0) & ~(V_new <= 1e-6))


def test_half_turn_symmetry():
    n, h, nt = 31, 0.1, 16
    grid = StateGrid.for_map(n, n, h, nt)
    occ = empty_box(n, n)
    occ[10, 10:21] = occ[20, 10:21] = True
    zones = [DiscZone(0.65, 0.65, 0.3), DiscZone(n * h - 0.65, n * h - 0.65, 0.3)]
    V = solve_on_map(occ, h, zones, UNI, grid, SolverConfig(1.5), 0.1).values
    rotated = np.roll(V[::-1, ::-1, :], nt // 2, axis=2)
    assert np.max(np.abs(rotated - V)) < 1e-6


def test_wall_world_agrees_with_reachability_oracle():
    n, h, nt = 60, 0.1, 24
    grid = StateGrid.for_map(n, n, h, nt)
    occ = empty_box(n, n)
    occ[30, 8:52] = True
    zones = [DiscZone(4.5, 3.0, 0.5)]
    steps = int(round(2.0 / lattice_step(grid, UNI)))
    T = steps * lattice_step(grid, UNI)
    reach = reach_oracle(zone_union_sd(zones), occ, h, 0.15, grid, UNI, steps)
    V = solve_on_map(occ, h, zones, UNI, grid, SolverConfig(T), 0.15)
    far = far_from_boundary(reach, 2)
    agree = ((V.values <= 0) == reach)[far].mean()
    assert agree >= 0.97


def test_mismatched_inputs_rejected():
    grid, _, l, g = _toy()
    with pytest.raises(ValueError):
        solve_reach_avoid(l[:-1], g, grid, UNI, SolverConfig(1.0))
    with pytest.raises(ValueError):
        solve_reach_avoid(l[..., 0], g[..., 0], StateGrid.for_map(24, 24, 0.1, None), UNI, SolverConfig(1.0))


def test_signed_distance_used_for_obstacles_is_exact():
    occ = np.zeros((10, 10), dtype=bool)
    occ[4, 4] = True
    grid = StateGrid.for_map(10, 10, 0.1, 3)
    g = build_obstacle_function(grid, occ, 0.1, 0.0)
    assert np.allclose(g[..., 0], -signed_distance(occ, 0.1))
