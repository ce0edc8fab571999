import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import bresenham_visible, brute_signed_distance, empty_box, flood_connected, make_truth
from reachguard.env import (FREE, OCCUPIED, UNKNOWN, DiscZone, EnvGenParams, EnvironmentGenerationError,
                            GoalRegion, OccupancyGrid, RectZone, generate_random_environment, is_trap_seed,
                            obstacle_occupancy, reveal, sdf_clamp, signed_distance, zone_cells)

H = 0.1


def test_zone_validation():
    with pytest.raises(ValueError):
        RectZone(1, 1, 1, 2)
    with pytest.raises(ValueError):
        DiscZone(0, 0, 0)
    with pytest.raises(ValueError):
        GoalRegion((0, 0), -1)


def test_rect_signed_distance_inside_and_outside():
    z = RectZone(1, 1, 3, 2)
    assert z.signed_distance([2, 1.5]) == pytest.approx(-0.5)
    assert z.signed_distance([4, 1.5]) == pytest.approx(1.0)
    assert z.signed_distance([4, 3]) == pytest.approx(math.sqrt(2))


# -- generation -------------------------------------------------------------

def test_generation_is_deterministic():
    a = generate_random_environment(7)
    b = generate_random_environment(7)
    assert np.array_equal(a.occupied, b.occupied)
    assert a.safe_zones == b.safe_zones and a.goal == b.goal and a.start == b.start


def test_no_obstacles_leaves_only_border():
    p = EnvGenParams(obstacle_count=0, trap_every=0)
    w = generate_random_environment(3, p)
    assert np.array_equal(w.occupied, empty_box(p.width_cells, p.height_cells))


@pytest.mark.parametrize("seed", range(1, 21))
def test_generated_worlds_connect_start_goal_and_a_zone(seed):
    w = generate_random_environment(seed)
    w.check_invariants()
    occ = w.occupied
    assert occ[0].all() and occ[-1].all() and occ[:, 0].all() and occ[:, -1].all()
    start = w.cell_of(w.start)
    goal = w.cell_of(w.goal.center)
    assert flood_connected(occ, start, tuple(np.array([[goal[0]], [goal[1]]])))
    zone_mask = np.zeros_like(occ)
    for z in w.safe_zones:
        zone_mask |= zone_cells(z, w.width_cells, w.height_cells, w.cell_size) & ~occ
    assert flood_connected(occ, start, np.nonzero(zone_mask))


def test_trap_seeds_follow_schedule():
    p = EnvGenParams()
    assert [s for s in range(1, 21) if is_trap_seed(s, p)] == [4, 8, 12, 16, 20]


def test_infeasible_params_raise():
    p = EnvGenParams(obstacle_count=400, obstacle_size_min=2.0, obstacle_size_max=3.0, max_retries=2,
                     trap_every=0)
    with pytest.raises(EnvironmentGenerationError):
        generate_random_environment(1, p)


# -- occupancy and reveal ---------------------------------------------------

def test_obstacle_occupancy_counts():
    g = OccupancyGrid(4, 3, H)
    assert obstacle_occupancy(g).all()
    g.state[:] = FREE
    assert not obstacle_occupancy(g).any()
    g.state[0, 0] = OCCUPIED
    g.state[1, :] = UNKNOWN
    assert obstacle_occupancy(g).sum() == 1 + 3


def test_reveal_zero_radius_changes_nothing():
    truth = make_truth(empty_box(20, 20), H, [DiscZone(0.5, 0.5, 0.2)])
    g = OccupancyGrid.unknown_like(truth)
    assert reveal(g, truth, (1.0, 1.0), 0.0) == 0
    assert g.revision == 0 and (g.state == UNKNOWN).all()


def test_reveal_whole_empty_map_in_one_call():
    occ = np.zeros((20, 20), dtype=bool)
    truth = make_truth(occ, H, [DiscZone(0.5, 0.5, 0.2)])
    g = OccupancyGrid.unknown_like(truth)
    n = reveal(g, truth, (1.0, 1.0), 10.0)
    assert n == 400 and (g.state == FREE).all() and g.revision == 1


def test_wall_shadows_cells_behind_it():
    occ = np.zeros((30, 30), dtype=bool)
    occ[12, :] = True
    truth = make_truth(occ, H, [DiscZone(0.5, 0.5, 0.2)])
    g = OccupancyGrid.unknown_like(truth)
    reveal(g, truth, (1.05, 1.5), 3.0)
    assert (g.state[13:] == UNKNOWN).all()
    assert (g.state[12, 13:18] == OCCUPIED).all()
    # every revealed cell agrees with an integer line-of-sight oracle
    for i, j in np.argwhere(g.state != UNKNOWN):
        if (i, j) != (10, 15):
            assert bresenham_visible(occ, (10, 15), (i, j)) or occ[i, j] or abs(i - 12) <= 1


@given(st.integers(0, 2**16), st.lists(st.tuples(st.floats(0.2, 2.8), st.floats(0.2, 2.8)), min_size=1, max_size=5))
def test_reveal_is_monotone_and_truthful(seed, positions):
    rng = np.random.default_rng(seed)
    occ = rng.random((30, 30)) < 0.2
    truth = make_truth(occ, H, [DiscZone(0.5, 0.5, 0.2)])
    g = OccupancyGrid.unknown_like(truth)
    unknown = (g.state == UNKNOWN).sum()
    for p in positions:
        before = g.state.copy()
        rev = g.revision
        n = reveal(g, truth, p, 1.0)
        changed = before != g.state
        assert changed.sum() == n
        assert (g.revision > rev) == (n > 0)
        assert (before[changed] == UNKNOWN).all()
        known = g.state != UNKNOWN
        assert np.array_equal(g.state[known] == OCCUPIED, occ[known])
        now = (g.state == UNKNOWN).sum()
        assert now <= unknown
        unknown = now
        # revealing free cells can only shrink the pessimistic obstacle set
        assert not (obstacle_occupancy(g) & ~(before != FREE)).any()


# -- signed distance --------------------------------------------------------

def test_sdf_single_cell():
    cells = np.zeros((16, 16), dtype=bool)
    cells[5, 7] = True
    d = signed_distance(cells, H)
    assert d[8, 7] == pytest.approx(3 * H - 0.5 * H)
    assert d[5, 7] == pytest.approx(-0.5 * H)


def test_sdf_degenerate_inputs_clamp():
    c = sdf_clamp((10, 10), H)
    assert c == pytest.approx(10 * H * math.hypot(10, 10))
    assert (signed_distance(np.zeros((10, 10), bool), H) == c).all()
    assert (signed_distance(np.ones((10, 10), bool), H) == -c).all()


def test_sdf_half_plane_is_linear():
    cells = np.zeros((20, 12), dtype=bool)
    cells[:6] = True
    d = signed_distance(cells, H)
    expect = (np.arange(20) - 5.5) * H
    assert np.allclose(d, expect[:, None])


@given(arrays(bool, st.tuples(st.integers(2, 32), st.integers(2, 32)), elements=st.booleans()))
def test_sdf_matches_brute_force(cells):
    if cells.all() or not cells.any():
        return
    assert np.allclose(signed_distance(cells, H), brute_signed_distance(cells, H), atol=1e-12)


@given(arrays(bool, (24, 24), elements=st.booleans()))
def test_sdf_discrete_lipschitz(cells):
    if cells.all() or not cells.any():
        return
    d = signed_distance(cells, H)
    assert np.all(np.abs(np.diff(d, axis=0)) <= H + 2 * H + 1e-12)
    assert np.all(np.abs(np.diff(d, axis=1)) <= H + 2 * H + 1e-12)
