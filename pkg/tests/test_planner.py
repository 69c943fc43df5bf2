import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dijkstra_cost
from semmap.errors import NoPath, StartOrGoalLethal
from semmap.geometry import RobotPose2D
from semmap.planner import (Path, PlanRequest, blocked_mask, plan, read_paths_csv, step_costs, validate_path,
                            write_paths_csv)
from semmap.scene import SceneDescription, SceneObject, ShapeParams
from semmap.semantic_map import GridGeometry, OccupancyGrid

RES = 0.05


def costmap(cells, origin=(0.0, 0.0)):
    cells = np.asarray(cells, dtype=np.uint8)
    return OccupancyGrid(GridGeometry(RES, origin, cells.shape[1], cells.shape[0]), cells)


def centre(i, j, origin=(0.0, 0.0)):
    return origin[0] + (i + 0.5) * RES, origin[1] + (j + 0.5) * RES


def test_empty_map_straight_line():
    cm = costmap(np.zeros((10, 30)))
    p = plan(cm, PlanRequest(centre(2, 5), centre(22, 5), robot_radius=0.0))
    assert p.cost == pytest.approx(1.0, abs=1e-12)
    assert np.all(p.cells[:, 1] == 5)
    assert list(p.cells[:, 0]) == list(range(2, 23))
    assert p.length() == pytest.approx(1.0)


def gap_wall(h=30, w=30, gap=(12, 15)):
    cells = np.zeros((h, w))
    cells[:, 15] = 255
    cells[gap[0]:gap[1], 15] = 0
    return cells


def test_path_through_gap_matches_dijkstra():
    cm = costmap(gap_wall())
    req = PlanRequest(centre(3, 3), centre(27, 26), robot_radius=0.0)
    p = plan(cm, req)
    assert set(range(12, 15)) & set(p.cells[p.cells[:, 0] == 15][:, 1])
    blocked = blocked_mask(cm, req.lethal_threshold, 0.0)
    ref = dijkstra_cost(blocked, step_costs(cm, req.cost_weight), (3, 3), (27, 26), RES)
    assert p.cost == pytest.approx(ref, abs=1e-9)


def test_inflation_closes_a_narrow_gap():
    cm = costmap(gap_wall())
    with pytest.raises(NoPath):
        plan(cm, PlanRequest(centre(3, 3), centre(27, 26), robot_radius=0.1))


def test_lethal_goal_and_start():
    cells = np.zeros((20, 20))
    cells[10:15, 10:15] = 255
    cm = costmap(cells)
    with pytest.raises(StartOrGoalLethal):
        plan(cm, PlanRequest(centre(1, 1), centre(12, 12), robot_radius=0.0))
    with pytest.raises(StartOrGoalLethal):
        plan(cm, PlanRequest(centre(12, 12), centre(1, 1), robot_radius=0.0))
    # inflation reaches the goal too
    with pytest.raises(StartOrGoalLethal):
        plan(cm, PlanRequest(centre(1, 1), centre(9, 12), robot_radius=0.05))


def test_request_validation():
    with pytest.raises(ValueError):
        PlanRequest((0, 0), (0, 0))
    with pytest.raises(ValueError):
        PlanRequest((0, 0), (1, 0), lethal_threshold=0)
    with pytest.raises(ValueError):
        PlanRequest((0, 0), (1, 0), robot_radius=-1)
    with pytest.raises(ValueError):
        plan(costmap(np.zeros((5, 5))), PlanRequest((0.1, 0.1), (3.0, 0.1)))


def test_no_corner_cutting():
    cells = np.zeros((3, 3))
    cells[0, 1] = cells[1, 0] = 255
    cells[1, 2] = cells[2, 1] = 255
    with pytest.raises(NoPath):
        plan(costmap(cells), PlanRequest(centre(0, 0), centre(1, 1), robot_radius=0.0))


def test_costly_cells_are_avoided_when_cheap_detour_exists():
    cells = np.zeros((20, 40))
    cells[8:13, 20] = 190
    # crossing costs 0.05 * 30 * 190 / 255 m extra, the detour far less
    p = plan(costmap(cells), PlanRequest(centre(5, 10), centre(35, 10), cost_weight=30.0, robot_radius=0.0))
    assert not np.any(cells[p.cells[:, 1], p.cells[:, 0]] > 0)


def test_blocked_mask_uses_centre_distance():
    cells = np.zeros((11, 11))
    cells[5, 5] = 255
    m = blocked_mask(costmap(cells), 200, 0.1)
    jj, ii = np.nonzero(m)
    assert np.all(np.hypot(ii - 5, jj - 5) * RES <= 0.1 + 1e-9)
    assert m.sum() == 13
    assert np.array_equal(blocked_mask(costmap(cells), 200, 0.0), cells >= 200)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 30), st.integers(5, 30), st.floats(0.0, 0.5))
def test_plan_cost_equals_dijkstra(seed, h, w, density):
    rng = np.random.default_rng(seed)
    cells = rng.integers(0, 200, (h, w)).astype(np.uint8)
    cells[rng.random((h, w)) < density] = 255
    cm = costmap(cells)
    s = (int(rng.integers(w)), int(rng.integers(h)))
    g = (int(rng.integers(w)), int(rng.integers(h)))
    if s == g:
        return
    req = PlanRequest(centre(*s), centre(*g), cost_weight=2.0, robot_radius=0.0)
    blocked = blocked_mask(cm, req.lethal_threshold, 0.0)
    if blocked[s[1], s[0]] or blocked[g[1], g[0]]:
        with pytest.raises(StartOrGoalLethal):
            plan(cm, req)
        return
    ref = dijkstra_cost(blocked, step_costs(cm, req.cost_weight), s, g, RES)
    if math.isinf(ref):
        with pytest.raises(NoPath):
            plan(cm, req)
        return
    p = plan(cm, req)
    assert p.cost == pytest.approx(ref, rel=1e-12, abs=1e-12)
    assert tuple(p.cells[0]) == s and tuple(p.cells[-1]) == g
    assert np.all(np.abs(np.diff(p.cells, axis=0)).max(axis=1) == 1)


def test_plan_cost_equals_dijkstra_on_large_grid():
    rng = np.random.default_rng(42)
    cells = rng.integers(0, 150, (100, 100)).astype(np.uint8)
    cells[rng.random((100, 100)) < 0.25] = 255
    cells[0, 0] = cells[99, 99] = 0
    cm = costmap(cells)
    req = PlanRequest(centre(0, 0), centre(99, 99), robot_radius=0.0)
    blocked = blocked_mask(cm, req.lethal_threshold, 0.0)
    ref = dijkstra_cost(blocked, step_costs(cm, req.cost_weight), (0, 0), (99, 99), RES)
    assert math.isfinite(ref)
    assert plan(cm, req).cost == pytest.approx(ref, rel=1e-12)


# ----------------------------------------------------------------- ground-truth validation

TABLE = SceneObject(7, "desk", RobotPose2D(0.0, 0.0, 0.0), ShapeParams(1.2, 0.8, 0.70, 0.02, 0.04))
SCENE = SceneDescription((TABLE,), (), (-2.0, -2.0, 2.0, 2.0))


def straight_path(y=0.0, x0=-1.5, x1=1.5, n=61):
    xs = np.linspace(x0, x1, n)
    wp = np.column_stack([xs, np.full(n, y)])
    return Path(wp, np.zeros((n, 2), int), 0.0, RES)


def test_empty_scene_never_collides():
    rep = validate_path(straight_path(), SceneDescription(), 0.69, 0.25)
    assert not rep.collided and rep.index is None


def test_flying_through_the_slab_collides():
    rep = validate_path(straight_path(), SCENE, 0.69, 0.1)
    assert rep.collided and rep.object_id == 7
    # the disc reaches the slab edge at x = -0.7
    assert rep.point[0] == pytest.approx(-0.7, abs=RES / 2)


def test_flying_under_the_slab_between_legs_is_clear():
    rep = validate_path(straight_path(), SCENE, 0.30, 0.1)
    assert not rep.collided
    # but the band around 0.59 reaches the slab bottom at 0.68
    assert validate_path(straight_path(), SCENE, 0.59, 0.1).collided


def test_legs_are_hit_when_the_disc_is_wide():
    rep = validate_path(straight_path(y=0.38), SCENE, 0.30, 0.1)
    assert rep.collided and rep.object_id == 7


@pytest.mark.parametrize("h", [0.3, 0.55, 0.59, 0.69, 0.85])
@pytest.mark.parametrize("y", [0.0, 0.3, 0.45, 0.6])
def test_verdict_independent_of_sampling_step(h, y):
    path = straight_path(y=y, n=7)
    a = validate_path(path, SCENE, h, 0.1)
    b = validate_path(path, SCENE, h, 0.1, step=RES / 4)
    assert a.collided == b.collided
    assert a.object_id == b.object_id


def test_validate_rejects_bad_height():
    with pytest.raises(ValueError):
        validate_path(straight_path(), SCENE, 0.0, 0.1)


def test_paths_csv_round_trip(tmp_path):
    p = straight_path(n=5)
    write_paths_csv(tmp_path / "paths.csv", {"metric": p, "semantic": None})
    back = read_paths_csv(tmp_path / "paths.csv")
    assert list(back) == ["metric"]
    assert np.allclose(back["metric"], p.waypoints, atol=1e-4)
