from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dijkstra_grid, random_block_grid
from vlnce.errors import FromNotNavigable, LegUnreachable, Unreachable
from vlnce.harness.fixtures import corridor_environment, open_room
from vlnce.pathfinding import (
    build_reference_actions,
    distance_field,
    follow_path,
    follower_cap,
    geodesic,
    geodesic_distance,
    polyline_length,
)
from vlnce.simulator import run_actions
from vlnce.world import Action, CellKind, OccupancyEnvironment, Pose, horizontal_distance

F, L, R, S = Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT, Action.STOP


def centers(env, k, rng):
    iys, ixs = np.nonzero(env.navigable_centers)
    pick = rng.choice(len(ixs), size=min(k, len(ixs)), replace=False)
    return [(int(ixs[i]), int(iys[i])) for i in pick]


def test_zero_length_query():
    env = open_room(3.0)
    r = geodesic(env, (1.0, 1.0, 0.0), (1.0, 1.0, 0.0))
    assert r.distance == 0.0 and len(r.path) == 1


def test_straight_corridor():
    env = corridor_environment(10.0, 1.0)
    r = geodesic(env, (1.0, 0.55, 0.0), (9.0, 0.55, 0.0))
    assert r.distance == pytest.approx(8.0, abs=env.cell_size)
    assert r.distance == pytest.approx(polyline_length(r.path), abs=1e-9)


def test_from_must_be_navigable():
    env = corridor_environment(4.0, 1.0)
    with pytest.raises(FromNotNavigable):
        geodesic(env, (0.0, 0.0, 0.0), (2.0, 0.55, 0.0))


def test_disconnected_is_unreachable():
    env = corridor_environment(6.0, 1.0)
    kinds = env.kinds.copy()
    kinds[:, 60:62] = CellKind.OBSTACLE
    env = OccupancyEnvironment(kinds)
    r = geodesic(env, (1.0, 0.55, 0.0), (5.0, 0.55, 0.0))
    assert not r.reachable and math.isinf(r.distance)
    assert math.isinf(geodesic_distance(env, (1.0, 0.55, 0.0), (5.0, 0.55, 0.0)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_astar_matches_dijkstra(seed):
    rng = np.random.default_rng(seed)
    env = OccupancyEnvironment(random_block_grid(rng, 30), cell_size=0.2, agent_radius=0.2)
    pts = centers(env, 6, rng)
    if len(pts) < 2:
        return
    mask = env.navigable_centers
    for a in pts:
        ref = dijkstra_grid(mask, a)
        for b in pts:
            got = geodesic(env, env.cell_center(*a), env.cell_center(*b))
            if b in ref:
                assert got.distance == pytest.approx(ref[b] * env.cell_size, abs=1e-9)
                assert got.distance == pytest.approx(polyline_length(got.path), abs=1e-9)
            else:
                assert not got.reachable


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_distance_field_matches_dijkstra(seed):
    rng = np.random.default_rng(seed)
    env = OccupancyEnvironment(random_block_grid(rng, 25), cell_size=0.2, agent_radius=0.2)
    pts = centers(env, 1, rng)
    if not pts:
        return
    ref = dijkstra_grid(env.navigable_centers, pts[0])
    field = distance_field(env, pts[0])
    for iy in range(env.height):
        for ix in range(env.width):
            v = field.value((ix, iy))
            if (ix, iy) in ref:
                assert v == pytest.approx(ref[(ix, iy)] * env.cell_size, abs=1e-9)
            else:
                assert math.isinf(v)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_metric_properties(seed):
    rng = np.random.default_rng(seed)
    env = OccupancyEnvironment(random_block_grid(rng, 25, density=0.1), cell_size=0.2, agent_radius=0.2)
    pts = [env.cell_center(*c) for c in centers(env, 5, rng)]
    d = {}
    for a in pts:
        for b in pts:
            d[a, b] = geodesic(env, a, b).distance
    for a in pts:
        for b in pts:
            if math.isfinite(d[a, b]):
                assert d[a, b] == pytest.approx(d[b, a], abs=1e-9)
                assert d[a, b] >= horizontal_distance(a, b) - env.cell_size
                r = geodesic(env, a, b)
                assert horizontal_distance(r.path[0], a) <= env.cell_size
                assert horizontal_distance(r.path[-1], b) <= env.cell_size
            for c in pts:
                if math.isfinite(d[a, b]) and math.isfinite(d[b, c]):
                    assert d[a, c] <= d[a, b] + d[b, c] + 2 * env.cell_size


def test_follow_one_meter_ahead():
    env = open_room(4.0)
    acts = follow_path(env, Pose(1.0, 2.0, 0.0, 0), (2.0, 2.0, 0.0), 0.5)
    assert acts == [F, F]


def test_follow_target_behind_turns_twelve_times():
    env = open_room(6.0)
    acts = follow_path(env, Pose(4.0, 3.0, 0.0, 0), (1.5, 3.0, 0.0), 0.5)
    assert len(set(acts[:12])) == 1 and acts[0] in (L, R)
    assert acts[12] == F


def test_follow_l_shaped_corridor():
    n = 100
    kinds = np.full((n, n), CellKind.OBSTACLE, dtype=np.uint8)
    kinds[5:25, 5:95] = CellKind.FREE  # horizontal arm, 1 m wide
    kinds[5:95, 75:95] = CellKind.FREE  # vertical arm
    env = OccupancyEnvironment(kinds)
    start = Pose(0.6, 0.75, 0.0, 0)
    target = (4.25, 4.5, 0.0)
    acts = follow_path(env, start, target, 0.5)
    t = run_actions(env, start, acts)
    assert horizontal_distance(t.final_pose.position, target) <= 0.5
    geo = geodesic(env, start.position, target)
    heading = [math.degrees(math.atan2(b[1] - a[1], b[0] - a[0])) for a, b in zip(geo.path, geo.path[1:])]
    turning = sum(abs((h2 - h1 + 180) % 360 - 180) for h1, h2 in zip(heading, heading[1:]))
    ideal = geo.distance / 0.25 + turning / 15
    assert abs(len(acts) - ideal) <= 0.15 * ideal
    assert not any(t.collided)


@settings(max_examples=25, deadline=None)
@given(
    sx=st.floats(0.5, 5.5), sy=st.floats(0.5, 5.5), tx=st.floats(0.5, 5.5), ty=st.floats(0.5, 5.5),
    h=st.integers(0, 23),
)
def test_follow_in_convex_room_never_collides(sx, sy, tx, ty, h):
    env = open_room(6.0)
    start = Pose(sx, sy, 0.0, 15 * h)
    acts = follow_path(env, start, (tx, ty, 0.0), 0.5)
    t = run_actions(env, start, acts) if acts else None
    if t is None:
        assert horizontal_distance(start.position, (tx, ty)) <= 0.5
        return
    assert horizontal_distance(t.final_pose.position, (tx, ty)) <= 0.5 + 1e-9
    assert not any(t.collided)
    assert len(acts) <= follower_cap(geodesic(env, start.position, (tx, ty, 0.0)).distance)


def test_follow_unreachable():
    env = corridor_environment(6.0, 1.0)
    kinds = env.kinds.copy()
    kinds[:, 60:62] = CellKind.OBSTACLE
    env = OccupancyEnvironment(kinds)
    with pytest.raises(Unreachable):
        follow_path(env, Pose(1.0, 0.55, 0.0, 0), (5.0, 0.55, 0.0), 0.5)


def test_reference_actions_close_waypoints():
    env = open_room(4.0)
    assert build_reference_actions(env, [(1.0, 1.0, 0.0), (1.4, 1.0, 0.0)]) == [S]


def test_reference_actions_straight_hallway():
    env = corridor_environment(8.0, 1.0)
    wps = [(1.0, 0.55, 0.0), (3.25, 0.55, 0.0), (5.5, 0.55, 0.0)]
    acts = build_reference_actions(env, wps)
    # each 2.25 m leg stops inside the 0.5 m radius; the second leg starts short of its waypoint
    assert acts[-1] == S and acts[:-1].count(F) == 7 + 9
    t = run_actions(env, Pose(*wps[0], 0), acts)
    assert horizontal_distance(t.final_pose.position, wps[-1]) <= 0.5


def test_reference_actions_disjoint_leg():
    env = corridor_environment(8.0, 1.0)
    kinds = env.kinds.copy()
    kinds[:, 100:102] = CellKind.OBSTACLE
    env = OccupancyEnvironment(kinds)
    with pytest.raises(LegUnreachable) as exc:
        build_reference_actions(env, [(1.0, 0.55, 0.0), (3.0, 0.55, 0.0), (7.0, 0.55, 0.0)])
    assert exc.value.leg == 1
