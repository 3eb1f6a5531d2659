"""Grid geodesics and the shortest-path action follower.

Geodesics run over navigable cell centers with 8-connectivity (straight
moves cost ``cell_size``, diagonal ``cell_size * sqrt(2)``). A diagonal move
is only allowed when both orthogonal neighbours are navigable too, so a path
never cuts an obstacle corner.

``geodesic`` is the A* query. Repeated queries against one target (the
follower, NE/SR/OS evaluation) go through a cached single-target distance
field instead; both search the same graph.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from vlnce.errors import FollowerStuck, FromNotNavigable, LegUnreachable, Unreachable
from vlnce.simulator import SimState, step
from vlnce.world import (
    FORWARD_METERS,
    TURN_DEGREES,
    Action,
    OccupancyEnvironment,
    Pose,
    center_mask,
    horizontal_distance,
    is_navigable,
    nearest_navigable,
)

SQRT2 = math.sqrt(2.0)
CARROT_LOOKAHEAD = 0.25
TURN_DEADBAND = TURN_DEGREES / 2
WAYPOINT_RADIUS = 0.5
# follower plans prefer keeping this much extra clearance from obstacles
CLEARANCE_MARGIN = 0.10
CLEARANCE_PENALTY = 3.0
# the carrot may be pushed further along the path while still in clear line of sight
SIGHT_LIMIT = 1.0
_FIELD_CACHE_SIZE = 512

_NEIGHBORS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class GeodesicResult:
    distance: float  # math.inf when unreachable
    path: tuple[tuple[float, float], ...]

    @property
    def reachable(self) -> bool:
        return math.isfinite(self.distance)


UNREACHABLE = GeodesicResult(math.inf, ())


def anchor_cell(env: OccupancyEnvironment, p: Sequence[float], mask: np.ndarray | None = None) -> tuple[int, int] | None:
    """Navigable cell center that stands in for the continuous point ``p``.

    The containing cell and its 8 neighbours are tried, closest first; a
    wider 2-cell search is the fallback.
    """
    if mask is None:
        mask = env.navigable_centers
    cs = env.cell_size
    ix, iy = env.cell_of(p[0], p[1])
    best = None
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            cx, cy = ix + dx, iy + dy
            if env.in_bounds(cx, cy) and mask[cy, cx]:
                d = round(math.hypot((cx + 0.5) * cs - p[0], (cy + 0.5) * cs - p[1]), 9)
                key = (d, cx, cy)
                if best is None or key < best:
                    best = key
    if best is not None:
        return best[1], best[2]
    q = nearest_navigable(env, (p[0], p[1], env.floor_at(p[0], p[1]) or 0.0), 2 * cs)
    if q is None:
        return None
    return env.cell_of(q[0], q[1])


def _octile(dx: int, dy: int) -> float:
    dx, dy = abs(dx), abs(dy)
    return (max(dx, dy) - min(dx, dy)) + SQRT2 * min(dx, dy)


def _astar(mask: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> tuple[float, list[tuple[int, int]]] | None:
    """A* over cell indices; costs in cell units, tie-break on (f, h, flat index)."""
    h_, w = mask.shape
    mask = mask.tolist()
    sx, sy = start
    gx, gy = goal
    if start == goal:
        return 0.0, [start]
    # g is evaluated from (straight, diagonal) move counts so that equal-count
    # paths always produce identical floats
    counts = {start: (0, 0)}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    h0 = _octile(gx - sx, gy - sy)
    open_heap = [(h0, h0, sy * w + sx, sx, sy)]
    closed = set()
    while open_heap:
        _, _, _, x, y = heapq.heappop(open_heap)
        if (x, y) in closed:
            continue
        if (x, y) == goal:
            ns, nd = counts[goal]
            path = [goal]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            return ns + nd * SQRT2, path
        closed.add((x, y))
        ns, nd = counts[(x, y)]
        for dx, dy in _NEIGHBORS:
            nx, ny = x + dx, y + dy
            if not (0 <= nx < w and 0 <= ny < h_) or not mask[ny][nx] or (nx, ny) in closed:
                continue
            if dx and dy and not (mask[y][nx] and mask[ny][x]):
                continue
            cand = (ns + 1, nd) if not (dx and dy) else (ns, nd + 1)
            g = cand[0] + cand[1] * SQRT2
            old = counts.get((nx, ny))
            if old is not None and old[0] + old[1] * SQRT2 <= g:
                continue
            counts[(nx, ny)] = cand
            parent[(nx, ny)] = (x, y)
            hh = _octile(gx - nx, gy - ny)
            heapq.heappush(open_heap, (g + hh, hh, ny * w + nx, nx, ny))
    return None


def geodesic(env: OccupancyEnvironment, frm: Sequence[float], to: Sequence[float]) -> GeodesicResult:
    """Shortest 8-connected cell-center path from ``frm`` to ``to``."""
    if not is_navigable(env, frm):
        raise FromNotNavigable(f"{tuple(frm)} is not navigable")
    a = anchor_cell(env, frm)
    b = anchor_cell(env, to)
    if a is None or b is None:
        return UNREACHABLE
    found = _astar(env.navigable_centers, a, b)
    if found is None:
        return UNREACHABLE
    cells, path = found
    cs = env.cell_size
    return GeodesicResult(cells * cs, tuple(((ix + 0.5) * cs, (iy + 0.5) * cs) for ix, iy in path))


def polyline_length(path: Sequence[Sequence[float]]) -> float:
    return sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(path, path[1:]))


# ---------------------------------------------------------------- distance fields


def _grid_graph(env: OccupancyEnvironment, mask: np.ndarray, comfort: np.ndarray | None):
    h, w = mask.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [], [], []
    cs = env.cell_size
    for dx, dy in _NEIGHBORS:
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        ys2 = slice(max(0, dy), h - max(0, -dy))
        xs2 = slice(max(0, dx), w - max(0, -dx))
        ok = mask[ys, xs] & mask[ys2, xs2]
        if dx and dy:
            # both orthogonal neighbours must be navigable
            ok &= mask[ys, xs2] & mask[ys2, xs]
        length = cs * (SQRT2 if dx and dy else 1.0)
        weight = np.full(ok.shape, length)
        if comfort is not None:
            tight = ~(comfort[ys, xs] & comfort[ys2, xs2])
            weight = np.where(tight, length * CLEARANCE_PENALTY, length)
        rows.append(idx[ys, xs][ok])
        cols.append(idx[ys2, xs2][ok])
        vals.append(weight[ok])
    n = h * w
    return coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()


@dataclass(frozen=True)
class DistanceField:
    """Single-target shortest-path tree over cell centers."""

    target_cell: tuple[int, int]
    distance: np.ndarray  # (height, width); inf where unreachable
    next_cell: np.ndarray  # flat index of the next cell toward the target, -9999 if none
    width: int

    def value(self, cell: tuple[int, int]) -> float:
        return float(self.distance[cell[1], cell[0]])

    def cells_to_target(self, cell: tuple[int, int]):
        """Yield cells along the tree path from ``cell`` to the target (inclusive)."""
        ix, iy = cell
        yield ix, iy
        flat = iy * self.width + ix
        target = self.target_cell[1] * self.width + self.target_cell[0]
        while flat != target:
            flat = int(self.next_cell.flat[flat])
            if flat < 0:
                return
            yield flat % self.width, flat // self.width


def distance_field(env: OccupancyEnvironment, target_cell: tuple[int, int], clearance: bool = False) -> DistanceField:
    """Cached field of geodesic distances to ``target_cell``.

    With ``clearance`` the edge weights are inflated near obstacles; the
    values are then plan costs rather than meters.
    """
    memo = env._memo.setdefault("fields", {})
    key = (target_cell, clearance)
    if key in memo:
        return memo[key]
    gkey = ("grid_graph", clearance)
    if gkey not in env._memo:
        comfort = center_mask(env, env.agent_radius + CLEARANCE_MARGIN) if clearance else None
        env._memo[gkey] = _grid_graph(env, env.navigable_centers, comfort)
    graph = env._memo[gkey]
    w = env.width
    flat = target_cell[1] * w + target_cell[0]
    # the neighbour relation is symmetric, so distances *from* the target are distances *to* it
    dist, pred = dijkstra(graph, directed=True, indices=flat, return_predecessors=True)
    field = DistanceField(target_cell, dist.reshape(env.height, w), pred.reshape(env.height, w), w)
    if len(memo) >= _FIELD_CACHE_SIZE:
        memo.pop(next(iter(memo)))
    memo[key] = field
    return field


def geodesic_distance(env: OccupancyEnvironment, p: Sequence[float], target: Sequence[float]) -> float:
    """Geodesic meters from ``p`` to ``target`` via the cached field; inf if unreachable."""
    b = anchor_cell(env, target)
    a = anchor_cell(env, p)
    if a is None or b is None:
        return math.inf
    return distance_field(env, b).value(a)


# ---------------------------------------------------------------- follower


def _angle_diff(target_deg: float, heading: float) -> float:
    return (target_deg - heading + 180.0) % 360.0 - 180.0


def _clear_line(env: OccupancyEnvironment, comfort: np.ndarray, a: Sequence[float], b: Sequence[float]) -> bool:
    """Every sample of the segment lies in a cell whose center has clearance."""
    cs = env.cell_size
    n = max(1, int(math.ceil(math.hypot(b[0] - a[0], b[1] - a[1]) / (cs / 2))))
    for k in range(n + 1):
        ix, iy = env.cell_of(a[0] + (b[0] - a[0]) * k / n, a[1] + (b[1] - a[1]) * k / n)
        if not (env.in_bounds(ix, iy) and comfort[iy, ix]):
            return False
    return True


def follower_action(env: OccupancyEnvironment, pose: Pose, target: Sequence[float]) -> Action | None:
    """One greedy step toward ``target``: turn toward the carrot or move forward.

    The carrot is the first path point at least ``CARROT_LOOKAHEAD`` away,
    advanced to the farthest later path point (up to ``SIGHT_LIMIT``) that is
    in clear line of sight; this irons out grid staircases. Returns None when
    the target is unreachable from ``pose``.
    """
    tcell = anchor_cell(env, target)
    if tcell is None:
        return None
    field = distance_field(env, tcell, clearance=True)
    cell = anchor_cell(env, pose.position)
    if cell is None or not math.isfinite(field.value(cell)):
        return None
    cs = env.cell_size
    comfort = center_mask(env, env.agent_radius + CLEARANCE_MARGIN)
    here = (pose.x, pose.y)
    carrot = None
    for ix, iy in field.cells_to_target(cell):
        c = ((ix + 0.5) * cs, (iy + 0.5) * cs)
        d = math.hypot(c[0] - pose.x, c[1] - pose.y)
        if carrot is None:
            if d >= CARROT_LOOKAHEAD:
                carrot = c
            continue
        if d > SIGHT_LIMIT or not _clear_line(env, comfort, here, c):
            break
        carrot = c
    if carrot is None:
        carrot = (target[0], target[1])
    bearing = math.degrees(math.atan2(carrot[1] - pose.y, carrot[0] - pose.x))
    diff = _angle_diff(bearing, pose.heading)
    if abs(diff) > TURN_DEADBAND:
        return Action.TURN_LEFT if diff > 0 else Action.TURN_RIGHT
    return Action.FORWARD


def follower_cap(distance: float) -> int:
    return int(math.ceil(2 * (distance / FORWARD_METERS + 360 / TURN_DEGREES)))


def follow_leg(
    env: OccupancyEnvironment, start: Pose, target: Sequence[float], goal_radius: float
) -> tuple[list[Action], Pose]:
    """Follower actions from ``start`` until within ``goal_radius`` of ``target``, plus the end pose."""
    dist = geodesic_distance(env, start.position, target)
    if not math.isfinite(dist):
        raise Unreachable(f"{tuple(target)} unreachable from {start}")
    cap = follower_cap(dist)
    state = SimState(start)
    actions: list[Action] = []
    while horizontal_distance(state.pose.position, target) > goal_radius + 1e-9:
        if len(actions) >= cap:
            raise FollowerStuck(f"no arrival within {cap} actions")
        a = follower_action(env, state.pose, target)
        if a is None:
            raise Unreachable(f"{tuple(target)} unreachable from {state.pose}")
        state = step(env, state, a)
        actions.append(a)
    return actions, state.pose


def follow_path(env: OccupancyEnvironment, start: Pose, target: Sequence[float], goal_radius: float) -> list[Action]:
    return follow_leg(env, start, target, goal_radius)[0]


def heading_toward(a: Sequence[float], b: Sequence[float]) -> int:
    """Bearing from ``a`` to ``b`` rounded to the nearest multiple of 15 degrees."""
    if horizontal_distance(a, b) == 0:
        return 0
    deg = math.degrees(math.atan2(b[1] - a[1], b[0] - a[0]))
    return int(round(deg / TURN_DEGREES)) * TURN_DEGREES % 360


def build_legs(
    env: OccupancyEnvironment, waypoints: Sequence[Sequence[float]], heading: int = 0
) -> tuple[list[list[Action]], list[Pose]]:
    """Chained follower legs through ``waypoints``; returns per-leg actions and end poses."""
    pose = Pose(waypoints[0][0], waypoints[0][1], waypoints[0][2], heading)
    legs, ends = [], []
    for i, target in enumerate(waypoints[1:]):
        if horizontal_distance(pose.position, target) <= WAYPOINT_RADIUS + 1e-9:
            legs.append([])
        else:
            try:
                acts, pose = follow_leg(env, pose, target, WAYPOINT_RADIUS)
            except (Unreachable, FollowerStuck) as exc:
                raise LegUnreachable(i, str(exc)) from exc
            legs.append(acts)
        ends.append(pose)
    return legs, ends


def build_reference_actions(
    env: OccupancyEnvironment, waypoints: Sequence[Sequence[float]], heading: int = 0
) -> list[Action]:
    """Concatenated follower legs between consecutive waypoints, terminated by STOP."""
    if len(waypoints) < 2:
        raise ValueError("need at least two waypoints")
    legs, _ = build_legs(env, waypoints, heading)
    out = [a for leg in legs for a in leg]
    out.append(Action.STOP)
    return out
