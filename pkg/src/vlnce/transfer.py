"""Nav-graph trajectory transfer into the continuous environment.

Nodes are projected onto navigable floor by a downward ray, trajectories are
checked leg by leg with the follower, and navigable ones become episodes.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from vlnce.errors import EmptyDataset, FollowerStuck, ParseError, Unreachable, UnknownNodeId
from vlnce.pathfinding import WAYPOINT_RADIUS, follow_leg, geodesic, heading_toward
from vlnce.world import (
    Action,
    Episode,
    NavGraph,
    OccupancyEnvironment,
    Point,
    Pose,
    horizontal_distance,
    nearest_navigable,
)

RAY_LENGTH = 2.0
RAY_INTERVAL = 0.1
MAX_DISPLACEMENT = 0.5
DIRECT_TOLERANCE = 0.05


class NodeStatus(str, Enum):
    DIRECT = "DIRECT"
    ADJUSTED = "ADJUSTED"
    INVALID = "INVALID"


class TrajectoryStatus(str, Enum):
    NAVIGABLE = "NAVIGABLE"
    INVALID_NODE = "INVALID_NODE"
    DISJOINT = "DISJOINT"


@dataclass(frozen=True)
class ProjectionReport:
    node_id: int | None
    status: NodeStatus
    displacement: float
    projected: Point | None
    depth: float | None = None  # ray depth of the chosen hit


def project_node(
    env: OccupancyEnvironment,
    node_pos: Sequence[float],
    node_id: int | None = None,
    ray_interval: float = RAY_INTERVAL,
    ray_length: float = RAY_LENGTH,
    max_disp: float = MAX_DISPLACEMENT,
) -> ProjectionReport:
    """Project a panorama location down onto navigable floor.

    Every ray sample looks for the closest navigable cell center whose floor
    is within half a ray interval of the sample height. The hit with the
    smallest horizontal displacement wins, shallower depth on ties.
    """
    x, y, z = (float(c) for c in node_pos)
    n = int(round(ray_length / ray_interval))
    best = None
    for k in range(n + 1):
        depth = k * ray_interval
        hit = nearest_navigable(env, (x, y, z - depth), max_disp, z_tolerance=ray_interval / 2)
        if hit is None:
            continue
        disp = round(math.hypot(hit[0] - x, hit[1] - y), 12)
        if best is None or (disp, depth) < (best[0], best[1]):
            best = (disp, depth, hit)
    if best is None:
        return ProjectionReport(node_id, NodeStatus.INVALID, math.nan, None)
    disp, depth, hit = best
    projected = (hit[0], hit[1], env.floor_at(hit[0], hit[1]))
    status = NodeStatus.DIRECT if disp <= DIRECT_TOLERANCE else NodeStatus.ADJUSTED
    return ProjectionReport(node_id, status, disp, projected, depth)


@dataclass
class LegResult:
    index: int
    passed: bool
    actions: list[Action]
    final_distance: float
    reason: str = ""


@dataclass
class VerifyResult:
    status: TrajectoryStatus
    legs: list[LegResult]
    heading: int = 0

    @property
    def failing_leg(self) -> int | None:
        for leg in self.legs:
            if not leg.passed:
                return leg.index
        return None

    @property
    def actions(self) -> list[Action]:
        return [a for leg in self.legs for a in leg.actions] + [Action.STOP]


def verify_trajectory(
    env: OccupancyEnvironment, waypoints: Sequence[Sequence[float]], heading: int | None = None
) -> VerifyResult:
    """Chain follower legs through the waypoints; stop at the first leg that fails."""
    if heading is None:
        heading = heading_toward(waypoints[0], waypoints[1]) if len(waypoints) > 1 else 0
    if len(waypoints) < 2:
        return VerifyResult(TrajectoryStatus.NAVIGABLE, [], heading)
    pose = Pose(waypoints[0][0], waypoints[0][1], waypoints[0][2], heading)
    legs = []
    for i, target in enumerate(waypoints[1:]):
        try:
            if horizontal_distance(pose.position, target) <= WAYPOINT_RADIUS + 1e-9:
                acts = []
            else:
                acts, pose = follow_leg(env, pose, target, WAYPOINT_RADIUS)
        except (Unreachable, FollowerStuck) as exc:
            legs.append(LegResult(i, False, [], math.nan, f"{type(exc).__name__}: {exc}"))
            return VerifyResult(TrajectoryStatus.DISJOINT, legs, heading)
        d = horizontal_distance(pose.position, target)
        legs.append(LegResult(i, d <= WAYPOINT_RADIUS + 1e-9, acts, d))
    return VerifyResult(TrajectoryStatus.NAVIGABLE, legs, heading)


@dataclass
class TrajectoryRecord:
    traj_id: str
    status: TrajectoryStatus
    node_ids: tuple[int, ...]
    failing_leg: int | None = None
    invalid_nodes: tuple[int, ...] = ()


@dataclass
class TransferReport:
    trajectories: list[TrajectoryRecord]
    nodes: dict[int, ProjectionReport]
    episodes_emitted: int = 0

    def status_counts(self) -> Counter:
        return Counter(r.status for r in self.trajectories)

    def rate(self, status: TrajectoryStatus) -> float:
        if not self.trajectories:
            return 0.0
        return self.status_counts()[status] / len(self.trajectories)

    def node_rate(self, status: NodeStatus) -> float:
        if not self.nodes:
            return 0.0
        return sum(r.status == status for r in self.nodes.values()) / len(self.nodes)

    def adjusted_displacements(self) -> list[float]:
        return [r.displacement for _, r in sorted(self.nodes.items()) if r.status == NodeStatus.ADJUSTED]

    def merge(self, other: "TransferReport") -> "TransferReport":
        nodes = dict(self.nodes)
        nodes.update(other.nodes)
        return TransferReport(self.trajectories + other.trajectories, nodes, self.episodes_emitted + other.episodes_emitted)

    def format(self) -> str:
        lines = []
        for r in self.trajectories:
            line = f"{r.traj_id} {r.status.value}"
            if r.failing_leg is not None:
                line += f" {r.failing_leg}"
            lines.append(line)
        n = len(self.trajectories)
        lines.append(
            f"# trajectories {n} "
            + " ".join(f"{s.value.lower()} {100 * self.rate(s):.2f}%" for s in TrajectoryStatus)
        )
        adj = self.adjusted_displacements()
        mean_adj = sum(adj) / len(adj) if adj else 0.0
        lines.append(
            f"# nodes {len(self.nodes)} "
            + " ".join(f"{s.value.lower()} {100 * self.node_rate(s):.2f}%" for s in NodeStatus)
            + f" mean_adjusted_displacement {mean_adj:.4f}"
        )
        lines.append(f"# episodes {self.episodes_emitted}")
        return "\n".join(lines) + "\n"


def apply_overrides(graph: NavGraph, overrides: Mapping[int, Sequence[float]] | None) -> NavGraph:
    """Replace node positions by manually corrected ones."""
    if not overrides:
        return graph
    nodes = dict(graph.nodes)
    for nid, pos in overrides.items():
        if nid not in nodes:
            raise UnknownNodeId(nid)
        nodes[nid] = tuple(float(c) for c in pos)
    return NavGraph(nodes, graph.edges)


def _transfer_one(env, traj_id, node_ids, projections, instructions):
    invalid = tuple(n for n in node_ids if projections[n].status == NodeStatus.INVALID)
    if invalid:
        return TrajectoryRecord(traj_id, TrajectoryStatus.INVALID_NODE, tuple(node_ids), None, invalid), []
    waypoints = [projections[n].projected for n in node_ids]
    result = verify_trajectory(env, waypoints)
    if result.status != TrajectoryStatus.NAVIGABLE or result.failing_leg is not None:
        rec = TrajectoryRecord(traj_id, TrajectoryStatus.DISJOINT, tuple(node_ids), result.failing_leg)
        return rec, []
    rec = TrajectoryRecord(traj_id, TrajectoryStatus.NAVIGABLE, tuple(node_ids))
    start = Pose(waypoints[0][0], waypoints[0][1], waypoints[0][2], result.heading)
    goal = waypoints[-1]
    length = geodesic(env, start.position, goal).distance if len(waypoints) > 1 else 0.0
    if not length > 0:
        return rec, []
    actions = tuple(result.actions)
    episodes = [
        Episode(
            id=f"{traj_id}_{k}",
            instruction=tuple(int(t) for t in tokens),
            start=start,
            goal=goal,
            reference_waypoints=tuple(waypoints),
            reference_actions=actions,
            geodesic_reference_length=length,
            node_ids=tuple(node_ids),
        )
        for k, tokens in enumerate(instructions)
    ]
    return rec, episodes


def transfer_dataset(
    env: OccupancyEnvironment,
    graph: NavGraph,
    trajectories: Mapping[str, Sequence[int]] | Sequence[Sequence[int]],
    instructions: Mapping[str, Sequence[Sequence[int]]] | None = None,
    overrides: Mapping[int, Sequence[float]] | None = None,
    threads: int = 1,
) -> tuple[list[Episode], TransferReport]:
    """Project, verify and convert nav-graph trajectories into episodes.

    Trajectories without instructions still get one episode with an empty
    instruction.
    """
    if not isinstance(trajectories, Mapping):
        trajectories = {str(i): t for i, t in enumerate(trajectories)}
    instructions = instructions or {}
    graph = apply_overrides(graph, overrides)
    used = sorted({n for nodes in trajectories.values() for n in nodes})
    for n in used:
        if n not in graph.nodes:
            raise UnknownNodeId(n)
    projections = {n: project_node(env, graph.nodes[n], n) for n in used}

    def work(item):
        tid, nodes = item
        return _transfer_one(env, tid, list(nodes), projections, instructions.get(tid, [()]))

    items = list(trajectories.items())
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]
    records = [r for r, _ in results]
    episodes = [e for _, eps in results for e in eps]
    return episodes, TransferReport(records, projections, len(episodes))


# ---------------------------------------------------------------- statistics


@dataclass
class DatasetStats:
    episodes: int
    mean_actions: float
    action_histogram: dict[int, int]  # bin start (multiples of 10) -> count
    mean_hop: float
    min_hop: float
    max_hop: float
    mean_adjusted_displacement: float | None
    displacement_histogram: dict[float, int] = field(default_factory=dict)  # 0.05m bins

    def format(self) -> str:
        lines = [
            f"episodes {self.episodes}",
            f"mean_actions {self.mean_actions:.2f}",
            f"hop_length mean {self.mean_hop:.3f} min {self.min_hop:.3f} max {self.max_hop:.3f}",
        ]
        if self.mean_adjusted_displacement is not None:
            lines.append(f"mean_adjusted_displacement {self.mean_adjusted_displacement:.4f}")
        lines += [f"actions[{k},{k + 10}) {v}" for k, v in sorted(self.action_histogram.items())]
        lines += [f"displacement[{k:.2f},{k + 0.05:.2f}) {v}" for k, v in sorted(self.displacement_histogram.items())]
        return "\n".join(lines) + "\n"


def dataset_stats(episodes: Sequence[Episode], report: TransferReport | None = None) -> DatasetStats:
    if not episodes:
        raise EmptyDataset("no episodes")
    counts = np.array([len(e.reference_actions) for e in episodes])
    hist = Counter(int(c // 10 * 10) for c in counts)
    hops = [
        horizontal_distance(a, b)
        for e in episodes
        for a, b in zip(e.reference_waypoints, e.reference_waypoints[1:])
    ]
    adj = report.adjusted_displacements() if report is not None else []
    dhist = Counter(round(math.floor(d / 0.05 + 1e-9) * 0.05, 2) for d in adj)
    return DatasetStats(
        episodes=len(episodes),
        mean_actions=float(counts.mean()),
        action_histogram=dict(sorted(hist.items())),
        mean_hop=float(np.mean(hops)) if hops else 0.0,
        min_hop=float(np.min(hops)) if hops else 0.0,
        max_hop=float(np.max(hops)) if hops else 0.0,
        mean_adjusted_displacement=float(np.mean(adj)) if adj else None,
        displacement_histogram=dict(sorted(dhist.items())),
    )


# ---------------------------------------------------------------- input files


def _records(path: str | Path):
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if parts and not parts[0].startswith("#"):
            yield lineno, parts, str(path)


def load_trajectories(path: str | Path) -> dict[str, list[int]]:
    """``traj_id node node ...`` per line."""
    out = {}
    for lineno, parts, p in _records(path):
        if len(parts) < 2:
            raise ParseError("expected 'traj_id node ...'", lineno, p)
        try:
            out[parts[0]] = [int(n) for n in parts[1:]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno, p) from None
    return out


def load_instructions(path: str | Path) -> dict[str, list[tuple[int, ...]]]:
    """``traj_id tok tok ...`` per line; repeated ids add instructions."""
    out: dict[str, list[tuple[int, ...]]] = {}
    for lineno, parts, p in _records(path):
        try:
            out.setdefault(parts[0], []).append(tuple(int(t) for t in parts[1:]))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, p) from None
    return out


def load_overrides(path: str | Path) -> dict[int, Point]:
    """``node_id x y z`` per line."""
    out = {}
    for lineno, parts, p in _records(path):
        if len(parts) != 4:
            raise ParseError("expected 'node_id x y z'", lineno, p)
        try:
            out[int(parts[0])] = (float(parts[1]), float(parts[2]), float(parts[3]))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, p) from None
    return out
