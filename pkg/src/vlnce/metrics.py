"""Navigation metrics: TL, NE, OS, SR, SPL, DTW and nDTW."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from typing import Sequence

import numpy as np

from vlnce.errors import EmptyDataset, NonpositiveReference
from vlnce.pathfinding import anchor_cell, distance_field
from vlnce.world import Episode, OccupancyEnvironment, Trajectory, horizontal_distance

SUCCESS_RADIUS = 3.0

# table column order: TL NE nDTW OS SR SPL
COLUMNS = ("tl", "ne", "ndtw", "os", "sr", "spl")
COLUMN_TITLES = {"tl": "TL", "ne": "NE", "ndtw": "nDTW", "os": "OS", "sr": "SR", "spl": "SPL"}


@dataclass(frozen=True)
class EpisodeMetrics:
    tl: float
    ne: float
    ndtw: float
    os: int
    sr: int
    spl: float
    dtw: float
    ne_euclid: float


def path_length(traj: Trajectory) -> float:
    return sum(horizontal_distance(a.position, b.position) for a, b in zip(traj.poses, traj.poses[1:]))


def _goal_distances(env: OccupancyEnvironment, positions, goal) -> list[float]:
    sentinel = env.diameter_bound
    gcell = anchor_cell(env, goal)
    if gcell is None:
        return [sentinel] * len(positions)
    field = distance_field(env, gcell)
    out = []
    for p in positions:
        cell = anchor_cell(env, p)
        d = field.value(cell) if cell is not None else math.inf
        out.append(d if math.isfinite(d) else sentinel)
    return out


def nav_error(env: OccupancyEnvironment, traj: Trajectory, goal: Sequence[float]) -> float:
    """Geodesic distance from the final pose to the goal (a sentinel if unreachable)."""
    return _goal_distances(env, [traj.final_pose.position], goal)[0]


def success_and_oracle(
    env: OccupancyEnvironment, traj: Trajectory, goal: Sequence[float], radius: float = SUCCESS_RADIUS
) -> tuple[int, int]:
    dists = _goal_distances(env, [p.position for p in traj.poses], goal)
    sr = int(traj.stopped and dists[-1] <= radius)
    os_ = int(min(dists) <= radius)
    return sr, os_


def spl(sr: int, geodesic_reference_length: float, tl: float) -> float:
    if not geodesic_reference_length > 0:
        raise NonpositiveReference(f"reference length {geodesic_reference_length}")
    return sr * geodesic_reference_length / max(tl, geodesic_reference_length)


def dtw(a: Sequence[Sequence[float]], b: Sequence[Sequence[float]]) -> float:
    """Minimal cumulative horizontal-distance alignment cost (match/insert/delete, unweighted)."""
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("dtw needs non-empty sequences")
    pa = np.asarray([(p[0], p[1]) for p in a], dtype=float)
    pb = np.asarray([(p[0], p[1]) for p in b], dtype=float)
    cost = np.hypot(pa[:, None, 0] - pb[None, :, 0], pa[:, None, 1] - pb[None, :, 1])
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = cost[i - 1]
        prev = acc[i - 1]
        cur = acc[i]
        for j in range(1, m + 1):
            cur[j] = row[j - 1] + min(prev[j - 1], prev[j], cur[j - 1])
    return float(acc[n, m])


def ndtw(
    positions: Sequence[Sequence[float]], reference: Sequence[Sequence[float]], radius: float = SUCCESS_RADIUS
) -> tuple[float, float]:
    """Return ``(dtw, ndtw)`` with ``ndtw = exp(-dtw / (len(reference) * radius))``."""
    d = dtw(positions, reference)
    return d, math.exp(-d / (len(reference) * radius))


def evaluate(
    env: OccupancyEnvironment, episode: Episode, traj: Trajectory, radius: float = SUCCESS_RADIUS
) -> EpisodeMetrics:
    positions = [p.position for p in traj.poses]
    dists = _goal_distances(env, positions, episode.goal)
    tl = path_length(traj)
    ne = dists[-1]
    sr = int(traj.stopped and ne <= radius)
    os_ = int(min(dists) <= radius)
    d, nd = ndtw(positions, episode.reference_waypoints, radius)
    return EpisodeMetrics(
        tl=tl,
        ne=ne,
        ndtw=nd,
        os=os_,
        sr=sr,
        spl=spl(sr, episode.geodesic_reference_length, tl),
        dtw=d,
        ne_euclid=horizontal_distance(traj.final_pose.position, episode.goal),
    )


def aggregate(results: Sequence[EpisodeMetrics]) -> dict[str, float]:
    """Unweighted per-column means, keys in table order followed by the auxiliary columns."""
    if not results:
        raise EmptyDataset("no episode metrics to aggregate")
    arr = np.array([astuple(r) for r in results], dtype=float)
    means = dict(zip((f.name for f in fields(EpisodeMetrics)), arr.mean(axis=0).tolist()))
    order = list(COLUMNS) + [k for k in means if k not in COLUMNS]
    return {k: means[k] for k in order}


def format_table(rows: Sequence[tuple[str, EpisodeMetrics]]) -> str:
    """TSV with the table column order, auxiliary columns, and a final MEAN row."""
    extra = ["ne_euclid", "dtw"]
    head = ["episode_id"] + [COLUMN_TITLES[c] for c in COLUMNS] + extra
    lines = ["\t".join(head)]

    def fmt(values: dict) -> list[str]:
        return [f"{values[c]:.4f}" for c in list(COLUMNS) + extra]

    for eid, m in rows:
        vals = {f.name: getattr(m, f.name) for f in fields(EpisodeMetrics)}
        lines.append("\t".join([eid] + fmt(vals)))
    lines.append("\t".join(["MEAN"] + fmt(aggregate([m for _, m in rows]))))
    return "\n".join(lines) + "\n"
