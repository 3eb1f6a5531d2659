"""Low-level action simulation with collision checking.

FORWARD moves 0.25m along the heading, TURN_LEFT / TURN_RIGHT rotate by 15
degrees, STOP ends the episode. A blocked FORWARD advances to the last
collision-free sample along the motion segment (no wall sliding).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Any, Protocol, Sequence

import numpy as np

from vlnce.errors import ParseError, StartNotNavigable, SteppedAfterDone
from vlnce.world import (
    FORWARD_METERS,
    TURN_DEGREES,
    Action,
    Episode,
    OccupancyEnvironment,
    Pose,
    Trajectory,
    is_navigable,
)

if TYPE_CHECKING:
    from vlnce.features import FeatureProvider

DEFAULT_STEP_LIMIT = 500
SAMPLE_INTERVAL = 0.01
_N_SAMPLES = int(round(FORWARD_METERS / SAMPLE_INTERVAL))

# rounded so that axis-aligned headings move exactly along one axis
HEADING_VECTORS = {
    h: (round(math.cos(math.radians(h)), 15), round(math.sin(math.radians(h)), 15))
    for h in range(0, 360, TURN_DEGREES)
}


@dataclass(frozen=True)
class SimState:
    pose: Pose
    steps_taken: int = 0
    done: bool = False
    last_collided: bool = False


def _advance(env: OccupancyEnvironment, pose: Pose) -> tuple[Pose, bool]:
    if pose.heading in HEADING_VECTORS:
        c, s = HEADING_VECTORS[pose.heading]
    else:
        c, s = math.cos(math.radians(pose.heading)), math.sin(math.radians(pose.heading))
    best = None
    for k in range(1, _N_SAMPLES + 1):
        d = FORWARD_METERS if k == _N_SAMPLES else k * SAMPLE_INTERVAL
        x, y = pose.x + d * c, pose.y + d * s
        z = env.floor_at(x, y)
        if z is None or not is_navigable(env, (x, y, z)):
            break
        best = (x, y, z)
    else:
        return Pose(best[0], best[1], best[2], pose.heading), False
    if best is None:
        return pose, True
    return Pose(best[0], best[1], best[2], pose.heading), True


def step(env: OccupancyEnvironment, s: SimState, a: Action, step_limit: int | None = None) -> SimState:
    """Apply one action. ``done`` is also set once ``step_limit`` actions were taken."""
    if s.done:
        raise SteppedAfterDone(f"action {Action(a).name} after episode end")
    a = Action(a)
    pose = s.pose
    collided = False
    done = False
    if a == Action.FORWARD:
        pose, collided = _advance(env, pose)
    elif a == Action.TURN_LEFT:
        pose = replace(pose, heading=(pose.heading + TURN_DEGREES) % 360)
    elif a == Action.TURN_RIGHT:
        pose = replace(pose, heading=(pose.heading - TURN_DEGREES) % 360)
    else:
        done = True
    steps = s.steps_taken + 1
    if step_limit is not None and steps >= step_limit:
        done = True
    return SimState(pose, steps, done, collided)


def run_actions(
    env: OccupancyEnvironment,
    start: Pose,
    actions: Sequence[Action],
    step_limit: int = DEFAULT_STEP_LIMIT,
) -> Trajectory:
    if not is_navigable(env, start.position):
        raise StartNotNavigable(f"start pose {start} is not navigable")
    state = SimState(start)
    traj = Trajectory([start])
    for a in actions:
        state = step(env, state, a, step_limit)
        traj.poses.append(state.pose)
        traj.actions.append(Action(a))
        traj.collided.append(state.last_collided)
        if state.done:
            break
    return traj


# ---------------------------------------------------------------- policy rollouts


@dataclass
class Observation:
    """What a policy sees at one step.

    ``pose`` is privileged simulator state; only oracle policies may read it.
    Visual/depth features are computed on first access.
    """

    episode: Episode
    pose: Pose
    step: int
    provider: "FeatureProvider | None" = None

    @cached_property
    def visual(self) -> np.ndarray:
        return self.provider.visual(self.pose)

    @cached_property
    def depth(self) -> np.ndarray:
        return self.provider.depth(self.pose)


class Policy(Protocol):
    def reset(self, env: OccupancyEnvironment, episode: Episode) -> Any: ...

    def act(
        self, obs: Observation, prev_action: Action | None, state: Any, rng: np.random.Generator
    ) -> tuple[Action, Any]: ...


def run_policy(
    env: OccupancyEnvironment,
    episode: Episode,
    policy: Policy,
    step_limit: int = DEFAULT_STEP_LIMIT,
    seed: int = 0,
    provider: "FeatureProvider | None" = None,
) -> Trajectory:
    if provider is None:
        from vlnce.features import FeatureProvider

        provider = FeatureProvider(env)
    if not is_navigable(env, episode.start.position):
        raise StartNotNavigable(f"episode {episode.id} start is not navigable")
    rng = np.random.default_rng(seed)
    state = SimState(episode.start)
    pstate = policy.reset(env, episode)
    traj = Trajectory([episode.start])
    prev = None
    while not state.done:
        obs = Observation(episode, state.pose, state.steps_taken, provider)
        action, pstate = policy.act(obs, prev, pstate, rng)
        state = step(env, state, action, step_limit)
        traj.poses.append(state.pose)
        traj.actions.append(Action(action))
        traj.collided.append(state.last_collided)
        prev = Action(action)
    return traj


# ---------------------------------------------------------------- trajectory files


def format_trajectory(traj: Trajectory, episode_id: str, env_hash: str) -> str:
    lines = [f"# episode {episode_id} env {env_hash}"]
    for t, pose in enumerate(traj.poses):
        if t < len(traj.actions):
            act, col = traj.actions[t].code, str(int(traj.collided[t]))
        else:
            act, col = "-", "-"
        lines.append(f"{t} {act} {pose.x!r} {pose.y!r} {pose.z!r} {pose.heading} {col}")
    return "\n".join(lines) + "\n"


def parse_trajectory(text: str, path: str | None = None) -> tuple[str, str, Trajectory]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# episode "):
        raise ParseError("missing '# episode <id> env <hash>' header", 1, path)
    head = lines[0].split()
    if len(head) != 5 or head[3] != "env":
        raise ParseError("malformed header", 1, path)
    episode_id, env_hash = head[2], head[4]
    traj = Trajectory([])
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 7:
            raise ParseError("expected 't action x y z heading collided'", lineno, path)
        try:
            if int(parts[0]) != len(traj.poses):
                raise ParseError("non-consecutive step index", lineno, path)
            traj.poses.append(Pose(float(parts[2]), float(parts[3]), float(parts[4]), int(parts[5])))
            if parts[1] != "-":
                traj.actions.append(Action.parse(parts[1]))
                traj.collided.append(parts[6] == "1")
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    return episode_id, env_hash, traj


def write_trajectory(path: str | Path, traj: Trajectory, episode_id: str, env_hash: str) -> None:
    Path(path).write_text(format_trajectory(traj, episode_id, env_hash))


def read_trajectory(path: str | Path) -> tuple[str, str, Trajectory]:
    path = Path(path)
    return parse_trajectory(path.read_text(), str(path))
