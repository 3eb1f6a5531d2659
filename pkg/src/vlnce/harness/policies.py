"""Baseline and oracle policies.

A policy is any object with ``reset(env, episode) -> state`` and
``act(obs, prev_action, state, rng) -> (action, state)``. State is
episode-local and threaded through by the caller; ``rng`` is the episode's
seeded random stream.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from vlnce.attention import CMAParams, FeatureSet, Seq2SeqParams, cma_step, seq2seq_step
from vlnce.pathfinding import WAYPOINT_RADIUS, follower_action
from vlnce.simulator import Observation
from vlnce.world import TURN_DEGREES, Action, Episode, OccupancyEnvironment, horizontal_distance

# train-split action distribution: forward, left, right, stop
RANDOM_ACTION_PROBS = (0.68, 0.15, 0.15, 0.02)
HANDCRAFTED_FORWARDS = 37
_CUM = np.cumsum(RANDOM_ACTION_PROBS).tolist()
_CUM[-1] = 1.0


def _draw(u: float) -> Action:
    return Action(bisect.bisect_right(_CUM, u))


def _episode_rng(seed: int, episode: Episode) -> np.random.Generator:
    return np.random.default_rng([seed, *episode.id.encode()])


class RandomPolicy:
    """I.i.d. actions from the train-set action distribution."""

    def __init__(self, seed: int | None = None):
        self.seed = seed

    def reset(self, env, episode):
        return _episode_rng(self.seed, episode) if self.seed is not None else None

    def act(self, obs, prev_action, state, rng):
        return _draw((state or rng).random()), state

    @staticmethod
    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` draws as action indices; consumes ``rng`` exactly like ``n`` calls to ``act``."""
        return np.searchsorted(np.asarray(_CUM), rng.random(n), side="right")


def random_policy(seed: int | None = None) -> RandomPolicy:
    return RandomPolicy(seed)


@dataclass
class _HandState:
    rng: Any
    turns: list[Action] | None = None
    forwards_left: int = HANDCRAFTED_FORWARDS


class HandcraftedPolicy:
    """Turn to a uniformly random heading, walk 37 steps forward, stop."""

    def __init__(self, seed: int | None = None):
        self.seed = seed

    def reset(self, env, episode):
        return _HandState(_episode_rng(self.seed, episode) if self.seed is not None else None)

    def act(self, obs, prev_action, state: _HandState, rng):
        if state.turns is None:
            target = int((state.rng or rng).integers(0, 360 // TURN_DEGREES)) * TURN_DEGREES
            diff = (target - obs.pose.heading) % 360
            if diff <= 180:
                state.turns = [Action.TURN_LEFT] * (diff // TURN_DEGREES)
            else:
                state.turns = [Action.TURN_RIGHT] * ((360 - diff) // TURN_DEGREES)
        if state.turns:
            return state.turns.pop(0), state
        if state.forwards_left > 0:
            state.forwards_left -= 1
            return Action.FORWARD, state
        return Action.STOP, state


def handcrafted_policy(seed: int | None = None) -> HandcraftedPolicy:
    return HandcraftedPolicy(seed)


@dataclass
class OracleState:
    env: OccupancyEnvironment
    waypoints: tuple
    index: int = 1
    flagged_steps: list[int] = field(default_factory=list)


class OraclePolicy:
    """Shortest-path follower through the episode's reference waypoints.

    The next action is recomputed from the current pose every step, so the
    oracle stays valid after off-path actions. An unreachable waypoint makes
    it STOP and records the step in ``flagged_steps``.
    """

    def reset(self, env, episode):
        return OracleState(env, tuple(episode.reference_waypoints))

    def act(self, obs: Observation, prev_action, state: OracleState, rng=None):
        pose = obs.pose
        wps = state.waypoints
        if horizontal_distance(pose.position, wps[-1]) <= WAYPOINT_RADIUS + 1e-9:
            return Action.STOP, state
        while state.index < len(wps) and horizontal_distance(pose.position, wps[state.index]) <= WAYPOINT_RADIUS + 1e-9:
            state.index += 1
        if state.index >= len(wps):
            return Action.STOP, state
        a = follower_action(state.env, pose, wps[state.index])
        if a is None:
            state.flagged_steps.append(obs.step)
            return Action.STOP, state
        return a, state


def oracle_policy(episode: Episode | None = None) -> OraclePolicy:
    return OraclePolicy()


class Seq2SeqPolicy:
    """Greedy argmax rollout of the baseline recurrent agent with fixed parameters."""

    def __init__(self, params: Seq2SeqParams | None = None, seed: int = 0):
        self.params = params or Seq2SeqParams.init(seed=seed)

    def reset(self, env, episode):
        return None

    def act(self, obs: Observation, prev_action, state, rng):
        if state is None:
            S = self.params.encode_instruction(obs.provider.words(obs.episode.instruction))
            state = (S, self.params.initial_state())
        S, h = state
        probs, h = seq2seq_step(FeatureSet(obs.visual, obs.depth, S), h, self.params)
        return Action(int(np.argmax(probs))), (S, h)


class CMAPolicy:
    """Greedy argmax rollout of the cross-modal attention agent with fixed parameters."""

    def __init__(self, params: CMAParams | None = None, seed: int = 0):
        self.params = params or CMAParams.init(seed=seed)

    def reset(self, env, episode):
        return None

    def act(self, obs: Observation, prev_action, state, rng):
        if state is None:
            S = self.params.encode_instruction(obs.provider.words(obs.episode.instruction))
            state = (S, self.params.initial_state())
        S, hs = state
        probs, hs = cma_step(FeatureSet(obs.visual, obs.depth, S), prev_action, hs, self.params)
        return Action(int(np.argmax(probs))), (S, hs)


# random/handcrafted draw from the rollout's seeded stream; ``seed`` only
# initializes the parameters of the learned agents
POLICIES = {
    "random": lambda seed: RandomPolicy(),
    "handcrafted": lambda seed: HandcraftedPolicy(),
    "oracle": lambda seed: OraclePolicy(),
    "seq2seq": lambda seed: Seq2SeqPolicy(seed=seed),
    "cma": lambda seed: CMAPolicy(seed=seed),
}


def make_policy(name: str, seed: int = 0):
    try:
        return POLICIES[name](seed)
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
