"""Training-signal generators and DAgger data collection.

Nothing here trains a network: the output is labelled rollouts and per-step
records (label, loss weight, progress target) for an external learner.
Reference learner settings: Adam, learning rate 2.5e-4, batches of 5
trajectories, 4 epochs over the aggregate after each DAgger round.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from vlnce.features import FeatureProvider
from vlnce.harness.policies import OraclePolicy
from vlnce.simulator import DEFAULT_STEP_LIMIT, Observation, Policy, SimState, run_actions, step
from vlnce.world import Action, Episode, OccupancyEnvironment, Pose, Trajectory

INFLECTION_COEFFICIENT = 3.2
DAGGER_DECAY = 0.75
PER_ROUND_DEFAULT = 100


def inflection_weights(actions: Sequence[Action], coefficient: float = INFLECTION_COEFFICIENT) -> list[float]:
    """``coefficient`` where the action differs from the previous one (and at t=0), else 1."""
    if not len(actions):
        raise ValueError("actions must be non-empty")
    if coefficient < 1:
        raise ValueError("coefficient must be >= 1")
    return [coefficient if t == 0 or actions[t] != actions[t - 1] else 1.0 for t in range(len(actions))]


def inflection_frequency(sequences: Sequence[Sequence[Action]]) -> float:
    """Fraction of time steps that are inflections, pooled over all sequences."""
    total = sum(len(s) for s in sequences)
    if total == 0:
        raise ValueError("no time steps")
    hits = sum(sum(1 for t in range(len(s)) if t == 0 or s[t] != s[t - 1]) for s in sequences)
    return hits / total


def progress_targets(reference_actions: Sequence[Action]) -> list[float]:
    n = len(reference_actions)
    if n == 0:
        raise ValueError("reference_actions must be non-empty")
    return [(t + 1) / n for t in range(n)]


class DaggerMode(str, Enum):
    STANDARD = "standard"
    FINETUNE = "finetune"


def dagger_beta(round_index: int, mode: DaggerMode = DaggerMode.STANDARD) -> float:
    """Probability of executing the oracle action in round ``round_index``."""
    exponent = round_index + (1 if DaggerMode(mode) == DaggerMode.FINETUNE else 0)
    return DAGGER_DECAY**exponent


@dataclass
class Rollout:
    episode_id: str
    trajectory: Trajectory
    oracle_actions: list[Action]  # the label at every step
    executed_oracle: list[bool]  # whether the executed action came from the oracle coin flip
    rollout_index: int = 0


@dataclass
class DaggerRound:
    round_index: int
    beta: float
    collected: list[Rollout]

    @property
    def steps(self) -> int:
        return sum(len(r.oracle_actions) for r in self.collected)


@dataclass
class DaggerDataset:
    """Append-only aggregate of all rounds collected so far."""

    rounds: list[DaggerRound] = field(default_factory=list)

    def add(self, rnd: DaggerRound) -> None:
        if any(r.round_index == rnd.round_index for r in self.rounds):
            raise ValueError(f"round {rnd.round_index} already collected")
        self.rounds.append(rnd)
        self.rounds.sort(key=lambda r: r.round_index)

    def __len__(self) -> int:
        return sum(len(r.collected) for r in self.rounds)

    def rollouts(self):
        for rnd in self.rounds:
            for ro in sorted(rnd.collected, key=lambda r: (r.episode_id, r.rollout_index)):
                yield rnd.round_index, ro


def _seed_for(seed: int, round_index: int, k: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, round_index, k])


def mixed_rollout(
    env: OccupancyEnvironment,
    episode: Episode,
    policy: Policy,
    beta: float,
    seed_seq: np.random.SeedSequence,
    step_limit: int = DEFAULT_STEP_LIMIT,
    provider: FeatureProvider | None = None,
) -> Rollout:
    """Run one episode executing the oracle action with probability ``beta`` per step.

    Both the oracle and the policy are queried at every step so each keeps a
    consistent recurrent state; the oracle action is always the label.
    """
    coin_ss, policy_ss = seed_seq.spawn(2)
    coin = np.random.default_rng(coin_ss)
    prng = np.random.default_rng(policy_ss)
    provider = provider or FeatureProvider(env)
    oracle = OraclePolicy()
    ostate = oracle.reset(env, episode)
    pstate = policy.reset(env, episode)
    state = SimState(episode.start)
    traj = Trajectory([episode.start])
    labels, from_oracle = [], []
    prev = None
    while not state.done:
        obs = Observation(episode, state.pose, state.steps_taken, provider)
        a_oracle, ostate = oracle.act(obs, prev, ostate, None)
        a_policy, pstate = policy.act(obs, prev, pstate, prng)
        use_oracle = bool(coin.random() < beta)
        a = a_oracle if use_oracle else Action(a_policy)
        state = step(env, state, a, step_limit)
        traj.poses.append(state.pose)
        traj.actions.append(a)
        traj.collided.append(state.last_collided)
        labels.append(a_oracle)
        from_oracle.append(use_oracle)
        prev = a
    return Rollout(episode.id, traj, labels, from_oracle)


def dagger_collect(
    env: OccupancyEnvironment,
    episodes: Sequence[Episode],
    policy: Policy,
    round_index: int,
    per_round: int = PER_ROUND_DEFAULT,
    mode: DaggerMode = DaggerMode.STANDARD,
    step_limit: int = DEFAULT_STEP_LIMIT,
    seed: int = 0,
    dataset: DaggerDataset | None = None,
    threads: int = 1,
) -> DaggerRound:
    """Collect ``per_round`` mixed rollouts, cycling through ``episodes`` in order.

    When ``dataset`` is given the new round is appended to it.
    """
    if per_round < 1:
        raise ValueError("per_round must be >= 1")
    if not episodes:
        raise ValueError("no episodes")
    beta = dagger_beta(round_index, mode)
    provider = FeatureProvider(env)

    def work(k: int) -> Rollout:
        ep = episodes[k % len(episodes)]
        ro = mixed_rollout(env, ep, policy, beta, _seed_for(seed, round_index, k), step_limit, provider)
        ro.rollout_index = k
        return ro

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            collected = list(pool.map(work, range(per_round)))
    else:
        collected = [work(k) for k in range(per_round)]
    rnd = DaggerRound(round_index, beta, collected)
    if dataset is not None:
        dataset.add(rnd)
    return rnd


# ---------------------------------------------------------------- record files


@dataclass(frozen=True)
class TrainingRecord:
    episode_id: str
    step: int
    pose: Pose
    label: Action
    weight: float
    progress: float


def rollout_records(ro: Rollout, coefficient: float = INFLECTION_COEFFICIENT) -> list[TrainingRecord]:
    weights = inflection_weights(ro.oracle_actions, coefficient)
    prog = progress_targets(ro.oracle_actions)
    return [
        TrainingRecord(ro.episode_id, t, ro.trajectory.poses[t], lab, w, p)
        for t, (lab, w, p) in enumerate(zip(ro.oracle_actions, weights, prog))
    ]


def reference_records(
    env: OccupancyEnvironment, episode: Episode, coefficient: float = INFLECTION_COEFFICIENT
) -> list[TrainingRecord]:
    """Teacher-forcing records along the episode's reference action path."""
    acts = list(episode.reference_actions)
    poses = run_actions(env, episode.start, acts, step_limit=len(acts) + 1).poses
    weights = inflection_weights(acts, coefficient)
    prog = progress_targets(acts)
    return [
        TrainingRecord(episode.id, t, poses[t], a, w, p)
        for t, (a, w, p) in enumerate(zip(acts, weights, prog))
    ]


def format_records(records: Sequence[TrainingRecord]) -> str:
    lines = ["# episode_id step x y z heading label weight progress"]
    for r in records:
        p = r.pose
        lines.append(
            f"{r.episode_id} {r.step} {p.x!r} {p.y!r} {p.z!r} {p.heading} {r.label.code} {r.weight!r} {r.progress!r}"
        )
    return "\n".join(lines) + "\n"


def format_dagger(dataset: DaggerDataset, coefficient: float = INFLECTION_COEFFICIENT) -> str:
    lines = ["# round episode_id rollout step x y z heading executed label from_oracle weight progress"]
    for rnd_idx, ro in dataset.rollouts():
        for rec, executed, from_oracle in zip(rollout_records(ro, coefficient), ro.trajectory.actions, ro.executed_oracle):
            p = rec.pose
            lines.append(
                f"{rnd_idx} {ro.episode_id} {ro.rollout_index} {rec.step} {p.x!r} {p.y!r} {p.z!r} {p.heading} "
                f"{executed.code} {rec.label.code} {int(from_oracle)} {rec.weight!r} {rec.progress!r}"
            )
    return "\n".join(lines) + "\n"
