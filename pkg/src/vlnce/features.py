"""Deterministic stand-ins for the visual, depth and word-embedding encoders.

Features are pseudo-random vectors seeded by a hash of (seed, environment,
pose), so the same pose always yields the same observation.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from vlnce.attention import FeatureSet, ModelDims
from vlnce.world import OccupancyEnvironment, Pose


def _rng(*key) -> np.random.Generator:
    digest = hashlib.blake2b("|".join(str(k) for k in key).encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


class FeatureProvider:
    def __init__(self, env: OccupancyEnvironment, seed: int = 0, dims: ModelDims = ModelDims()):
        self.env_key = env.digest
        self.seed = seed
        self.dims = dims

    def _pose_key(self, pose: Pose):
        return (self.seed, self.env_key, f"{pose.x:.4f}", f"{pose.y:.4f}", pose.heading)

    def visual(self, pose: Pose) -> np.ndarray:
        return _rng("rgb", *self._pose_key(pose)).normal(size=(self.dims.visual_cells, self.dims.visual))

    def depth(self, pose: Pose) -> np.ndarray:
        return _rng("depth", *self._pose_key(pose)).normal(size=(self.dims.depth_cells, self.dims.depth))

    def words(self, tokens: Sequence[int]) -> np.ndarray:
        """Per-token embedding vectors (an empty instruction becomes one padding token)."""
        toks = list(tokens) or [0]
        return np.stack([_rng("word", self.seed, int(t)).normal(size=self.dims.word) for t in toks])

    def feature_set(self, pose: Pose, instruction_states: np.ndarray) -> FeatureSet:
        return FeatureSet(self.visual(pose), self.depth(pose), instruction_states)
