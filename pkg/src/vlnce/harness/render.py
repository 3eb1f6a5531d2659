"""Top-down maps of an environment with a reference path and an agent trajectory.

Two outputs: a binary PGM (P5) image with one square block of pixels per
cell, and a plain-text map with one character per cell. Row order follows
the environment file (row 0 first).
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from vlnce.world import CellKind, OccupancyEnvironment

SHADES = {"free": 255, "obstacle": 0, "hole": 90, "reference": 170, "trajectory": 40, "start": 120, "goal": 120}
GLYPHS = {"free": ".", "obstacle": "#", "hole": " ", "reference": "o", "trajectory": "*", "both": "@", "start": "S", "goal": "G"}


def _raster(env: OccupancyEnvironment, points: Sequence[Sequence[float]] | None) -> set[tuple[int, int]]:
    """Cells touched by the polyline through ``points`` (sampled at half a cell)."""
    cells: set[tuple[int, int]] = set()
    if not points:
        return cells
    pts = np.asarray([p[:2] for p in points], dtype=float)
    step = env.cell_size / 2
    samples = [pts[0]]
    for a, b in zip(pts, pts[1:]):
        n = max(1, int(np.ceil(np.hypot(*(b - a)) / step)))
        samples.extend(a + (b - a) * (k / n) for k in range(1, n + 1))
    for x, y in samples:
        c = env.cell_of(x, y)
        if env.in_bounds(*c):
            cells.add(c)
    return cells


def _layers(env, reference, trajectory):
    ref = _raster(env, reference)
    traj = _raster(env, trajectory)
    marks = {}
    if reference:
        marks[env.cell_of(*reference[-1][:2])] = "goal"
    start_src = trajectory or reference
    if start_src:
        marks[env.cell_of(*start_src[0][:2])] = "start"
    return ref, traj, marks


def ascii_map(
    env: OccupancyEnvironment,
    reference: Sequence[Sequence[float]] | None = None,
    trajectory: Sequence[Sequence[float]] | None = None,
) -> str:
    ref, traj, marks = _layers(env, reference, trajectory)
    names = {CellKind.FREE: "free", CellKind.OBSTACLE: "obstacle", CellKind.HOLE: "hole"}
    h, w = env.kinds.shape
    rows = []
    for iy in range(h):
        row = []
        for ix in range(w):
            c = (ix, iy)
            if c in marks:
                key = marks[c]
            elif c in ref and c in traj:
                key = "both"
            elif c in traj:
                key = "trajectory"
            elif c in ref:
                key = "reference"
            else:
                key = names[CellKind(int(env.kinds[iy, ix]))]
            row.append(GLYPHS[key])
        rows.append("".join(row))
    return "\n".join(rows) + "\n"


def pgm_image(
    env: OccupancyEnvironment,
    reference: Sequence[Sequence[float]] | None = None,
    trajectory: Sequence[Sequence[float]] | None = None,
    scale: int = 2,
) -> bytes:
    ref, traj, marks = _layers(env, reference, trajectory)
    img = np.full(env.kinds.shape, SHADES["free"], dtype=np.uint8)
    img[env.kinds == CellKind.OBSTACLE] = SHADES["obstacle"]
    img[env.kinds == CellKind.HOLE] = SHADES["hole"]
    for layer, shade in ((ref, SHADES["reference"]), (traj, SHADES["trajectory"])):
        for ix, iy in layer:
            img[iy, ix] = shade
    for (ix, iy), key in marks.items():
        if env.in_bounds(ix, iy):
            img[iy, ix] = SHADES[key]
    img = np.kron(img, np.ones((scale, scale), dtype=np.uint8))
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode() + img.tobytes()


def write_map(path: str | Path, env: OccupancyEnvironment, reference=None, trajectory=None, scale: int = 2) -> None:
    """PGM when ``path`` ends in ``.pgm``, text map otherwise."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        path.write_bytes(pgm_image(env, reference, trajectory, scale))
    else:
        path.write_text(ascii_map(env, reference, trajectory))
