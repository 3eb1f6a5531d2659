"""Environment, graph, episode and trajectory data model.

The continuous world is a 2.5D occupancy grid: every cell is FREE, OBSTACLE
or HOLE and carries a floor height. The agent is a disk of ``agent_radius``
moving in the horizontal plane. Cell ``(ix, iy)`` covers
``[ix*cs, (ix+1)*cs) x [iy*cs, (iy+1)*cs)``; row ``iy`` of an environment
file is the ``iy``-th glyph line after the header.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from vlnce.errors import InvariantError, ParseError

Point = tuple[float, float, float]

FLOOR_TOLERANCE = 0.02
FLOOR_STEP = 0.1
DEFAULT_CELL_SIZE = 0.05
DEFAULT_AGENT_RADIUS = 0.10
DEFAULT_AGENT_HEIGHT = 1.5
TURN_DEGREES = 15
FORWARD_METERS = 0.25
_EPS = 1e-9
_HALF_DIAGONAL = math.sqrt(2) / 2


class Action(IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3

    @property
    def code(self) -> str:
        return _ACTION_CODES[self]

    @classmethod
    def parse(cls, text: str) -> "Action":
        text = text.strip().upper()
        if text in _CODE_ACTIONS:
            return _CODE_ACTIONS[text]
        try:
            return cls[text]
        except KeyError:
            raise ValueError(f"unknown action {text!r}") from None


_ACTION_CODES = {Action.FORWARD: "F", Action.TURN_LEFT: "L", Action.TURN_RIGHT: "R", Action.STOP: "S"}
_CODE_ACTIONS = {v: k for k, v in _ACTION_CODES.items()}


class CellKind(IntEnum):
    FREE = 0
    OBSTACLE = 1
    HOLE = 2


_FREE = int(CellKind.FREE)

@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    heading: int = 0  # degrees, counterclockwise from +x

    def __post_init__(self):
        if not 0 <= self.heading < 360:
            object.__setattr__(self, "heading", self.heading % 360)

    @property
    def position(self) -> Point:
        return (self.x, self.y, self.z)

    def horizontal_distance(self, p: Sequence[float]) -> float:
        return math.hypot(self.x - p[0], self.y - p[1])


def horizontal_distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


class OccupancyEnvironment:
    """Immutable 2.5D occupancy grid.

    ``kinds`` and ``floor_z`` are ``(height, width)`` arrays indexed
    ``[iy, ix]``. Both are made read-only on construction.
    """

    def __init__(
        self,
        kinds: np.ndarray,
        floor_z: np.ndarray | None = None,
        cell_size: float = DEFAULT_CELL_SIZE,
        agent_radius: float = DEFAULT_AGENT_RADIUS,
        agent_height: float = DEFAULT_AGENT_HEIGHT,
    ):
        kinds = np.array(kinds, dtype=np.uint8)
        if floor_z is None:
            floor_z = np.zeros(kinds.shape, dtype=float)
        floor_z = np.array(floor_z, dtype=float)
        if not cell_size > 0:
            raise InvariantError("cell_size > 0", f"got {cell_size}")
        if not agent_radius >= cell_size:
            raise InvariantError("agent_radius >= cell_size", f"{agent_radius} < {cell_size}")
        if kinds.ndim != 2 or kinds.shape[0] == 0 or kinds.shape[1] == 0:
            raise InvariantError("grid is a non-empty 2D array", f"shape {kinds.shape}")
        if floor_z.shape != kinds.shape:
            raise InvariantError("floor_z shape matches cells", f"{floor_z.shape} != {kinds.shape}")
        if kinds.max() > CellKind.HOLE:
            raise InvariantError("cell kind in {FREE, OBSTACLE, HOLE}")
        kinds.flags.writeable = False
        floor_z.flags.writeable = False
        self.kinds = kinds
        self.floor_z = floor_z
        self.cell_size = float(cell_size)
        self.agent_radius = float(agent_radius)
        self.agent_height = float(agent_height)
        self.height, self.width = kinds.shape
        # per-environment memo for derived structures (distance fields etc.)
        self._memo: dict = {}

    def __repr__(self) -> str:
        return (
            f"OccupancyEnvironment({self.width}x{self.height}, cell_size={self.cell_size}, "
            f"agent_radius={self.agent_radius})"
        )

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.cell_size, self.height * self.cell_size

    @property
    def diameter_bound(self) -> float:
        """Upper bound on any geodesic distance in this environment."""
        return self.width * self.height * self.cell_size * math.sqrt(2)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size))

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def cell_center(self, ix: int, iy: int) -> Point:
        cs = self.cell_size
        return ((ix + 0.5) * cs, (iy + 0.5) * cs, float(self.floor_z[iy, ix]))

    def floor_at(self, x: float, y: float) -> float | None:
        ix, iy = self.cell_of(x, y)
        if not self.in_bounds(ix, iy):
            return None
        return float(self.floor_z[iy, ix])

    def footprint_cells(self, x: float, y: float, radius: float | None = None) -> list[tuple[int, int]]:
        """All cell indices (possibly out of bounds) touched by the closed disk at (x, y)."""
        r = self.agent_radius if radius is None else radius
        cs = self.cell_size
        lim = (r + _EPS) ** 2
        cells = []
        for iy in range(int(math.floor((y - r) / cs)) - 1, int(math.floor((y + r) / cs)) + 2):
            dy = max(iy * cs - y, 0.0, y - (iy + 1) * cs)
            if dy * dy > lim:
                continue
            for ix in range(int(math.floor((x - r) / cs)) - 1, int(math.floor((x + r) / cs)) + 2):
                dx = max(ix * cs - x, 0.0, x - (ix + 1) * cs)
                if dx * dx + dy * dy <= lim:
                    cells.append((ix, iy))
        return cells

    @property
    def navigable_centers(self) -> np.ndarray:
        """Boolean ``(height, width)`` mask: is the agent navigable at each cell center."""
        return center_mask(self, self.agent_radius)

    @cached_property
    def digest(self) -> str:
        """Short content hash over the grid arrays and geometry."""
        h = hashlib.sha256()
        h.update(f"{self.cell_size!r} {self.width} {self.height} {self.agent_radius!r}".encode())
        h.update(np.ascontiguousarray(self.kinds, dtype="<u1").tobytes())
        h.update(np.ascontiguousarray(self.floor_z, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def center_offsets(cell_size: float, radius: float) -> tuple[tuple[int, int], ...]:
    """Cell offsets touched by a closed disk of ``radius`` placed at a cell center."""
    cs = cell_size
    k = int(math.ceil(radius / cs)) + 1
    lim = (radius + _EPS) ** 2
    out = []
    for dy in range(-k, k + 1):
        gy = max(abs(dy) * cs - cs / 2, 0.0)
        for dx in range(-k, k + 1):
            gx = max(abs(dx) * cs - cs / 2, 0.0)
            if gx * gx + gy * gy <= lim:
                out.append((dx, dy))
    return tuple(out)


def center_mask(env: OccupancyEnvironment, radius: float) -> np.ndarray:
    """Navigability of every cell center for a disk of ``radius`` (memoized per env)."""
    key = ("center_mask", round(radius, 12))
    if key in env._memo:
        return env._memo[key]
    offsets = center_offsets(env.cell_size, radius)
    k = max(max(abs(dx), abs(dy)) for dx, dy in offsets)
    h, w = env.height, env.width
    free = np.pad(env.kinds == CellKind.FREE, k, constant_values=False)
    fz = np.pad(env.floor_z, k, constant_values=0.0)
    ok = np.ones((h, w), dtype=bool)
    zmax = np.full((h, w), -np.inf)
    zmin = np.full((h, w), np.inf)
    for dx, dy in offsets:
        ok &= free[k + dy : k + dy + h, k + dx : k + dx + w]
        sub = fz[k + dy : k + dy + h, k + dx : k + dx + w]
        np.maximum(zmax, sub, out=zmax)
        np.minimum(zmin, sub, out=zmin)
    ok &= (zmax - zmin) < FLOOR_TOLERANCE
    ok.flags.writeable = False
    env._memo[key] = ok
    return ok


def is_navigable(env: OccupancyEnvironment, p: Sequence[float], radius: float | None = None) -> bool:
    """True iff the agent disk at ``p`` touches only FREE cells of one floor level
    and ``p``'s height sits on that floor."""
    x, y, z = p[0], p[1], p[2]
    ix, iy = env.cell_of(x, y)
    if not env.in_bounds(ix, iy):
        return False
    if abs(z - env.floor_z[iy, ix]) > FLOOR_TOLERANCE + _EPS:
        return False
    r = env.agent_radius if radius is None else radius
    # any disk inside the cell lies within the disk of r + half a diagonal at its center
    if center_mask(env, r + env.cell_size * _HALF_DIAGONAL)[iy, ix]:
        return True
    lo = math.inf
    hi = -math.inf
    kinds = env.kinds
    floor = env.floor_z
    for cx, cy in env.footprint_cells(x, y, r):
        if not env.in_bounds(cx, cy) or kinds[cy, cx] != _FREE:
            return False
        f = floor[cy, cx]
        lo = min(lo, f)
        hi = max(hi, f)
    return hi - lo < FLOOR_TOLERANCE


def nearest_navigable(
    env: OccupancyEnvironment,
    p: Sequence[float],
    max_disp: float,
    z_tolerance: float | None = None,
) -> Point | None:
    """Closest navigable cell center to ``p`` within ``max_disp`` (horizontal).

    A navigable ``p`` is returned unchanged. With ``z_tolerance`` set, only
    cells whose floor lies within that vertical distance of ``p`` qualify.
    Equal distances resolve to the smaller ``(ix, iy)``.
    """
    if not max_disp > 0:
        raise ValueError("max_disp must be positive")
    p = (float(p[0]), float(p[1]), float(p[2]))
    if is_navigable(env, p):
        return p
    cs = env.cell_size
    x, y = p[0], p[1]
    ix0 = max(int(math.floor((x - max_disp) / cs)) - 1, 0)
    ix1 = min(int(math.floor((x + max_disp) / cs)) + 1, env.width - 1)
    iy0 = max(int(math.floor((y - max_disp) / cs)) - 1, 0)
    iy1 = min(int(math.floor((y + max_disp) / cs)) + 1, env.height - 1)
    if ix0 > ix1 or iy0 > iy1:
        return None
    mask = env.navigable_centers[iy0 : iy1 + 1, ix0 : ix1 + 1]
    if z_tolerance is not None:
        mask = mask & (np.abs(env.floor_z[iy0 : iy1 + 1, ix0 : ix1 + 1] - p[2]) <= z_tolerance + _EPS)
    iys, ixs = np.nonzero(mask)
    if len(ixs) == 0:
        return None
    ixs = ixs + ix0
    iys = iys + iy0
    d = np.hypot((ixs + 0.5) * cs - x, (iys + 0.5) * cs - y)
    keep = d <= max_disp + _EPS
    if not keep.any():
        return None
    d, ixs, iys = np.round(d[keep], 9), ixs[keep], iys[keep]
    best = np.lexsort((iys, ixs, d))[0]
    return env.cell_center(int(ixs[best]), int(iys[best]))


# ---------------------------------------------------------------- file format

_GLYPH_KIND = {".": CellKind.FREE, "#": CellKind.OBSTACLE, "o": CellKind.HOLE}


def parse_environment(text: str, path: str | None = None) -> OccupancyEnvironment:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty environment file", 1, path)
    head = lines[0].split()
    if len(head) not in (3, 4):
        raise ParseError("header must be 'cell_size W H [agent_radius]'", 1, path)
    try:
        cell_size = float(head[0])
        w, h = int(head[1]), int(head[2])
        radius = float(head[3]) if len(head) == 4 else DEFAULT_AGENT_RADIUS
    except ValueError as exc:
        raise ParseError(f"bad header: {exc}", 1, path) from None
    if not cell_size > 0:
        raise InvariantError("cell_size > 0", f"got {head[0]}")
    if w <= 0 or h <= 0:
        raise InvariantError("W, H > 0", f"got {w}x{h}")
    rows = lines[1:]
    while rows and not rows[-1].strip():
        rows.pop()
    if len(rows) != h:
        raise ParseError(f"expected {h} grid rows, found {len(rows)}", len(lines) + 1, path)
    kinds = np.zeros((h, w), dtype=np.uint8)
    floor = np.zeros((h, w), dtype=float)
    for iy, row in enumerate(rows):
        if len(row) != w:
            raise ParseError(f"row has {len(row)} glyphs, expected {w}", iy + 2, path)
        for ix, ch in enumerate(row):
            if ch in _GLYPH_KIND:
                kinds[iy, ix] = _GLYPH_KIND[ch]
            elif ch in "123456789":
                floor[iy, ix] = int(ch) * FLOOR_STEP
            else:
                raise ParseError(f"unknown glyph {ch!r} at column {ix + 1}", iy + 2, path)
    return OccupancyEnvironment(kinds, floor, cell_size=cell_size, agent_radius=radius)


def load_environment(path: str | Path) -> OccupancyEnvironment:
    path = Path(path)
    return parse_environment(path.read_text(), str(path))


def serialize_environment(env: OccupancyEnvironment) -> str:
    head = f"{env.cell_size!r} {env.width} {env.height}"
    if env.agent_radius != DEFAULT_AGENT_RADIUS:
        head += f" {env.agent_radius!r}"
    free = env.kinds == CellKind.FREE
    level = np.rint(env.floor_z / FLOOR_STEP)
    exact = np.abs(level * FLOOR_STEP - env.floor_z) <= 1e-9
    bad = free & ~(exact & (level >= 0) & (level <= 9))
    if bad.any():
        iy, ix = (int(v) for v in np.argwhere(bad)[0])
        raise InvariantError("floor_z representable as digit x 0.1m", f"cell ({ix}, {iy}) has {env.floor_z[iy, ix]}")
    glyphs = np.where(level > 0, (level.clip(0, 9).astype(int) + ord("0")), ord("."))
    glyphs = np.where(free, glyphs, np.where(env.kinds == CellKind.OBSTACLE, ord("#"), ord("o")))
    rows = [bytes(row.astype(np.uint8)).decode() for row in glyphs]
    return "\n".join([head, *rows]) + "\n"


def save_environment(env: OccupancyEnvironment, path: str | Path) -> None:
    Path(path).write_text(serialize_environment(env))


# ---------------------------------------------------------------- nav graph


@dataclass(frozen=True)
class NavGraph:
    nodes: dict[int, Point]
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        norm = set()
        for a, b in self.edges:
            if a == b:
                raise InvariantError("no self-edges", f"node {a}")
            for n in (a, b):
                if n not in self.nodes:
                    raise InvariantError("edge endpoints reference existing nodes", f"node {n}")
            norm.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def build(cls, nodes: dict[int, Sequence[float]], edges: Iterable[tuple[int, int]]) -> "NavGraph":
        return cls({int(k): tuple(float(c) for c in v) for k, v in nodes.items()}, frozenset(edges))

    @cached_property
    def adjacency(self) -> dict[int, tuple[int, ...]]:
        adj: dict[int, list[int]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return {n: tuple(sorted(v)) for n, v in adj.items()}

    def neighbors(self, node: int) -> tuple[int, ...]:
        return self.adjacency[node]

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges


def parse_graph(text: str, path: str | None = None) -> NavGraph:
    nodes: dict[int, Point] = {}
    edges = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "node" and len(parts) == 5:
                nid = int(parts[1])
                if nid in nodes:
                    raise ParseError(f"duplicate node {nid}", lineno, path)
                nodes[nid] = (float(parts[2]), float(parts[3]), float(parts[4]))
            elif parts[0] == "edge" and len(parts) == 3:
                edges.append((int(parts[1]), int(parts[2])))
            else:
                raise ParseError(f"unrecognized record {line.strip()!r}", lineno, path)
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    return NavGraph(nodes, frozenset(edges))


def load_graph(path: str | Path) -> NavGraph:
    path = Path(path)
    return parse_graph(path.read_text(), str(path))


def serialize_graph(graph: NavGraph) -> str:
    lines = [f"node {n} {x!r} {y!r} {z!r}" for n, (x, y, z) in sorted(graph.nodes.items())]
    lines += [f"edge {a} {b}" for a, b in sorted(graph.edges)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- episodes & trajectories


@dataclass(frozen=True)
class Episode:
    id: str
    instruction: tuple[int, ...]
    start: Pose
    goal: Point
    reference_waypoints: tuple[Point, ...]
    reference_actions: tuple[Action, ...]
    geodesic_reference_length: float
    # nav-graph node ids the episode was transferred from (empty if unknown)
    node_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.geodesic_reference_length > 0:
            raise InvariantError("geodesic_reference_length > 0", f"episode {self.id}")
        if not self.reference_waypoints:
            raise InvariantError("reference_waypoints non-empty", f"episode {self.id}")
        if self.start.horizontal_distance(self.reference_waypoints[0]) > 0.05 + _EPS:
            raise InvariantError("reference_waypoints begins within 0.05m of start", f"episode {self.id}")


@dataclass
class Trajectory:
    poses: list[Pose]
    actions: list[Action] = field(default_factory=list)
    collided: list[bool] = field(default_factory=list)

    @property
    def stopped(self) -> bool:
        """The agent ended the episode by declaring STOP."""
        return bool(self.actions) and self.actions[-1] == Action.STOP

    @property
    def final_pose(self) -> Pose:
        return self.poses[-1]

    def validate(self) -> None:
        if not self.actions:
            raise InvariantError("actions is non-empty")
        if len(self.poses) != len(self.actions) + 1:
            raise InvariantError("len(poses) == len(actions) + 1")
        if len(self.collided) != len(self.actions):
            raise InvariantError("len(collided) == len(actions)")
        if Action.STOP in self.actions[:-1]:
            raise InvariantError("STOP only as final action")
        for a, b in zip(self.poses, self.poses[1:]):
            if horizontal_distance(a.position, b.position) > FORWARD_METERS + 1e-9:
                raise InvariantError("step displacement <= 0.25m")
            turn = abs(a.heading - b.heading) % 360
            if min(turn, 360 - turn) > TURN_DEGREES:
                raise InvariantError("step heading change <= 15 degrees")


# ---------------------------------------------------------------- episode files
# One JSON object per line, keys named exactly as the Episode fields.


def episode_to_record(ep: Episode) -> dict:
    return {
        "id": ep.id,
        "instruction": list(ep.instruction),
        "start": [ep.start.x, ep.start.y, ep.start.z, ep.start.heading],
        "goal": list(ep.goal),
        "reference_waypoints": [list(w) for w in ep.reference_waypoints],
        "reference_actions": "".join(a.code for a in ep.reference_actions),
        "geodesic_reference_length": ep.geodesic_reference_length,
        "node_ids": list(ep.node_ids),
    }


def episode_from_record(rec: dict) -> Episode:
    sx, sy, sz, sh = rec["start"]
    return Episode(
        id=str(rec["id"]),
        instruction=tuple(int(t) for t in rec["instruction"]),
        start=Pose(float(sx), float(sy), float(sz), int(sh)),
        goal=tuple(float(c) for c in rec["goal"]),
        reference_waypoints=tuple(tuple(float(c) for c in w) for w in rec["reference_waypoints"]),
        reference_actions=tuple(Action.parse(c) for c in rec["reference_actions"]),
        geodesic_reference_length=float(rec["geodesic_reference_length"]),
        node_ids=tuple(int(n) for n in rec.get("node_ids", ())),
    )


def format_episodes(episodes: Iterable[Episode]) -> str:
    return "".join(json.dumps(episode_to_record(e), separators=(",", ":")) + "\n" for e in episodes)


def parse_episodes(text: str, path: str | None = None) -> list[Episode]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(episode_from_record(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad episode record: {exc}", lineno, path) from None
    return out


def load_episodes(path: str | Path) -> list[Episode]:
    path = Path(path)
    return parse_episodes(path.read_text(), str(path))


def save_episodes(episodes: Iterable[Episode], path: str | Path) -> None:
    Path(path).write_text(format_episodes(episodes))
