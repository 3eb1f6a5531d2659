"""Synthetic environments and nav-graphs with planted ground truth.

Scenes are square rooms with panorama nodes on a lattice (2.25m spacing,
1.5m camera height). Three kinds of defects can be planted:

* a HOLE square under a node, so the node cannot be projected (INVALID);
* a table under a node at a known depth from its edge, so the node projects
  sideways by a known offset (ADJUSTED);
* a full-height wall splitting the room, so trajectories crossing it are
  DISJOINT.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vlnce.transfer import TrajectoryStatus
from vlnce.world import CellKind, NavGraph, OccupancyEnvironment, save_environment, serialize_graph

CELL = 0.05
SPACING_CELLS = 45  # 2.25m
MARGIN_CELLS = 18
CAMERA_HEIGHT = 1.5
HOLE_HALF_CELLS = 12  # 0.6m half-width: nearest floor is > 0.5m away
TABLE_WIDTH_CELLS = 12  # 0.6m
TABLE_HALF_LENGTH_CELLS = 12
# depth of the node inside its table, in cells (node sits (k + 0.5) cells from the edge)
TABLE_DEPTHS = (0, 1, 2, 3)
PLANTED_INVALID_RATE = 0.017
PLANTED_ADJUSTED_RATE = 0.03


@dataclass
class Scene:
    name: str
    env: OccupancyEnvironment
    graph: NavGraph
    lattice: int
    node_cells: dict[int, tuple[int, int]]
    trajectories: dict[str, list[int]] = field(default_factory=dict)
    instructions: dict[str, list[tuple[int, ...]]] = field(default_factory=dict)
    invalid_nodes: set[int] = field(default_factory=set)
    adjusted_offsets: dict[int, float] = field(default_factory=dict)
    split_column: int | None = None  # wall between lattice columns split_column and split_column + 1

    def node_column(self, node: int) -> int:
        return node % self.lattice

    def expected_status(self, traj_id: str) -> TrajectoryStatus:
        nodes = self.trajectories[traj_id]
        if any(n in self.invalid_nodes for n in nodes):
            return TrajectoryStatus.INVALID_NODE
        if self.split_column is not None:
            sides = {self.node_column(n) > self.split_column for n in nodes}
            if len(sides) > 1:
                return TrajectoryStatus.DISJOINT
        return TrajectoryStatus.NAVIGABLE


def lattice_size(lattice: int) -> int:
    return 2 * MARGIN_CELLS + SPACING_CELLS * (lattice - 1) + 1


def build_scene(
    name: str,
    lattice: int = 4,
    diagonal_edges: bool = True,
    invalid: dict[int, None] | set[int] = frozenset(),
    adjusted: dict[int, int] | None = None,
    split_column: int | None = None,
    jitter_seed: int | None = None,
) -> Scene:
    """Room with a ``lattice x lattice`` node grid and the requested planted defects.

    ``adjusted`` maps node id to a table depth index from ``TABLE_DEPTHS``.
    """
    adjusted = adjusted or {}
    n = lattice_size(lattice)
    kinds = np.zeros((n, n), dtype=np.uint8)
    kinds[0, :] = kinds[-1, :] = kinds[:, 0] = kinds[:, -1] = CellKind.OBSTACLE
    rng = np.random.default_rng(jitter_seed) if jitter_seed is not None else None
    nodes, cells = {}, {}
    offsets = {}
    for j in range(lattice):
        for i in range(lattice):
            nid = j * lattice + i
            ix, iy = MARGIN_CELLS + SPACING_CELLS * i, MARGIN_CELLS + SPACING_CELLS * j
            cells[nid] = (ix, iy)
            x, y = (ix + 0.5) * CELL, (iy + 0.5) * CELL
            if rng is not None and nid not in invalid and nid not in adjusted:
                x += float(rng.uniform(-0.02, 0.02))
                y += float(rng.uniform(-0.02, 0.02))
            nodes[nid] = (x, y, CAMERA_HEIGHT)
    for nid in invalid:
        ix, iy = cells[nid]
        h = HOLE_HALF_CELLS
        kinds[iy - h : iy + h + 1, ix - h : ix + h + 1] = CellKind.HOLE
    for nid, k in adjusted.items():
        ix, iy = cells[nid]
        left = ix - TABLE_DEPTHS[k]
        kinds[iy - TABLE_HALF_LENGTH_CELLS : iy + TABLE_HALF_LENGTH_CELLS, left : left + TABLE_WIDTH_CELLS] = CellKind.OBSTACLE
        # nearest floor center clears the table edge by 2.5 cells (> agent radius)
        offsets[nid] = (TABLE_DEPTHS[k] + 0.5) * CELL + 2.5 * CELL
    if split_column is not None:
        mid = MARGIN_CELLS + SPACING_CELLS * split_column + SPACING_CELLS // 2
        kinds[:, mid - 1 : mid + 1] = CellKind.OBSTACLE
    edges = set()
    steps = [(1, 0), (0, 1)] + ([(1, 1), (-1, 1)] if diagonal_edges else [])
    for j in range(lattice):
        for i in range(lattice):
            for di, dj in steps:
                ii, jj = i + di, j + dj
                if 0 <= ii < lattice and 0 <= jj < lattice:
                    edges.add((j * lattice + i, jj * lattice + ii))
    env = OccupancyEnvironment(kinds, cell_size=CELL)
    graph = NavGraph.build(nodes, edges)
    return Scene(name, env, graph, lattice, cells, invalid_nodes=set(invalid), adjusted_offsets=offsets, split_column=split_column)


def graph_shortest_path(graph: NavGraph, a: int, b: int) -> list[int]:
    """Euclidean-weighted shortest node path (ties by lexicographic node order)."""
    dist = {a: 0.0}
    heap = [(0.0, (a,), a)]
    done = set()
    while heap:
        d, path, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == b:
            return list(path)
        pu = graph.nodes[u]
        for v in graph.neighbors(u):
            pv = graph.nodes[v]
            nd = round(d + math.hypot(pu[0] - pv[0], pu[1] - pv[1]), 9)
            if v not in done and (v not in dist or nd <= dist[v]):
                dist[v] = nd
                heapq.heappush(heap, (nd, path + (v,), v))
    raise ValueError(f"no graph path {a} -> {b}")


def _instructions(rng: np.random.Generator) -> list[tuple[int, ...]]:
    return [tuple(int(t) for t in rng.integers(1, 1000, size=rng.integers(8, 21))) for _ in range(int(rng.integers(1, 4)))]


def add_shortest_path_trajectories(scene: Scene, rng: np.random.Generator, count: int, min_hops: int = 2) -> None:
    ids = sorted(scene.graph.nodes)
    made = 0
    while made < count:
        a, b = (int(v) for v in rng.choice(ids, size=2, replace=False))
        path = graph_shortest_path(scene.graph, a, b)
        if len(path) - 1 < min_hops:
            continue
        tid = f"{scene.name}_t{made:02d}"
        scene.trajectories[tid] = path
        scene.instructions[tid] = _instructions(rng)
        made += 1


def add_random_walks(scene: Scene, rng: np.random.Generator, count: int, hops=(4, 6)) -> None:
    """Self-avoiding walks along graph edges with a hop count drawn from ``hops``."""
    ids = sorted(scene.graph.nodes)
    made = 0
    while made < count:
        want = int(rng.integers(hops[0], hops[1] + 1))
        path = [int(rng.choice(ids))]
        while len(path) - 1 < want:
            options = [v for v in scene.graph.neighbors(path[-1]) if v not in path]
            if not options:
                break
            path.append(int(rng.choice(options)))
        if len(path) - 1 != want:
            continue
        tid = f"{scene.name}_w{made:02d}"
        scene.trajectories[tid] = path
        scene.instructions[tid] = _instructions(rng)
        made += 1


def transfer_suite(
    seed: int = 0,
    n_scenes: int = 20,
    lattice: int = 4,
    trajectories_per_scene: int = 10,
    split_every: int = 3,
) -> list[Scene]:
    """Scenes with planted invalid nodes (1.7% of all nodes), planted tables (3%)
    and a disjoint split wall in every ``split_every``-th scene."""
    rng = np.random.default_rng(seed)
    per = lattice * lattice
    total = n_scenes * per
    n_invalid = int(round(PLANTED_INVALID_RATE * total))
    n_adjusted = int(round(PLANTED_ADJUSTED_RATE * total))
    chosen = rng.choice(total, size=n_invalid + n_adjusted, replace=False)
    invalid_by_scene: dict[int, set[int]] = {}
    adjusted_by_scene: dict[int, dict[int, int]] = {}
    for k, flat in enumerate(chosen):
        s, node = divmod(int(flat), per)
        if k < n_invalid:
            invalid_by_scene.setdefault(s, set()).add(node)
        else:
            adjusted_by_scene.setdefault(s, {})[node] = int(rng.integers(len(TABLE_DEPTHS)))
    scenes = []
    for s in range(n_scenes):
        split = (lattice // 2 - 1) if s % split_every == 0 else None
        scene = build_scene(
            f"s{s:02d}",
            lattice,
            diagonal_edges=True,
            invalid=invalid_by_scene.get(s, set()),
            adjusted=adjusted_by_scene.get(s, {}),
            split_column=split,
            jitter_seed=seed * 1000 + s,
        )
        add_shortest_path_trajectories(scene, rng, trajectories_per_scene)
        scenes.append(scene)
    return scenes


def walk_scene(seed: int = 0, lattice: int = 5, count: int = 50, hops=(4, 6)) -> Scene:
    """Open room, 4-connected lattice graph, random self-avoiding walks."""
    rng = np.random.default_rng(seed)
    scene = build_scene("walk", lattice, diagonal_edges=False)
    add_random_walks(scene, rng, count, hops)
    return scene


DOOR_HALF_CELLS = 10  # 1m doorways


def house_scene(
    seed: int = 0, rooms: int = 3, room_nodes: int = 2, count: int = 60, min_distance: float = 9.0
) -> Scene:
    """A ``rooms x rooms`` house of walled rooms with one doorway between neighbours.

    Each room holds ``room_nodes x room_nodes`` panoramas; graph edges only cross
    walls through doorways. Trajectories are shortest graph paths between nodes
    at least ``min_distance`` apart.
    """
    rng = np.random.default_rng(seed)
    lattice = rooms * room_nodes
    base = build_scene("house", lattice, diagonal_edges=False)
    kinds = base.env.kinds.copy()
    blocked = set()
    for c in range(room_nodes - 1, lattice - 1, room_nodes):
        mid = MARGIN_CELLS + SPACING_CELLS * c + SPACING_CELLS // 2
        kinds[:, mid - 1 : mid + 1] = CellKind.OBSTACLE
        kinds[mid - 1 : mid + 1, :] = CellKind.OBSTACLE
    for c in range(room_nodes - 1, lattice - 1, room_nodes):
        mid = MARGIN_CELLS + SPACING_CELLS * c + SPACING_CELLS // 2
        for r in range(rooms):
            door = r * room_nodes  # first node row/column of the room
            at = MARGIN_CELLS + SPACING_CELLS * door
            kinds[at - DOOR_HALF_CELLS : at + DOOR_HALF_CELLS + 1, mid - 1 : mid + 1] = CellKind.FREE
            kinds[mid - 1 : mid + 1, at - DOOR_HALF_CELLS : at + DOOR_HALF_CELLS + 1] = CellKind.FREE
        for k in range(lattice):
            if k % room_nodes:
                blocked.add((k * lattice + c, k * lattice + c + 1))
                blocked.add((c * lattice + k, (c + 1) * lattice + k))
    graph = NavGraph.build(base.graph.nodes, (e for e in base.graph.edges if e not in blocked))
    scene = Scene("house", OccupancyEnvironment(kinds, cell_size=CELL), graph, lattice, base.node_cells)
    pairs = [
        (a, b)
        for a in sorted(graph.nodes)
        for b in sorted(graph.nodes)
        if a < b and math.dist(graph.nodes[a][:2], graph.nodes[b][:2]) >= min_distance
    ]
    for k, i in enumerate(sorted(rng.choice(len(pairs), size=min(count, len(pairs)), replace=False))):
        a, b = pairs[int(i)]
        if rng.random() < 0.5:
            a, b = b, a
        tid = f"house_t{k:02d}"
        scene.trajectories[tid] = graph_shortest_path(graph, a, b)
        scene.instructions[tid] = _instructions(rng)
    return scene


def corridor_environment(length_m: float = 10.0, width_m: float = 1.0, cell: float = CELL) -> OccupancyEnvironment:
    """Straight corridor along +x with walls one cell thick."""
    w = int(round(length_m / cell)) + 2
    h = int(round(width_m / cell)) + 2
    kinds = np.zeros((h, w), dtype=np.uint8)
    kinds[0, :] = kinds[-1, :] = kinds[:, 0] = kinds[:, -1] = CellKind.OBSTACLE
    return OccupancyEnvironment(kinds, cell_size=cell)


def open_room(size_m: float = 6.0, cell: float = CELL) -> OccupancyEnvironment:
    return corridor_environment(size_m, size_m, cell)


def write_scene(scene: Scene, directory: str | Path) -> dict[str, Path]:
    """Write env, graph, trajectory and instruction files for ``scene`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / f"{k}.txt" for k in ("env", "graph", "trajectories", "instructions")}
    save_environment(scene.env, paths["env"])
    paths["graph"].write_text(serialize_graph(scene.graph))
    paths["trajectories"].write_text(
        "".join(f"{tid} {' '.join(map(str, nodes))}\n" for tid, nodes in scene.trajectories.items())
    )
    paths["instructions"].write_text(
        "".join(
            f"{tid} {' '.join(map(str, toks))}\n" for tid, instrs in scene.instructions.items() for toks in instrs
        )
    )
    return paths
