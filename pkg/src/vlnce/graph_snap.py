"""Continuous path to nav-graph node sequence by iterative nearest-adjacent snapping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from vlnce.errors import ParseError, StartMismatch, UnknownNode
from vlnce.world import NavGraph, horizontal_distance

START_TOLERANCE = 0.5
FAR_DISTANCE = 1.5


@dataclass(frozen=True)
class SnappedPath:
    node_ids: tuple[int, ...]
    raw_assignments: tuple[int, ...]


def collapse(seq: Sequence[int]) -> tuple[int, ...]:
    out: list[int] = []
    for n in seq:
        if not out or out[-1] != n:
            out.append(n)
    return tuple(out)


def snap(graph: NavGraph, start_node: int, positions: Sequence[Sequence[float]]) -> SnappedPath:
    """Walk the graph one hop at most per position, always moving to whichever of
    the current node and its neighbours is horizontally closest (smaller id on ties)."""
    if start_node not in graph.nodes:
        raise UnknownNode(start_node)
    if not positions:
        raise ValueError("positions must be non-empty")
    d0 = horizontal_distance(positions[0], graph.nodes[start_node])
    if d0 > START_TOLERANCE + 1e-9:
        raise StartMismatch(f"first position is {d0:.3f}m from start node {start_node}")
    current = start_node
    raw = [current]
    for p in positions[1:]:
        candidates = (current, *graph.neighbors(current))
        current = min(candidates, key=lambda n: (horizontal_distance(p, graph.nodes[n]), n))
        raw.append(current)
    return SnappedPath(collapse(raw), tuple(raw))


@dataclass(frozen=True)
class SnapQuality:
    oscillations: int
    mean_assigned_distance: float
    far_positions: int


def snap_quality(graph: NavGraph, snapped: SnappedPath, positions: Sequence[Sequence[float]]) -> SnapQuality:
    ids = snapped.node_ids
    osc = sum(1 for a, b, c in zip(ids, ids[1:], ids[2:]) if a == c and a != b)
    assigned = [horizontal_distance(p, graph.nodes[n]) for p, n in zip(positions, snapped.raw_assignments)]
    far = 0
    for p in positions:
        nearest = min(horizontal_distance(p, q) for q in graph.nodes.values())
        if nearest > FAR_DISTANCE:
            far += 1
    mean = sum(assigned) / len(assigned) if assigned else math.nan
    return SnapQuality(osc, mean, far)


def nearest_node(graph: NavGraph, p: Sequence[float]) -> int:
    return min(graph.nodes, key=lambda n: (horizontal_distance(p, graph.nodes[n]), n))


def format_snapped(rows: Sequence[tuple[str, SnappedPath]]) -> str:
    return "".join(f"{eid} {' '.join(str(n) for n in s.node_ids)}\n" for eid, s in rows)


def parse_snapped(text: str, path: str | Path | None = None) -> dict[str, tuple[int, ...]]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            out[parts[0]] = tuple(int(n) for n in parts[1:])
        except ValueError as exc:
            raise ParseError(str(exc), lineno, str(path) if path else None) from None
    return out
