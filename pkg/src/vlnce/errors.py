"""Exception types shared across the toolkit.

Every error a CLI command can surface as a data error derives from
``DataError`` so the entry point can map it to exit code 2.
"""

from __future__ import annotations


class DataError(Exception):
    """Base class for errors caused by bad input data."""

    def record(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip() if where else message)

    def record(self) -> dict:
        rec = super().record()
        rec["line"] = self.line
        rec["path"] = self.path
        return rec


class InvariantError(DataError):
    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        super().__init__(f"invariant violated: {invariant}" + (f" ({detail})" if detail else ""))


class SteppedAfterDone(DataError):
    pass


class StartNotNavigable(DataError):
    pass


class FromNotNavigable(DataError):
    pass


class Unreachable(DataError):
    pass


class FollowerStuck(DataError):
    pass


class LegUnreachable(DataError):
    def __init__(self, leg: int, cause: str = ""):
        self.leg = leg
        super().__init__(f"leg {leg} (waypoint {leg} -> {leg + 1}) unreachable" + (f": {cause}" if cause else ""))

    def record(self) -> dict:
        rec = super().record()
        rec["leg"] = self.leg
        return rec


class UnknownNodeId(DataError):
    def __init__(self, node_id):
        self.node_id = node_id
        super().__init__(f"unknown node id {node_id!r}")


class UnknownNode(UnknownNodeId):
    pass


class StartMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class NonpositiveReference(DataError):
    pass


class EmptyInput(DataError):
    pass


class DimensionMismatch(DataError):
    def __init__(self, stage: str, detail: str = ""):
        self.stage = stage
        super().__init__(f"dimension mismatch in {stage}" + (f": {detail}" if detail else ""))


class NonFiniteGradient(DataError):
    pass
