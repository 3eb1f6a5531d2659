"""Acceptance results shared between the acceptance tests and the terminal summary."""

RESULTS: dict[int, tuple[str, bool, str]] = {}
