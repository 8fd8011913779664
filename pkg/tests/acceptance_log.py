"""Collects one verdict per acceptance criterion for the terminal summary."""

RESULTS: dict[int, tuple[bool, str]] = {}


def verdict(criterion: int, checks: dict[str, bool], detail: str = "") -> None:
    failed = [name for name, ok in checks.items() if not ok]
    RESULTS[criterion] = (not failed, detail if not failed else f"{detail} | failed: {', '.join(failed)}")
    assert not failed, f"criterion {criterion}: {', '.join(failed)} ({detail})"
