"""Brute-force ground truth for tiny maps.

``verify_reachable`` re-derives the reachable set by enumerating simple
paths, sharing no code with the BFS in :mod:`grid_env`.  ``optimal_coverage``
runs iterative deepening over (position, budget, visited) states and drives
the real :func:`grid_env.step`, so any drift in step semantics shows up in
replayed witnesses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import grid_env as env
from .errors import InstanceTooLargeError

MAX_CELLS = 64
MAX_TARGETS = 12


@dataclass
class OracleResult:
    feasible: bool
    optimal_length: int | None = None
    witness_path: list[tuple[int, int]] = field(default_factory=list)


def verify_reachable(grid: env.GridMap, budget: int) -> set[tuple[int, int]]:
    rows, cols = grid.shape
    if rows * cols > MAX_CELLS:
        raise InstanceTooLargeError(f"{rows}x{cols} map exceeds {MAX_CELLS} cells")
    radius = budget // 2
    cells = grid.cells

    def free(r, c):
        return 0 <= r < rows and 0 <= c < cols and cells[r, c] != env.OBSTACLE

    found = set()

    def walk(r, c, length, on_path):
        found.add((r, c))
        if length == radius:
            return
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if free(nr, nc) and (nr, nc) not in on_path:
                on_path.add((nr, nc))
                walk(nr, nc, length + 1, on_path)
                on_path.discard((nr, nc))

    for r in range(rows):
        for c in range(cols):
            if cells[r, c] == env.CHARGING:
                walk(r, c, 0, {(r, c)})
    return found


def optimal_coverage(grid: env.GridMap, budget: int, max_len: int | None = None) -> OracleResult:
    """Shortest violation-free path from the start that covers every reachable cell."""
    target = grid.target_mask(budget)
    n_target = int(target.sum())
    if n_target > MAX_TARGETS:
        raise InstanceTooLargeError(f"{n_target} target cells exceed the limit of {MAX_TARGETS}")
    max_len = 4 * n_target if max_len is None else max_len

    start = env.reset(grid, budget)
    if start.done:
        return OracleResult(True, 0, [grid.start])

    failed: dict[tuple, int] = {}

    def key(state):
        return state.position, state.budget_remaining, state.visited.tobytes()

    def dfs(state, remaining, path):
        uncovered = int((target & ~state.visited).sum())
        if uncovered > remaining:
            return False
        k = key(state)
        if failed.get(k, -1) >= remaining:
            return False
        for action in range(env.NUM_ACTIONS):
            dr, dc = env.ACTION_DELTAS[action]
            if not grid.is_free((state.position[0] + dr, state.position[1] + dc)):
                continue
            nxt, out = env.step(grid, state, action)
            if out.violated:
                continue
            path.append(nxt.position)
            if out.terminal_reason is env.TerminalReason.FULL_COVERAGE:
                return True
            if not nxt.done and dfs(nxt, remaining - 1, path):
                return True
            path.pop()
        failed[k] = max(failed.get(k, -1), remaining)
        return False

    for limit in range(1, max_len + 1):
        path = [grid.start]
        if dfs(start, limit, path):
            return OracleResult(True, len(path) - 1, path)
    return OracleResult(False)


def fixture_record(grid: env.GridMap, budget: int, result: OracleResult) -> dict:
    return {
        "map": env.render_map(grid),
        "budget": budget,
        "feasible": result.feasible,
        "optimal_length": result.optimal_length,
        "witness_path": [list(p) for p in result.witness_path],
    }


def write_fixture(path, grid: env.GridMap, budget: int, result: OracleResult):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fixture_record(grid, budget, result), fh, indent=2)
        fh.write("\n")
