"""Random map generation with rectangular obstacle blobs."""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import GenerationFailedError
from .grid_env import CHARGING, FREE, OBSTACLE, GridMap, neighbors, reachable_cells


def _bfs(grid: GridMap, source):
    dist = {source: 0}
    queue = deque([source])
    while queue:
        cell = queue.popleft()
        for nxt in neighbors(grid, cell):
            if nxt not in dist:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    return dist


def validate_map(grid: GridMap, budget: int) -> list[str]:
    """Problems that make full coverage impossible at ``budget`` (empty list = valid).

    Checks that every free cell lies within ``budget // 2`` moves of some
    station, that all free cells share the start's connected component, and that each
    station can be reached from the start by hopping between stations at most
    ``budget`` moves apart.
    """
    problems = []
    free = {(int(r), int(c)) for r, c in zip(*np.nonzero(grid.cells != OBSTACLE))}
    from_start = _bfs(grid, grid.start)
    if set(from_start) != free:
        problems.append(f"{len(free - set(from_start))} free cells disconnected from the start")
    unreachable = free - reachable_cells(grid, budget)
    if unreachable:
        problems.append(f"{len(unreachable)} free cells farther than budget//2 from every station")
    stations = grid.stations
    hop = {s: _bfs(grid, s) for s in stations}
    seen, frontier = {grid.start}, [grid.start]
    while frontier:
        s = frontier.pop()
        for t in stations:
            if t not in seen and hop[s].get(t, budget + 1) <= budget:
                seen.add(t)
                frontier.append(t)
    if len(seen) != len(stations):
        problems.append(f"{len(stations) - len(seen)} stations not chained to the start within budget")
    return problems


def generate_map(n: int, stations: int = 3, obstacle_density: float = 0.1, seed: int = 0,
                 budget: int | None = None, max_tries: int = 1000) -> GridMap:
    """Rejection-sample an ``n``x``n`` map whose free cells are all coverable at ``budget`` (default 5n).

    The start station sits at (0, 0).
    """
    if n < 4:
        raise ValueError("n must be at least 4")
    if not 0.0 <= obstacle_density <= 0.4:
        raise ValueError("obstacle_density must lie in [0, 0.4]")
    if stations < 1:
        raise ValueError("need at least one station")
    budget = 5 * n if budget is None else budget
    rng = np.random.default_rng(seed)
    target = int(round(obstacle_density * n * n))
    max_side = max(1, n // 4)
    for _ in range(max_tries):
        cells = np.full((n, n), FREE, dtype=np.int8)
        guard = 0
        while (cells == OBSTACLE).sum() < target and guard < 10 * n * n:
            guard += 1
            h, w = rng.integers(1, max_side + 1, size=2)
            r, c = rng.integers(0, n - h + 1), rng.integers(0, n - w + 1)
            if r <= 0 < r + h and c <= 0 < c + w:
                continue
            block = cells[r:r + h, c:c + w]
            if (cells == OBSTACLE).sum() + (block != OBSTACLE).sum() > target:
                continue
            block[...] = OBSTACLE
        if (cells == OBSTACLE).sum() != target:
            continue
        cells[0, 0] = CHARGING
        free = np.flatnonzero(cells.reshape(-1) == FREE)
        if len(free) < stations - 1:
            continue
        for flat in rng.choice(free, size=stations - 1, replace=False):
            cells.reshape(-1)[flat] = CHARGING
        grid = GridMap(cells, (0, 0))
        if not validate_map(grid, budget):
            return grid
    raise GenerationFailedError(f"no valid {n}x{n} map after {max_tries} attempts")
