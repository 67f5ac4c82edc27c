"""Grid world for energy-constrained coverage.

The robot lives on a 4-connected grid with obstacles and charging stations.
Every move costs one unit of energy; arriving at a charging station restores
the battery to the full budget.  The environment is functional: ``step`` takes
an :class:`EnvState` and returns a new one, never mutating its input.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    MaskedActionError,
    MultipleStartsError,
    NonRectangularError,
    NoStartError,
    StartNotChargingError,
    SteppedAfterDoneError,
    UnknownCellError,
)

FREE, OBSTACLE, CHARGING = 0, 1, 2

_CHAR_TO_CELL = {".": FREE, "#": OBSTACLE, "C": CHARGING, "S": CHARGING}
_CELL_TO_CHAR = {FREE: ".", OBSTACLE: "#", CHARGING: "C"}


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


ACTION_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))
NUM_ACTIONS = 4

# reward components
R_NEW_CELL = 2.0
R_REVISIT = -1.0
R_BUDGET_OK = 0.1
R_BUDGET_VIOLATION = -3.0
R_TERMINAL = 200.0

EPISODE_CAP_FACTOR = 10


class TerminalReason(enum.Enum):
    NONE = "none"
    FULL_COVERAGE = "full_coverage"
    STEP_CAP = "step_cap"


Cell = tuple[int, int]


class GridMap:
    """Static environment layout.

    ``cells`` is a read-only ``(rows, cols)`` int8 array holding ``FREE``,
    ``OBSTACLE`` or ``CHARGING``.  Maps are square in normal use (side ``n``)
    but rectangular layouts are accepted so tiny oracle fixtures such as a
    1x3 strip can be expressed.
    """

    def __init__(self, cells: np.ndarray, start: Cell):
        cells = np.array(cells, dtype=np.int8)
        if cells.ndim != 2 or cells.size == 0:
            raise NonRectangularError(f"cells must be a non-empty 2-D grid, got shape {cells.shape}")
        if not np.isin(cells, (FREE, OBSTACLE, CHARGING)).all():
            raise UnknownCellError("cells contain values outside {FREE, OBSTACLE, CHARGING}")
        start = (int(start[0]), int(start[1]))
        r, c = start
        if not (0 <= r < cells.shape[0] and 0 <= c < cells.shape[1]):
            raise NoStartError(f"start {start} lies outside the grid")
        if cells[r, c] != CHARGING:
            raise StartNotChargingError(f"start {start} is not a charging cell")
        cells.flags.writeable = False
        self.cells = cells
        self.start = start
        self._target_cache: dict[int, np.ndarray] = {}

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def n(self) -> int:
        """Side length used by ``"4n"``-style budgets; the longer side for rectangular maps."""
        return max(self.cells.shape)

    @property
    def episode_cap(self) -> int:
        rows, cols = self.shape
        return EPISODE_CAP_FACTOR * rows * cols

    @property
    def obstacle_mask(self) -> np.ndarray:
        return self.cells == OBSTACLE

    @property
    def charging_mask(self) -> np.ndarray:
        return self.cells == CHARGING

    @property
    def stations(self) -> list[Cell]:
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(self.charging_mask))]

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.shape[0] and 0 <= cell[1] < self.shape[1]

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and self.cells[cell] != OBSTACLE

    def target_mask(self, budget: int) -> np.ndarray:
        """Boolean mask of the coverage target set (reachable cells) for ``budget``."""
        mask = self._target_cache.get(budget)
        if mask is None:
            mask = np.zeros(self.shape, dtype=bool)
            for cell in reachable_cells(self, budget):
                mask[cell] = True
            mask.flags.writeable = False
            self._target_cache[budget] = mask
        return mask

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return self.start == other.start and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash((self.start, self.cells.shape, self.cells.tobytes()))

    def __repr__(self):
        rows, cols = self.shape
        return f"GridMap({rows}x{cols}, start={self.start}, stations={len(self.stations)})"


def load_map(text: str) -> GridMap:
    """Parse the map text format ('.' free, '#' obstacle, 'C' charging, 'S' start)."""
    if not text or not text.strip():
        raise NoStartError("map text is empty")
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    width = len(lines[0])
    rows = []
    start = None
    for r, line in enumerate(lines):
        if len(line) != width:
            raise NonRectangularError(f"row {r} has length {len(line)}, expected {width}")
        row = []
        for c, ch in enumerate(line):
            if ch not in _CHAR_TO_CELL:
                raise UnknownCellError(f"unknown cell character {ch!r} at row {r}, col {c}")
            if ch == "S":
                if start is not None:
                    raise MultipleStartsError(f"second start at ({r}, {c}); first at {start}")
                start = (r, c)
            row.append(_CHAR_TO_CELL[ch])
        rows.append(row)
    if start is None:
        raise NoStartError("map has no 'S' start cell")
    return GridMap(np.array(rows, dtype=np.int8), start)


def render_map(grid: GridMap) -> str:
    lines = []
    for r in range(grid.shape[0]):
        chars = [_CELL_TO_CHAR[int(v)] for v in grid.cells[r]]
        if r == grid.start[0]:
            chars[grid.start[1]] = "S"
        lines.append("".join(chars))
    return "\n".join(lines) + "\n"


def neighbors(grid: GridMap, cell: Cell):
    for dr, dc in ACTION_DELTAS:
        nxt = (cell[0] + dr, cell[1] + dc)
        if grid.is_free(nxt):
            yield nxt


def station_distances(grid: GridMap) -> np.ndarray:
    """Multi-source BFS distance from the nearest charging cell through free cells.

    Unreachable cells (and obstacles) hold -1.
    """
    dist = np.full(grid.shape, -1, dtype=np.int64)
    queue = deque()
    for s in grid.stations:
        dist[s] = 0
        queue.append(s)
    while queue:
        cell = queue.popleft()
        for nxt in neighbors(grid, cell):
            if dist[nxt] < 0:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    return dist


def reachable_cells(grid: GridMap, budget: int) -> set[Cell]:
    """Free cells within ``budget // 2`` free-cell steps of some charging station."""
    if budget < 0:
        raise ValueError("budget must be non-negative")
    dist = station_distances(grid)
    rows, cols = np.nonzero((dist >= 0) & (dist <= budget // 2))
    return {(int(r), int(c)) for r, c in zip(rows, cols)}


@dataclass(frozen=True, eq=False)
class EnvState:
    position: Cell
    budget_remaining: int
    budget_cap: int
    visited: np.ndarray = field(repr=False)
    step: int = 0
    violations: int = 0
    done: bool = False

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        return (
            self.position == other.position
            and self.budget_remaining == other.budget_remaining
            and self.budget_cap == other.budget_cap
            and self.step == other.step
            and self.violations == other.violations
            and self.done == other.done
            and np.array_equal(self.visited, other.visited)
        )

    __hash__ = None


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    new_cell_covered: bool
    violated: bool
    terminal: bool
    terminal_reason: TerminalReason = TerminalReason.NONE


def reset(grid: GridMap, budget: int) -> EnvState:
    visited = np.zeros(grid.shape, dtype=bool)
    visited[grid.start] = True
    visited.flags.writeable = False
    state = EnvState(position=grid.start, budget_remaining=int(budget), budget_cap=int(budget), visited=visited)
    if is_terminal(grid, state) is not TerminalReason.NONE:
        state = replace(state, done=True)
    return state


def is_terminal(grid: GridMap, state: EnvState) -> TerminalReason:
    target = grid.target_mask(state.budget_cap)
    if not (target & ~state.visited).any():
        return TerminalReason.FULL_COVERAGE
    if state.step >= grid.episode_cap:
        return TerminalReason.STEP_CAP
    return TerminalReason.NONE


def action_mask(grid: GridMap, state: EnvState) -> np.ndarray:
    """Boolean array over (Up, Down, Left, Right): True where the move is legal."""
    r, c = state.position
    return np.array([grid.is_free((r + dr, c + dc)) for dr, dc in ACTION_DELTAS], dtype=bool)


def step_reward(new_cell: bool, budget_after_move: int) -> float:
    coverage_term = R_NEW_CELL if new_cell else R_REVISIT
    budget_term = R_BUDGET_OK if budget_after_move >= 0 else R_BUDGET_VIOLATION
    return (coverage_term + budget_term) / 2


def step(grid: GridMap, state: EnvState, action: int) -> tuple[EnvState, StepOutcome]:
    if state.done:
        raise SteppedAfterDoneError("episode already finished; call reset()")
    dr, dc = ACTION_DELTAS[int(action)]
    arrival = (state.position[0] + dr, state.position[1] + dc)
    if not grid.is_free(arrival):
        raise MaskedActionError(f"action {Action(int(action)).name} from {state.position} is blocked")

    # Reward sees the post-decrement budget; recharge only afterwards.
    budget = state.budget_remaining - 1
    new_cell = not state.visited[arrival]
    violated = budget < 0
    reward = step_reward(new_cell, budget)
    violations = state.violations + int(violated)
    if grid.cells[arrival] == CHARGING:
        budget = state.budget_cap

    visited = state.visited
    if new_cell:
        visited = visited.copy()
        visited[arrival] = True
        visited.flags.writeable = False

    nxt = EnvState(
        position=arrival,
        budget_remaining=budget,
        budget_cap=state.budget_cap,
        visited=visited,
        step=state.step + 1,
        violations=violations,
    )
    reason = is_terminal(grid, nxt)
    if reason is TerminalReason.FULL_COVERAGE and violations == 0:
        reward = R_TERMINAL
    terminal = reason is not TerminalReason.NONE
    if terminal:
        nxt = replace(nxt, done=True)
    return nxt, StepOutcome(reward, new_cell, violated, terminal, reason)


def coverage_fraction(grid: GridMap, state: EnvState) -> float:
    target = grid.target_mask(state.budget_cap)
    total = int(target.sum())
    if total == 0:
        return 1.0
    return int((target & state.visited).sum()) / total


def replay_path(grid: GridMap, budget: int, path) -> tuple[EnvState, float]:
    """Re-run a cell path (starting at the start cell) and return final state and total reward."""
    path = [tuple(p) for p in path]
    if not path or path[0] != grid.start:
        raise ValueError("path must begin at the start cell")
    state = reset(grid, budget)
    total = 0.0
    for prev, cell in zip(path, path[1:]):
        delta = (cell[0] - prev[0], cell[1] - prev[1])
        if delta not in ACTION_DELTAS:
            raise ValueError(f"non-adjacent move {prev} -> {cell}")
        state, out = step(grid, state, ACTION_DELTAS.index(delta))
        total += out.reward
    return state, total
