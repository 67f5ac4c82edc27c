"""Encode environment state as the network's binary channel stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_env import EnvState, GridMap

# Channel order is persisted in checkpoint metadata; do not reorder.
CHANNELS = ("obstacles", "charging_stations", "current_location", "covered_locations")
OBSTACLES, CHARGING, CURRENT, COVERED = range(4)


@dataclass(frozen=True, eq=False)
class StateTensor:
    channels: np.ndarray  # (4, rows, cols) uint8
    budget_scalar: float

    def __eq__(self, other):
        if not isinstance(other, StateTensor):
            return NotImplemented
        return self.budget_scalar == other.budget_scalar and np.array_equal(self.channels, other.channels)

    __hash__ = None


def encode(grid: GridMap, state: EnvState, budget_cap: int | None = None) -> StateTensor:
    cap = state.budget_cap if budget_cap is None else budget_cap
    channels = np.zeros((4, *grid.shape), dtype=np.uint8)
    channels[OBSTACLES] = grid.obstacle_mask
    channels[CHARGING] = grid.charging_mask
    channels[CURRENT][state.position] = 1
    channels[COVERED] = state.visited
    scalar = state.budget_remaining / cap if cap > 0 else 0.0
    return StateTensor(channels, float(scalar))


def decode(tensor: StateTensor) -> tuple[tuple[int, int], np.ndarray]:
    """Recover (position, visited mask) from an encoded state."""
    rows, cols = np.nonzero(tensor.channels[CURRENT])
    if len(rows) != 1:
        raise ValueError(f"current-location channel must hold exactly one cell, found {len(rows)}")
    return (int(rows[0]), int(cols[0])), tensor.channels[COVERED].astype(bool)
