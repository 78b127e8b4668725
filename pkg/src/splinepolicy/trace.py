"""Per-tick record of what an executor actually dispatched."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ExecutionTrace:
    """One row per control tick from episode start to horizon.

    ``positions``, ``grippers`` and ``targets`` are the plant state *after*
    the tick's action was applied.  ``generation`` is the plan each action
    came from and ``splice`` marks the first tick of a newly spliced plan.
    """

    dt: float
    actions: np.ndarray
    positions: np.ndarray
    grippers: np.ndarray
    targets: np.ndarray
    generation: np.ndarray
    splice: np.ndarray
    inferences: list[dict] = field(default_factory=list)
    discontinuities: list[float] = field(default_factory=list)

    @property
    def n_ticks(self) -> int:
        return len(self.actions)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_ticks) * self.dt

    def tracking_errors(self) -> np.ndarray:
        return np.linalg.norm(self.positions - self.targets, axis=1)

    def to_csv(self) -> str:
        D = self.actions.shape[1]
        cols = (["tick", "time"] + [f"a{j}" for j in range(D)]
                + ["pos_x", "pos_y", "gripper", "target_x", "target_y", "generation", "splice"])
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for k in range(self.n_ticks):
            row = [str(k), repr(float(k * self.dt))]
            row += [repr(float(v)) for v in self.actions[k]]
            row += [repr(float(v)) for v in self.positions[k]]
            row.append(repr(float(self.grippers[k])))
            row += [repr(float(v)) for v in self.targets[k]]
            row += [str(int(self.generation[k])), str(int(bool(self.splice[k])))]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()
