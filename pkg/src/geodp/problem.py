"""Bundle of problem data shared by the probabilistic and PDE solvers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .bsde import Driver, TerminalCost
from .dynamics import ControlSet
from .geometry import ManifoldModel, VectorField


@dataclass(frozen=True)
class ControlProblem:
    manifold: ManifoldModel
    fields: Sequence[VectorField]  # fields[0] is the drift field
    driver: Driver
    terminal: TerminalCost
    controls: ControlSet

    @property
    def d(self) -> int:
        return len(self.fields) - 1
