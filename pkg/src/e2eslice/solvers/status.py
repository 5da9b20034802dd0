from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"

FEAS_TOL = 1e-8
OPT_TOL = 1e-6
MAX_ITER = 500


@dataclass
class SolveStatus:
    status: str
    objective: float = math.nan
    x: np.ndarray | None = None
    max_violation: float = math.inf
    iterations: int = 0
    kkt_residual: float = math.nan
    dual_bound: float = math.nan
    message: str = ""
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL
