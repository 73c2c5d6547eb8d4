"""Per-stage solve reports."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

CONVERGED = "converged"
TIME_LIMIT = "time-limit"
STALLED = "stalled"
MAX_ITER = "max-iter"
FAILED = "failed"
STATUSES = (CONVERGED, TIME_LIMIT, STALLED, MAX_ITER, FAILED)


@dataclass
class SolveReport:
    stage: str
    objective: float
    tv_value: float
    sos1_penalty: float
    iterations: int = 0
    wall_seconds: float = 0.0
    status: str = CONVERGED
    epsilon: Optional[float] = None
    bound_certificates: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.objective):
            raise ValueError(f"{self.stage}: objective is not finite")
        if self.wall_seconds < 0:
            raise ValueError("wall_seconds must be nonnegative")
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    def to_dict(self) -> dict:
        return asdict(self)
