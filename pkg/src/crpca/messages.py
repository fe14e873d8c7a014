from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MeanVarMessage:
    """Gaussian message: a mean matrix and one scalar variance."""

    mean: np.ndarray
    var: float

    def __post_init__(self):
        if not np.isfinite(self.var) or self.var < 0:
            raise ValueError(f"message variance must be finite and nonnegative, got {self.var}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mean.shape
