# evaluation/types.py
from dataclasses import dataclass
from typing import Dict

import numpy as np

from evaluation.exceptions import MetricsError

CASES = (1, 2, 3, 4)


@dataclass(frozen=True)
class ConfusionMatrix:
    """4 x 4 counts; row = true case, column = predicted case (both 1-based in the API)."""
    counts: np.ndarray

    def __post_init__(self):
        if self.counts.shape != (len(CASES), len(CASES)) or (self.counts < 0).any():
            raise MetricsError(f"confusion counts must be a non-negative 4 x 4 matrix, got {self.counts.shape}")

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_list(self):
        return self.counts.astype(int).tolist()


@dataclass(frozen=True)
class ClassMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    average_f1: float

    def per_class(self) -> Dict[str, Dict[str, float]]:
        return {
            str(case): {"precision": float(p), "recall": float(r), "f1": float(f)}
            for case, p, r, f in zip(CASES, self.precision, self.recall, self.f1)
        }
