"""Run records shared by the recursive filters and the factor-graph solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import StateVector


@dataclass
class IterationTrace:
    """Per-iteration (estimate, whitened residual 2-norm) pairs for one update.

    Entry j holds the state reached after iteration j and the whitened stacked
    residual norm evaluated at that state. Single-pass updates produce exactly
    one entry.
    """

    entries: list = field(default_factory=list)

    def append(self, estimate: np.ndarray, residual_norm: float):
        self.entries.append((np.array(estimate, dtype=float), float(residual_norm)))

    def __len__(self):
        return len(self.entries)

    @property
    def first_norm(self) -> float:
        return self.entries[0][1]

    @property
    def final_norm(self) -> float:
        return self.entries[-1][1]

    def norms(self) -> list:
        return [norm for _, norm in self.entries]


@dataclass
class EpochRecord:
    """One epoch of estimator output."""

    estimate: StateVector
    covariance: np.ndarray
    trace: IterationTrace
    runtime_s: float


@dataclass
class RunReport:
    """Full single-dataset estimator run: the unit every benchmark consumes."""

    estimator: str
    config: dict
    scheme_name: str
    seed: int
    records: list

    @property
    def epochs(self) -> int:
        return len(self.records)

    def estimates_array(self) -> np.ndarray:
        return np.array([rec.estimate.as_array() for rec in self.records])

    def positions(self) -> np.ndarray:
        return np.array([rec.estimate.position() for rec in self.records])

    def runtimes(self) -> np.ndarray:
        return np.array([rec.runtime_s for rec in self.records])
