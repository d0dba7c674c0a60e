"""Operation counters used for the cost side of the cost-vs-MSE study."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class CostCounter:
    """Monotone counters of the work done by a run.

    euler_steps counts solver grid cells: simulated time over the step size,
    summed over legs, so it doubles exactly per level. poisson_candidates
    counts candidate-processing events, one per candidate per leg; the field
    evaluations spent re-anchoring the grid at jumps are proportional to the
    event count and ride with the candidates. likelihood_evals counts
    observation-density evaluations, which are level-independent. The
    headline total is euler_steps + poisson_candidates.
    """

    euler_steps: int = 0
    poisson_candidates: int = 0
    likelihood_evals: int = 0

    def add(self, euler: int = 0, candidates: int = 0, likelihood: int = 0) -> None:
        if euler < 0 or candidates < 0 or likelihood < 0:
            raise ValueError("cost increments must be non-negative")
        self.euler_steps += euler
        self.poisson_candidates += candidates
        self.likelihood_evals += likelihood

    def add_stats(self, stats: dict) -> None:
        self.add(euler=stats.get("euler_steps", 0),
                 candidates=stats.get("candidates", 0))

    @property
    def total(self) -> int:
        return self.euler_steps + self.poisson_candidates

    def merge(self, other: "CostCounter") -> None:
        self.add(euler=other.euler_steps, candidates=other.poisson_candidates,
                 likelihood=other.likelihood_evals)
