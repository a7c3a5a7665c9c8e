"""Evaluators score a feasible sharing spec; this module holds the report
type, a closed-form synthetic evaluator for fast experiments, and the
curriculum distribution used to pick which task trains next.

The synthetic score per task is a saturating return on its own capacity minus
a linear interference penalty on each pairwise overlap:

    score_i = gain_i * (1 - exp(-saturation_i * usage_i))
              - sum_j interference_ij * overlap_ij

With negative interference entries, sharing helps some pairs and hurts
others, which gives search something nontrivial to trade off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .partition import FeasibleSpec, avg_usage

__all__ = [
    "EvalReport",
    "Evaluator",
    "SyntheticTaskProfile",
    "synthetic_score",
    "make_synthetic_evaluator",
    "curriculum_probabilities",
    "curriculum_sample",
]


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-task scores, their mean, and the resource level they were bought
    at.  ``synthesis_median_error`` is set only by evaluators that build a
    concrete mask on the way to a score."""

    per_task_scores: np.ndarray
    aggregate: float
    avg_usage: float
    evaluator_id: str
    synthesis_median_error: float | None = None

    def __post_init__(self):
        arr = np.array(self.per_task_scores, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError(f"per-task scores must be a nonempty vector, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("per-task scores contain non-finite entries")
        if not np.isfinite(self.aggregate):
            raise ValueError("aggregate score is not finite")
        if abs(self.aggregate - arr.mean()) > 1e-12:
            raise ValueError("aggregate must equal the mean of the per-task scores")
        if not 0.0 <= self.avg_usage <= 1.0:
            raise ValueError(f"avg_usage must lie in [0, 1], got {self.avg_usage}")
        arr.setflags(write=False)
        object.__setattr__(self, "per_task_scores", arr)

    @classmethod
    def from_scores(
        cls,
        scores,
        spec: FeasibleSpec,
        evaluator_id: str,
        synthesis_median_error: float | None = None,
    ) -> "EvalReport":
        arr = np.asarray(scores, dtype=np.float64)
        return cls(
            per_task_scores=arr,
            aggregate=float(arr.mean()),
            avg_usage=avg_usage(spec),
            evaluator_id=evaluator_id,
            synthesis_median_error=synthesis_median_error,
        )

    @property
    def n_tasks(self) -> int:
        return self.per_task_scores.size


Evaluator = Callable[[FeasibleSpec], EvalReport]


@dataclass(frozen=True, eq=False)
class SyntheticTaskProfile:
    """Parameters of the closed-form evaluator: per-task gain and saturation
    rate, and a symmetric zero-diagonal interference matrix."""

    capacity_gain: np.ndarray
    saturation: np.ndarray
    interference: np.ndarray

    def __post_init__(self):
        gain = np.array(self.capacity_gain, dtype=np.float64)
        sat = np.array(self.saturation, dtype=np.float64)
        inter = np.array(self.interference, dtype=np.float64)
        n = gain.size
        if gain.ndim != 1 or n < 1:
            raise ValueError("capacity_gain must be a nonempty vector")
        if sat.shape != (n,):
            raise ValueError("saturation must match capacity_gain in length")
        if inter.shape != (n, n):
            raise ValueError("interference must be square and match capacity_gain")
        for name, arr in (("capacity_gain", gain), ("saturation", sat), ("interference", inter)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite entries")
        if (gain <= 0.0).any() or (sat <= 0.0).any():
            raise ValueError("capacity_gain and saturation must be strictly positive")
        if not np.array_equal(inter, inter.T):
            raise ValueError("interference must be symmetric")
        if np.diag(inter).any():
            raise ValueError("interference diagonal must be zero")
        for arr in (gain, sat, inter):
            arr.setflags(write=False)
        object.__setattr__(self, "capacity_gain", gain)
        object.__setattr__(self, "saturation", sat)
        object.__setattr__(self, "interference", inter)

    @property
    def n_tasks(self) -> int:
        return self.capacity_gain.size

    @classmethod
    def random(
        cls,
        n_tasks: int,
        seed: int,
        gain_range: tuple[float, float] = (0.8, 1.2),
        saturation_range: tuple[float, float] = (2.0, 4.0),
        interference_range: tuple[float, float] = (-0.05, 0.25),
    ) -> "SyntheticTaskProfile":
        """Seeded random profile.  The default interference range straddles
        zero, so some pairs benefit from overlap while most pay for it."""
        rng = np.random.default_rng(seed)
        gain = rng.uniform(*gain_range, size=n_tasks)
        sat = rng.uniform(*saturation_range, size=n_tasks)
        inter = np.zeros((n_tasks, n_tasks))
        iu = np.triu_indices(n_tasks, k=1)
        draws = rng.uniform(*interference_range, size=iu[0].size)
        inter[iu] = draws
        inter[(iu[1], iu[0])] = draws
        return cls(capacity_gain=gain, saturation=sat, interference=inter)


def synthetic_score(spec: FeasibleSpec, profile: SyntheticTaskProfile) -> EvalReport:
    if spec.n_tasks != profile.n_tasks:
        raise ValueError(f"profile has {profile.n_tasks} tasks, spec has {spec.n_tasks}")
    p = spec.values
    usage = np.diag(p)
    capacity_term = profile.capacity_gain * (1.0 - np.exp(-profile.saturation * usage))
    penalty = (profile.interference * p).sum(axis=1)
    return EvalReport.from_scores(capacity_term - penalty, spec, "synthetic")


def make_synthetic_evaluator(profile: SyntheticTaskProfile) -> Evaluator:
    def evaluate(spec: FeasibleSpec) -> EvalReport:
        return synthetic_score(spec, profile)

    return evaluate


def curriculum_probabilities(scores, temperature: float) -> np.ndarray:
    """Softmax over score deficits: task i is picked with probability
    proportional to exp((1 - score_i) / temperature)."""
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    arr = np.asarray(scores, dtype=np.float64)
    logits = (1.0 - arr) / temperature
    logits = logits - logits.max()
    weights = np.exp(logits)
    return weights / weights.sum()


def curriculum_sample(scores, temperature: float, rng: np.random.Generator) -> int:
    probs = curriculum_probabilities(scores, temperature)
    return int(rng.choice(probs.size, p=probs))
