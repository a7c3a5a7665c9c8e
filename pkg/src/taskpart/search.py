"""Black-box search over sharing specs.

Two strategies: independent uniform sampling, and a finite-difference
evolution strategy that estimates an ascent direction from paired +/-
perturbations of the raw spec.  Every candidate is clamped to the unit box,
remapped through `constrain`, and scored by a pluggable evaluator; every
evaluation is appended to the run history in a fixed order so equal seeds
reproduce identical runs.  A weight-decay term on the diagonal pressures the
search toward lower channel usage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .evaluation import Evaluator
from .partition import FeasibleSpec, SharingSpec, constrain, unpack_symmetric

__all__ = [
    "BASELINE_KINDS",
    "EsConfig",
    "SamplerConfig",
    "HistoryRecord",
    "SearchRun",
    "sample_random",
    "es_step",
    "run_search",
    "evaluate_spec",
    "baseline_spec",
    "baseline_label",
    "evaluate_baselines",
    "best_record",
]

BASELINE_KINDS = ("independent", "share_half", "share_all")


def _check_seed(seed: int) -> None:
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed!r}")


@dataclass(frozen=True)
class EsConfig:
    """Evolution-strategy settings.

    Each step draws ``n_directions`` symmetric perturbation matrices, scores
    both signs of each at scale ``perturb_std``, and moves the center by
    ``step_size`` along the reward-weighted average direction, dividing by
    the reward standard deviation when ``reward_normalize`` is on.
    ``diag_weight_decay`` shrinks the diagonal after every step.
    """

    n_tasks: int
    n_steps: int
    seed: int
    n_directions: int = 16
    step_size: float = 0.1
    perturb_std: float = 0.05
    diag_weight_decay: float = 1e-3
    reward_normalize: bool = True

    def __post_init__(self):
        if self.n_tasks < 1:
            raise ValueError(f"n_tasks must be positive, got {self.n_tasks}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be nonnegative, got {self.n_steps}")
        _check_seed(self.seed)
        if self.n_directions < 1:
            raise ValueError(f"n_directions must be at least 1, got {self.n_directions}")
        if not self.step_size > 0.0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if not self.perturb_std > 0.0:
            raise ValueError(f"perturb_std must be positive, got {self.perturb_std}")
        if self.diag_weight_decay < 0.0:
            raise ValueError(f"diag_weight_decay must be nonnegative, got {self.diag_weight_decay}")


@dataclass(frozen=True)
class SamplerConfig:
    """Settings for independent uniform sampling, optionally constrained to
    an average-usage band."""

    n_tasks: int
    n_steps: int
    seed: int
    usage_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.n_tasks < 1:
            raise ValueError(f"n_tasks must be positive, got {self.n_tasks}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be nonnegative, got {self.n_steps}")
        _check_seed(self.seed)
        if self.usage_range is not None:
            lo, hi = self.usage_range
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"usage_range must satisfy 0 <= lo <= hi <= 1, got {self.usage_range}")
            object.__setattr__(self, "usage_range", (float(lo), float(hi)))


@dataclass(frozen=True, eq=False)
class HistoryRecord:
    """One scored candidate: the raw spec proposed by the searcher, the
    feasible spec the evaluator saw, and the resulting report."""

    step: int
    kind: str
    raw: SharingSpec
    feasible: FeasibleSpec
    report: EvalReport

    @property
    def aggregate(self) -> float:
        return self.report.aggregate

    @property
    def avg_usage(self) -> float:
        return self.report.avg_usage


@dataclass
class SearchRun:
    """Single-owner mutable search state; advanced one step at a time."""

    config: EsConfig | SamplerConfig
    rng: np.random.Generator
    current_raw: np.ndarray | None = None
    history: list[HistoryRecord] = field(default_factory=list)
    next_step: int = 0


OnRecord = Callable[[HistoryRecord], None]


def _emit(on_record: OnRecord | None, record: HistoryRecord) -> None:
    if on_record is not None:
        on_record(record)


def _readonly(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=np.float64)
    out.setflags(write=False)
    return out


def _uniform_spec_values(n_tasks: int, rng: np.random.Generator) -> np.ndarray:
    # Draw order is part of the determinism contract: upper triangle first,
    # then the diagonal.
    values = np.zeros((n_tasks, n_tasks))
    iu = np.triu_indices(n_tasks, k=1)
    off = rng.uniform(size=iu[0].size)
    values[iu] = off
    values[(iu[1], iu[0])] = off
    values[np.diag_indices(n_tasks)] = rng.uniform(size=n_tasks)
    return values


def _rescale_diagonal(diag: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Affine squeeze of the diagonal so its mean lands mid-range, keeping
    every entry inside [0, 1].  Degenerate ranges become exact constants."""
    target = 0.5 * (lo + hi)
    if hi - lo <= 1e-12:
        return np.full(diag.size, target)
    dev = diag - diag.mean()
    scale = 1.0
    if dev.max() > 0.0:
        scale = min(scale, (1.0 - target) / dev.max())
    if dev.min() < 0.0:
        scale = min(scale, target / -dev.min())
    return np.clip(target + scale * dev, 0.0, 1.0)


def _sample_raw(n_tasks: int, usage_range: tuple[float, float] | None, rng: np.random.Generator) -> np.ndarray:
    values = _uniform_spec_values(n_tasks, rng)
    if usage_range is None:
        return values
    lo, hi = usage_range
    diag = np.diag(values).copy()
    attempts = 0
    while not lo <= float(diag.mean()) <= hi:
        if attempts >= 10000:
            diag = _rescale_diagonal(diag, lo, hi)
            break
        diag = rng.uniform(size=n_tasks)
        attempts += 1
    values[np.diag_indices(n_tasks)] = diag
    return values


def sample_random(n_tasks: int, usage_range: tuple[float, float] | None = None, seed: int = 0) -> SharingSpec:
    """One uniform raw spec; the diagonal is rejection-sampled into the
    usage band when one is given (capped, then affinely rescaled)."""
    if usage_range is not None:
        lo, hi = usage_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"usage_range must satisfy 0 <= lo <= hi <= 1, got {usage_range}")
    _check_seed(seed)
    rng = np.random.default_rng(seed)
    return SharingSpec(_sample_raw(n_tasks, usage_range, rng))


def _evaluate(step: int, kind: str, raw_values: np.ndarray, evaluator: Evaluator) -> HistoryRecord:
    raw = SharingSpec(_readonly(raw_values))
    feasible = constrain(raw)
    report = evaluator(feasible)
    return HistoryRecord(step=step, kind=kind, raw=raw, feasible=feasible, report=report)


def evaluate_spec(spec: SharingSpec, evaluator: Evaluator, step: int = 0, kind: str = "eval") -> HistoryRecord:
    """Score one raw spec through the standard remap-then-evaluate path."""
    return _evaluate(step, kind, spec.values, evaluator)


def es_step(run: SearchRun, evaluator: Evaluator, on_record: OnRecord | None = None) -> SearchRun:
    """One evolution-strategy update.

    Scores the current center, then both signs of ``n_directions`` Gaussian
    perturbations (2k evaluator calls), and commits the updated center plus
    all records at once.  If the evaluator raises, the run's state, including
    its generator, is left untouched; records already streamed through
    ``on_record`` stay in the log as an audit trail.
    """
    cfg = run.config
    if not isinstance(cfg, EsConfig):
        raise TypeError("es_step requires a SearchRun built from an EsConfig")
    if run.current_raw is None:
        raise ValueError("run has no current center")
    n = cfg.n_tasks
    n_free = n * (n + 1) // 2
    saved_rng_state = run.rng.bit_generator.state
    try:
        center = np.asarray(run.current_raw)
        buffer = []
        step = run.next_step
        record = _evaluate(step, "center", center, evaluator)
        buffer.append(record)
        _emit(on_record, record)
        step += 1

        free_dirs = run.rng.standard_normal((cfg.n_directions, n_free))
        rewards = np.zeros((cfg.n_directions, 2))
        for l in range(cfg.n_directions):
            delta = unpack_symmetric(free_dirs[l], n)
            for column, sign in enumerate((1.0, -1.0)):
                perturbed = np.clip(center + sign * cfg.perturb_std * delta, 0.0, 1.0)
                record = _evaluate(step, "perturb", perturbed, evaluator)
                buffer.append(record)
                _emit(on_record, record)
                step += 1
                rewards[l, column] = record.aggregate

        sigma = 1.0
        if cfg.reward_normalize:
            spread = float(np.std(rewards))
            if spread >= 1e-12:
                sigma = spread
        grad_free = (rewards[:, 0] - rewards[:, 1]) @ free_dirs / (cfg.n_directions * sigma)
        new_center = np.clip(center + cfg.step_size * unpack_symmetric(grad_free, n), 0.0, 1.0)
        di = np.diag_indices(n)
        decayed = new_center[di] - cfg.step_size * 2.0 * cfg.diag_weight_decay * new_center[di]
        new_center[di] = np.clip(decayed, 0.0, 1.0)
    except Exception:
        run.rng.bit_generator.state = saved_rng_state
        raise
    run.current_raw = _readonly(new_center)
    run.history.extend(buffer)
    run.next_step = step
    return run


def run_search(
    config: EsConfig | SamplerConfig,
    evaluator: Evaluator,
    mode: str = "es",
    on_record: OnRecord | None = None,
) -> SearchRun:
    """Run a full search.

    ``es`` starts from a uniform-random center, applies ``n_steps`` updates,
    then scores the final center (so n_steps=0 yields exactly one center
    evaluation).  ``random`` scores ``n_steps`` independent samples.
    """
    if mode == "es":
        if not isinstance(config, EsConfig):
            raise TypeError("es mode requires an EsConfig")
        rng = np.random.default_rng(config.seed)
        run = SearchRun(config=config, rng=rng, current_raw=_readonly(_uniform_spec_values(config.n_tasks, rng)))
        for _ in range(config.n_steps):
            es_step(run, evaluator, on_record)
        record = _evaluate(run.next_step, "center", run.current_raw, evaluator)
        run.history.append(record)
        _emit(on_record, record)
        run.next_step += 1
        return run
    if mode == "random":
        if not isinstance(config, SamplerConfig):
            raise TypeError("random mode requires a SamplerConfig")
        rng = np.random.default_rng(config.seed)
        run = SearchRun(config=config, rng=rng)
        for _ in range(config.n_steps):
            raw = _sample_raw(config.n_tasks, config.usage_range, rng)
            record = _evaluate(run.next_step, "sample", raw, evaluator)
            run.current_raw = record.raw.values
            run.history.append(record)
            _emit(on_record, record)
            run.next_step += 1
        return run
    raise ValueError(f"unknown search mode {mode!r}")


def baseline_spec(kind: str, n_tasks: int) -> SharingSpec:
    """Fixed reference points: an even disjoint split, half the budget shared
    plus an even split of the rest, or everything shared by every task."""
    if n_tasks < 1:
        raise ValueError(f"n_tasks must be positive, got {n_tasks}")
    if kind == "independent":
        values = np.diag(np.full(n_tasks, 1.0 / n_tasks))
    elif kind == "share_half":
        values = np.full((n_tasks, n_tasks), 0.5)
        values[np.diag_indices(n_tasks)] = 0.5 + 0.5 / n_tasks
    elif kind == "share_all":
        values = np.ones((n_tasks, n_tasks))
    else:
        raise ValueError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    return SharingSpec(values)


def baseline_label(kind: str) -> str:
    return kind.replace("_", " ")


def evaluate_baselines(
    n_tasks: int,
    evaluator: Evaluator,
    kinds: tuple[str, ...] = BASELINE_KINDS,
    start_step: int = 0,
    on_record: OnRecord | None = None,
) -> list[HistoryRecord]:
    """Score the fixed baselines in table order.

    Baseline matrices already satisfy the overlap bounds, so they are
    evaluated verbatim rather than remapped through `constrain`.
    """
    records = []
    for offset, kind in enumerate(kinds):
        raw = baseline_spec(kind, n_tasks)
        feasible = FeasibleSpec(raw.values)
        report = evaluator(feasible)
        record = HistoryRecord(
            step=start_step + offset,
            kind=f"baseline:{kind}",
            raw=raw,
            feasible=feasible,
            report=report,
        )
        records.append(record)
        _emit(on_record, record)
    return records


def best_record(records, usage_cap: float | None = None) -> HistoryRecord | None:
    """Highest-aggregate record, optionally restricted to runs at or below a
    usage cap; earliest record wins ties."""
    eligible = [r for r in records if usage_cap is None or r.avg_usage <= usage_cap]
    if not eligible:
        return None
    return max(eligible, key=lambda r: r.aggregate)
