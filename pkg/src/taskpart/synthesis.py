"""Turn a feasible sharing spec into a concrete channel assignment.

Every channel gets a task-subset label.  The fraction of channels per subset
is a distribution over the 2^N subsets, and the spec entries are linear in
that distribution: task i's usage is the mass of subsets containing i, pair
(i, j)'s overlap is the mass of subsets containing both.  Synthesis therefore
runs in three stages: solve a simplex-constrained least-squares problem for
subset fractions, round the fractions to integer channel counts, then greedily
reassign single channels while that strictly reduces the error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .partition import ChannelMask, FeasibleSpec, SharingSpec, format_mask, format_matrix_rows, gram, pack_symmetric

__all__ = [
    "MAX_TASKS",
    "SubsetAllocation",
    "SynthesisReport",
    "subset_bits",
    "solve_fractions",
    "fractions_objective",
    "round_to_mask",
    "refine",
    "build_report",
    "synthesize",
    "format_report",
]

# Subset space is 2^N; keep it small enough to enumerate outright.
MAX_TASKS = 16


def subset_bits(n_tasks: int) -> np.ndarray:
    """Membership table: row s holds the indicator vector of subset s, where
    bit t of the row index marks task t."""
    if not 1 <= n_tasks <= MAX_TASKS:
        raise ValueError(f"n_tasks must be in [1, {MAX_TASKS}], got {n_tasks}")
    indices = np.arange(2**n_tasks, dtype=np.int64)
    return ((indices[:, None] >> np.arange(n_tasks)) & 1).astype(np.float64)


@dataclass(frozen=True, eq=False)
class SubsetAllocation:
    """Distribution over task subsets; fractions[s] is the share of channels
    assigned exactly the subset with bitmask s."""

    n_tasks: int
    fractions: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n_tasks <= MAX_TASKS:
            raise ValueError(f"n_tasks must be in [1, {MAX_TASKS}], got {self.n_tasks}")
        arr = np.array(self.fractions, dtype=np.float64)
        if arr.shape != (2**self.n_tasks,):
            raise ValueError(f"expected {2**self.n_tasks} subset fractions, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("subset fractions contain non-finite entries")
        if arr.min() < -1e-12:
            raise ValueError("subset fractions must be nonnegative")
        arr = np.maximum(arr, 0.0)
        if abs(arr.sum() - 1.0) > 1e-9:
            raise ValueError(f"subset fractions must sum to 1, got {arr.sum()}")
        arr.setflags(write=False)
        object.__setattr__(self, "fractions", arr)

    def spec_values(self) -> np.ndarray:
        """Sharing matrix implied by the distribution (before rounding)."""
        bits = subset_bits(self.n_tasks)
        return bits.T @ (bits * self.fractions[:, None])


@dataclass(frozen=True, eq=False)
class SynthesisReport:
    """A synthesized mask together with its fidelity against the target."""

    mask: ChannelMask
    target: FeasibleSpec
    achieved: SharingSpec
    elementwise_abs_error: np.ndarray
    median_error: float
    max_error: float

    def __post_init__(self):
        if self.mask.n_tasks != self.target.n_tasks:
            raise ValueError("mask and target disagree on the number of tasks")
        if not np.array_equal(self.achieved.values, gram(self.mask).values):
            raise ValueError("achieved spec must equal the mask's recovered spec")
        err = np.array(np.abs(self.achieved.values - self.target.values))
        if not np.array_equal(err, self.elementwise_abs_error):
            raise ValueError("elementwise error does not match achieved vs target")
        err.setflags(write=False)
        object.__setattr__(self, "elementwise_abs_error", err)
        unique = pack_symmetric(err)
        if self.median_error != float(np.median(unique)) or self.max_error != float(unique.max()):
            raise ValueError("error summary statistics are inconsistent")

    @property
    def n_channels(self) -> int:
        return self.mask.n_channels


def _constraint_system(target: FeasibleSpec) -> tuple[np.ndarray, np.ndarray]:
    """Linear system rows: one per task (usage), one per pair (overlap)."""
    n = target.n_tasks
    bits = subset_bits(n)
    rows = [bits[:, i] for i in range(n)]
    b = list(np.diag(target.values))
    for i in range(n):
        for j in range(i + 1, n):
            rows.append(bits[:, i] * bits[:, j])
            b.append(target.values[i, j])
    return np.array(rows), np.array(b)


def _project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    feasible = u - css / ks > 0.0
    rho = ks[feasible][-1]
    theta = css[feasible][-1] / rho
    return np.maximum(v - theta, 0.0)


def _top_eigenvalue(a: np.ndarray, iters: int = 80) -> float:
    """Largest eigenvalue of a^T a by power iteration from a fixed start."""
    v = np.full(a.shape[1], 1.0 / math.sqrt(a.shape[1]))
    lam = 1.0
    for _ in range(iters):
        w = a.T @ (a @ v)
        lam = float(np.linalg.norm(w))
        if lam <= 0.0:
            return 1.0
        v = w / lam
    return lam


def _fista(a: np.ndarray, b: np.ndarray, x0: np.ndarray, max_iter: int) -> tuple[np.ndarray, float]:
    """Projected accelerated gradient for min ||a x - b||^2 on the simplex."""
    step = 1.0 / (2.0 * _top_eigenvalue(a) * 1.05)

    def objective(x):
        r = a @ x - b
        return float(r @ r)

    x = _project_to_simplex(x0)
    y = x
    t = 1.0
    best_x, best_obj = x, objective(x)
    stall = 0
    for _ in range(max_iter):
        grad = 2.0 * (a.T @ (a @ y - b))
        x_new = _project_to_simplex(y - step * grad)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if float(np.dot(y - x_new, x_new - x)) > 0.0:
            # Momentum points uphill; restart it.
            y = x_new
            t_new = 1.0
        else:
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        obj = objective(x)
        if obj < best_obj - 1e-15:
            best_x, best_obj = x, obj
            stall = 0
        else:
            stall += 1
        if best_obj <= 1e-18 or stall >= 100:
            break
    return best_x, best_obj


def solve_fractions(
    target: FeasibleSpec,
    seed: int = 0,
    n_restarts: int = 4,
    max_iter: int = 1500,
) -> SubsetAllocation:
    """Least-squares subset distribution for a target spec.

    Starts from the independence distribution implied by the diagonal (each
    task joins a subset with probability equal to its usage), plus seeded
    uniform-simplex restarts; returns the best run.
    """
    a, b = _constraint_system(target)
    usage = np.diag(target.values)
    bits = subset_bits(target.n_tasks).astype(bool)
    warm = np.where(bits, usage[None, :], (1.0 - usage)[None, :]).prod(axis=1)
    starts = [warm]
    rng = np.random.default_rng(seed)
    for _ in range(n_restarts):
        starts.append(rng.dirichlet(np.ones(a.shape[1])))
    best_x, best_obj = None, math.inf
    for x0 in starts:
        x, obj = _fista(a, b, x0, max_iter)
        if obj < best_obj:
            best_x, best_obj = x, obj
    return SubsetAllocation(n_tasks=target.n_tasks, fractions=best_x)


def fractions_objective(alloc: SubsetAllocation, target: FeasibleSpec) -> float:
    """Summed squared error of the distribution against the target entries
    (usage terms plus one term per unordered pair)."""
    a, b = _constraint_system(target)
    r = a @ alloc.fractions - b
    return float(r @ r)


def round_to_mask(alloc: SubsetAllocation, n_channels: int) -> ChannelMask:
    """Largest-remainder rounding of subset fractions to channel counts.

    Channels come out grouped by subset in increasing bitmask order, so the
    result is a pure function of the allocation.
    """
    if n_channels < 1:
        raise ValueError(f"n_channels must be positive, got {n_channels}")
    scaled = alloc.fractions * n_channels
    base = np.floor(scaled).astype(np.int64)
    remainder = scaled - base
    deficit = n_channels - int(base.sum())
    if deficit > 0:
        order = np.argsort(-remainder, kind="stable")
        base[order[:deficit]] += 1
    elif deficit < 0:
        # Only reachable through accumulated rounding in the fractions; shed
        # the surplus from the smallest remainders that still have channels.
        order = np.argsort(remainder, kind="stable")
        for s in order:
            if deficit == 0:
                break
            if base[s] > 0:
                base[s] -= 1
                deficit += 1
    bits = subset_bits(alloc.n_tasks).astype(np.int8)
    return ChannelMask(np.repeat(bits, base, axis=0))


def refine(mask: ChannelMask, target: FeasibleSpec, max_passes: int = 8) -> SynthesisReport:
    """Greedy single-channel reassignment.

    Sweeps the channels in order; each channel moves to the subset that
    minimizes the summed squared error over unique spec entries, but only if
    that strictly beats its current subset (ties keep the lower bitmask).
    Stops after a sweep with no moves or after ``max_passes`` sweeps.
    """
    return build_report(_refine_mask(mask, target, max_passes), target)


def _refine_mask(mask: ChannelMask, target: FeasibleSpec, max_passes: int) -> ChannelMask:
    n = mask.n_tasks
    if n != target.n_tasks:
        raise ValueError("mask and target disagree on the number of tasks")
    if n > MAX_TASKS:
        raise ValueError(f"refine supports at most {MAX_TASKS} tasks, got {n}")
    bits = subset_bits(n)
    weights = (1 << np.arange(n)).astype(np.int64)
    chan_subset = mask.bits.astype(np.int64) @ weights
    counts = np.bincount(chan_subset, minlength=2**n).astype(np.float64)
    k = bits.T @ (bits * counts[:, None])
    t = target.values * mask.n_channels
    popcount = bits.sum(axis=1)
    # A candidate's own contribution to the error: its outer product has
    # (k^2 + k) / 2 ones over the diagonal-plus-upper-triangle entries.
    self_cost = 0.5 * (popcount**2 + popcount)
    for _ in range(max_passes):
        changed = False
        for c in range(mask.n_channels):
            s = int(chan_subset[c])
            u = bits[s]
            resid = k - np.outer(u, u) - t
            quad = ((bits @ resid) * bits).sum(axis=1)
            diag_part = bits @ np.diag(resid)
            scores = quad + diag_part + self_cost
            best = int(np.argmin(scores))
            if scores[best] < scores[s]:
                v = bits[best]
                k = k - np.outer(u, u) + np.outer(v, v)
                chan_subset[c] = best
                changed = True
        if not changed:
            break
    return ChannelMask(bits[chan_subset].astype(np.int8))


def build_report(mask: ChannelMask, target: FeasibleSpec) -> SynthesisReport:
    achieved = gram(mask)
    abs_error = np.abs(achieved.values - target.values)
    unique = pack_symmetric(abs_error)
    return SynthesisReport(
        mask=mask,
        target=target,
        achieved=achieved,
        elementwise_abs_error=abs_error,
        median_error=float(np.median(unique)),
        max_error=float(unique.max()),
    )


def synthesize(
    target: FeasibleSpec,
    n_channels: int,
    seed: int = 0,
    max_passes: int = 8,
    n_restarts: int = 4,
    max_iter: int = 1500,
) -> SynthesisReport:
    """Full pipeline: solve fractions, round to counts, refine channel by
    channel.  Deterministic given (target, n_channels, seed)."""
    alloc = solve_fractions(target, seed=seed, n_restarts=n_restarts, max_iter=max_iter)
    mask = round_to_mask(alloc, n_channels)
    return refine(mask, target, max_passes=max_passes)


def format_report(report: SynthesisReport) -> str:
    lines = [
        f"tasks {report.target.n_tasks} channels {report.n_channels}",
        f"median_error {report.median_error!r}",
        f"max_error {report.max_error!r}",
        "target",
        *format_matrix_rows(report.target.values),
        "achieved",
        *format_matrix_rows(report.achieved.values),
        "abs_error",
        *format_matrix_rows(report.elementwise_abs_error),
        "mask",
        format_mask(report.mask).rstrip("\n"),
    ]
    return "\n".join(lines) + "\n"
