"""Sharing-spec matrices and the channel masks that realize them.

A sharing spec is a symmetric N x N matrix of fractions: the diagonal gives
each task's share of the channel budget, the off-diagonals give pairwise
overlap.  Raw specs live in the full unit box; `constrain` remaps each
off-diagonal into the interval of overlaps actually attainable given the two
diagonal entries, producing a feasible spec.  A channel mask is the concrete
C x N binary assignment; `gram` recovers the spec a mask achieves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SharingSpec",
    "FeasibleSpec",
    "ChannelMask",
    "TaskMaskPair",
    "constrain",
    "gram",
    "avg_usage",
    "task_masks",
    "overlap_bounds",
    "pack_symmetric",
    "unpack_symmetric",
    "format_spec",
    "parse_sharing_spec",
    "parse_feasible_spec",
    "format_mask",
    "parse_mask",
]

# Absorbs ulp-level rounding when bounds are recomputed from a quotient
# diagonal (e.g. gram of a mask with C not a power of two).  `constrain`
# itself satisfies the bounds with zero tolerance by construction.
_BOUND_TOL = 1e-12


def _as_square_matrix(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{what} needs at least one task")
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite entries")
    return arr


def _check_symmetric_unit(arr: np.ndarray, what: str) -> None:
    if not np.array_equal(arr, arr.T):
        raise ValueError(f"{what} must be symmetric")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{what} entries must lie in [0, 1]")


def overlap_bounds(diagonal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise overlap interval implied by per-task usage fractions.

    Returns (lower, upper) N x N matrices: two tasks using fractions a and b
    of the same budget must overlap by at least a + b - 1 (if positive) and
    can overlap by at most min(a, b).
    """
    d = np.asarray(diagonal, dtype=np.float64)
    dcol = d[:, None]
    lower = np.maximum(0.0, dcol + dcol.T - 1.0)
    upper = np.minimum(dcol, dcol.T)
    return lower, upper


@dataclass(frozen=True, eq=False)
class SharingSpec:
    """Symmetric matrix of usage (diagonal) and pairwise sharing fractions."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_square_matrix(self.values, "sharing spec")
        _check_symmetric_unit(arr, "sharing spec")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_tasks(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class FeasibleSpec:
    """Sharing spec whose off-diagonals respect the overlap bounds."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_square_matrix(self.values, "feasible spec")
        _check_symmetric_unit(arr, "feasible spec")
        lower, upper = overlap_bounds(np.diag(arr))
        off = ~np.eye(arr.shape[0], dtype=bool)
        if (arr[off] < lower[off] - _BOUND_TOL).any():
            raise ValueError("feasible spec has an off-diagonal below the overlap lower bound")
        if (arr[off] > upper[off] + _BOUND_TOL).any():
            raise ValueError("feasible spec has an off-diagonal above the overlap upper bound")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_tasks(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class ChannelMask:
    """Binary C x N matrix; bits[c, t] == 1 assigns channel c to task t."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.bits)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("mask needs at least one channel and one task")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        arr = arr.astype(np.int8)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def n_channels(self) -> int:
        return self.bits.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True, eq=False)
class TaskMaskPair:
    """Per-task forward/backward channel masks; backward support is a subset
    of forward support."""

    forward: np.ndarray
    backward: np.ndarray

    def __post_init__(self):
        fwd = np.array(self.forward, dtype=np.int8)
        bwd = np.array(self.backward, dtype=np.int8)
        if fwd.ndim != 1 or bwd.shape != fwd.shape:
            raise ValueError("forward and backward masks must be equal-length vectors")
        for name, vec in (("forward", fwd), ("backward", bwd)):
            if not np.isin(vec, (0, 1)).all():
                raise ValueError(f"{name} mask entries must be 0 or 1")
        if (bwd > fwd).any():
            raise ValueError("backward mask support must be a subset of the forward mask")
        fwd.setflags(write=False)
        bwd.setflags(write=False)
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "backward", bwd)


def constrain(spec: SharingSpec) -> FeasibleSpec:
    """Remap raw off-diagonals into the attainable overlap interval.

    The diagonal is copied unchanged.  A raw off-diagonal of 0 lands exactly
    on the interval's lower endpoint and 1 exactly on the upper endpoint;
    values in between interpolate linearly.
    """
    p = np.clip(spec.values, 0.0, 1.0)
    n = p.shape[0]
    lower, upper = overlap_bounds(np.diag(p))
    out = lower + p * (upper - lower)
    # Exact endpoints and bound satisfaction regardless of rounding in the
    # interval width.
    out = np.minimum(out, upper)
    out = np.where(p == 1.0, upper, out)
    eye = np.eye(n, dtype=bool)
    out[eye] = p[eye]
    return FeasibleSpec(out)


def gram(mask: ChannelMask) -> SharingSpec:
    """Spec achieved by a mask: fraction of channels used per task on the
    diagonal, fraction shared per pair off it."""
    bits = mask.bits.astype(np.int64)
    counts = bits.T @ bits
    return SharingSpec(counts / mask.n_channels)


def avg_usage(spec: SharingSpec | FeasibleSpec) -> float:
    """Mean of the diagonal: the average fraction of channels a task uses."""
    return float(np.mean(np.diag(spec.values)))


def task_masks(mask: ChannelMask, task: int, trainable_only_owned: bool = False) -> TaskMaskPair:
    """Forward/backward mask vectors for one task.

    The forward mask is the task's column of the assignment matrix.  By
    default the backward mask equals it; with ``trainable_only_owned`` the
    backward mask keeps only channels no other task uses, so shared channels
    are read but never updated by this task.
    """
    if not 0 <= task < mask.n_tasks:
        raise IndexError(f"task {task} out of range for {mask.n_tasks} tasks")
    forward = mask.bits[:, task].copy()
    if trainable_only_owned:
        exclusive = (forward == 1) & (mask.bits.sum(axis=1) == 1)
        backward = exclusive.astype(np.int8)
    else:
        backward = forward.copy()
    return TaskMaskPair(forward=forward, backward=backward)


def pack_symmetric(values: np.ndarray) -> np.ndarray:
    """Free coordinates of a symmetric matrix: diagonal, then the upper
    triangle row-major."""
    arr = np.asarray(values, dtype=np.float64)
    n = arr.shape[0]
    iu = np.triu_indices(n, k=1)
    return np.concatenate([np.diag(arr), arr[iu]])


def unpack_symmetric(free: np.ndarray, n_tasks: int) -> np.ndarray:
    """Inverse of :func:`pack_symmetric`; mirrors the upper triangle down."""
    free = np.asarray(free, dtype=np.float64)
    expected = n_tasks * (n_tasks + 1) // 2
    if free.shape != (expected,):
        raise ValueError(f"expected {expected} free entries for {n_tasks} tasks, got {free.shape}")
    out = np.diag(free[:n_tasks]).astype(np.float64)
    iu = np.triu_indices(n_tasks, k=1)
    out[iu] = free[n_tasks:]
    out[(iu[1], iu[0])] = free[n_tasks:]
    return out


# --- structured-text serialization -----------------------------------------
#
# Spec files: an "tasks N" header followed by N rows of N decimal entries.
# Mask files: a "channels C tasks N" header followed by one row of N 0/1
# digits per channel.


def format_matrix_rows(values: np.ndarray) -> list[str]:
    return [" ".join(repr(float(x)) for x in row) for row in np.asarray(values)]


def format_spec(spec: SharingSpec | FeasibleSpec) -> str:
    lines = [f"tasks {spec.n_tasks}"]
    lines.extend(format_matrix_rows(spec.values))
    return "\n".join(lines) + "\n"


def _parse_matrix_body(lines: list[str], n: int, what: str) -> np.ndarray:
    if len(lines) != n:
        raise ValueError(f"{what}: expected {n} matrix rows, got {len(lines)}")
    rows = []
    for i, line in enumerate(lines):
        toks = line.split()
        if len(toks) != n:
            raise ValueError(f"{what}: row {i} has {len(toks)} entries, expected {n}")
        try:
            rows.append([float(t) for t in toks])
        except ValueError as exc:
            raise ValueError(f"{what}: row {i} is not numeric: {exc}") from None
    return np.array(rows, dtype=np.float64)


def _spec_matrix_from_text(text: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValueError("spec text is empty")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "tasks":
        raise ValueError(f"spec text must start with 'tasks N', got {lines[0]!r}")
    try:
        n = int(head[1])
    except ValueError:
        raise ValueError(f"invalid task count {head[1]!r}") from None
    return _parse_matrix_body(lines[1:], n, "spec text")


def parse_sharing_spec(text: str) -> SharingSpec:
    return SharingSpec(_spec_matrix_from_text(text))


def parse_feasible_spec(text: str) -> FeasibleSpec:
    return FeasibleSpec(_spec_matrix_from_text(text))


def format_mask(mask: ChannelMask) -> str:
    lines = [f"channels {mask.n_channels} tasks {mask.n_tasks}"]
    lines.extend("".join(str(int(b)) for b in row) for row in mask.bits)
    return "\n".join(lines) + "\n"


def parse_mask(text: str) -> ChannelMask:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValueError("mask text is empty")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "channels" or head[2] != "tasks":
        raise ValueError(f"mask text must start with 'channels C tasks N', got {lines[0]!r}")
    try:
        n_channels, n_tasks = int(head[1]), int(head[3])
    except ValueError:
        raise ValueError(f"invalid mask header {lines[0]!r}") from None
    body = lines[1:]
    if len(body) != n_channels:
        raise ValueError(f"mask text: expected {n_channels} channel rows, got {len(body)}")
    bits = np.zeros((n_channels, n_tasks), dtype=np.int8)
    for c, row in enumerate(body):
        if len(row) != n_tasks or set(row) - {"0", "1"}:
            raise ValueError(f"mask text: row {c} must be {n_tasks} binary digits, got {row!r}")
        bits[c] = [int(ch) for ch in row]
    return ChannelMask(bits)
