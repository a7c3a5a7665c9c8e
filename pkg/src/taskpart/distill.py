"""Desk-scale feature-distillation evaluator.

A single student MLP serves every task; channel masks from a synthesized
assignment decide which hidden units each task may read (forward mask) and
update (backward mask).  Each task has a fixed randomly initialized teacher
of the same architecture, and training minimizes the MSE between masked
student features and teacher features on random input batches.  Tasks are
interleaved by curriculum sampling, with separate momentum buffers per task.

Backpropagation is written out by hand so the backward-mask zeroing is exact:
gradient rows and columns that touch a masked-out channel are multiplied by
0.0, and a frozen parameter survives an SGD step bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evaluation import EvalReport, Evaluator, curriculum_sample
from .partition import ChannelMask, FeasibleSpec, task_masks
from .synthesis import synthesize

__all__ = [
    "ToyDistillationSetup",
    "DistillationRun",
    "layer_shapes",
    "masked_sites",
    "masked_forward",
    "masked_backward",
    "distill_score",
    "full_train_score",
    "make_distill_evaluator",
    "make_full_train_evaluator",
]

# Smoothing for the per-task running-loss estimate driving the curriculum.
_EMA_COEF = 0.1


def layer_shapes(n_channels: int, input_dim: int, output_dim: int, n_layers: int) -> list[tuple[int, int]]:
    """(out_dim, in_dim) per affine layer: input_dim in, hidden layers
    n_channels wide, output_dim out."""
    if n_layers < 2:
        raise ValueError(f"need at least 2 layers, got {n_layers}")
    shapes = [(n_channels, input_dim)]
    shapes.extend((n_channels, n_channels) for _ in range(n_layers - 2))
    shapes.append((output_dim, n_channels))
    return shapes


def masked_sites(n_layers: int) -> tuple[int, ...]:
    """Indices of layers whose output gets the forward mask: every other
    hidden layer, starting with the first."""
    return tuple(l for l in range(n_layers - 1) if l % 2 == 0)


def masked_forward(weights, biases, x: np.ndarray, forward_mask=None) -> np.ndarray:
    """Forward pass: affine + max(0, .) on all but the last layer, with the
    channel mask multiplied in after every other hidden layer."""
    n_layers = len(weights)
    sites = set(masked_sites(n_layers))
    fmask = None if forward_mask is None else np.asarray(forward_mask, dtype=np.float64)
    a = x
    for l in range(n_layers):
        z = a @ weights[l].T + biases[l]
        if l < n_layers - 1:
            a = np.maximum(z, 0.0)
            if fmask is not None and l in sites:
                a = a * fmask
        else:
            a = z
    return a


def masked_backward(weights, biases, x, target, forward_mask, backward_mask):
    """MSE loss against ``target`` and its hand-derived parameter gradients.

    Returns (loss, weight_grads, bias_grads).  The forward mask participates
    in the computation graph; the backward mask then zeroes every gradient
    row/column belonging to a channel it excludes (0/1 multiply, so the
    zeroes are exact).
    """
    n_layers = len(weights)
    sites = set(masked_sites(n_layers))
    fmask = None if forward_mask is None else np.asarray(forward_mask, dtype=np.float64)

    pre = []
    acts = [x]
    a = x
    for l in range(n_layers):
        z = a @ weights[l].T + biases[l]
        pre.append(z)
        if l < n_layers - 1:
            h = np.maximum(z, 0.0)
            if fmask is not None and l in sites:
                h = h * fmask
        else:
            h = z
        acts.append(h)
        a = h

    diff = acts[-1] - target
    loss = float(np.mean(diff * diff))
    dz = 2.0 * diff / diff.size
    weight_grads = [None] * n_layers
    bias_grads = [None] * n_layers
    for l in reversed(range(n_layers)):
        weight_grads[l] = dz.T @ acts[l]
        bias_grads[l] = dz.sum(axis=0)
        if l > 0:
            da = dz @ weights[l]
            below = l - 1
            if fmask is not None and below in sites:
                da = da * fmask
            dz = da * (pre[below] > 0.0)

    if backward_mask is not None:
        bmask = np.asarray(backward_mask, dtype=np.float64)
        for l in range(n_layers):
            if l < n_layers - 1:
                weight_grads[l] = weight_grads[l] * bmask[:, None]
                bias_grads[l] = bias_grads[l] * bmask
            if l > 0:
                weight_grads[l] = weight_grads[l] * bmask[None, :]
    return loss, weight_grads, bias_grads


@dataclass(frozen=True, eq=False)
class ToyDistillationSetup:
    """Architecture, training hyperparameters, and the seeded teacher and
    student-init tensors shared by every evaluation."""

    n_tasks: int
    n_channels: int = 64
    input_dim: int = 16
    output_dim: int = 16
    n_layers: int = 4
    batch_size: int = 8
    eval_batch_size: int = 64
    train_steps: int = 150
    learn_rate: float = 0.01
    momentum_coef: float = 0.9
    curriculum_temperature: float = 0.5
    seed: int = 0
    backward_exclusive: bool = False
    identical_teachers: bool = False

    teachers: tuple = field(init=False, repr=False)
    student_init: tuple = field(init=False, repr=False)
    _train_stream: np.random.SeedSequence = field(init=False, repr=False)
    _heldout_stream: np.random.SeedSequence = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_tasks < 1:
            raise ValueError(f"n_tasks must be positive, got {self.n_tasks}")
        for name in ("n_channels", "input_dim", "output_dim", "batch_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_layers < 2 or self.n_layers % 2 != 0:
            raise ValueError(f"n_layers must be even and at least 2, got {self.n_layers}")
        if self.train_steps < 0:
            raise ValueError(f"train_steps must be nonnegative, got {self.train_steps}")
        if not self.learn_rate > 0.0:
            raise ValueError(f"learn_rate must be positive, got {self.learn_rate}")
        if not 0.0 <= self.momentum_coef < 1.0:
            raise ValueError(f"momentum_coef must lie in [0, 1), got {self.momentum_coef}")
        if not self.curriculum_temperature > 0.0:
            raise ValueError(f"curriculum_temperature must be positive, got {self.curriculum_temperature}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValueError(f"seed must be a nonnegative integer, got {self.seed!r}")

        shapes = layer_shapes(self.n_channels, self.input_dim, self.output_dim, self.n_layers)
        children = np.random.SeedSequence(self.seed).spawn(self.n_tasks + 3)
        teachers = []
        for t in range(self.n_tasks):
            stream = children[0] if self.identical_teachers else children[t]
            rng = np.random.default_rng(stream)
            teachers.append(self._draw_net(rng, shapes, bias_scale=0.1))
        student = self._draw_net(np.random.default_rng(children[self.n_tasks]), shapes, bias_scale=0.0)
        object.__setattr__(self, "teachers", tuple(teachers))
        object.__setattr__(self, "student_init", student)
        object.__setattr__(self, "_train_stream", children[self.n_tasks + 1])
        object.__setattr__(self, "_heldout_stream", children[self.n_tasks + 2])

    @staticmethod
    def _draw_net(rng: np.random.Generator, shapes, bias_scale: float) -> tuple:
        weights = []
        biases = []
        for dout, din in shapes:
            w = rng.standard_normal((dout, din)) * np.sqrt(2.0 / din)
            b = rng.standard_normal(dout) * bias_scale if bias_scale else np.zeros(dout)
            w.setflags(write=False)
            b.setflags(write=False)
            weights.append(w)
            biases.append(b)
        return tuple(weights), tuple(biases)

    def teacher_features(self, task: int, x: np.ndarray) -> np.ndarray:
        weights, biases = self.teachers[task]
        return masked_forward(weights, biases, x)


class DistillationRun:
    """Mutable training state for one evaluation: student copy, per-task
    momentum buffers and loss estimates, and the seeded batch streams."""

    def __init__(self, setup: ToyDistillationSetup, mask: ChannelMask):
        if mask.n_channels != setup.n_channels or mask.n_tasks != setup.n_tasks:
            raise ValueError("mask shape does not match the setup")
        self.setup = setup
        self.mask = mask
        pairs = [task_masks(mask, t, setup.backward_exclusive) for t in range(setup.n_tasks)]
        self.forward_masks = [p.forward.astype(np.float64) for p in pairs]
        self.backward_masks = [p.backward.astype(np.float64) for p in pairs]
        init_w, init_b = setup.student_init
        self.weights = [w.copy() for w in init_w]
        self.biases = [b.copy() for b in init_b]
        self.momentum_w = [[np.zeros_like(w) for w in self.weights] for _ in range(setup.n_tasks)]
        self.momentum_b = [[np.zeros_like(b) for b in self.biases] for _ in range(setup.n_tasks)]
        self.loss_ema: list[float | None] = [None] * setup.n_tasks
        self.train_rng = np.random.default_rng(setup._train_stream)
        heldout_rng = np.random.default_rng(setup._heldout_stream)
        self.eval_inputs = [
            heldout_rng.standard_normal((setup.eval_batch_size, setup.input_dim))
            for _ in range(setup.n_tasks)
        ]

    def scores(self) -> np.ndarray:
        """Curriculum scores in [0, 1]: 0 until a task has trained, then
        1/(1 + running loss)."""
        return np.array([0.0 if e is None else 1.0 / (1.0 + e) for e in self.loss_ema])

    def step(self, task: int) -> float:
        """One SGD-with-momentum update on a fresh batch for ``task``."""
        setup = self.setup
        x = self.train_rng.standard_normal((setup.batch_size, setup.input_dim))
        target = setup.teacher_features(task, x)
        loss, grads_w, grads_b = masked_backward(
            self.weights, self.biases, x, target,
            self.forward_masks[task], self.backward_masks[task],
        )
        mom_w = self.momentum_w[task]
        mom_b = self.momentum_b[task]
        for l in range(len(self.weights)):
            mom_w[l] = setup.momentum_coef * mom_w[l] + grads_w[l]
            mom_b[l] = setup.momentum_coef * mom_b[l] + grads_b[l]
            self.weights[l] = self.weights[l] - setup.learn_rate * mom_w[l]
            self.biases[l] = self.biases[l] - setup.learn_rate * mom_b[l]
        ema = self.loss_ema[task]
        self.loss_ema[task] = loss if ema is None else (1.0 - _EMA_COEF) * ema + _EMA_COEF * loss
        return loss

    def run_curriculum(self, n_steps: int) -> None:
        for _ in range(n_steps):
            task = curriculum_sample(self.scores(), self.setup.curriculum_temperature, self.train_rng)
            self.step(task)

    def task_mse(self, task: int) -> float:
        """Held-out distillation error for one task."""
        x = self.eval_inputs[task]
        target = self.setup.teacher_features(task, x)
        out = masked_forward(self.weights, self.biases, x, self.forward_masks[task])
        diff = out - target
        return float(np.mean(diff * diff))


def _train_and_score(
    spec: FeasibleSpec,
    setup: ToyDistillationSetup,
    n_steps: int,
    evaluator_id: str,
) -> EvalReport:
    synth = synthesize(spec, setup.n_channels, seed=setup.seed)
    run = DistillationRun(setup, synth.mask)
    run.run_curriculum(n_steps)
    scores = [1.0 / (1.0 + run.task_mse(t)) for t in range(setup.n_tasks)]
    return EvalReport.from_scores(
        scores, spec, evaluator_id, synthesis_median_error=synth.median_error
    )


def distill_score(spec: FeasibleSpec, setup: ToyDistillationSetup) -> EvalReport:
    """Short proxy training run; pure function of (spec, setup)."""
    if spec.n_tasks != setup.n_tasks:
        raise ValueError(f"setup has {setup.n_tasks} tasks, spec has {spec.n_tasks}")
    return _train_and_score(spec, setup, setup.train_steps, "distill")


def full_train_score(spec: FeasibleSpec, setup: ToyDistillationSetup, factor: int = 50) -> EvalReport:
    """Reference evaluation with ``factor`` times the proxy's training steps."""
    if spec.n_tasks != setup.n_tasks:
        raise ValueError(f"setup has {setup.n_tasks} tasks, spec has {spec.n_tasks}")
    if factor < 1:
        raise ValueError(f"factor must be at least 1, got {factor}")
    return _train_and_score(spec, setup, setup.train_steps * factor, "distill-full")


def make_distill_evaluator(setup: ToyDistillationSetup) -> Evaluator:
    def evaluate(spec: FeasibleSpec) -> EvalReport:
        return distill_score(spec, setup)

    return evaluate


def make_full_train_evaluator(setup: ToyDistillationSetup, factor: int = 50) -> Evaluator:
    def evaluate(spec: FeasibleSpec) -> EvalReport:
        return full_train_score(spec, setup, factor)

    return evaluate
