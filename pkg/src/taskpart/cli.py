"""Command-line harness.

Subcommands: constrain, synthesize, sample, es, baseline, eval, export.
Every flag can also be supplied through ``--config FILE`` as flat
``key=value`` lines (dashes become underscores); explicit flags win over the
file, the file wins over built-in defaults.  Search and evaluation runs
stream one JSONL record per evaluation to ``--out`` and print a summary.

Exit codes: 0 when the run completed, 2 for configuration problems, 3 when
an evaluator fails mid-run (partial records are preserved).
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from .distill import ToyDistillationSetup, make_distill_evaluator, make_full_train_evaluator
from .evaluation import Evaluator, SyntheticTaskProfile, make_synthetic_evaluator
from .partition import SharingSpec, constrain, format_mask, format_spec, parse_feasible_spec, parse_sharing_spec
from .records import RecordWriter, RunRecord, read_record_file
from .search import (
    BASELINE_KINDS,
    EsConfig,
    SamplerConfig,
    baseline_label,
    best_record,
    evaluate_baselines,
    evaluate_spec,
    run_search,
)
from .synthesis import format_report, synthesize

__all__ = ["main", "entrypoint", "register_evaluator", "CliError", "RunConfig"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class CliError(Exception):
    """Configuration or input problem; maps to exit code 2."""


@dataclass
class RunConfig:
    """Fully resolved settings for one invocation."""

    command: str
    tasks: int
    channels: int
    seed: int
    steps: int
    directions: int
    lr: float
    nu: float
    wd: float
    reward_normalize: bool
    evaluator: str
    usage_min: float | None
    usage_max: float | None
    train_steps: int
    profile_seed: int
    factor: int
    timing: bool
    spec: str | None
    kind: str | None
    out: str | None
    records: list[str]

    def usage_range(self) -> tuple[float, float] | None:
        if self.usage_min is None and self.usage_max is None:
            return None
        lo = 0.0 if self.usage_min is None else self.usage_min
        hi = 1.0 if self.usage_max is None else self.usage_max
        return (lo, hi)

    def header_config(self) -> dict:
        # Deliberately excludes the output path and timing switch so byte
        # identity of record files depends only on the experiment settings.
        return {
            "command": self.command,
            "tasks": self.tasks,
            "channels": self.channels,
            "seed": self.seed,
            "steps": self.steps,
            "directions": self.directions,
            "lr": self.lr,
            "nu": self.nu,
            "wd": self.wd,
            "reward_normalize": self.reward_normalize,
            "evaluator": self.evaluator,
            "usage_min": self.usage_min,
            "usage_max": self.usage_max,
            "train_steps": self.train_steps,
            "profile_seed": self.profile_seed,
            "factor": self.factor,
            "kind": self.kind,
        }


_DEFAULTS = {
    "tasks": 4,
    "channels": 64,
    "seed": 0,
    "steps": 100,
    "directions": 16,
    "lr": 0.1,
    "nu": 0.05,
    "wd": 1e-3,
    "reward_normalize": True,
    "evaluator": "synthetic",
    "usage_min": None,
    "usage_max": None,
    "train_steps": 150,
    "profile_seed": 0,
    "factor": 50,
    "timing": False,
    "spec": None,
    "kind": None,
    "out": None,
}

_CASTS = {
    "tasks": int,
    "channels": int,
    "seed": int,
    "steps": int,
    "directions": int,
    "lr": float,
    "nu": float,
    "wd": float,
    "reward_normalize": "bool",
    "evaluator": str,
    "usage_min": float,
    "usage_max": float,
    "train_steps": int,
    "profile_seed": int,
    "factor": int,
    "timing": "bool",
    "spec": str,
    "kind": str,
    "out": str,
}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "on", "yes"):
        return True
    if lowered in ("0", "false", "off", "no"):
        return False
    raise CliError(f"expected a boolean, got {text!r}")


def parse_config_file(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from None
    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _DEFAULTS:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def _resolve_value(key: str, cli_value, file_values: dict[str, str]):
    if cli_value is not None:
        return cli_value
    if key in file_values:
        cast = _CASTS[key]
        raw = file_values[key]
        if cast == "bool":
            return _parse_bool(raw)
        try:
            return cast(raw)
        except ValueError:
            raise CliError(f"config key {key} has invalid value {raw!r}") from None
    return _DEFAULTS[key]


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {
        key: _resolve_value(key, getattr(args, key, None), file_values)
        for key in _DEFAULTS
    }
    return RunConfig(
        command=args.command,
        records=list(getattr(args, "record_files", []) or []),
        **resolved,
    )


# --- evaluator registry -----------------------------------------------------

_EVALUATOR_FACTORIES = {}


def register_evaluator(name: str, factory) -> None:
    """Register a factory mapping a RunConfig to an Evaluator."""
    _EVALUATOR_FACTORIES[name] = factory


def _build_evaluator(config: RunConfig) -> Evaluator:
    try:
        factory = _EVALUATOR_FACTORIES[config.evaluator]
    except KeyError:
        known = ", ".join(sorted(_EVALUATOR_FACTORIES))
        raise CliError(f"unknown evaluator {config.evaluator!r}; registered: {known}") from None
    try:
        return factory(config)
    except ValueError as exc:
        raise CliError(f"evaluator {config.evaluator!r} rejected the configuration: {exc}") from None


def _distill_setup(config: RunConfig) -> ToyDistillationSetup:
    return ToyDistillationSetup(
        n_tasks=config.tasks,
        n_channels=config.channels,
        train_steps=config.train_steps,
        seed=config.profile_seed,
    )


register_evaluator(
    "synthetic",
    lambda cfg: make_synthetic_evaluator(SyntheticTaskProfile.random(cfg.tasks, cfg.profile_seed)),
)
register_evaluator("distill", lambda cfg: make_distill_evaluator(_distill_setup(cfg)))
register_evaluator(
    "distill-full",
    lambda cfg: make_full_train_evaluator(_distill_setup(cfg), factor=cfg.factor),
)


class _TimedEvaluator:
    """Wraps an evaluator, remembering the last call's wall time when
    enabled; disabled runs report 0.0 so record files stay reproducible."""

    def __init__(self, inner: Evaluator, enabled: bool):
        self.inner = inner
        self.enabled = enabled
        self.last_millis = 0.0

    def __call__(self, spec):
        if not self.enabled:
            return self.inner(spec)
        started = time.perf_counter()
        report = self.inner(spec)
        self.last_millis = (time.perf_counter() - started) * 1000.0
        return report


def _make_sink(config: RunConfig, writer: RecordWriter | None, timer: _TimedEvaluator):
    def on_record(record):
        if writer is not None:
            writer.write(RunRecord.from_history(record, wall_millis=timer.last_millis))

    return on_record


def _read_spec_file(path: str | None) -> str:
    if not path:
        raise CliError("this command needs --spec pointing at a spec file")
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read spec file {path}: {exc}") from None


def _print_summary(history) -> None:
    best = best_record(history)
    print(f"evaluations {len(history)}")
    if best is None:
        return
    print(f"best step {best.step} kind {best.kind} aggregate {best.aggregate!r} avg_usage {best.avg_usage!r}")
    print("best feasible spec:")
    print(format_spec(best.feasible), end="")


# --- subcommands ------------------------------------------------------------


def cmd_constrain(config: RunConfig) -> int:
    text = _read_spec_file(config.spec)
    try:
        spec = parse_sharing_spec(text)
    except ValueError as exc:
        raise CliError(f"invalid spec file: {exc}") from None
    feasible = constrain(spec)
    rendered = format_spec(feasible)
    print(rendered, end="")
    if config.out:
        Path(config.out).write_text(rendered, encoding="utf-8")
    return EXIT_OK


def cmd_synthesize(config: RunConfig) -> int:
    text = _read_spec_file(config.spec)
    try:
        target = parse_feasible_spec(text)
    except ValueError as exc:
        raise CliError(f"invalid feasible-spec file: {exc}") from None
    report = synthesize(target, config.channels, seed=config.seed)
    print(format_report(report), end="")
    if config.out:
        Path(config.out).write_text(format_mask(report.mask), encoding="utf-8")
    return EXIT_OK


def _run_recorded(config: RunConfig, runner, summarize=None) -> int:
    """Shared scaffolding: build evaluator, open the record file, run, and
    summarize.  ``runner(evaluator, on_record) -> history``."""
    evaluator = _build_evaluator(config)
    timer = _TimedEvaluator(evaluator, config.timing)
    writer = RecordWriter(config.out, config.command, config.header_config()) if config.out else None
    try:
        history = runner(timer, _make_sink(config, writer, timer))
    except Exception as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if writer is not None:
            writer.close()
    (summarize or _print_summary)(history)
    return EXIT_OK


def cmd_sample(config: RunConfig) -> int:
    try:
        sampler = SamplerConfig(
            n_tasks=config.tasks,
            n_steps=config.steps,
            seed=config.seed,
            usage_range=config.usage_range(),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return _run_recorded(config, lambda ev, sink: run_search(sampler, ev, mode="random", on_record=sink).history)


def cmd_es(config: RunConfig) -> int:
    try:
        es = EsConfig(
            n_tasks=config.tasks,
            n_steps=config.steps,
            seed=config.seed,
            n_directions=config.directions,
            step_size=config.lr,
            perturb_std=config.nu,
            diag_weight_decay=config.wd,
            reward_normalize=config.reward_normalize,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return _run_recorded(config, lambda ev, sink: run_search(es, ev, mode="es", on_record=sink).history)


def _baseline_kinds(config: RunConfig) -> tuple[str, ...]:
    if config.kind is None:
        return BASELINE_KINDS
    kinds = tuple(k.strip() for k in config.kind.split(",") if k.strip())
    for kind in kinds:
        if kind not in BASELINE_KINDS:
            raise CliError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    if not kinds:
        raise CliError("no baseline kinds given")
    return kinds


def cmd_baseline(config: RunConfig) -> int:
    kinds = _baseline_kinds(config)

    def runner(evaluator, sink):
        return evaluate_baselines(config.tasks, evaluator, kinds=kinds, on_record=sink)

    def summarize(history):
        print(f"{'baseline':<14}{'aggregate':<24}avg_usage")
        for record in history:
            label = baseline_label(record.kind.split(":", 1)[1])
            print(f"{label:<14}{record.aggregate!r:<24}{record.avg_usage!r}")

    return _run_recorded(config, runner, summarize)


def cmd_eval(config: RunConfig) -> int:
    text = _read_spec_file(config.spec)
    try:
        spec = parse_sharing_spec(text)
    except ValueError as exc:
        raise CliError(f"invalid spec file: {exc}") from None

    def runner(evaluator, sink):
        record = evaluate_spec(spec, evaluator)
        sink(record)
        return [record]

    def summarize(history):
        record = history[0]
        print(f"evaluator {record.report.evaluator_id}")
        print(f"per_task {' '.join(repr(float(s)) for s in record.report.per_task_scores)}")
        print(f"aggregate {record.aggregate!r}")
        print(f"avg_usage {record.avg_usage!r}")
        if record.report.synthesis_median_error is not None:
            print(f"synthesis_median_error {record.report.synthesis_median_error!r}")

    return _run_recorded(config, runner, summarize)


def cmd_export(config: RunConfig) -> int:
    if not config.records:
        raise CliError("export needs at least one record file")
    out_dir = Path(config.out) if config.out else Path(".")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out_dir}: {exc}") from None

    scatter_rows = []
    trajectory_rows = []
    per_task_rows = []
    total_skipped = 0
    for path in config.records:
        try:
            _, records, skipped = read_record_file(path)
        except OSError as exc:
            raise CliError(f"cannot read record file {path}: {exc}") from None
        total_skipped += skipped
        run_name = Path(path).stem
        for record in records:
            scatter_rows.append([run_name, record.step, record.mode, record.avg_usage, record.aggregate])
            if record.mode == "center":
                trajectory_rows.append([run_name, record.step, record.aggregate, record.avg_usage])
            for task, score in enumerate(record.per_task):
                per_task_rows.append(
                    [run_name, record.step, task, record.feasible[task][task], score, record.avg_usage]
                )

    tables = (
        ("scatter.csv", ["run", "step", "mode", "avg_usage", "aggregate"], scatter_rows),
        ("trajectory.csv", ["run", "step", "aggregate", "avg_usage"], trajectory_rows),
        ("per_task.csv", ["run", "step", "task", "usage", "score", "avg_usage"], per_task_rows),
    )
    for name, headers, rows in tables:
        with open(out_dir / name, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(headers)
            writer.writerows(rows)
        print(f"wrote {len(rows)} rows to {out_dir / name}")
    if total_skipped:
        print(f"warning: skipped {total_skipped} corrupt or out-of-order record lines", file=sys.stderr)
    return EXIT_OK


_DISPATCH = {
    "constrain": cmd_constrain,
    "synthesize": cmd_synthesize,
    "sample": cmd_sample,
    "es": cmd_es,
    "baseline": cmd_baseline,
    "eval": cmd_eval,
    "export": cmd_export,
}


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--tasks", type=int, help="number of tasks N")
    sub.add_argument("--channels", type=int, help="channel budget C for synthesis and distillation")
    sub.add_argument("--seed", type=int, help="run seed (default 0)")
    sub.add_argument("--steps", type=int, help="search steps (es) or sample count (sample)")
    sub.add_argument("--directions", type=int, help="perturbation directions per es step")
    sub.add_argument("--lr", type=float, help="es step size")
    sub.add_argument("--nu", type=float, help="es perturbation scale")
    sub.add_argument("--wd", type=float, help="diagonal weight decay strength")
    sub.add_argument(
        "--no-reward-normalize",
        dest="reward_normalize",
        action="store_const",
        const=False,
        help="disable reward standard-deviation normalization",
    )
    sub.add_argument("--evaluator", help="registered evaluator id (synthetic, distill, distill-full)")
    sub.add_argument("--usage-min", dest="usage_min", type=float, help="lower bound on sampled avg usage")
    sub.add_argument("--usage-max", dest="usage_max", type=float, help="upper bound on sampled avg usage")
    sub.add_argument("--train-steps", dest="train_steps", type=int, help="distillation proxy training steps")
    sub.add_argument("--profile-seed", dest="profile_seed", type=int, help="seed of the evaluator's task profile")
    sub.add_argument("--factor", type=int, help="training-step multiplier for distill-full")
    sub.add_argument(
        "--timing",
        action="store_const",
        const=True,
        help="record per-evaluation wall time (breaks byte-for-byte reproducibility)",
    )
    sub.add_argument("--spec", help="input spec file")
    sub.add_argument("--kind", help="comma-separated baseline kinds (default: all three)")
    sub.add_argument("--out", help="output path (record file, mask file, or export directory)")
    sub.add_argument("--config", help="key=value config file; explicit flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskpart",
        description="Search over multi-task channel-sharing specs: remap, synthesize masks, sample, and optimize.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "constrain": "remap a raw spec's off-diagonals into their feasible bands and print it",
        "synthesize": "derive a channel mask for a feasible spec and report its fidelity",
        "sample": "score independent random specs",
        "es": "run the evolution-strategy search",
        "baseline": "score the fixed reference specs",
        "eval": "score a single spec file",
        "export": "turn record files into scatter/trajectory/per-task CSV tables",
    }
    for name, description in descriptions.items():
        sub = commands.add_parser(name, help=description, description=description)
        if name == "export":
            sub.add_argument("record_files", nargs="*", metavar="RECORDS", help="record files to export")
        _add_common_flags(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        return _DISPATCH[config.command](config)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entrypoint() -> None:
    sys.exit(main())
