import csv
import json

import numpy as np
import pytest

from taskpart import read_record_file
from taskpart.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    main,
    parse_config_file,
    register_evaluator,
)


def write_spec(path, text):
    path.write_text(text)
    return str(path)


TWO_TASK_RAW = "tasks 2\n0.5 0.4\n0.4 0.5\n"
TWO_TASK_FEASIBLE = "tasks 2\n0.5 0.2\n0.2 0.5\n"


# ---------------------------------------------------------------- constrain


def test_constrain_prints_scaled_offdiagonal(tmp_path, capsys):
    spec = write_spec(tmp_path / "raw.txt", TWO_TASK_RAW)
    assert main(["constrain", "--spec", spec]) == EXIT_OK
    out = capsys.readouterr().out
    rows = [line.split() for line in out.strip().splitlines()[1:]]
    assert float(rows[0][1]) == 0.5 * 0.4


def test_constrain_requires_spec(capsys):
    assert main(["constrain"]) == EXIT_CONFIG
    assert "spec" in capsys.readouterr().err


# ---------------------------------------------------------------- synthesize


def test_synthesize_writes_parseable_mask(tmp_path, capsys):
    spec = write_spec(tmp_path / "target.txt", TWO_TASK_FEASIBLE)
    out_path = tmp_path / "mask.txt"
    code = main(["synthesize", "--spec", spec, "--channels", "16", "--out", str(out_path)])
    assert code == EXIT_OK
    from taskpart import parse_mask

    mask = parse_mask(out_path.read_text())
    assert mask.n_channels == 16
    assert "median_error" in capsys.readouterr().out


# ---------------------------------------------------------------- runs


def run_and_read(tmp_path, args, name="run.jsonl"):
    out = tmp_path / name
    code = main(args + ["--out", str(out)])
    header, records, skipped = read_record_file(out)
    return code, header, records, skipped


def test_sample_run_record_count(tmp_path):
    code, header, records, skipped = run_and_read(
        tmp_path, ["sample", "--tasks", "3", "--steps", "40", "--seed", "1"]
    )
    assert code == EXIT_OK and skipped == 0
    assert header["mode"] == "sample"
    assert len(records) == 40
    assert header["config"]["tasks"] == 3
    assert "out" not in header["config"]


def test_es_run_reproducible_bytes(tmp_path):
    args = ["es", "--tasks", "2", "--steps", "3", "--seed", "5", "--directions", "4"]
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(args + ["--out", str(a)]) == EXIT_OK
    assert main(args + ["--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    header, records, _ = read_record_file(a)
    assert len(records) == 3 * (2 * 4 + 1) + 1


def test_es_seed_changes_records(tmp_path):
    base = ["es", "--tasks", "2", "--steps", "2", "--directions", "4"]
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    main(base + ["--seed", "0", "--out", str(a)])
    main(base + ["--seed", "1", "--out", str(b)])
    assert a.read_bytes() != b.read_bytes()


def test_eval_mode_scores_single_spec(tmp_path, capsys):
    spec = write_spec(tmp_path / "spec.txt", TWO_TASK_FEASIBLE)
    code, header, records, _ = run_and_read(
        tmp_path, ["eval", "--spec", spec, "--tasks", "2"]
    )
    assert code == EXIT_OK
    assert len(records) == 1
    assert records[0].mode == "eval"
    out = capsys.readouterr().out
    assert "aggregate" in out and "avg_usage" in out


def test_baseline_table_order(tmp_path, capsys):
    code, header, records, _ = run_and_read(
        tmp_path, ["baseline", "--tasks", "4", "--seed", "0"]
    )
    assert code == EXIT_OK
    out_lines = capsys.readouterr().out.strip().splitlines()
    labels = [line.split("  ")[0].strip() for line in out_lines[1:4]]
    assert labels == ["independent", "share half", "share all"]
    assert [r.mode for r in records] == [
        "baseline:independent",
        "baseline:share_half",
        "baseline:share_all",
    ]


def test_baseline_kind_filter(tmp_path, capsys):
    code, header, records, _ = run_and_read(
        tmp_path, ["baseline", "--tasks", "3", "--kind", "share_all"]
    )
    assert code == EXIT_OK
    assert [r.mode for r in records] == ["baseline:share_all"]


def test_timing_flag_fills_wall_millis(tmp_path):
    code, header, records, _ = run_and_read(
        tmp_path, ["sample", "--tasks", "2", "--steps", "5", "--timing"]
    )
    assert code == EXIT_OK
    assert any(r.wall_millis > 0.0 for r in records)
    code, header, records, _ = run_and_read(
        tmp_path, ["sample", "--tasks", "2", "--steps", "5"], name="plain.jsonl"
    )
    assert all(r.wall_millis == 0.0 for r in records)


# ---------------------------------------------------------------- config file


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ntasks = 3\nusage-min = 0.2\nreward-normalize = false\n")
    parsed = parse_config_file(str(cfg))
    # values stay raw strings here; typed casting happens at resolution time
    assert parsed == {"tasks": "3", "usage_min": "0.2", "reward_normalize": "false"}


def test_config_file_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("bogus = 1\n")
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / "r.jsonl")]) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err


def test_cli_flags_override_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("tasks = 2\nsteps = 7\nseed = 3\n")
    out = tmp_path / "r.jsonl"
    assert main(["sample", "--config", str(cfg), "--steps", "4", "--out", str(out)]) == EXIT_OK
    header, records, _ = read_record_file(out)
    assert len(records) == 4
    assert header["config"]["steps"] == 4
    assert header["config"]["tasks"] == 2


def test_invalid_flag_value_exits_config(tmp_path, capsys):
    out = tmp_path / "r.jsonl"
    assert main(["sample", "--tasks", "0", "--out", str(out)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.strip() != ""


def test_unknown_evaluator_rejected(tmp_path, capsys):
    out = tmp_path / "r.jsonl"
    code = main(["es", "--tasks", "2", "--steps", "1", "--evaluator", "nope", "--out", str(out)])
    assert code == EXIT_CONFIG
    assert "nope" in capsys.readouterr().err


# ---------------------------------------------------------------- failure path


def test_evaluator_crash_preserves_partial_records(tmp_path, capsys):
    calls = {"n": 0}

    def factory(config):
        from taskpart import EvalReport

        def evaluate(spec):
            calls["n"] += 1
            if calls["n"] > 10:
                raise RuntimeError("synthetic outage")
            scores = np.zeros(spec.n_tasks)
            return EvalReport.from_scores(scores, spec, "crashy")

        return evaluate

    register_evaluator("crashy", factory)
    try:
        out = tmp_path / "r.jsonl"
        code = main(
            ["es", "--tasks", "2", "--steps", "3", "--directions", "4",
             "--evaluator", "crashy", "--out", str(out)]
        )
        assert code == EXIT_RUNTIME
        assert "synthetic outage" in capsys.readouterr().err
        header, records, skipped = read_record_file(out)
        assert header is not None
        assert len(records) == 10
    finally:
        from taskpart.cli import _EVALUATOR_FACTORIES

        _EVALUATOR_FACTORIES.pop("crashy", None)


# ---------------------------------------------------------------- export


def test_export_empty_record_file(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    out_dir = tmp_path / "tables"
    assert main(["export", str(empty), "--out", str(out_dir)]) == EXIT_OK
    for name in ("scatter.csv", "trajectory.csv", "per_task.csv"):
        rows = list(csv.reader((out_dir / name).open()))
        assert len(rows) == 1  # header only


def test_export_scatter_row_conservation(tmp_path):
    run_file = tmp_path / "samples.jsonl"
    assert main(["sample", "--tasks", "2", "--steps", "1000", "--seed", "2",
                 "--out", str(run_file)]) == EXIT_OK
    out_dir = tmp_path / "tables"
    assert main(["export", str(run_file), "--out", str(out_dir)]) == EXIT_OK
    rows = list(csv.reader((out_dir / "scatter.csv").open()))
    assert len(rows) == 1001
    per_task = list(csv.reader((out_dir / "per_task.csv").open()))
    assert len(per_task) == 1 + 1000 * 2


def test_export_es_trajectory_rows_are_centers(tmp_path):
    run_file = tmp_path / "es.jsonl"
    assert main(["es", "--tasks", "2", "--steps", "4", "--directions", "4",
                 "--out", str(run_file)]) == EXIT_OK
    out_dir = tmp_path / "tables"
    assert main(["export", str(run_file), "--out", str(out_dir)]) == EXIT_OK
    header, records, _ = read_record_file(run_file)
    rows = list(csv.reader((out_dir / "scatter.csv").open()))
    assert len(rows) - 1 == len(records)
    trajectory = list(csv.reader((out_dir / "trajectory.csv").open()))
    assert len(trajectory) - 1 == sum(r.mode == "center" for r in records)


def test_export_lambda_sweep_usage_orders_inversely(tmp_path):
    out_dir = tmp_path / "tables"
    files = []
    for decay in ("0", "0.001", "0.01"):
        path = tmp_path / f"wd{decay}.jsonl"
        assert main(["es", "--tasks", "4", "--steps", "100", "--seed", "1",
                     "--profile-seed", "1", "--wd", decay, "--out", str(path)]) == EXIT_OK
        files.append(str(path))
    assert main(["export", *files, "--out", str(out_dir)]) == EXIT_OK
    trajectory = list(csv.reader((out_dir / "trajectory.csv").open()))[1:]
    terminal = {}
    for run, step, aggregate, usage in trajectory:
        terminal[run] = float(usage)  # rows are ordered; last write wins
    assert terminal["wd0"] >= terminal["wd0.001"] >= terminal["wd0.01"]
    assert terminal["wd0"] > terminal["wd0.01"]


def test_export_warns_on_corrupt_lines(tmp_path, capsys):
    run_file = tmp_path / "run.jsonl"
    assert main(["sample", "--tasks", "2", "--steps", "5", "--out", str(run_file)]) == EXIT_OK
    with run_file.open("a") as fh:
        fh.write("garbage line\n")
    out_dir = tmp_path / "tables"
    assert main(["export", str(run_file), "--out", str(out_dir)]) == EXIT_OK
    assert "skipped 1" in capsys.readouterr().err


def test_export_requires_input(capsys):
    assert main(["export"]) == EXIT_CONFIG
