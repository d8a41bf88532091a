"""Tests for the command-line entry point."""

import csv
import json

import numpy as np
import pytest

from dualeq.cli import format_floats, parse_shape, run
from dualeq.games import load_game, save_game
from dualeq.oracle import solve
from dualeq.targets import targets_from_dict


def test_parse_shape():
    assert parse_shape("2x2") == (2, 2)
    assert parse_shape("3x4x5") == (3, 4, 5)
    with pytest.raises(Exception):
        parse_shape("2")
    with pytest.raises(Exception):
        parse_shape("axb")


def test_format_floats_round_trip():
    x = 0.1 + 0.2
    assert format_floats(x) == x
    doc = format_floats({"a": [np.float64(1 / 3)], "b": (2.0,)})
    assert doc["a"][0] == 1 / 3


def test_usage_error_exit_2():
    assert run(["solve"]) == 2
    assert run(["no-such-command"]) == 2


def test_sample_then_solve(tmp_path):
    game_path = str(tmp_path / "g.json")
    sol_path = str(tmp_path / "s.json")
    assert run(["sample", "--shape", "2x2", "--seed", "5", "--out", game_path]) == 0
    assert run(["solve", "--game", game_path, "--out", sol_path]) == 0
    with open(sol_path) as fh:
        doc = json.load(fh)
    assert doc["converged"]
    assert sum(doc["sigma"]) == pytest.approx(1.0)
    # thin-adapter check: the CLI output matches a direct library call
    game, targets_doc = load_game(game_path)
    targets = targets_from_dict(targets_doc, game)
    report = solve(game, targets, "CCE")
    np.testing.assert_allclose(doc["sigma"], report.solution.sigma.ravel(), atol=1e-12)


def test_solve_missing_game_exit_1(tmp_path):
    assert run(["solve", "--game", str(tmp_path / "absent.json")]) == 1


def test_sample_deterministic(tmp_path):
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    run(["sample", "--shape", "3x3", "--seed", "9", "--out", a])
    run(["sample", "--shape", "3x3", "--seed", "9", "--out", b])
    assert open(a).read() == open(b).read()


def test_train_populates_checkpoint_dir(tmp_path):
    out = tmp_path / "ckpt"
    code = run(
        [
            "train",
            "--shape",
            "2x2",
            "--steps",
            "4",
            "--batch",
            "8",
            "--seed",
            "1",
            "--eval-games",
            "4",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    with open(out / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    assert (out / "params_latest.json").exists()
    assert (out / "config.json").exists()


def test_eval_checkpoint(tmp_path):
    ckpt = tmp_path / "ckpt"
    run(
        [
            "train", "--shape", "2x2", "--steps", "3", "--batch", "8",
            "--eval-games", "0", "--out", str(ckpt),
        ]
    )
    rows_path = str(tmp_path / "rows.csv")
    code = run(
        [
            "eval",
            "--checkpoint",
            str(ckpt / "params_latest.json"),
            "--eval-shapes",
            "2x2",
            "--games",
            "4",
            "--out",
            rows_path,
        ]
    )
    assert code == 0
    with open(rows_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["shape"] == "2x2"
    assert float(rows[0]["mean_gap"]) >= 0.0


def test_polytope_and_plot_data(tmp_path, prisoners_dilemma):
    game_path = str(tmp_path / "pd.json")
    save_game(game_path, prisoners_dilemma)
    poly_path = str(tmp_path / "poly.json")
    assert run(["polytope", "--game", game_path, "--out", poly_path]) == 0
    with open(poly_path) as fh:
        doc = json.load(fh)
    assert len(doc["solutions"]) == 4
    assert all(doc["converged"])
    plot_path = str(tmp_path / "plot.json")
    assert run(["plot-data", "--game", game_path, "--out", plot_path]) == 0
    with open(plot_path) as fh:
        plot = json.load(fh)
    assert plot["vertices"]


def test_verify_fixtures_exit_0(tmp_path, capsys):
    out = str(tmp_path / "facts.json")
    assert run(["verify-fixtures", "--out", out]) == 0
    with open(out) as fh:
        doc = json.load(fh)
    assert all(r["ok"] for r in doc["results"])
