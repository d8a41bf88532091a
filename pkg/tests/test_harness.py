"""Tests for the evaluation metrics, fixtures, and experiment drivers."""

import numpy as np
import pytest

from dualeq.dual import DualVariables, recover_solution
from dualeq.errors import FactViolated, NotZeroSum, ShapeMismatch
from dualeq.games import NormalFormGame
from dualeq.harness import (
    GapReport,
    all_fixtures,
    cce_welfare_fixture,
    ce_welfare_fixture,
    equilibrium_gap,
    equilibrium_gap_components,
    gap_report,
    generalization_run,
    plot_data_2x2,
    polytope_approximation,
    polytope_vertices_2x2,
    solver_gap,
    uniform_joint,
    verify_fixture,
    zero_sum_marginal_check,
)
from dualeq.oracle import solve
from dualeq.targets import make_targets


# ---------------------------------------------------------------------------
# solver gap


def test_solver_gap_identity_is_zero(prisoners_dilemma):
    u = uniform_joint(prisoners_dilemma)
    assert solver_gap(u, u) == 0.0


def test_solver_gap_disjoint_point_masses_is_one():
    a = np.array([[1.0, 0.0], [0.0, 0.0]])
    b = np.array([[0.0, 0.0], [0.0, 1.0]])
    assert solver_gap(a, b) == pytest.approx(1.0)


def test_solver_gap_symmetric(rng):
    a = rng.dirichlet(np.ones(4)).reshape(2, 2)
    b = rng.dirichlet(np.ones(4)).reshape(2, 2)
    assert solver_gap(a, b) == pytest.approx(solver_gap(b, a))


def test_solver_gap_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        solver_gap(np.zeros((2, 2)), np.zeros(4))


# ---------------------------------------------------------------------------
# equilibrium gap


def test_pd_uniform_cce_gap_is_one(prisoners_dilemma):
    # each player gains 0.5 by switching to the dominant strategy, so the
    # summed violation at epsilon = 0 is exactly 1
    u = uniform_joint(prisoners_dilemma)
    per = equilibrium_gap_components(prisoners_dilemma, u, 0.0, "CCE")
    assert per == pytest.approx(np.array([0.5, 0.5]))
    assert equilibrium_gap(prisoners_dilemma, u, 0.0, "CCE") == pytest.approx(1.0)


def test_pd_defect_point_mass_gap_is_zero(prisoners_dilemma):
    point = np.zeros((2, 2))
    point[1, 1] = 1.0
    assert equilibrium_gap(prisoners_dilemma, point, 0.0, "CCE") == 0.0
    assert equilibrium_gap(prisoners_dilemma, point, 0.0, "CE") == 0.0


def test_gap_shrinks_with_slack(prisoners_dilemma):
    u = uniform_joint(prisoners_dilemma)
    assert equilibrium_gap(prisoners_dilemma, u, 0.5, "CCE") == pytest.approx(0.0)
    assert equilibrium_gap(prisoners_dilemma, u, 0.25, "CCE") == pytest.approx(0.5)


def test_ce_gap_at_least_cce_gap(rng, sample_game_3x3):
    sigma = rng.dirichlet(np.ones(9)).reshape(3, 3)
    ce = equilibrium_gap(sample_game_3x3, sigma, 0.0, "CE")
    cce = equilibrium_gap(sample_game_3x3, sigma, 0.0, "CCE")
    assert ce >= cce - 1e-12


def test_gap_report_fields(prisoners_dilemma):
    u = uniform_joint(prisoners_dilemma)
    point = np.zeros((2, 2))
    point[1, 1] = 1.0
    report = gap_report(prisoners_dilemma, point, u, 0.0, "CCE")
    assert report.solver_gap == pytest.approx(0.75)
    assert report.gap == pytest.approx(1.0)
    assert report.per_player == pytest.approx((0.5, 0.5))


def test_gap_report_rejects_out_of_range():
    with pytest.raises(ShapeMismatch):
        GapReport(solver_gap=1.5, gap=0.0, per_player=(0.0,))


# ---------------------------------------------------------------------------
# zero-sum marginal pull-back


def test_zero_sum_marginal_check_matching_pennies(matching_pennies):
    targets = make_targets("ME", matching_pennies, rho=1e6)
    report = solve(matching_pennies, targets, "CCE")
    assert report.converged
    assert zero_sum_marginal_check(matching_pennies, report.solution) < 1e-3


def test_zero_sum_marginal_check_rejects_general_sum(prisoners_dilemma):
    targets = make_targets("ME", prisoners_dilemma)
    report = solve(prisoners_dilemma, targets, "CCE")
    with pytest.raises(NotZeroSum):
        zero_sum_marginal_check(prisoners_dilemma, report.solution)


# ---------------------------------------------------------------------------
# polytope exploration


def test_polytope_vertices_pd_cce(prisoners_dilemma):
    vertices = polytope_vertices_2x2(prisoners_dilemma, "CCE")
    assert len(vertices) >= 1
    # every vertex is a feasible joint with zero violation
    for v in vertices:
        assert v.sum() == pytest.approx(1.0)
        assert (v >= -1e-9).all()
        gap = equilibrium_gap(prisoners_dilemma, v.reshape(2, 2), 0.0, "CCE")
        assert gap <= 1e-8
    # mutual defection is a vertex of the PD polytope
    point = np.array([0.0, 0.0, 0.0, 1.0])
    assert any(np.allclose(v, point, atol=1e-8) for v in vertices)


def test_polytope_vertices_convex_hull_feasible(matching_pennies, rng):
    vertices = polytope_vertices_2x2(matching_pennies, "CCE")
    weights = rng.dirichlet(np.ones(len(vertices)))
    mix = (weights[:, None] * vertices).sum(axis=0)
    gap = equilibrium_gap(matching_pennies, mix.reshape(2, 2), 0.0, "CCE")
    assert gap <= 1e-8


def test_polytope_vertices_requires_2x2(sample_game_3x3):
    with pytest.raises(ShapeMismatch):
        polytope_vertices_2x2(sample_game_3x3)


def test_polytope_approximation_targets(prisoners_dilemma):
    reports = polytope_approximation(prisoners_dilemma, "CCE", mode="targets")
    assert len(reports) == 4
    for r in reports:
        assert r.converged
        sol = r.solution
        gap = equilibrium_gap(prisoners_dilemma, sol.sigma, sol.epsilon, "CCE")
        assert gap <= 1e-6


def test_polytope_approximation_welfare(prisoners_dilemma):
    reports = polytope_approximation(prisoners_dilemma, "CCE", mode="welfare")
    assert len(reports) == 4
    assert all(r.converged for r in reports)


def test_polytope_approximation_rejects_bad_mode(prisoners_dilemma):
    with pytest.raises(ValueError):
        polytope_approximation(prisoners_dilemma, mode="corners")


def test_plot_data_2x2(prisoners_dilemma):
    doc = plot_data_2x2(prisoners_dilemma, "CCE", solutions=[uniform_joint(prisoners_dilemma)])
    assert doc["concept"] == "CCE"
    assert len(doc["joint_labels"]) == 4
    assert len(doc["vertices"]) >= 1
    assert doc["solutions"][0] == pytest.approx([0.25] * 4)


# ---------------------------------------------------------------------------
# fixtures


def test_fixture_names_and_facts():
    fixtures = all_fixtures()
    assert [f.name for f in fixtures] == [
        "ce-welfare-counterexample",
        "cce-welfare-counterexample",
    ]
    for f in fixtures:
        assert len(f.facts) >= 2


def test_ce_welfare_fixture_facts():
    results = verify_fixture(ce_welfare_fixture())
    assert all(r["ok"] for r in results)
    assert {r["fact"] for r in results} == set(ce_welfare_fixture().facts)


def test_cce_welfare_fixture_facts():
    fixture = cce_welfare_fixture()
    results = verify_fixture(fixture)
    assert all(r["ok"] for r in results)
    assert {r["fact"] for r in results} == set(fixture.facts)


def test_verify_fixture_raises_on_violation():
    fixture = cce_welfare_fixture()
    broken = NormalFormGame((fixture.game.payoffs[0] * 0.0, fixture.game.payoffs[1]))
    with pytest.raises(FactViolated):
        verify_fixture(
            type(fixture)(fixture.name, broken, fixture.facts), raise_on_fail=True
        )


# ---------------------------------------------------------------------------
# generalization sweep


class _ZeroDualNetwork:
    """Stand-in network that always predicts zero duals (the target itself)."""

    def forward(self, game, targets):
        return DualVariables(
            "CCE", tuple(np.zeros(a) for a in game.shape.strategies)
        )


def test_generalization_run_rows(rng):
    from dualeq.games import GameShape

    rows = generalization_run(
        _ZeroDualNetwork(), [GameShape((2, 2))], num_games=4, rng=rng
    )
    assert len(rows) == 1
    row = rows[0]
    assert row["shape"] == "2x2"
    assert row["success_fraction"] == 1.0
    assert np.isfinite(row["mean_gap"])
    assert np.isfinite(row["mean_solver_gap"])
    # zero duals reproduce the maximum-entropy target, i.e. the uniform joint
    assert row["mean_solver_gap"] == pytest.approx(row["uniform_solver_gap"])
    assert row["mean_gap"] == pytest.approx(row["uniform_gap"])


def test_zero_duals_recover_target(prisoners_dilemma):
    targets = make_targets("ME", prisoners_dilemma)
    duals = _ZeroDualNetwork().forward(prisoners_dilemma, targets)
    sol = recover_solution(prisoners_dilemma, targets, duals)
    assert sol.sigma == pytest.approx(uniform_joint(prisoners_dilemma))


# ---------------------------------------------------------------------------
# report files


def test_write_rows_csv_roundtrip(tmp_path):
    import csv

    from dualeq.harness import write_rows_csv, write_summary_json

    rows = [{"shape": "2x2", "mean_gap": 0.125}]
    path = tmp_path / "rows.csv"
    write_rows_csv(str(path), rows)
    with open(path, newline="") as fh:
        back = list(csv.DictReader(fh))
    assert back[0]["shape"] == "2x2"
    assert float(back[0]["mean_gap"]) == 0.125
    with pytest.raises(ValueError):
        write_rows_csv(str(tmp_path / "empty.csv"), [])
    write_summary_json(str(tmp_path / "s.json"), {"ok": True})
    import json

    assert json.loads((tmp_path / "s.json").read_text()) == {"ok": True}
