"""Command-line entry point.

Every subcommand is a thin adapter over the library: parse flags, call one
library operation, serialize the result.  Exit codes: 0 success, 1 domain
error (failed convergence, violated fixture fact), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import DualeqError
from .games import GameShape, game_to_dict, load_game, save_game
from .harness import (
    all_fixtures,
    generalization_run,
    plot_data_2x2,
    polytope_approximation,
    verify_fixture,
    write_rows_csv,
)
from .network import EquilibriumNetwork, NetworkConfig
from .oracle import solve
from .targets import (
    make_targets,
    sample_invariant_game,
    targets_from_dict,
    targets_to_dict,
)
from .training import TrainConfig, train

DEFAULT_SEED = 0


def parse_shape(text: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--shape takes AxBxC counts, e.g. 2x2 or 3x3x3, got {text!r}"
        )
    if len(shape) < 2 or any(s < 2 for s in shape):
        raise argparse.ArgumentTypeError(
            f"--shape needs at least two players with at least two strategies, got {text!r}"
        )
    return shape


def format_floats(obj):
    """Round-trip-exact serialization: every float at 17 significant digits."""
    if isinstance(obj, float):
        return float(format(obj, ".17g"))
    if isinstance(obj, dict):
        return {k: format_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [format_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return format_floats(obj.tolist())
    return obj


def _write_json(path: str | None, doc: dict) -> None:
    text = json.dumps(format_floats(doc), indent=2)
    if path is None:
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualeq", description="Uniquely selected (C)CE: oracle, network, harness."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, game=False, shape=False, steps=False):
        if game:
            p.add_argument("--game", required=True, help="game JSON file")
        if shape:
            p.add_argument("--shape", type=parse_shape, default=(2, 2), help="AxBxC")
        p.add_argument("--param", default="ME", help="parameterization name (ME, MWME, MRE, ...)")
        p.add_argument("--concept", default="CCE", choices=["CE", "CCE"])
        p.add_argument("--rho", type=float, default=100.0)
        p.add_argument("--mu", type=float, default=10.0)
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--out", default=None, help="output file (default stdout)")
        if steps:
            p.add_argument("--steps", type=int, default=5000)
            p.add_argument("--batch", type=int, default=256)
            p.add_argument("--lr", type=float, default=4e-4)

    p = sub.add_parser("sample", help="sample an invariant-subspace game")
    common(p, shape=True)

    p = sub.add_parser("solve", help="oracle solve of one game")
    common(p, game=True)

    p = sub.add_parser("train", help="train the amortized solver")
    common(p, shape=True, steps=True)
    p.add_argument("--eval-games", type=int, default=512)

    p = sub.add_parser("eval", help="evaluate a checkpoint across shapes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eval-shapes", default="2x2", help="comma-separated AxBxC list")
    p.add_argument("--param", default="ME")
    p.add_argument("--concept", default="CCE", choices=["CE", "CCE"])
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--games", type=int, default=128)
    p.add_argument("--out", default=None, help="rows CSV (default stdout)")

    p = sub.add_parser("polytope", help="corner-pulling solves of one game")
    common(p, game=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--mode", default="targets", choices=["targets", "welfare"])
    p.add_argument("--floor", type=float, default=1e-4)

    p = sub.add_parser("verify-fixtures", help="re-derive the fixture facts")
    p.add_argument("--out", default=None)

    p = sub.add_parser("plot-data", help="2x2 polytope vertices as JSON")
    common(p, game=True)

    return parser


def _cmd_sample(args) -> int:
    rng = np.random.default_rng(args.seed)
    game = sample_invariant_game(GameShape(args.shape), 2, rng)
    targets = make_targets(args.param, game, rng, rho=args.rho, mu=args.mu)
    doc = game_to_dict(game, targets_to_dict(targets, args.param))
    _write_json(args.out, doc)
    return 0


def _load_game_and_targets(args):
    game, targets_doc = load_game(args.game)
    rng = np.random.default_rng(args.seed)
    if targets_doc is not None:
        targets = targets_from_dict(targets_doc, game, rng)
    else:
        targets = make_targets(args.param, game, rng, rho=args.rho, mu=args.mu)
    return game, targets


def _cmd_solve(args) -> int:
    game, targets = _load_game_and_targets(args)
    report = solve(game, targets, args.concept)
    doc = {
        "concept": args.concept,
        "sigma": report.solution.sigma.ravel().tolist(),
        "epsilon": report.solution.epsilon.tolist(),
        "loss": report.solution.loss_value,
        "duals": [a.tolist() for a in report.duals.alphas],
        "iterations": report.iterations,
        "final_grad_norm": report.final_grad_norm,
        "converged": report.converged,
    }
    _write_json(args.out, doc)
    if not report.converged:
        print("solve did not converge", file=sys.stderr)
        return 1
    return 0


def _cmd_train(args) -> int:
    config = TrainConfig(
        shape=args.shape,
        concept=args.concept,
        parameterization=args.param,
        batch_size=args.batch,
        total_steps=args.steps,
        learning_rate=args.lr,
        seed=args.seed,
        eval_games=args.eval_games,
        checkpoint_dir=args.out,
        network=NetworkConfig(
            concept=args.concept,
            payoff_layer_channels=(16, 16),
            payoff_to_dual_channels=16,
            dual_layer_channels=(16,),
        ),
    )
    train(config, progress=True)
    return 0


def _cmd_eval(args) -> int:
    network = EquilibriumNetwork.load(args.checkpoint)
    shapes = [GameShape(parse_shape(s)) for s in args.eval_shapes.split(",")]
    rows = generalization_run(
        network,
        shapes,
        parameterization=args.param,
        concept=args.concept,
        num_games=args.games,
        rng=np.random.default_rng(args.seed),
        jobs=args.jobs,
    )
    if args.out is None:
        print(json.dumps(format_floats({"rows": rows}), indent=2))
    else:
        write_rows_csv(args.out, [format_floats(r) for r in rows])
    return 0


def _cmd_polytope(args) -> int:
    game, _ = load_game(args.game)
    reports = polytope_approximation(
        game,
        args.concept,
        floor=args.floor,
        mode=args.mode,
        rho=args.rho,
        mu=args.mu,
        jobs=args.jobs,
    )
    doc = {
        "concept": args.concept,
        "solutions": [r.solution.sigma.ravel().tolist() for r in reports],
        "converged": [r.converged for r in reports],
    }
    _write_json(args.out, doc)
    return 0 if all(r.converged for r in reports) else 1


def _cmd_verify_fixtures(args) -> int:
    results = []
    ok = True
    for fixture in all_fixtures():
        for record in verify_fixture(fixture, raise_on_fail=False):
            results.append({"fixture": fixture.name, **record})
            status = "ok" if record["ok"] else "FAIL"
            print(f"{status} {fixture.name}: {record['fact']} | {record['detail']}")
            ok = ok and record["ok"]
    if args.out is not None:
        _write_json(args.out, {"results": results})
    return 0 if ok else 1


def _cmd_plot_data(args) -> int:
    game, _ = load_game(args.game)
    _write_json(args.out, plot_data_2x2(game, args.concept))
    return 0


_DISPATCH = {
    "sample": _cmd_sample,
    "solve": _cmd_solve,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "polytope": _cmd_polytope,
    "verify-fixtures": _cmd_verify_fixtures,
    "plot-data": _cmd_plot_data,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _DISPATCH[args.command](args)
    except DualeqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
