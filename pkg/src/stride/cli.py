"""Command line entry point: ``stride gen|run|eval|demo``.

Time steps in CLI input and output are 0-based (``h = 0..H-1``); the
library is 1-based internally.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bargain_complete as spe
from . import bargain_incomplete as se
from . import boardgames as bg
from . import mechanism_vcg as vcg
from . import planner_mdp as mdp
from .controllers import GameTask, LearnerTask, generate_demonstration, replay_demonstration, Demonstration
from .core import StrideError
from .env_mdp import MdpInstance, generate_instance
from .harness import (KINDS, ExperimentConfig, eval_bargain, eval_optimal_action, eval_vcg, random_position,
                      run_experiment, sample_bargain_instance, vcg_oracle)


def _add_sizes(p: argparse.ArgumentParser, kind_optional: bool = False) -> None:
    p.add_argument("kind", choices=KINDS, nargs="?" if kind_optional else None)
    p.add_argument("--H", type=int, default=5)
    p.add_argument("--S", type=int, default=3)
    p.add_argument("--A", type=int, default=3)
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--T", type=int, default=3)
    p.add_argument("--K", type=int, default=40)
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=[bg.TICTACTOE, bg.CONNECT], default=bg.TICTACTOE)
    p.add_argument("--board", default=None, help='position such as "X../.O./..."')
    p.add_argument("--out", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stride")
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("gen", help="generate seeded instances as JSON lines")
    _add_sizes(gen)
    run = sub.add_parser("run", help="run an experiment (or search one --board position)")
    _add_sizes(run)
    run.add_argument("--agent", choices=["scripted", "random"], default="scripted")
    ev = sub.add_parser("eval", help="score a trajectory, mechanism outcome or transcript")
    ev.add_argument("kind", choices=["mdp-known", "vcg", "bargain", "bargain-incomplete"])
    ev.add_argument("--instance", required=True, help="instance JSON file")
    ev.add_argument("--input", required=True, help="trajectory / outcome / transcript file")
    demo = sub.add_parser("demo", help="write a demonstration trace, or replay one")
    _add_sizes(demo, kind_optional=True)
    demo.add_argument("--replay", default=None, help="trace file to replay and verify")
    return parser


# --------------------------------------------------------------------------


def make_instance(kind: str, args, seed: int):
    if kind == "mdp-known":
        return generate_instance(args.S, args.A, args.H, seed)
    if kind == "mdp-unknown":
        return LearnerTask(generate_instance(args.S, args.A, args.H, seed), args.K, seed)
    if kind == "vcg":
        return vcg.generate_mechanism_instance(args.N, args.S, args.A, args.H, seed)
    if kind == "bargain":
        return sample_bargain_instance("complete", args.T, seed)
    if kind == "bargain-incomplete":
        return sample_bargain_instance("incomplete", args.T, seed)
    if args.board:
        return GameTask(bg.parse_board(args.board, variant=args.variant))
    return GameTask(random_position(args.variant, seed))


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args) -> int:
    lines = [json.dumps(make_instance(args.kind, args, args.seed + i).to_json())
             for i in range(args.instances)]
    _emit("".join(line + "\n" for line in lines), args.out)
    return 0


def cmd_run(args) -> int:
    if args.kind == "boardgame" and args.board:
        node = bg.parse_board(args.board, variant=args.variant)
        scores = bg.calculate_scores(node)
        level = bg.get_scores(scores, 1)
        print(json.dumps({"value": scores.root_score, "best_move": bg.best_move(node, scores),
                          "scores": {str(m): e.score for m, e in sorted(level.items())}}))
        return 0
    cfg = ExperimentConfig(args.kind, H=args.H, S=args.S, A=args.A, N=args.N, T=args.T, K=args.K,
                           n_instances=args.instances, seed=args.seed, agent=args.agent,
                           variant=args.variant, out=args.out)
    report = run_experiment(cfg)
    print(json.dumps(report.summary(), sort_keys=True))
    return 0


def _read_jsonl(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def _read_json(path) -> dict:
    with open(path) as f:
        text = f.read().strip()
    return json.loads(text.splitlines()[0]) if "\n" in text else json.loads(text)


def cmd_eval(args) -> int:
    d = _read_json(args.instance)
    if args.kind == "mdp-known":
        inst = MdpInstance.from_json(d)
        steps = [(r["h"] + 1, r["s"], r["a"]) for r in _read_jsonl(args.input)]
        rate = eval_optimal_action(steps, mdp.solve_known(inst)[0].Q)
        print(json.dumps({"success_rate": rate, "steps": len(steps)}))
        return 0
    if args.kind == "vcg":
        inst = vcg.MechanismInstance.from_json(d)
        out = _read_json(args.input)
        outcome = vcg.VcgOutcome(np.asarray(out["pi_star"]), [], np.asarray(out["prices"], dtype=float),
                                 float("nan"), np.zeros(inst.N))
        print(json.dumps({"success": eval_vcg(outcome, vcg_oracle(inst))}))
        return 0
    transcript = _read_jsonl(args.input)
    if args.kind == "bargain":
        inst = spe.CompleteBargainInstance.from_json(d)
        ok = eval_bargain(transcript, spe.compute_spe(inst), "complete")
    else:
        inst = se.IncompleteBargainInstance.from_json(d)
        ok = eval_bargain(transcript, se.compute_se(inst), "incomplete", inst)
    print(json.dumps({"success": ok}))
    return 0


def cmd_demo(args) -> int:
    if args.replay:
        demo = Demonstration.load(args.replay)
        digest = replay_demonstration(demo).digest()
        print(json.dumps({"module": demo.module, "records": len(demo.trace), "digest": digest,
                          "match": digest == demo.digest}))
        return 0 if digest == demo.digest else 1
    if args.kind is None:
        raise StrideError("demo needs a KIND or --replay", code="missing-argument")
    demo = generate_demonstration(args.kind, make_instance(args.kind, args, args.seed))
    if args.out:
        demo.save(args.out)
        print(json.dumps({"module": demo.module, "records": len(demo.trace), "digest": demo.digest}))
    else:
        sys.stdout.write(demo.trace.dumps())
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"gen": cmd_gen, "run": cmd_run, "eval": cmd_eval, "demo": cmd_demo}[args.command]
    try:
        return handler(args)
    except StrideError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
