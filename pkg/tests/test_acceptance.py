"""Acceptance gate: one test per criterion, each at its stated tolerance.

Each test records a one-line PASS/FAIL verdict that is printed in the
terminal summary.
"""
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

import conftest
from oracles import enumerate_optimal_value, negamax, vcg_by_enumeration
from stride import bargain_complete as spe
from stride import bargain_incomplete as se
from stride import boardgames as bg
from stride import mechanism_vcg as vcg
from stride import planner_mdp as mdp
from stride.controllers import (MODULES, ControllerState, Demonstration, GameTask, LearnerTask, execute,
                                generate_demonstration, next_thought, replay_demonstration)
from stride.core import Session, validate_thought
from stride.env_mdp import generate_instance
from stride.harness import random_position, sample_bargain_instance

ROOT = Path(__file__).resolve().parent.parent


def record(n, name, ok, detail):
    conftest.ACCEPTANCE[n] = (name, bool(ok), detail)
    print(f"criterion {n} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


def small_sizes(seed):
    rng = np.random.default_rng([seed, 99])
    return int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 5))


# --------------------------------------------------------------------------


def test_c1_vi_oracle_equivalence():
    worst, elapsed = 0.0, 0.0
    for seed in range(50):
        S, A, H = small_sizes(seed)
        inst = generate_instance(S, A, H, seed)
        t0 = time.perf_counter()
        tables, _ = mdp.solve_known(inst)
        elapsed += time.perf_counter() - t0
        worst = max(worst, abs(tables.V[0, inst.s1] - enumerate_optimal_value(inst.P, inst.R, H, inst.s1)))
    record(1, "VI oracle equivalence", worst <= 1e-9 and elapsed < 10,
           f"50 instances, max |V - enum| = {worst:.2e} (tol 1e-9), solve time {elapsed:.2f}s (< 10s)")


def _drive(module, instance):
    session = Session()
    MODULES[module].load(session.memory, instance)
    state = ControllerState(module, instance)
    bad = 0
    while not state.exited:
        unit = next_thought(state, session.memory)
        bad += not validate_thought(unit).ok
        session.begin(state.question, unit)
        execute(state, session)
    return session, state, bad


def _fidelity(module, seed):
    """(exact match, invalid unit count) for one seeded instance."""
    S, A, H = small_sizes(seed)
    if module == "mdp-known":
        inst = generate_instance(S + 1, A + 1, H + 1, seed)
        session, _, bad = _drive(module, inst)
        direct = Session()
        mdp.solve_known(inst, direct)
        return session.memory.digest() == direct.memory.digest(), bad
    if module == "mdp-unknown":
        inst = generate_instance(3, 3, 5, seed)
        session, state, bad = _drive(module, LearnerTask(inst, 40, seed))
        est = mdp.UCBVI(n_episodes=40, seed=seed).fit(inst)
        same = session.memory.digest() == est.learner_.session.memory.digest()
        return same and state.answer == est.returns_.tolist(), bad
    if module == "vcg":
        inst = vcg.generate_mechanism_instance(1 + seed % 4, S + 1, A + 1, H + 1, seed)
        session, _, bad = _drive(module, inst)
        direct = Session()
        vcg.compute_vcg(inst, direct)
        return session.memory.digest() == direct.memory.digest(), bad
    if module == "bargain":
        inst = sample_bargain_instance("complete", 1 + seed % 9, seed)
        session, state, bad = _drive(module, inst)
        ours = spe.schedule_from_memory(session.memory)
        direct = spe.compute_spe(inst)
        return ours.prices == direct.prices and state.answer == direct.price(1), bad
    if module == "bargain-incomplete":
        inst = sample_bargain_instance("incomplete", 2 + seed % 8, seed)
        session, _, bad = _drive(module, inst)
        direct = Session()
        se.compute_se(inst, direct)
        return session.memory.digest() == direct.memory.digest(), bad
    variant = bg.TICTACTOE if seed % 2 == 0 else bg.CONNECT
    node = random_position(variant, seed)
    session, state, bad = _drive(module, GameTask(node))
    direct = bg.calculate_scores(node)
    same = session.memory.read("game/scores").to_json() == direct.to_json()
    return same and state.answer == bg.best_move(node, direct), bad


def test_c2_scripted_controller_fidelity():
    mismatches, invalid = {}, 0
    for module in ("mdp-known", "mdp-unknown", "vcg", "bargain", "bargain-incomplete", "boardgame"):
        for seed in range(20):
            same, bad = _fidelity(module, seed)
            invalid += bad
            if not same:
                mismatches[module] = mismatches.get(module, 0) + 1
    record(2, "scripted-controller fidelity", not mismatches and invalid == 0,
           f"6 controllers x 20 instances, mismatches {mismatches or 0}, invalid units {invalid}")


def test_c3_ucbvi_convergence():
    t0 = time.perf_counter()
    ratios = []
    for seed in range(10):
        inst = generate_instance(3, 3, 5, seed)
        v_star = mdp.solve_known(inst)[0].V[0, inst.s1]
        est = mdp.UCBVI(n_episodes=40, seed=seed).fit(inst)
        ratios.append(float(est.expected_returns_[30:40].mean() / v_star))
    elapsed = time.perf_counter() - t0
    passed = sum(r >= 0.95 for r in ratios)
    record(3, "UCB-VI convergence", passed == 10 and elapsed < 60,
           f"{passed}/10 instances reach >= 0.95 V* on episodes 31-40 "
           f"(ratios min {min(ratios):.3f}, mean {np.mean(ratios):.3f}); run time {elapsed:.1f}s (< 60s)")


def test_c4_vcg_correctness():
    worst = 0.0
    for seed in range(20):
        inst = vcg.generate_mechanism_instance(2, 2, 2, 2, seed)
        _, prices = vcg_by_enumeration(inst.base.P, inst.R_agents, 2)
        worst = max(worst, float(np.abs(vcg.compute_vcg(inst).prices - prices).max()))
    lowest = np.inf
    for N in (2, 4, 6):
        for seed in range(1000):
            out = vcg.compute_vcg(vcg.generate_mechanism_instance(N, 3, 3, 5, seed))
            lowest = min(lowest, float(out.prices.min()))
    record(4, "VCG correctness", worst <= 1e-9 and lowest >= -1e-9,
           f"max |p - p_enum| = {worst:.2e} on 20 instances (tol 1e-9); "
           f"min price over 3000 instances = {lowest:.2e} (>= -1e-9)")


def test_c5_spe_exactness():
    agreed = total = 0
    for T in (3, 6, 9):
        for seed in range(10):
            inst = sample_bargain_instance("complete", T, 100 * T + seed)
            moves = spe.play(inst)
            p1 = spe.compute_spe(inst).price(1)
            total += 1
            agreed += (len(moves) == 1 and moves[0].t == 1 and moves[0].response == "accept"
                       and abs(moves[0].price - p1) <= 1e-4)
    hand = [spe.compute_spe(spe.CompleteBargainInstance(db, 0.5, 2)).price(1) for db in (0.3, 0.6, 0.9)]
    record(5, "SPE exactness", agreed == total and all(p == 0.5 for p in hand),
           f"{agreed}/{total} games agree at t=1 on the schedule price (tol 1e-4); "
           f"T=2, delta_s=0.5 gives p_1 = {hand[0]}")


def test_c6_se_exactness():
    ok_bisect = ok_mono = 0
    max_iter = 0
    for T in (3, 6, 9):
        for seed in range(10):
            inst = sample_bargain_instance("incomplete", T, 1000 * T + seed)
            sched = se.compute_se(inst)
            b0 = se.compute_bt(1, sched.beliefs[-1], inst.delta_b, inst.delta_s, T)
            max_iter = max(max_iter, sched.iterations)
            ok_bisect += abs(b0 - 1.0) < 1e-3 and sched.iterations <= 60
            ok_mono += bool(np.all(np.diff(sched.beliefs) < 0) and np.all(np.diff(sched.prices) < 0))
    s = Session()
    se.load_se_params(s.memory, 0.0, 0.0, 2)
    b_last, _ = se.bisect_last_belief(s)
    se.backward_prices(s, b_last)
    deg = se.schedule_from_memory(s.memory)
    deg_ok = abs(deg.beliefs[1] - 0.5) <= 2e-3 and deg.prices.tolist() == [0.5, 0.25]
    record(6, "SE exactness", ok_bisect == 30 and ok_mono == 30 and deg_ok,
           f"bisection within tolerance on {ok_bisect}/30 (max {max_iter} iterations, cap 60); "
           f"strictly decreasing on {ok_mono}/30; degenerate case b_1 = {deg.beliefs[1]:.4f}, "
           f"p = {deg.prices.tolist()}")


def test_c7_minimax_correctness():
    agree = 0
    for variant in (bg.TICTACTOE, bg.CONNECT):
        for seed in range(200):
            node = random_position(variant, seed)
            agree += bg.calculate_scores(node).root_score == negamax(
                node.board, node.to_move, node.win_length, variant == bg.CONNECT)
    empty = bg.calculate_scores(bg.empty_node()).root_score
    draws = 0
    for _ in range(10):
        def scripted(node):
            _, state = _drive("boardgame", GameTask(node))[:2]
            return state.answer
        outcome, _ = bg.self_play(bg.empty_node(), scripted)
        draws += outcome == 0
    record(7, "minimax correctness", agree == 400 and empty == 0 and draws == 10,
           f"alpha-beta equals negamax on {agree}/400 positions; empty 3x3 value {empty}; "
           f"self-play draws {draws}/10")


def test_c8_trace_replay_determinism(tmp_path):
    cases = [
        ("mdp-known", generate_instance(5, 5, 5, 0)),
        ("mdp-known", generate_instance(3, 2, 4, 1)),
        ("mdp-unknown", LearnerTask(generate_instance(3, 3, 5, 2), 10, 2)),
        ("mdp-unknown", LearnerTask(generate_instance(2, 3, 4, 3), 5, 3)),
        ("vcg", vcg.generate_mechanism_instance(3, 3, 3, 4, 4)),
        ("vcg", vcg.generate_mechanism_instance(2, 2, 2, 2, 5)),
        ("bargain", sample_bargain_instance("complete", 6, 6)),
        ("bargain-incomplete", sample_bargain_instance("incomplete", 9, 7)),
        ("boardgame", GameTask(bg.empty_node())),
        ("boardgame", GameTask(random_position(bg.CONNECT, 9))),
    ]
    same = 0
    for k, (module, instance) in enumerate(cases):
        demo = generate_demonstration(module, instance)
        path = tmp_path / f"demo{k}.jsonl"
        demo.save(path)
        same += replay_demonstration(Demonstration.load(path)).digest() == demo.digest
    record(8, "trace replay determinism", same == len(cases),
           f"{same}/{len(cases)} saved demonstrations replay to bitwise-identical memory")


def test_c9_property_suites_without_adapter():
    env = {k: v for k, v in os.environ.items() if not k.startswith("STRIDE_LLM")}
    probe = subprocess.run([sys.executable, "-c", "import sys, stride, stride.cli; "
                            "print('httpx' in sys.modules)"], capture_output=True, text=True, env=env)
    adapter_loaded = probe.stdout.strip() != "False"
    t0 = time.perf_counter()
    run = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", str(ROOT / "tests"),
                          "--ignore", str(ROOT / "tests" / "test_acceptance.py"), "-k", "not TestLLMAdapter"],
                         capture_output=True, text=True, env=env, cwd=ROOT)
    elapsed = time.perf_counter() - t0
    tail = run.stdout.strip().splitlines()[-1] if run.stdout.strip() else run.stderr[-200:]
    record(9, "property suites without LLM adapter",
           run.returncode == 0 and not adapter_loaded and elapsed < 300,
           f"suites {'green' if run.returncode == 0 else 'red'} ({tail}); {elapsed:.1f}s (< 300s); "
           f"adapter dependency imported: {adapter_loaded}")
