"""Instance sampling, evaluation metrics and experiment runs.

Every run is a pure function of its config: instance ``i`` uses seed
``config.seed + i`` for generation and for the environment.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import bargain_complete as spe
from . import bargain_incomplete as se
from . import boardgames as bg
from . import mechanism_vcg as vcg
from . import planner_mdp as mdp
from .controllers import GameTask, LearnerTask, run_controller
from .core import ARGMAX_TOL, StrideError
from .env_mdp import KNOWN, EnvSession, MdpInstance, generate_instance

VCG_TOL = 1e-2
BARGAIN_TOL = 1e-4

KINDS = ("mdp-known", "mdp-unknown", "vcg", "bargain", "bargain-incomplete", "boardgame")

# Fixed CSV column order per experiment kind.
COLUMNS = {
    "mdp-known": ["instance", "seed", "H", "S", "A", "agent", "steps", "success_rate"],
    "mdp-unknown": ["episode", "mean_return", "mean_expected_return", "mean_optimal_value", "mean_ratio"],
    "vcg": ["instance", "seed", "N", "S", "A", "H", "success", "max_price_error"],
    "bargain": ["instance", "seed", "T", "delta_b", "delta_s", "success", "price", "p1"],
    "bargain-incomplete": ["instance", "seed", "T", "delta_b", "delta_s", "b", "success", "deal_t"],
    "boardgame": ["instance", "seed", "variant", "agent", "outcome", "moves"],
}


def code_version() -> str:
    try:
        return version("stride")
    except PackageNotFoundError:  # pragma: no cover - running from a source tree
        return "0+unknown"


# --------------------------------------------------------------------------
# sampling


def sample_bargain_instance(kind: str, T: int, seed: int):
    if T < 1:
        raise StrideError(f"deadline T must be >= 1, got {T}", code="invalid-instance")
    rng = np.random.default_rng(seed)
    db, ds = (float(x) for x in rng.uniform(0.5, 1.0, size=2))
    if kind == "complete":
        return spe.CompleteBargainInstance(db, ds, T)
    if kind == "incomplete":
        return se.IncompleteBargainInstance(db, ds, T, float(rng.uniform(0.1, 0.9)))
    raise StrideError(f"unknown bargaining kind {kind!r}", code="invalid-instance")


def random_position(variant: str, seed: int, rows: int = 3, cols: int = 3, win_length: int = 3) -> bg.GameNode:
    """A non-terminal position reached by uniformly random play."""
    rng = np.random.default_rng(seed)
    while True:
        node = bg.empty_node(rows, cols, win_length, variant)
        n_moves = int(rng.integers(0, rows * cols))
        for _ in range(n_moves):
            if bg.terminal_utility(node) is not None:
                break
            moves = bg.legal_moves(node)
            node = bg.apply_move(node, int(moves[rng.integers(len(moves))]))
        if bg.terminal_utility(node) is None:
            return node


# --------------------------------------------------------------------------
# metrics


def eval_optimal_action(trajectory, Q_star: np.ndarray) -> float:
    """Fraction of ``(h, s, a)`` steps (h 1-based) whose action is optimal."""
    Q_star = np.asarray(Q_star, dtype=float)
    steps = list(trajectory)
    if not steps:
        raise StrideError("empty trajectory", code="length-mismatch")
    H, S, A = Q_star.shape
    hits = 0
    for h, s, a in steps:
        if not (1 <= h <= H and 0 <= s < S and 0 <= a < A):
            raise StrideError(f"step ({h}, {s}, {a}) does not fit oracle tables of shape {Q_star.shape}",
                              code="length-mismatch")
        q = Q_star[h - 1, s]
        hits += bool(q[a] >= q.max() - ARGMAX_TOL)
    return hits / len(steps)


@dataclass
class VcgOracle:
    Q_star: np.ndarray  # social-welfare Q tables, shape (H, S, A)
    prices: np.ndarray


def vcg_oracle(instance: vcg.MechanismInstance) -> VcgOracle:
    """Oracle by an independent route: plain backward recursion on the summed
    reward and on each exclusion, then forward evaluation."""
    base = instance.base
    Q_star = _q_tables(base, instance.reward_excluding(None))
    pi = mdp.greedy_policy(Q_star)
    prices = []
    for i in range(instance.N):
        R_minus = instance.reward_excluding(i)
        V_minus = float(_q_tables(base, R_minus)[0].max(axis=1)[base.s1])
        prices.append(V_minus - mdp.policy_value(base.P, R_minus, pi, base.s1))
    return VcgOracle(Q_star, np.asarray(prices))


def _q_tables(base: MdpInstance, R: np.ndarray) -> np.ndarray:
    Q = np.zeros((base.H, base.S, base.A))
    V = np.zeros(base.S)
    for h in range(base.H - 1, -1, -1):
        Q[h] = R + base.P @ V
        V = Q[h].max(axis=1)
    return Q


def eval_vcg(outcome: vcg.VcgOutcome, oracle: VcgOracle) -> bool:
    pi = np.asarray(outcome.pi_star)
    prices = np.asarray(outcome.prices, dtype=float)
    if pi.shape != oracle.Q_star.shape[:2] or prices.shape != oracle.prices.shape:
        raise StrideError("outcome and oracle dimensions differ", code="dimension-mismatch")
    Q = oracle.Q_star
    H, S = pi.shape
    for h in range(H):
        for s in range(S):
            if Q[h, s, pi[h, s]] < Q[h, s].max() - ARGMAX_TOL:
                return False
    return bool(np.all(np.abs(prices - oracle.prices) <= VCG_TOL))


def _check_transcript(transcript) -> list[dict]:
    moves = [m.to_json() if hasattr(m, "to_json") else dict(m) for m in transcript]
    if not moves:
        raise StrideError("empty transcript", code="malformed-transcript")
    for k, m in enumerate(moves):
        if m.get("t") != k + 1 or m.get("response") not in ("accept", "reject") or "price" not in m:
            raise StrideError(f"bad transcript entry {m!r}", code="malformed-transcript")
        if m["response"] == "accept" and k != len(moves) - 1:
            raise StrideError("moves after an accepted offer", code="malformed-transcript")
    return moves


def eval_bargain(transcript, schedule, kind: str, instance=None) -> bool:
    """Complete: agreement at t=1 at the first SPE price.  Incomplete: every
    seller offer on the SE schedule and every buyer response equal to
    :func:`stride.bargain_incomplete.buyer_respond` (needs ``instance``)."""
    moves = _check_transcript(transcript)
    if kind == "complete":
        first = moves[0]
        return (first["response"] == "accept" and first["price"] is not None
                and abs(first["price"] - schedule.price(1)) <= BARGAIN_TOL)
    if kind == "incomplete":
        if instance is None:
            raise StrideError("incomplete evaluation needs the instance", code="malformed-transcript")
        T = instance.T
        for m in moves:
            if m["t"] > T:
                raise StrideError("offer after the deadline", code="malformed-transcript")
            if abs(m["price"] - schedule.price(m["t"])) > BARGAIN_TOL:
                return False
            if (m["response"] == "accept") != se.buyer_respond(instance, m["price"], m["t"], schedule):
                return False
        # a rejection sequence must run to the deadline
        return moves[-1]["response"] == "accept" or moves[-1]["t"] == T
    raise StrideError(f"unknown bargaining kind {kind!r}", code="malformed-transcript")


# --------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentConfig:
    kind: str
    H: int = 5
    S: int = 3
    A: int = 3
    N: int = 2
    T: int = 3
    K: int = 40
    n_instances: int = 20
    seed: int = 0
    agent: str = "scripted"
    variant: str = bg.TICTACTOE
    out: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise StrideError(f"unknown experiment kind {self.kind!r}", code="invalid-config")
        for name in ("H", "S", "A", "N", "T", "K", "n_instances"):
            if getattr(self, name) < 1:
                raise StrideError(f"{name} must be >= 1", code="invalid-config")
        if self.agent not in ("scripted", "random"):
            raise StrideError(f"unknown agent {self.agent!r}", code="invalid-config")

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("out")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class MetricsReport:
    config: ExperimentConfig
    records: list[dict]
    table: list[dict]
    aggregate: dict
    metadata: dict = field(default_factory=dict)

    def records_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COLUMNS[self.config.kind], lineterminator="\n")
        w.writeheader()
        for row in self.table:
            w.writerow({k: _fmt(row[k]) for k in COLUMNS[self.config.kind]})
        return buf.getvalue()

    def summary(self) -> dict:
        return {"aggregate": self.aggregate, "metadata": self.metadata}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "records.jsonl").write_text(self.records_jsonl())
        (out / "table.csv").write_text(self.table_csv())
        (out / "summary.json").write_text(json.dumps(self.summary(), sort_keys=True, indent=1) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 12))
    return v


def _rollout(inst: MdpInstance, seed: int, choose) -> list[tuple[int, int, int]]:
    env = EnvSession(inst, KNOWN, seed)
    traj = []
    for h in range(1, inst.H + 1):
        s = env.s
        a = choose(h, s)
        env.step(a)
        traj.append((h, s, a))
    return traj


def _run_mdp_known(cfg, i, seed):
    inst = generate_instance(cfg.S, cfg.A, cfg.H, seed)
    Q_star = mdp.solve_known(inst)[0].Q
    if cfg.agent == "scripted":
        session, _ = run_controller("mdp-known", inst, record=False)
        pi = mdp.greedy_policy(session.memory.read("mdp/Q"))
        choose = lambda h, s: int(pi[h - 1, s])  # noqa: E731
    else:
        rng = np.random.default_rng([seed, 1])
        choose = lambda h, s: int(rng.integers(cfg.A))  # noqa: E731
    traj = _rollout(inst, seed, choose)
    rate = eval_optimal_action(traj, Q_star)
    rec = {"instance": i, "seed": seed, "H": cfg.H, "S": cfg.S, "A": cfg.A, "agent": cfg.agent,
           "steps": len(traj), "success_rate": rate,
           "trajectory": [[h - 1, s, a] for h, s, a in traj],
           "success": [int(eval_optimal_action([st], Q_star)) for st in traj]}
    return rec, {k: rec[k] for k in COLUMNS["mdp-known"]}


def _run_mdp_unknown(cfg, i, seed):
    inst = generate_instance(cfg.S, cfg.A, cfg.H, seed)
    v_star = mdp.solve_known(inst)[0].V[0, inst.s1]
    if cfg.agent == "scripted":
        session, state = run_controller("mdp-unknown", LearnerTask(inst, cfg.K, seed), record=False)
        est = mdp.UCBVI(n_episodes=cfg.K, seed=seed).fit(inst)
        returns, expected = list(state.answer), est.expected_returns_.tolist()
    else:
        rng = np.random.default_rng([seed, 1])
        returns, expected = [], []
        for _ in range(cfg.K):
            pi = rng.integers(cfg.A, size=(cfg.H, cfg.S))
            expected.append(mdp.policy_value(inst.P, inst.R, pi, inst.s1))
            traj = _rollout(inst, int(rng.integers(2**31)), lambda h, s: int(pi[h - 1, s]))
            returns.append(float(sum(inst.R[s, a] for _, s, a in traj)))
    rec = {"instance": i, "seed": seed, "V_star": float(v_star), "returns": returns,
           "expected_returns": expected,
           "last10_ratio": float(np.mean(expected[-10:]) / v_star)}
    return rec, None


def _run_vcg(cfg, i, seed):
    inst = vcg.generate_mechanism_instance(cfg.N, cfg.S, cfg.A, cfg.H, seed)
    if cfg.agent == "scripted":
        session, _ = run_controller("vcg", inst, record=False)
        outcome = vcg.outcome_from_memory(session.memory)
    else:
        rng = np.random.default_rng([seed, 1])
        ref = vcg.compute_vcg(inst)
        outcome = vcg.VcgOutcome(rng.integers(cfg.A, size=(cfg.H, cfg.S)), ref.pi_minus,
                                 rng.uniform(0, cfg.H, size=cfg.N), ref.social_value, ref.utilities)
    oracle = vcg_oracle(inst)
    ok = eval_vcg(outcome, oracle)
    err = float(np.abs(np.asarray(outcome.prices) - oracle.prices).max())
    rec = {"instance": i, "seed": seed, "N": cfg.N, "S": cfg.S, "A": cfg.A, "H": cfg.H,
           "success": int(ok), "max_price_error": err, "prices": np.asarray(outcome.prices).tolist()}
    return rec, {k: rec[k] for k in COLUMNS["vcg"]}


class _RandomBargainer:
    def __init__(self, seed):
        self.rng = np.random.default_rng([seed, 1])

    def offer(self, t):
        return float(self.rng.uniform())

    def respond(self, p, t):
        return bool(self.rng.integers(2))


def _run_bargain(cfg, i, seed):
    inst = sample_bargain_instance("complete", cfg.T, seed)
    sched = spe.compute_spe(inst)
    if cfg.agent == "scripted":
        session, _ = run_controller("bargain", inst, record=False)
        sched_ctrl = spe.schedule_from_memory(session.memory)
        buyer = spe.SPEBargainer(spe.BUYER).fit(inst)
        buyer.schedule_ = sched_ctrl
        transcript = spe.play(inst, buyer=buyer)
    else:
        transcript = spe.play(inst, buyer=_RandomBargainer(seed))
    ok = eval_bargain(transcript, sched, "complete")
    rec = {"instance": i, "seed": seed, "T": cfg.T, "delta_b": inst.delta_b, "delta_s": inst.delta_s,
           "success": int(ok), "price": transcript[0].price, "p1": sched.price(1),
           "transcript": [m.to_json() for m in transcript]}
    return rec, {k: rec[k] for k in COLUMNS["bargain"]}


def _run_bargain_incomplete(cfg, i, seed):
    inst = sample_bargain_instance("incomplete", cfg.T, seed)
    sched = se.compute_se(inst)
    if cfg.agent == "scripted":
        session, _ = run_controller("bargain-incomplete", inst, record=False)
        seller = se.SEBargainer(se.SELLER).fit(inst)
        seller.schedule_ = se.schedule_from_memory(session.memory)
        transcript = se.play(inst, seller=seller)
    else:
        transcript = se.play(inst, seller=_RandomBargainer(seed))
    ok = eval_bargain(transcript, sched, "incomplete", inst)
    deal = next((o.t for o in transcript if o.response == "accept"), None)
    rec = {"instance": i, "seed": seed, "T": cfg.T, "delta_b": inst.delta_b, "delta_s": inst.delta_s,
           "b": inst.b, "success": int(ok), "deal_t": deal,
           "transcript": [o.to_json() for o in transcript]}
    return rec, {k: rec[k] for k in COLUMNS["bargain-incomplete"]}


def _run_boardgame(cfg, i, seed):
    rows, cols = 3, 3
    root = bg.empty_node(rows, cols, 3, cfg.variant)
    rng = np.random.default_rng([seed, 1])

    def scripted(node):
        _, state = run_controller("boardgame", GameTask(node), record=False)
        return state.answer

    def random_agent(node):
        moves = bg.legal_moves(node)
        return int(moves[rng.integers(len(moves))])

    # scripted X against the configured O agent
    o_agent = scripted if cfg.agent == "scripted" else random_agent
    outcome, moves = bg.self_play(root, lambda n: scripted(n) if n.to_move == "X" else o_agent(n))
    rec = {"instance": i, "seed": seed, "variant": cfg.variant, "agent": cfg.agent,
           "outcome": {1: "X", -1: "O", 0: "draw"}[outcome], "moves": " ".join(map(str, moves))}
    return rec, {k: rec[k] for k in COLUMNS["boardgame"]}


_RUNNERS = {
    "mdp-known": _run_mdp_known,
    "mdp-unknown": _run_mdp_unknown,
    "vcg": _run_vcg,
    "bargain": _run_bargain,
    "bargain-incomplete": _run_bargain_incomplete,
    "boardgame": _run_boardgame,
}


def _aggregate(cfg, records) -> tuple[dict, list[dict] | None]:
    n = len(records)
    if cfg.kind == "mdp-known":
        return {"success_rate": float(np.mean([r["success_rate"] for r in records])),
                "instances_all_optimal": sum(r["success_rate"] == 1.0 for r in records), "n": n}, None
    if cfg.kind == "mdp-unknown":
        R = np.array([r["returns"] for r in records])
        E = np.array([r["expected_returns"] for r in records])
        V = np.array([r["V_star"] for r in records])
        table = [{"episode": k + 1, "mean_return": float(R[:, k].mean()),
                  "mean_expected_return": float(E[:, k].mean()), "mean_optimal_value": float(V.mean()),
                  "mean_ratio": float((E[:, k] / V).mean())} for k in range(R.shape[1])]
        ratios = [r["last10_ratio"] for r in records]
        return {"last10_ratio_mean": float(np.mean(ratios)), "last10_ratio_min": float(np.min(ratios)),
                "instances_converged": sum(x >= 0.95 for x in ratios), "n": n}, table
    if cfg.kind == "boardgame":
        outs = [r["outcome"] for r in records]
        return {k: outs.count(k) / n for k in ("X", "O", "draw")} | {"n": n}, None
    return {"success_rate": float(np.mean([r["success"] for r in records])), "n": n}, None


def run_experiment(config: ExperimentConfig) -> MetricsReport:
    runner = _RUNNERS[config.kind]
    records, rows = [], []
    for i in range(config.n_instances):
        seed = config.seed + i
        try:
            rec, row = runner(config, i, seed)
        except StrideError as e:
            raise StrideError(f"instance {i} (seed {seed}): {e}", code=e.code, op=e.op) from e
        records.append(rec)
        if row is not None:
            rows.append(row)
    aggregate, table = _aggregate(config, records)
    meta = {"config": config.to_json(), "config_hash": config.digest(), "code_version": code_version()}
    report = MetricsReport(config, records, table if table is not None else rows, aggregate, meta)
    if config.out:
        report.write(config.out)
    return report
