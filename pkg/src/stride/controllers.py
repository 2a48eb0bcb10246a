"""Scripted controllers, demonstration traces and the LLM controller adapter.

A scripted controller is a generator that yields :class:`Step` objects.
Each step carries a question, a ThoughtUnit and the concrete calls for the
unit's operations.  A call's arguments may be given as a function of the
results of earlier calls in the same step, which is how e.g. the action
chosen by ``GetArgMax`` feeds the next ``UpdateMDPModel``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Iterator

import numpy as np

from . import bargain_complete as spe
from . import bargain_incomplete as se
from . import boardgames as bg
from . import mechanism_vcg as vcg
from . import planner_mdp as mdp
from .core import (Session, StrideError, ThoughtUnit, Trace, WorkingMemory, default_registry,
                   validate_thought)
from .env_mdp import UNKNOWN, EnvSession, MdpInstance

ArgSource = dict | Callable[[list], dict]


@dataclass
class Step:
    question: str
    thought: ThoughtUnit
    calls: list[tuple[str, ArgSource]] = field(default_factory=list)


@dataclass
class LearnerTask:
    """An unknown-model MDP run: the true instance plus learner settings."""

    instance: MdpInstance
    K: int = 40
    seed: int = 0
    c: float = 1.0
    delta: float = 0.1

    def to_json(self) -> dict:
        return {"instance": self.instance.to_json(), "K": self.K, "seed": self.seed,
                "c": self.c, "delta": self.delta}

    @classmethod
    def from_json(cls, d: dict) -> "LearnerTask":
        return cls(MdpInstance.from_json(d["instance"]), int(d["K"]), int(d["seed"]),
                   float(d["c"]), float(d["delta"]))


@dataclass
class GameTask:
    node: bg.GameNode

    def to_json(self) -> dict:
        n = self.node
        return {"board": n.notation(), "to_move": n.to_move, "win_length": n.win_length,
                "variant": n.variant}

    @classmethod
    def from_json(cls, d: dict) -> "GameTask":
        return cls(bg.parse_board(d["board"], variant=d["variant"], win_length=d["win_length"],
                                  to_move=d["to_move"]))


# --------------------------------------------------------------------------
# programs


def _vi_program(inst: MdpInstance, ctx: dict) -> Iterator[Step]:
    H = inst.H
    for h in range(H, 0, -1):
        text = (f"Step h={h}: the values at h+1 are final, so add the rewards, add the expected "
                f"value of the next step and take the maximum over actions."
                if h < H else
                f"Start at the last step h={H}: the future value is zero, so Q is the reward.")
        ops = ["UpdateQbyR", "UpdateQbyPV", "UpdateV"]
        yield Step(f"What are the Q and V values at step {h}?", ThoughtUnit(text, ops),
                   [(op, {"time_step": h}) for op in ops])
    res = yield Step(f"Which action is optimal in state {inst.s1} at step 1?",
                     ThoughtUnit("Read the Q values of the initial state and take the best action.",
                                 ["GetQ", "GetArgMax"]),
                     [("GetQ", {"time_step": 1, "cur_state": inst.s1}),
                      ("GetArgMax", lambda r: {"values": r[0]})])
    ctx["answer"] = res[1][0]


def _ucbvi_program(task: LearnerTask, ctx: dict) -> Iterator[Step]:
    inst = task.instance
    env = EnvSession(inst, UNKNOWN, task.seed)
    ctx["env"] = env
    returns = []
    for k in range(1, task.K + 1):
        yield Step(f"Episode {k}: what is the optimistic plan?",
                   ThoughtUnit("Clear the value tables before planning on the current model estimate.",
                               ["InitValueTables"]), [("InitValueTables", {})])
        for h in range(inst.H, 0, -1):
            ops = ["UpdateQbyR", "UpdateQbyPV", "UpdateQbyBonus", "UpdateV"]
            yield Step(f"Episode {k}: optimistic values at step {h}?",
                       ThoughtUnit(f"Back up the estimated rewards and transitions at h={h}, then add "
                                   f"the exploration bonus before taking the maximum.", ops),
                       [(op, {"time_step": h}) for op in ops])
        env.reset()
        total = 0.0
        for h in range(1, inst.H + 1):
            s = env.s

            def act(r, s=s):
                a = r[1][0]
                reward, s_next = env.step(a)
                return {"s": s, "a": a, "s_prime": s_next, "r": reward}

            res = yield Step(f"Episode {k}, step {h}: which action to take in state {s}?",
                             ThoughtUnit("Take the action with the highest optimistic Q value, observe "
                                         "the outcome and update the model estimate.",
                                         ["GetQ", "GetArgMax", "UpdateMDPModel"]),
                             [("GetQ", {"time_step": h, "cur_state": s}),
                              ("GetArgMax", lambda r: {"values": r[0]}),
                              ("UpdateMDPModel", act)])
            total += float(inst.R[s, res[1][0]])
        returns.append(total)
    ctx["answer"] = returns


def _vcg_program(inst: vcg.MechanismInstance, ctx: dict) -> Iterator[Step]:
    H = inst.base.H
    ops = ["UpdateQbyRExcluding", "UpdateQbyPVExcluding", "UpdateVExcluding"]

    def exclusion(ex):
        who = "all agents" if ex is None else f"every agent except {ex}"
        for h in range(H, 0, -1):
            yield Step(f"Values at step {h} for the rewards of {who}?",
                       ThoughtUnit(f"Back up the summed rewards of {who} at h={h}.", ops),
                       [(op, {"time_step": h, "excluded_agent": ex}) for op in ops])

    yield from exclusion(None)
    evaluations = []
    for i in range(inst.N):
        yield from exclusion(i)
        res = yield Step(f"What do the other agents get under the chosen policy, without agent {i}?",
                         ThoughtUnit(f"Evaluate the optimal policy on the rewards of everyone but "
                                     f"agent {i}; the price is the gap to their own optimum.",
                                     ["EvaluatePolicyExcluding"]),
                         [("EvaluatePolicyExcluding", {"excluded_agent": i})])
        evaluations.append(res[0])
    ctx["answer"] = evaluations


def _spe_program(inst: spe.CompleteBargainInstance, ctx: dict) -> Iterator[Step]:
    T = inst.T
    for t in range(T, 0, -1):
        prop, resp = spe.proposer(t), spe.responder(t)
        yield Step(f"What does the {prop} offer at t={t}?",
                   ThoughtUnit(f"The {resp} rejects unless the offer beats the utility of the next "
                               f"equilibrium price, so compute that utility and make the {resp} "
                               f"indifferent.", ["GetSPEPrice", "CalcUtil", "BackwardOneStep"]),
                   [("GetSPEPrice", {"t": t + 1}),
                    ("CalcUtil", lambda r, t=t, resp=resp: {"agent": resp, "price": r[0], "t": t + 1}),
                    ("BackwardOneStep", lambda r, t=t, prop=prop: {"agent": prop, "op_u": r[1], "t": t})])
    res = yield Step("What is the equilibrium price at t=1?",
                     ThoughtUnit("Read the first-step price; the game ends there.", ["GetSPEPrice"]),
                     [("GetSPEPrice", {"t": 1})])
    ctx["answer"] = res[0]


def _se_program(inst: se.IncompleteBargainInstance, ctx: dict) -> Iterator[Step]:
    T = inst.T
    lo, hi = 0.0, 1.0
    guess = (lo + hi) / 2
    n = 0
    while True:
        res = yield Step(f"If the cutoff at step {T - 1} were {guess:.6f}, what would the first cutoff be?",
                         ThoughtUnit("Propagate the guessed last cutoff back to step 0 and compare "
                                     "with the known upper bound 1.", ["ComputeBt"]),
                         [("ComputeBt", {"time_step": 1, "b_last": guess})])
        n += 1
        b0 = res[0]
        if abs(b0 - 1.0) < se.BISECTION_TOL:
            break
        if n >= se.MAX_BISECTION:
            raise StrideError("bisection did not converge", code="bisection-failure")
        if b0 <= 1.0:
            lo = guess
        else:
            hi = guess
        guess = (lo + hi) / 2
    res = yield Step(f"What is the price at the last step T={T}?",
                     ThoughtUnit("At the deadline the seller prices at half the last cutoff.", ["SolveLast"]),
                     [("SolveLast", {"b_last": guess})])
    u, p = res[0]
    for t in range(T - 1, 0, -1):
        res = yield Step(f"What is the price at t={t}?",
                         ThoughtUnit("The marginal buyer type is indifferent between buying now and "
                                     "at the next price; now compute the seller's value.", ["Solve"]),
                         [("Solve", {"u": u, "p": p, "t": t})])
        u, p = res[0]
    ctx["answer"] = n


def _minimax_program(task: GameTask, ctx: dict) -> Iterator[Step]:
    board = task.node.notation()
    yield Step(f"What are the minimax values from {board}?",
               ThoughtUnit("Search the game tree from the current position with alpha-beta pruning.",
                           ["CalculateScores"]),
               [("CalculateScores", {"board": board})])
    maximizing = task.node.to_move == "X"

    def sign(r):
        moves = sorted(r[0], key=int)
        ctx["moves"] = [int(m) for m in moves]
        return {"values": [r[0][m] if maximizing else -r[0][m] for m in moves]}

    res = yield Step(f"Which move should {task.node.to_move} play?",
                     ThoughtUnit("Read the scores of the immediate moves and pick the best one for "
                                 "the side to move.", ["GetScores", "GetArgMax"]),
                     [("GetScores", {"depth": 1}), ("GetArgMax", sign)])
    ctx["answer"] = ctx["moves"][res[1][0]]


@dataclass(frozen=True)
class ModuleSpec:
    program: Callable
    load: Callable[[WorkingMemory, Any], None]
    decode: Callable[[dict], Any]


def _load_game(mem, task: GameTask) -> None:
    n = task.node
    bg.load_game(mem, n.variant, n.rows, n.cols, n.win_length)


def _load_learner(mem, task: LearnerTask) -> None:
    i = task.instance
    mdp.load_learner(mem, i.S, i.A, i.H, task.K, task.c, task.delta, i.s1)


MODULES: dict[str, ModuleSpec] = {
    "mdp-known": ModuleSpec(_vi_program, mdp.load_known, MdpInstance.from_json),
    "mdp-unknown": ModuleSpec(_ucbvi_program, _load_learner, LearnerTask.from_json),
    "vcg": ModuleSpec(_vcg_program, vcg.load_mechanism, vcg.MechanismInstance.from_json),
    "bargain": ModuleSpec(_spe_program, spe.load_bargain, spe.CompleteBargainInstance.from_json),
    "bargain-incomplete": ModuleSpec(_se_program, se.load_se, se.IncompleteBargainInstance.from_json),
    "boardgame": ModuleSpec(_minimax_program, _load_game, GameTask.from_json),
}


def _module(name: str) -> ModuleSpec:
    if name not in MODULES:
        raise StrideError(f"no scripted controller for {name!r}", code="unknown-module")
    return MODULES[name]


# --------------------------------------------------------------------------
# controller state and runner


@dataclass
class ControllerState:
    module: str
    instance: Any
    pc: int = 0
    question: str = ""
    exited: bool = False
    context: dict = field(default_factory=dict)
    _program: Iterator[Step] | None = None
    _pending: Step | None = None
    _results: list | None = None

    def __post_init__(self):
        self._program = _module(self.module).program(self.instance, self.context)

    @property
    def answer(self):
        return self.context.get("answer")


def next_thought(state: ControllerState, mem: WorkingMemory | None = None) -> ThoughtUnit:
    """Advance the program to its next unit.  Results of the previous unit's
    calls must have been supplied by :func:`execute`."""
    if state.exited:
        raise StrideError("controller has already exited", code="already-exited")
    try:
        if state.pc == 0:
            step = next(state._program)
        else:
            step = state._program.send(state._results)
    except StopIteration:
        state.exited = True
        state._pending = None
        state.question = "Is the computation complete?"
        return ThoughtUnit("All required quantities are computed, so we can stop here.", (), True)
    state.pc += 1
    state._pending = step
    state._results = None
    state.question = step.question
    return step.thought


def execute(state: ControllerState, session: Session) -> list:
    """Run the calls of the pending unit, resolving lazy arguments in order."""
    step = state._pending
    results: list = []
    if step is not None:
        for op, args in step.calls:
            resolved = args(results) if callable(args) else args
            results.append(session.invoke(op, resolved))
    state._results = results
    return results


def run_controller(module: str, instance, session: Session | None = None, record: bool = True):
    """Run a scripted controller to completion.

    Every unit is validated before its calls are issued.  Returns the
    session (memory and trace) and the final controller state.
    """
    spec = _module(module)
    session = session or Session(record=record)
    spec.load(session.memory, instance)
    state = ControllerState(module, instance)
    while not state.exited:
        thought = next_thought(state, session.memory)
        check = validate_thought(thought, session.registry)
        if not check.ok:
            raise StrideError(check.message(), code=check.codes[0])
        session.begin(state.question, thought)
        execute(state, session)
    return session, state


# --------------------------------------------------------------------------
# demonstrations


@dataclass
class Demonstration:
    module: str
    instance: Any
    trace: Trace
    digest: str = ""

    def descriptor(self) -> dict:
        return {"module": self.module, "instance": _jsonable_instance(self.instance), "digest": self.digest}

    def save(self, trace_path, instance_path=None) -> None:
        self.trace.save(trace_path)
        instance_path = instance_path or f"{trace_path}.instance.json"
        with open(instance_path, "w") as f:
            json.dump(self.descriptor(), f)

    @classmethod
    def load(cls, trace_path, instance_path=None) -> "Demonstration":
        instance_path = instance_path or f"{trace_path}.instance.json"
        with open(instance_path) as f:
            d = json.load(f)
        inst = _module(d["module"]).decode(d["instance"])
        return cls(d["module"], inst, Trace.load(trace_path), d.get("digest", ""))


def _jsonable_instance(instance) -> dict:
    return instance.to_json()


def generate_demonstration(module: str, instance) -> Demonstration:
    session, _ = run_controller(module, instance, record=True)
    return Demonstration(module, instance, session.trace, session.memory.digest())


def replay_demonstration(demo: Demonstration) -> WorkingMemory:
    """Fresh memory loaded with the instance, then every recorded call re-issued."""
    session = Session()
    _module(demo.module).load(session.memory, demo.instance)
    session.replay(demo.trace)
    return session.memory


# --------------------------------------------------------------------------
# LLM controller adapter (optional)

LLM_SWITCH = "STRIDE_LLM"
LLM_ENDPOINT = "STRIDE_LLM_ENDPOINT"
LLM_API_KEY = "STRIDE_LLM_API_KEY"
LLM_MODEL = "STRIDE_LLM_MODEL"
MAX_RETRIES = 3


def llm_enabled() -> bool:
    return os.environ.get(LLM_SWITCH, "") == "1"


def load_prompt(name: str) -> str:
    return resources.files("stride").joinpath("prompts", f"{name}.txt").read_text()


def tool_schemas(registry=None) -> list[dict]:
    registry = registry or default_registry()
    return [{"type": "function", "function": registry.descriptor(n).json_schema()} for n in registry]


class LLMController:
    """Produces ThoughtUnits and operation arguments from a chat-completion
    service with function calling.

    The unit is requested as a JSON object; each operation's arguments are
    then requested in a separate call that forces that operation's tool.
    Results are fed back as tool messages.
    """

    def __init__(self, session: Session, demonstration: Demonstration | None = None,
                 client=None, endpoint: str | None = None, api_key: str | None = None,
                 model: str | None = None, max_retries: int = MAX_RETRIES):
        if client is None and not llm_enabled():
            raise StrideError(f"LLM adapter disabled; set {LLM_SWITCH}=1", code="adapter-disabled")
        if client is None:
            import httpx

            client = httpx.Client(timeout=60.0)
        self.client = client
        self.endpoint = endpoint or os.environ.get(LLM_ENDPOINT, "")
        self.api_key = api_key or os.environ.get(LLM_API_KEY, "")
        self.model = model or os.environ.get(LLM_MODEL, "default")
        self.session = session
        self.max_retries = max_retries
        self.tools = tool_schemas(session.registry)
        self.messages: list[dict] = [{"role": "system", "content": load_prompt("system")
                                      + "\n\n" + load_prompt("thought_format")}]
        if demonstration is not None:
            self.messages.append({"role": "user", "content": "Example run:\n" + demonstration.trace.dumps()})

    def _post(self, payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        resp = self.client.post(self.endpoint, json=payload, headers=headers)
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]

    def thought(self, question: str) -> ThoughtUnit:
        self.messages.append({"role": "user", "content": question})
        for _ in range(self.max_retries + 1):
            msg = self._post({"model": self.model, "messages": self.messages,
                              "response_format": {"type": "json_object"}})
            self.messages.append({"role": "assistant", "content": msg.get("content", "")})
            try:
                unit = ThoughtUnit.from_json(json.loads(msg.get("content") or ""))
            except (ValueError, KeyError, TypeError) as e:
                problem = f"malformed unit: {e}"
            else:
                check = validate_thought(unit, self.session.registry)
                if check.ok:
                    return unit
                problem = check.message()
            self.messages.append({"role": "user", "content": load_prompt("revise") + "\n" + problem})
        raise StrideError(f"no valid unit after {self.max_retries} retries: {problem}",
                          code="adapter-retries-exhausted")

    def call(self, op: str) -> Any:
        msg = self._post({"model": self.model, "messages": self.messages, "tools": self.tools,
                          "tool_choice": {"type": "function", "function": {"name": op}}})
        calls = msg.get("tool_calls") or []
        if not calls:
            raise StrideError(f"service returned no arguments for {op}", code="adapter-no-call")
        call = calls[0]
        args = json.loads(call["function"]["arguments"] or "{}")
        self.messages.append({"role": "assistant", "content": None, "tool_calls": [call]})
        try:
            result = self.session.invoke(op, args)
            content = json.dumps(_to_plain(result))
        except StrideError as e:
            result, content = e, json.dumps({"error": e.code, "message": str(e)})
        self.messages.append({"role": "tool", "tool_call_id": call.get("id", ""), "content": content})
        return result

    def run(self, question: str, max_units: int = 1000) -> list[ThoughtUnit]:
        units = []
        for _ in range(max_units):
            unit = self.thought(question)
            units.append(unit)
            if unit.exit:
                return units
            self.session.begin(question, unit)
            for op in unit.operations:
                self.call(op)
            question = "Continue."
        raise StrideError(f"no exit after {max_units} units", code="adapter-no-exit")


def _to_plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_to_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _to_plain(x) for k, x in v.items()}
    return v
