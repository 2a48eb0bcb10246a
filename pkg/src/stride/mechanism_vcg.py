"""Dynamic VCG mechanism over a shared finite-horizon MDP.

Each exclusion set (``none`` or agent ``i``) owns its own Q/V tables under
``vcg/<tag>/``, so the per-agent passes never touch each other's state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_policy, check_reward_matrix
from .core import REGISTRY, Session, StrideError, check_index, check_step
from .env_mdp import EnvSession, MdpInstance, generate_instance
from .planner_mdp import add_lookahead, add_reward, greedy_policy, max_into_v, policy_value

NS = "vcg/"


@dataclass
class MechanismInstance:
    base: MdpInstance
    R_agents: np.ndarray  # [N, S, A] reported rewards
    noise: bool = False

    def __post_init__(self):
        R = np.asarray(self.R_agents, dtype=float)
        if R.ndim != 3 or R.shape[0] < 1:
            raise StrideError("R_agents must have shape (N, S, A) with N >= 1", code="invalid-instance")
        for Ri in R:
            check_reward_matrix(Ri, self.base.S, self.base.A)
        self.R_agents = R

    @property
    def N(self) -> int:
        return self.R_agents.shape[0]

    def reward_excluding(self, excluded: int | None) -> np.ndarray:
        keep = [j for j in range(self.N) if j != excluded]
        return self.R_agents[keep].sum(axis=0) if keep else np.zeros_like(self.R_agents[0])

    def to_json(self) -> dict:
        d = self.base.to_json()
        d.update(N=self.N, R_agents=self.R_agents.tolist(), noise=self.noise)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "MechanismInstance":
        return cls(MdpInstance.from_json(d), np.asarray(d["R_agents"], dtype=float), bool(d.get("noise", False)))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def generate_mechanism_instance(N: int, S: int, A: int, H: int, seed: int) -> MechanismInstance:
    base = generate_instance(S, A, H, seed)
    rng = np.random.default_rng([seed, N])
    return MechanismInstance(base, rng.uniform(0.0, 1.0, size=(N, S, A)))


@dataclass
class VcgOutcome:
    pi_star: np.ndarray
    pi_minus: list[np.ndarray]
    prices: np.ndarray
    social_value: float
    utilities: np.ndarray  # u_i = V^{pi*}(P, R_i) - p_i under reported rewards

    def to_json(self) -> dict:
        return {"pi_star": self.pi_star.tolist(), "pi_minus": [p.tolist() for p in self.pi_minus],
                "prices": self.prices.tolist(), "social_value": self.social_value,
                "utilities": self.utilities.tolist()}


# --------------------------------------------------------------------------
# memory


def _tag(excluded) -> str:
    return "none" if excluded is None else str(int(excluded))


def load_mechanism(mem, inst: MechanismInstance) -> None:
    b = inst.base
    for key, val in (("N", inst.N), ("S", b.S), ("A", b.A), ("H", b.H), ("s1", b.s1)):
        mem.write(NS + key, val)
    mem.write(NS + "P", b.P.copy())
    mem.write(NS + "R_agents", inst.R_agents.copy())
    for excluded in [None, *range(inst.N)]:
        t = NS + _tag(excluded) + "/"
        mem.write(t + "Q", np.zeros((b.H, b.S, b.A)))
        mem.write(t + "V", np.zeros((b.H + 1, b.S)))
        final = np.zeros(b.H + 1, dtype=bool)
        final[b.H] = True
        mem.write(t + "V_final", final)


def _agent(mem, excluded):
    if excluded is not None:
        check_index(excluded, mem.read(NS + "N"), "agent")
    return excluded


def _tables(mem, excluded):
    t = NS + _tag(excluded) + "/"
    if t + "Q" not in mem:
        raise StrideError(f"no tables for exclusion {_tag(excluded)}", code="tables-missing")
    return mem.read(t + "Q"), mem.read(t + "V"), mem.read(t + "V_final")


def _summed_rewards(mem, excluded) -> np.ndarray:
    R = mem.read(NS + "R_agents")
    keep = [j for j in range(R.shape[0]) if j != excluded]
    return R[keep].sum(axis=0) if keep else np.zeros(R.shape[1:])


_ARGS = [("time_step", "step"), ("excluded_agent", "agent")]


@REGISTRY.operation("UpdateQbyRExcluding", _ARGS,
                    description="Add immediate rewards of all agents except excluded_agent (None: all) to Q_h.")
def op_q_by_r_excl(mem, time_step, excluded_agent):
    ex = _agent(mem, excluded_agent)
    h = check_step(time_step, mem.read(NS + "H"))
    Q, _, _ = _tables(mem, ex)
    add_reward(Q, h, _summed_rewards(mem, ex))
    return None


@REGISTRY.operation("UpdateQbyPVExcluding", _ARGS,
                    description="Add the one-step look-ahead value of the excluded-agent MDP to Q_h.")
def op_q_by_pv_excl(mem, time_step, excluded_agent):
    ex = _agent(mem, excluded_agent)
    h = check_step(time_step, mem.read(NS + "H"))
    Q, V, final = _tables(mem, ex)
    if not final[h]:
        raise StrideError(f"V_{h + 1} is not finalized", code="not-finalized")
    add_lookahead(Q, V, h, mem.read(NS + "P"))
    return None


@REGISTRY.operation("UpdateVExcluding", _ARGS,
                    description="Set V_h = max_a Q_h for the excluded-agent MDP.")
def op_v_excl(mem, time_step, excluded_agent):
    ex = _agent(mem, excluded_agent)
    h = check_step(time_step, mem.read(NS + "H"))
    Q, V, final = _tables(mem, ex)
    max_into_v(Q, V, h)
    final[h - 1] = True
    return None


@REGISTRY.operation("GetQExcluding", [("time_step", "step"), ("cur_state", "state"), ("excluded_agent", "agent")],
                    result="reals", description="Retrieve Q values of the excluded-agent MDP at (h, s).")
def op_get_q_excl(mem, time_step, cur_state, excluded_agent):
    ex = _agent(mem, excluded_agent)
    h = check_step(time_step, mem.read(NS + "H"))
    s = check_index(cur_state, mem.read(NS + "S"), "state")
    Q, _, final = _tables(mem, ex)
    if not final[h - 1]:
        raise StrideError(f"Q_{h} is not finalized", code="not-finalized")
    return Q[h - 1, s].tolist()


@REGISTRY.operation("EvaluatePolicyExcluding", [("excluded_agent", "agent"), ("policy", "policy", False)],
                    result="real",
                    description="Evaluate a policy (default: the optimal all-agent policy) on the MDP "
                                "whose reward excludes excluded_agent.")
def op_eval_excl(mem, excluded_agent, policy=None):
    ex = _agent(mem, excluded_agent)
    H, S, A = mem.read(NS + "H"), mem.read(NS + "S"), mem.read(NS + "A")
    if policy is None:
        Q, _, final = _tables(mem, None)
        if not final.all():
            raise StrideError("optimal policy tables are incomplete", code="not-finalized")
        pi = greedy_policy(Q)
    else:
        pi = check_policy(policy, H, S, A)
    value = policy_value(mem.read(NS + "P"), _summed_rewards(mem, ex), pi, mem.read(NS + "s1"))
    mem.write(NS + f"eval/{_tag(ex)}", value)
    return value


# --------------------------------------------------------------------------
# composed solver


def exclusion_pass(session: Session, excluded) -> None:
    H = session.memory.read(NS + "H")
    for h in range(H, 0, -1):
        args = {"time_step": h, "excluded_agent": excluded}
        session.invoke("UpdateQbyRExcluding", args)
        session.invoke("UpdateQbyPVExcluding", args)
        session.invoke("UpdateVExcluding", args)


def outcome_from_memory(mem) -> VcgOutcome:
    """Assemble the mechanism outcome from completed tables and evaluations."""
    N, s1 = mem.read(NS + "N"), mem.read(NS + "s1")
    Q, V, _ = _tables(mem, None)
    pi_star = greedy_policy(Q)
    pi_minus, prices = [], []
    for i in range(N):
        Qi, Vi, _ = _tables(mem, i)
        pi_minus.append(greedy_policy(Qi))
        prices.append(float(Vi[0, s1]) - float(mem.read(NS + f"eval/{i}")))
    R = mem.read(NS + "R_agents")
    P = mem.read(NS + "P")
    own = np.array([policy_value(P, R[i], pi_star, s1) for i in range(N)])
    prices = np.asarray(prices)
    return VcgOutcome(pi_star, pi_minus, prices, float(V[0, s1]), own - prices)


def compute_vcg(instance: MechanismInstance, session: Session | None = None) -> VcgOutcome:
    session = session or Session()
    load_mechanism(session.memory, instance)
    exclusion_pass(session, None)
    for i in range(instance.N):
        exclusion_pass(session, i)
        session.invoke("EvaluatePolicyExcluding", {"excluded_agent": i})
    return outcome_from_memory(session.memory)


def mechanism_act(sess: EnvSession, outcome: VcgOutcome, h: int) -> int:
    H, S = outcome.pi_star.shape
    if sess.instance.H != H or sess.instance.S != S:
        raise StrideError("session and outcome disagree on (H, S)", code="session-mismatch")
    check_step(h, H)
    return int(outcome.pi_star[h - 1, sess.s])


# --------------------------------------------------------------------------


class DynamicVCG(BaseEstimator):
    """``fit`` on a :class:`MechanismInstance`; exposes ``policy_`` and ``prices_``."""

    def fit(self, instance, y=None):
        if isinstance(instance, dict):
            instance = MechanismInstance.from_json(instance)
        self.outcome_ = compute_vcg(instance)
        self.policy_ = self.outcome_.pi_star
        self.prices_ = self.outcome_.prices
        self.social_value_ = self.outcome_.social_value
        return self

    def predict(self, X):
        check_is_fitted(self, "policy_")
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        H, S = self.policy_.shape
        for h, s in X:
            check_step(int(h), H)
            check_index(int(s), S, "state")
        return self.policy_[X[:, 0] - 1, X[:, 1]]
