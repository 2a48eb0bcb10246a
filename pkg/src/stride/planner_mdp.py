"""Value iteration and UCB-VI as registered operations.

Memory layout (all under the ``mdp/`` namespace)::

    S, A, H, s1, mode          problem sizes; mode is "known" or "unknown"
    P, R                       true model (known mode only)
    N_sa, N_sas, P_hat, R_hat  learner statistics (unknown mode only)
    K, c, delta                bonus parameters (unknown mode only)
    Q  [H, S, A]               Q[h-1] holds Q_h
    V  [H+1, S]                V[h-1] holds V_h; V[H] is the terminal zero row
    V_final [H+1]              which V rows are finalized
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_policy
from .core import REGISTRY, Session, StrideError, check_index, check_step, get_arg_max
from .env_mdp import UNKNOWN, EnvSession, MdpInstance

NS = "mdp/"


@dataclass
class ValueTables:
    Q: np.ndarray  # [H, S, A]
    V: np.ndarray  # [H+1, S]

    def to_json(self) -> dict:
        return {"Q": self.Q.tolist(), "V": self.V.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "ValueTables":
        return cls(np.asarray(d["Q"], dtype=float), np.asarray(d["V"], dtype=float))


# --------------------------------------------------------------------------
# numeric kernels (shared with the mechanism module)


def add_reward(Q: np.ndarray, h: int, R: np.ndarray) -> None:
    Q[h - 1] += R


def add_lookahead(Q: np.ndarray, V: np.ndarray, h: int, P: np.ndarray) -> None:
    Q[h - 1] += P @ V[h]


def max_into_v(Q: np.ndarray, V: np.ndarray, h: int, cap: float | None = None) -> None:
    row = Q[h - 1].max(axis=1)
    if cap is not None:
        row = np.minimum(row, cap)
    V[h - 1] = row


def greedy_policy(Q: np.ndarray) -> np.ndarray:
    """Lowest-index near-argmax for every (h, s)."""
    H, S, _ = Q.shape
    pi = np.zeros((H, S), dtype=np.int64)
    for h in range(H):
        for s in range(S):
            pi[h, s] = get_arg_max(Q[h, s])[0]
    return pi


def policy_value(P: np.ndarray, R: np.ndarray, pi: np.ndarray, s1: int) -> float:
    """Exact expected H-step return of a deterministic Markov policy from ``s1``."""
    H, S = pi.shape
    d = np.zeros(S)
    d[s1] = 1.0
    total = 0.0
    idx = np.arange(S)
    for h in range(H):
        acts = pi[h]
        total += float(d @ R[idx, acts])
        d = d @ P[idx, acts]
    return total


def bonus(n, h: int, H: int, S: int, A: int, K: int, c: float, delta: float):
    """Hoeffding-style exploration bonus for visit count ``n`` at step ``h``."""
    log_term = math.log(S * A * H * K / delta)
    return c * (H - h + 1) * np.sqrt(log_term / np.maximum(n, 1))


# --------------------------------------------------------------------------
# memory setup (not operations: they establish the instance)


def _alloc_tables(mem, S: int, A: int, H: int) -> None:
    mem.write(NS + "Q", np.zeros((H, S, A)))
    mem.write(NS + "V", np.zeros((H + 1, S)))
    final = np.zeros(H + 1, dtype=bool)
    final[H] = True
    mem.write(NS + "V_final", final)


def load_known(mem, instance: MdpInstance) -> None:
    mem.write(NS + "S", instance.S)
    mem.write(NS + "A", instance.A)
    mem.write(NS + "H", instance.H)
    mem.write(NS + "s1", instance.s1)
    mem.write(NS + "mode", "known")
    mem.write(NS + "P", instance.P.copy())
    mem.write(NS + "R", instance.R.copy())
    _alloc_tables(mem, instance.S, instance.A, instance.H)


def load_learner(mem, S: int, A: int, H: int, K: int, c: float = 1.0, delta: float = 0.1,
                 s1: int = 0) -> None:
    for key, val in (("S", S), ("A", A), ("H", H), ("s1", s1), ("mode", "unknown"),
                     ("K", K), ("c", float(c)), ("delta", float(delta))):
        mem.write(NS + key, val)
    mem.write(NS + "N_sa", np.zeros((S, A), dtype=np.int64))
    mem.write(NS + "N_sas", np.zeros((S, A, S), dtype=np.int64))
    mem.write(NS + "P_hat", np.full((S, A, S), 1.0 / S))
    mem.write(NS + "R_hat", np.zeros((S, A)))
    _alloc_tables(mem, S, A, H)


def _dims(mem):
    return mem.read(NS + "S"), mem.read(NS + "A"), mem.read(NS + "H")


def _tables(mem):
    if NS + "Q" not in mem or NS + "V" not in mem:
        raise StrideError("Q/V tables are not allocated", code="tables-missing")
    return mem.read(NS + "Q"), mem.read(NS + "V"), mem.read(NS + "V_final")


def _unknown(mem) -> bool:
    return mem.read(NS + "mode") == "unknown"


def _model(mem):
    if _unknown(mem):
        return mem.read(NS + "P_hat"), mem.read(NS + "R_hat")
    return mem.read(NS + "P"), mem.read(NS + "R")


# --------------------------------------------------------------------------
# operations

_STEP = ("time_step", "step")


@REGISTRY.operation("InitValueTables", [], description="Reset Q and V tables to zero before a new planning pass.")
def op_init_tables(mem):
    Q, V, final = _tables(mem)
    H = mem.read(NS + "H")
    Q[:] = 0.0
    V[:] = 0.0
    final[:] = False
    final[H] = True
    return None


@REGISTRY.operation("UpdateQbyR", [_STEP],
                    description="Add the (estimated) reward R(s,a) to Q_h(s,a) for all (s,a).")
def op_update_q_by_r(mem, time_step):
    Q, _, _ = _tables(mem)
    h = check_step(time_step, mem.read(NS + "H"))
    add_reward(Q, h, _model(mem)[1])
    return None


@REGISTRY.operation("UpdateQbyPV", [_STEP],
                    description="Add the one-step look-ahead value sum_s' P(s'|s,a) V_{h+1}(s') to Q_h.")
def op_update_q_by_pv(mem, time_step):
    Q, V, final = _tables(mem)
    h = check_step(time_step, mem.read(NS + "H"))
    if not final[h]:
        raise StrideError(f"V_{h + 1} is not finalized", code="not-finalized")
    add_lookahead(Q, V, h, _model(mem)[0])
    return None


@REGISTRY.operation("UpdateV", [_STEP], description="Set V_h(s) = max_a Q_h(s,a).")
def op_update_v(mem, time_step):
    Q, V, final = _tables(mem)
    H = mem.read(NS + "H")
    h = check_step(time_step, H)
    max_into_v(Q, V, h, cap=float(H - h + 1) if _unknown(mem) else None)
    final[h - 1] = True
    return None


@REGISTRY.operation("GetQ", [_STEP, ("cur_state", "state")], result="reals",
                    description="Retrieve Q_h(s, a) for every action a.")
def op_get_q(mem, time_step, cur_state):
    Q, _, final = _tables(mem)
    S, _, H = _dims(mem)
    h = check_step(time_step, H)
    s = check_index(cur_state, S, "state")
    if not final[h - 1]:
        raise StrideError(f"Q_{h} is not finalized", code="not-finalized")
    return Q[h - 1, s].tolist()


@REGISTRY.operation("UpdateQbyBonus", [_STEP],
                    description="Add the exploration bonus to Q_h; unvisited pairs get the maximal value H-h+1.")
def op_update_q_by_bonus(mem, time_step):
    Q, _, _ = _tables(mem)
    if NS + "N_sa" not in mem:
        raise StrideError("no learner statistics in memory", code="learner-missing")
    S, A, H = _dims(mem)
    h = check_step(time_step, H)
    n = mem.read(NS + "N_sa")
    b = bonus(n, h, H, S, A, mem.read(NS + "K"), mem.read(NS + "c"), mem.read(NS + "delta"))
    Q[h - 1] = np.where(n == 0, float(H - h + 1), Q[h - 1] + b)
    return None


@REGISTRY.operation("UpdateMDPModel", [("s", "state"), ("a", "action"), ("s_prime", "state"), ("r", "real")],
                    description="Update the estimated reward and transition function with one observation.")
def op_update_mdp_model(mem, s, a, s_prime, r):
    if NS + "N_sa" not in mem:
        raise StrideError("no learner statistics in memory", code="learner-missing")
    S, A, _ = _dims(mem)
    s, a, s_prime = check_index(s, S, "state"), check_index(a, A, "action"), check_index(s_prime, S, "state")
    N_sa, N_sas = mem.read(NS + "N_sa"), mem.read(NS + "N_sas")
    P_hat, R_hat = mem.read(NS + "P_hat"), mem.read(NS + "R_hat")
    N_sa[s, a] += 1
    N_sas[s, a, s_prime] += 1
    n = N_sa[s, a]
    P_hat[s, a] = N_sas[s, a] / n
    R_hat[s, a] = R_hat[s, a] * (n - 1) / n + float(r) / n
    return None


# --------------------------------------------------------------------------
# composed solvers


def read_tables(mem) -> ValueTables:
    Q, V, _ = _tables(mem)
    return ValueTables(Q.copy(), V.copy())


def backward_pass(session: Session, optimistic: bool = False) -> None:
    H = session.memory.read(NS + "H")
    for h in range(H, 0, -1):
        session.invoke("UpdateQbyR", {"time_step": h})
        session.invoke("UpdateQbyPV", {"time_step": h})
        if optimistic:
            session.invoke("UpdateQbyBonus", {"time_step": h})
        session.invoke("UpdateV", {"time_step": h})


def solve_known(instance: MdpInstance, session: Session | None = None) -> tuple[ValueTables, np.ndarray]:
    session = session or Session()
    load_known(session.memory, instance)
    backward_pass(session)
    tables = read_tables(session.memory)
    return tables, greedy_policy(tables.Q)


class UCBVILearner:
    """Learner statistics held in a session's working memory."""

    def __init__(self, S: int, A: int, H: int, K: int, c: float = 1.0, delta: float = 0.1,
                 s1: int = 0, session: Session | None = None):
        self.session = session or Session()
        load_learner(self.session.memory, S, A, H, K, c, delta, s1)

    def _get(self, key):
        return self.session.memory.read(NS + key)

    N_sa = property(lambda self: self._get("N_sa"))
    N_sas = property(lambda self: self._get("N_sas"))
    P_hat = property(lambda self: self._get("P_hat"))
    R_hat = property(lambda self: self._get("R_hat"))
    K = property(lambda self: self._get("K"))

    def tables(self) -> ValueTables:
        return read_tables(self.session.memory)

    def policy(self) -> np.ndarray:
        return greedy_policy(self._get("Q"))

    def planned_value(self) -> float:
        return float(self._get("V")[0, self._get("s1")])


def ucbvi_episode(sess: EnvSession, learner: UCBVILearner, k: int) -> float:
    """Plan optimistically, act greedily for H steps, update the model.

    Returns the sum of true mean rewards along the realized trajectory.
    """
    if sess.mode != UNKNOWN:
        raise StrideError("UCB-VI requires an unknown-model session", code="invalid-mode")
    ses = learner.session
    ses.invoke("InitValueTables")
    backward_pass(ses, optimistic=True)
    sess.reset()
    total = 0.0
    R = sess.instance.R
    for h in range(1, sess.instance.H + 1):
        s = sess.s
        q = ses.invoke("GetQ", {"time_step": h, "cur_state": s})
        a = ses.invoke("GetArgMax", {"values": q})[0]
        r, s_next = sess.step(a)
        total += float(R[s, a])
        ses.invoke("UpdateMDPModel", {"s": s, "a": a, "s_prime": s_next, "r": r})
    return total


def check_bellman(instance: MdpInstance, tables: ValueTables, tol: float = 1e-9) -> bool:
    H = instance.H
    for h in range(1, H + 1):
        target = instance.R + instance.P @ tables.V[h]
        if np.abs(tables.Q[h - 1] - target).max() > tol:
            return False
        if np.abs(tables.V[h - 1] - tables.Q[h - 1].max(axis=1)).max() > tol:
            return False
    return True


# --------------------------------------------------------------------------
# estimator front-ends


def _check_instance(instance) -> MdpInstance:
    if isinstance(instance, dict):
        instance = MdpInstance.from_json(instance)
    if not isinstance(instance, MdpInstance):
        raise TypeError(f"expected an MdpInstance, got {type(instance).__name__}")
    return instance


def _check_queries(X, H: int, S: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.int64))
    if X.shape[1] != 2:
        raise ValueError("queries must be (h, s) pairs")
    for h, s in X:
        check_step(int(h), H)
        check_index(int(s), S, "state")
    return X


class ValueIteration(BaseEstimator):
    """Finite-horizon value iteration on a known model.

    ``fit`` takes an :class:`MdpInstance`; ``predict`` maps ``(h, s)`` query
    rows to greedy actions.
    """

    def fit(self, instance, y=None):
        instance = _check_instance(instance)
        self.tables_, self.policy_ = solve_known(instance)
        self.Q_, self.V_ = self.tables_.Q, self.tables_.V
        self.value_ = float(self.V_[0, instance.s1])
        self.n_states_, self.horizon_ = instance.S, instance.H
        return self

    def predict(self, X):
        check_is_fitted(self, "policy_")
        X = _check_queries(X, self.horizon_, self.n_states_)
        return self.policy_[X[:, 0] - 1, X[:, 1]]


class UCBVI(BaseEstimator):
    """UCB-VI on an unknown model, run for ``n_episodes`` episodes."""

    def __init__(self, n_episodes: int = 40, c: float = 1.0, delta: float = 0.1, seed: int = 0):
        self.n_episodes = n_episodes
        self.c = c
        self.delta = delta
        self.seed = seed

    def fit(self, instance, y=None):
        instance = _check_instance(instance)
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        env = EnvSession(instance, UNKNOWN, self.seed)
        learner = UCBVILearner(instance.S, instance.A, instance.H, self.n_episodes, self.c,
                               self.delta, instance.s1)
        returns, expected, policies = [], [], []
        for k in range(1, self.n_episodes + 1):
            returns.append(ucbvi_episode(env, learner, k))
            pi = learner.policy()
            policies.append(pi)
            expected.append(policy_value(instance.P, instance.R, pi, instance.s1))
        self.learner_ = learner
        self.returns_ = np.asarray(returns)
        self.expected_returns_ = np.asarray(expected)
        self.policies_ = policies
        self.policy_ = policies[-1]
        self.n_states_, self.horizon_ = instance.S, instance.H
        return self

    def predict(self, X):
        check_is_fitted(self, "policy_")
        X = _check_queries(X, self.horizon_, self.n_states_)
        return self.policy_[X[:, 0] - 1, X[:, 1]]


def evaluate_policy(instance: MdpInstance, pi) -> float:
    pi = check_policy(pi, instance.H, instance.S, instance.A)
    return policy_value(instance.P, instance.R, pi, instance.s1)
