"""Alternating-offer bargaining with complete information.

Buyer value is 1 and seller cost 0.  The buyer proposes at odd steps, the
seller at even steps.  The subgame-perfect price schedule is obtained by
backward induction over proposer turns.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_discount
from .core import REGISTRY, Session, StrideError

NS = "spe/"
PRICE_TOL = 1e-9
NO_DEAL = None  # price "offered" after the deadline; utility 0 for both sides
INDIFFERENCE_TOL = 1e-12  # closed-form prices leave the responder indifferent up to rounding

BUYER, SELLER = "buyer", "seller"


@dataclass(frozen=True)
class CompleteBargainInstance:
    delta_b: float
    delta_s: float
    T: int

    def __post_init__(self):
        check_discount("delta_b", self.delta_b)
        check_discount("delta_s", self.delta_s)
        if self.T < 1:
            raise StrideError(f"deadline T must be >= 1, got {self.T}", code="invalid-instance")

    def to_json(self) -> dict:
        return {"delta_b": self.delta_b, "delta_s": self.delta_s, "T": self.T}

    @classmethod
    def from_json(cls, d: dict) -> "CompleteBargainInstance":
        return cls(float(d["delta_b"]), float(d["delta_s"]), int(d["T"]))


def proposer(t: int) -> str:
    return BUYER if t % 2 == 1 else SELLER


def responder(t: int) -> str:
    return SELLER if t % 2 == 1 else BUYER


@dataclass
class SpeSchedule:
    T: int
    prices: dict[int, float] = field(default_factory=dict)
    utilities: dict[int, tuple[float, float]] = field(default_factory=dict)  # t -> (u_b, u_s)

    def price(self, t: int):
        """Price at ``t``; the no-deal sentinel at ``T + 1``."""
        if t == self.T + 1:
            return NO_DEAL
        if t not in self.prices:
            raise StrideError(f"no SPE price for t={t}", code="schedule-missing")
        return self.prices[t]

    def to_json(self) -> dict:
        return {"T": self.T, "prices": [self.prices[t] for t in range(1, self.T + 1)],
                "utilities": [list(self.utilities[t]) for t in range(1, self.T + 1)]}


# --------------------------------------------------------------------------
# pure kernels


def calc_util(role: str, p, t: int, delta_b: float, delta_s: float, T: int) -> float:
    if t > T:
        return 0.0
    if t < 1:
        raise StrideError(f"time step {t} < 1", code="out-of-horizon")
    if p is None or not (0.0 <= p <= 1.0):
        raise StrideError(f"price {p!r} outside [0, 1]", code="price-out-of-range")
    if role == BUYER:
        return (1.0 - p) * delta_b ** (t - 1)
    if role == SELLER:
        return p * delta_s ** (t - 1)
    raise StrideError(f"unknown role {role!r}", code="invalid-role")


def backward_one_step(role: str, opp_u: float, t: int, delta_b: float, delta_s: float, T: int) -> float:
    """Proposer's SPE price at ``t`` given the responder's rejection utility.

    Utilities are linear in price, so the constraint binds: the buyer offers
    the lowest price the seller accepts, the seller the highest the buyer
    accepts.
    """
    if not (1 <= t <= T):
        raise StrideError(f"time step {t} outside 1..{T}", code="out-of-horizon")
    if opp_u < 0:
        raise StrideError(f"opponent utility {opp_u} < 0", code="infeasible")
    if t == T:
        return 0.0 if role == BUYER else 1.0
    if role == BUYER:
        p = opp_u / delta_s ** (t - 1)
    elif role == SELLER:
        p = 1.0 - opp_u / delta_b ** (t - 1)
    else:
        raise StrideError(f"unknown role {role!r}", code="invalid-role")
    if p < -PRICE_TOL or p > 1.0 + PRICE_TOL:
        raise StrideError(f"required price {p} outside [0, 1]", code="infeasible")
    return min(1.0, max(0.0, p))


def compute_spe(instance: CompleteBargainInstance) -> SpeSchedule:
    db, ds, T = instance.delta_b, instance.delta_s, instance.T
    sched = SpeSchedule(T)
    for t in range(T, 0, -1):
        role = proposer(t)
        opp_u = 0.0 if t == T else calc_util(responder(t), sched.prices[t + 1], t + 1, db, ds, T)
        p = backward_one_step(role, opp_u, t, db, ds, T)
        sched.prices[t] = p
        sched.utilities[t] = (calc_util(BUYER, p, t, db, ds, T), calc_util(SELLER, p, t, db, ds, T))
    return sched


def respond_to_offer(role: str, p: float, t: int, schedule: SpeSchedule,
                     instance: CompleteBargainInstance) -> bool:
    """True to accept.  Indifference accepts."""
    db, ds, T = instance.delta_b, instance.delta_s, instance.T
    if t > T:
        raise StrideError(f"offer at t={t} after the deadline", code="out-of-horizon")
    u_accept = calc_util(role, p, t, db, ds, T)
    nxt = schedule.price(t + 1)
    u_reject = 0.0 if nxt is NO_DEAL else calc_util(role, nxt, t + 1, db, ds, T)
    return u_accept >= u_reject - INDIFFERENCE_TOL


# --------------------------------------------------------------------------
# memory + operations


def load_bargain(mem, instance: CompleteBargainInstance) -> None:
    mem.write(NS + "delta_b", instance.delta_b)
    mem.write(NS + "delta_s", instance.delta_s)
    mem.write(NS + "T", instance.T)
    mem.write(NS + "prices", np.full(instance.T, np.nan))


def _params(mem):
    return mem.read(NS + "delta_b"), mem.read(NS + "delta_s"), mem.read(NS + "T")


@REGISTRY.operation("CalcUtil", [("agent", "role"), ("price", "price"), ("t", "step")], result="real",
                    description="Buyer or seller utility of trading at a price at time step t.")
def op_calc_util(mem, agent, price, t):
    db, ds, T = _params(mem)
    return calc_util(agent, price, t, db, ds, T)


@REGISTRY.operation("BackwardOneStep", [("agent", "role"), ("op_u", "real"), ("t", "step")], result="price",
                    description="One step of backward induction: the proposer's SPE price at t given the "
                                "opponent's utility from rejecting.")
def op_backward_one_step(mem, agent, op_u, t):
    db, ds, T = _params(mem)
    p = backward_one_step(agent, float(op_u), t, db, ds, T)
    mem.read(NS + "prices")[t - 1] = p
    return p


@REGISTRY.operation("GetSPEPrice", [("t", "step")], result="price",
                    description="Retrieve the computed SPE price for time step t (null after the deadline).")
def op_get_spe_price(mem, t):
    T = mem.read(NS + "T")
    if t == T + 1:
        return NO_DEAL
    if not (1 <= t <= T):
        raise StrideError(f"time step {t} outside 1..{T + 1}", code="out-of-horizon")
    p = float(mem.read(NS + "prices")[t - 1])
    if np.isnan(p):
        raise StrideError(f"SPE price for t={t} has not been computed", code="schedule-missing")
    return p


def schedule_from_memory(mem) -> SpeSchedule:
    db, ds, T = _params(mem)
    prices = mem.read(NS + "prices")
    if np.isnan(prices).any():
        raise StrideError("SPE schedule incomplete", code="schedule-missing")
    sched = SpeSchedule(T)
    for t in range(1, T + 1):
        p = float(prices[t - 1])
        sched.prices[t] = p
        sched.utilities[t] = (calc_util(BUYER, p, t, db, ds, T), calc_util(SELLER, p, t, db, ds, T))
    return sched


@dataclass(frozen=True)
class Move:
    t: int
    proposer: str
    price: float
    response: str  # "accept" | "reject"

    def to_json(self) -> dict:
        return {"t": self.t, "proposer": self.proposer, "price": self.price, "response": self.response}


def play(instance: CompleteBargainInstance, buyer=None, seller=None) -> list[Move]:
    """Play a game.  ``buyer``/``seller`` are agents with ``offer(t)`` and
    ``respond(p, t)``; both default to the scripted SPE player."""
    buyer = buyer or SPEBargainer(BUYER).fit(instance)
    seller = seller or SPEBargainer(SELLER).fit(instance)
    agents = {BUYER: buyer, SELLER: seller}
    transcript = []
    for t in range(1, instance.T + 1):
        prop = proposer(t)
        p = float(agents[prop].offer(t))
        ok = agents[responder(t)].respond(p, t)
        transcript.append(Move(t, prop, p, "accept" if ok else "reject"))
        if ok:
            break
    return transcript


def dumps_transcript(transcript) -> str:
    return "".join(json.dumps(m.to_json()) + "\n" for m in transcript)


class SPEBargainer(BaseEstimator):
    """Scripted SPE player for one role."""

    def __init__(self, role: str = BUYER):
        self.role = role

    def fit(self, instance, y=None):
        if isinstance(instance, dict):
            instance = CompleteBargainInstance.from_json(instance)
        if self.role not in (BUYER, SELLER):
            raise ValueError(f"role must be buyer or seller, got {self.role!r}")
        self.instance_ = instance
        self.schedule_ = compute_spe(instance)
        return self

    def offer(self, t: int) -> float:
        check_is_fitted(self, "schedule_")
        return self.schedule_.price(t)

    def respond(self, p: float, t: int) -> bool:
        check_is_fitted(self, "schedule_")
        return respond_to_offer(self.role, p, t, self.schedule_, self.instance_)


def spe_session(instance: CompleteBargainInstance) -> Session:
    session = Session()
    load_bargain(session.memory, instance)
    return session
