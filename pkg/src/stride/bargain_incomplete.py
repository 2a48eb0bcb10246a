"""Seller-offers bargaining with a privately informed buyer.

The buyer's value ``b`` is uniform on [0, 1] a priori.  After ``t``
rejections the seller believes ``b ~ U(0, b_t)``; the equilibrium is the
declining cutoff sequence ``b_0 = 1 > b_1 > ... > b_{T-1}`` together with
the price path that keeps each cutoff type indifferent between buying now
and buying next step.  The last cutoff is found by bisection so that the
implied initial cutoff equals one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_discount
from .bargain_complete import BUYER, INDIFFERENCE_TOL, NO_DEAL, SELLER
from .core import REGISTRY, Session, StrideError

NS = "se/"
BISECTION_TOL = 1e-3
MAX_BISECTION = 200


@dataclass(frozen=True)
class IncompleteBargainInstance:
    delta_b: float
    delta_s: float
    T: int
    b: float = 0.5

    def __post_init__(self):
        check_discount("delta_b", self.delta_b)
        check_discount("delta_s", self.delta_s)
        if self.T < 1:
            raise StrideError(f"deadline T must be >= 1, got {self.T}", code="invalid-instance")
        if not (0.0 <= self.b <= 1.0):
            raise StrideError(f"buyer value {self.b} outside [0, 1]", code="invalid-instance")

    def to_json(self) -> dict:
        return {"delta_b": self.delta_b, "delta_s": self.delta_s, "T": self.T, "b": self.b}

    @classmethod
    def from_json(cls, d: dict) -> "IncompleteBargainInstance":
        return cls(float(d["delta_b"]), float(d["delta_s"]), int(d["T"]), float(d.get("b", 0.5)))


@dataclass
class SeSchedule:
    """Index ``k`` of ``beliefs`` holds b_k; index ``t-1`` of ``prices`` and
    ``seller_values`` holds the step-``t`` quantity; ``constants[tau]`` holds
    c_tau for tau = 2..T (other entries NaN)."""

    beliefs: np.ndarray
    constants: np.ndarray
    prices: np.ndarray
    seller_values: np.ndarray
    iterations: int = 0

    @property
    def T(self) -> int:
        return len(self.prices)

    def price(self, t: int):
        if t == self.T + 1:
            return NO_DEAL
        if not (1 <= t <= self.T):
            raise StrideError(f"no SE price for t={t}", code="schedule-missing")
        return float(self.prices[t - 1])

    def to_json(self) -> dict:
        c = [None if np.isnan(x) else float(x) for x in self.constants]
        return {"beliefs": self.beliefs.tolist(), "prices": self.prices.tolist(),
                "seller_values": self.seller_values.tolist(), "constants": c}


# --------------------------------------------------------------------------
# pure kernels


def calc_util_b(role: str, p, t: int, b: float | None, delta_b: float, delta_s: float, T: int) -> float:
    if t > T:
        return 0.0
    if p is None or not (0.0 <= p <= 1.0):
        raise StrideError(f"price {p!r} outside [0, 1]", code="price-out-of-range")
    if role == BUYER:
        if b is None:
            raise StrideError("buyer utility needs the buyer's value", code="schema-mismatch")
        return (b - p) * delta_b ** (t - 1)
    if role == SELLER:
        return p * delta_s ** (t - 1)
    raise StrideError(f"unknown role {role!r}", code="invalid-role")


def _safe_div(num: float, den: float, what: str) -> float:
    if den == 0.0:
        raise StrideError(f"zero denominator in {what}", code="division-by-zero")
    return num / den


def cutoff_constants(delta_b: float, delta_s: float, T: int) -> np.ndarray:
    """c_tau for tau = 2..T, stored at index tau of a length-(T+1) array."""
    c = np.full(T + 1, np.nan)
    if T >= 2:
        c[T] = 0.5
        for tau in range(T - 1, 1, -1):
            x = 1.0 - delta_b + delta_b * c[tau + 1]
            c[tau] = _safe_div(x * x, 2.0 * x - delta_s * c[tau + 1], f"c_{tau}")
    return c


def belief_chain(b_last: float, t: int, delta_b: float, delta_s: float, T: int,
                 c: np.ndarray | None = None) -> np.ndarray:
    """Cutoffs implied by ``b_{T-1} = b_last``; entries below ``t-1`` are NaN."""
    if c is None:
        c = cutoff_constants(delta_b, delta_s, T)
    b = np.full(T, np.nan)
    b[T - 1] = b_last
    for tau in range(T - 1, t - 1, -1):
        x = 1.0 - delta_b + delta_b * c[tau + 1]
        b[tau - 1] = _safe_div(2.0 * x - delta_s * c[tau + 1], x, f"b_{tau - 1}") * b[tau]
    return b


def compute_bt(t: int, b_last: float, delta_b: float, delta_s: float, T: int) -> float:
    """Seller's cutoff b_{t-1} implied by a guess for b_{T-1}."""
    if not (1 <= t <= T):
        raise StrideError(f"time step {t} outside 1..{T}", code="out-of-horizon")
    return float(belief_chain(b_last, t, delta_b, delta_s, T)[t - 1])


def solve_last(b_last: float) -> tuple[float, float]:
    """(u_T, p_T): the monopoly price against U(0, b_last)."""
    if b_last <= 0:
        raise StrideError(f"belief {b_last} must be positive", code="nonpositive-belief")
    return b_last / 4.0, b_last / 2.0


def solve(u_next: float, p_next: float, b_prev: float, b_t: float, delta_b: float) -> tuple[float, float]:
    if not b_prev > 0:
        raise StrideError(f"belief {b_prev} must be positive", code="zero-belief")
    p_t = (1.0 - delta_b) * b_t + delta_b * p_next
    u_t = (b_prev - b_t) / b_prev * p_t + b_t / b_prev * u_next
    return u_t, p_t


# --------------------------------------------------------------------------
# memory + operations


def load_se(mem, instance: IncompleteBargainInstance) -> None:
    """Seller-side memory: the buyer's private value is not stored."""
    load_se_params(mem, instance.delta_b, instance.delta_s, instance.T)


def load_se_params(mem, delta_b: float, delta_s: float, T: int) -> None:
    """Like :func:`load_se` without instance validation, so limiting
    discounts such as 0 can be explored."""
    mem.write(NS + "delta_b", float(delta_b))
    mem.write(NS + "delta_s", float(delta_s))
    mem.write(NS + "T", T)
    mem.write(NS + "beliefs", np.full(T, np.nan))
    mem.write(NS + "constants", np.full(T + 1, np.nan))
    mem.write(NS + "prices", np.full(T, np.nan))
    mem.write(NS + "seller_values", np.full(T, np.nan))


def _params(mem):
    return mem.read(NS + "delta_b"), mem.read(NS + "delta_s"), mem.read(NS + "T")


def _check_t(t, T, upper=None):
    upper = T if upper is None else upper
    if not (1 <= t <= upper):
        raise StrideError(f"time step {t} outside 1..{upper}", code="out-of-horizon")


@REGISTRY.operation("CalcUtilB", [("agent", "role"), ("price", "price"), ("t", "step"), ("b", "real", False)],
                    result="real",
                    description="Utility of trading at a price at step t when the buyer's value is b.")
def op_calc_util_b(mem, agent, price, t, b=None):
    db, ds, T = _params(mem)
    return calc_util_b(agent, price, t, b, db, ds, T)


@REGISTRY.operation("ComputeBt", [("time_step", "step"), ("b_last", "real")], result="real",
                    description="Seller's belief cutoff at time_step-1 implied by a guess of the cutoff at T-1.")
def op_compute_bt(mem, time_step, b_last):
    db, ds, T = _params(mem)
    _check_t(time_step, T)
    c = cutoff_constants(db, ds, T)
    chain = belief_chain(float(b_last), time_step, db, ds, T, c)
    mem.read(NS + "constants")[:] = c
    mem.read(NS + "beliefs")[:] = chain
    return float(chain[time_step - 1])


@REGISTRY.operation("SolveLast", [("b_last", "real")], result="reals",
                    description="Seller's expected utility and price at the last step: returns [u_T, p_T].")
def op_solve_last(mem, b_last):
    _, _, T = _params(mem)
    u, p = solve_last(float(b_last))
    mem.read(NS + "prices")[T - 1] = p
    mem.read(NS + "seller_values")[T - 1] = u
    return [u, p]


@REGISTRY.operation("Solve", [("u", "real"), ("p", "real"), ("t", "step")], result="reals",
                    description="Expected utility and price at step t from the step t+1 results: returns [u_t, p_t].")
def op_solve(mem, u, p, t):
    db, _, T = _params(mem)
    _check_t(t, T - 1 if T > 1 else 0)
    beliefs = mem.read(NS + "beliefs")
    b_prev, b_t = float(beliefs[t - 1]), float(beliefs[t])
    if np.isnan(b_prev) or np.isnan(b_t):
        raise StrideError("beliefs not computed; call ComputeBt first", code="zero-belief")
    u_t, p_t = solve(float(u), float(p), b_prev, b_t, db)
    mem.read(NS + "prices")[t - 1] = p_t
    mem.read(NS + "seller_values")[t - 1] = u_t
    return [u_t, p_t]


@REGISTRY.operation("GetSEPrice", [("t", "step")], result="price",
                    description="Retrieve the computed SE price for step t (null after the deadline).")
def op_get_se_price(mem, t):
    _, _, T = _params(mem)
    if t == T + 1:
        return NO_DEAL
    _check_t(t, T)
    p = float(mem.read(NS + "prices")[t - 1])
    if np.isnan(p):
        raise StrideError(f"SE price for t={t} has not been computed", code="schedule-missing")
    return p


def bisect_last_belief(session: Session) -> tuple[float, int]:
    """Bisection on b_{T-1} until the implied b_0 is within tolerance of 1.

    Returns the final guess and the number of ComputeBt evaluations.
    """
    lo, hi = 0.0, 1.0
    guess = (lo + hi) / 2
    b0 = session.invoke("ComputeBt", {"time_step": 1, "b_last": guess})
    n = 1
    while abs(b0 - 1.0) >= BISECTION_TOL:
        if n >= MAX_BISECTION:
            raise StrideError(f"bisection did not converge in {MAX_BISECTION} iterations",
                              code="bisection-failure")
        if b0 <= 1.0:
            lo = guess
        else:
            hi = guess
        guess = (lo + hi) / 2
        b0 = session.invoke("ComputeBt", {"time_step": 1, "b_last": guess})
        n += 1
    return guess, n


def backward_prices(session: Session, b_last: float) -> None:
    T = session.memory.read(NS + "T")
    u, p = session.invoke("SolveLast", {"b_last": b_last})
    for t in range(T - 1, 0, -1):
        u, p = session.invoke("Solve", {"u": u, "p": p, "t": t})


def schedule_from_memory(mem, iterations: int = 0) -> SeSchedule:
    prices = mem.read(NS + "prices")
    if np.isnan(prices).any():
        raise StrideError("SE schedule incomplete", code="schedule-missing")
    return SeSchedule(mem.read(NS + "beliefs").copy(), mem.read(NS + "constants").copy(),
                      prices.copy(), mem.read(NS + "seller_values").copy(), iterations)


def compute_se(instance: IncompleteBargainInstance, session: Session | None = None) -> SeSchedule:
    session = session or Session()
    load_se(session.memory, instance)
    b_last, n = bisect_last_belief(session)
    backward_prices(session, b_last)
    return schedule_from_memory(session.memory, n)


def buyer_respond(instance: IncompleteBargainInstance, p: float, t: int, schedule: SeSchedule) -> bool:
    """Accept iff buying now is at least as good as buying at the next SE price."""
    db, ds, T, b = instance.delta_b, instance.delta_s, instance.T, instance.b
    if t > T:
        raise StrideError(f"offer at t={t} after the deadline", code="out-of-horizon")
    u_accept = calc_util_b(BUYER, p, t, b, db, ds, T)
    nxt = schedule.price(t + 1)
    u_reject = 0.0 if nxt is NO_DEAL else calc_util_b(BUYER, nxt, t + 1, b, db, ds, T)
    return u_accept >= u_reject - INDIFFERENCE_TOL


@dataclass(frozen=True)
class Offer:
    t: int
    price: float
    response: str

    def to_json(self) -> dict:
        return {"t": self.t, "price": self.price, "response": self.response}


def play(instance: IncompleteBargainInstance, seller=None, buyer=None) -> list[Offer]:
    seller = seller or SEBargainer(SELLER).fit(instance)
    buyer = buyer or SEBargainer(BUYER).fit(instance)
    transcript = []
    for t in range(1, instance.T + 1):
        p = float(seller.offer(t))
        ok = buyer.respond(p, t)
        transcript.append(Offer(t, p, "accept" if ok else "reject"))
        if ok:
            break
    return transcript


def dumps_transcript(transcript) -> str:
    return "".join(json.dumps(o.to_json()) + "\n" for o in transcript)


class SEBargainer(BaseEstimator):
    """Scripted sequential-equilibrium player (seller offers, buyer responds)."""

    def __init__(self, role: str = SELLER):
        self.role = role

    def fit(self, instance, y=None):
        if isinstance(instance, dict):
            instance = IncompleteBargainInstance.from_json(instance)
        if self.role not in (BUYER, SELLER):
            raise ValueError(f"role must be buyer or seller, got {self.role!r}")
        self.instance_ = instance
        self.schedule_ = compute_se(instance)
        return self

    def offer(self, t: int) -> float:
        check_is_fitted(self, "schedule_")
        return self.schedule_.price(t)

    def respond(self, p: float, t: int) -> bool:
        check_is_fitted(self, "schedule_")
        if self.role != BUYER:
            raise StrideError("only the buyer responds in this game", code="invalid-role")
        return buyer_respond(self.instance_, p, t, self.schedule_)
