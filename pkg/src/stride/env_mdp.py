"""Finite-horizon tabular MDP instances and an interactive environment."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_mdp_arrays
from .core import StrideError, check_index


@dataclass
class MdpInstance:
    """``P[s, a, s']`` transition probabilities, ``R[s, a]`` mean rewards.

    Steps are indexed ``h = 1..H`` throughout the package.
    """

    S: int
    A: int
    H: int
    P: np.ndarray
    R: np.ndarray
    s1: int = 0

    def __post_init__(self):
        self.P, self.R = check_mdp_arrays(self.P, self.R, self.S, self.A)
        if self.H < 1:
            raise StrideError(f"horizon must be >= 1, got {self.H}", code="invalid-instance")
        check_index(self.s1, self.S, "state")

    def to_json(self) -> dict:
        return {"S": self.S, "A": self.A, "H": self.H, "P": self.P.tolist(),
                "R": self.R.tolist(), "s1": self.s1}

    @classmethod
    def from_json(cls, d: dict) -> "MdpInstance":
        return cls(int(d["S"]), int(d["A"]), int(d["H"]), np.asarray(d["P"], dtype=float),
                   np.asarray(d["R"], dtype=float), int(d.get("s1", 0)))

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "MdpInstance":
        return cls.from_json(json.loads(text))


def generate_instance(S: int, A: int, H: int, seed: int) -> MdpInstance:
    """Dense random instance: flat-Dirichlet transition rows, U[0,1] rewards."""
    if min(S, A, H) < 1:
        raise StrideError("S, A, H must all be >= 1", code="invalid-instance")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(S, A))
    P /= P.sum(axis=-1, keepdims=True)
    R = rng.uniform(0.0, 1.0, size=(S, A))
    return MdpInstance(S, A, H, P, R, 0)


@dataclass(frozen=True)
class StepRecord:
    h: int
    s: int
    a: int
    r: float
    s_next: int


KNOWN = "known-model"
UNKNOWN = "unknown-model"


@dataclass
class EnvSession:
    """One agent interacting with an instance.

    In ``known-model`` mode rewards are the noiseless means; in
    ``unknown-model`` mode each reward carries N(0, 1) noise.  Per step the
    session RNG first draws the successor state, then (unknown mode only)
    the noise.
    """

    instance: MdpInstance
    mode: str = KNOWN
    seed: int = 0
    h: int = field(init=False, default=1)
    s: int = field(init=False, default=0)
    log: list[StepRecord] = field(init=False, default_factory=list)

    def __post_init__(self):
        if self.mode not in (KNOWN, UNKNOWN):
            raise StrideError(f"unknown mode {self.mode!r}", code="invalid-mode")
        self.rng = np.random.default_rng(self.seed)
        self.s = self.instance.s1

    @property
    def done(self) -> bool:
        return self.h > self.instance.H

    def step(self, a: int) -> tuple[float, int]:
        return env_step(self, a)

    def reset(self) -> int:
        return reset(self)


def env_step(sess: EnvSession, a: int) -> tuple[float, int]:
    inst = sess.instance
    if sess.done:
        raise StrideError("episode is over; call reset()", code="episode-over")
    check_index(a, inst.A, "action")
    s = sess.s
    s_next = int(sess.rng.choice(inst.S, p=inst.P[s, a]))
    r = float(inst.R[s, a])
    if sess.mode == UNKNOWN:
        r += float(sess.rng.standard_normal())
    sess.log.append(StepRecord(sess.h, s, int(a), r, s_next))
    sess.h += 1
    sess.s = s_next
    return r, s_next


def reset(sess: EnvSession) -> int:
    sess.h = 1
    sess.s = sess.instance.s1
    sess.log = []
    return sess.s
