import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stride.bargain_complete import (BUYER, NO_DEAL, SELLER, CompleteBargainInstance, SPEBargainer,
                                     backward_one_step, calc_util, compute_spe, dumps_transcript, play,
                                     proposer, respond_to_offer, spe_session)
from stride.core import StrideError

deltas = st.floats(0.05, 0.95)


def test_calc_util_examples():
    assert calc_util(BUYER, 0.3, 1, 0.9, 0.9, 3) == pytest.approx(0.7, abs=1e-15)
    assert calc_util(SELLER, 0.6, 4, 0.9, 0.9, 3) == 0.0
    assert calc_util(BUYER, 0.5, 3, 0.8, 0.9, 3) == pytest.approx(0.32, abs=1e-15)
    with pytest.raises(StrideError) as e:
        calc_util(BUYER, 1.2, 1, 0.9, 0.9, 3)
    assert e.value.code == "price-out-of-range"


def test_backward_one_step_terminal_and_infeasible():
    assert backward_one_step(BUYER, 0.0, 3, 0.9, 0.5, 3) == 0.0
    assert backward_one_step(SELLER, 0.0, 3, 0.9, 0.5, 3) == 1.0
    with pytest.raises(StrideError) as e:
        backward_one_step(BUYER, 0.9, 2, 0.9, 0.5, 3)
    assert e.value.code == "infeasible"
    with pytest.raises(StrideError) as e:
        backward_one_step(BUYER, 0.1, 4, 0.9, 0.5, 3)
    assert e.value.code == "out-of-horizon"


def test_hand_cases():
    assert compute_spe(CompleteBargainInstance(0.9, 0.5, 1)).price(1) == 0.0
    assert compute_spe(CompleteBargainInstance(0.9, 0.5, 2)).price(1) == 0.5
    sched = compute_spe(CompleteBargainInstance(0.9, 0.5, 3))
    assert sched.price(3) == 0.0
    assert sched.price(2) == pytest.approx(0.1, abs=1e-12)
    assert sched.price(1) == pytest.approx(0.05, abs=1e-12)
    assert sched.price(4) is NO_DEAL


def test_ops_chain_like_the_kernel():
    inst = CompleteBargainInstance(0.9, 0.5, 3)
    s = spe_session(inst)
    with pytest.raises(StrideError) as e:
        s.invoke("GetSPEPrice", {"t": 2})
    assert e.value.code == "schedule-missing"
    assert s.invoke("GetSPEPrice", {"t": 4}) is None
    p = None
    for t in (3, 2, 1):
        u = s.invoke("CalcUtil", {"agent": "seller" if t % 2 else "buyer", "price": p, "t": t + 1})
        p = s.invoke("BackwardOneStep", {"agent": proposer(t), "op_u": u, "t": t})
    assert p == compute_spe(inst).price(1)
    assert s.invoke("GetSPEPrice", {"t": 2}) == compute_spe(inst).price(2)


def test_respond():
    inst = CompleteBargainInstance(0.9, 0.5, 2)
    sched = compute_spe(inst)
    assert not respond_to_offer(SELLER, 0.4, 1, sched, inst)
    assert respond_to_offer(SELLER, 0.5, 1, sched, inst)  # indifference accepts
    assert respond_to_offer(BUYER, 0.99, 2, sched, inst)


@given(deltas, deltas, st.integers(1, 12))
def test_schedule_properties(db, ds, T):
    inst = CompleteBargainInstance(db, ds, T)
    sched = compute_spe(inst)
    for t in range(1, T + 1):
        assert 0.0 <= sched.price(t) <= 1.0
        ub, us = sched.utilities[t]
        assert ub >= 0 and us >= 0
    moves = play(inst)
    assert len(moves) == 1 and moves[0].response == "accept" and moves[0].price == sched.price(1)


@pytest.mark.parametrize("T", [2, 3, 4, 5])
def test_proposer_cannot_gain_on_grid(T):
    """No grid offer at any t beats the SPE offer given the scripted responses."""
    rng = np.random.default_rng(T)
    for _ in range(5):
        inst = CompleteBargainInstance(*rng.uniform(0.5, 1.0, 2), T)
        sched = compute_spe(inst)
        for t in range(1, T + 1):
            prop = proposer(t)
            resp = SELLER if prop == BUYER else BUYER
            best = calc_util(prop, sched.price(t), t, inst.delta_b, inst.delta_s, T)
            nxt = sched.price(t + 1)
            fallback = 0.0 if nxt is NO_DEAL else calc_util(prop, nxt, t + 1, inst.delta_b, inst.delta_s, T)
            for p in np.linspace(0, 1, 1001):
                got = (calc_util(prop, p, t, inst.delta_b, inst.delta_s, T)
                       if respond_to_offer(resp, p, t, sched, inst) else fallback)
                assert got <= best + 1e-12


def test_transcript_jsonl():
    moves = play(CompleteBargainInstance(0.8, 0.7, 3))
    rec = json.loads(dumps_transcript(moves).splitlines()[0])
    assert set(rec) == {"t", "proposer", "price", "response"}


def test_invalid_instances():
    for args in ((0.0, 0.5, 2), (0.5, 1.0, 2), (0.5, 0.5, 0)):
        with pytest.raises(StrideError):
            CompleteBargainInstance(*args)


def test_estimator():
    b = SPEBargainer("buyer").fit({"delta_b": 0.9, "delta_s": 0.5, "T": 2})
    assert b.offer(1) == 0.5 and b.get_params() == {"role": "buyer"}
    with pytest.raises(ValueError):
        SPEBargainer("broker").fit(CompleteBargainInstance(0.9, 0.5, 2))
