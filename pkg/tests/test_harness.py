import csv
import io

import numpy as np
import pytest

from oracles import vcg_by_enumeration
from stride import bargain_complete as spe
from stride import bargain_incomplete as se
from stride.core import StrideError
from stride.env_mdp import generate_instance
from stride.harness import (COLUMNS, ExperimentConfig, eval_bargain, eval_optimal_action, eval_vcg,
                            run_experiment, sample_bargain_instance, vcg_oracle)
from stride.mechanism_vcg import VcgOutcome, compute_vcg, generate_mechanism_instance
from stride.planner_mdp import solve_known


class TestSampling:
    def test_deterministic(self):
        assert sample_bargain_instance("incomplete", 3, 5) == sample_bargain_instance("incomplete", 3, 5)

    def test_distribution(self):
        db = [sample_bargain_instance("complete", 3, s).delta_b for s in range(1000)]
        assert abs(np.mean(db) - 0.75) < 0.02 and min(db) >= 0.5 and max(db) < 1.0
        bs = [sample_bargain_instance("incomplete", 3, s).b for s in range(1000)]
        assert 0.1 <= min(bs) and max(bs) <= 0.9

    def test_complete_has_no_value(self):
        assert "b" not in sample_bargain_instance("complete", 3, 0).to_json()

    def test_bad_T(self):
        with pytest.raises(StrideError):
            sample_bargain_instance("complete", 0, 0)


class TestEvalOptimalAction:
    def test_scripted_is_perfect(self):
        inst = generate_instance(3, 3, 5, 0)
        tables, pi = solve_known(inst)
        traj = [(h, s, int(pi[h - 1, s])) for h in range(1, 6) for s in range(3)]
        assert eval_optimal_action(traj, tables.Q) == 1.0

    def test_random_rate(self):
        rng = np.random.default_rng(0)
        hits = []
        for seed in range(200):
            inst = generate_instance(3, 3, 5, seed)
            Q = solve_known(inst)[0].Q
            traj = [(h, int(rng.integers(3)), int(rng.integers(3))) for h in range(1, 6)]
            hits.append(eval_optimal_action(traj, Q))
        assert abs(np.mean(hits) - 1 / 3) < 0.05

    def test_errors(self):
        Q = np.zeros((2, 2, 2))
        for bad in ([], [(3, 0, 0)]):
            with pytest.raises(StrideError) as e:
                eval_optimal_action(bad, Q)
            assert e.value.code == "length-mismatch"


class TestEvalVcg:
    def test_self_and_perturbation(self):
        inst = generate_mechanism_instance(3, 3, 3, 4, 0)
        out = compute_vcg(inst)
        oracle = vcg_oracle(inst)
        assert eval_vcg(out, oracle)
        bumped = VcgOutcome(out.pi_star, out.pi_minus, out.prices + np.array([0.02, 0, 0]),
                            out.social_value, out.utilities)
        assert not eval_vcg(bumped, oracle)

    def test_against_enumeration(self):
        inst = generate_mechanism_instance(2, 2, 2, 2, 3)
        best, prices = vcg_by_enumeration(inst.base.P, inst.R_agents, 2)
        assert np.allclose(vcg_oracle(inst).prices, prices, atol=1e-12)
        assert eval_vcg(compute_vcg(inst), vcg_oracle(inst))

    def test_dimension_mismatch(self):
        a = generate_mechanism_instance(2, 2, 2, 2, 0)
        b = generate_mechanism_instance(3, 2, 2, 2, 0)
        with pytest.raises(StrideError) as e:
            eval_vcg(compute_vcg(a), vcg_oracle(b))
        assert e.value.code == "dimension-mismatch"


class TestEvalBargain:
    @pytest.mark.parametrize("T", [3, 6, 9])
    def test_scripted_complete(self, T):
        inst = sample_bargain_instance("complete", T, T)
        assert eval_bargain(spe.play(inst), spe.compute_spe(inst), "complete")

    def test_deviation(self):
        inst = sample_bargain_instance("complete", 3, 1)
        sched = spe.compute_spe(inst)
        moves = [{"t": 1, "proposer": "buyer", "price": sched.price(1) + 0.01, "response": "accept"}]
        assert not eval_bargain(moves, sched, "complete")

    def test_incomplete_low_value_rejects_through_T(self):
        inst = se.IncompleteBargainInstance(0.8, 0.7, 4, 0.05)
        sched = se.compute_se(inst)
        moves = se.play(inst)
        assert eval_bargain(moves, sched, "incomplete", inst)
        assert not eval_bargain(moves[:2], sched, "incomplete", inst)
        early = [o.to_json() for o in moves[:1]]
        early[0]["response"] = "accept"
        assert not eval_bargain(early, sched, "incomplete", inst)

    def test_malformed(self):
        sched = spe.compute_spe(spe.CompleteBargainInstance(0.8, 0.7, 3))
        for bad in ([], [{"t": 2, "price": 0.5, "response": "accept"}],
                    [{"t": 1, "price": 0.5, "response": "maybe"}],
                    [{"t": 1, "price": 0.5, "response": "accept"}, {"t": 2, "price": 0.5, "response": "accept"}]):
            with pytest.raises(StrideError) as e:
                eval_bargain(bad, sched, "complete")
            assert e.value.code == "malformed-transcript"


class TestRunExperiment:
    def test_table1_shape(self):
        rep = run_experiment(ExperimentConfig("mdp-known", H=5, S=3, A=3, n_instances=20))
        assert rep.aggregate["success_rate"] == 1.0
        assert rep.aggregate["success_rate"] == np.mean([r["success_rate"] for r in rep.records])

    def test_random_baseline_is_worse(self):
        rep = run_experiment(ExperimentConfig("mdp-known", n_instances=20, agent="random"))
        assert rep.aggregate["success_rate"] < 0.8

    @pytest.mark.parametrize("kind", ["vcg", "bargain", "bargain-incomplete"])
    def test_scripted_success(self, kind):
        rep = run_experiment(ExperimentConfig(kind, H=3, n_instances=5))
        assert rep.aggregate["success_rate"] == 1.0

    def test_boardgame_draws(self):
        rep = run_experiment(ExperimentConfig("boardgame", n_instances=2))
        assert rep.aggregate["draw"] == 1.0

    def test_fig4_csv_columns(self):
        rep = run_experiment(ExperimentConfig("mdp-unknown", K=5, n_instances=2))
        rows = list(csv.DictReader(io.StringIO(rep.table_csv())))
        assert list(rows[0]) == COLUMNS["mdp-unknown"] and len(rows) == 5

    def test_byte_identical_reports(self, tmp_path):
        outs = []
        for k in range(2):
            cfg = ExperimentConfig("vcg", H=3, n_instances=4, seed=7, out=str(tmp_path / f"r{k}"))
            run_experiment(cfg)
            outs.append([(tmp_path / f"r{k}" / f).read_bytes() for f in ("records.jsonl", "table.csv", "summary.json")])
        assert outs[0] == outs[1]

    def test_invalid_config(self):
        with pytest.raises(StrideError):
            ExperimentConfig("poker")
        with pytest.raises(StrideError):
            ExperimentConfig("vcg", n_instances=0)
