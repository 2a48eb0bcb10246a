import pytest
from hypothesis import given, strategies as st

from oracles import negamax
from stride.boardgames import (CONNECT, TICTACTOE, GameNode, MinimaxPlayer, apply_move, best_move,
                               calculate_scores, check_node, empty_node, get_scores, game_session,
                               legal_moves, parse_board, self_play, terminal_utility)
from stride.core import StrideError
from stride.harness import random_position


def oracle_value(node):
    return negamax(node.board, node.to_move, node.win_length, node.variant == CONNECT)


class TestRules:
    def test_legal_moves(self):
        assert len(legal_moves(empty_node())) == 9
        n = empty_node()
        for m in (0, 4, 8):
            n = apply_move(n, m)
        assert len(legal_moves(n)) == 6
        c = empty_node(variant=CONNECT)
        for _ in range(3):
            c = apply_move(c, 1)
        assert 1 not in legal_moves(c) and legal_moves(c) == [0, 2]

    def test_gravity(self):
        c = apply_move(empty_node(variant=CONNECT), 1)
        assert c.board == ("...", "...", ".X.")
        c = apply_move(c, 1)
        assert c.board == ("...", ".O.", ".X.")

    def test_illegal(self):
        n = apply_move(empty_node(), 4)
        with pytest.raises(StrideError) as e:
            apply_move(n, 4)
        assert e.value.code == "illegal-move"
        with pytest.raises(StrideError):
            apply_move(n, 9)

    def test_terminal_utility(self):
        assert terminal_utility(parse_board("XXX/OO./...")) == 1
        assert terminal_utility(parse_board("XOX/XOO/OXX")) == 0
        assert terminal_utility(parse_board("X../.O./...")) is None
        assert terminal_utility(parse_board("OOO/XX./X..", validate=False)) == -1
        with pytest.raises(StrideError) as e:
            terminal_utility(parse_board("XXX/OOO/...", validate=False))
        assert e.value.code == "both-players-winning"
        with pytest.raises(StrideError) as e:
            legal_moves(parse_board("XXX/OO./..."))
        assert e.value.code == "terminal-node"

    def test_node_invariants(self):
        with pytest.raises(StrideError):
            parse_board("XX./.../...")
        with pytest.raises(StrideError):
            parse_board("X../.../...", variant=CONNECT)
        with pytest.raises(StrideError):
            parse_board("XO./..")  # ragged
        check_node(parse_board(".../.../X..", variant=CONNECT))

    def test_notation_roundtrip(self):
        n = parse_board("X../.O./...")
        assert n.notation() == "X../.O./..." and n.to_move == "X"


class TestSearch:
    def test_empty_board_value_and_symmetry(self):
        scores = calculate_scores(empty_node())
        assert scores.root_score == 0
        level = get_scores(scores, 1)
        assert all(not e.pruned for e in level.values())
        corners = {level[m].score for m in (0, 2, 6, 8)}
        edges = {level[m].score for m in (1, 3, 5, 7)}
        assert len(corners) == 1 and len(edges) == 1

    def test_win_in_one(self):
        node = parse_board("XX./OO./...")
        scores = calculate_scores(node)
        assert scores.root_score == 1 and get_scores(scores, 1)[2].score == 1
        assert best_move(node, scores) == 2

    def test_must_block(self):
        node = parse_board("X../OO./X..")
        move = best_move(node)
        assert move == 5
        for m in legal_moves(node):
            if m != move:
                assert oracle_value(apply_move(node, m)) < oracle_value(apply_move(node, move))

    def test_connect_three_root(self):
        node = empty_node(variant=CONNECT)
        assert calculate_scores(node).root_score == oracle_value(node)

    def test_depth_errors(self):
        scores = calculate_scores(parse_board("XOX/OXO/..."))
        with pytest.raises(StrideError) as e:
            get_scores(scores, 4)
        assert e.value.code == "scores-missing"
        with pytest.raises(StrideError) as e:
            calculate_scores(parse_board("XXX/OO./..."))
        assert e.value.code == "terminal-node"

    def test_depth_two_entries_are_bounds_or_exact(self):
        node = parse_board("X../.../...")
        scores = calculate_scores(node)
        for path, entry in get_scores(scores, 2).items():
            child = apply_move(apply_move(node, path[0]), path[1])
            true = oracle_value(child)
            if entry.pruned:
                assert (entry.score >= true) if entry.bound == "upper" else (entry.score <= true)
            else:
                assert entry.score == true

    @given(st.integers(0, 100_000), st.sampled_from([TICTACTOE, CONNECT]))
    def test_alpha_beta_matches_negamax(self, seed, variant):
        node = random_position(variant, seed)
        scores = calculate_scores(node)
        assert scores.root_score == oracle_value(node)
        for m, e in get_scores(scores, 1).items():
            assert e.score == oracle_value(apply_move(node, m))

    @given(st.integers(0, 100_000))
    def test_colour_swap_negates(self, seed):
        node = random_position(TICTACTOE, seed)
        swapped = GameNode(tuple(r.translate(str.maketrans("XO", "OX")) for r in node.board),
                           "O" if node.to_move == "X" else "X", node.win_length, node.variant)
        assert calculate_scores(swapped).root_score == -calculate_scores(node).root_score

    def test_larger_board(self):
        node = parse_board("..../..../..../....", variant=CONNECT)
        node = GameNode(node.board, "X", 3, CONNECT)
        for m in (0, 1, 1, 2):
            node = apply_move(node, m)
        assert calculate_scores(node).root_score == oracle_value(node)


class TestPlay:
    def test_self_play_draws(self):
        outcome, moves = self_play(empty_node())
        assert outcome == 0 and len(moves) == 9

    def test_no_legal_moves(self):
        with pytest.raises(StrideError) as e:
            best_move(parse_board("XOX/XOO/OXX"))
        assert e.value.code == "no-legal-moves"

    def test_ops(self):
        s = game_session()
        with pytest.raises(StrideError) as e:
            s.invoke("GetScores", {"depth": 1})
        assert e.value.code == "scores-missing"
        assert s.invoke("CalculateScores", {"board": "XX./OO./..."}) is None
        assert s.invoke("GetScores", {"depth": 1})["2"] == 1
        with pytest.raises(StrideError):
            s.invoke("CalculateScores", {"board": "XX../OO../....../"})

    def test_player(self):
        p = MinimaxPlayer().fit(parse_board("XX./OO./..."))
        assert p.predict() == 2 and p.value_ == 1 and p.get_params() == {"store_depth": 2}
