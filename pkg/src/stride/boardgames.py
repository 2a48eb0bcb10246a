"""Tic-Tac-Toe and Connect-N with exact alpha-beta search.

Boards are tuples of row strings using ``X``, ``O`` and ``.``; row 0 is the
top.  A tic-tac-toe move is the row-major cell index, a connect-n move the
column index.  X maximizes, O minimizes; scores are +1 (X wins), -1 (O
wins) and 0 (draw).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import REGISTRY, Session, StrideError

NS = "game/"
TICTACTOE, CONNECT = "tictactoe", "connect-n"
EMPTY = "."
INF = float("inf")


@dataclass(frozen=True)
class GameNode:
    board: tuple[str, ...]
    to_move: str = "X"
    win_length: int = 3
    variant: str = TICTACTOE

    @property
    def rows(self) -> int:
        return len(self.board)

    @property
    def cols(self) -> int:
        return len(self.board[0])

    @property
    def key(self) -> str:
        return "/".join(self.board) + ":" + self.to_move

    def notation(self) -> str:
        return "/".join(self.board)

    def cell(self, r: int, c: int) -> str:
        return self.board[r][c]


def parse_board(text: str, *, variant: str = TICTACTOE, win_length: int = 3,
                to_move: str | None = None, validate: bool = True) -> GameNode:
    rows = tuple(text.strip().upper().split("/"))
    if not rows or any(len(r) != len(rows[0]) for r in rows) or set("".join(rows)) - {"X", "O", EMPTY}:
        raise StrideError(f"malformed board {text!r}", code="invalid-board")
    if variant not in (TICTACTOE, CONNECT):
        raise StrideError(f"unknown variant {variant!r}", code="invalid-board")
    if to_move is None:
        flat = "".join(rows)
        to_move = "X" if flat.count("X") == flat.count("O") else "O"
    node = GameNode(rows, to_move, win_length, variant)
    if validate:
        check_node(node)
    return node


def empty_node(rows: int = 3, cols: int = 3, win_length: int = 3, variant: str = TICTACTOE) -> GameNode:
    return GameNode(tuple(EMPTY * cols for _ in range(rows)), "X", win_length, variant)


def check_node(node: GameNode) -> GameNode:
    if node.rows > 4 or node.cols > 4:
        raise StrideError("boards larger than 4x4 are not supported", code="invalid-board")
    flat = "".join(node.board)
    diff = flat.count("X") - flat.count("O")
    if diff not in (0, 1):
        raise StrideError("X/O piece counts are inconsistent with X moving first", code="invalid-board")
    if node.to_move != ("X" if diff == 0 else "O"):
        raise StrideError("side to move is inconsistent with piece counts", code="invalid-board")
    if node.variant == CONNECT:
        for c in range(node.cols):
            seen_piece = False
            for r in range(node.rows):
                if node.board[r][c] != EMPTY:
                    seen_piece = True
                elif seen_piece:
                    raise StrideError(f"floating piece in column {c}", code="invalid-board")
    terminal_utility(node)
    return node


def _lines(rows: int, cols: int, n: int):
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
                end_r, end_c = r + dr * (n - 1), c + dc * (n - 1)
                if 0 <= end_r < rows and 0 <= end_c < cols:
                    yield [(r + dr * k, c + dc * k) for k in range(n)]


_LINE_CACHE: dict[tuple[int, int, int], list] = {}


def _winner_lines(rows, cols, n):
    key = (rows, cols, n)
    if key not in _LINE_CACHE:
        _LINE_CACHE[key] = list(_lines(rows, cols, n))
    return _LINE_CACHE[key]


def terminal_utility(node: GameNode) -> int | None:
    """+1 / -1 for a completed X / O line, 0 for a full board, else None."""
    x_wins = o_wins = False
    for line in _winner_lines(node.rows, node.cols, node.win_length):
        first = node.board[line[0][0]][line[0][1]]
        if first != EMPTY and all(node.board[r][c] == first for r, c in line):
            if first == "X":
                x_wins = True
            else:
                o_wins = True
    if x_wins and o_wins:
        raise StrideError("both players have a winning line", code="both-players-winning")
    if x_wins:
        return 1
    if o_wins:
        return -1
    if EMPTY not in "".join(node.board):
        return 0
    return None


def legal_moves(node: GameNode) -> list[int]:
    if terminal_utility(node) is not None:
        raise StrideError("no moves from a terminal position", code="terminal-node")
    return _moves(node)


def _moves(node: GameNode) -> list[int]:
    if node.variant == TICTACTOE:
        return [i for i, ch in enumerate("".join(node.board)) if ch == EMPTY]
    return [c for c in range(node.cols) if node.board[0][c] == EMPTY]


def apply_move(node: GameNode, move: int) -> GameNode:
    rows = [list(r) for r in node.board]
    if node.variant == TICTACTOE:
        if not (0 <= move < node.rows * node.cols):
            raise StrideError(f"cell {move} off the board", code="illegal-move")
        r, c = divmod(move, node.cols)
        if rows[r][c] != EMPTY:
            raise StrideError(f"cell {move} is occupied", code="illegal-move")
    else:
        if not (0 <= move < node.cols) or rows[0][move] != EMPTY:
            raise StrideError(f"column {move} is full or off the board", code="illegal-move")
        c = move
        r = max(i for i in range(node.rows) if rows[i][c] == EMPTY)
    rows[r][c] = node.to_move
    return GameNode(tuple("".join(x) for x in rows), "O" if node.to_move == "X" else "X",
                    node.win_length, node.variant)


def children(node: GameNode) -> list[tuple[int, GameNode]]:
    return [(m, apply_move(node, m)) for m in _moves(node)]


# --------------------------------------------------------------------------
# search


@dataclass(frozen=True)
class ScoreEntry:
    score: float
    pruned: bool = False  # True: score is only a bound from a cut-off search
    bound: str = "exact"  # "exact" | "lower" | "upper"

    def to_json(self) -> dict:
        return {"score": self.score, "pruned": self.pruned, "bound": self.bound}


@dataclass
class ScoreMap:
    """Scores of searched nodes keyed by depth, then by the move path from
    the root (a plain move at depth 1, a tuple of moves deeper)."""

    root_key: str
    root_score: float
    max_depth: int
    levels: dict[int, dict] = field(default_factory=dict)
    nodes_visited: int = 0

    def to_json(self) -> dict:
        return {
            "root_key": self.root_key, "root_score": self.root_score, "max_depth": self.max_depth,
            "nodes_visited": self.nodes_visited,
            "levels": {str(d): {_path_str(k): e.to_json() for k, e in lv.items()}
                       for d, lv in sorted(self.levels.items())},
        }


def _path_str(k) -> str:
    return ",".join(map(str, k)) if isinstance(k, tuple) else str(k)


class AlphaBeta:
    """Fail-soft alpha-beta with a transposition table on exact values.

    Nodes within ``store_depth`` of the root are written to the score map:
    exact when the returned value lies strictly inside the search window,
    otherwise flagged as a bound.
    """

    def __init__(self, store_depth: int = 2):
        self.store_depth = store_depth
        self.exact: dict[str, int] = {}
        self.visited = 0

    def value(self, node: GameNode, alpha: float = -INF, beta: float = INF,
              path: tuple = (), levels: dict | None = None) -> float:
        self.visited += 1
        u = terminal_utility(node)
        if u is not None:
            self._store(levels, path, u, alpha, beta, exact=True)
            return u
        if node.key in self.exact:
            v = self.exact[node.key]
            self._store(levels, path, v, alpha, beta, exact=True)
            return v
        a0, b0 = alpha, beta
        maximizing = node.to_move == "X"
        best = -INF if maximizing else INF
        for move, child in children(node):
            v = self.value(child, alpha, beta, path + (move,), levels)
            if maximizing:
                best = max(best, v)
                alpha = max(alpha, best)
            else:
                best = min(best, v)
                beta = min(beta, best)
            if beta <= alpha:
                break
        exact = a0 < best < b0 or (a0 == -INF and b0 == INF)
        if exact:
            self.exact[node.key] = best
        self._store(levels, path, best, a0, b0, exact)
        return best

    def _store(self, levels, path, v, a, b, exact):
        if levels is None or not (1 <= len(path) <= self.store_depth):
            return
        key = path[0] if len(path) == 1 else path
        if exact or a < v < b:
            entry = ScoreEntry(v)
        else:
            entry = ScoreEntry(v, True, "lower" if v >= b else "upper")
        levels.setdefault(len(path), {})[key] = entry


def calculate_scores(root: GameNode, store_depth: int = 2) -> ScoreMap:
    """Exact minimax value of the root and of every immediate move.

    Each depth-1 child is searched with a full window so its value is exact;
    deeper nodes are searched with alpha-beta cut-offs.
    """
    if terminal_utility(root) is not None:
        raise StrideError("cannot search from a terminal position", code="terminal-node")
    search = AlphaBeta(store_depth)
    levels: dict[int, dict] = {}
    maximizing = root.to_move == "X"
    best = -INF if maximizing else INF
    for move, child in children(root):
        v = search.value(child, -INF, INF, (move,), levels)
        best = max(best, v) if maximizing else min(best, v)
    max_depth = "".join(root.board).count(EMPTY)
    return ScoreMap(root.key, best, max_depth, levels, search.visited)


def get_scores(scores: ScoreMap, depth: int) -> dict:
    if depth < 1 or depth > scores.max_depth or depth not in scores.levels:
        raise StrideError(f"no scores stored at depth {depth}", code="scores-missing")
    return dict(scores.levels[depth])


def best_move(node: GameNode, scores: ScoreMap | None = None) -> int:
    """Argmax for X, argmin for O over the depth-1 scores; lowest move wins ties."""
    if terminal_utility(node) is not None:
        raise StrideError("no legal moves", code="no-legal-moves")
    scores = scores or calculate_scores(node)
    if scores.root_key != node.key:
        raise StrideError("scores were computed for a different position", code="scores-missing")
    level = get_scores(scores, 1)
    sign = 1 if node.to_move == "X" else -1
    return min(level, key=lambda m: (-sign * level[m].score, m))


# --------------------------------------------------------------------------
# operations


def load_game(mem, variant: str, rows: int, cols: int, win_length: int) -> None:
    mem.write(NS + "variant", variant)
    mem.write(NS + "rows", rows)
    mem.write(NS + "cols", cols)
    mem.write(NS + "win_length", win_length)


def _node_from_memory(mem, board: str) -> GameNode:
    node = parse_board(board, variant=mem.read(NS + "variant"), win_length=mem.read(NS + "win_length"))
    if node.rows != mem.read(NS + "rows") or node.cols != mem.read(NS + "cols"):
        raise StrideError("board dimensions differ from the loaded game", code="invalid-board")
    return node


@REGISTRY.operation("CalculateScores", [("board", "board")],
                    description="Expand every action at each depth from the given position and compute "
                                "minimax scores with alpha-beta pruning.")
def op_calculate_scores(mem, board):
    node = _node_from_memory(mem, board)
    mem.write(NS + "scores", calculate_scores(node))
    return None


@REGISTRY.operation("GetScores", [("depth", "count")], result="scores",
                    description="Retrieve the computed scores for all actions at the given depth of the game tree.")
def op_get_scores(mem, depth):
    if NS + "scores" not in mem:
        raise StrideError("CalculateScores has not been run", code="scores-missing")
    level = get_scores(mem.read(NS + "scores"), depth)
    return {_path_str(k): e.score for k, e in level.items()}


class MinimaxPlayer(BaseEstimator):
    """``fit`` searches a position; ``predict`` returns the chosen move."""

    def __init__(self, store_depth: int = 2):
        self.store_depth = store_depth

    def fit(self, node: GameNode, y=None):
        self.node_ = node
        self.scores_ = calculate_scores(node, self.store_depth)
        self.value_ = self.scores_.root_score
        return self

    def predict(self, node: GameNode | None = None) -> int:
        check_is_fitted(self, "scores_")
        return best_move(node or self.node_, self.scores_)


def self_play(root: GameNode, choose=None) -> tuple[int, list[int]]:
    """Play to the end; ``choose(node)`` defaults to scripted best_move."""
    choose = choose or best_move
    node, moves = root, []
    while terminal_utility(node) is None:
        m = choose(node)
        moves.append(m)
        node = apply_move(node, m)
    return terminal_utility(node), moves


def game_session(variant: str = TICTACTOE, rows: int = 3, cols: int = 3, win_length: int = 3) -> Session:
    session = Session()
    load_game(session.memory, variant, rows, cols, win_length)
    return session
