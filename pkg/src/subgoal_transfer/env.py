"""8x8 board environment: bishop/knight kinematics, pawn-capture tasks, rewards.

Squares use (file, rank) integers internally and algebraic names ("d4") in
files and CLI output. a1 = (0, 0) is dark; a square is dark iff file + rank
is even. The agent starts on a dark interior square (default d4) and must
capture two pawns placed on dark squares of ranks 2..7.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

FILE_NAMES = "abcdefgh"

#: Primitive-step horizon per episode. Oracle solutions need <= 8 moves.
DEFAULT_HORIZON = 30

#: Canonical knight jump order (kept fixed: it indexes low-policy actions).
KNIGHT_JUMPS = (
    (-2, -1), (-2, 1), (-1, -2), (-1, 2),
    (1, -2), (1, 2), (2, -1), (2, 1),
)

#: Diagonal ray directions for the bishop, canonical order.
DIAGONALS = ((-1, -1), (-1, 1), (1, -1), (1, 1))

DEFAULT_START_NAME = "d4"


class IllegalActionError(ValueError):
    """An action violated a piece-movement or episode contract."""


class PieceKind(Enum):
    BISHOP = "bishop"
    KNIGHT = "knight"


@dataclass(frozen=True)
class Square:
    file: int
    rank: int

    def __post_init__(self) -> None:
        if not (0 <= self.file <= 7 and 0 <= self.rank <= 7):
            raise ValueError(f"square off board: file={self.file} rank={self.rank}")

    @property
    def index(self) -> int:
        return self.rank * 8 + self.file

    @property
    def dark(self) -> bool:
        return (self.file + self.rank) % 2 == 0

    @property
    def name(self) -> str:
        return f"{FILE_NAMES[self.file]}{self.rank + 1}"

    @classmethod
    def from_name(cls, name: str) -> "Square":
        name = name.strip().lower()
        if len(name) != 2 or name[0] not in FILE_NAMES or not name[1].isdigit():
            raise ValueError(f"bad square name: {name!r}")
        rank = int(name[1]) - 1
        if not 0 <= rank <= 7:
            raise ValueError(f"bad square name: {name!r}")
        return cls(FILE_NAMES.index(name[0]), rank)

    @classmethod
    def from_index(cls, index: int) -> "Square":
        if not 0 <= index <= 63:
            raise ValueError(f"bad square index: {index}")
        return cls(index % 8, index // 8)

    def __repr__(self) -> str:
        return f"Square({self.name})"


_ALL_SQUARES = tuple(Square(i % 8, i // 8) for i in range(64))


def _shift(sq: Square, dfile: int, drank: int) -> Square | None:
    f, r = sq.file + dfile, sq.rank + drank
    if 0 <= f <= 7 and 0 <= r <= 7:
        return _ALL_SQUARES[r * 8 + f]
    return None


@dataclass(frozen=True)
class Action:
    """Board displacement. Knight: one of the 8 jumps; bishop: a diagonal slide."""

    dfile: int
    drank: int

    @property
    def is_knight_jump(self) -> bool:
        return (abs(self.dfile), abs(self.drank)) in ((1, 2), (2, 1))

    @property
    def is_diagonal(self) -> bool:
        return abs(self.dfile) == abs(self.drank) and self.dfile != 0

    @property
    def distance(self) -> int:
        return max(abs(self.dfile), abs(self.drank))

    def apply(self, sq: Square) -> Square:
        dest = _shift(sq, self.dfile, self.drank)
        if dest is None:
            raise IllegalActionError(f"{self} from {sq.name} leaves the board")
        return dest


@dataclass(frozen=True)
class Task:
    """One pawn-placement task: two target pawns plus the agent start square."""

    task_id: int
    start: Square
    pawn_a: Square
    pawn_b: Square

    def __post_init__(self) -> None:
        if not self.start.dark:
            raise ValueError(f"start {self.start.name} is not dark")
        for pawn in (self.pawn_a, self.pawn_b):
            if not pawn.dark:
                raise ValueError(f"pawn {pawn.name} is not dark")
            if not 1 <= pawn.rank <= 6:
                raise ValueError(f"pawn {pawn.name} on first or last rank")
            if pawn == self.start:
                raise ValueError(f"pawn {pawn.name} collides with start")
        if self.pawn_a == self.pawn_b:
            raise ValueError("pawns must be distinct")

    def pawns(self) -> tuple[Square, Square]:
        return (self.pawn_a, self.pawn_b)


@dataclass(frozen=True)
class EnvState:
    agent: Square
    captured_a: bool = False
    captured_b: bool = False
    steps_elapsed: int = 0

    @property
    def all_captured(self) -> bool:
        return self.captured_a and self.captured_b


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    r_high: float
    r_low: float
    done: bool


def _uncaptured_pawns(state: EnvState, task: Task) -> list[Square]:
    pawns = []
    if not state.captured_a:
        pawns.append(task.pawn_a)
    if not state.captured_b:
        pawns.append(task.pawn_b)
    return pawns


# Move tables keyed by square index: knight jumps that stay on the board, and
# full bishop rays (truncation against pawns happens per query).
_KNIGHT_TABLE: list[tuple[Action, ...]] = []
_BISHOP_RAY_TABLE: list[tuple[tuple[tuple[Action, Square], ...], ...]] = []


def _build_move_tables() -> None:
    for index in range(64):
        sq = Square.from_index(index)
        jumps = tuple(
            Action(df, dr) for df, dr in KNIGHT_JUMPS if _shift(sq, df, dr) is not None
        )
        _KNIGHT_TABLE.append(jumps)
        rays = []
        for df, dr in DIAGONALS:
            ray = []
            for dist in range(1, 8):
                dest = _shift(sq, df * dist, dr * dist)
                if dest is None:
                    break
                ray.append((Action(df * dist, dr * dist), dest))
            rays.append(tuple(ray))
        _BISHOP_RAY_TABLE.append(tuple(rays))


_build_move_tables()


def legal_moves(piece: PieceKind, from_sq: Square, state: EnvState, task: Task) -> list[Action]:
    """All legal actions for `piece` at `from_sq`.

    Knight: every L-jump that stays on the board (jumps are never blocked).
    Bishop: each diagonal ray, truncated at the first uncaptured pawn; the
    pawn's square is a legal capture destination, squares beyond it are not.
    Captured pawns are off the board and do not block.
    """
    if piece is PieceKind.KNIGHT:
        return list(_KNIGHT_TABLE[from_sq.index])

    blockers = set(_uncaptured_pawns(state, task))
    actions: list[Action] = []
    for ray in _BISHOP_RAY_TABLE[from_sq.index]:
        for action, dest in ray:
            actions.append(action)
            if dest in blockers:
                break
    return actions


def step(
    piece: PieceKind,
    state: EnvState,
    action: Action,
    task: Task,
    current_subgoal: Square,
    horizon: int = DEFAULT_HORIZON,
) -> StepOutcome:
    """Apply one primitive action.

    r_high is +10 when the destination holds an uncaptured pawn, else -1
    (the hierarchy layer decides when to emit it); r_low is +10 when the
    destination equals `current_subgoal`, else -1. The episode is done once
    both pawns are captured or `horizon` primitive steps have elapsed.
    """
    if state.all_captured or state.steps_elapsed >= horizon:
        raise IllegalActionError("episode already terminal")
    if action not in legal_moves(piece, state.agent, state, task):
        raise IllegalActionError(f"illegal {piece.value} action {action} from {state.agent.name}")

    dest = action.apply(state.agent)
    captured_a = state.captured_a or dest == task.pawn_a
    captured_b = state.captured_b or dest == task.pawn_b
    captured_now = (captured_a != state.captured_a) or (captured_b != state.captured_b)

    nxt = EnvState(
        agent=dest,
        captured_a=captured_a,
        captured_b=captured_b,
        steps_elapsed=state.steps_elapsed + 1,
    )
    r_high = 10.0 if captured_now else -1.0
    r_low = 10.0 if dest == current_subgoal else -1.0
    done = nxt.all_captured or nxt.steps_elapsed >= horizon
    return StepOutcome(next_state=nxt, r_high=r_high, r_low=r_low, done=done)


def legal_pawn_squares() -> list[Square]:
    """The 24 dark squares not on the first or last rank, by square index."""
    squares = [
        Square(f, r)
        for r in range(1, 7)
        for f in range(8)
        if (f + r) % 2 == 0
    ]
    return sorted(squares, key=lambda s: s.index)


def enumerate_tasks(start: Square) -> list[Task]:
    """All unordered pawn pairs over legal squares excluding `start`.

    Canonical order: pawn_a.index < pawn_b.index, sorted by (pawn_a, pawn_b).
    For any legal start square this yields C(23, 2) = 253 tasks.
    """
    candidates = legal_pawn_squares()
    if start not in candidates:
        raise ValueError(f"start {start.name} is not a legal interior dark square")
    candidates = [sq for sq in candidates if sq != start]
    tasks = []
    for i, pawn_a in enumerate(candidates):
        for pawn_b in candidates[i + 1:]:
            tasks.append(Task(task_id=len(tasks), start=start, pawn_a=pawn_a, pawn_b=pawn_b))
    return tasks


def subgoal_window(from_sq: Square) -> list[Square]:
    """On-board squares at Chebyshev distance 1 or 2 (the 5x5 block minus center)."""
    out = []
    for drank in range(-2, 3):
        for dfile in range(-2, 3):
            if dfile == 0 and drank == 0:
                continue
            dest = _shift(from_sq, dfile, drank)
            if dest is not None:
                out.append(dest)
    return sorted(out, key=lambda s: s.index)


def reset(task: Task) -> EnvState:
    return EnvState(agent=task.start)
