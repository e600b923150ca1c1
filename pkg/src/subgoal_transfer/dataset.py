"""Demonstration dataset: shortest-path oracles, subgoal extraction, splits.

Each of the 253 tasks is solved optimally for both pieces by Dijkstra over
the product space (square, captured-set) with unit edge costs. Subgoals are
the squares visited after the start, in order. The dataset is a pure function
of (start square, seed).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .env import (
    Action,
    EnvState,
    PieceKind,
    Square,
    Task,
    enumerate_tasks,
    legal_moves,
)
from .seeding import derive_seed

TRAIN_SIZE = 228
TEST_SIZE = 25

DATASET_FORMAT = "subgoal-dataset.v1"
TASKFILE_FORMAT = "task-list.v1"


class DatasetParseError(ValueError):
    """A dataset or task file did not match the expected format."""

    def __init__(self, path: str, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass(frozen=True)
class Trajectory:
    piece: PieceKind
    task_id: int
    states: tuple[Square, ...]
    actions: tuple[Action, ...]

    def __post_init__(self) -> None:
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("trajectory must have one more state than actions")

    @property
    def n_moves(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class SubgoalSequence:
    """Squares visited after the start, in order. EOS/PAD live in the vocab."""

    tokens: tuple[Square, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def names(self) -> str:
        return " ".join(sq.name for sq in self.tokens)


@dataclass(frozen=True)
class DatasetEntry:
    task: Task
    expert: SubgoalSequence
    learner: SubgoalSequence


@dataclass(frozen=True)
class Dataset:
    start: Square
    seed: int
    entries: tuple[DatasetEntry, ...]  # canonical task order; id == index
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]

    def train_entries(self) -> list[DatasetEntry]:
        return [self.entries[i] for i in self.train_ids]

    def test_entries(self) -> list[DatasetEntry]:
        return [self.entries[i] for i in self.test_ids]


def solve_optimal(piece: PieceKind, task: Task) -> Trajectory:
    """Minimum-move capture of both pawns.

    Dijkstra over (square, captured_a, captured_b) with unit costs. Ties break
    deterministically: states pop lowest-square-index first, with pawn_a
    captured preferred, and successors expand in destination-index order.
    """
    start = (task.start, False, False)
    # heap entries: (cost, square index, pawn_a-uncaptured, pawn_b-uncaptured, node)
    frontier: list[tuple[int, int, int, int, tuple]] = [(0, task.start.index, 1, 1, start)]
    best_cost = {start: 0}
    parent: dict[tuple, tuple[tuple, Action]] = {}
    settled: set[tuple] = set()
    goal = None

    while frontier:
        cost, _, _, _, node = heapq.heappop(frontier)
        if node in settled:
            continue
        settled.add(node)
        sq, cap_a, cap_b = node
        if cap_a and cap_b:
            goal = node
            break
        state = EnvState(agent=sq, captured_a=cap_a, captured_b=cap_b)
        moves = legal_moves(piece, sq, state, task)
        moves.sort(key=lambda a: a.apply(sq).index)
        for action in moves:
            dest = action.apply(sq)
            nxt = (
                dest,
                cap_a or dest == task.pawn_a,
                cap_b or dest == task.pawn_b,
            )
            ncost = cost + 1
            if nxt in settled or best_cost.get(nxt, np.inf) <= ncost:
                continue
            best_cost[nxt] = ncost
            parent[nxt] = (node, action)
            heapq.heappush(
                frontier,
                (ncost, dest.index, 0 if nxt[1] else 1, 0 if nxt[2] else 1, nxt),
            )

    if goal is None:
        raise RuntimeError(f"task {task.task_id}: no capture path for {piece.value}")

    states = [goal[0]]
    actions: list[Action] = []
    node = goal
    while node != start:
        node, action = parent[node]
        states.append(node[0])
        actions.append(action)
    states.reverse()
    actions.reverse()
    return Trajectory(piece=piece, task_id=task.task_id,
                      states=tuple(states), actions=tuple(actions))


def extract_subgoals(traj: Trajectory) -> SubgoalSequence:
    return SubgoalSequence(tokens=traj.states[1:])


def trajectory_from_entry(entry: DatasetEntry) -> Trajectory:
    """Rebuild the knight demonstration from its stored subgoal chain."""
    states = (entry.task.start,) + entry.learner.tokens
    actions = tuple(
        Action(b.file - a.file, b.rank - a.rank) for a, b in zip(states, states[1:])
    )
    return Trajectory(piece=PieceKind.KNIGHT, task_id=entry.task.task_id,
                      states=states, actions=actions)


def build_dataset(start: Square, seed: int) -> Dataset:
    """Solve all 253 tasks for both pieces and split 228 train / 25 test."""
    tasks = enumerate_tasks(start)
    entries = []
    for task in tasks:
        expert = extract_subgoals(solve_optimal(PieceKind.BISHOP, task))
        learner = extract_subgoals(solve_optimal(PieceKind.KNIGHT, task))
        entries.append(DatasetEntry(task=task, expert=expert, learner=learner))

    rng = np.random.default_rng(derive_seed(seed, "dataset-split"))
    order = rng.permutation(len(entries))
    train_ids = tuple(sorted(int(i) for i in order[:TRAIN_SIZE]))
    test_ids = tuple(sorted(int(i) for i in order[TRAIN_SIZE:TRAIN_SIZE + TEST_SIZE]))
    return Dataset(start=start, seed=seed, entries=tuple(entries),
                   train_ids=train_ids, test_ids=test_ids)


def kfold_split(dataset: Dataset, k: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """K near-equal disjoint folds over all tasks; fold f validates on fold f."""
    n = len(dataset.entries)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds task count {n}")
    rng = np.random.default_rng(derive_seed(dataset.seed, "kfold"))
    order = [int(i) for i in rng.permutation(n)]
    base, extra = divmod(n, k)
    folds = []
    pos = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        folds.append(order[pos:pos + size])
        pos += size
    splits = []
    for f in range(k):
        val = tuple(sorted(folds[f]))
        train = tuple(sorted(i for g in range(k) if g != f for i in folds[g]))
        splits.append((train, val))
    return splits


# ---------------------------------------------------------------------------
# File formats. Dataset records: `task_id | split | expert: .. | learner: ..`
# with a header carrying format version, start square and seed. Task files:
# `id,start,pawn_a,pawn_b`.
# ---------------------------------------------------------------------------

def dataset_header(dataset: Dataset) -> list[str]:
    return [
        f"# format={DATASET_FORMAT}",
        f"# start={dataset.start.name} seed={dataset.seed}",
        f"# tasks={len(dataset.entries)} train={len(dataset.train_ids)} test={len(dataset.test_ids)}",
    ]


def save_dataset(dataset: Dataset, path: str, extra_header: list[str] | None = None) -> None:
    lines = dataset_header(dataset)
    lines.extend(extra_header or [])
    test = set(dataset.test_ids)
    for i, entry in enumerate(dataset.entries):
        split = "test" if i in test else "train"
        lines.append(
            f"{i} | {split} | expert: {entry.expert.names()} | learner: {entry.learner.names()}"
        )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path: str) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()

    start: Square | None = None
    seed: int | None = None
    records: list[tuple[int, int, str, str, str]] = []
    for line_no, line in enumerate(raw, start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                if token.startswith("format=") and token[7:] != DATASET_FORMAT:
                    raise DatasetParseError(path, line_no, f"unsupported format {token[7:]!r}")
                if token.startswith("start="):
                    start = Square.from_name(token[6:])
                if token.startswith("seed="):
                    seed = int(token[5:])
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 4:
            raise DatasetParseError(path, line_no, f"expected 4 fields, got {len(parts)}")
        try:
            task_id = int(parts[0])
        except ValueError:
            raise DatasetParseError(path, line_no, f"bad task id {parts[0]!r}") from None
        if parts[1] not in ("train", "test"):
            raise DatasetParseError(path, line_no, f"bad split {parts[1]!r}")
        if not parts[2].startswith("expert:") or not parts[3].startswith("learner:"):
            raise DatasetParseError(path, line_no, "expected 'expert:' and 'learner:' fields")
        records.append((line_no, task_id, parts[1],
                        parts[2][len("expert:"):], parts[3][len("learner:"):]))

    if start is None or seed is None:
        raise DatasetParseError(path, 1, "missing start/seed header")

    tasks = enumerate_tasks(start)
    if len(records) != len(tasks):
        raise DatasetParseError(path, 1, f"expected {len(tasks)} records, got {len(records)}")

    entries: list[DatasetEntry | None] = [None] * len(tasks)
    train_ids, test_ids = [], []
    for line_no, task_id, split, expert_s, learner_s in records:
        if not 0 <= task_id < len(tasks):
            raise DatasetParseError(path, line_no, f"task id {task_id} out of range")
        if entries[task_id] is not None:
            raise DatasetParseError(path, line_no, f"duplicate task id {task_id}")
        try:
            expert = SubgoalSequence(tuple(Square.from_name(n) for n in expert_s.split()))
            learner = SubgoalSequence(tuple(Square.from_name(n) for n in learner_s.split()))
        except ValueError as exc:
            raise DatasetParseError(path, line_no, str(exc)) from None
        entries[task_id] = DatasetEntry(task=tasks[task_id], expert=expert, learner=learner)
        (test_ids if split == "test" else train_ids).append(task_id)

    return Dataset(start=start, seed=seed, entries=tuple(entries),  # type: ignore[arg-type]
                   train_ids=tuple(sorted(train_ids)), test_ids=tuple(sorted(test_ids)))


def save_tasks(tasks: list[Task], path: str) -> None:
    lines = [f"# format={TASKFILE_FORMAT}"]
    for t in tasks:
        lines.append(f"{t.task_id},{t.start.name},{t.pawn_a.name},{t.pawn_b.name}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tasks(path: str) -> list[Task]:
    tasks = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(",")
            if len(fields) != 4:
                raise DatasetParseError(path, line_no, f"expected 4 fields, got {len(fields)}")
            try:
                tasks.append(Task(
                    task_id=int(fields[0]),
                    start=Square.from_name(fields[1]),
                    pawn_a=Square.from_name(fields[2]),
                    pawn_b=Square.from_name(fields[3]),
                ))
            except ValueError as exc:
                raise DatasetParseError(path, line_no, str(exc)) from None
    return tasks
