"""Shared test oracles: finite differences, brute-force search, BFS."""

from __future__ import annotations

from collections import deque

import numpy as np

from subgoal_transfer.env import EnvState, PieceKind, Square, Task, legal_moves

# Gradient comparison: |analytic - numeric| / max(|analytic|, |numeric|, floor)
# with floor = ATOL/RTOL so roundoff-dominated near-zero entries do not
# register as spurious relative error.
GRAD_RTOL = 1e-4
GRAD_ATOL = 1e-7


def max_grad_rel_error(params, loss_fn, eps: float = 1e-5, sample: int = 120,
                       rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic grads (already in p.grad) and
    central finite differences of loss_fn."""
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    floor = GRAD_ATOL / GRAD_RTOL
    for p in params:
        flat = p.value.ravel()
        grads = p.grad.ravel()
        if flat.size <= sample:
            idxs = range(flat.size)
        else:
            idxs = rng.choice(flat.size, size=sample, replace=False)
        for i in idxs:
            old = flat[i]
            flat[i] = old + eps
            lp = loss_fn()
            flat[i] = old - eps
            lm = loss_fn()
            flat[i] = old
            numeric = (lp - lm) / (2.0 * eps)
            denom = max(abs(numeric), abs(grads[i]), floor)
            worst = max(worst, abs(numeric - grads[i]) / denom)
    return worst


def brute_force_align(ref, cand) -> tuple[int, int]:
    """Exhaustive maximum matching minimizing chunks (sequences <= ~7)."""
    best = (0, 0)  # (matches, -chunks)

    def rec(i: int, used: frozenset, last_j, m: int, ch: int) -> None:
        nonlocal best
        if i == len(cand):
            best = max(best, (m, -ch))
            return
        rec(i + 1, used, None, m, ch)
        for j, tok in enumerate(ref):
            if tok == cand[i] and j not in used:
                new_ch = ch + (0 if (last_j is not None and j == last_j + 1) else 1)
                rec(i + 1, used | {j}, j, m + 1, new_ch)

    rec(0, frozenset(), None, 0, 0)
    return best[0], -best[1]


def bfs_optimal_moves(piece: PieceKind, task: Task) -> int:
    """Independent plain-BFS shortest capture-both path length."""
    start = (task.start, False, False)
    if start[1] and start[2]:
        return 0
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        (sq, ca, cb), depth = queue.popleft()
        state = EnvState(agent=sq, captured_a=ca, captured_b=cb)
        for action in legal_moves(piece, sq, state, task):
            dest = action.apply(sq)
            nxt = (dest, ca or dest == task.pawn_a, cb or dest == task.pawn_b)
            if nxt in seen:
                continue
            if nxt[1] and nxt[2]:
                return depth + 1
            seen.add(nxt)
            queue.append((nxt, depth + 1))
    raise AssertionError("BFS found no solution")


def bishop_ray_squares(from_sq: Square, pawns: list[Square]) -> set[Square]:
    """Ray-trace oracle: legal bishop destinations by walking the grid."""
    out: set[Square] = set()
    for df in (-1, 1):
        for dr in (-1, 1):
            f, r = from_sq.file + df, from_sq.rank + dr
            while 0 <= f <= 7 and 0 <= r <= 7:
                sq = Square(f, r)
                out.add(sq)
                if sq in pawns:
                    break
                f += df
                r += dr
    return out
