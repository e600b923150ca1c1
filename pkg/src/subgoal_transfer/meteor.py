"""METEOR over subgoal sequences with exact token matching.

Tokens are board squares, so only the exact-match unigram stage applies; no
stemming or synonym stages. Scoring follows the classic formulation:

    P = m / |candidate|,  R = m / |reference|
    Fmean = 10 P R / (R + 9 P)
    penalty = 0.5 * (chunks / m)^3
    score = Fmean * (1 - penalty),   score = 0 when m = 0

where m is the size of a maximum one-to-one exact-token matching and chunks
is the minimum chunk count over all maximum matchings (a chunk is a maximal
run of matched pairs contiguous and identically ordered in both sequences).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

# The alignment DP is exponential in the reference length; sequences here are
# produced under a max decode length of 12, so cap defensively well above it.
_MAX_ALIGN_LEN = 20


@dataclass(frozen=True)
class AlignmentResult:
    matches: int
    chunks: int
    candidate_len: int
    reference_len: int


def align(reference: Sequence[Hashable], candidate: Sequence[Hashable]) -> AlignmentResult:
    """Maximum-cardinality exact matching, minimizing chunk count among maxima.

    Exact DP over candidate positions; the state is (used-reference bitmask,
    reference index matched by the previous candidate position, or None).
    """
    ref = list(reference)
    cand = list(candidate)
    if len(ref) > _MAX_ALIGN_LEN:
        raise ValueError(f"reference too long to align exactly: {len(ref)} > {_MAX_ALIGN_LEN}")

    positions: dict[Hashable, list[int]] = {}
    for j, tok in enumerate(ref):
        positions.setdefault(tok, []).append(j)

    # state -> (matches, -chunks); lexicographic max favors more matches,
    # then fewer chunks.
    best: dict[tuple[int, int | None], tuple[int, int]] = {(0, None): (0, 0)}
    for tok in cand:
        nxt: dict[tuple[int, int | None], tuple[int, int]] = {}

        def consider(key: tuple[int, int | None], value: tuple[int, int]) -> None:
            old = nxt.get(key)
            if old is None or value > old:
                nxt[key] = value

        for (mask, prev_j), (m, neg_ch) in best.items():
            consider((mask, None), (m, neg_ch))
            for j in positions.get(tok, ()):
                if mask & (1 << j):
                    continue
                extends = prev_j is not None and j == prev_j + 1
                consider((mask | (1 << j), j), (m + 1, neg_ch - (0 if extends else 1)))
        best = nxt

    m, neg_ch = max(best.values())
    return AlignmentResult(
        matches=m, chunks=-neg_ch, candidate_len=len(cand), reference_len=len(ref)
    )


def meteor(reference: Sequence[Hashable], candidate: Sequence[Hashable]) -> float:
    """METEOR score in [0, 1]; zero when no token matches."""
    a = align(reference, candidate)
    if a.matches == 0:
        return 0.0
    precision = a.matches / a.candidate_len
    recall = a.matches / a.reference_len
    fmean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (a.chunks / a.matches) ** 3
    return fmean * (1.0 - penalty)


def corpus_meteor(pairs: Sequence[tuple[Sequence[Hashable], Sequence[Hashable]]]) -> float:
    """Arithmetic mean of per-pair METEOR scores."""
    if not pairs:
        raise ValueError("corpus_meteor needs at least one (reference, candidate) pair")
    return sum(meteor(ref, cand) for ref, cand in pairs) / len(pairs)
