"""Candidate ``(r, p)`` pairs for a Frobenius layer and the default pick.

For each allowed rank ``r <= capacity`` the candidate is ``(r, capacity // r)``.
The default is the pair with the most terms, ties going to the smaller rank.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

from .errors import SelectionError
from .layers import EmbeddingSpec, FrobeniusConfig, expected_param_count

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 32
DEFAULT_RANKS = (8, 16, 24, 32)


@dataclass(frozen=True)
class CandidatePair:
    r: int
    p: int
    predicted_bytes: int

    def to_dict(self) -> dict:
        return asdict(self)


def recommend_pairs(n: int, d: int, capacity: int = DEFAULT_CAPACITY,
                    allowed_r=DEFAULT_RANKS) -> list[CandidatePair]:
    ranks = sorted(set(int(r) for r in allowed_r), reverse=True)
    if not ranks or capacity < min(ranks):
        log.warning("capacity %s is below the smallest allowed rank %s; no candidates",
                    capacity, min(ranks) if ranks else None)
        return []
    spec = EmbeddingSpec(n, d)
    out = []
    seen = set()
    for r in ranks:
        if r > capacity:
            continue
        p = capacity // r
        if (r, p) in seen:
            continue
        seen.add((r, p))
        size = 4 * expected_param_count("frobenius", spec, FrobeniusConfig(r, p))
        out.append(CandidatePair(r, p, size))
    return out


def select_default(pairs) -> CandidatePair:
    pairs = list(pairs)
    if not pairs:
        raise SelectionError("no candidate pairs to select from")
    return min(pairs, key=lambda c: (-c.p, c.r))
