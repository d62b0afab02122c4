"""Exact TSP solvers and reference optima for the gap metric."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import OracleViolationError, TooLargeError
from .problems import ContinuousProblem
from .tsp import TspInstance, canonical_tour, tour_length

BRUTE_FORCE_MAX = 11
HELD_KARP_MAX = 20
GAP_TOLERANCE = 1e-9


class OracleMethod(str, enum.Enum):
    BRUTE_FORCE = "brute_force"
    HELD_KARP = "held_karp"


@dataclass(frozen=True)
class OracleResult:
    optimal_length: float
    optimal_tour: tuple[int, ...]
    method: OracleMethod


@lru_cache(maxsize=4)
def _canonical_permutations(k: int) -> np.ndarray:
    """All orders of cities 1..k with first < last (one per undirected cycle)."""
    perms = np.array(list(itertools.permutations(range(1, k + 1))), dtype=np.int8)
    perms = perms[perms[:, 0] < perms[:, -1]]
    perms.flags.writeable = False
    return perms


def brute_force_tsp(instance: TspInstance) -> OracleResult:
    """Enumerate the (N-1)!/2 distinct cycles through city 0."""
    n = instance.n
    if n > BRUTE_FORCE_MAX:
        raise TooLargeError(f"brute force handles at most {BRUTE_FORCE_MAX} cities, got {n}")
    d = instance.dist
    if n == 3:
        best = (0, 1, 2)
    else:
        perms = _canonical_permutations(n - 1)
        total = d[0, perms[:, 0]] + d[perms[:, -1], 0]
        for i in range(n - 2):
            total = total + d[perms[:, i], perms[:, i + 1]]
        best = (0, *perms[int(np.argmin(total))].tolist())
    best = canonical_tour(best)
    return OracleResult(tour_length(instance, best), best, OracleMethod.BRUTE_FORCE)


def held_karp_tsp(instance: TspInstance) -> OracleResult:
    """Bitmask dynamic program over (visited subset, last city).

    City 0 is the fixed start; the remaining ``k = N - 1`` cities occupy bits
    ``0..k-1``. Layers are processed by subset size and vectorised over every
    subset of that size at once.
    """
    n = instance.n
    if not 3 <= n <= HELD_KARP_MAX:
        raise TooLargeError(f"Held-Karp handles 3..{HELD_KARP_MAX} cities, got {n}")
    d = instance.dist
    k = n - 1
    full = (1 << k) - 1
    sub = d[1:, 1:]

    cost = np.full((1 << k, k), np.inf)
    parent = np.full((1 << k, k), -1, dtype=np.int8)
    singles = 1 << np.arange(k)
    cost[singles, np.arange(k)] = d[0, 1:]

    masks = np.arange(1 << k, dtype=np.int64)
    popcount = np.zeros(1 << k, dtype=np.int8)
    for b in range(k):
        popcount += ((masks >> b) & 1).astype(np.int8)
    layers = [masks[popcount == s] for s in range(k + 1)]

    for size in range(1, k):
        layer = layers[size]
        for j in range(k):
            src = layer[((layer >> j) & 1) == 0]
            if src.size == 0:
                continue
            cand = cost[src] + sub[:, j]
            arg = np.argmin(cand, axis=1)
            dst = src | (1 << j)
            cost[dst, j] = cand[np.arange(src.size), arg]
            parent[dst, j] = arg

    closing = cost[full] + d[1:, 0]
    last = int(np.argmin(closing))
    path = []
    mask = full
    while last != -1:
        path.append(last + 1)
        prev = int(parent[mask, last])
        mask ^= 1 << last
        last = prev
    tour = canonical_tour((0, *reversed(path)))
    return OracleResult(tour_length(instance, tour), tour, OracleMethod.HELD_KARP)


def solve_exact(instance: TspInstance) -> OracleResult | None:
    """Exact optimum when tractable; ``None`` when N > 20 and no reference is stored."""
    if instance.n <= HELD_KARP_MAX:
        return held_karp_tsp(instance)
    return None


def reference_length(instance: TspInstance) -> float | None:
    if instance.reference_length is not None:
        return instance.reference_length
    result = solve_exact(instance)
    return None if result is None else result.optimal_length


def optimality_gap(found_length: float, optimal_length: float) -> float:
    """Relative excess over the optimum, in percent."""
    if optimal_length <= 0:
        raise ValueError("optimal length must be positive")
    if found_length < optimal_length - GAP_TOLERANCE:
        raise OracleViolationError(f"found length {found_length!r} beats the optimum {optimal_length!r}")
    return 100.0 * (found_length - optimal_length) / optimal_length


def continuous_reference(problem: ContinuousProblem) -> float:
    """All five benchmark functions have optimum value 0 at their (shifted) optimum."""
    return 0.0
