"""Open-path TSP over a dense cost matrix: exact for small inputs, heuristic above."""
from __future__ import annotations

import itertools
import math

import numpy as np


class DisconnectedPairError(ValueError):
    """Some pair of tour vertices has no finite travel cost."""


def tour_cost(cost: np.ndarray, order) -> float:
    return float(sum(cost[a, b] for a, b in zip(order[:-1], order[1:])))


def _check(cost: np.ndarray) -> np.ndarray:
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(c)):
        raise DisconnectedPairError("unreachable pair in cost matrix")
    return c


def nearest_neighbor(cost: np.ndarray, start: int | None = None) -> list[int]:
    """Greedy open tour. Without a fixed start every start is tried and the cheapest kept."""
    c = _check(cost)
    n = len(c)
    if n == 0:
        return []
    starts = range(n) if start is None else [start]
    best, best_cost = None, math.inf
    for s in starts:
        order = [s]
        left = set(range(n)) - {s}
        while left:
            cur = order[-1]
            nxt = min(left, key=lambda j: (c[cur, j], j))
            order.append(nxt)
            left.remove(nxt)
        tc = tour_cost(c, order)
        if tc < best_cost - 1e-12:
            best, best_cost = order, tc
    return best


def _two_opt(c: np.ndarray, order: list[int], fixed_start: bool) -> bool:
    n = len(order)
    first = 1 if fixed_start else 0
    for i in range(first, n - 1):
        for k in range(i + 1, n):
            # reverse order[i..k]
            before = (c[order[i - 1], order[i]] if i > 0 else 0.0) + (c[order[k], order[k + 1]] if k < n - 1 else 0.0)
            after = (c[order[i - 1], order[k]] if i > 0 else 0.0) + (c[order[i], order[k + 1]] if k < n - 1 else 0.0)
            # asymmetric-safe: account for the reversed interior as well
            inner_before = sum(c[order[t], order[t + 1]] for t in range(i, k))
            inner_after = sum(c[order[t + 1], order[t]] for t in range(i, k))
            if after + inner_after < before + inner_before - 1e-9:
                order[i:k + 1] = order[i:k + 1][::-1]
                return True
    return False


def _or_opt(c: np.ndarray, order: list[int], fixed_start: bool) -> bool:
    n = len(order)
    first = 1 if fixed_start else 0
    base = tour_cost(c, order)
    for seg in (1, 2, 3):
        for i in range(first, n - seg + 1):
            chunk = order[i:i + seg]
            rest = order[:i] + order[i + seg:]
            for rev in (False, True):
                piece = chunk[::-1] if rev else chunk
                for j in range(first, len(rest) + 1):
                    if j == i and not rev:
                        continue
                    cand = rest[:j] + piece + rest[j:]
                    if tour_cost(c, cand) < base - 1e-9:
                        order[:] = cand
                        return True
    return False


def improve(cost: np.ndarray, order: list[int], fixed_start: bool = False) -> list[int]:
    """2-opt and Or-opt moves until neither improves the open tour."""
    c = _check(cost)
    order = list(order)
    while _two_opt(c, order, fixed_start) or _or_opt(c, order, fixed_start):
        pass
    return order


EXACT_LIMIT = 10


def held_karp(cost: np.ndarray, start: int | None = None) -> tuple[list[int], float]:
    """Optimal open tour by dynamic programming over vertex subsets."""
    c = _check(cost)
    n = len(c)
    if n == 0:
        return [], 0.0
    full = 1 << n
    dp = np.full((full, n), np.inf)
    parent = np.full((full, n), -1, dtype=np.int64)
    for s in (range(n) if start is None else [start]):
        dp[1 << s, s] = 0.0
    bits = 1 << np.arange(n)
    for mask in range(1, full):
        row = dp[mask]
        if not np.isfinite(row).any():
            continue
        step = row[:, None] + c
        j = np.argmin(step, axis=0)
        val = step[j, np.arange(n)]
        for k in np.flatnonzero((mask & bits) == 0):
            nm = mask | int(bits[k])
            if val[k] < dp[nm, k]:
                dp[nm, k] = val[k]
                parent[nm, k] = j[k]
    last = int(np.argmin(dp[full - 1]))
    total = float(dp[full - 1, last])
    order, mask = [last], full - 1
    while parent[mask, order[-1]] >= 0:
        prev = int(parent[mask, order[-1]])
        mask ^= 1 << order[-1]
        order.append(prev)
    return order[::-1], total


def solve_open_tour(cost: np.ndarray, start: int | None = None) -> tuple[list[int], float]:
    """Open tour; ``start`` pins the first vertex. Small inputs are solved exactly."""
    c = _check(cost)
    if len(c) == 0:
        return [], 0.0
    if len(c) <= EXACT_LIMIT:
        order, _ = held_karp(c, start)
        return order, tour_cost(c, order)
    order = nearest_neighbor(c, start)
    order = improve(c, order, fixed_start=start is not None)
    return order, tour_cost(c, order)


def brute_force_tour(cost: np.ndarray, start: int | None = None) -> tuple[list[int], float]:
    c = _check(cost)
    n = len(c)
    best, best_cost = None, math.inf
    if start is None:
        perms = itertools.permutations(range(n))
    else:
        others = [i for i in range(n) if i != start]
        perms = ((start,) + p for p in itertools.permutations(others))
    for p in perms:
        tc = tour_cost(c, p)
        if tc < best_cost:
            best, best_cost = list(p), tc
    return best, best_cost
