"""Independent reference implementations used to check the simulator.

Deliberately naive: list-based LRU, O(n^2) distance rescans, and an
exhaustive search over every possible victim choice.  None of them share
code with the package under test.
"""

from __future__ import annotations

import random


def naive_lru_outcomes(trace, num_sets, ways, line_bits=6):
    """Hit/miss sequence of a plain list-based LRU, 'H'/'M' per access."""
    sets = {}
    out = []
    for _pc, addr in trace:
        line = addr >> line_bits
        sid = line & (num_sets - 1)
        resident = sets.setdefault(sid, [])
        if line in resident:
            out.append("H")
            resident.remove(line)
            resident.append(line)
        else:
            out.append("M")
            if len(resident) == ways:
                resident.pop(0)
            resident.append(line)
    return out


def rescan_forward_distances(addresses):
    """O(n^2): distance to the next occurrence of the same address."""
    n = len(addresses)
    out = []
    for i in range(n):
        d = None
        for j in range(i + 1, n):
            if addresses[j] == addresses[i]:
                d = j - i
                break
        out.append(d)
    return out


def rescan_recencies(addresses):
    """O(n^2): count of accesses strictly between i and the previous touch."""
    out = []
    for i in range(len(addresses)):
        r = None
        for j in range(i - 1, -1, -1):
            if addresses[j] == addresses[i]:
                r = i - j - 1
                break
        out.append(r)
    return out


def max_hits_exhaustive(trace, num_sets, ways, line_bits=6):
    """Maximum attainable hit count over every eviction sequence (memoized DFS)."""
    lines = [addr >> line_bits for _pc, addr in trace]
    n = len(lines)
    memo = {}

    def rec(i, state):
        if i == n:
            return 0
        key = (i, state)
        if key in memo:
            return memo[key]
        line = lines[i]
        sid = line & (num_sets - 1)
        resident = state[sid]
        if line in resident:
            best = 1 + rec(i + 1, state)
        elif len(resident) < ways:
            grown = tuple(sorted(resident + (line,)))
            best = rec(i + 1, state[:sid] + (grown,) + state[sid + 1:])
        else:
            best = 0
            for victim in resident:
                swapped = tuple(sorted([l for l in resident if l != victim] + [line]))
                best = max(best, rec(i + 1, state[:sid] + (swapped,) + state[sid + 1:]))
        memo[key] = best
        return best

    return rec(0, tuple(() for _ in range(num_sets)))


def random_trace(rng: random.Random, max_len=12, alphabet=6, pc_pool=3):
    """Small random (pc, address) trace over line-aligned addresses."""
    length = rng.randint(1, max_len)
    return [
        (0x400000 + rng.randrange(pc_pool) * 0x10, 0x1000 + rng.randrange(alphabet) * 0x40)
        for _ in range(length)
    ]
