"""Linearizability search against a sequential stack.

``check_linearizable`` is the Wing & Gong backtracking search with a cache of
visited (remaining-operations, abstract-state) pairs. ``brute_force`` tries
every permutation and is only used as an independent oracle on tiny histories.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

from ..memory import NIL
from ..psim import POP, PUSH
from .history import History, Operation


class StackModel:
    """Sequential LIFO over words; state is a tuple, bottom first."""

    def __init__(self, initial: Sequence[int] = ()) -> None:
        self.initial = tuple(initial)

    def step(self, state: tuple, op: Operation) -> tuple | None:
        """Apply ``op``; None when its recorded result is impossible."""
        if op.func == PUSH:
            if op.result not in (None, NIL):
                return None
            return state + (op.arg,)
        if op.func == POP:
            expect = state[-1] if state else NIL
            if op.result is not None and op.result != expect:
                return None
            return state[:-1]
        return None


@dataclass
class Verdict:
    ok: bool | None  # None = inconclusive (search cutoff)
    order: list[int] = field(default_factory=list)
    failing_prefix: int | None = None  # events needed to expose the failure
    explored: int = 0

    def __bool__(self) -> bool:
        return bool(self.ok)


def _search(hist: History, model: StackModel, max_nodes: int) -> tuple[bool | None, list[int], int]:
    ops = list(hist)
    seen: set[tuple[frozenset, tuple]] = set()
    nodes = 0

    def go(remaining: frozenset, state: tuple) -> list[int] | None:
        nonlocal nodes
        nodes += 1
        if nodes > max_nodes:
            raise _Cutoff
        if all(not ops[i].completed for i in remaining):
            return []
        key = (remaining, state)
        if key in seen:
            return None
        horizon = min(ops[i].res for i in remaining)
        for i in sorted(remaining, key=lambda j: ops[j].inv):
            op = ops[i]
            if op.inv > horizon:
                continue
            nxt = model.step(state, op)
            if nxt is None:
                continue
            rest = go(remaining - {i}, nxt)
            if rest is not None:
                return [i] + rest
        seen.add(key)
        return None

    try:
        order = go(frozenset(range(len(ops))), model.initial)
    except _Cutoff:
        return None, [], nodes
    if order is None:
        return False, [], nodes
    return True, order, nodes


class _Cutoff(Exception):
    pass


def check_linearizable(hist: History, model: StackModel | None = None, max_nodes: int = 200_000) -> Verdict:
    """Search for a linearization of ``hist``.

    Pending operations may be linearized anywhere after their invocation or
    left out. On failure the verdict carries the shortest history prefix (in
    event positions) that is already not linearizable.
    """
    model = model or StackModel()
    ok, order, nodes = _search(hist, model, max_nodes)
    verdict = Verdict(ok, order, explored=nodes)
    if ok is False:
        for t in hist.positions():
            sub = hist.truncate(t + 1)
            sub_ok, _, _ = _search(sub, model, max_nodes)
            if sub_ok is False:
                verdict.failing_prefix = int(t) + 1
                break
    return verdict


def brute_force(hist: History, model: StackModel | None = None) -> bool:
    """Permutation oracle; exponential, keep to a handful of operations."""
    model = model or StackModel()
    ops = list(hist)
    completed = [op for op in ops if op.completed]
    pending = [op for op in ops if not op.completed]
    for r in range(len(pending) + 1):
        for extra in itertools.combinations(pending, r):
            chosen = completed + list(extra)
            for perm in itertools.permutations(chosen):
                if _respects_real_time(perm) and _legal(perm, model):
                    return True
    return False


def _respects_real_time(perm: Sequence[Operation]) -> bool:
    for i, a in enumerate(perm):
        for b in perm[i + 1 :]:
            if b.res < a.inv:
                return False
    return True


def _legal(perm: Sequence[Operation], model: StackModel) -> bool:
    state = model.initial
    for op in perm:
        state = model.step(state, op)
        if state is None:
            return False
    return True
