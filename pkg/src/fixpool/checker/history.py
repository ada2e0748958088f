"""Invocation/response histories recovered from event traces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..memory import Event


@dataclass(frozen=True)
class Operation:
    id: int
    pid: int
    func: int
    arg: int
    result: int | None  # None while pending
    inv: float
    res: float  # math.inf while pending

    @property
    def completed(self) -> bool:
        return self.res != math.inf


class MalformedHistory(ValueError):
    pass


class History(list):
    """List of :class:`Operation` ordered by invocation."""

    @classmethod
    def from_events(cls, events: Iterable[Event | tuple]) -> "History":
        """Build from ``invoke``/``respond`` markers; other events are skipped.

        An ``invoke`` event carries ``(func, arg)`` in ``(cell, value)``, a
        ``respond`` carries ``(func, result)``.
        """
        hist = cls()
        open_ops: dict[int, tuple[int, int, int, int]] = {}
        for pos, ev in enumerate(events):
            if isinstance(ev, tuple):
                ev = Event(*ev)
            if ev.kind == "invoke":
                if ev.pid in open_ops:
                    raise MalformedHistory(f"process {ev.pid} invoked twice without a response")
                open_ops[ev.pid] = (pos, ev.cell, ev.value, len(hist))
                hist.append(None)
            elif ev.kind == "respond":
                if ev.pid not in open_ops:
                    raise MalformedHistory(f"response by process {ev.pid} without an invocation")
                inv, func, arg, slot = open_ops.pop(ev.pid)
                if func != ev.cell:
                    raise MalformedHistory(f"process {ev.pid} responded to the wrong operation")
                hist[slot] = Operation(slot, ev.pid, func, arg, ev.value, inv, pos)
        for pid, (inv, func, arg, slot) in open_ops.items():
            hist[slot] = Operation(slot, pid, func, arg, None, inv, math.inf)
        return hist

    def truncate(self, t: float) -> "History":
        """The history as observed before position ``t``."""
        out = History()
        for op in self:
            if op.inv >= t:
                continue
            if op.res >= t:
                op = Operation(len(out), op.pid, op.func, op.arg, None, op.inv, math.inf)
            else:
                op = Operation(len(out), op.pid, op.func, op.arg, op.result, op.inv, op.res)
            out.append(op)
        return out

    def positions(self) -> Sequence[float]:
        pts = {op.inv for op in self} | {op.res for op in self if op.completed}
        return sorted(pts)
