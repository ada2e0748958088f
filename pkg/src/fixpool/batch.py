"""Arena of fixed-size blocks and the intrusive batch structures built on it.

Block references are arena indices. Word 0 of an available block links it to
the next block of its batch; word 1 of a batch's head block links the batch to
the next batch of a process's ``local_batches`` stack. Blocks used as shared
stack nodes keep ``next`` in word 0 and the batch reference in word 1.

Batch and BatchStack manipulation is process-confined, so it reads and writes
the backing word list directly instead of going through traced accesses.
"""

from __future__ import annotations

from typing import Iterator

from .memory import NIL, Memory

NEXT = 0  # word 0: next block in batch / next node in shared stack
LINK = 1  # word 1: next batch in local_batches / node payload


class Arena:
    def __init__(self, mem: Memory, m: int, k: int) -> None:
        if k < 2:
            raise ValueError("blocks need at least two words")
        if m < 1:
            raise ValueError("arena needs at least one block")
        self.mem = mem
        self.m = m
        self.k = k
        self.base = mem.alloc(m * k, NIL)

    def addr(self, blk: int, word: int) -> int:
        return self.base + blk * self.k + word

    def valid(self, blk: int) -> bool:
        return 0 <= blk < self.m

    def get(self, blk: int, word: int) -> int:
        return self.mem.words[self.base + blk * self.k + word]

    def set(self, blk: int, word: int, value: int) -> None:
        self.mem.words[self.base + blk * self.k + word] = value

    def deref(self, blk: int, word: int, pid: int) -> int:
        """Traced read of a block word that may race with its reuse.

        An out-of-range reference yields NIL instead of faulting; the read is
        flagged with a ``bad_deref`` marker for the checker.
        """
        if not 0 <= blk < self.m:
            self.mem.note(pid, "bad_deref", blk, word)
            return NIL
        self.mem.note(pid, "deref", blk, word)
        return self.mem.load(self.base + blk * self.k + word, pid)


class Batch:
    """Intrusive LIFO of at most ``capacity`` blocks chained through word 0."""

    __slots__ = ("arena", "capacity", "head", "count")

    def __init__(self, arena: Arena, capacity: int, head: int = NIL, count: int = 0) -> None:
        self.arena = arena
        self.capacity = capacity
        self.head = head
        self.count = count

    def is_empty(self) -> bool:
        return self.count == 0

    def full(self) -> bool:
        return self.count == self.capacity

    def push(self, blk: int) -> None:
        if self.count >= self.capacity:
            raise OverflowError("push onto a full batch")
        self.arena.set(blk, NEXT, self.head)
        self.head = blk
        self.count += 1

    def pop(self) -> int:
        if self.count == 0:
            raise IndexError("pop from an empty batch")
        blk = self.head
        self.head = self.arena.get(blk, NEXT)
        self.count -= 1
        return blk

    def clear(self) -> None:
        self.head = NIL
        self.count = 0

    def blocks(self, limit: int | None = None) -> Iterator[int]:
        """Walk the chain; stops after ``limit`` (default ``count``) blocks."""
        blk = self.head
        for _ in range(self.count if limit is None else limit):
            if blk == NIL:
                return
            yield blk
            blk = self.arena.get(blk, NEXT)

    def __repr__(self) -> str:
        return f"Batch(head={self.head}, count={self.count}/{self.capacity})"


class BatchStack:
    """Stack of full batches threaded through word 1 of each head block."""

    __slots__ = ("arena", "capacity", "top", "size")

    def __init__(self, arena: Arena, capacity: int) -> None:
        self.arena = arena
        self.capacity = capacity
        self.top = NIL
        self.size = 0

    def is_empty(self) -> bool:
        return self.size == 0

    def push(self, batch: Batch) -> None:
        if not batch.full():
            raise ValueError(f"only full batches go on the batch stack, got {batch!r}")
        self.arena.set(batch.head, LINK, self.top)
        self.top = batch.head
        self.size += 1

    def pop(self) -> Batch:
        if self.size == 0:
            raise IndexError("pop from an empty batch stack")
        head = self.top
        self.top = self.arena.get(head, LINK)
        self.size -= 1
        return Batch(self.arena, self.capacity, head, self.capacity)

    def batches(self) -> Iterator[Batch]:
        head = self.top
        for _ in range(self.size):
            yield Batch(self.arena, self.capacity, head, self.capacity)
            head = self.arena.get(head, LINK)
