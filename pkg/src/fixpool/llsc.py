"""Load-linked / validate-link / store-conditional over a single CAS word.

The logical value is a small integer (a state-record slot index). It is packed
with a version tag into one word::

    word = (tag << slot_bits) | value

Every successful SC bumps the tag modulo ``2**tag_bits``. A stale link can
only be mistaken for a current one after exactly ``2**tag_bits`` successful
SCs have happened inside a single LL window. With the default 64-bit word and
at most a few dozen slots that is more than 2**57 SCs, so the wraparound is
asserted against the slot count at construction and otherwise ignored.

Each operation is exactly one shared access. Link contexts are process-local.
"""

from __future__ import annotations

from .memory import WORD_BITS, Memory


class LLSCCell:
    def __init__(
        self,
        mem: Memory,
        nprocs: int,
        initial: int,
        nvalues: int,
        tag_bits: int | None = None,
    ) -> None:
        self.mem = mem
        self.nvalues = nvalues
        self.slot_bits = max(1, (nvalues - 1).bit_length())
        if tag_bits is None:
            tag_bits = WORD_BITS - self.slot_bits
        if tag_bits < 1 or self.slot_bits + tag_bits > WORD_BITS:
            raise ValueError(f"tag width {tag_bits} does not fit next to {self.slot_bits} slot bits")
        self.tag_bits = tag_bits
        self.tag_period = 1 << tag_bits
        if self.tag_period <= nvalues:
            raise ValueError(f"tag period {self.tag_period} must exceed the {nvalues} recyclable slots")
        if not 0 <= initial < nvalues:
            raise ValueError(f"initial value {initial} out of range")
        self._value_mask = (1 << self.slot_bits) - 1
        self.cell = mem.alloc(1, initial)
        # last word observed by each process's LL; None = no armed link
        self._link: list[int | None] = [None] * nprocs

    def _unpack(self, word: int) -> tuple[int, int]:
        return word >> self.slot_bits, word & self._value_mask

    def ll(self, pid: int) -> int:
        word = self.mem.load(self.cell, pid)
        self._link[pid] = word
        value = word & self._value_mask
        self.mem.note(pid, "ll", self.cell, value)
        return value

    def vl(self, pid: int) -> bool:
        """True iff no SC succeeded since ``pid``'s last LL.

        Before the first LL (or after the link was consumed by an SC) this
        returns False.
        """
        link = self._link[pid]
        if link is None:
            ok = False
        else:
            ok = self.mem.load(self.cell, pid) == link
        self.mem.note(pid, "vl", self.cell, int(ok))
        return ok

    def sc(self, pid: int, new: int) -> bool:
        if not 0 <= new < self.nvalues:
            raise ValueError(f"value {new} out of range")
        link = self._link[pid]
        self._link[pid] = None
        if link is None:
            ok = False
        else:
            tag, _ = self._unpack(link)
            word = (((tag + 1) % self.tag_period) << self.slot_bits) | new
            ok = self.mem.cas(self.cell, pid, link, word)
        self.mem.note(pid, "sc", self.cell, int(ok))
        return ok

    def read(self, pid: int) -> int:
        """Plain read of the current value; does not arm a link."""
        return self.mem.load(self.cell, pid) & self._value_mask

    def peek(self) -> int:
        """Current value without recording an access (audits only)."""
        return self.mem.words[self.cell] & self._value_mask

    def tag(self) -> int:
        return self._unpack(self.mem.words[self.cell])[0]
