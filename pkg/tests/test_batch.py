import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixpool.batch import LINK, NEXT, Arena, Batch, BatchStack
from fixpool.memory import NIL, NativeMemory, SimulatedMemory


def arena(m=32, k=2):
    return Arena(NativeMemory(), m, k)


def test_push_onto_empty_batch():
    a = arena()
    b = Batch(a, 3)
    b.push(5)
    assert (b.head, b.count, a.get(5, NEXT)) == (5, 1, NIL)


def test_batch_lifo():
    b = Batch(arena(), 3)
    b.push(1)
    b.push(2)
    assert b.pop() == 2
    assert b.pop() == 1
    assert b.is_empty()


def test_batch_full_and_bounds():
    b = Batch(arena(), 3)
    for blk in range(3):
        b.push(blk)
    assert b.full()
    with pytest.raises(OverflowError):
        b.push(9)
    b.clear()
    assert b.is_empty() and b.head == NIL
    with pytest.raises(IndexError):
        b.pop()


def test_arena_rejects_small_blocks():
    with pytest.raises(ValueError):
        Arena(NativeMemory(), 4, 1)


def _full(a, blocks, cap):
    b = Batch(a, cap)
    for blk in blocks:
        b.push(blk)
    return b


def test_batch_stack_roundtrip_keeps_blocks():
    a = arena()
    s = BatchStack(a, 3)
    b1, b2 = _full(a, [0, 1, 2], 3), _full(a, [3, 4, 5], 3)
    s.push(b1)
    s.push(b2)
    got = s.pop()
    assert list(got.blocks()) == [5, 4, 3]
    assert list(s.pop().blocks()) == [2, 1, 0]
    assert s.is_empty()


def test_batch_stack_only_takes_full_batches():
    a = arena()
    with pytest.raises(ValueError):
        BatchStack(a, 3).push(_full(a, [0], 3))


def test_words_beyond_the_first_two_are_never_touched():
    a = arena(m=8, k=4)
    for blk in range(8):
        a.set(blk, 2, 1000 + blk)
        a.set(blk, 3, 2000 + blk)
    s = BatchStack(a, 4)
    s.push(_full(a, range(4), 4))
    s.push(_full(a, range(4, 8), 4))
    while not s.is_empty():
        b = s.pop()
        while not b.is_empty():
            b.pop()
    assert [a.get(b, 2) for b in range(8)] == [1000 + b for b in range(8)]
    assert [a.get(b, 3) for b in range(8)] == [2000 + b for b in range(8)]


def test_deref_flags_invalid_reference():
    mem = SimulatedMemory()
    a = Arena(mem, 4, 2)
    a.set(1, LINK, 77)
    assert a.deref(1, LINK, 0) == 77
    assert a.deref(99, NEXT, 0) == NIL
    assert [e.kind for e in mem.trace] == ["deref", "load", "bad_deref"]


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from(["push", "pop", "bpush", "bpop"]), max_size=60))
def test_batch_structures_conserve_blocks(ops):
    # model: plain lists of block ids
    cap, m = 3, 24
    a = arena(m)
    free = list(range(m))
    cur = Batch(a, cap)
    stack = BatchStack(a, cap)
    model_cur: list[int] = []
    model_stack: list[list[int]] = []
    for op in ops:
        if op == "push" and free and not cur.full():
            blk = free.pop()
            cur.push(blk)
            model_cur.append(blk)
        elif op == "pop" and not cur.is_empty():
            blk = cur.pop()
            assert blk == model_cur.pop()
            free.append(blk)
        elif op == "bpush" and cur.full():
            stack.push(cur)
            model_stack.append(model_cur)
            cur, model_cur = Batch(a, cap), []
        elif op == "bpop" and not stack.is_empty() and cur.is_empty():
            cur = stack.pop()
            model_cur = model_stack.pop()
        assert list(cur.blocks()) == model_cur[::-1]
        assert [list(b.blocks()) for b in stack.batches()] == [x[::-1] for x in reversed(model_stack)]
    held = list(cur.blocks()) + [blk for b in stack.batches() for blk in b.blocks()]
    assert sorted(held + free) == list(range(m))
