"""Operation tallies for the complexity benchmark.

A counter is active only inside a ``counting()`` block; outside of it every
``tally`` call is a single None check, so allocator hot paths stay clean.
Counts are per scalar operation: vectorised call sites pass the array length.
"""

from __future__ import annotations

from collections import Counter
from contextlib import contextmanager
from contextvars import ContextVar

_counter: ContextVar[Counter | None] = ContextVar("opcount", default=None)

# canonical operation names used by call sites
MUL = "mul"
DIV = "div"
LOG = "log"
EXP = "exp"
E1 = "e1"
SQRT = "sqrt"
CBRT = "cbrt"


@contextmanager
def counting():
    """Activate a fresh tally; yields the Counter that call sites fill."""
    token = _counter.set(Counter())
    try:
        yield _counter.get()
    finally:
        _counter.reset(token)


def tally(op: str, n: int = 1) -> None:
    c = _counter.get()
    if c is not None:
        c[op] += int(n)


def active() -> bool:
    return _counter.get() is not None
