"""Hardware-performance-counter bank with counting and sampling modes.

Three events are counted: retired instructions, retired returns, and
mispredicted returns.  The first two run in counting mode (aggregate
only); the misprediction counter runs in sampling mode and signals an
overflow exactly once per reset cycle, on the increment that makes its
raw count reach the configured threshold.  The overflow is synchronous
with the triggering event: no interrupt skid is modeled.
"""

from __future__ import annotations

import enum
from typing import Optional


class EventKind(enum.Enum):
    INSTR = "instr"
    RET = "ret"
    MISPRED_RET = "mispred_ret"


class Counter:
    """One 64-bit event counter; a threshold puts it in sampling mode."""

    __slots__ = ("raw", "threshold")

    def __init__(self, threshold: Optional[int] = None):
        if threshold is not None and threshold < 1:
            raise ValueError("sampling threshold must be >= 1")
        self.raw = 0
        self.threshold = threshold

    def increment(self) -> bool:
        """Count one occurrence; True on the increment that hits the threshold."""
        self.raw += 1
        return self.raw == self.threshold

    def reset(self, threshold: Optional[int] = None) -> None:
        """Zero the count; optionally re-arm with a new threshold."""
        if threshold is not None and threshold < 1:
            raise ValueError("sampling threshold must be >= 1")
        self.raw = 0
        if threshold is not None:
            self.threshold = threshold


class CounterBank:
    """The three-counter bank driving monitor intervals.

    `instr` and `ret` aggregate; `mispred_ret` samples with an overflow
    threshold.  Because the raw count only ever steps by one, the
    equality test against the threshold fires exactly once per cycle;
    later increments before a reset do not re-signal.
    """

    __slots__ = ("instr", "ret", "mispred_ret")

    def __init__(self, threshold: int):
        self.instr = Counter()
        self.ret = Counter()
        self.mispred_ret = Counter(threshold)

    def record(self, kind: EventKind) -> bool:
        """Count one event; True iff this made the sampling counter overflow."""
        if kind is EventKind.INSTR:
            self.instr.raw += 1
            return False
        if kind is EventKind.RET:
            self.ret.raw += 1
            return False
        c = self.mispred_ret
        c.raw += 1
        return c.raw == c.threshold

    def reset(self, threshold: int) -> None:
        """Zero all counters and arm the sampling counter at `threshold`."""
        if threshold < 1:
            raise ValueError("sampling threshold must be >= 1")
        self.instr.raw = 0
        self.ret.raw = 0
        self.mispred_ret.raw = 0
        self.mispred_ret.threshold = threshold

    def read(self) -> tuple[int, int, int]:
        """Current (instructions, returns, mispredicted returns); no side effects."""
        return self.instr.raw, self.ret.raw, self.mispred_ret.raw
