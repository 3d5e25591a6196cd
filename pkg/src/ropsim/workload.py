"""Seeded generators for benign traces, ROP payload traces, and interleavings.

Every generator is a pure function of its spec: the same seed yields the
same trace bytes.  Each generator replays its output through the
return-address-stack model before returning and asserts the misprediction
structure it promised (burst run lengths, chain length), so a generator
bug cannot silently skew detection results.

Benign traces mix matched call/return activity with recursion bursts that
overflow the stack and unwind into short runs of mispredicted returns.
Two burst shapes are used so a benign corpus exercises both rejection
branches of the detector:

* sparse bursts: runs up to the configured chain limit, with at least
  ``SPARSE_MIN_GAP`` plain instructions between unwinding returns, so any
  window of mispredictions carries far more instructions than a gadget
  chain could (instruction-count rejection);
* dense bursts: tightly packed runs capped at ``DENSE_MAX_CHAIN``
  mispredictions, short enough that a monitor interval can never fill
  inside one burst; an interval spanning two bursts always crosses the
  matched-pair filler between them (return-count rejection).

The dense cap assumes monitor intervals of at least six mispredictions;
the sparse gap keeps six-gadget windows above 36 instructions and scales
safely to larger intervals.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .ras import DEFAULT_CAPACITY, ReturnAddressStack
from .trace import (KERNEL_BASE, Call, Plain, PrivilegeLevel, Return, Switch,
                    Trace, TraceEvent)

USER_CODE_LO = 0x08048000
USER_CODE_HI = 0xB0000000
KERNEL_CODE_LO = KERNEL_BASE
KERNEL_CODE_HI = 0xFFFFFF00

SPARSE_MIN_GAP = 11
SPARSE_MAX_GAP = 40
DENSE_MAX_CHAIN = 5
DENSE_MAX_GAP = 5

GAP_PROFILES = ("sparse", "dense", "mixed")


class GenerationError(ValueError):
    """A workload spec that cannot be realized."""


@dataclass
class BenignSpec:
    total_instructions: int = 100_000
    ras_capacity: int = 16
    max_benign_mispredict_chain: int = 10
    mispredict_burst_count: int = 8
    gap_profile: str = "mixed"
    seed: int = 0


@dataclass
class RopSpec:
    chain_length: int = 12
    gadget_sizes: list[int] | None = None  # default: drawn from 2..6
    prologue: int = 200
    alignment_offset: int = 0
    address_region: PrivilegeLevel = PrivilegeLevel.USER
    seed: int = 0


@dataclass
class InterleaveSpec:
    parts: list[tuple[int, Trace]]
    schedule: list[tuple[int, int]]
    split_rop: bool = False


# -- replay helpers -----------------------------------------------------------

def replay_mispredictions(trace: Trace, ras_capacity: int,
                          flush_ras_on_switch: bool = False) -> list[bool]:
    """Outcome (True = mispredicted) of each Return event, in trace order."""
    ras = ReturnAddressStack(ras_capacity)
    out: list[bool] = []
    for ev in trace.events:
        cls = ev.__class__
        if cls is Call:
            ras.on_call(ev.return_addr)
        elif cls is Return:
            out.append(ras.on_return(ev.actual_target))
        elif cls is Switch and flush_ras_on_switch:
            ras.flush()
    return out


def mispredict_runs(flags: list[bool]) -> list[int]:
    """Lengths of maximal runs of consecutive mispredicted returns."""
    runs = []
    current = 0
    for f in flags:
        if f:
            current += 1
        elif current:
            runs.append(current)
            current = 0
    if current:
        runs.append(current)
    return runs


# -- event emission -----------------------------------------------------------

class _Emitter:
    """Builds an event stream with a pc cursor and a software call stack."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.events: list[TraceEvent] = []
        self.pc = USER_CODE_LO
        self.shadow: list[int] = []
        self.instructions = 0

    def plains(self, n: int) -> None:
        if n <= 0:
            return
        pc = self.pc
        append = self.events.append
        for _ in range(n):
            append(Plain(pc))
            pc += 4
        self.pc = pc
        self.instructions += n

    def call(self) -> None:
        pc = self.pc
        return_addr = pc + 4
        target = self.rng.randrange(USER_CODE_LO, USER_CODE_HI, 16)
        self.events.append(Call(pc, target, return_addr))
        self.shadow.append(return_addr)
        self.pc = target
        self.instructions += 1

    def ret_matched(self) -> None:
        return_addr = self.shadow.pop()
        self.events.append(Return(self.pc, return_addr))
        self.pc = return_addr
        self.instructions += 1

    def ret_to(self, target: int) -> None:
        """A return that ignores the software stack (corrupted/absent frame)."""
        self.events.append(Return(self.pc, target))
        self.pc = target
        self.instructions += 1

    def nest(self, depth: int) -> None:
        """A balanced call/return nest; leaves the stack as it found it."""
        rng = self.rng
        for _ in range(depth):
            self.call()
            self.plains(rng.randint(0, 3))
        for _ in range(depth):
            self.plains(rng.randint(0, 3))
            self.ret_matched()

    def burst(self, k: int, capacity: int, gap_lo: int, gap_hi: int) -> None:
        """Recursion `capacity + k` deep; the unwind mispredicts exactly k times."""
        rng = self.rng
        for _ in range(capacity + k):
            self.call()
            self.plains(rng.randint(0, 1))
        for _ in range(capacity + k):
            self.plains(rng.randint(gap_lo, gap_hi))
            self.ret_matched()


# -- benign traces ------------------------------------------------------------

def _burst_plan(spec: BenignSpec, rng: random.Random) -> list[tuple[int, int, int]]:
    """Per-burst (run length, gap lo, gap hi); the first burst hits the chain cap."""
    chain_cap = spec.max_benign_mispredict_chain
    plan = []
    for i in range(spec.mispredict_burst_count):
        profile = spec.gap_profile
        if profile == "mixed":
            profile = rng.choice(("sparse", "dense"))
        if i == 0 and spec.gap_profile != "dense":
            profile = "sparse"
        if profile == "sparse":
            k = chain_cap if i == 0 else rng.randint(min(2, chain_cap), chain_cap)
            plan.append((k, SPARSE_MIN_GAP, SPARSE_MAX_GAP))
        else:
            k = rng.randint(1, min(DENSE_MAX_CHAIN, chain_cap))
            plan.append((k, 0, DENSE_MAX_GAP))
    return plan


def gen_benign(spec: BenignSpec) -> Trace:
    """Single-process benign trace; deterministic in the spec seed."""
    if spec.gap_profile not in GAP_PROFILES:
        raise GenerationError(f"unknown gap profile {spec.gap_profile!r}")
    if spec.total_instructions < 1:
        raise GenerationError("total_instructions must be positive")
    if spec.mispredict_burst_count and spec.max_benign_mispredict_chain < 1:
        raise GenerationError("bursts requested but the mispredict chain cap is 0")

    rng = random.Random(spec.seed)
    em = _Emitter(rng)
    plan = _burst_plan(spec, rng)
    nest_cap = min(spec.ras_capacity, 6)
    total = spec.total_instructions

    # Worst-case burst cost (every draw at its maximum) bounds feasibility;
    # 64 instructions per segment are reserved for block-granularity slack.
    burst_cost = sum((spec.ras_capacity + k) * (3 + gap_hi)
                     for k, _, gap_hi in plan)
    usable = total - burst_cost - 64 * (len(plan) + 1)
    if plan and usable < (len(plan) + 1) * 16:
        raise GenerationError(
            "total_instructions too small for the requested bursts")
    segment_target = usable // (len(plan) + 1) if plan else 0

    def filler(stop: int) -> None:
        # A nest leads every filler segment so any interval spanning two
        # bursts picks up correctly predicted returns.
        em.nest(rng.randint(1, nest_cap))
        while em.instructions < stop:
            if rng.random() < 0.4:
                em.nest(rng.randint(1, nest_cap))
            else:
                em.plains(rng.randint(4, 40))

    for k, gap_lo, gap_hi in plan:
        filler(em.instructions + segment_target)
        em.burst(k, spec.ras_capacity, gap_lo, gap_hi)
    # Exact tail fill: land on the requested instruction count.
    while total - em.instructions > 64:
        if rng.random() < 0.4:
            em.nest(rng.randint(1, nest_cap))
        else:
            em.plains(rng.randint(4, 40))
    em.plains(total - em.instructions)

    trace = Trace(1, em.events)
    flags = replay_mispredictions(trace, spec.ras_capacity)
    runs = mispredict_runs(flags)
    expected = sorted(k for k, _, _ in plan)
    if sorted(runs) != expected:
        raise AssertionError(
            f"benign generator produced runs {sorted(runs)}, planned {expected}")
    if em.instructions != total:
        raise AssertionError("benign generator missed the instruction target")
    return trace


# -- ROP payload traces -------------------------------------------------------

def _gadget_region(region: PrivilegeLevel) -> tuple[int, int]:
    if region is PrivilegeLevel.KERNEL:
        return KERNEL_CODE_LO, KERNEL_CODE_HI
    return USER_CODE_LO, USER_CODE_HI


def gen_rop(spec: RopSpec) -> Trace:
    """Benign prologue, alignment mispredictions, then the gadget chain."""
    g = spec.chain_length
    if g < 1:
        raise GenerationError("chain_length must be >= 1")
    rng = random.Random(spec.seed)
    if spec.gadget_sizes is None:
        sizes = [rng.randint(2, 6) for _ in range(g)]
    else:
        sizes = list(spec.gadget_sizes)
        if len(sizes) != g:
            raise GenerationError("gadget_sizes length must equal chain_length")
        if any(s < 1 for s in sizes):
            raise GenerationError("gadget sizes must be >= 1")

    em = _Emitter(rng)
    nest_cap = 6
    while em.instructions < spec.prologue:
        if rng.random() < 0.5:
            em.nest(rng.randint(1, nest_cap))
        else:
            em.plains(rng.randint(2, 20))

    # Alignment knob: benign mispredicted returns right before the chain
    # shift where interval boundaries fall inside it.  The prologue is
    # balanced, so these returns find an empty predictor stack.
    for _ in range(spec.alignment_offset):
        em.plains(rng.randint(1, 3))
        em.ret_to(rng.randrange(USER_CODE_LO, USER_CODE_HI, 4))

    lo, hi = _gadget_region(spec.address_region)
    bases = [rng.randrange(lo, hi - 64, 16) for _ in range(g)]
    for i, size in enumerate(sizes):
        em.pc = bases[i]
        em.plains(size - 1)
        target = bases[i + 1] if i + 1 < g else rng.randrange(lo, hi - 64, 4)
        em.ret_to(target)

    trace = Trace(1, em.events)
    flags = replay_mispredictions(trace, DEFAULT_CAPACITY)
    chain_and_offset = flags[len(flags) - g - spec.alignment_offset:]
    prologue_flags = flags[:len(flags) - g - spec.alignment_offset]
    if not all(chain_and_offset):
        raise AssertionError("chain or alignment returns were not all mispredicted")
    if any(prologue_flags):
        raise AssertionError("prologue unexpectedly mispredicted")
    return trace


# -- interleavings ------------------------------------------------------------

def interleave(spec: InterleaveSpec) -> Trace:
    """Merge per-process segments under an explicit quantum schedule."""
    parts: dict[int, list[TraceEvent]] = {}
    for pid, segment in spec.parts:
        if pid in parts:
            raise GenerationError(f"duplicate part for pid {pid}")
        if any(ev.__class__ is Switch for ev in segment.events):
            raise GenerationError(f"part for pid {pid} contains Switch events")
        parts[pid] = segment.events
    if not spec.schedule:
        raise GenerationError("empty schedule")

    cursors = dict.fromkeys(parts, 0)
    events: list[TraceEvent] = []
    initial = spec.schedule[0][0]
    cur = initial
    for pid, quantum in spec.schedule:
        if pid not in parts:
            raise GenerationError(f"schedule names unknown pid {pid}")
        if quantum < 1:
            raise GenerationError("schedule quanta must be >= 1")
        start = cursors[pid]
        end = start + quantum
        segment = parts[pid]
        if end > len(segment):
            raise GenerationError(f"schedule overruns part for pid {pid}")
        if pid != cur:
            events.append(Switch(pid))
            cur = pid
        events.extend(segment[start:end])
        cursors[pid] = end
    leftover = [pid for pid, pos in cursors.items() if pos != len(parts[pid])]
    if leftover:
        raise GenerationError(
            f"schedule does not consume parts for pids {sorted(leftover)}")
    return Trace(initial, events)
