"""Trace-driven simulator and detector for ROP payloads.

The detector watches three hardware-counter events over an instruction
trace (instructions, returns, mispredicted returns), divides execution
into tumbling intervals of `t_m` mispredicted returns, and flags an
interval whose counts match a gadget chain: exactly `t_m` returns and at
most `t_i * t_m` instructions.
"""

from .detector import (ClosedBy, DetectionReport, Detector, DetectorConfig,
                       IntervalRecord, ProcessEntry, ProcessTable, RopDetected,
                       run, signature_check)
from .hpc import Counter, CounterBank, EventKind
from .ras import DEFAULT_CAPACITY, ReturnAddressStack
from .trace import (ADDRESS_MASK, KERNEL_BASE, Call, Plain, PrivilegeLevel,
                    Return, Switch, Trace, TraceEvent, TraceParseError,
                    classify_address, dump_trace, load_trace, parse_trace,
                    serialize_trace)
from .workload import (BenignSpec, GenerationError, InterleaveSpec, RopSpec,
                       gen_benign, gen_rop, interleave, mispredict_runs,
                       replay_mispredictions)

__version__ = "0.1.0"

__all__ = [
    "ADDRESS_MASK", "KERNEL_BASE", "DEFAULT_CAPACITY",
    "PrivilegeLevel", "Plain", "Call", "Return", "Switch", "Trace",
    "TraceEvent", "TraceParseError", "classify_address", "parse_trace",
    "serialize_trace", "load_trace", "dump_trace",
    "ReturnAddressStack",
    "Counter", "CounterBank", "EventKind",
    "Detector", "DetectorConfig", "DetectionReport", "ProcessEntry",
    "ProcessTable", "RopDetected", "IntervalRecord", "ClosedBy",
    "run", "signature_check",
    "BenignSpec", "RopSpec", "InterleaveSpec", "GenerationError",
    "gen_benign", "gen_rop", "interleave", "replay_mispredictions",
    "mispredict_runs",
]
