import json
import random

import pytest

from ropsim.detector import (ClosedBy, Detector, DetectorConfig, ProcessEntry,
                             RopDetected, run, signature_check)
from ropsim.trace import (Call, Plain, PrivilegeLevel, Return, Switch, Trace,
                          parse_trace, serialize_trace)
from ropsim.workload import (BenignSpec, InterleaveSpec, RopSpec, gen_benign,
                             gen_rop, interleave)

from oracle import detector_verdict_tuples, reference_verdicts


def rop_trace(g=12, size=4, region=PrivilegeLevel.USER, **kw):
    kw.setdefault("prologue", 0)
    kw.setdefault("alignment_offset", 0)
    return gen_rop(RopSpec(chain_length=g, gadget_sizes=[size] * g,
                           address_region=region, **kw))


class TestSignatureCheck:
    def test_six_gadgets_of_four_instructions(self):
        assert signature_check(24, 6, DetectorConfig()) is True

    def test_instruction_budget_exceeded(self):
        assert signature_check(37, 6, DetectorConfig()) is False

    def test_extra_predicted_return(self):
        assert signature_check(30, 7, DetectorConfig()) is False

    def test_boundary_is_inclusive(self):
        assert signature_check(36, 6, DetectorConfig()) is True


class TestBasicVerdicts:
    def test_pure_chain_detected_in_first_interval(self):
        report = run(rop_trace())
        assert len(report.verdicts) == 1
        v = report.verdicts[0]
        assert (v.pid, v.interval_index, v.n_i, v.n_r) == (1, 1, 24, 6)
        assert v.level is PrivilegeLevel.USER

    def test_kernel_chain_reports_kernel_level(self):
        report = run(rop_trace(region=PrivilegeLevel.KERNEL))
        assert not report.clean
        v = report.verdicts[0]
        assert v.level is PrivilegeLevel.KERNEL
        assert v.trigger_pc >= 0xC0000000

    def test_fat_gadgets_not_detected(self):
        # 12 gadgets of 8 instructions: n_i = 48 > 36 in every interval.
        report = run(rop_trace(size=8))
        assert report.clean
        overflow = [r for r in report.intervals if r.closed_by is ClosedBy.OVERFLOW]
        assert all(r.n_i == 48 for r in overflow)

    def test_single_gadget_cannot_fill_an_interval(self):
        report = run(rop_trace(g=1))
        assert report.clean
        assert not [r for r in report.intervals if r.closed_by is ClosedBy.OVERFLOW]

    def test_benign_matched_trace_closes_no_intervals(self):
        trace = gen_benign(BenignSpec(total_instructions=4000,
                                      mispredict_burst_count=0, seed=5))
        report = run(trace)
        assert report.clean
        assert not [r for r in report.intervals if r.closed_by is ClosedBy.OVERFLOW]

    def test_detection_stops_monitoring_that_process_only(self):
        # Two payload processes: both get exactly one verdict each.
        a = rop_trace(g=18, seed=1)
        b = rop_trace(g=18, seed=2)
        trace = interleave(InterleaveSpec(
            parts=[(1, a), (2, b)],
            schedule=[(1, len(a.events)), (2, len(b.events))]))
        report = run(trace)
        assert sorted(v.pid for v in report.verdicts) == [1, 2]

    def test_events_after_detection_are_ignored(self):
        trace = rop_trace(g=24)
        report = run(trace)
        assert len(report.verdicts) == 1
        # First full interval already matches; later chain intervals never close.
        overflow = [r for r in report.intervals if r.closed_by is ClosedBy.OVERFLOW]
        assert len(overflow) == 1


class TestIntervals:
    def test_end_of_trace_interval_is_never_checked(self):
        # Five bare gadget returns: one short of an interval, clean at exit.
        trace = rop_trace(g=5)
        report = run(trace)
        assert report.clean
        assert report.intervals[-1].closed_by is ClosedBy.END_OF_TRACE
        assert report.intervals[-1].n_m == 5

    def test_trace_ending_exactly_at_overflow_is_checked(self):
        trace = rop_trace(g=6)
        report = run(trace)
        assert not report.clean

    def test_monotone_counts_in_all_records(self):
        rng = random.Random(3)
        for seed in range(5):
            trace = gen_benign(BenignSpec(total_instructions=20_000,
                                          mispredict_burst_count=4,
                                          gap_profile="mixed", seed=seed))
            for rec in run(trace).intervals:
                assert rec.n_m <= rec.n_r <= rec.n_i

    def test_overflow_records_carry_full_interval(self):
        trace = gen_benign(BenignSpec(total_instructions=20_000,
                                      mispredict_burst_count=6,
                                      gap_profile="sparse", seed=9))
        report = run(trace)
        overflow = [r for r in report.intervals if r.closed_by is ClosedBy.OVERFLOW]
        assert overflow, "sparse bursts of 10 must close intervals at t_m=6"
        assert all(r.n_m == 6 for r in overflow)
        # Sparse bursts are rejected by instruction count, not return count.
        assert all(r.n_i > 36 for r in overflow)


def _switch_probe(events):
    """Run a hand-built event list through a Detector and return it."""
    det = Detector()
    det.run(Trace(1, events))
    return det


class TestSwitchHandling:
    def test_exit_side_creates_entry_with_bank_values(self):
        # pid 1: 8 plains + 2 bare returns -> bank (10, 2, 2), parked on switch.
        events = [Plain(i * 4) for i in range(8)]
        events += [Return(0x100, 0x5000), Return(0x104, 0x6000)]
        events.append(Switch(2))
        det = Detector()
        det.run(Trace(1, events))
        # finish() ran at end of trace; the entry is still parked for pid 1.
        entry = det.table.find(1)
        assert (entry.n_i, entry.n_r, entry.n_m) == (10, 2, 2)
        assert entry.pack() == bytes([10, 2, 2])

    def test_entry_side_sets_residual_threshold(self):
        # pid 1 accumulates 4 mispredictions, is switched out and back in:
        # the sampling threshold must re-arm at 6 - 4 = 2.
        events = [Return(0x100 + 4 * i, 0x9000 + i) for i in range(4)]
        events += [Switch(2), Plain(0), Switch(1)]
        det = Detector()
        det.run(Trace(1, events))
        assert det.bank.mispred_ret.threshold == 2

    def test_fresh_process_gets_full_threshold(self):
        events = [Return(0x100, 0x9000), Switch(2)]
        det = Detector()
        det.run(Trace(1, events))
        assert det.bank.mispred_ret.threshold == 6

    def test_carried_interval_counts_whole_interval(self):
        # 4 mispredictions before the switch, 2 after: the completed interval
        # reports totals across the switch.
        pre = [Return(0x100 + 4 * i, 0x9000 + i) for i in range(4)]
        mid = [Switch(2), Plain(0), Plain(4), Switch(1)]
        post = [Return(0x200 + 4 * i, 0xA000 + i) for i in range(2)]
        report = run(Trace(1, pre + mid + post))
        completed = [r for r in report.intervals
                     if r.pid == 1 and r.closed_by is ClosedBy.OVERFLOW]
        assert len(completed) == 1
        assert (completed[0].n_i, completed[0].n_r, completed[0].n_m) == (6, 6, 6)
        # n_i = 6 <= 36 and n_r = 6: this bare-return interval is a detection.
        assert not report.clean

    def test_failed_check_clears_parked_entry(self):
        # 4 mispreds + enough plain padding that the completed interval fails,
        # then the entry must be gone.
        pre = [Return(0x100 + 4 * i, 0x9000 + i) for i in range(4)]
        pad = [Plain(i * 4) for i in range(40)]
        post = [Return(0x200 + 4 * i, 0xA000 + i) for i in range(2)]
        det = Detector()
        det.run(Trace(1, pre + pad + [Switch(2), Plain(0), Switch(1)] + post))
        assert det.table.find(1) is None
        assert det.verdicts == []

    def test_no_table_discards_partial_interval(self):
        events = [Return(0x100 + 4 * i, 0x9000 + i) for i in range(4)]
        events += [Switch(2), Plain(0), Switch(1)]
        events += [Return(0x200 + 4 * i, 0xA000 + i) for i in range(6)]
        cfg = DetectorConfig(table_enabled=False)
        report = run(Trace(1, events), cfg)
        discarded = [r for r in report.intervals
                     if r.closed_by is ClosedBy.SWITCH and r.pid == 1]
        assert len(discarded) == 1
        assert discarded[0].n_m == 4
        # The second quantum's six bare returns complete an interval alone.
        assert not report.clean
        assert report.verdicts[0].n_r == 6


class TestSplitChain:
    def test_split_into_thirds_needs_the_table(self):
        # 12 four-instruction gadgets in three 4-gadget quanta, benign
        # process in between: detected with the table, missed without.
        rop = rop_trace(prologue=60)
        benign = gen_benign(BenignSpec(total_instructions=3000,
                                       mispredict_burst_count=1,
                                       gap_profile="sparse", seed=3))
        n = len(rop.events)
        chain_events = 12 * 4
        cut1 = n - chain_events + 16  # after gadget 4
        cut2 = n - chain_events + 32  # after gadget 8
        b = len(benign.events)
        spec = InterleaveSpec(
            parts=[(1, benign), (7, rop)],
            schedule=[(1, 1000), (7, cut1), (1, 1000), (7, cut2 - cut1),
                      (1, 500), (7, n - cut2), (1, b - 2500)],
            split_rop=True)
        trace = interleave(spec)
        with_table = run(trace)
        assert with_table.detected_pids() == {7}
        without_table = run(trace, DetectorConfig(table_enabled=False))
        assert without_table.clean

    def test_verdict_matches_reference_on_split_trace(self):
        rop = rop_trace(prologue=60)
        benign = gen_benign(BenignSpec(total_instructions=3000,
                                       mispredict_burst_count=1,
                                       gap_profile="sparse", seed=4))
        n = len(rop.events)
        spec = InterleaveSpec(
            parts=[(1, benign), (7, rop)],
            schedule=[(1, 1500), (7, n // 2), (1, 1000), (7, n - n // 2),
                      (1, len(benign.events) - 2500)])
        trace = interleave(spec)
        for table in (True, False):
            cfg = DetectorConfig(table_enabled=table)
            got = detector_verdict_tuples(run(trace, cfg))
            want = reference_verdicts(trace, 6, 6, 16, table_enabled=table)
            assert got == want


class TestProcessEntry:
    def test_saturates_at_one_byte(self):
        entry = ProcessEntry(1)
        entry.accumulate(200, 200, 3)
        entry.accumulate(100, 40, 2)
        assert (entry.n_i, entry.n_r, entry.n_m) == (255, 240, 5)

    def test_unbounded_mode(self):
        entry = ProcessEntry(1)
        entry.accumulate(200, 200, 3, saturating=False)
        entry.accumulate(100, 40, 2, saturating=False)
        assert (entry.n_i, entry.n_r, entry.n_m) == (300, 240, 5)

    def test_packs_to_three_bytes(self):
        entry = ProcessEntry(9)
        entry.accumulate(300, 17, 4)
        packed = entry.pack()
        assert len(packed) == 3
        assert packed == bytes([255, 17, 4])


class TestConfig:
    def test_rejects_non_positive_parameters(self):
        with pytest.raises(ValueError):
            DetectorConfig(t_m=0)
        with pytest.raises(ValueError):
            DetectorConfig(t_i=0)

    def test_detector_is_single_use(self):
        det = Detector()
        det.run(Trace(1, [Plain(0)]))
        with pytest.raises(RuntimeError):
            det.run(Trace(1, [Plain(0)]))

    def test_flush_ras_on_switch_breaks_cross_switch_matches(self):
        events = [Call(0x100, 0x2000, 0x104), Switch(2), Plain(0), Switch(1),
                  Return(0x2004, 0x104)]
        kept = run(Trace(1, events))
        assert not any(r.n_m for r in kept.intervals)
        flushed = run(Trace(1, events), flush_ras_on_switch=True)
        assert any(r.n_m for r in flushed.intervals)


class TestReportSerialization:
    def test_jsonl_records_and_fields(self):
        report = run(rop_trace())
        lines = [json.loads(line) for line in report.to_jsonl().splitlines()]
        kinds = {line["type"] for line in lines}
        assert kinds == {"interval", "verdict"}
        verdict = next(l for l in lines if l["type"] == "verdict")
        assert verdict["verdict"] == "rop_detected"
        assert set(verdict) >= {"pid", "interval_index", "n_i", "n_r",
                                "level", "trigger_pc"}
        assert verdict["level"] == "user"
        int(verdict["trigger_pc"], 16)
        interval = next(l for l in lines if l["type"] == "interval")
        assert set(interval) >= {"pid", "interval_index", "n_i", "n_r",
                                 "n_m", "closed_by"}

    def test_clean_report_serializes_empty(self):
        report = run(Trace(1, []))
        assert report.to_jsonl() == ""
