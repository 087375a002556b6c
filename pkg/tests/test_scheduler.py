import numpy as np
import pytest

from dexdesk.errors import ContractViolation
from dexdesk.poses import Pose
from dexdesk.scheduler import (
    ChunkBuffer,
    TimedAction,
    export_dispatch_log,
    needs_replan,
    pop_due,
    push_chunk,
)


def make_chunk(t0, chunk_id, n=48, rate=15.0):
    return [
        TimedAction(t0 + j / rate, Pose.identity(), np.zeros(2), chunk_id, j)
        for j in range(n)
    ]


class TestPushChunk:
    def test_push_into_empty(self):
        buf = ChunkBuffer()
        push_chunk(buf, make_chunk(0.0, 0), now=0.0)
        assert len(buf) == 48
        assert buf.executed == 0

    def test_past_due_actions_dropped(self):
        buf = ChunkBuffer()
        push_chunk(buf, make_chunk(0.0, 0), now=3.0 / 15.0 - 0.001)
        assert len(buf) == 45
        assert buf.executed == 3
        first = pop_due(buf, 3.0 / 15.0)
        assert first.index_in_chunk == 3

    def test_push_twice_idempotent_stream(self):
        buf_a, buf_b = ChunkBuffer(), ChunkBuffer()
        push_chunk(buf_a, make_chunk(0.0, 0), 0.0)
        push_chunk(buf_b, make_chunk(0.0, 0), 0.0)
        push_chunk(buf_b, make_chunk(0.0, 0), 0.0)
        seq_a = [pop_due(buf_a, t / 15.0).index_in_chunk for t in range(48)]
        seq_b = [pop_due(buf_b, t / 15.0).index_in_chunk for t in range(48)]
        assert seq_a == seq_b == list(range(48))

    def test_empty_chunk_rejected(self):
        with pytest.raises(ContractViolation):
            push_chunk(ChunkBuffer(), [], 0.0)

    def test_unordered_chunk_rejected(self):
        acts = make_chunk(0.0, 0, n=3)[::-1]
        with pytest.raises(ContractViolation):
            push_chunk(ChunkBuffer(), acts, 0.0)

    def test_replacement_supersedes_old_chunk(self):
        buf = ChunkBuffer()
        push_chunk(buf, make_chunk(0.0, 0), 0.0)
        for k in range(5):
            pop_due(buf, k / 15.0)
        push_chunk(buf, make_chunk(5 / 15.0, 1), now=5 / 15.0)
        nxt = pop_due(buf, 5 / 15.0)
        assert nxt.chunk_id == 1

    def test_clears_inflight_flag(self):
        buf = ChunkBuffer()
        buf.inference_in_flight = True
        push_chunk(buf, make_chunk(0.0, 0), 0.0)
        assert not buf.inference_in_flight


class TestPopDue:
    def test_nothing_before_first_due(self):
        buf = ChunkBuffer()
        push_chunk(buf, make_chunk(1.0, 0), 0.0)
        assert pop_due(buf, 0.5) is None

    def test_earliest_first(self):
        buf = ChunkBuffer()
        push_chunk(buf, make_chunk(0.0, 0, n=2), 0.0)
        a = pop_due(buf, 1.0)
        b = pop_due(buf, 1.0)
        assert (a.index_in_chunk, b.index_in_chunk) == (0, 1)
        assert pop_due(buf, 1.0) is None

    def test_15hz_sweep_exactly_48_pops(self):
        buf = ChunkBuffer()
        push_chunk(buf, make_chunk(0.0, 7), 0.0)
        got = []
        for k in range(60):
            a = pop_due(buf, k / 15.0)
            if a is not None:
                got.append(a.index_in_chunk)
        assert got == list(range(48))


class TestNeedsReplan:
    def test_threshold_boundary(self):
        buf = ChunkBuffer()
        push_chunk(buf, make_chunk(0.0, 0), 0.0)
        for k in range(9):
            pop_due(buf, k / 15.0)
        assert not needs_replan(buf)
        pop_due(buf, 9 / 15.0)
        assert needs_replan(buf)

    def test_fresh_chunk_resets(self):
        buf = ChunkBuffer()
        push_chunk(buf, make_chunk(0.0, 0), 0.0)
        for k in range(12):
            pop_due(buf, k / 15.0)
        assert needs_replan(buf)
        push_chunk(buf, make_chunk(12 / 15.0, 1), 12 / 15.0)
        assert not needs_replan(buf)

    def test_inflight_suppresses(self):
        buf = ChunkBuffer()
        push_chunk(buf, make_chunk(0.0, 0), 0.0)
        for k in range(15):
            pop_due(buf, k / 15.0)
        buf.inference_in_flight = True
        assert not needs_replan(buf)

    def test_threshold_configurable_to_exhaustion(self):
        buf = ChunkBuffer(replan_threshold=48)
        push_chunk(buf, make_chunk(0.0, 0), 0.0)
        for k in range(47):
            pop_due(buf, k / 15.0)
        assert not needs_replan(buf)
        pop_due(buf, 47 / 15.0)
        assert needs_replan(buf)


def run_timing_simulation(latency: float, duration_s: float = 60.0, rate: float = 15.0,
                          threshold: int = 10):
    """Tick loop with injected inference latency; returns (buffer, missing_ticks)."""
    buf = ChunkBuffer(replan_threshold=threshold)
    chunk_id = 0
    push_chunk(buf, make_chunk(0.0, chunk_id, rate=rate), 0.0)  # warm start
    pending: tuple[float, float] | None = None  # (delivery time, obs time)
    missing = 0
    n_ticks = int(round(duration_s * rate))
    for k in range(n_ticks):
        now = k / rate
        if pending is not None and pending[0] <= now:
            chunk_id += 1
            push_chunk(buf, make_chunk(pending[1], chunk_id, rate=rate), now)
            pending = None
        if pop_due(buf, now) is None:
            missing += 1
        if pending is None and needs_replan(buf):
            buf.inference_in_flight = True
            pending = (now + latency, now)
    return buf, missing


class TestTimingRun:
    @pytest.mark.parametrize("latency", [0.0, 0.2, 0.45, 0.6])
    def test_60s_run_no_missing_ticks_no_large_gaps(self, latency):
        buf, missing = run_timing_simulation(latency)
        assert missing == 0
        times = [r.dispatched_at for r in buf.dispatch_log]
        assert len(times) == 900
        gaps = np.diff(times)
        assert gaps.max() <= 1 / 15 + 0.005
        assert np.all(gaps >= -1e-12)

    def test_no_action_dispatched_twice(self):
        buf, _ = run_timing_simulation(0.6)
        seen = {(r.chunk_id, r.index_in_chunk) for r in buf.dispatch_log}
        assert len(seen) == len(buf.dispatch_log)

    def test_dispatch_log_export(self):
        buf, _ = run_timing_simulation(0.2, duration_s=2.0)
        text = export_dispatch_log(buf)
        lines = text.strip().splitlines()
        assert lines[0].split("\t") == ["dispatched_at", "due", "chunk_id", "index_in_chunk"]
        assert len(lines) == 1 + len(buf.dispatch_log)
