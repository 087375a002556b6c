"""Receding-horizon playback of timestamped action chunks.

All operations take an explicit ``now`` so the module runs identically
against a wall clock or a simulated one. A pushed chunk replaces the whole
buffer; its already-past entries are dropped and counted as executed, which
makes the replan trigger fire a fixed number of ticks after the chunk's
observation time regardless of delivery latency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .poses import Pose

# due <= now comparisons tolerate one nanosecond so k/rate sums computed two
# different ways cannot miss a tick by a float ulp
_DUE_TOL = 1e-9

REPLAN_THRESHOLD = 10
CONTROL_RATE_HZ = 15.0


@dataclass(frozen=True)
class TimedAction:
    due: float
    ee_target: Pose
    hand_targets: np.ndarray
    chunk_id: int
    index_in_chunk: int

    def __post_init__(self):
        if not np.isfinite(self.due):
            raise ContractViolation("due time must be finite")
        h = np.asarray(self.hand_targets, dtype=np.float64).reshape(-1).copy()
        h.flags.writeable = False
        object.__setattr__(self, "hand_targets", h)


@dataclass
class DispatchRecord:
    dispatched_at: float
    due: float
    chunk_id: int
    index_in_chunk: int


@dataclass
class ChunkBuffer:
    replan_threshold: int = REPLAN_THRESHOLD
    actions: list[TimedAction] = field(default_factory=list)
    executed: int = 0
    inference_in_flight: bool = False
    dropped_on_last_push: int = 0
    dispatch_log: list[DispatchRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)


def push_chunk(buffer: ChunkBuffer, actions: list[TimedAction], now: float) -> ChunkBuffer:
    """Install a fresh chunk, superseding everything still pending.

    Entries already past due (due < now) are dropped; the executed counter
    restarts at the number dropped, so the replan trigger keys off the
    chunk's own timeline.
    """
    if len(actions) == 0:
        raise ContractViolation("cannot push an empty chunk")
    dues = [a.due for a in actions]
    if any(b < a for a, b in zip(dues, dues[1:])):
        raise ContractViolation("chunk actions must be timestamp-ordered")
    keep = [a for a in actions if a.due >= now - _DUE_TOL]
    buffer.dropped_on_last_push = len(actions) - len(keep)
    buffer.actions = keep
    buffer.executed = buffer.dropped_on_last_push
    buffer.inference_in_flight = False
    return buffer


def pop_due(buffer: ChunkBuffer, now: float) -> TimedAction | None:
    """Remove and return the earliest action whose due time has arrived."""
    if not buffer.actions:
        return None
    head = buffer.actions[0]
    if head.due <= now + _DUE_TOL:
        buffer.actions.pop(0)
        buffer.executed += 1
        buffer.dispatch_log.append(
            DispatchRecord(now, head.due, head.chunk_id, head.index_in_chunk)
        )
        return head
    return None


def needs_replan(buffer: ChunkBuffer) -> bool:
    """True once the active chunk has consumed its replan budget.

    The caller owns the in-flight flag: set it when inference is launched
    (suppressing duplicate triggers); push_chunk clears it.
    """
    if buffer.inference_in_flight:
        return False
    return buffer.executed >= buffer.replan_threshold


def export_dispatch_log(buffer: ChunkBuffer) -> str:
    """Timestamped event file: one `dispatched_at due chunk index` row per action."""
    lines = ["dispatched_at\tdue\tchunk_id\tindex_in_chunk"]
    for rec in buffer.dispatch_log:
        lines.append(f"{rec.dispatched_at!r}\t{rec.due!r}\t{rec.chunk_id}\t{rec.index_in_chunk}")
    return "\n".join(lines) + "\n"
