"""Per-channel waveform sequencing state machine.

Each channel walks its sequence memory one 8-sample word per 250 MHz cycle.
While a region plays, the resources for the next entry are prefetched so
that region switches are seamless: there is never an idle cycle between the
last word of one region and the first word of the next.  The prefetch takes
PREFETCH_WORDS cycles per pass, which is why every region must be at least
MIN_ENTRY_WORDS words long; the shortfall counter instruments exactly that
hazard when the rule is bypassed.

Three executions of the same program are provided:

* ``ChannelSequencer.step`` - the canonical one-cycle-at-a-time semantics.
* ``SequencerEngine`` / ``run_program`` - a block-wise engine that produces
  bit-identical streams and event logs at array-copy speed.
* ``flatten_oracle`` - naive expansion with no state machine and no
  prefetch machinery, used to verify the other two.

Event log records carry (cycle, channel, event, entry_index).  Transition
events are stamped with the first cycle at which the new state is in
effect; TRIGGER_SEEN is stamped at the edge cycle itself.  Exported logs
are canonically ordered by (cycle, transition-before-trigger-before-start).
"""

from __future__ import annotations

import io
import struct
from bisect import bisect_left
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import NonTerminating, NoProgram, SequencerFault
from .memory import (
    SAMPLES_PER_WORD,
    EntryFlags,
    SequenceMemory,
    TriggerSource,
    WaveformMemory,
)

#: Cycles from a trigger edge to the first waveform word.
TRIGGER_LATENCY_WORDS = 2

#: Cycles needed from the start of a pass until the next entry's resources
#: are ready.  A pass shorter than this leaves the prefetch unfinished.
PREFETCH_WORDS = 4


class SequencerStatus(IntEnum):
    IDLE = 0
    ARMED_WAITING_TRIGGER = 1
    RUNNING = 2
    DONE = 3


class EventKind(IntEnum):
    START = 0
    SEGMENT_SWITCH = 1
    REPEAT_WRAP = 2
    TRIGGER_SEEN = 3
    DONE = 4


# Same-cycle ordering in canonical logs: state transitions take effect at
# the cycle boundary, edges are sampled during the cycle, START marks the
# word actually emitted.
_KIND_PRECEDENCE = {
    EventKind.SEGMENT_SWITCH: 0,
    EventKind.REPEAT_WRAP: 0,
    EventKind.DONE: 0,
    EventKind.TRIGGER_SEEN: 1,
    EventKind.START: 2,
}


@dataclass(frozen=True)
class SequencerEvent:
    cycle: int
    channel: int
    kind: EventKind
    entry_index: int


_EVENT_STRUCT = struct.Struct("<QBBH")


class EventLog:
    """Transition log, exportable as CSV and as length-prefixed binary."""

    def __init__(self, records=None):
        self.records: list[SequencerEvent] = list(records) if records else []

    def append(self, cycle: int, channel: int, kind: EventKind, entry_index: int):
        self.records.append(SequencerEvent(cycle, channel, kind, entry_index))

    def canonicalize(self) -> "EventLog":
        self.records.sort(key=lambda r: (r.cycle, _KIND_PRECEDENCE[r.kind]))
        return self

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        return isinstance(other, EventLog) and self.records == other.records

    def of_kind(self, kind: EventKind) -> list[SequencerEvent]:
        return [r for r in self.records if r.kind == kind]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("cycle,channel,event,entry_index\n")
        for r in self.records:
            out.write(f"{r.cycle},{r.channel},{r.kind.name},{r.entry_index}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EventLog":
        log = cls()
        for line in text.strip().splitlines()[1:]:
            cyc, ch, name, idx = line.split(",")
            log.append(int(cyc), int(ch), EventKind[name], int(idx))
        return log

    def to_binary(self) -> bytes:
        out = io.BytesIO()
        prefix = struct.pack("<I", _EVENT_STRUCT.size)
        for r in self.records:
            out.write(prefix)
            out.write(_EVENT_STRUCT.pack(r.cycle, r.channel, int(r.kind), r.entry_index))
        return out.getvalue()

    @classmethod
    def from_binary(cls, data: bytes) -> "EventLog":
        log = cls()
        pos = 0
        while pos < len(data):
            (rec_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            cyc, ch, kind, idx = _EVENT_STRUCT.unpack_from(data, pos)
            pos += rec_len
            log.append(cyc, ch, EventKind(kind), idx)
        return log


@dataclass
class CycleInputs:
    """Edge inputs sampled by the state machine on one cycle."""

    external_trigger: bool = False
    software_trigger: bool = False
    timer_fire: bool = False

    def edges(self) -> list[TriggerSource]:
        out = []
        if self.external_trigger:
            out.append(TriggerSource.EXTERNAL)
        if self.software_trigger:
            out.append(TriggerSource.SOFTWARE)
        if self.timer_fire:
            out.append(TriggerSource.INTERNAL_TIMER)
        return out


@dataclass
class SampleWord:
    """One cycle of output: exactly 8 sample codes plus a validity flag.

    Invalid words carry the idle value (zero, or the held final sample when
    the last completed entry requested HOLD_LAST).
    """

    samples: np.ndarray
    valid: bool


@dataclass
class ChannelSequencerState:
    status: SequencerStatus = SequencerStatus.IDLE
    current_index: int = 0
    prefetched_index: int | None = None
    word_ptr: int = 0
    repeats_left: int | None = None  # None = repeat indefinitely
    cycle: int = 0


def _next_index(entry, current: int) -> int | None:
    """Index the sequencer moves to after an entry's repeats complete."""
    if entry.flags & EntryFlags.END_OF_SEQUENCE:
        return None
    if entry.flags & EntryFlags.JUMP:
        return entry.jump_target
    return current + 1


class ChannelSequencer:
    """Reference cycle-at-a-time execution of one channel."""

    def __init__(self, sdm: SequenceMemory, wdm: WaveformMemory, channel_id: int = 0,
                 start_cycle: int = 0):
        self.sdm = sdm
        self.wdm = wdm
        self.channel_id = channel_id
        self.state = ChannelSequencerState(cycle=start_cycle)
        self.log = EventLog()
        self.prefetch_shortfalls = 0
        self.executed_words = 0
        self._pending_start: int | None = None
        self._pass_start: int | None = None
        self._hold = False
        self._last_sample = 0
        self._started = False

    def arm(self) -> ChannelSequencerState:
        """Load entry 0 and wait for its trigger (or start on the next step)."""
        if self.sdm.occupancy == 0:
            raise NoProgram(f"channel {self.channel_id}: sequence memory is empty")
        self._enter_entry(0, log_switch=False)
        return self.state

    def _enter_entry(self, index: int, log_switch: bool = True):
        st = self.state
        if index >= self.sdm.occupancy:
            raise SequencerFault(
                f"channel {self.channel_id}: entry index {index} beyond occupancy "
                f"{self.sdm.occupancy} at cycle {st.cycle}"
            )
        entry = self.sdm.entries[index]
        st.current_index = index
        st.word_ptr = 0
        st.repeats_left = None if entry.counter == 0 else entry.counter
        st.prefetched_index = None
        self._pass_start = None
        self._pending_start = None
        if entry.flags & EntryFlags.WAIT_TRIGGER:
            st.status = SequencerStatus.ARMED_WAITING_TRIGGER
        else:
            st.status = SequencerStatus.RUNNING
        if log_switch:
            self.log.append(st.cycle, self.channel_id, EventKind.SEGMENT_SWITCH, index)

    def _idle_word(self) -> SampleWord:
        fill = self._last_sample if self._hold else 0
        return SampleWord(np.full(SAMPLES_PER_WORD, fill, dtype=np.int16), valid=False)

    def step(self, inputs: CycleInputs | None = None) -> SampleWord:
        """Advance one 250 MHz cycle and return the word driven to the DAC."""
        st = self.state
        inputs = inputs or CycleInputs()
        cyc = st.cycle
        edges = inputs.edges()
        for _src in edges:
            self.log.append(cyc, self.channel_id, EventKind.TRIGGER_SEEN, st.current_index)

        if st.status == SequencerStatus.ARMED_WAITING_TRIGGER:
            entry = self.sdm.entries[st.current_index]
            if (self._pending_start is None
                    and entry.trigger_source != TriggerSource.NONE
                    and entry.trigger_source in edges):
                self._pending_start = cyc + TRIGGER_LATENCY_WORDS
            if self._pending_start is not None and cyc >= self._pending_start:
                self._pending_start = None
                st.status = SequencerStatus.RUNNING

        if st.status != SequencerStatus.RUNNING:
            st.cycle += 1
            return self._idle_word()

        entry = self.sdm.entries[st.current_index]
        if st.word_ptr == 0 and self._pass_start != cyc:
            # New pass: the next entry's index resolves immediately, its
            # resources are ready PREFETCH_WORDS cycles from now.
            self._pass_start = cyc
            st.prefetched_index = _next_index(entry, st.current_index)
        if entry.length == 0:
            raise SequencerFault(
                f"channel {self.channel_id}: zero-length entry {st.current_index} "
                f"at cycle {cyc}"
            )
        word_addr = entry.start_addr + st.word_ptr
        if word_addr >= self.wdm.capacity_words:
            raise SequencerFault(
                f"channel {self.channel_id}: word address {word_addr} beyond "
                f"waveform memory at cycle {cyc}"
            )
        samples = self.wdm.word(word_addr).copy()
        if not self._started:
            self._started = True
            self.log.append(cyc, self.channel_id, EventKind.START, st.current_index)
        self._last_sample = int(samples[-1])
        self.executed_words += 1
        st.word_ptr += 1

        if st.word_ptr >= entry.length:
            # Pass boundary after this cycle.
            if cyc + 1 - self._pass_start < PREFETCH_WORDS:
                self.prefetch_shortfalls += 1
            if st.repeats_left is not None:
                st.repeats_left -= 1
            if st.repeats_left is None or st.repeats_left > 0:
                st.word_ptr = 0
                self._pass_start = None
                self.log.append(cyc + 1, self.channel_id, EventKind.REPEAT_WRAP,
                                st.current_index)
            else:
                has_end = bool(entry.flags & EntryFlags.END_OF_SEQUENCE)
                has_jump = bool(entry.flags & EntryFlags.JUMP)
                if has_end and has_jump:
                    raise SequencerFault(
                        f"channel {self.channel_id}: entry {st.current_index} sets "
                        f"both JUMP and END_OF_SEQUENCE"
                    )
                self._hold = bool(entry.flags & EntryFlags.HOLD_LAST)
                st.cycle += 1
                if has_end:
                    st.status = SequencerStatus.DONE
                    self.log.append(st.cycle, self.channel_id, EventKind.DONE,
                                    st.current_index)
                else:
                    nxt = entry.jump_target if has_jump else st.current_index + 1
                    self._enter_entry(nxt)
                return SampleWord(samples, valid=True)

        st.cycle += 1
        return SampleWord(samples, valid=True)


@dataclass
class RunResult:
    """Outcome of one program run.

    ``samples`` covers every emitted cycle (valid and idle words alike) when
    stream collection is on; ``valid_runs`` lists the contiguous stretches
    of valid output as (absolute start cycle, word count) pairs.
    """

    channel_id: int
    start_cycle: int
    cycles: int
    samples: np.ndarray | None
    valid_runs: list[tuple[int, int]]
    events: EventLog
    status: SequencerStatus
    truncated: bool
    prefetch_shortfalls: int
    executed_words: int

    @property
    def word_valid(self) -> np.ndarray:
        mask = np.zeros(self.cycles, dtype=bool)
        for start, n in self.valid_runs:
            rel = start - self.start_cycle
            mask[rel : rel + n] = True
        return mask

    @property
    def valid_samples(self) -> np.ndarray:
        if self.samples is None:
            raise ValueError("stream was not collected for this run")
        mask = np.repeat(self.word_valid, SAMPLES_PER_WORD)
        return self.samples[mask]


def _sorted_schedule(trigger_schedule) -> list[tuple[int, TriggerSource]]:
    sched = [(int(c), TriggerSource(s)) for c, s in trigger_schedule]
    sched.sort(key=lambda e: (e[0], int(e[1])))
    return sched


class SequencerEngine:
    """Block-wise execution with output identical to ChannelSequencer.

    The engine advances whole waveform passes and idle gaps at a time, so
    long programs run at array-copy speed.  It is resumable: trigger edges
    may be added between calls to :meth:`advance`, which is how a control
    host drives a board mid-program.
    """

    def __init__(self, sdm: SequenceMemory, wdm: WaveformMemory, channel_id: int = 0,
                 start_cycle: int = 0, collect_stream: bool = True, sinks=()):
        self.sdm = sdm
        self.wdm = wdm
        self.channel_id = channel_id
        self.start_cycle = start_cycle
        self.collect_stream = collect_stream
        self.sinks = list(sinks)
        self.state = ChannelSequencerState(cycle=start_cycle)
        self.log = EventLog()
        self.prefetch_shortfalls = 0
        self.executed_words = 0
        self._edges: list[tuple[int, TriggerSource]] = []
        self._edge_cycles: list[int] = []
        self._edge_pos = 0  # edges before this are already in the log
        self._wait_start: int | None = None
        self._hold = False
        self._last_sample = 0
        self._started = False
        self._chunks: list[np.ndarray] = []
        self._valid_runs: list[tuple[int, int]] = []

    # -- program control -----------------------------------------------------

    def arm(self):
        if self.sdm.occupancy == 0:
            raise NoProgram(f"channel {self.channel_id}: sequence memory is empty")
        self._enter_entry(0, log_switch=False)

    def add_edge(self, cycle: int, source: TriggerSource):
        """Schedule a trigger edge.  Must not predate already-executed time."""
        self.add_edges([(cycle, source)])

    def add_edges(self, edges):
        new = []
        for cycle, source in edges:
            if cycle < self.state.cycle:
                raise ValueError(f"edge at cycle {cycle} is in the executed past "
                                 f"(engine at {self.state.cycle})")
            new.append((int(cycle), TriggerSource(source)))
        if not new:
            return
        self._edges.extend(new)
        self._edges.sort(key=lambda e: (e[0], int(e[1])))
        self._edge_cycles = [c for c, _ in self._edges]

    def last_edge_cycle(self) -> int | None:
        return self._edge_cycles[-1] if self._edge_cycles else None

    # -- internals -----------------------------------------------------------

    def _enter_entry(self, index: int, log_switch: bool = True):
        st = self.state
        if index >= self.sdm.occupancy:
            raise SequencerFault(
                f"channel {self.channel_id}: entry index {index} beyond occupancy "
                f"{self.sdm.occupancy} at cycle {st.cycle}"
            )
        entry = self.sdm.entries[index]
        st.current_index = index
        st.word_ptr = 0
        st.repeats_left = None if entry.counter == 0 else entry.counter
        st.prefetched_index = None
        self._wait_start = None
        if entry.flags & EntryFlags.WAIT_TRIGGER:
            st.status = SequencerStatus.ARMED_WAITING_TRIGGER
            self._wait_start = st.cycle
        else:
            st.status = SequencerStatus.RUNNING
        if log_switch:
            self.log.append(st.cycle, self.channel_id, EventKind.SEGMENT_SWITCH, index)

    def _log_edges_upto(self, end_cycle: int):
        """Log TRIGGER_SEEN for scheduled edges in [log cursor, end_cycle)."""
        while (self._edge_pos < len(self._edges)
               and self._edges[self._edge_pos][0] < end_cycle):
            cyc, _src = self._edges[self._edge_pos]
            self.log.append(cyc, self.channel_id, EventKind.TRIGGER_SEEN,
                            self.state.current_index)
            self._edge_pos += 1

    def _next_matching_edge(self, source: TriggerSource, not_before: int):
        if source == TriggerSource.NONE:
            return None
        i = bisect_left(self._edge_cycles, not_before)
        for cyc, src in self._edges[i:]:
            if src == source:
                return cyc
        return None

    def _emit_idle(self, n_words: int):
        if n_words <= 0:
            return
        fill = self._last_sample if self._hold else 0
        start = self.state.cycle
        if self.collect_stream:
            self._chunks.append(np.full(n_words * SAMPLES_PER_WORD, fill, dtype=np.int16))
        for sink in self.sinks:
            sink.idle(start, n_words, fill)
        self.state.cycle += n_words

    def _emit_valid(self, samples: np.ndarray, n_words: int):
        if n_words <= 0:
            return
        start = self.state.cycle
        if self.collect_stream:
            self._chunks.append(samples)
        for sink in self.sinks:
            sink.valid(start, samples)
        if self._valid_runs and sum(self._valid_runs[-1]) == start:
            s, n = self._valid_runs[-1]
            self._valid_runs[-1] = (s, n + n_words)
        else:
            self._valid_runs.append((start, n_words))
        if not self._started:
            self._started = True
            self.log.append(start, self.channel_id, EventKind.START,
                            self.state.current_index)
        self.executed_words += n_words
        self._last_sample = int(samples[-1])
        self.state.cycle += n_words

    def _segment(self, entry) -> np.ndarray:
        lo = entry.start_addr * SAMPLES_PER_WORD
        return self.wdm.samples[lo : lo + entry.length * SAMPLES_PER_WORD]

    def _complete_pass_boundary(self, entry) -> str | None:
        """Handle the boundary after the last repeat of the current entry.

        Returns 'done' when the program ends, None when execution continues
        with the (already adopted) next entry.
        """
        st = self.state
        has_end = bool(entry.flags & EntryFlags.END_OF_SEQUENCE)
        has_jump = bool(entry.flags & EntryFlags.JUMP)
        if has_end and has_jump:
            raise SequencerFault(
                f"channel {self.channel_id}: entry {st.current_index} sets both "
                f"JUMP and END_OF_SEQUENCE"
            )
        self._hold = bool(entry.flags & EntryFlags.HOLD_LAST)
        if has_end:
            st.status = SequencerStatus.DONE
            self.log.append(st.cycle, self.channel_id, EventKind.DONE, st.current_index)
            return "done"
        nxt = entry.jump_target if has_jump else st.current_index + 1
        self._enter_entry(nxt)
        return None

    # -- execution -----------------------------------------------------------

    def advance(self, until_cycle: int | None = None,
                block_on_wait: bool = False) -> str:
        """Run forward.  Returns 'done', 'blocked', or 'cap'.

        'blocked' means the channel is waiting for a trigger edge that has
        not been scheduled yet; add one and call advance again.  With
        ``until_cycle`` set, execution never passes that cycle; an
        unsatisfiable wait then idles out the budget unless
        ``block_on_wait`` asks to pause instead.  A program that can repeat
        indefinitely requires a cap.
        """
        st = self.state
        while True:
            if st.status in (SequencerStatus.IDLE, SequencerStatus.DONE):
                self._log_edges_upto(st.cycle)
                return "done"
            if until_cycle is not None and st.cycle >= until_cycle:
                self._log_edges_upto(st.cycle)
                return "cap"

            entry = self.sdm.entries[st.current_index]

            if st.status == SequencerStatus.ARMED_WAITING_TRIGGER:
                edge = self._next_matching_edge(entry.trigger_source, self._wait_start)
                if edge is None:
                    if until_cycle is None or block_on_wait:
                        self._log_edges_upto(st.cycle)
                        return "blocked"
                    self._emit_idle(until_cycle - st.cycle)
                    self._log_edges_upto(st.cycle)
                    return "cap"
                run_at = edge + TRIGGER_LATENCY_WORDS
                if until_cycle is not None and run_at >= until_cycle:
                    # The first word lies at or past the cap: stay waiting.
                    # The accepted edge stays scheduled; resumption re-finds it.
                    self._emit_idle(until_cycle - st.cycle)
                    self._log_edges_upto(st.cycle)
                    return "cap"
                self._emit_idle(run_at - st.cycle)
                self._log_edges_upto(st.cycle)
                st.status = SequencerStatus.RUNNING
                self._wait_start = None
                continue

            # RUNNING.
            if entry.length == 0:
                raise SequencerFault(
                    f"channel {self.channel_id}: zero-length entry "
                    f"{st.current_index} at cycle {st.cycle}"
                )
            st.prefetched_index = _next_index(entry, st.current_index)
            L = entry.length
            if entry.start_addr + L > self.wdm.capacity_words:
                in_range = max(0, self.wdm.capacity_words - entry.start_addr - st.word_ptr)
                if in_range > 0:
                    lo = (entry.start_addr + st.word_ptr) * SAMPLES_PER_WORD
                    part = self.wdm.samples[lo : lo + in_range * SAMPLES_PER_WORD].copy()
                    self._log_edges_upto(st.cycle + in_range)
                    self._emit_valid(part, in_range)
                raise SequencerFault(
                    f"channel {self.channel_id}: word address "
                    f"{entry.start_addr + st.word_ptr + in_range} beyond waveform "
                    f"memory at cycle {st.cycle}"
                )
            seg = self._segment(entry)

            if st.word_ptr > 0:
                # Resume a pass that a previous cap cut mid-way.
                remaining = L - st.word_ptr
                pass_elapsed = st.word_ptr
                if until_cycle is not None and st.cycle + remaining > until_cycle:
                    take = until_cycle - st.cycle
                    self._log_edges_upto(st.cycle + take)
                    self._emit_valid(
                        seg[st.word_ptr * SAMPLES_PER_WORD :
                            (st.word_ptr + take) * SAMPLES_PER_WORD].copy(), take)
                    st.word_ptr += take
                    return "cap"
                self._log_edges_upto(st.cycle + remaining)
                self._emit_valid(
                    seg[st.word_ptr * SAMPLES_PER_WORD :].copy(), remaining)
                if L < PREFETCH_WORDS:
                    self.prefetch_shortfalls += 1
                if st.repeats_left is not None:
                    st.repeats_left -= 1
                st.word_ptr = 0
                if st.repeats_left is None or st.repeats_left > 0:
                    self.log.append(st.cycle, self.channel_id, EventKind.REPEAT_WRAP,
                                    st.current_index)
                    continue
                if self._complete_pass_boundary(entry) == "done":
                    return "done"
                continue

            want = st.repeats_left  # None = unbounded
            if until_cycle is None:
                if want is None:
                    raise NonTerminating(
                        f"channel {self.channel_id}: entry {st.current_index} "
                        f"repeats indefinitely and no cycle cap was given"
                    )
                fit_full = None
            else:
                budget = until_cycle - st.cycle
                fit_full = budget // L

            if fit_full is not None and (want is None or want > fit_full):
                # Capped inside this entry.
                partial = (until_cycle - st.cycle) - fit_full * L
                pass_start = st.cycle
                self._log_edges_upto(until_cycle)
                if fit_full > 0 or partial > 0:
                    take = (np.tile(seg, fit_full) if fit_full > 1
                            else (seg.copy() if fit_full == 1
                                  else np.empty(0, dtype=np.int16)))
                    if partial:
                        take = np.concatenate([take, seg[: partial * SAMPLES_PER_WORD]])
                    self._emit_valid(take, fit_full * L + partial)
                # Every completed pass here is followed by another, so each
                # boundary is a wrap (including one landing exactly on the cap).
                for k in range(1, fit_full + 1):
                    self.log.append(pass_start + k * L, self.channel_id,
                                    EventKind.REPEAT_WRAP, st.current_index)
                if L < PREFETCH_WORDS:
                    self.prefetch_shortfalls += fit_full
                if st.repeats_left is not None:
                    st.repeats_left -= fit_full
                st.word_ptr = partial
                return "cap"

            # All remaining passes complete before any cap.
            n_passes = want
            pass_start = st.cycle
            total_words = n_passes * L
            self._log_edges_upto(st.cycle + total_words)
            out = np.tile(seg, n_passes) if n_passes > 1 else seg.copy()
            self._emit_valid(out, total_words)
            for k in range(1, n_passes):
                self.log.append(pass_start + k * L, self.channel_id,
                                EventKind.REPEAT_WRAP, st.current_index)
            if L < PREFETCH_WORDS:
                self.prefetch_shortfalls += n_passes
            st.repeats_left = 0
            st.word_ptr = 0
            if self._complete_pass_boundary(entry) == "done":
                return "done"

    def result(self, truncated: bool | None = None) -> RunResult:
        samples = None
        if self.collect_stream:
            samples = (np.concatenate(self._chunks) if self._chunks
                       else np.empty(0, dtype=np.int16))
        if truncated is None:
            truncated = self.state.status != SequencerStatus.DONE
        return RunResult(
            channel_id=self.channel_id,
            start_cycle=self.start_cycle,
            cycles=self.state.cycle - self.start_cycle,
            samples=samples,
            valid_runs=list(self._valid_runs),
            events=self.log.canonicalize(),
            status=self.state.status,
            truncated=truncated,
            prefetch_shortfalls=self.prefetch_shortfalls,
            executed_words=self.executed_words,
        )


def run_program(sdm: SequenceMemory, wdm: WaveformMemory, trigger_schedule=(),
                max_cycles: int = 1_000_000, *, channel_id: int = 0,
                start_cycle: int = 0, collect_stream: bool = True) -> RunResult:
    """Execute a program to completion or to the cycle cap.

    Deterministic: identical program and trigger schedule give bit-identical
    streams and event logs.  Hitting ``max_cycles`` before DONE is reported
    through ``RunResult.truncated``, not an exception.
    """
    engine = SequencerEngine(sdm, wdm, channel_id=channel_id, start_cycle=start_cycle,
                             collect_stream=collect_stream)
    engine.arm()
    engine.add_edges(trigger_schedule)
    engine.advance(until_cycle=start_cycle + max_cycles)
    return engine.result()


def run_program_stepped(sdm: SequenceMemory, wdm: WaveformMemory, trigger_schedule=(),
                        max_cycles: int = 1_000_000, *, channel_id: int = 0,
                        start_cycle: int = 0) -> RunResult:
    """Cycle-at-a-time driver around ChannelSequencer.

    Produces the same RunResult shape as run_program; used to pin the fast
    engine to the canonical per-cycle semantics.
    """
    seq = ChannelSequencer(sdm, wdm, channel_id=channel_id, start_cycle=start_cycle)
    seq.arm()
    by_cycle: dict[int, list[TriggerSource]] = {}
    for cyc, src in _sorted_schedule(trigger_schedule):
        by_cycle.setdefault(cyc, []).append(src)
    chunks = []
    valid_runs: list[tuple[int, int]] = []
    for _ in range(max_cycles):
        cyc = seq.state.cycle
        srcs = by_cycle.get(cyc, ())
        word = seq.step(CycleInputs(
            external_trigger=TriggerSource.EXTERNAL in srcs,
            software_trigger=TriggerSource.SOFTWARE in srcs,
            timer_fire=TriggerSource.INTERNAL_TIMER in srcs,
        ))
        chunks.append(word.samples)
        if word.valid:
            if valid_runs and sum(valid_runs[-1]) == cyc:
                s, n = valid_runs[-1]
                valid_runs[-1] = (s, n + 1)
            else:
                valid_runs.append((cyc, 1))
        if seq.state.status == SequencerStatus.DONE:
            break
    samples = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int16)
    return RunResult(
        channel_id=channel_id,
        start_cycle=start_cycle,
        cycles=seq.state.cycle - start_cycle,
        samples=samples,
        valid_runs=valid_runs,
        events=seq.log.canonicalize(),
        status=seq.state.status,
        truncated=seq.state.status != SequencerStatus.DONE,
        prefetch_shortfalls=seq.prefetch_shortfalls,
        executed_words=seq.executed_words,
    )


@dataclass
class OracleResult:
    samples: np.ndarray
    word_valid: np.ndarray
    truncated: bool


def flatten_oracle(sdm: SequenceMemory, wdm: WaveformMemory, trigger_schedule=(),
                   max_cycles: int | None = None) -> OracleResult:
    """Expected output by naive expansion: concatenate regions, repeat
    counters, insert wait gaps.  No state machine, no prefetch.

    Raises NonTerminating for a program with no finite length (an infinite
    repeat, a jump loop, or an unsatisfiable wait) unless a cycle cap is
    given, in which case the expansion is cut at the cap.
    """
    entries = sdm.entries
    if not entries:
        raise NoProgram("empty program")
    sched = _sorted_schedule(trigger_schedule)

    chunks: list[np.ndarray] = []
    vruns: list[tuple[int, bool]] = []  # (n_words, valid)
    hold_fill = 0
    cycle = 0
    index = 0
    visited: set[int] = set()

    def room() -> int | None:
        return None if max_cycles is None else max_cycles - cycle

    def emit(arr: np.ndarray | None, n_words: int, valid: bool):
        nonlocal cycle
        r = room()
        if r is not None:
            n_words = min(n_words, r)
        if n_words <= 0:
            return
        if valid:
            chunks.append(arr[: n_words * SAMPLES_PER_WORD].copy())
        else:
            chunks.append(np.full(n_words * SAMPLES_PER_WORD, hold_fill, dtype=np.int16))
        vruns.append((n_words, valid))
        cycle += n_words

    def finish(truncated: bool) -> OracleResult:
        samples = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int16)
        valid = np.concatenate(
            [np.full(n, v, dtype=bool) for n, v in vruns]
        ) if vruns else np.empty(0, dtype=bool)
        return OracleResult(samples, valid, truncated)

    while True:
        if room() == 0:
            return finish(True)
        # Deterministic control flow: revisiting an entry without having
        # consumed a trigger edge in between replays forever.
        if index in visited and max_cycles is None:
            raise NonTerminating(f"jump loop revisits entry {index}")
        visited.add(index)
        entry = entries[index]
        if entry.length == 0:
            raise SequencerFault(f"zero-length entry {index}")

        if entry.flags & EntryFlags.WAIT_TRIGGER:
            edge = None
            if entry.trigger_source != TriggerSource.NONE:
                for ecyc, esrc in sched:
                    if ecyc >= cycle and esrc == entry.trigger_source:
                        edge = ecyc
                        break
            if edge is None:
                if max_cycles is None:
                    raise NonTerminating(
                        f"entry {index} waits for a trigger that never arrives")
                emit(None, max_cycles - cycle, False)
                return finish(True)
            emit(None, edge + TRIGGER_LATENCY_WORDS - cycle, False)
            visited = {index}
            if room() == 0:
                return finish(True)

        reps = entry.counter
        lo = entry.start_addr * SAMPLES_PER_WORD
        seg = wdm.samples[lo : lo + entry.length * SAMPLES_PER_WORD]
        if reps == 0:
            if max_cycles is None:
                raise NonTerminating(f"entry {index} repeats indefinitely")
            while room() > 0:
                emit(seg, entry.length, True)
            return finish(True)
        for _ in range(reps):
            emit(seg, entry.length, True)
            if room() == 0:
                return finish(True)

        if entry.flags & EntryFlags.HOLD_LAST:
            hold_fill = int(seg[-1])
        else:
            hold_fill = 0
        if entry.flags & EntryFlags.END_OF_SEQUENCE:
            return finish(False)
        if entry.flags & EntryFlags.JUMP:
            index = entry.jump_target
        else:
            index += 1
