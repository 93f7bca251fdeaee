"""One simulated AWG board: four channels of memory, sequencer, analog
capture, a register file, and a board-level cycle clock.

Time model: the board clock advances by one cycle per handled command, and
by however many cycles a channel's program executes when a command (arm or
a trigger) sets it running.  A run proceeds until the program completes,
blocks waiting for a trigger, or exhausts the per-burst run budget
register.  Writes to a channel's memories are refused while that channel
has a program in flight.

The analog capture path models the bench instruments: every run records
the decimated, timestamped DAC output (the "scope"/"multimeter" view) and
the sequencer's event log, exported to the trace directory when the run
finalizes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import BusyRunning, OutOfRange, ValidationFailed
from .fabric import channel_rng
from .frontend import (
    SAMPLE_PERIOD_S,
    WORD_PERIOD_S,
    DacTransfer,
    TimingModel,
    dac_convert,
    trace_to_binary,
    trace_to_csv,
)
from .memory import (
    NUM_CHANNELS,
    SAMPLES_PER_WORD,
    SequenceMemory,
    TriggerSource,
    ValidationReport,
    WaveformMemory,
    validate_program,
)
from .protocol import FIRMWARE_VERSION, ChannelStatus, StatusPacket
from .sequencer import (
    EventKind,
    RunResult,
    SequencerEngine,
    SequencerStatus,
)


class Reg(IntEnum):
    """Operating-parameter registers (the hardware's SPI/GPIO stand-in)."""

    D_PIPE = 0x00            # deterministic pipeline latency, word cycles
    STATUS_PERIOD = 0x01     # status snapshot period, cycles
    RUN_BUDGET = 0x02        # max cycles one command may execute
    CAPTURE_DECIM = 0x03     # keep every Nth valid output sample
    CAPTURE_OFFSET = 0x04    # first kept valid-sample index
    CAPTURE_MAX = 0x05       # retention cap, samples
    TRIG_DEFAULT = 0x06      # source substituted for WAIT entries with NONE
    RUN_CONTROL = 0x07       # bit0: capture enable
    TIMER_PERIOD = 0x08      # internal timer period, cycles (min 16)


_REG_DEFAULTS = {
    Reg.D_PIPE: 2,
    Reg.STATUS_PERIOD: 250_000_000,  # one second of simulated time
    Reg.RUN_BUDGET: 1 << 20,
    Reg.CAPTURE_DECIM: 1,
    Reg.CAPTURE_OFFSET: 0,
    Reg.CAPTURE_MAX: 1 << 22,
    Reg.TRIG_DEFAULT: int(TriggerSource.EXTERNAL),
    Reg.RUN_CONTROL: 1,
    Reg.TIMER_PERIOD: 4096,
}


class RegisterMap:
    """Addressed 32-bit registers; reserved addresses read as zero and
    ignore writes."""

    def __init__(self):
        self._values = {int(k): v for k, v in _REG_DEFAULTS.items()}

    def read(self, addr: int) -> int:
        return self._values.get(int(addr), 0)

    def write(self, addr: int, value: int):
        addr = int(addr)
        if addr in self._values:
            self._values[addr] = value & 0xFFFFFFFF


class CaptureSink:
    """Engine sink retaining every Nth valid output sample.

    Positions are indices into the run's valid-sample stream, so a
    decimation of one burst length keeps exactly one point per burst.
    """

    def __init__(self, decim: int, offset: int, max_samples: int):
        self.decim = max(1, int(decim))
        self.offset = max(0, int(offset))
        self.max_samples = int(max_samples)
        self.valid_count = 0
        self._positions: list[np.ndarray] = []
        self._codes: list[np.ndarray] = []
        self.kept = 0

    def valid(self, start_cycle: int, samples: np.ndarray):
        base = self.valid_count
        n = samples.size
        self.valid_count += n
        if self.kept >= self.max_samples:
            return
        first = max(base, self.offset)
        k0 = -(-(first - self.offset) // self.decim)  # ceil division
        p0 = self.offset + k0 * self.decim
        if p0 >= base + n:
            return
        pos = np.arange(p0, base + n, self.decim, dtype=np.int64)
        if self.kept + pos.size > self.max_samples:
            pos = pos[: self.max_samples - self.kept]
        self._positions.append(pos)
        self._codes.append(samples[pos - base])
        self.kept += pos.size

    def idle(self, start_cycle: int, n_words: int, fill: int):
        pass  # the capture instrument records the driven waveform only

    def collect(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._positions:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int16)
        return np.concatenate(self._positions), np.concatenate(self._codes)


@dataclass
class RunRecord:
    """Finalized outcome of one armed program on one channel."""

    run_id: int
    channel: int
    arm_cycle: int
    result: RunResult
    capture_positions: np.ndarray
    capture_codes: np.ndarray
    trace_times: np.ndarray
    trace_volts: np.ndarray
    #: Analog start time of each valid burst (jitter applied per event).
    burst_times: np.ndarray


class _Session:
    """A channel's in-flight program execution."""

    def __init__(self, run_id: int, engine: SequencerEngine, sink: CaptureSink,
                 uses_timer: bool):
        self.run_id = run_id
        self.engine = engine
        self.sink = sink
        self.uses_timer = uses_timer
        self.timer_injected_until = engine.state.cycle


class BoardSim:
    """Deterministic simulation of one four-channel board."""

    def __init__(self, board_id: int = 0, transfers=None, timings=None,
                 rng_seed: int = 0, trace_dir: str | None = None,
                 export_csv: bool = False):
        self.board_id = board_id
        self.registers = RegisterMap()
        self.rng_seed = rng_seed
        self.trace_dir = trace_dir
        self.export_csv = export_csv
        self.cycle = 0
        self.wdms = [WaveformMemory(c) for c in range(NUM_CHANNELS)]
        self.sdms = [SequenceMemory(c) for c in range(NUM_CHANNELS)]
        self.transfers = list(transfers) if transfers else \
            [DacTransfer() for _ in range(NUM_CHANNELS)]
        self.timings = list(timings) if timings else \
            [TimingModel() for _ in range(NUM_CHANNELS)]
        self._rngs = [channel_rng(rng_seed, board_id, c) for c in range(NUM_CHANNELS)]
        self._sessions: list[_Session | None] = [None] * NUM_CHANNELS
        self._records: list[dict[int, RunRecord]] = [dict() for _ in range(NUM_CHANNELS)]
        self._last_status = [SequencerStatus.IDLE] * NUM_CHANNELS
        self._last_index = [0] * NUM_CHANNELS
        self._words_before = [0] * NUM_CHANNELS  # lifetime words before session
        self._run_counter = 0
        self._snapshots: list[StatusPacket] = []
        self._next_snapshot = self.registers.read(Reg.STATUS_PERIOD)
        self.last_command_cycle = 0

    # -- time and status -------------------------------------------------------

    def _channel_state_at(self, ch: int, cycle: int) -> ChannelStatus:
        sess = self._sessions[ch]
        if sess is None or cycle < sess.engine.start_cycle:
            return ChannelStatus(self._last_status[ch], self._last_index[ch],
                                 self._words_before[ch])
        eng = sess.engine
        words = self._words_before[ch]
        running = False
        for start, n in eng._valid_runs:
            if cycle < start:
                break
            take = min(n, cycle - start)
            words += take
            if start <= cycle < start + n:
                running = True
        index = 0
        best = -1
        for rec in eng.log.records:
            if rec.cycle <= cycle and rec.kind in (EventKind.START,
                                                   EventKind.SEGMENT_SWITCH):
                if rec.cycle >= best:
                    best = rec.cycle
                    index = rec.entry_index
        if cycle >= eng.state.cycle:
            status = eng.state.status
            index = eng.state.current_index
        elif running:
            status = SequencerStatus.RUNNING
        else:
            status = SequencerStatus.ARMED_WAITING_TRIGGER
        return ChannelStatus(status, index, words)

    def _snapshot_at(self, cycle: int) -> StatusPacket:
        return StatusPacket(
            board_id=self.board_id,
            uptime_cycles=cycle,
            channels=[self._channel_state_at(c, cycle) for c in range(NUM_CHANNELS)],
            firmware_version=FIRMWARE_VERSION,
        )

    def _advance_clock(self, new_cycle: int):
        """Move board time forward, emitting period snapshots on the way."""
        if new_cycle <= self.cycle:
            return
        period = max(1, self.registers.read(Reg.STATUS_PERIOD))
        while self._next_snapshot <= new_cycle:
            self._snapshots.append(self._snapshot_at(self._next_snapshot))
            self._next_snapshot += period
        self.cycle = new_cycle

    def _tick(self) -> int:
        self._advance_clock(self.cycle + 1)
        self.last_command_cycle = self.cycle
        return self.cycle

    def drain_status_packets(self) -> list[StatusPacket]:
        out, self._snapshots = self._snapshots, []
        return out

    def status_packet(self) -> StatusPacket:
        return self._snapshot_at(self.cycle)

    def status_query(self) -> StatusPacket:
        self._tick()
        return self._snapshot_at(self.cycle)

    # -- register access -------------------------------------------------------

    def reg_read(self, addr: int) -> int:
        self._tick()
        return self.registers.read(addr)

    def reg_write(self, addr: int, value: int):
        self._tick()
        self.registers.write(addr, value)
        if addr == Reg.STATUS_PERIOD:
            period = max(1, self.registers.read(Reg.STATUS_PERIOD))
            base = (self.cycle // period + 1) * period
            self._next_snapshot = base

    # -- memory access ---------------------------------------------------------

    def _check_channel(self, ch: int):
        if not 0 <= ch < NUM_CHANNELS:
            raise OutOfRange(f"channel {ch} outside 0..{NUM_CHANNELS - 1}")

    def _check_writable(self, ch: int):
        sess = self._sessions[ch]
        if sess is not None and sess.engine.state.status in (
                SequencerStatus.RUNNING, SequencerStatus.ARMED_WAITING_TRIGGER):
            raise BusyRunning(f"channel {ch} has a program in flight")

    def write_waveform(self, ch: int, word_offset: int, samples) -> ValidationReport:
        self._tick()
        self._check_channel(ch)
        self._check_writable(ch)
        self.wdms[ch].load(word_offset, samples)
        return validate_program(self.sdms[ch], self.wdms[ch])

    def read_waveform(self, ch: int, word_offset: int, word_count: int) -> np.ndarray:
        self._tick()
        self._check_channel(ch)
        return self.wdms[ch].read(word_offset, word_count)

    def write_sequence(self, ch: int, start_index: int, entries) -> ValidationReport:
        """Write sequence entries, then re-validate the whole program.

        A write at index 0 defines a new program (occupancy becomes the
        write length); a write at a nonzero index edits in place.
        """
        self._tick()
        self._check_channel(ch)
        self._check_writable(ch)
        if start_index == 0:
            replacement = SequenceMemory(ch, list(entries))
            self.sdms[ch].entries = replacement.entries
        else:
            self.sdms[ch].write(start_index, entries)
        return validate_program(self.sdms[ch], self.wdms[ch])

    def read_sequence(self, ch: int, start_index: int, count: int):
        self._tick()
        self._check_channel(ch)
        return self.sdms[ch].read(start_index, count)

    # -- run control -------------------------------------------------------------

    def _effective_program(self, ch: int) -> SequenceMemory:
        """Resolve WAIT entries with source NONE to the default register."""
        from .memory import EntryFlags, SequenceEntry

        default = TriggerSource(self.registers.read(Reg.TRIG_DEFAULT) & 0x3)
        entries = []
        for e in self.sdms[ch].entries:
            if (e.flags & EntryFlags.WAIT_TRIGGER
                    and e.trigger_source == TriggerSource.NONE
                    and default != TriggerSource.NONE):
                e = SequenceEntry(flags=e.flags, start_addr=e.start_addr,
                                  length=e.length, trigger_source=default,
                                  counter=e.counter, jump_target=e.jump_target)
            entries.append(e)
        return SequenceMemory(ch, entries)

    def arm(self, ch: int) -> int:
        """Validate and arm a channel.  A program whose first entry does not
        wait starts (and possibly completes) within this command."""
        stamp = self._tick()
        self._check_channel(ch)
        self._check_writable(ch)
        report = validate_program(self.sdms[ch], self.wdms[ch])
        if not report.ok:
            raise ValidationFailed(report)
        self._run_counter += 1
        run_id = self._run_counter
        sink = CaptureSink(self.registers.read(Reg.CAPTURE_DECIM),
                           self.registers.read(Reg.CAPTURE_OFFSET),
                           self.registers.read(Reg.CAPTURE_MAX)
                           if self.registers.read(Reg.RUN_CONTROL) & 1 else 0)
        program = self._effective_program(ch)
        engine = SequencerEngine(program, self.wdms[ch], channel_id=ch,
                                 start_cycle=stamp, collect_stream=False,
                                 sinks=[sink])
        engine.arm()
        uses_timer = any(e.trigger_source == TriggerSource.INTERNAL_TIMER
                         for e in program.entries)
        self._sessions[ch] = _Session(run_id, engine, sink, uses_timer)
        self._run_session(ch)
        return run_id

    def stop(self, ch: int):
        self._check_channel(ch)
        self._tick()
        sess = self._sessions[ch]
        if sess is not None:
            self._finalize(ch)
        self._last_status[ch] = SequencerStatus.IDLE

    def soft_trigger(self, ch: int) -> int:
        """Inject a software trigger edge at the command's cycle stamp."""
        self._check_channel(ch)
        stamp = self._tick()
        sess = self._sessions[ch]
        if sess is not None:
            sess.engine.add_edge(max(stamp, sess.engine.state.cycle),
                                 TriggerSource.SOFTWARE)
            self._run_session(ch)
        return stamp

    def external_trigger(self, cycles, channels=None):
        """Physical trigger input: edges at absolute cycles, fanned to the
        given channels (default all).  Used by the synchronization fabric,
        not reachable over the command protocol."""
        if isinstance(cycles, int):
            cycles = [cycles]
        for ch in channels if channels is not None else range(NUM_CHANNELS):
            sess = self._sessions[ch]
            if sess is None:
                continue
            # Edges that predate the channel's executed time were physically
            # missed; a real trigger input has no memory of the past.
            floor = sess.engine.state.cycle
            sess.engine.add_edges(
                [(int(c), TriggerSource.EXTERNAL) for c in cycles
                 if int(c) >= floor])
            self._run_session(ch)

    def _inject_timer_edges(self, sess: _Session, until: int):
        period = max(16, self.registers.read(Reg.TIMER_PERIOD))
        start = max(sess.engine.state.cycle, sess.timer_injected_until)
        first = -(-start // period) * period  # next multiple of period
        for c in range(first, until + 1, period):
            sess.engine.add_edge(c, TriggerSource.INTERNAL_TIMER)
        sess.timer_injected_until = until + 1

    def _run_session(self, ch: int):
        sess = self._sessions[ch]
        engine = sess.engine
        budget = max(1, self.registers.read(Reg.RUN_BUDGET))
        # The budget bounds execution beyond the known trigger schedule;
        # idle gaps between scheduled edges don't starve a run.
        horizon = engine.state.cycle
        last_edge = engine.last_edge_cycle()
        if last_edge is not None:
            horizon = max(horizon, last_edge)
        until = horizon + budget
        if sess.uses_timer:
            self._inject_timer_edges(sess, until)
        # A wait with no pending edge pauses the channel until the next
        # trigger command arrives; only real execution consumes budget.
        outcome = engine.advance(until_cycle=until, block_on_wait=True)
        self._advance_clock(engine.state.cycle)
        if outcome in ("done", "cap"):
            # cap = run budget exhausted; report through the record, free the
            # channel.
            self._finalize(ch)

    def _finalize(self, ch: int):
        sess = self._sessions[ch]
        if sess is None:
            return
        engine = sess.engine
        result = engine.result()
        positions, codes = sess.sink.collect()
        d_pipe = self.registers.read(Reg.D_PIPE)
        timing = self.timings[ch]
        starts = np.array([s for s, _ in result.valid_runs], dtype=np.float64)
        jitter = self._rngs[ch].normal(0.0, timing.jitter_sigma, size=starts.size)
        burst_times = (starts * WORD_PERIOD_S + d_pipe * WORD_PERIOD_S
                       + timing.channel_skew + jitter)
        # Map each kept valid-sample position to its burst and in-burst index.
        bounds = np.cumsum([0] + [n * SAMPLES_PER_WORD for _, n in result.valid_runs])
        if positions.size:
            burst_of = np.searchsorted(bounds, positions, side="right") - 1
            in_burst = positions - bounds[burst_of]
            times = burst_times[burst_of] + in_burst * SAMPLE_PERIOD_S
            volts = dac_convert(codes, self.transfers[ch])
        else:
            times = np.empty(0, dtype=np.float64)
            volts = np.empty(0, dtype=np.float64)
        record = RunRecord(
            run_id=sess.run_id, channel=ch, arm_cycle=engine.start_cycle,
            result=result, capture_positions=positions, capture_codes=codes,
            trace_times=times, trace_volts=volts, burst_times=burst_times,
        )
        self._records[ch][sess.run_id] = record
        self._words_before[ch] += result.executed_words
        self._last_status[ch] = result.status
        self._last_index[ch] = engine.state.current_index
        self._sessions[ch] = None
        self._export(record)

    def _export(self, record: RunRecord):
        if not self.trace_dir:
            return
        os.makedirs(self.trace_dir, exist_ok=True)
        prefix = os.path.join(
            self.trace_dir,
            f"board{self.board_id:02d}_ch{record.channel}_run{record.run_id:05d}")
        with open(prefix + "_trace.bin", "wb") as f:
            f.write(trace_to_binary(record.trace_times, record.trace_volts))
        with open(prefix + "_events.bin", "wb") as f:
            f.write(record.result.events.to_binary())
        with open(prefix + "_events.csv", "w") as f:
            f.write(record.result.events.to_csv())
        if self.export_csv:
            with open(prefix + "_trace.csv", "w") as f:
                f.write(trace_to_csv(record.trace_times, record.trace_volts))

    # -- capture access (the bench instruments' view) ---------------------------

    def fetch_record(self, ch: int, run_id: int) -> RunRecord:
        self._check_channel(ch)
        if run_id not in self._records[ch]:
            raise OutOfRange(f"channel {ch} has no finalized run {run_id}")
        return self._records[ch][run_id]

    def fetch_capture(self, ch: int, run_id: int) -> tuple[np.ndarray, np.ndarray]:
        rec = self.fetch_record(ch, run_id)
        return rec.trace_times, rec.trace_volts

    def fetch_events(self, ch: int, run_id: int):
        return self.fetch_record(ch, run_id).result.events
