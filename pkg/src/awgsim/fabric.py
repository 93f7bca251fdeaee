"""Shared clock and trigger fan-out across a multi-board array.

All boards run from one 250 MHz word clock.  A global trigger event reaches
every channel after its board's fan-out delay plus the channel's static
skew; the state machine consumes the arrival quantized up to the next cycle
boundary, while the sub-cycle part of an arrival lives on in the analog
timestamp path.

Topology config format (text, key=value, '#' comments):

    rng_seed=12345
    board.<id>.fanout_delay_ps=<float>
    board.<id>.channel.<ch>.skew_ps=<float>
    board.<id>.channel.<ch>.jitter_sigma_ps=<float>

Boards and channels are created on first mention; each board has exactly 4
channels and unspecified values default to zero.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .frontend import WORD_PERIOD_S, TimingModel
from .memory import NUM_CHANNELS, WORD_CLOCK_HZ, TriggerSource
from .sequencer import RunResult, run_program


@dataclass
class BoardDescriptor:
    board_id: int
    channels: list[TimingModel] = field(
        default_factory=lambda: [TimingModel() for _ in range(NUM_CHANNELS)])
    fanout_delay: float = 0.0  # seconds


@dataclass
class BoardTopology:
    boards: list[BoardDescriptor] = field(default_factory=list)
    clock_hz: float = WORD_CLOCK_HZ
    rng_seed: int = 0

    def channel_keys(self) -> list[tuple[int, int]]:
        return [(b.board_id, c) for b in self.boards for c in range(NUM_CHANNELS)]

    def timing(self, board_id: int, channel: int) -> TimingModel:
        for b in self.boards:
            if b.board_id == board_id:
                return b.channels[channel]
        raise ConfigError(f"no board {board_id} in topology")

    def board(self, board_id: int) -> BoardDescriptor:
        for b in self.boards:
            if b.board_id == board_id:
                return b
        raise ConfigError(f"no board {board_id} in topology")


def quantize_to_cycle(t_seconds: float) -> int:
    """First word-clock cycle at or after a physical instant.

    Never earlier than the event; an arrival exactly on a boundary is not
    pushed later.  Cycle arithmetic is guarded against float fuzz at the
    sub-femtosecond level.
    """
    cycles = t_seconds / WORD_PERIOD_S
    return int(math.ceil(round(cycles, 9)))


@dataclass(frozen=True)
class TriggerArrival:
    board_id: int
    channel: int
    raw_time: float
    cycle: int

    @property
    def quantized_time(self) -> float:
        return self.cycle * WORD_PERIOD_S

    @property
    def quantization_slip(self) -> float:
        return self.quantized_time - self.raw_time


def distribute_trigger(event_time: float, topo: BoardTopology) -> list[TriggerArrival]:
    """Map one trigger event to per-channel arrivals.

    arrival = event + board fan-out delay + channel skew, then quantized up
    to the word clock for the state machine.
    """
    if event_time < 0:
        raise ConfigError("trigger event time must be >= 0")
    out = []
    for board in topo.boards:
        for ch in range(NUM_CHANNELS):
            raw = event_time + board.fanout_delay + board.channels[ch].channel_skew
            out.append(TriggerArrival(board.board_id, ch, raw, quantize_to_cycle(raw)))
    return out


# -- topology config ----------------------------------------------------------

def parse_topology(text: str) -> BoardTopology:
    boards: dict[int, BoardDescriptor] = {}
    seed = 0

    def board(bid: int) -> BoardDescriptor:
        if bid not in boards:
            boards[bid] = BoardDescriptor(board_id=bid)
        return boards[bid]

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"topology line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "rng_seed":
                seed = int(value)
                continue
            parts = key.split(".")
            if len(parts) == 3 and parts[0] == "board" and parts[2] == "fanout_delay_ps":
                board(int(parts[1])).fanout_delay = float(value) * 1e-12
                continue
            if len(parts) == 5 and parts[0] == "board" and parts[2] == "channel":
                bid, ch, leaf = int(parts[1]), int(parts[3]), parts[4]
                if not 0 <= ch < NUM_CHANNELS:
                    raise ConfigError(f"topology line {lineno}: channel {ch} out of range")
                tm = board(bid).channels[ch]
                if leaf == "skew_ps":
                    tm.channel_skew = float(value) * 1e-12
                    continue
                if leaf == "jitter_sigma_ps":
                    tm.jitter_sigma = float(value) * 1e-12
                    continue
            raise ConfigError(f"topology line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"topology line {lineno}: {exc}") from None

    topo = BoardTopology(boards=[boards[b] for b in sorted(boards)], rng_seed=seed)
    for b in topo.boards:
        for ch in range(NUM_CHANNELS):
            b.channels[ch].rng_seed = seed
    return topo


def format_topology(topo: BoardTopology) -> str:
    lines = [f"rng_seed={topo.rng_seed}"]
    for b in sorted(topo.boards, key=lambda d: d.board_id):
        lines.append(f"board.{b.board_id}.fanout_delay_ps={b.fanout_delay * 1e12:.6g}")
        for ch in range(NUM_CHANNELS):
            tm = b.channels[ch]
            lines.append(f"board.{b.board_id}.channel.{ch}.skew_ps="
                         f"{tm.channel_skew * 1e12:.6g}")
            lines.append(f"board.{b.board_id}.channel.{ch}.jitter_sigma_ps="
                         f"{tm.jitter_sigma * 1e12:.6g}")
    return "\n".join(lines) + "\n"


# -- array execution ----------------------------------------------------------

@dataclass
class ArrayChannelRun:
    """One channel's outcome from run_array."""

    board_id: int
    channel: int
    result: RunResult
    #: Analog start time of each valid output burst, jitter included.
    edge_times: np.ndarray

    @property
    def key(self) -> tuple[int, int]:
        return (self.board_id, self.channel)


def channel_rng(seed: int, board_id: int, channel: int) -> np.random.Generator:
    """Per-channel generator, independent of execution order."""
    return np.random.default_rng([seed, board_id, channel])


def _edge_times_for(result: RunResult, timing: TimingModel,
                    rng: np.random.Generator) -> np.ndarray:
    starts = np.array([s for s, _ in result.valid_runs], dtype=np.float64)
    jitter = rng.normal(0.0, timing.jitter_sigma, size=starts.size)
    return (starts * WORD_PERIOD_S
            + timing.pipeline_delay * WORD_PERIOD_S
            + timing.channel_skew
            + jitter)


def run_channel(sdm, wdm, edges_cycles, max_cycles: int, timing: TimingModel,
                rng: np.random.Generator, *, board_id: int = 0, channel: int = 0,
                collect_stream: bool = True) -> ArrayChannelRun:
    """Run one channel against externally-arriving trigger cycles."""
    sched = [(c, TriggerSource.EXTERNAL) for c in edges_cycles]
    result = run_program(sdm, wdm, sched, max_cycles=max_cycles,
                         channel_id=channel, collect_stream=collect_stream)
    return ArrayChannelRun(board_id, channel, result,
                           _edge_times_for(result, timing, rng))


def run_array(topo: BoardTopology, programs: dict, trigger_events,
              max_cycles: int, *, workers: int = 1,
              collect_stream: bool = True) -> dict[tuple[int, int], ArrayChannelRun]:
    """Run every programmed channel of the array against a shared trigger
    schedule (event times in seconds).

    Channels are independent: the output of each equals a single-channel
    run with the same arrival cycles, whatever the worker count.
    """
    arrivals: dict[tuple[int, int], list[int]] = {k: [] for k in programs}
    for t in trigger_events:
        for arr in distribute_trigger(t, topo):
            key = (arr.board_id, arr.channel)
            if key in arrivals:
                arrivals[key].append(arr.cycle)

    def task(key):
        board_id, ch = key
        sdm, wdm = programs[key]
        timing = topo.timing(board_id, ch)
        rng = channel_rng(topo.rng_seed, board_id, ch)
        return key, run_channel(sdm, wdm, arrivals[key], max_cycles, timing, rng,
                                board_id=board_id, channel=ch,
                                collect_stream=collect_stream)

    keys = sorted(programs)
    if workers <= 1:
        pairs = [task(k) for k in keys]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(task, keys))
    return dict(pairs)
