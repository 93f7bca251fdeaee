"""Waveform and sequence memories, entry wire encoding, and program validation.

A channel plays 16-bit sample codes out of a waveform memory that is addressed
in 8-sample words (one word per 250 MHz cycle at 2 GSPS).  The sequence memory
holds the instruction list that the channel's state machine walks: each entry
names a waveform region (start address and length in words), a trigger source,
a repeat counter and flag bits.

Entry wire layout (16 bytes, little-endian):

    bytes 0-3   start_addr   u32, word units
    bytes 4-7   length       u32, word units
    bytes 8-11  counter      u32, 0 = repeat indefinitely
    byte  12    flags        bit0 WAIT_TRIGGER, bit1 END_OF_SEQUENCE,
                             bit2 JUMP, bit3 HOLD_LAST
    byte  13    trigger_source  0 NONE, 1 EXTERNAL, 2 SOFTWARE, 3 INTERNAL_TIMER
    bytes 14-15 jump_target  u16, sequence-memory index

Reserved bits are written as zero and ignored on decode.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum, IntFlag

import numpy as np

from .errors import InvariantViolation, MisalignedLength, OutOfRange

SAMPLE_RATE_HZ = 2_000_000_000
WORD_CLOCK_HZ = 250_000_000
SAMPLES_PER_WORD = 8

#: Per-channel waveform memory capacity, in samples.
WDM_CAPACITY_SAMPLES = 1 << 18
WDM_CAPACITY_WORDS = WDM_CAPACITY_SAMPLES // SAMPLES_PER_WORD

#: Per-channel sequence memory capacity, in entries.
SDM_CAPACITY = 4096

#: Shortest playable waveform region, in words.  Guarantees the state
#: machine's next-entry prefetch completes before the region ends.
MIN_ENTRY_WORDS = 4

ENTRY_SIZE = 16
NUM_CHANNELS = 4

SAMPLE_MIN = -32768
SAMPLE_MAX = 32767


class EntryFlags(IntFlag):
    WAIT_TRIGGER = 0x1
    END_OF_SEQUENCE = 0x2
    JUMP = 0x4
    HOLD_LAST = 0x8


class TriggerSource(IntEnum):
    NONE = 0
    EXTERNAL = 1
    SOFTWARE = 2
    INTERNAL_TIMER = 3


@dataclass(frozen=True)
class SequenceEntry:
    """One sequencer instruction."""

    flags: EntryFlags = EntryFlags(0)
    start_addr: int = 0
    length: int = 0
    trigger_source: TriggerSource = TriggerSource.NONE
    counter: int = 1
    jump_target: int = 0


_ENTRY_STRUCT = struct.Struct("<IIIBBH")
assert _ENTRY_STRUCT.size == ENTRY_SIZE


def encode_entry(entry: SequenceEntry) -> bytes:
    """Encode one entry into its fixed 16-byte wire form.

    Raises InvariantViolation if the entry is not a legal instruction:
    a region shorter than MIN_ENTRY_WORDS, a region that does not fit in
    waveform memory, or any field outside its encodable range.
    """
    if not 0 <= entry.start_addr <= 0xFFFFFFFF:
        raise InvariantViolation(f"start_addr {entry.start_addr} not a u32")
    if not 0 <= entry.length <= 0xFFFFFFFF:
        raise InvariantViolation(f"length {entry.length} not a u32")
    if not 0 <= entry.counter <= 0xFFFFFFFF:
        raise InvariantViolation(f"counter {entry.counter} not a u32")
    if not 0 <= entry.jump_target <= 0xFFFF:
        raise InvariantViolation(f"jump_target {entry.jump_target} not a u16")
    if not 0 <= int(entry.flags) <= 0xF:
        raise InvariantViolation(f"flags {int(entry.flags):#x} outside bit0-bit3")
    if not 0 <= int(entry.trigger_source) <= 3:
        raise InvariantViolation(f"trigger_source {entry.trigger_source} unknown")
    if entry.length < MIN_ENTRY_WORDS:
        raise InvariantViolation(
            f"length {entry.length} words is below the minimum of {MIN_ENTRY_WORDS}"
        )
    if entry.start_addr + entry.length > WDM_CAPACITY_WORDS:
        raise InvariantViolation(
            f"region [{entry.start_addr}, {entry.start_addr + entry.length}) "
            f"exceeds waveform memory ({WDM_CAPACITY_WORDS} words)"
        )
    return _ENTRY_STRUCT.pack(
        entry.start_addr,
        entry.length,
        entry.counter,
        int(entry.flags),
        int(entry.trigger_source),
        entry.jump_target,
    )


def pack_entry_raw(entry: SequenceEntry) -> bytes:
    """Pack an entry structurally, without semantic checks.

    Fields are masked to their wire widths.  A control host uses this to
    ship arbitrary (possibly invalid) entries; the board's validator is
    the authority on legality.
    """
    return _ENTRY_STRUCT.pack(
        entry.start_addr & 0xFFFFFFFF,
        entry.length & 0xFFFFFFFF,
        entry.counter & 0xFFFFFFFF,
        int(entry.flags) & 0xF,
        int(entry.trigger_source) & 0x3,
        entry.jump_target & 0xFFFF,
    )


def decode_entry(word: bytes) -> SequenceEntry:
    """Decode 16 bytes into an entry.

    Structural only: semantic invariants are checked by validate_program,
    not here.  Unknown flag bits and trigger-source values are masked off.
    """
    if len(word) != ENTRY_SIZE:
        raise InvariantViolation(f"entry word must be {ENTRY_SIZE} bytes, got {len(word)}")
    start, length, counter, flags, trig, jump = _ENTRY_STRUCT.unpack(word)
    return SequenceEntry(
        flags=EntryFlags(flags & 0xF),
        start_addr=start,
        length=length,
        trigger_source=TriggerSource(trig & 0x3),
        counter=counter,
        jump_target=jump,
    )


class WaveformMemory:
    """Fixed-capacity sample memory for one channel.

    Samples are signed 16-bit codes; the memory is addressed in 8-sample
    words.  Unwritten locations read as zero, like cleared block RAM.
    """

    def __init__(self, channel_id: int = 0):
        if not 0 <= channel_id < NUM_CHANNELS:
            raise OutOfRange(f"channel_id {channel_id} outside 0..{NUM_CHANNELS - 1}")
        self.channel_id = channel_id
        self.samples = np.zeros(WDM_CAPACITY_SAMPLES, dtype=np.int16)

    @property
    def capacity_words(self) -> int:
        return WDM_CAPACITY_WORDS

    def load(self, word_offset: int, samples) -> None:
        """Replace samples starting at a word boundary.

        The write is whole-word: len(samples) must be a multiple of 8 and
        the region must fit in capacity.  Everything outside the region is
        untouched.
        """
        data = np.asarray(samples, dtype=np.int16)
        if data.ndim != 1:
            raise MisalignedLength("samples must be one-dimensional")
        if data.size % SAMPLES_PER_WORD != 0:
            raise MisalignedLength(
                f"sample count {data.size} is not a multiple of {SAMPLES_PER_WORD}"
            )
        if word_offset < 0:
            raise OutOfRange(f"negative word offset {word_offset}")
        start = word_offset * SAMPLES_PER_WORD
        if start + data.size > WDM_CAPACITY_SAMPLES:
            raise OutOfRange(
                f"write of {data.size} samples at word {word_offset} "
                f"exceeds capacity {WDM_CAPACITY_SAMPLES}"
            )
        self.samples[start : start + data.size] = data

    def read(self, word_offset: int, word_count: int) -> np.ndarray:
        """Read back word_count words as a fresh sample array."""
        if word_offset < 0 or word_count < 0:
            raise OutOfRange("negative offset or count")
        if word_offset + word_count > WDM_CAPACITY_WORDS:
            raise OutOfRange(
                f"read of {word_count} words at word {word_offset} exceeds capacity"
            )
        start = word_offset * SAMPLES_PER_WORD
        return self.samples[start : start + word_count * SAMPLES_PER_WORD].copy()

    def word(self, word_index: int) -> np.ndarray:
        """View of one 8-sample word (no copy)."""
        start = word_index * SAMPLES_PER_WORD
        return self.samples[start : start + SAMPLES_PER_WORD]


class SequenceMemory:
    """Ordered entry storage for one channel."""

    def __init__(self, channel_id: int = 0, entries=None):
        if not 0 <= channel_id < NUM_CHANNELS:
            raise OutOfRange(f"channel_id {channel_id} outside 0..{NUM_CHANNELS - 1}")
        self.channel_id = channel_id
        self.entries: list[SequenceEntry] = list(entries) if entries else []
        if len(self.entries) > SDM_CAPACITY:
            raise OutOfRange(f"{len(self.entries)} entries exceed capacity {SDM_CAPACITY}")

    @property
    def occupancy(self) -> int:
        return len(self.entries)

    def write(self, start_index: int, entries) -> None:
        """Replace entries [start_index, start_index + len(entries)).

        The occupied region grows if the write extends past the current
        occupancy, but may not leave a gap or exceed capacity.
        """
        entries = list(entries)
        if start_index < 0 or start_index > len(self.entries):
            raise OutOfRange(
                f"write at index {start_index} would leave a gap "
                f"(occupancy {len(self.entries)})"
            )
        if start_index + len(entries) > SDM_CAPACITY:
            raise OutOfRange(
                f"write of {len(entries)} entries at {start_index} exceeds "
                f"capacity {SDM_CAPACITY}"
            )
        end = start_index + len(entries)
        if end > len(self.entries):
            self.entries.extend([SequenceEntry()] * (end - len(self.entries)))
        self.entries[start_index:end] = entries

    def read(self, start_index: int, count: int) -> list[SequenceEntry]:
        if start_index < 0 or count < 0 or start_index + count > len(self.entries):
            raise OutOfRange(
                f"read of {count} entries at {start_index} exceeds occupancy "
                f"{len(self.entries)}"
            )
        return self.entries[start_index : start_index + count]


class ViolationRule(IntEnum):
    MIN_LENGTH = 0
    OUT_OF_RANGE = 1
    BAD_JUMP = 2
    JUMP_AND_END = 3
    NO_TERMINATOR = 4
    EMPTY_PROGRAM = 5


@dataclass(frozen=True)
class Violation:
    index: int
    rule: ViolationRule

    def __str__(self):
        return f"entry {self.index}: {self.rule.name}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set[ViolationRule]:
        return {v.rule for v in self.violations}

    def __str__(self):
        if self.ok:
            return "ok"
        return "; ".join(str(v) for v in self.violations)


def validate_program(sdm: SequenceMemory, wdm: WaveformMemory) -> ValidationReport:
    """Statically check a program against the sequencer's runtime contract.

    A program with an empty report is guaranteed to run without memory
    faults or prefetch starvation; every violated rule is reported with
    the offending entry index.
    """
    report = ValidationReport()
    entries = sdm.entries
    if not entries:
        report.violations.append(Violation(0, ViolationRule.EMPTY_PROGRAM))
        return report
    last = len(entries) - 1
    for i, e in enumerate(entries):
        if e.length < MIN_ENTRY_WORDS:
            report.violations.append(Violation(i, ViolationRule.MIN_LENGTH))
        if e.start_addr + e.length > wdm.capacity_words:
            report.violations.append(Violation(i, ViolationRule.OUT_OF_RANGE))
        has_jump = bool(e.flags & EntryFlags.JUMP)
        has_end = bool(e.flags & EntryFlags.END_OF_SEQUENCE)
        if has_jump and has_end:
            report.violations.append(Violation(i, ViolationRule.JUMP_AND_END))
        if has_jump and e.jump_target >= len(entries):
            report.violations.append(Violation(i, ViolationRule.BAD_JUMP))
        # Only the final entry can walk off the end of the program; an
        # infinite repeat counter never completes, so it never advances.
        if i == last and not has_jump and not has_end and e.counter != 0:
            report.violations.append(Violation(i, ViolationRule.NO_TERMINATOR))
    return report
