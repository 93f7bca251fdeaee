"""Shared helpers: randomized program construction for property tests.

Programs from make_program are valid by construction (asserted), terminate,
and come with a trigger schedule that satisfies every wait they contain.
Violations for negative tests are injected afterwards with inject_violation,
always at a reachable entry so static validation and dynamic behaviour can
be compared.
"""

import numpy as np
import pytest

from awgsim.memory import (
    MIN_ENTRY_WORDS,
    SAMPLES_PER_WORD,
    WDM_CAPACITY_WORDS,
    EntryFlags,
    SequenceEntry,
    SequenceMemory,
    TriggerSource,
    WaveformMemory,
    validate_program,
)
from awgsim.sequencer import TRIGGER_LATENCY_WORDS


def make_program(rng, *, max_entries=12, max_len=12, max_counter=4,
                 allow_wait=True, allow_jump=True, channel_id=0):
    """Build a random validated program.

    Returns (sdm, wdm, schedule, cycle_bound) where cycle_bound safely
    covers the whole run including wait gaps.
    """
    wdm = WaveformMemory(channel_id)
    wdm.samples[:] = rng.integers(-32768, 32768, size=wdm.samples.size, dtype=np.int64
                                  ).astype(np.int16)
    n = int(rng.integers(1, max_entries + 1))
    entries = []
    wait_sources = []
    for i in range(n):
        length = int(rng.integers(MIN_ENTRY_WORDS, max_len + 1))
        start = int(rng.integers(0, WDM_CAPACITY_WORDS - length + 1))
        counter = int(rng.integers(1, max_counter + 1))
        flags = EntryFlags(0)
        trig = TriggerSource.NONE
        if int(rng.integers(0, 5)) == 0 and rng.random() < 0.5:
            flags |= EntryFlags.HOLD_LAST
        if allow_wait and rng.random() < 0.25:
            flags |= EntryFlags.WAIT_TRIGGER
            trig = TriggerSource(int(rng.integers(1, 4)))
            wait_sources.append(trig)
        jump_target = 0
        if i == n - 1:
            flags |= EntryFlags.END_OF_SEQUENCE
        elif allow_jump and i + 2 < n and rng.random() < 0.15:
            # Forward only, so the walk always terminates.
            flags |= EntryFlags.JUMP
            jump_target = int(rng.integers(i + 1, n))
        entries.append(SequenceEntry(flags=flags, start_addr=start, length=length,
                                     trigger_source=trig, counter=counter,
                                     jump_target=jump_target))
    sdm = SequenceMemory(channel_id, entries)
    assert validate_program(sdm, wdm).ok

    total_valid = sum(e.length * e.counter for e in entries)
    spacing = total_valid + TRIGGER_LATENCY_WORDS + 8
    schedule = [(spacing * (j + 1), src) for j, src in enumerate(wait_sources)]
    cycle_bound = spacing * (len(wait_sources) + 2) + total_valid + 16
    return sdm, wdm, schedule, cycle_bound


def reachable_indices(sdm):
    """Entry indices visited by the deterministic control-flow walk."""
    seen = []
    idx = 0
    visited = set()
    while idx < sdm.occupancy and idx not in visited:
        visited.add(idx)
        seen.append(idx)
        e = sdm.entries[idx]
        if e.flags & EntryFlags.END_OF_SEQUENCE:
            break
        if e.counter == 0:
            break
        idx = e.jump_target if (e.flags & EntryFlags.JUMP) else idx + 1
    return seen


def inject_violation(sdm, rng, kind):
    """Mutate one reachable entry so that `kind` is both statically reported
    and dynamically observable.  Returns the mutated index."""
    reach = reachable_indices(sdm)
    if kind == "MIN_LENGTH":
        idx = int(rng.choice(reach))
        e = sdm.entries[idx]
        sdm.entries[idx] = SequenceEntry(
            flags=e.flags, start_addr=e.start_addr, length=3,
            trigger_source=e.trigger_source, counter=max(1, e.counter),
            jump_target=e.jump_target)
        return idx
    if kind == "OUT_OF_RANGE":
        idx = int(rng.choice(reach))
        e = sdm.entries[idx]
        sdm.entries[idx] = SequenceEntry(
            flags=e.flags, start_addr=WDM_CAPACITY_WORDS - e.length + 1,
            length=e.length, trigger_source=e.trigger_source,
            counter=max(1, e.counter), jump_target=e.jump_target)
        return idx
    if kind == "BAD_JUMP":
        idx = int(rng.choice(reach))
        e = sdm.entries[idx]
        sdm.entries[idx] = SequenceEntry(
            flags=(e.flags & ~EntryFlags.END_OF_SEQUENCE) | EntryFlags.JUMP,
            start_addr=e.start_addr, length=e.length,
            trigger_source=e.trigger_source, counter=max(1, e.counter),
            jump_target=sdm.occupancy + 3)
        return idx
    if kind == "JUMP_AND_END":
        idx = int(rng.choice(reach))
        e = sdm.entries[idx]
        sdm.entries[idx] = SequenceEntry(
            flags=e.flags | EntryFlags.JUMP | EntryFlags.END_OF_SEQUENCE,
            start_addr=e.start_addr, length=e.length,
            trigger_source=e.trigger_source, counter=max(1, e.counter),
            jump_target=int(rng.integers(0, sdm.occupancy)))
        return idx
    if kind == "NO_TERMINATOR":
        idx = sdm.occupancy - 1
        e = sdm.entries[idx]
        sdm.entries[idx] = SequenceEntry(
            flags=e.flags & ~(EntryFlags.END_OF_SEQUENCE | EntryFlags.JUMP),
            start_addr=e.start_addr, length=e.length,
            trigger_source=e.trigger_source, counter=max(1, e.counter),
            jump_target=0)
        return idx
    raise ValueError(kind)


@pytest.fixture
def rng():
    return np.random.default_rng(0xA3C9)
