"""awgsim: deterministic simulator of a 4-channel 2 GSPS 16-bit sequenced
arbitrary waveform generator, its host control protocol, and the metrology
suite that characterizes it (linearity, SFDR, phase-noise scaling, and
multi-channel timing)."""

from .errors import (
    AwgSimError,
    BadCrc,
    BadMagic,
    CommandError,
    ConfigError,
    FrameError,
    InvariantViolation,
    MisalignedLength,
    MismatchedGrids,
    NoProgram,
    NonCoherent,
    NonTerminating,
    OutOfRange,
    SequencerFault,
    TooFewEvents,
    TransportError,
    Truncated,
    WrongLength,
)
from .memory import (
    MIN_ENTRY_WORDS,
    NUM_CHANNELS,
    SAMPLE_RATE_HZ,
    SAMPLES_PER_WORD,
    SDM_CAPACITY,
    WDM_CAPACITY_SAMPLES,
    WDM_CAPACITY_WORDS,
    WORD_CLOCK_HZ,
    EntryFlags,
    SequenceEntry,
    SequenceMemory,
    TriggerSource,
    ValidationReport,
    Violation,
    ViolationRule,
    WaveformMemory,
    decode_entry,
    encode_entry,
    validate_program,
)
from .sequencer import (
    PREFETCH_WORDS,
    TRIGGER_LATENCY_WORDS,
    ChannelSequencer,
    ChannelSequencerState,
    CycleInputs,
    EventKind,
    EventLog,
    RunResult,
    SampleWord,
    SequencerEngine,
    SequencerStatus,
    flatten_oracle,
    run_program,
    run_program_stepped,
)

__version__ = "0.1.0"
