"""Exception types shared across the simulator."""


class AwgSimError(Exception):
    """Base class for all awgsim errors."""


class InvariantViolation(AwgSimError):
    """A sequence entry or memory image violates a structural invariant."""


class OutOfRange(AwgSimError):
    """Address or length falls outside a memory's capacity."""


class MisalignedLength(AwgSimError):
    """Sample count is not a multiple of the 8-sample word size."""


class NoProgram(AwgSimError):
    """Arm requested on a channel whose sequence memory is empty."""


class SequencerFault(AwgSimError):
    """Runtime memory fault while executing an unvalidated program.

    Never raised for programs that pass validation.
    """


class NonTerminating(AwgSimError):
    """Program expansion has no finite length and no cycle cap was given."""


class FrameError(AwgSimError):
    """Base class for wire-framing errors."""


class BadMagic(FrameError):
    """Frame header is not plausible (wrong magic or absurd length field)."""


class BadCrc(FrameError):
    """Frame checksum mismatch."""


class Truncated(FrameError):
    """More bytes are needed to complete the frame (not fatal)."""


class BusyRunning(AwgSimError):
    """Memory write refused: the target channel has a program in flight."""


class ValidationFailed(AwgSimError):
    """Arm refused because the loaded program fails validation."""

    def __init__(self, report):
        super().__init__(f"program invalid: {report}")
        self.report = report


class CommandError(AwgSimError):
    """A board command returned a non-OK status."""

    def __init__(self, status, message="", report=None):
        super().__init__(f"command failed with status {status}: {message}")
        self.status = status
        self.report = report


class WrongLength(AwgSimError):
    """Input array does not have the required length."""


class NonCoherent(AwgSimError):
    """Tone frequency is not an integer number of FFT bins."""


class TooFewEvents(AwgSimError):
    """Jitter statistics require at least two events per channel."""


class MismatchedGrids(AwgSimError):
    """Phase-noise curves were taken on different offset grids."""


class ConfigError(AwgSimError):
    """Scenario or topology configuration is invalid."""


class TransportError(AwgSimError):
    """Could not reach or talk to a board over the configured transport."""
