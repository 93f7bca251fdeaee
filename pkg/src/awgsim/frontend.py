"""Analog output stage: DAC transfer with injectable nonlinearity, the
differential/filter output chain, ideal IQ upconversion, and output timing
(deterministic pipeline latency, per-channel skew, per-event jitter).

All of it is pure arithmetic over numpy arrays; with jitter_sigma = 0 the
whole stage is bit- and timing-deterministic.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import InvariantViolation
from .memory import SAMPLE_RATE_HZ

try:
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a normal dependency
    _HAVE_NUMBA = False

WORD_PERIOD_S = 4e-9
SAMPLE_PERIOD_S = 1.0 / SAMPLE_RATE_HZ

N_CODES = 65536
_CODE_OFFSET = 32768


if _HAVE_NUMBA:

    @njit(parallel=True, cache=True)
    def _gather_codes(codes, table, out):  # pragma: no cover - compiled
        for i in prange(codes.size):
            out[i] = table[codes[i] + 32768]


def _table_lookup(codes: np.ndarray, table: np.ndarray) -> np.ndarray:
    """table[code + 32768] for an int16 code array, at memory speed."""
    out = np.empty(codes.size, dtype=np.float64)
    if _HAVE_NUMBA and codes.size >= (1 << 15):
        _gather_codes(codes, table, out)
    else:
        idx = (codes.view(np.uint16) ^ np.uint16(0x8000)).astype(np.intp)
        np.take(table, idx, out=out)
    return out


@dataclass
class DacTransfer:
    """Static DAC transfer law: v = v_fullscale * (code + inl[code]) / 32768.

    ``inl_profile`` holds one offset per code, in LSB units, indexed by
    code + 32768; the ideal converter is the all-zero profile.  Treat a
    transfer as immutable once used: the voltage table is cached.
    """

    v_fullscale: float = 0.5
    inl_profile: np.ndarray = field(default_factory=lambda: np.zeros(N_CODES))

    def __post_init__(self):
        self.inl_profile = np.asarray(self.inl_profile, dtype=np.float64)
        if self.inl_profile.shape != (N_CODES,):
            raise InvariantViolation(
                f"inl_profile must have exactly {N_CODES} values, "
                f"got shape {self.inl_profile.shape}"
            )
        self._table: np.ndarray | None = None

    @property
    def lsb(self) -> float:
        return self.v_fullscale / _CODE_OFFSET

    def voltage_table(self) -> np.ndarray:
        """Output voltage for every code, indexed by code + 32768."""
        if self._table is None:
            codes = np.arange(-_CODE_OFFSET, _CODE_OFFSET, dtype=np.float64)
            self._table = self.v_fullscale * (codes + self.inl_profile) / _CODE_OFFSET
        return self._table


def dac_convert(code, transfer: DacTransfer):
    """Convert a sample code (or int16 array of codes) to volts."""
    if np.isscalar(code) or getattr(code, "ndim", 1) == 0:
        c = int(code)
        return transfer.v_fullscale * (c + transfer.inl_profile[c + _CODE_OFFSET]) \
            / _CODE_OFFSET
    codes = np.asarray(code)
    if codes.dtype != np.int16:
        codes = codes.astype(np.int16)
    return _table_lookup(codes, transfer.voltage_table())


def differential_outputs(v):
    """Split into the complementary pair: (+v/2, -v/2).

    The minus leg is the compensative output used for monitoring; the pair
    difference reconstructs v and the common mode is identically zero.
    """
    v = np.asarray(v, dtype=np.float64)
    half = v / 2.0
    return half, -half


def design_lowpass_taps(cutoff_hz: float = 500e6, numtaps: int = 63,
                        fs: float = SAMPLE_RATE_HZ) -> np.ndarray:
    """Linear-phase FIR reconstruction filter with unity DC gain."""
    return signal.firwin(numtaps, cutoff_hz, fs=fs)


def lowpass_filter(samples, cutoff_hz: float = 500e6, fs: float = SAMPLE_RATE_HZ,
                   taps: np.ndarray | None = None) -> np.ndarray:
    """Filter a uniformly sampled voltage stream.

    Output is center-aligned (the symmetric FIR's group delay is removed)
    and has the same length as the input.
    """
    if taps is None:
        taps = design_lowpass_taps(cutoff_hz, fs=fs)
    x = np.asarray(samples, dtype=np.float64)
    return np.convolve(x, taps, mode="same")


@dataclass
class IqPlate:
    """One local oscillator fanned out to the four mixers on the plate."""

    lo_frequency: float
    lo_amplitude: float = 1.0
    splitter_ports: int = 4


def iq_upconvert(i, q, plate: IqPlate, t):
    """Ideal mixer arithmetic: rf(t) = i*cos(2*pi*f_lo*t) - q*sin(2*pi*f_lo*t)."""
    i = np.asarray(i, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    w = 2.0 * np.pi * plate.lo_frequency * t
    return i * np.cos(w) - q * np.sin(w)


@dataclass
class TimingModel:
    """Output timing of one channel.

    pipeline_delay is the deterministic word-clock latency from trigger to
    analog output; channel_skew is a static per-channel offset; jitter is
    one Gaussian draw per trigger event, shared by all samples of that
    event's stream.
    """

    pipeline_delay: int = 2
    channel_skew: float = 0.0
    jitter_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise InvariantViolation("jitter_sigma must be >= 0")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def timestamp_samples(volts, timing: TimingModel, trigger_time: float,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Stamp each sample of one triggered stream.

    Sample k lands at trigger_time + pipeline_delay*4 ns + skew + k*0.5 ns
    + jitter, where jitter is a single seeded Gaussian draw for the whole
    event.  Returns an (n, 2) array of (time_s, volts) rows.
    """
    v = np.asarray(volts, dtype=np.float64)
    if rng is None:
        rng = timing.make_rng()
    jitter = rng.normal(0.0, timing.jitter_sigma)
    base = trigger_time + timing.pipeline_delay * WORD_PERIOD_S + timing.channel_skew
    times = base + np.arange(v.size) * SAMPLE_PERIOD_S + jitter
    return np.column_stack([times, v])


# -- trace export -------------------------------------------------------------
#
# Traces leave the simulator as (time_s, volts) pairs: binary f64 pairs in
# little-endian order, or CSV with a one-line header.

def trace_to_binary(times: np.ndarray, volts: np.ndarray) -> bytes:
    pairs = np.column_stack([times, volts]).astype("<f8")
    return pairs.tobytes()


def trace_from_binary(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.frombuffer(data, dtype="<f8").reshape(-1, 2)
    return pairs[:, 0].copy(), pairs[:, 1].copy()


def trace_to_csv(times: np.ndarray, volts: np.ndarray) -> str:
    out = io.StringIO()
    out.write("time_s,volts\n")
    for t, v in zip(times, volts):
        out.write(f"{t:.17g},{v:.17g}\n")
    return out.getvalue()


def trace_from_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    arr = np.array([[float(a), float(b)] for a, b in rows], dtype=np.float64)
    if arr.size == 0:
        return np.empty(0), np.empty(0)
    return arr[:, 0], arr[:, 1]
