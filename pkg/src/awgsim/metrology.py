"""Measurement procedures over a simulated board: full-code linearity
sweep, spurious-free dynamic range, multi-channel jitter statistics, and
the phase-noise-vs-carrier scaling law.

Procedures that exercise a board accept anything with the board command
set (an in-process BoardSim or a BoardClient over the wire); analysis
functions are pure numpy.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .board import Reg
from .errors import ConfigError, MismatchedGrids, NonCoherent, TooFewEvents, WrongLength
from .memory import (
    SAMPLE_RATE_HZ,
    SAMPLES_PER_WORD,
    SDM_CAPACITY,
    EntryFlags,
    SequenceEntry,
    TriggerSource,
)

N_CODES = 65536

# -- linearity -----------------------------------------------------------------


@dataclass
class LinearityReport:
    """Endpoint-fit nonlinearity of a measured code-to-voltage staircase.

    dnl[k] = (v[k+1] - v[k]) / lsb - 1 with lsb taken from the endpoint
    line through (0, v[0]) and (65535, v[65535]); inl is the deviation from
    that line in LSB.  inl[0] and inl[65535] are zero by construction.
    """

    dnl: np.ndarray
    inl: np.ndarray
    max_abs_dnl: float
    max_abs_inl: float
    lsb_volts: float

    def passes(self, bound_lsb: float = 2.0) -> bool:
        return self.max_abs_dnl <= bound_lsb and self.max_abs_inl <= bound_lsb

    def summary_lines(self, bound_lsb: float = 2.0) -> list[str]:
        verdict = "PASS" if self.passes(bound_lsb) else "FAIL"
        return [
            "CONVENTION=endpoint-fit",
            f"STEP_COUNT={N_CODES}",
            f"TRANSITIONS={N_CODES - 1}",
            f"LSB_VOLTS={self.lsb_volts:.17g}",
            f"DNL_MAX_LSB={self.max_abs_dnl:.9f}; PASS<={bound_lsb}",
            f"INL_MAX_LSB={self.max_abs_inl:.9f}; PASS<={bound_lsb}",
            f"RESULT={verdict}",
        ]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("code,dnl_lsb,inl_lsb\n")
        for k in range(N_CODES):
            d = f"{self.dnl[k]:.9g}" if k < N_CODES - 1 else ""
            out.write(f"{k - 32768},{d},{self.inl[k]:.9g}\n")
        return out.getvalue()


def compute_inl_dnl(voltages) -> LinearityReport:
    """Differential and integral nonlinearity of a 65536-point sweep."""
    v = np.asarray(voltages, dtype=np.float64)
    if v.shape != (N_CODES,):
        raise WrongLength(f"expected {N_CODES} voltages, got shape {v.shape}")
    lsb = (v[-1] - v[0]) / (N_CODES - 1)
    if lsb == 0:
        raise WrongLength("degenerate sweep: endpoints are equal")
    dnl = np.diff(v) / lsb - 1.0
    line = v[0] + np.arange(N_CODES, dtype=np.float64) * lsb
    inl = (v - line) / lsb
    return LinearityReport(
        dnl=dnl, inl=inl,
        max_abs_dnl=float(np.max(np.abs(dnl))),
        max_abs_inl=float(np.max(np.abs(inl))),
        lsb_volts=float(lsb),
    )


def ramp_sweep_procedure(board, dwell_cycles: int = 64, channel: int = 0,
                         batch_codes: int = SDM_CAPACITY) -> np.ndarray:
    """Measure the settled output voltage of every DAC code, in ascending
    code order, by playing staircase programs through the sequencer.

    One sequence entry per code (4-word region repeated dwell/4 times); the
    simulated multimeter samples once per step at the end of the dwell via
    the capture decimator.  The 65536 codes do not fit one sequence memory
    image, so the sweep runs in batches and reprograms between them.
    """
    if dwell_cycles < 4 or dwell_cycles % 4:
        raise ConfigError("dwell_cycles must be a multiple of 4, at least 4")
    if batch_codes < 1 or batch_codes > SDM_CAPACITY:
        raise ConfigError(f"batch_codes must be in 1..{SDM_CAPACITY}")
    words_per_code = 4
    repeats = dwell_cycles // words_per_code
    step_samples = dwell_cycles * SAMPLES_PER_WORD

    board.reg_write(Reg.CAPTURE_DECIM, step_samples)
    board.reg_write(Reg.CAPTURE_OFFSET, step_samples - 1)
    board.reg_write(Reg.CAPTURE_MAX, batch_codes + 1)

    voltages = np.empty(N_CODES, dtype=np.float64)
    for lo in range(0, N_CODES, batch_codes):
        codes = np.arange(lo, min(lo + batch_codes, N_CODES), dtype=np.int64) - 32768
        image = np.repeat(codes.astype(np.int16), words_per_code * SAMPLES_PER_WORD)
        board.write_waveform(channel, 0, image)
        entries = []
        for i in range(codes.size):
            flags = EntryFlags(0)
            trig = TriggerSource.NONE
            if i == 0:
                flags |= EntryFlags.WAIT_TRIGGER
                trig = TriggerSource.SOFTWARE
            if i == codes.size - 1:
                flags |= EntryFlags.END_OF_SEQUENCE
            entries.append(SequenceEntry(
                flags=flags, start_addr=i * words_per_code, length=words_per_code,
                trigger_source=trig, counter=repeats))
        board.write_sequence(channel, 0, entries)
        run_id = board.arm(channel)
        board.soft_trigger(channel)
        _times, volts = board.fetch_capture(channel, run_id)
        if volts.size != codes.size:
            raise WrongLength(
                f"batch at code {lo}: captured {volts.size} points, "
                f"expected {codes.size}")
        voltages[lo : lo + codes.size] = volts
    return voltages


# -- SFDR ----------------------------------------------------------------------


@dataclass
class SfdrPoint:
    frequency: float          # nominal sweep frequency (Hz)
    actual_frequency: float   # bin-coherent frequency actually played
    sfdr_dbc: float


def compute_sfdr(volts, tone_hz: float, sample_rate: float = SAMPLE_RATE_HZ) -> float:
    """Carrier-to-largest-spur ratio in dB over a coherent capture.

    Rectangular window on purpose: the tone must sit on an integer FFT bin
    (and the length must be a power of two), otherwise NonCoherent is
    raised rather than silently smearing the spectrum.
    """
    x = np.asarray(volts, dtype=np.float64)
    n = x.size
    if n < 8 or n & (n - 1):
        raise NonCoherent(f"trace length {n} is not a power of two")
    bins = tone_hz * n / sample_rate
    m = int(round(bins))
    if abs(bins - m) > 1e-6 or not 1 <= m < n // 2:
        raise NonCoherent(
            f"{tone_hz} Hz is {bins:.6f} bins at N={n}, fs={sample_rate}")
    power = np.abs(np.fft.rfft(x)) ** 2
    carrier = power[m]
    power[0] = 0.0
    power[m] = 0.0
    spur = power.max()
    if spur == 0.0:
        return float("inf")
    return float(10.0 * np.log10(carrier / spur))


def coherent_bin(nominal_hz: float, n_fft: int,
                 sample_rate: float = SAMPLE_RATE_HZ) -> tuple[int, float]:
    """Snap a nominal frequency to the nearest integer-bin frequency."""
    m = int(round(nominal_hz * n_fft / sample_rate))
    m = max(1, min(m, n_fft // 2 - 1))
    return m, m * sample_rate / n_fft


def _sfdr_one_point(board, channel: int, nominal_hz: float, n_fft: int,
                    amplitude: int) -> SfdrPoint:
    m, f_actual = coherent_bin(nominal_hz, n_fft)
    n = np.arange(n_fft)
    codes = np.round(amplitude * np.sin(2 * np.pi * m * n / n_fft)).astype(np.int16)
    board.reg_write(Reg.CAPTURE_DECIM, 1)
    board.reg_write(Reg.CAPTURE_OFFSET, 0)
    board.reg_write(Reg.CAPTURE_MAX, n_fft)
    board.write_waveform(channel, 0, codes)
    board.write_sequence(channel, 0, [SequenceEntry(
        flags=EntryFlags.END_OF_SEQUENCE | EntryFlags.WAIT_TRIGGER,
        length=n_fft // SAMPLES_PER_WORD,
        trigger_source=TriggerSource.SOFTWARE)])
    run_id = board.arm(channel)
    board.soft_trigger(channel)
    times, volts = board.fetch_capture(channel, run_id)
    if volts.size != n_fft:
        raise WrongLength(f"captured {volts.size} samples, expected {n_fft}")
    fs = 1.0 / (times[1] - times[0]) if times.size > 1 else SAMPLE_RATE_HZ
    fs = float(np.round(fs))
    return SfdrPoint(nominal_hz, f_actual, compute_sfdr(volts, f_actual, fs))


def sfdr_sweep(board=None, channel: int = 0, n_fft: int = 8192,
               amplitude: int = 32767, *, board_factory=None,
               workers: int = 1) -> list[SfdrPoint]:
    """The standard 25-point sweep: 10 MHz to 250 MHz in 10 MHz steps.

    Each point plays a full-scale coherent sine through the whole pipeline
    and measures SFDR on the captured trace.  With ``workers`` > 1 a
    ``board_factory`` must supply an independent board per worker; results
    aggregate in frequency order either way.
    """
    nominals = [10e6 * (k + 1) for k in range(25)]
    if workers <= 1:
        if board is None:
            board = board_factory()
        return [_sfdr_one_point(board, channel, f, n_fft, amplitude)
                for f in nominals]
    if board_factory is None:
        raise ConfigError("parallel sweep needs a board_factory")

    def task(f):
        return _sfdr_one_point(board_factory(), channel, f, n_fft, amplitude)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, nominals))


def sfdr_points_csv(points: list[SfdrPoint]) -> str:
    out = io.StringIO()
    out.write("frequency_hz,actual_frequency_hz,sfdr_dbc\n")
    for p in points:
        out.write(f"{p.frequency:.17g},{p.actual_frequency:.17g},"
                  f"{p.sfdr_dbc:.6f}\n")
    return out.getvalue()


# -- jitter --------------------------------------------------------------------


@dataclass
class JitterReport:
    """Edge-time statistics across trigger events.

    std is the population convention; the skew matrix holds
    mean(edge_i - edge_j) and is antisymmetric with a zero diagonal.
    """

    channel_keys: list
    per_channel_std: np.ndarray   # seconds
    skew_matrix: np.ndarray       # seconds
    mean_std: float               # seconds

    def summary_lines(self) -> list[str]:
        lines = [
            f"CHANNELS={len(self.channel_keys)}",
            f"STD_MIN_PS={self.per_channel_std.min() * 1e12:.4f}",
            f"STD_MAX_PS={self.per_channel_std.max() * 1e12:.4f}",
            f"STD_MEAN_PS={self.mean_std * 1e12:.4f}",
            f"SKEW_MAX_PS={np.abs(self.skew_matrix).max() * 1e12:.4f}",
        ]
        return lines

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("board,channel,std_ps\n")
        for key, std in zip(self.channel_keys, self.per_channel_std):
            b, c = key
            out.write(f"{b},{c},{std * 1e12:.6f}\n")
        return out.getvalue()


def jitter_statistics(channel_keys, edge_times) -> JitterReport:
    """Per-channel edge-time std and pairwise mean skew.

    ``edge_times`` is an (n_channels, n_events) array; every channel needs
    at least two events and all channels the same event count.
    """
    edges = np.asarray(edge_times, dtype=np.float64)
    if edges.ndim != 2 or edges.shape[0] != len(channel_keys):
        raise WrongLength("edge_times must be (n_channels, n_events)")
    if edges.shape[1] < 2:
        raise TooFewEvents(f"need >= 2 events per channel, got {edges.shape[1]}")
    stds = edges.std(axis=1, ddof=0)
    means = edges.mean(axis=1)
    skew = means[:, None] - means[None, :]
    return JitterReport(
        channel_keys=list(channel_keys),
        per_channel_std=stds,
        skew_matrix=skew,
        mean_std=float(stds.mean()),
    )


def relative_edge_times(edge_times, event_times) -> np.ndarray:
    """Reference each burst edge to its trigger event.

    The bench measurement puts the scope trigger on the shared event and
    reads the channel edge against it; statistics are over the residuals,
    not over the absolute schedule.
    """
    edges = np.asarray(edge_times, dtype=np.float64)
    events = np.asarray(event_times, dtype=np.float64)
    if edges.shape[-1] != events.size:
        raise WrongLength(
            f"{edges.shape[-1]} edges per channel vs {events.size} events")
    return edges - events


def retrigger_program(wdm_samples: np.ndarray):
    """A program that waits, plays one 4-word burst, and rearms itself.

    Used for edge-time measurements: each external trigger event produces
    exactly one burst whose analog start time is one timing sample.
    """
    entry = SequenceEntry(
        flags=EntryFlags.WAIT_TRIGGER | EntryFlags.JUMP,
        length=4, trigger_source=TriggerSource.EXTERNAL,
        counter=1, jump_target=0)
    return [entry], np.asarray(wdm_samples, dtype=np.int16)


# -- phase noise ----------------------------------------------------------------


@dataclass
class PhaseNoiseCurve:
    carrier_hz: float
    offsets_hz: np.ndarray
    dbc_per_hz: np.ndarray

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("offset_hz,dbc_per_hz\n")
        for f, l in zip(self.offsets_hz, self.dbc_per_hz):
            out.write(f"{f:.17g},{l:.6f}\n")
        return out.getvalue()


def synth_jittered_tone(carrier_hz: float, sigma_s: float, n_samples: int,
                        sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    """Sine sampled on a clock with white timing jitter of the given sigma."""
    t = np.arange(n_samples) / sample_rate
    dt = rng.standard_normal(n_samples) * sigma_s
    return np.sin(2 * np.pi * carrier_hz * (t + dt))


def phase_noise_curve(samples: np.ndarray, carrier_bin: int, sample_rate: float,
                      nperseg: int, offset_bins: tuple[int, int] = (10, 500)
                      ) -> PhaseNoiseCurve:
    """Single-sideband noise density relative to the carrier, from an
    averaged periodogram of a bin-coherent tone."""
    f, pxx = signal.welch(samples, fs=sample_rate, window="boxcar",
                          nperseg=nperseg, detrend=False)
    carrier_power = pxx[carrier_bin] * sample_rate / nperseg
    lo, hi = offset_bins
    sel = slice(carrier_bin + lo, carrier_bin + hi)
    offsets = f[sel] - f[carrier_bin]
    dbc = 10.0 * np.log10(pxx[sel] / carrier_power)
    return PhaseNoiseCurve(float(f[carrier_bin]), offsets, dbc)


def analytic_phase_noise(carrier_hz: float, sigma_s: float, sample_rate: float,
                         offsets_hz: np.ndarray) -> PhaseNoiseCurve:
    """Flat jitter-limited noise floor: L = (2*pi*f_c*sigma)^2 / fs."""
    level = 10.0 * np.log10((2 * np.pi * carrier_hz * sigma_s) ** 2 / sample_rate)
    return PhaseNoiseCurve(carrier_hz, np.asarray(offsets_hz, dtype=np.float64),
                           np.full(len(offsets_hz), level))


def phase_noise_scaling_check(curve_lo: PhaseNoiseCurve,
                              curve_hi: PhaseNoiseCurve) -> float:
    """Mean vertical shift (dB) between two curves on one offset grid.

    Theory for jitter-limited noise: 20*log10(f_hi / f_lo), i.e. 6.02 dB
    per carrier octave.
    """
    if curve_lo.offsets_hz.shape != curve_hi.offsets_hz.shape or \
            not np.allclose(curve_lo.offsets_hz, curve_hi.offsets_hz):
        raise MismatchedGrids("curves were taken on different offset grids")
    return float(np.mean(curve_hi.dbc_per_hz - curve_lo.dbc_per_hz))


def simulated_scaling_curves(sigma_s: float, base_bin: int, octaves: int,
                             sample_rate: float = SAMPLE_RATE_HZ,
                             nperseg: int = 1 << 14, n_segments: int = 96,
                             seed: int = 0) -> list[PhaseNoiseCurve]:
    """Phase-noise curves of jittered tones at carrier, 2x, 4x, ...

    Carriers sit on Welch bins so the curves share one offset grid.
    """
    n = nperseg * n_segments
    curves = []
    for k in range(octaves + 1):
        rng = np.random.default_rng([seed, k])
        cb = base_bin * (1 << k)
        fc = cb * sample_rate / nperseg
        tone = synth_jittered_tone(fc, sigma_s, n, sample_rate, rng)
        curves.append(phase_noise_curve(tone, cb, sample_rate, nperseg))
    return curves
