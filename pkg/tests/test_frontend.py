import numpy as np
import pytest

from awgsim.errors import InvariantViolation
from awgsim.frontend import (
    SAMPLE_PERIOD_S,
    WORD_PERIOD_S,
    DacTransfer,
    IqPlate,
    TimingModel,
    dac_convert,
    design_lowpass_taps,
    differential_outputs,
    iq_upconvert,
    lowpass_filter,
    timestamp_samples,
    trace_from_binary,
    trace_from_csv,
    trace_to_binary,
    trace_to_csv,
)

FS = 2e9


class TestDacTransfer:
    def test_midscale_is_zero(self):
        assert dac_convert(0, DacTransfer()) == 0.0

    def test_positive_fullscale(self):
        v = dac_convert(32767, DacTransfer(v_fullscale=0.5))
        assert v == pytest.approx(0.5 * 32767 / 32768, abs=1e-15)

    def test_inl_offset_linearity(self):
        prof = np.zeros(65536)
        code = 1234
        prof[code + 32768] = 2.0
        ideal = DacTransfer()
        bent = DacTransfer(inl_profile=prof)
        lsb = 0.5 / 32768
        assert dac_convert(code, bent) == pytest.approx(
            dac_convert(code, ideal) + 2 * lsb, abs=1e-18)

    def test_array_path_matches_scalar(self):
        rng = np.random.default_rng(2)
        prof = rng.uniform(-2, 2, 65536)
        transfer = DacTransfer(inl_profile=prof)
        codes = rng.integers(-32768, 32768, 4096).astype(np.int16)
        arr = dac_convert(codes, transfer)
        scalars = np.array([dac_convert(int(c), transfer) for c in codes])
        assert np.array_equal(arr, scalars)

    def test_large_array_gather_matches_small(self):
        # Above the numba threshold the compiled gather must agree exactly.
        rng = np.random.default_rng(3)
        prof = rng.uniform(-1, 1, 65536)
        transfer = DacTransfer(inl_profile=prof)
        codes = rng.integers(-32768, 32768, 1 << 16).astype(np.int16)
        big = dac_convert(codes, transfer)
        table = transfer.voltage_table()
        expect = table[codes.astype(np.int64) + 32768]
        assert np.array_equal(big, expect)

    def test_monotone_when_dnl_bounded(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            # Step deviation < 1 LSB keeps the transfer monotone.
            steps = 1.0 + rng.uniform(-0.49, 0.49, 65535)
            prof = np.concatenate([[0.0], np.cumsum(steps) - np.arange(1, 65536)])
            prof -= prof[0]
            table = DacTransfer(inl_profile=prof).voltage_table()
            assert np.all(np.diff(table) > 0)

    def test_profile_shape_enforced(self):
        with pytest.raises(InvariantViolation):
            DacTransfer(inl_profile=np.zeros(100))


class TestDifferential:
    def test_zero(self):
        assert differential_outputs(0.0) == (0.0, 0.0)

    def test_symmetric_split(self):
        p, m = differential_outputs(0.4)
        assert p == pytest.approx(0.2)
        assert m == pytest.approx(-0.2)

    def test_common_mode_zero(self):
        rng = np.random.default_rng(8)
        v = rng.standard_normal(1000)
        p, m = differential_outputs(v)
        assert np.all(p + m == 0.0)
        assert np.allclose(p - m, v)


class TestLowpass:
    def test_dc_gain_unity(self):
        x = np.full(4096, 0.3)
        y = lowpass_filter(x)
        settled = y[200:-200]
        assert np.allclose(settled, 0.3, atol=1e-9)

    def test_impulse_response_is_taps(self):
        taps = design_lowpass_taps()
        x = np.zeros(1024)
        x[512] = 1.0
        y = lowpass_filter(x, taps=taps)
        n = taps.size
        mid = 512 - n // 2
        assert np.allclose(y[mid : mid + n], taps)

    def test_stopband_attenuation(self):
        # 900 MHz tone must sit >= 40 dB below a 100 MHz tone after filtering.
        n = 1 << 14
        t = np.arange(n) / FS
        def tone_gain(f):
            x = np.sin(2 * np.pi * f * t)
            y = lowpass_filter(x)
            spec = np.abs(np.fft.rfft(y * np.hanning(n)))
            return spec[int(round(f * n / FS))]
        ratio_db = 20 * np.log10(tone_gain(900e6) / tone_gain(100e6))
        assert ratio_db <= -40


class TestIqUpconvert:
    def test_cos_at_zero(self):
        plate = IqPlate(lo_frequency=5e9)
        assert iq_upconvert(1.0, 0.0, plate, 0.0) == pytest.approx(1.0)

    def test_zero_inputs(self):
        plate = IqPlate(lo_frequency=5e9)
        t = np.arange(100) * SAMPLE_PERIOD_S
        assert not iq_upconvert(0.0, 0.0, plate, t).any()

    def test_constant_iq_gives_single_tone(self):
        # (i, q) = (cos phi, sin phi) produces a pure tone at f_lo, phase phi.
        n = 4096
        fs = 16e9
        bin_lo = 1024
        f_lo = bin_lo * fs / n
        phi = 0.7
        plate = IqPlate(lo_frequency=f_lo)
        t = np.arange(n) / fs
        rf = iq_upconvert(np.cos(phi), np.sin(phi), plate, t)
        spec = np.fft.rfft(rf)
        power = np.abs(spec) ** 2
        assert power[bin_lo] / power.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.angle(spec[bin_lo]) == pytest.approx(phi, abs=1e-9)


class TestTimestamps:
    def test_deterministic_arithmetic(self):
        tm = TimingModel(pipeline_delay=2, channel_skew=0.0, jitter_sigma=0.0)
        pairs = timestamp_samples(np.zeros(4), tm, trigger_time=0.0)
        assert pairs[0, 0] == pytest.approx(8e-9, abs=1e-18)
        assert np.allclose(np.diff(pairs[:, 0]), SAMPLE_PERIOD_S)

    def test_constant_skew_offset(self):
        a = TimingModel(channel_skew=0.0)
        b = TimingModel(channel_skew=100e-12)
        ta = timestamp_samples(np.zeros(16), a, 0.0)[:, 0]
        tb = timestamp_samples(np.zeros(16), b, 0.0)[:, 0]
        assert np.allclose(tb - ta, 100e-12)

    def test_jitter_statistics(self):
        tm = TimingModel(jitter_sigma=10e-12, rng_seed=77)
        rng = tm.make_rng()
        edges = np.array([
            timestamp_samples(np.zeros(1), tm, 0.0, rng)[0, 0]
            for _ in range(10_000)
        ])
        std = edges.std()
        assert 9e-12 <= std <= 11e-12

    def test_zero_sigma_reproducible(self):
        tm = TimingModel(jitter_sigma=0.0, rng_seed=1)
        a = timestamp_samples(np.arange(8.0), tm, 1e-6)
        b = timestamp_samples(np.arange(8.0), tm, 1e-6)
        assert np.array_equal(a, b)


class TestTraceFormats:
    def test_binary_round_trip(self):
        rng = np.random.default_rng(5)
        t = np.sort(rng.uniform(0, 1e-6, 100))
        v = rng.standard_normal(100)
        t2, v2 = trace_from_binary(trace_to_binary(t, v))
        assert np.array_equal(t, t2)
        assert np.array_equal(v, v2)

    def test_csv_round_trip(self):
        rng = np.random.default_rng(6)
        t = np.sort(rng.uniform(0, 1e-6, 50))
        v = rng.standard_normal(50)
        t2, v2 = trace_from_csv(trace_to_csv(t, v))
        assert np.array_equal(t, t2)
        assert np.array_equal(v, v2)
