import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awgsim.errors import BadCrc, BadMagic, Truncated
from awgsim.memory import ValidationReport, Violation, ViolationRule
from awgsim.protocol import (
    MAX_PAYLOAD_LEN,
    STATUS_PACKET_SIZE,
    ChannelStatus,
    CommandFrame,
    FrameDecoder,
    Opcode,
    ResponseFrame,
    ResponseStatus,
    StatusPacket,
    decode_validation_report,
    encode_validation_report,
    parse_frame,
    parse_response,
    serialize_frame,
    serialize_response,
)
from awgsim.sequencer import SequencerStatus


class TestCommandFraming:
    def test_stop_frame_is_14_bytes(self):
        data = serialize_frame(CommandFrame(Opcode.STOP, 0))
        assert len(data) == 14
        frame, consumed = parse_frame(data)
        assert consumed == 14
        assert frame.opcode == Opcode.STOP
        assert frame.payload == b""

    def test_round_trip_with_payload(self):
        payload = bytes(range(256))
        data = serialize_frame(CommandFrame(Opcode.WRITE_WDM, 3, payload))
        frame, consumed = parse_frame(data)
        assert consumed == len(data)
        assert frame.channel == 3
        assert frame.payload == payload

    def test_flipped_byte_is_bad_crc(self):
        data = bytearray(serialize_frame(CommandFrame(Opcode.ARM, 1, b"xyz")))
        data[11] ^= 0x40
        with pytest.raises(BadCrc):
            parse_frame(bytes(data))

    def test_bad_magic(self):
        data = bytearray(serialize_frame(CommandFrame(Opcode.ARM, 1)))
        data[0] = ord("X")
        with pytest.raises(BadMagic):
            parse_frame(bytes(data))

    def test_absurd_length_is_bad_magic(self):
        head = b"AWG1" + bytes([1, 0]) + struct.pack("<I", MAX_PAYLOAD_LEN + 1)
        with pytest.raises(BadMagic):
            parse_frame(head + b"\0" * 64)

    def test_truncated_asks_for_more(self):
        data = serialize_frame(CommandFrame(Opcode.WRITE_WDM, 0, b"abcdef"))
        for cut in (0, 5, 9, len(data) - 1):
            with pytest.raises(Truncated):
                parse_frame(data[:cut])

    def test_parser_does_not_consume_past_frame(self):
        a = serialize_frame(CommandFrame(Opcode.ARM, 0))
        b = serialize_frame(CommandFrame(Opcode.STOP, 1))
        frame, consumed = parse_frame(a + b)
        assert frame.opcode == Opcode.ARM
        assert consumed == len(a)

    @settings(max_examples=300)
    @given(st.binary(max_size=64))
    def test_fuzz_parse_is_total(self, blob):
        # Any byte string yields a frame or one of the three framing errors.
        try:
            parse_frame(blob)
        except (BadMagic, BadCrc, Truncated):
            pass

    def test_decoder_resynchronizes(self):
        good = serialize_frame(CommandFrame(Opcode.ARM, 2))
        corrupted = bytearray(serialize_frame(CommandFrame(Opcode.STOP, 0)))
        corrupted[12] ^= 1  # break the CRC
        dec = FrameDecoder()
        dec.feed(b"\x99\x99" + bytes(corrupted) + b"junk" + good)
        frames = list(dec.frames())
        assert [f.opcode for f in frames] == [Opcode.ARM]
        assert dec.bad_frames == 1
        assert dec.bad_bytes >= 2

    def test_decoder_handles_split_feeds(self):
        data = serialize_frame(CommandFrame(Opcode.WRITE_WDM, 1, b"\x01" * 100))
        dec = FrameDecoder()
        out = []
        for i in range(0, len(data), 7):
            dec.feed(data[i : i + 7])
            out.extend(dec.frames())
        assert len(out) == 1
        assert out[0].payload == b"\x01" * 100


class TestResponseFraming:
    def test_round_trip(self):
        resp = ResponseFrame(Opcode.READ_WDM, 2, ResponseStatus.OK, b"payload")
        back, consumed = parse_response(serialize_response(resp))
        assert back == resp

    def test_status_byte_preserved(self):
        for status in ResponseStatus:
            resp = ResponseFrame(Opcode.ARM, 0, status)
            back, _ = parse_response(serialize_response(resp))
            assert back.status == status


class TestStatusPacket:
    def test_pack_size(self):
        pkt = StatusPacket(board_id=3, uptime_cycles=123456789)
        assert len(pkt.pack()) == STATUS_PACKET_SIZE == 62

    def test_round_trip(self):
        channels = [
            ChannelStatus(SequencerStatus.RUNNING, 7, 1000),
            ChannelStatus(SequencerStatus.DONE, 2, 4096),
            ChannelStatus(SequencerStatus.IDLE, 0, 0),
            ChannelStatus(SequencerStatus.ARMED_WAITING_TRIGGER, 1, 12),
        ]
        pkt = StatusPacket(board_id=9, uptime_cycles=(1 << 40) + 5,
                           channels=channels)
        back = StatusPacket.unpack(pkt.pack())
        assert back == pkt


class TestValidationReportCodec:
    def test_round_trip(self):
        report = ValidationReport([
            Violation(0, ViolationRule.MIN_LENGTH),
            Violation(17, ViolationRule.BAD_JUMP),
        ])
        blob = encode_validation_report(report)
        back, consumed = decode_validation_report(blob)
        assert consumed == len(blob)
        assert back.violations == report.violations

    def test_empty_report(self):
        back, _ = decode_validation_report(encode_validation_report(
            ValidationReport()))
        assert back.ok
