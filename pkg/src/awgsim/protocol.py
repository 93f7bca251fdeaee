"""Host control wire protocol.

Command frames travel over TCP (default port 5025), status packets over UDP
broadcast (default port 5026).  All integers are little-endian.

Command frame:

    bytes 0-3   magic   "AWG1"
    byte  4     opcode
    byte  5     channel
    bytes 6-9   payload_len (u32)
    ...         payload
    last 4      crc32 over all preceding bytes

Response frame (same shape plus a status byte):

    bytes 0-3   magic   "AWGR"
    byte  4     opcode (echoes the command)
    byte  5     channel
    byte  6     status
    bytes 7-10  payload_len (u32)
    ...         payload
    last 4      crc32 over all preceding bytes

Every response payload begins with the board's u64 cycle stamp for the
command; opcode-specific data follows.

Status packet (62 bytes):

    magic "AWGS", board_id u16, firmware_version u32, uptime_cycles u64,
    then 4 channel blocks of (status u8, current_index u16,
    executed_words u64).

A parser never reads past a frame boundary: Truncated asks for more bytes,
BadMagic rejects an implausible header (wrong magic or absurd length), and
BadCrc rejects a complete frame whose checksum fails.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum

from .errors import BadCrc, BadMagic, Truncated
from .memory import NUM_CHANNELS
from .sequencer import SequencerStatus

MAGIC_COMMAND = b"AWG1"
MAGIC_RESPONSE = b"AWGR"
MAGIC_STATUS = b"AWGS"

TCP_PORT_DEFAULT = 5025
UDP_PORT_DEFAULT = 5026

#: Largest payload a well-formed frame may carry (a full channel image is
#: 512 KiB of samples; leave generous slack).
MAX_PAYLOAD_LEN = 2 * 1024 * 1024

FIRMWARE_VERSION = 0x0001_0000


class Opcode(IntEnum):
    WRITE_WDM = 0x01
    WRITE_SDM = 0x02
    READ_WDM = 0x03
    READ_SDM = 0x04
    ARM = 0x05
    STOP = 0x06
    SOFT_TRIG = 0x07
    REG_WRITE = 0x08
    REG_READ = 0x09
    STATUS_QUERY = 0x0A


class ResponseStatus(IntEnum):
    OK = 0
    VALIDATION_FAILED = 1
    BAD_CHANNEL = 2
    BUSY_RUNNING = 3
    BAD_OPCODE = 4
    MALFORMED_PAYLOAD = 5
    OUT_OF_RANGE = 6
    MISALIGNED = 7


_CMD_HEADER = struct.Struct("<4sBBI")
_RESP_HEADER = struct.Struct("<4sBBBI")
_CRC = struct.Struct("<I")


@dataclass
class CommandFrame:
    opcode: int
    channel: int
    payload: bytes = b""


@dataclass
class ResponseFrame:
    opcode: int
    channel: int
    status: ResponseStatus
    payload: bytes = b""


def serialize_frame(frame: CommandFrame) -> bytes:
    Opcode(frame.opcode)  # reject unknown opcodes at the sender
    if len(frame.payload) > MAX_PAYLOAD_LEN:
        raise ValueError(f"payload of {len(frame.payload)} bytes exceeds limit")
    head = _CMD_HEADER.pack(MAGIC_COMMAND, frame.opcode, frame.channel,
                            len(frame.payload))
    body = head + frame.payload
    return body + _CRC.pack(zlib.crc32(body))


def parse_frame(buf) -> tuple[CommandFrame, int]:
    """Parse one command frame from the head of ``buf``.

    Returns (frame, bytes_consumed).  Raises Truncated when more bytes are
    needed, BadMagic for an implausible header, BadCrc for a checksum
    failure (with .frame_len set so a stream decoder can skip the frame).
    """
    buf = bytes(buf)
    if len(buf) < _CMD_HEADER.size:
        raise Truncated(f"need {_CMD_HEADER.size} header bytes, have {len(buf)}")
    magic, opcode, channel, payload_len = _CMD_HEADER.unpack_from(buf)
    if magic != MAGIC_COMMAND:
        raise BadMagic(f"bad magic {magic!r}")
    if payload_len > MAX_PAYLOAD_LEN:
        raise BadMagic(f"implausible payload length {payload_len}")
    total = _CMD_HEADER.size + payload_len + _CRC.size
    if len(buf) < total:
        raise Truncated(f"need {total} bytes, have {len(buf)}")
    body = buf[: _CMD_HEADER.size + payload_len]
    (crc,) = _CRC.unpack_from(buf, _CMD_HEADER.size + payload_len)
    if crc != zlib.crc32(body):
        err = BadCrc("frame checksum mismatch")
        err.frame_len = total
        raise err
    return CommandFrame(opcode, channel, buf[_CMD_HEADER.size:_CMD_HEADER.size
                                             + payload_len]), total


def serialize_response(resp: ResponseFrame) -> bytes:
    head = _RESP_HEADER.pack(MAGIC_RESPONSE, resp.opcode, resp.channel,
                             int(resp.status), len(resp.payload))
    body = head + resp.payload
    return body + _CRC.pack(zlib.crc32(body))


def parse_response(buf) -> tuple[ResponseFrame, int]:
    buf = bytes(buf)
    if len(buf) < _RESP_HEADER.size:
        raise Truncated(f"need {_RESP_HEADER.size} header bytes, have {len(buf)}")
    magic, opcode, channel, status, payload_len = _RESP_HEADER.unpack_from(buf)
    if magic != MAGIC_RESPONSE:
        raise BadMagic(f"bad magic {magic!r}")
    if payload_len > MAX_PAYLOAD_LEN:
        raise BadMagic(f"implausible payload length {payload_len}")
    total = _RESP_HEADER.size + payload_len + _CRC.size
    if len(buf) < total:
        raise Truncated(f"need {total} bytes, have {len(buf)}")
    body = buf[: _RESP_HEADER.size + payload_len]
    (crc,) = _CRC.unpack_from(buf, _RESP_HEADER.size + payload_len)
    if crc != zlib.crc32(body):
        err = BadCrc("response checksum mismatch")
        err.frame_len = total
        raise err
    return ResponseFrame(opcode, channel, ResponseStatus(status),
                         buf[_RESP_HEADER.size:_RESP_HEADER.size + payload_len]), total


class FrameDecoder:
    """Incremental command-frame decoder with resynchronization.

    Garbage never kills the stream: a bad header skips one byte and
    rescans, a bad checksum skips the whole frame.  Dropped byte and frame
    counts are kept for diagnostics.
    """

    def __init__(self):
        self._buf = bytearray()
        self.bad_bytes = 0
        self.bad_frames = 0

    def feed(self, data: bytes):
        self._buf.extend(data)

    def frames(self):
        """Yield every complete frame currently buffered."""
        while True:
            if not self._buf:
                return
            try:
                frame, consumed = parse_frame(self._buf)
            except Truncated:
                return
            except BadMagic:
                del self._buf[:1]
                self.bad_bytes += 1
                continue
            except BadCrc as err:
                del self._buf[: err.frame_len]
                self.bad_frames += 1
                continue
            del self._buf[:consumed]
            yield frame


@dataclass
class ChannelStatus:
    status: SequencerStatus = SequencerStatus.IDLE
    current_index: int = 0
    executed_words: int = 0


_STATUS_HEAD = struct.Struct("<4sHIQ")
_STATUS_CH = struct.Struct("<BHQ")
STATUS_PACKET_SIZE = _STATUS_HEAD.size + NUM_CHANNELS * _STATUS_CH.size


@dataclass
class StatusPacket:
    board_id: int
    uptime_cycles: int
    channels: list[ChannelStatus] = field(
        default_factory=lambda: [ChannelStatus() for _ in range(NUM_CHANNELS)])
    firmware_version: int = FIRMWARE_VERSION

    def pack(self) -> bytes:
        out = bytearray(_STATUS_HEAD.pack(MAGIC_STATUS, self.board_id,
                                          self.firmware_version, self.uptime_cycles))
        for ch in self.channels:
            out.extend(_STATUS_CH.pack(int(ch.status), ch.current_index,
                                       ch.executed_words))
        return bytes(out)

    @classmethod
    def unpack(cls, data: bytes) -> "StatusPacket":
        if len(data) < STATUS_PACKET_SIZE:
            raise Truncated(f"status packet needs {STATUS_PACKET_SIZE} bytes")
        magic, board_id, fw, uptime = _STATUS_HEAD.unpack_from(data)
        if magic != MAGIC_STATUS:
            raise BadMagic(f"bad status magic {magic!r}")
        channels = []
        pos = _STATUS_HEAD.size
        for _ in range(NUM_CHANNELS):
            status, index, words = _STATUS_CH.unpack_from(data, pos)
            pos += _STATUS_CH.size
            channels.append(ChannelStatus(SequencerStatus(status), index, words))
        return cls(board_id, uptime, channels, fw)


# -- validation report wire form ----------------------------------------------

def encode_validation_report(report) -> bytes:
    out = bytearray(struct.pack("<H", len(report.violations)))
    for v in report.violations:
        out.extend(struct.pack("<HB", v.index, int(v.rule)))
    return bytes(out)


def decode_validation_report(data: bytes):
    from .memory import ValidationReport, Violation, ViolationRule

    (count,) = struct.unpack_from("<H", data)
    violations = []
    pos = 2
    for _ in range(count):
        index, rule = struct.unpack_from("<HB", data, pos)
        pos += 3
        violations.append(Violation(index, ViolationRule(rule)))
    return ValidationReport(violations), pos
