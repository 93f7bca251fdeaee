"""Host-side client library.

BoardClient speaks exactly the wire protocol, over real sockets or the
in-process loopback transport; both paths serialize and parse every frame.
Captured traces and event logs come back through the board's trace
directory, the simulated equivalent of the bench instruments watching the
analog outputs.
"""

from __future__ import annotations

import os
import socket
import struct

import numpy as np

from .errors import CommandError, TransportError, Truncated, ValidationFailed
from .frontend import trace_from_binary
from .memory import ENTRY_SIZE, decode_entry, pack_entry_raw
from .protocol import (
    CommandFrame,
    Opcode,
    ResponseStatus,
    StatusPacket,
    decode_validation_report,
    parse_response,
    serialize_frame,
    serialize_response,
)
from .sequencer import EventLog


class LoopbackTransport:
    """In-process transport: frames still cross the full codec path."""

    def __init__(self, server):
        self.server = server

    def roundtrip(self, frame_bytes: bytes) -> bytes:
        from .protocol import parse_frame

        frame, consumed = parse_frame(frame_bytes)
        assert consumed == len(frame_bytes)
        return serialize_response(self.server.handle_command(frame))

    def close(self):
        pass


class TcpTransport:
    """Blocking one-command-at-a-time socket transport."""

    def __init__(self, host: str, port: int, timeout_s: float = 10.0,
                 retries: int = 50, retry_delay_s: float = 0.1):
        import time

        last_err = None
        for _ in range(retries):
            try:
                self.sock = socket.create_connection((host, port), timeout=timeout_s)
                break
            except OSError as err:
                last_err = err
                time.sleep(retry_delay_s)
        else:
            raise TransportError(f"cannot connect to {host}:{port}: {last_err}")
        self.sock.settimeout(timeout_s)

    def roundtrip(self, frame_bytes: bytes) -> bytes:
        try:
            self.sock.sendall(frame_bytes)
            buf = bytearray()
            while True:
                try:
                    _resp, consumed = parse_response(buf)
                    return bytes(buf[:consumed])
                except Truncated:
                    pass
                data = self.sock.recv(1 << 16)
                if not data:
                    raise TransportError("connection closed mid-response")
                buf.extend(data)
        except OSError as err:
            raise TransportError(str(err)) from err

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class BoardClient:
    """Control one board over the wire; mirror of the board's command set."""

    def __init__(self, transport, board_id: int = 0, trace_dir: str | None = None):
        self.transport = transport
        self.board_id = board_id
        self.trace_dir = trace_dir
        self.last_stamp = 0

    def close(self):
        self.transport.close()

    def _request(self, opcode: Opcode, channel: int, payload: bytes = b"",
                 ok_statuses=(ResponseStatus.OK,)):
        raw = self.transport.roundtrip(
            serialize_frame(CommandFrame(opcode, channel, payload)))
        resp, _ = parse_response(raw)
        (stamp,) = struct.unpack_from("<Q", resp.payload)
        self.last_stamp = stamp
        body = resp.payload[8:]
        if resp.status not in ok_statuses:
            report = None
            if resp.status == ResponseStatus.VALIDATION_FAILED:
                report, _ = decode_validation_report(body)
                raise ValidationFailed(report)
            raise CommandError(resp.status, f"opcode {opcode.name}", report)
        return resp.status, body

    # -- memory ------------------------------------------------------------------

    def write_waveform(self, ch: int, word_offset: int, samples):
        """Write samples; returns the board's post-write validation report."""
        data = np.asarray(samples, dtype="<i2").tobytes()
        status, body = self._request(
            Opcode.WRITE_WDM, ch, struct.pack("<I", word_offset) + data,
            ok_statuses=(ResponseStatus.OK, ResponseStatus.VALIDATION_FAILED))
        report, _ = decode_validation_report(body)
        return report

    def read_waveform(self, ch: int, word_offset: int, word_count: int) -> np.ndarray:
        _, body = self._request(Opcode.READ_WDM, ch,
                                struct.pack("<II", word_offset, word_count))
        return np.frombuffer(body, dtype="<i2").copy()

    def write_sequence(self, ch: int, start_index: int, entries):
        data = b"".join(pack_entry_raw(e) for e in entries)
        status, body = self._request(
            Opcode.WRITE_SDM, ch, struct.pack("<I", start_index) + data,
            ok_statuses=(ResponseStatus.OK, ResponseStatus.VALIDATION_FAILED))
        report, _ = decode_validation_report(body)
        return report

    def read_sequence(self, ch: int, start_index: int, count: int):
        _, body = self._request(Opcode.READ_SDM, ch,
                                struct.pack("<II", start_index, count))
        return [decode_entry(body[i * ENTRY_SIZE:(i + 1) * ENTRY_SIZE])
                for i in range(len(body) // ENTRY_SIZE)]

    # -- run control ---------------------------------------------------------------

    def arm(self, ch: int) -> int:
        _, body = self._request(Opcode.ARM, ch)
        (run_id,) = struct.unpack("<I", body)
        return run_id

    def stop(self, ch: int):
        self._request(Opcode.STOP, ch)

    def soft_trigger(self, ch: int) -> int:
        self._request(Opcode.SOFT_TRIG, ch)
        return self.last_stamp

    def reg_write(self, addr: int, value: int):
        self._request(Opcode.REG_WRITE, 0, struct.pack("<II", addr, value))

    def reg_read(self, addr: int) -> int:
        _, body = self._request(Opcode.REG_READ, 0, struct.pack("<I", addr))
        return struct.unpack("<I", body)[0]

    def status(self) -> StatusPacket:
        _, body = self._request(Opcode.STATUS_QUERY, 0)
        return StatusPacket.unpack(body)

    # -- instrument-side capture (trace files written by the board) -----------------

    def _prefix(self, ch: int, run_id: int) -> str:
        if not self.trace_dir:
            raise TransportError("client has no trace directory configured")
        return os.path.join(self.trace_dir,
                            f"board{self.board_id:02d}_ch{ch}_run{run_id:05d}")

    def fetch_capture(self, ch: int, run_id: int):
        with open(self._prefix(ch, run_id) + "_trace.bin", "rb") as f:
            return trace_from_binary(f.read())

    def fetch_events(self, ch: int, run_id: int) -> EventLog:
        with open(self._prefix(ch, run_id) + "_events.bin", "rb") as f:
            return EventLog.from_binary(f.read())
