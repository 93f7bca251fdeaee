"""Board-side control server: command dispatch, TCP listener, UDP status
broadcast.

Commands from any number of client connections are serialized through one
lock, so each board executes a single totally-ordered command stream and
every command gets exactly one response, in order.  Run it in-process for
tests (LoopbackTransport) or as a standalone process:

    python -m awgsim.server --listen 127.0.0.1:5025 --trace-dir ./traces

Command payload layouts (all little-endian; responses start with the u64
cycle stamp of the command):

    WRITE_WDM    u32 word_offset, i16 samples...      -> report
    READ_WDM     u32 word_offset, u32 word_count      -> samples
    WRITE_SDM    u32 start_index, 16-byte entries...  -> report
    READ_SDM     u32 start_index, u32 count           -> entries
    ARM          (empty)                              -> u32 run_id
    STOP         (empty)                              ->
    SOFT_TRIG    (empty)                              ->
    REG_WRITE    u32 addr, u32 value                  ->
    REG_READ     u32 addr                             -> u32 value
    STATUS_QUERY (empty)                              -> status packet
"""

from __future__ import annotations

import argparse
import socket
import struct
import threading
import time

import numpy as np

from .board import BoardSim
from .errors import (
    BusyRunning,
    MisalignedLength,
    OutOfRange,
    ValidationFailed,
)
from .memory import NUM_CHANNELS, decode_entry, pack_entry_raw, ENTRY_SIZE
from .protocol import (
    UDP_PORT_DEFAULT,
    CommandFrame,
    FrameDecoder,
    Opcode,
    ResponseFrame,
    ResponseStatus,
    encode_validation_report,
    serialize_response,
)

_CHANNEL_OPS = {Opcode.WRITE_WDM, Opcode.WRITE_SDM, Opcode.READ_WDM,
                Opcode.READ_SDM, Opcode.ARM, Opcode.STOP, Opcode.SOFT_TRIG}


class BoardServer:
    """Protocol front end for one BoardSim."""

    def __init__(self, board: BoardSim):
        self.board = board
        self.lock = threading.RLock()
        self._tcp_sock: socket.socket | None = None
        self._udp_thread: threading.Thread | None = None
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    # -- command dispatch ------------------------------------------------------

    def handle_command(self, frame: CommandFrame) -> ResponseFrame:
        """Apply one command and build its single response."""
        with self.lock:
            return self._dispatch(frame)

    def _dispatch(self, frame: CommandFrame) -> ResponseFrame:
        board = self.board

        def resp(status, payload=b"", stamp=None):
            if stamp is None:
                stamp = board.last_command_cycle
            return ResponseFrame(frame.opcode, frame.channel, status,
                                 struct.pack("<Q", stamp) + payload)

        try:
            op = Opcode(frame.opcode)
        except ValueError:
            board._tick()
            return resp(ResponseStatus.BAD_OPCODE)
        if op in _CHANNEL_OPS and not 0 <= frame.channel < NUM_CHANNELS:
            board._tick()
            return resp(ResponseStatus.BAD_CHANNEL)

        ch = frame.channel
        p = frame.payload
        try:
            if op == Opcode.WRITE_WDM:
                if len(p) < 4 or (len(p) - 4) % 2:
                    raise _Malformed
                (offset,) = struct.unpack_from("<I", p)
                samples = np.frombuffer(p, dtype="<i2", offset=4)
                report = board.write_waveform(ch, offset, samples)
                status = (ResponseStatus.OK if report.ok
                          else ResponseStatus.VALIDATION_FAILED)
                return resp(status, encode_validation_report(report))

            if op == Opcode.READ_WDM:
                if len(p) != 8:
                    raise _Malformed
                offset, count = struct.unpack("<II", p)
                data = board.read_waveform(ch, offset, count)
                return resp(ResponseStatus.OK, data.astype("<i2").tobytes())

            if op == Opcode.WRITE_SDM:
                if len(p) < 4 or (len(p) - 4) % ENTRY_SIZE:
                    raise _Malformed
                (start,) = struct.unpack_from("<I", p)
                entries = [decode_entry(p[4 + i * ENTRY_SIZE: 4 + (i + 1) * ENTRY_SIZE])
                           for i in range((len(p) - 4) // ENTRY_SIZE)]
                report = board.write_sequence(ch, start, entries)
                status = (ResponseStatus.OK if report.ok
                          else ResponseStatus.VALIDATION_FAILED)
                return resp(status, encode_validation_report(report))

            if op == Opcode.READ_SDM:
                if len(p) != 8:
                    raise _Malformed
                start, count = struct.unpack("<II", p)
                entries = board.read_sequence(ch, start, count)
                return resp(ResponseStatus.OK,
                            b"".join(pack_entry_raw(e) for e in entries))

            if op == Opcode.ARM:
                run_id = board.arm(ch)
                return resp(ResponseStatus.OK, struct.pack("<I", run_id))

            if op == Opcode.STOP:
                board.stop(ch)
                return resp(ResponseStatus.OK)

            if op == Opcode.SOFT_TRIG:
                board.soft_trigger(ch)
                return resp(ResponseStatus.OK)

            if op == Opcode.REG_WRITE:
                if len(p) != 8:
                    raise _Malformed
                addr, value = struct.unpack("<II", p)
                board.reg_write(addr, value)
                return resp(ResponseStatus.OK)

            if op == Opcode.REG_READ:
                if len(p) != 4:
                    raise _Malformed
                (addr,) = struct.unpack("<I", p)
                value = board.reg_read(addr)
                return resp(ResponseStatus.OK, struct.pack("<I", value))

            if op == Opcode.STATUS_QUERY:
                packet = board.status_query()
                return resp(ResponseStatus.OK, packet.pack())

            board._tick()
            return resp(ResponseStatus.BAD_OPCODE)

        except _Malformed:
            board._tick()
            return resp(ResponseStatus.MALFORMED_PAYLOAD)
        except ValidationFailed as err:
            return resp(ResponseStatus.VALIDATION_FAILED,
                        encode_validation_report(err.report))
        except BusyRunning:
            return resp(ResponseStatus.BUSY_RUNNING)
        except MisalignedLength:
            return resp(ResponseStatus.MISALIGNED)
        except OutOfRange:
            return resp(ResponseStatus.OUT_OF_RANGE)

    # -- TCP -------------------------------------------------------------------

    def serve_tcp(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """Start the TCP listener in the background; returns (host, port)."""
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, port))
        sock.listen(8)
        sock.settimeout(0.2)
        self._tcp_sock = sock
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)
        return sock.getsockname()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _addr = self._tcp_sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(target=self._serve_connection, args=(conn,),
                                 daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_connection(self, conn: socket.socket):
        decoder = FrameDecoder()
        conn.settimeout(0.2)
        try:
            while not self._stop.is_set():
                try:
                    data = conn.recv(1 << 16)
                except socket.timeout:
                    continue
                except OSError:
                    return
                if not data:
                    return
                decoder.feed(data)
                for frame in decoder.frames():
                    conn.sendall(serialize_response(self.handle_command(frame)))
        finally:
            conn.close()

    # -- UDP status broadcast ----------------------------------------------------

    def start_udp_broadcast(self, target=None, poll_s: float = 0.02):
        """Publish pending status snapshots over UDP.

        The board queues one snapshot each time its uptime crosses the
        STATUS_PERIOD register; this thread drains the queue.  With no
        explicit target, packets go to the LAN broadcast address (loopback
        as fallback).
        """
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_BROADCAST, 1)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)

        def run():
            while not self._stop.is_set():
                with self.lock:
                    packets = self.board.drain_status_packets()
                for pkt in packets:
                    data = pkt.pack()
                    if target is not None:
                        sock.sendto(data, target)
                    else:
                        try:
                            sock.sendto(data, ("<broadcast>", UDP_PORT_DEFAULT))
                        except OSError:
                            sock.sendto(data, ("127.0.0.1", UDP_PORT_DEFAULT))
                time.sleep(poll_s)
            sock.close()

        t = threading.Thread(target=run, daemon=True)
        t.start()
        self._udp_thread = t
        self._threads.append(t)

    def close(self):
        self._stop.set()
        if self._tcp_sock is not None:
            try:
                self._tcp_sock.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=1.0)


class _Malformed(Exception):
    pass


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Run a simulated AWG board as a standalone server.")
    parser.add_argument("--listen", default="127.0.0.1:5025",
                        metavar="HOST:PORT")
    parser.add_argument("--board-id", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trace-dir", default=None)
    parser.add_argument("--udp-target", default=None, metavar="HOST:PORT",
                        help="status packet destination (default: broadcast)")
    args = parser.parse_args(argv)

    host, port = args.listen.rsplit(":", 1)
    board = BoardSim(board_id=args.board_id, rng_seed=args.seed,
                     trace_dir=args.trace_dir)
    server = BoardServer(board)
    addr = server.serve_tcp(host, int(port))
    target = None
    if args.udp_target:
        uh, up = args.udp_target.rsplit(":", 1)
        target = (uh, int(up))
    server.start_udp_broadcast(target=target)
    print(f"board {args.board_id} listening on {addr[0]}:{addr[1]}", flush=True)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
