import socket
import struct
import threading
import time

import numpy as np
import pytest

from awgsim.board import BoardSim, Reg
from awgsim.client import BoardClient, LoopbackTransport, TcpTransport
from awgsim.errors import CommandError, ValidationFailed
from awgsim.memory import (
    EntryFlags,
    SequenceEntry,
    TriggerSource,
    ViolationRule,
    WDM_CAPACITY_SAMPLES,
)
from awgsim.protocol import (
    CommandFrame,
    FrameDecoder,
    Opcode,
    ResponseStatus,
    StatusPacket,
    parse_response,
    serialize_frame,
)
from awgsim.sequencer import EventKind, SequencerStatus
from awgsim.server import BoardServer

END = EntryFlags.END_OF_SEQUENCE


@pytest.fixture
def loop_client(tmp_path):
    board = BoardSim(board_id=0, trace_dir=str(tmp_path))
    server = BoardServer(board)
    client = BoardClient(LoopbackTransport(server), board_id=0,
                         trace_dir=str(tmp_path))
    client.board = board  # test-side peek, not used by the protocol
    return client


def simple_program(client, ch=0, n_words=4, wait=False):
    samples = np.arange(n_words * 8, dtype=np.int16)
    client.write_waveform(ch, 0, samples)
    flags = END | (EntryFlags.WAIT_TRIGGER if wait else EntryFlags(0))
    trig = TriggerSource.SOFTWARE if wait else TriggerSource.NONE
    client.write_sequence(ch, 0, [SequenceEntry(
        flags=flags, length=n_words, trigger_source=trig)])
    return samples


class TestMemoryCommands:
    def test_wdm_write_then_read_identical(self, loop_client):
        rng = np.random.default_rng(1)
        data = rng.integers(-32768, 32768, 1024).astype(np.int16)
        report = loop_client.write_waveform(0, 16, data)
        assert not report.ok  # empty program: not yet runnable
        back = loop_client.read_waveform(0, 16, 128)
        assert np.array_equal(back, data)

    def test_sdm_write_readback(self, loop_client):
        entries = [
            SequenceEntry(length=8, counter=3),
            SequenceEntry(flags=END, start_addr=8, length=4,
                          trigger_source=TriggerSource.EXTERNAL),
        ]
        loop_client.write_sequence(0, 0, entries)
        back = loop_client.read_sequence(0, 0, 2)
        assert back == entries

    def test_short_entry_reports_min_length(self, loop_client):
        report = loop_client.write_sequence(0, 0, [SequenceEntry(
            flags=END, length=3)])
        assert ViolationRule.MIN_LENGTH in report.rules()

    def test_bad_channel(self, loop_client):
        with pytest.raises(CommandError) as err:
            loop_client.read_waveform(7, 0, 1)
        assert err.value.status == ResponseStatus.BAD_CHANNEL

    def test_out_of_range_read(self, loop_client):
        with pytest.raises(CommandError) as err:
            loop_client.read_waveform(0, 1 << 20, 4)
        assert err.value.status == ResponseStatus.OUT_OF_RANGE

    def test_misaligned_write(self, loop_client):
        with pytest.raises(CommandError) as err:
            loop_client.write_waveform(0, 0, np.zeros(12, dtype=np.int16))
        assert err.value.status == ResponseStatus.MISALIGNED


class TestRunCommands:
    def test_arm_invalid_program_fails(self, loop_client):
        loop_client.write_sequence(0, 0, [SequenceEntry(flags=END, length=3)])
        with pytest.raises(ValidationFailed) as err:
            loop_client.arm(0)
        assert ViolationRule.MIN_LENGTH in err.value.report.rules()

    def test_immediate_program_runs_on_arm(self, loop_client):
        samples = simple_program(loop_client, n_words=4)
        run_id = loop_client.arm(0)
        status = loop_client.status()
        assert status.channels[0].status == SequencerStatus.DONE
        assert status.channels[0].executed_words == 4
        times, volts = loop_client.fetch_capture(0, run_id)
        assert volts.size == 32
        assert np.allclose(volts, samples * 0.5 / 32768)

    def test_soft_trigger_stamps_event_log(self, loop_client):
        simple_program(loop_client, wait=True)
        run_id = loop_client.arm(0)
        stamp = loop_client.soft_trigger(0)
        events = loop_client.fetch_events(0, run_id)
        seen = [e for e in events if e.kind == EventKind.TRIGGER_SEEN]
        assert len(seen) == 1
        assert seen[0].cycle == stamp

    def test_busy_write_rejected_while_armed(self, loop_client):
        simple_program(loop_client, wait=True)
        loop_client.arm(0)
        with pytest.raises(CommandError) as err:
            loop_client.write_waveform(0, 0, np.zeros(8, dtype=np.int16))
        assert err.value.status == ResponseStatus.BUSY_RUNNING
        # Other channels stay writable.
        loop_client.write_waveform(1, 0, np.zeros(8, dtype=np.int16))
        loop_client.stop(0)
        loop_client.write_waveform(0, 0, np.zeros(8, dtype=np.int16))

    def test_stop_returns_channel_to_idle(self, loop_client):
        simple_program(loop_client, wait=True)
        loop_client.arm(0)
        loop_client.stop(0)
        assert loop_client.status().channels[0].status == SequencerStatus.IDLE

    def test_wait_none_uses_default_trigger_register(self, loop_client):
        # WAIT with source NONE resolves to the default-source register.
        samples = np.arange(32, dtype=np.int16)
        loop_client.write_waveform(0, 0, samples)
        loop_client.write_sequence(0, 0, [SequenceEntry(
            flags=END | EntryFlags.WAIT_TRIGGER, length=4,
            trigger_source=TriggerSource.NONE)])
        loop_client.reg_write(Reg.TRIG_DEFAULT, int(TriggerSource.SOFTWARE))
        run_id = loop_client.arm(0)
        loop_client.soft_trigger(0)
        _, volts = loop_client.fetch_capture(0, run_id)
        assert volts.size == 32


class TestRegisters:
    def test_read_back_written_value(self, loop_client):
        loop_client.reg_write(Reg.RUN_BUDGET, 12345)
        assert loop_client.reg_read(Reg.RUN_BUDGET) == 12345

    def test_reserved_reads_zero(self, loop_client):
        loop_client.reg_write(0xDEAD, 77)
        assert loop_client.reg_read(0xDEAD) == 0

    def test_defaults(self, loop_client):
        assert loop_client.reg_read(Reg.D_PIPE) == 2
        assert loop_client.reg_read(Reg.CAPTURE_DECIM) == 1


class TestStatusBroadcast:
    def test_idle_board_packet(self, loop_client):
        pkt = loop_client.status()
        assert all(c.status == SequencerStatus.IDLE for c in pkt.channels)
        assert all(c.executed_words == 0 for c in pkt.channels)

    def test_executed_words_after_run(self, loop_client):
        simple_program(loop_client, n_words=4)
        loop_client.write_sequence(0, 0, [SequenceEntry(
            flags=END, length=4, counter=3)])
        loop_client.arm(0)
        assert loop_client.status().channels[0].executed_words == 12

    def test_uptime_strictly_increases(self, loop_client):
        board = loop_client.board
        board.reg_write(Reg.STATUS_PERIOD, 8)
        simple_program(loop_client, n_words=16)
        loop_client.arm(0)
        for _ in range(5):
            loop_client.status()
        packets = board.drain_status_packets()
        assert len(packets) >= 2
        uptimes = [p.uptime_cycles for p in packets]
        assert all(b > a for a, b in zip(uptimes, uptimes[1:]))

    def test_snapshot_contents_at_period_boundary(self, loop_client):
        # Snapshot taken mid-run reflects the exact words executed by then.
        board = loop_client.board
        board.reg_write(Reg.STATUS_PERIOD, 1 << 30)  # silence periodic packets
        simple_program(loop_client, n_words=64)
        board.reg_write(Reg.STATUS_PERIOD, 16)
        arm_stamp_guess = board.cycle + 1
        loop_client.arm(0)
        packets = board.drain_status_packets()
        assert packets, "run must cross at least one period boundary"
        for pkt in packets:
            executed = pkt.channels[0].executed_words
            words_by_then = max(0, pkt.uptime_cycles - arm_stamp_guess)
            assert executed == min(64, words_by_then)


class TestOverTcp:
    def test_full_channel_image_round_trip(self, tmp_path):
        board = BoardSim(board_id=1, trace_dir=str(tmp_path))
        server = BoardServer(board)
        host, port = server.serve_tcp()
        try:
            client = BoardClient(TcpTransport(host, port), board_id=1,
                                 trace_dir=str(tmp_path))
            rng = np.random.default_rng(3)
            image = rng.integers(-32768, 32768, WDM_CAPACITY_SAMPLES
                                 ).astype(np.int16)
            client.write_waveform(2, 0, image)
            back = client.read_waveform(2, 0, WDM_CAPACITY_SAMPLES // 8)
            assert np.array_equal(back, image)
            client.close()
        finally:
            server.close()

    def test_pipelined_frames_ordered_responses(self, tmp_path):
        board = BoardSim(board_id=0)
        server = BoardServer(board)
        host, port = server.serve_tcp()
        try:
            sock = socket.create_connection((host, port), timeout=5)
            blob = b"".join([
                serialize_frame(CommandFrame(Opcode.REG_WRITE, 0,
                                             struct.pack("<II", Reg.RUN_BUDGET,
                                                         n)))
                for n in (111, 222, 333)
            ] + [serialize_frame(CommandFrame(Opcode.REG_READ, 0,
                                              struct.pack("<I", Reg.RUN_BUDGET)))])
            sock.sendall(blob)
            buf = bytearray()
            responses = []
            while len(responses) < 4:
                data = sock.recv(1 << 16)
                assert data
                buf.extend(data)
                while True:
                    try:
                        resp, consumed = parse_response(bytes(buf))
                    except Exception:
                        break
                    responses.append(resp)
                    del buf[:consumed]
            assert [r.opcode for r in responses] == [Opcode.REG_WRITE] * 3 + \
                [Opcode.REG_READ]
            stamps = [struct.unpack_from("<Q", r.payload)[0] for r in responses]
            assert stamps == sorted(stamps)
            assert struct.unpack_from("<I", responses[-1].payload, 8)[0] == 333
            sock.close()
        finally:
            server.close()

    def test_udp_status_packets_received(self, tmp_path):
        recv = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        recv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        recv.bind(("127.0.0.1", 0))
        recv.settimeout(5.0)
        target = recv.getsockname()

        board = BoardSim(board_id=4)
        board.reg_write(Reg.STATUS_PERIOD, 4)
        server = BoardServer(board)
        server.start_udp_broadcast(target=target, poll_s=0.01)
        host, port = server.serve_tcp()
        try:
            client = BoardClient(TcpTransport(host, port))
            samples = np.arange(64, dtype=np.int16)
            client.write_waveform(0, 0, samples)
            client.write_sequence(0, 0, [SequenceEntry(flags=END, length=8)])
            client.arm(0)
            pkt = StatusPacket.unpack(recv.recv(4096))
            assert pkt.board_id == 4
            client.close()
        finally:
            server.close()
            recv.close()


class TestProtocolSafety:
    def test_fuzz_leaves_server_recoverable(self):
        board = BoardSim(board_id=0)
        server = BoardServer(board)
        decoder = FrameDecoder()
        rng = np.random.default_rng(99)
        # Remember a known memory state to prove no partial application.
        good = serialize_frame(CommandFrame(
            Opcode.WRITE_WDM, 0, struct.pack("<I", 0)
            + np.arange(8, dtype=np.int16).tobytes()))
        decoder.feed(good)
        for frame in decoder.frames():
            server.handle_command(frame)
        before = board.wdms[0].samples.copy()

        for _ in range(2000):
            blob = rng.integers(0, 256, int(rng.integers(1, 80)),
                                dtype=np.uint8).tobytes()
            decoder.feed(blob)
            for frame in decoder.frames():
                server.handle_command(frame)
        assert np.array_equal(board.wdms[0].samples, before), \
            "fuzz must not corrupt memory"
        # The server still answers a valid command afterwards.
        decoder2 = FrameDecoder()
        decoder2.feed(serialize_frame(CommandFrame(Opcode.STATUS_QUERY, 0)))
        frames = list(decoder2.frames())
        resp = server.handle_command(frames[0])
        assert resp.status == ResponseStatus.OK
