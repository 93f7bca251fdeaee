"""Scenario runner: named measurement campaigns over simulated boards.

A scenario file is key=value text ('#' comments).  Core keys:

    name=paper-iii-a
    topology=bundled:single_board        # or a path relative to the file
    suites=linearity,sfdr                # from the fixed suite set
    seed=12345
    workers=1
    trace_dir=<dir>                      # default: <out>/traces

Suite parameters use dotted prefixes (see _SUITE_DEFAULTS).  Channels may
also be loaded from program files at setup:

    channel.<board>.<ch>.program=<path>
    trigger.events_us=0.5,1.5            # external events for loaded programs

Program file format (key=value plus entry lines):

    waveform=ramp:0:256                  # ramp:<start>:<count> | zeros:<count>
    entry: flags=WAIT|END start=0 len=4 trig=SOFTWARE counter=1 jump=0

The runner drives every board exclusively through the wire protocol;
captured traces and event logs come back through the boards' trace
directory, the simulator's stand-in for the bench instruments.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .board import BoardSim, Reg
from .client import BoardClient, LoopbackTransport, TcpTransport
from .errors import ConfigError, TransportError
from .fabric import BoardTopology, distribute_trigger, parse_topology
from .frontend import SAMPLE_PERIOD_S, WORD_PERIOD_S, DacTransfer, dac_convert
from .memory import (
    MIN_ENTRY_WORDS,
    NUM_CHANNELS,
    WDM_CAPACITY_WORDS,
    EntryFlags,
    SequenceEntry,
    SequenceMemory,
    TriggerSource,
    WaveformMemory,
)
from .metrology import (
    N_CODES,
    analytic_phase_noise,
    compute_inl_dnl,
    jitter_statistics,
    phase_noise_scaling_check,
    ramp_sweep_procedure,
    relative_edge_times,
    retrigger_program,
    sfdr_points_csv,
    sfdr_sweep,
    simulated_scaling_curves,
)
from .sequencer import flatten_oracle
from .server import BoardServer

SUITE_NAMES = ("linearity", "sfdr", "jitter", "phase_noise", "seamless")

_SUITE_DEFAULTS = {
    "linearity.dwell_cycles": "64",
    "linearity.bound_lsb": "2.0",
    "linearity.profile": "random",         # random | ideal
    "linearity.profile_amplitude_lsb": "1.8",
    "sfdr.n_fft": "8192",
    "sfdr.amplitude": "32767",
    "sfdr.min_dbc": "80.0",
    "jitter.events": "10000",
    "jitter.spacing_cycles": "16",
    "jitter.band_ps": "9.22,10.89",
    "jitter.band_tolerance": "0.10",
    "jitter.mean_ps": "9.9",
    "jitter.mean_tolerance": "0.10",
    "jitter.skew_pair": "0:0,0:1",
    "jitter.skew_ps": "100",
    "jitter.skew_tolerance_ps": "1.0",
    "phase_noise.sigma_ps": "10",
    "phase_noise.base_bin": "819",
    "phase_noise.nperseg": "16384",
    "phase_noise.segments": "96",
    "phase_noise.octave_tolerance_db": "0.5",
    "phase_noise.two_octave_tolerance_db": "0.7",
    "seamless.programs": "1000",
    "seamless.max_entries": "12",
    "seamless.max_len": "12",
    "seamless.max_counter": "4",
}


@dataclass
class Scenario:
    name: str
    topology_text: str
    suites: list[str]
    seed: int = 0
    workers: int = 1
    params: dict = field(default_factory=dict)
    programs: dict = field(default_factory=dict)     # (board, ch) -> program path
    trigger_events_us: list = field(default_factory=list)
    trace_dir: str | None = None
    base_dir: str = "."

    def param(self, key: str) -> str:
        return self.params.get(key, _SUITE_DEFAULTS[key])

    def fparam(self, key: str) -> float:
        return float(self.param(key))

    def iparam(self, key: str) -> int:
        return int(self.param(key))


def _bundled_path(kind: str, name: str) -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    return os.path.join(here, "scenarios", f"{name}.{kind}")


def bundled_scenario_path(name: str) -> str:
    path = _bundled_path("scenario", name)
    if not os.path.exists(path):
        raise ConfigError(f"no bundled scenario named {name!r}")
    return path


def parse_scenario(path: str) -> Scenario:
    if not os.path.exists(path):
        raise ConfigError(f"scenario file not found: {path}")
    base_dir = os.path.dirname(os.path.abspath(path))
    fields: dict[str, str] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            fields[key] = value

    name = fields.pop("name", os.path.splitext(os.path.basename(path))[0])
    topo_ref = fields.pop("topology", "bundled:single_board")
    if topo_ref.startswith("bundled:"):
        topo_path = _bundled_path("topology", topo_ref.split(":", 1)[1])
    else:
        topo_path = os.path.join(base_dir, topo_ref)
    if not os.path.exists(topo_path):
        raise ConfigError(f"topology file not found: {topo_path}")
    with open(topo_path) as f:
        topology_text = f.read()

    suites_value = fields.pop("suites", "").strip()
    suites = [s.strip() for s in suites_value.split(",") if s.strip()]
    for s in suites:
        if s not in SUITE_NAMES:
            raise ConfigError(f"unknown suite {s!r}; choose from {SUITE_NAMES}")

    seed = int(fields.pop("seed", "0"))
    workers = int(fields.pop("workers", "1"))
    trace_dir = fields.pop("trace_dir", None)
    events_us = [float(v) for v in fields.pop("trigger.events_us", "").split(",")
                 if v.strip()]

    programs = {}
    params = {}
    for key, value in fields.items():
        parts = key.split(".")
        if len(parts) == 4 and parts[0] == "channel" and parts[3] == "program":
            prog_path = os.path.join(base_dir, value)
            if not os.path.exists(prog_path):
                raise ConfigError(f"program file not found: {prog_path}")
            programs[(int(parts[1]), int(parts[2]))] = prog_path
        elif key in _SUITE_DEFAULTS:
            params[key] = value
        else:
            raise ConfigError(f"unknown scenario key {key!r}")

    return Scenario(name=name, topology_text=topology_text, suites=suites,
                    seed=seed, workers=workers, params=params,
                    programs=programs, trigger_events_us=events_us,
                    trace_dir=trace_dir, base_dir=base_dir)


# -- program files --------------------------------------------------------------

_FLAG_NAMES = {"WAIT": EntryFlags.WAIT_TRIGGER, "END": EntryFlags.END_OF_SEQUENCE,
               "JUMP": EntryFlags.JUMP, "HOLD": EntryFlags.HOLD_LAST}


def parse_program_file(path: str):
    """Load (entries, samples) from a program text file."""
    samples = None
    entries = []
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("waveform="):
                spec = line.split("=", 1)[1].strip()
                kind, *args = spec.split(":")
                if kind == "ramp":
                    start, count = int(args[0]), int(args[1])
                    samples = (start + np.arange(count)).astype(np.int16)
                elif kind == "zeros":
                    samples = np.zeros(int(args[0]), dtype=np.int16)
                else:
                    raise ConfigError(f"{path}:{lineno}: unknown waveform {kind!r}")
            elif line.startswith("entry:"):
                kv = dict(part.split("=", 1) for part in line[6:].split())
                flags = EntryFlags(0)
                for nm in kv.get("flags", "").split("|"):
                    if nm:
                        flags |= _FLAG_NAMES[nm]
                entries.append(SequenceEntry(
                    flags=flags,
                    start_addr=int(kv.get("start", "0")),
                    length=int(kv.get("len", "4")),
                    trigger_source=TriggerSource[kv.get("trig", "NONE")],
                    counter=int(kv.get("counter", "1")),
                    jump_target=int(kv.get("jump", "0"))))
            else:
                raise ConfigError(f"{path}:{lineno}: unrecognized line")
    if samples is None or not entries:
        raise ConfigError(f"{path}: program needs a waveform and entries")
    return entries, samples


# -- board farm -----------------------------------------------------------------

class BoardFarm:
    """The scenario's boards plus one wire client per board."""

    def __init__(self, topo: BoardTopology, transport: str, trace_dir: str,
                 seed: int, transfers_for=None, listen=None, connect=None):
        self.topo = topo
        self.boards: dict[int, BoardSim] = {}
        self.servers: list[BoardServer] = []
        self.clients: dict[int, BoardClient] = {}
        os.makedirs(trace_dir, exist_ok=True)

        if transport == "tcp" and connect is not None:
            if len(topo.boards) != 1:
                raise ConfigError("--connect supports single-board topologies")
            host, port = connect.rsplit(":", 1)
            bid = topo.boards[0].board_id
            self.clients[bid] = BoardClient(
                TcpTransport(host, int(port)), board_id=bid, trace_dir=trace_dir)
            return

        for desc in topo.boards:
            transfers = transfers_for(desc.board_id) if transfers_for else None
            board = BoardSim(board_id=desc.board_id, transfers=transfers,
                             timings=desc.channels, rng_seed=seed,
                             trace_dir=trace_dir)
            server = BoardServer(board)
            self.boards[desc.board_id] = board
            self.servers.append(server)
            if transport == "tcp":
                host, port = (listen or "127.0.0.1:0").rsplit(":", 1)
                port = int(port)
                addr = server.serve_tcp(host, port + desc.board_id if port else 0)
                client = BoardClient(TcpTransport(addr[0], addr[1]),
                                     board_id=desc.board_id, trace_dir=trace_dir)
            else:
                client = BoardClient(LoopbackTransport(server),
                                     board_id=desc.board_id, trace_dir=trace_dir)
            self.clients[desc.board_id] = client

    @property
    def external_triggers_available(self) -> bool:
        return bool(self.boards)

    def external_trigger_cycles(self, event_times):
        """Fan trigger events out to the boards' physical trigger inputs."""
        arrivals_by_board: dict[int, dict[int, list[int]]] = {}
        for t in event_times:
            for arr in distribute_trigger(t, self.topo):
                arrivals_by_board.setdefault(arr.board_id, {}).setdefault(
                    arr.channel, []).append(arr.cycle)
        return arrivals_by_board

    def close(self):
        for client in self.clients.values():
            client.close()
        for server in self.servers:
            server.close()


# -- suites ----------------------------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    passed: bool
    lines: list[str]
    csv_files: dict[str, str] = field(default_factory=dict)


def _linearity_profile(scn: Scenario) -> np.ndarray | None:
    mode = scn.param("linearity.profile")
    if mode == "ideal":
        return None
    if mode != "random":
        raise ConfigError(f"linearity.profile must be random or ideal, got {mode!r}")
    amp = scn.fparam("linearity.profile_amplitude_lsb")
    rng = np.random.default_rng([scn.seed, 0x11])
    n = np.arange(N_CODES)
    prof = (amp - 0.05) * np.sin(2 * np.pi * 3 * n / N_CODES) \
        + rng.uniform(-0.05, 0.05, N_CODES)
    prof[0] = prof[-1] = 0.0
    return prof


def run_linearity(scn: Scenario, farm: BoardFarm) -> SuiteResult:
    client = farm.clients[sorted(farm.clients)[0]]
    volts = ramp_sweep_procedure(client, dwell_cycles=scn.iparam(
        "linearity.dwell_cycles"))
    report = compute_inl_dnl(volts)
    bound = scn.fparam("linearity.bound_lsb")
    lines = report.summary_lines(bound)
    return SuiteResult("linearity", report.passes(bound), lines,
                       {"linearity_dnl_inl.csv": report.to_csv()})


def run_sfdr(scn: Scenario, farm: BoardFarm) -> SuiteResult:
    client = farm.clients[sorted(farm.clients)[0]]
    points = sfdr_sweep(client, n_fft=scn.iparam("sfdr.n_fft"),
                        amplitude=scn.iparam("sfdr.amplitude"))
    floor = scn.fparam("sfdr.min_dbc")
    ok = len(points) == 25 and all(p.sfdr_dbc >= floor for p in points)
    lines = [
        f"POINTS={len(points)}; PASS==25",
        f"SFDR_MIN_DBC={min(p.sfdr_dbc for p in points):.3f}; PASS>={floor}",
        f"SFDR_MAX_DBC={max(p.sfdr_dbc for p in points):.3f}",
        f"RESULT={'PASS' if ok else 'FAIL'}",
    ]
    return SuiteResult("sfdr", ok, lines, {"sfdr_points.csv": sfdr_points_csv(points)})


def run_jitter(scn: Scenario, farm: BoardFarm) -> SuiteResult:
    if not farm.external_triggers_available:
        raise ConfigError("jitter suite needs local boards (physical triggers)")
    n_events = scn.iparam("jitter.events")
    spacing = scn.iparam("jitter.spacing_cycles")
    entries, samples = retrigger_program(np.arange(32, dtype=np.int16))
    run_ids: dict[tuple[int, int], int] = {}

    def setup_board(bid: int):
        client = farm.clients[bid]
        client.reg_write(Reg.CAPTURE_DECIM, 32)
        client.reg_write(Reg.CAPTURE_OFFSET, 0)
        client.reg_write(Reg.CAPTURE_MAX, n_events + 2)
        client.reg_write(Reg.RUN_BUDGET, (n_events + 8) * spacing)
        ids = {}
        for ch in range(NUM_CHANNELS):
            client.write_waveform(ch, 0, samples)
            client.write_sequence(ch, 0, entries)
            ids[ch] = client.arm(ch)
        return bid, ids, client.status().uptime_cycles

    bids = sorted(farm.clients)
    if scn.workers > 1:
        with ThreadPoolExecutor(max_workers=scn.workers) as pool:
            setups = list(pool.map(setup_board, bids))
    else:
        setups = [setup_board(b) for b in bids]
    max_uptime = 0
    for bid, ids, uptime in setups:
        max_uptime = max(max_uptime, uptime)
        for ch, rid in ids.items():
            run_ids[(bid, ch)] = rid

    # All boards share one word clock; events go out only after every
    # channel is armed.  Mid-cycle phase keeps sub-cycle skews from
    # slipping arrivals across a word-clock boundary.
    lead_cycles = max_uptime + 64
    events = [(lead_cycles + k * spacing + 0.5) * WORD_PERIOD_S
              for k in range(n_events)]
    arrivals = farm.external_trigger_cycles(events)

    def fire_board(bid: int):
        for ch in range(NUM_CHANNELS):
            farm.boards[bid].external_trigger(arrivals[bid][ch], channels=[ch])
            farm.clients[bid].stop(ch)

    if scn.workers > 1:
        with ThreadPoolExecutor(max_workers=scn.workers) as pool:
            list(pool.map(fire_board, bids))
    else:
        for b in bids:
            fire_board(b)

    keys = sorted(run_ids)
    edges = []
    for key in keys:
        times, _volts = farm.clients[key[0]].fetch_capture(key[1], run_ids[key])
        if times.size != n_events:
            raise ConfigError(f"channel {key}: {times.size} bursts for "
                              f"{n_events} events")
        edges.append(times)
    rel = relative_edge_times(np.stack(edges), events)
    rep = jitter_statistics(keys, rel)

    lo, hi = (float(v) for v in scn.param("jitter.band_ps").split(","))
    band_tol = scn.fparam("jitter.band_tolerance")
    mean_ps = scn.fparam("jitter.mean_ps")
    mean_tol = scn.fparam("jitter.mean_tolerance")
    stds_ps = rep.per_channel_std * 1e12
    eps = 1e-6  # ps; absorbs float fuzz in zero-jitter configurations
    band_ok = bool(np.all(stds_ps >= lo * (1 - band_tol) - eps)
                   and np.all(stds_ps <= hi * (1 + band_tol) + eps))
    mean_ok = abs(rep.mean_std * 1e12 - mean_ps) <= mean_tol * mean_ps + eps

    pair = scn.param("jitter.skew_pair")
    (b1, c1), (b2, c2) = [tuple(int(x) for x in part.split(":"))
                          for part in pair.split(",")]
    i = keys.index((b1, c1))
    j = keys.index((b2, c2))
    skew_ps = rep.skew_matrix[j, i] * 1e12
    skew_ok = abs(skew_ps - scn.fparam("jitter.skew_ps")) <= \
        scn.fparam("jitter.skew_tolerance_ps")

    ok = band_ok and mean_ok and skew_ok
    lines = rep.summary_lines() + [
        f"EVENTS={n_events}",
        f"BAND_PS=[{lo},{hi}]; TOLERANCE={band_tol}; "
        f"{'PASS' if band_ok else 'FAIL'}",
        f"MEAN_EXPECT_PS={mean_ps}; TOLERANCE={mean_tol}; "
        f"{'PASS' if mean_ok else 'FAIL'}",
        f"SKEW_{b2}:{c2}-{b1}:{c1}_PS={skew_ps:.4f}; "
        f"EXPECT={scn.param('jitter.skew_ps')}"
        f"+-{scn.param('jitter.skew_tolerance_ps')}; "
        f"{'PASS' if skew_ok else 'FAIL'}",
        f"RESULT={'PASS' if ok else 'FAIL'}",
    ]
    return SuiteResult("jitter", ok, lines, {"jitter_channels.csv": rep.to_csv()})


def run_phase_noise(scn: Scenario, farm: BoardFarm) -> SuiteResult:
    sigma = scn.fparam("phase_noise.sigma_ps") * 1e-12
    curves = simulated_scaling_curves(
        sigma, base_bin=scn.iparam("phase_noise.base_bin"), octaves=2,
        nperseg=scn.iparam("phase_noise.nperseg"),
        n_segments=scn.iparam("phase_noise.segments"), seed=scn.seed)
    one = phase_noise_scaling_check(curves[0], curves[1])
    two = phase_noise_scaling_check(curves[0], curves[2])
    tol1 = scn.fparam("phase_noise.octave_tolerance_db")
    tol2 = scn.fparam("phase_noise.two_octave_tolerance_db")
    ok1 = abs(one - 6.02) <= tol1
    ok2 = abs(two - 12.04) <= tol2
    analytic = analytic_phase_noise(curves[0].carrier_hz, sigma, 2e9,
                                    curves[0].offsets_hz)
    lines = [
        f"CARRIERS_HZ={curves[0].carrier_hz:.0f},{curves[1].carrier_hz:.0f},"
        f"{curves[2].carrier_hz:.0f}",
        f"ANALYTIC_FLOOR_DBC_HZ={analytic.dbc_per_hz[0]:.2f}",
        f"OCTAVE_SHIFT_DB={one:.4f}; PASS=6.02+-{tol1}; "
        f"{'PASS' if ok1 else 'FAIL'}",
        f"TWO_OCTAVE_SHIFT_DB={two:.4f}; PASS=12.04+-{tol2}; "
        f"{'PASS' if ok2 else 'FAIL'}",
        f"RESULT={'PASS' if ok1 and ok2 else 'FAIL'}",
    ]
    csvs = {f"phase_noise_curve_{k}.csv": c.to_csv() for k, c in enumerate(curves)}
    return SuiteResult("phase_noise", ok1 and ok2, lines, csvs)


def _random_untriggered_program(rng: np.random.Generator, max_entries: int,
                                max_len: int, max_counter: int,
                                capacity_words: int = WDM_CAPACITY_WORDS):
    """Seeded program with no waits: used by the seamless suite."""
    n = int(rng.integers(1, max_entries + 1))
    entries = []
    for i in range(n):
        length = int(rng.integers(MIN_ENTRY_WORDS, max_len + 1))
        start = int(rng.integers(0, capacity_words - length + 1))
        flags = EntryFlags(0)
        jump = 0
        if i == n - 1:
            flags |= EntryFlags.END_OF_SEQUENCE
        elif i + 2 < n and rng.random() < 0.15:
            flags |= EntryFlags.JUMP
            jump = int(rng.integers(i + 1, n))
        entries.append(SequenceEntry(
            flags=flags, start_addr=start, length=length,
            counter=int(rng.integers(1, max_counter + 1)), jump_target=jump))
    return entries


def run_seamless(scn: Scenario, farm: BoardFarm) -> SuiteResult:
    """Randomized programs through the wire; every captured stream must
    equal the naive expansion with zero gap cycles."""
    client = farm.clients[sorted(farm.clients)[0]]
    rng = np.random.default_rng([scn.seed, 0x5EA])
    n_programs = scn.iparam("seamless.programs")
    max_entries = scn.iparam("seamless.max_entries")
    max_len = scn.iparam("seamless.max_len")
    max_counter = scn.iparam("seamless.max_counter")

    client.reg_write(Reg.CAPTURE_DECIM, 1)
    client.reg_write(Reg.CAPTURE_OFFSET, 0)
    client.reg_write(Reg.CAPTURE_MAX, 1 << 22)
    image_words = 512
    wdm_image = rng.integers(-32768, 32768, image_words * 8, dtype=np.int64
                             ).astype(np.int16)
    client.write_waveform(0, 0, wdm_image)
    wdm = WaveformMemory(0)
    wdm.load(0, wdm_image)

    failures = 0
    gap_failures = 0
    for _ in range(n_programs):
        entries = _random_untriggered_program(rng, max_entries, max_len,
                                              max_counter,
                                              capacity_words=image_words)
        client.write_sequence(0, 0, entries)
        run_id = client.arm(0)
        times, volts = client.fetch_capture(0, run_id)
        oracle = flatten_oracle(SequenceMemory(0, entries), wdm)
        expect = dac_convert(oracle.samples, DacTransfer())
        if volts.size != expect.size or not np.array_equal(volts, expect):
            failures += 1
            continue
        dt = np.diff(times)
        if dt.size and (dt.max() - SAMPLE_PERIOD_S) > 1e-15:
            gap_failures += 1
    ok = failures == 0 and gap_failures == 0
    lines = [
        f"PROGRAMS={n_programs}",
        f"STREAM_MISMATCHES={failures}; PASS==0",
        f"GAP_CYCLES={gap_failures}; PASS==0",
        f"RESULT={'PASS' if ok else 'FAIL'}",
    ]
    return SuiteResult("seamless", ok, lines, {})


_SUITE_RUNNERS = {
    "linearity": run_linearity,
    "sfdr": run_sfdr,
    "jitter": run_jitter,
    "phase_noise": run_phase_noise,
    "seamless": run_seamless,
}


# -- the runner -------------------------------------------------------------------

@dataclass
class ScenarioResult:
    name: str
    passed: bool
    suites: list[SuiteResult]
    out_dir: str


def run_scenario(scn: Scenario, out_dir: str, *, transport: str = "loopback",
                 listen: str | None = None, connect: str | None = None,
                 emit: str = "both", seed: int | None = None) -> ScenarioResult:
    if transport not in ("loopback", "tcp"):
        raise ConfigError(f"unknown transport {transport!r}")
    if emit not in ("csv", "summary", "both"):
        raise ConfigError(f"unknown emit mode {emit!r}")
    if seed is not None:
        scn.seed = seed
    os.makedirs(out_dir, exist_ok=True)
    trace_dir = scn.trace_dir or os.path.join(out_dir, "traces")

    topo = parse_topology(scn.topology_text)
    topo.rng_seed = scn.seed
    for b in topo.boards:
        for tm in b.channels:
            tm.rng_seed = scn.seed

    profile = _linearity_profile(scn) if "linearity" in scn.suites else None

    def transfers_for(board_id: int):
        if profile is None:
            return None
        return [DacTransfer(inl_profile=profile) for _ in range(NUM_CHANNELS)]

    farm = BoardFarm(topo, transport, trace_dir, scn.seed,
                     transfers_for=transfers_for, listen=listen, connect=connect)
    try:
        _load_channel_programs(scn, farm)
        results = []
        for suite in scn.suites:
            results.append(_SUITE_RUNNERS[suite](scn, farm))
    finally:
        farm.close()

    passed = all(r.passed for r in results)
    if emit in ("summary", "both"):
        for r in results:
            with open(os.path.join(out_dir, f"{r.name}_summary.txt"), "w") as f:
                f.write(f"# awgsim metrology summary v1\nSUITE={r.name}\n")
                f.write("\n".join(r.lines) + "\n")
        with open(os.path.join(out_dir, "scenario_summary.txt"), "w") as f:
            f.write(f"# awgsim scenario summary v1\nSCENARIO={scn.name}\n"
                    f"SEED={scn.seed}\n")
            for r in results:
                f.write(f"{r.name}={'PASS' if r.passed else 'FAIL'}\n")
            f.write(f"RESULT={'PASS' if passed else 'FAIL'}\n")
    if emit in ("csv", "both"):
        for r in results:
            for fname, text in r.csv_files.items():
                with open(os.path.join(out_dir, fname), "w") as f:
                    f.write(text)
    return ScenarioResult(scn.name, passed, results, out_dir)


def _load_channel_programs(scn: Scenario, farm: BoardFarm):
    if not scn.programs:
        return
    run_ids = {}
    for (bid, ch), path in sorted(scn.programs.items()):
        entries, samples = parse_program_file(path)
        client = farm.clients[bid]
        client.write_waveform(ch, 0, samples)
        report = client.write_sequence(ch, 0, entries)
        if not report.ok:
            raise ConfigError(f"program {path} invalid: {report}")
        run_ids[(bid, ch)] = client.arm(ch)
    if scn.trigger_events_us:
        events = [t * 1e-6 for t in scn.trigger_events_us]
        if not farm.external_triggers_available:
            raise ConfigError("trigger.events_us needs local boards")
        arrivals = farm.external_trigger_cycles(events)
        for bid, by_ch in sorted(arrivals.items()):
            if bid not in farm.boards:
                continue
            for ch, cycles in sorted(by_ch.items()):
                if (bid, ch) in run_ids:
                    farm.boards[bid].external_trigger(cycles, channels=[ch])
    for (bid, ch) in sorted(run_ids):
        farm.clients[bid].stop(ch)
