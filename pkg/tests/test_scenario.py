import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from awgsim.cli import main as cli_main
from awgsim.errors import ConfigError
from awgsim.scenario import (
    Scenario,
    bundled_scenario_path,
    parse_program_file,
    parse_scenario,
    run_scenario,
)


def write_scenario(tmp_path, text, name="test.scenario"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestScenarioParsing:
    def test_bundled_names_resolve(self):
        for name in ["paper-iii-a", "paper-iii-b", "paper-iii-c",
                     "paper-iii-d", "seamless", "determinism"]:
            scn = parse_scenario(bundled_scenario_path(name))
            assert scn.suites

    def test_unknown_suite_rejected(self, tmp_path):
        path = write_scenario(tmp_path, "suites=warp_drive\n")
        with pytest.raises(ConfigError):
            parse_scenario(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_scenario(tmp_path, "suites=seamless\nbogus.key=1\n")
        with pytest.raises(ConfigError):
            parse_scenario(path)

    def test_missing_topology_rejected(self, tmp_path):
        path = write_scenario(tmp_path, "topology=nowhere.topology\n")
        with pytest.raises(ConfigError):
            parse_scenario(path)

    def test_program_file_round_trip(self, tmp_path):
        prog = tmp_path / "prog.txt"
        prog.write_text(
            "waveform=ramp:0:64\n"
            "entry: flags=WAIT start=0 len=4 trig=SOFTWARE counter=2\n"
            "entry: flags=END|HOLD start=4 len=4\n")
        entries, samples = parse_program_file(str(prog))
        assert len(entries) == 2
        assert entries[0].counter == 2
        assert samples.size == 64

    def test_empty_suites_run_passes(self, tmp_path):
        path = write_scenario(tmp_path, "name=noop\nsuites=\n")
        result = run_scenario(parse_scenario(path), str(tmp_path / "out"))
        assert result.passed
        assert result.suites == []


class TestScenarioRuns:
    def test_seamless_small(self, tmp_path):
        path = write_scenario(tmp_path,
                              "suites=seamless\nseed=3\nseamless.programs=25\n")
        result = run_scenario(parse_scenario(path), str(tmp_path / "out"))
        assert result.passed
        assert os.path.exists(tmp_path / "out" / "seamless_summary.txt")
        assert os.path.exists(tmp_path / "out" / "scenario_summary.txt")

    def test_linearity_small_dwell(self, tmp_path):
        path = write_scenario(tmp_path, (
            "suites=linearity\nseed=3\n"
            "linearity.dwell_cycles=8\n"
            "linearity.profile_amplitude_lsb=1.5\n"))
        result = run_scenario(parse_scenario(path), str(tmp_path / "out"))
        assert result.passed
        summary = (tmp_path / "out" / "linearity_summary.txt").read_text()
        assert "RESULT=PASS" in summary
        assert "PASS<=2.0" in summary

    def test_linearity_fail_above_bound(self, tmp_path):
        path = write_scenario(tmp_path, (
            "suites=linearity\nseed=3\n"
            "linearity.dwell_cycles=8\n"
            "linearity.profile_amplitude_lsb=2.3\n"))
        result = run_scenario(parse_scenario(path), str(tmp_path / "out"))
        assert not result.passed

    def test_emit_modes(self, tmp_path):
        path = write_scenario(tmp_path,
                              "suites=seamless\nseamless.programs=5\n")
        run_scenario(parse_scenario(path), str(tmp_path / "o1"), emit="summary")
        assert os.path.exists(tmp_path / "o1" / "scenario_summary.txt")
        run_scenario(parse_scenario(path), str(tmp_path / "o2"), emit="csv")
        assert not os.path.exists(tmp_path / "o2" / "scenario_summary.txt")

    def test_program_files_played_at_setup(self, tmp_path):
        prog = tmp_path / "prog.txt"
        prog.write_text(
            "waveform=ramp:0:64\n"
            "entry: flags=WAIT start=0 len=8 trig=EXTERNAL counter=1\n"
            "entry: flags=END start=0 len=4\n")
        path = write_scenario(tmp_path, (
            "suites=\n"
            "channel.0.0.program=prog.txt\n"
            "trigger.events_us=0.5\n"))
        result = run_scenario(parse_scenario(path), str(tmp_path / "out"))
        assert result.passed
        traces = os.listdir(tmp_path / "out" / "traces")
        assert any(f.endswith("_trace.bin") for f in traces)

    def test_tcp_listen_transport(self, tmp_path):
        path = write_scenario(tmp_path,
                              "suites=seamless\nseamless.programs=10\n")
        result = run_scenario(parse_scenario(path), str(tmp_path / "out"),
                              transport="tcp", listen="127.0.0.1:0")
        assert result.passed


class TestDeterminismAcrossWorkers:
    def test_workers_do_not_change_reports(self, tmp_path):
        base = ("suites=jitter\nseed=11\ntopology=bundled:two_boards_sigma0\n"
                "jitter.events=300\njitter.band_ps=0,0\n"
                "jitter.band_tolerance=0\njitter.mean_ps=0\n"
                "jitter.mean_tolerance=0\njitter.skew_pair=0:0,0:1\n"
                "jitter.skew_ps=25\njitter.skew_tolerance_ps=1.0\n")
        p1 = write_scenario(tmp_path, base + "workers=1\n", "w1.scenario")
        p4 = write_scenario(tmp_path, base + "workers=4\n", "w4.scenario")
        r1 = run_scenario(parse_scenario(p1), str(tmp_path / "out1"))
        r4 = run_scenario(parse_scenario(p4), str(tmp_path / "out4"))
        assert r1.passed and r4.passed
        s1 = (tmp_path / "out1" / "jitter_summary.txt").read_text()
        s4 = (tmp_path / "out4" / "jitter_summary.txt").read_text()
        assert s1 == s4
        c1 = (tmp_path / "out1" / "jitter_channels.csv").read_text()
        c4 = (tmp_path / "out4" / "jitter_channels.csv").read_text()
        assert c1 == c4


class TestCli:
    def test_exit_zero_on_pass(self, tmp_path, capsys):
        path = write_scenario(tmp_path,
                              "suites=seamless\nseamless.programs=5\n")
        code = cli_main(["--scenario", path, "--out", str(tmp_path / "out")])
        assert code == 0
        assert "PASS" in capsys.readouterr().out

    def test_exit_one_on_suite_failure(self, tmp_path, capsys):
        path = write_scenario(tmp_path, (
            "suites=linearity\nlinearity.dwell_cycles=8\n"
            "linearity.profile_amplitude_lsb=2.5\n"))
        code = cli_main(["--scenario", path, "--out", str(tmp_path / "out")])
        assert code == 1

    def test_exit_two_on_config_error(self, tmp_path, capsys):
        code = cli_main(["--scenario", str(tmp_path / "missing.scenario"),
                         "--out", str(tmp_path / "out")])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_bundled_name_lookup(self, tmp_path):
        code = cli_main(["--scenario", "seamless", "--seed", "3",
                         "--out", str(tmp_path / "out")])
        assert code == 0

    def test_connect_requires_tcp(self, tmp_path):
        path = write_scenario(tmp_path, "suites=\n")
        code = cli_main(["--scenario", path, "--connect", "127.0.0.1:1",
                         "--out", str(tmp_path / "out")])
        assert code == 2


class TestSeparateProcessBoard:
    """The no-back-door check: the board lives in another OS process and the
    CLI talks to it purely over sockets and the shared trace directory."""

    def test_scenario_against_board_subprocess(self, tmp_path):
        trace_dir = tmp_path / "traces"
        trace_dir.mkdir()
        proc = subprocess.Popen(
            [sys.executable, "-m", "awgsim.server",
             "--listen", "127.0.0.1:0", "--trace-dir", str(trace_dir)],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
        try:
            line = proc.stdout.readline()
            assert "listening on" in line
            port = int(line.strip().rsplit(":", 1)[1])
            scn_path = write_scenario(tmp_path, (
                "suites=seamless,linearity\nseed=9\n"
                "seamless.programs=20\n"
                "linearity.dwell_cycles=8\n"
                f"trace_dir={trace_dir}\n"))
            code = cli_main([
                "--scenario", scn_path, "--out", str(tmp_path / "out"),
                "--transport", "tcp", "--connect", f"127.0.0.1:{port}"])
            assert code == 0
        finally:
            proc.terminate()
            proc.wait(timeout=5)
