import subprocess
import sys

import pytest

from mcpsim.cli import build_parser, main

LONDON_MAP = "U (51.501427, -0.180414) | (51.492243, -0.178214) S 1 B 20\n"
TRACE = "0 1 5 9\n1 2 12 15\n"


@pytest.fixture
def london_map(tmp_path):
    path = tmp_path / "uniline.map"
    path.write_text(LONDON_MAP)
    return path


def test_help_lists_every_flag_with_units(capsys):
    with pytest.raises(SystemExit) as exit_info:
        build_parser().parse_args(["--help"])
    assert exit_info.value.code == 0
    text = capsys.readouterr().out
    for flag in (
        "--map", "--trace", "--grid", "--field", "--duration", "--range",
        "--period", "--share", "--speed", "--interval", "--mode", "--threshold",
        "--drop", "--kill-hops", "--kill-ttl", "--seed-peer", "--beacons",
        "--reps", "--seed", "--out", "--kml", "--density",
    ):
        assert flag in text, flag
    assert "meters" in text
    assert "seconds" in text
    assert "m/s" in text


def test_unknown_flag_fails(capsys):
    with pytest.raises(SystemExit) as exit_info:
        build_parser().parse_args(["--map", "x.map", "--warp-speed", "9"])
    assert exit_info.value.code == 2


def test_missing_map_file_exits_2(tmp_path, capsys):
    status = main(["--map", str(tmp_path / "nope.map"), "--duration", "10"])
    assert status == 2
    assert "cannot read" in capsys.readouterr().err


def test_malformed_map_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.map"
    bad.write_text("U (1,2) | (3,4) Z 1 B 2\n")
    status = main(["--map", str(bad), "--duration", "10"])
    assert status == 2
    assert "line 1" in capsys.readouterr().err


def test_invalid_config_exits_1(london_map, tmp_path, capsys):
    status = main([
        "--map", str(london_map), "--duration", "0", "--out", str(tmp_path / "o"),
    ])
    assert status == 1


def test_extended_without_threshold_exits_1(london_map, tmp_path, capsys):
    status = main([
        "--map", str(london_map), "--mode", "extended",
        "--duration", "10", "--out", str(tmp_path / "o"),
    ])
    assert status == 1


def test_two_sources_rejected(london_map, tmp_path):
    status = main([
        "--map", str(london_map), "--field", "100:5", "--out", str(tmp_path / "o"),
    ])
    assert status == 1


def test_map_run_writes_artifacts_and_summary(london_map, tmp_path, capsys):
    out = tmp_path / "artifacts"
    status = main([
        "--map", str(london_map), "--duration", "300", "--reps", "2",
        "--seed", "42", "--out", str(out), "--kml",
    ])
    assert status == 0
    assert (out / "run_1.csv").exists()
    assert (out / "run_2.csv").exists()
    assert (out / "aggregate.csv").exists()
    assert (out / "tracks_1.kml").exists()
    text = capsys.readouterr().out
    assert "SIMULATION PARAMETERS" in text
    assert "Number of Nodes: 21" in text
    assert "Total Messages Sent" in text
    assert "Nodes who got the content" in text


def test_identical_invocations_byte_identical(london_map, tmp_path):
    args = ["--map", str(london_map), "--duration", "200", "--reps", "2", "--seed", "7"]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    for name in ("run_1.csv", "run_2.csv", "aggregate.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_trace_mode_runs(tmp_path, capsys):
    trace = tmp_path / "cam.txt"
    trace.write_text(TRACE)
    out = tmp_path / "t"
    status = main([
        "--trace", str(trace), "--period", "10", "--duration", "200000",
        "--reps", "1", "--out", str(out),
    ])
    assert status == 0
    assert (out / "run_1.csv").exists()
    assert (out / "aggregate.csv").exists()


def test_grid_and_field_sources(tmp_path):
    out = tmp_path / "g"
    status = main([
        "--grid", "2x2:100", "--buyers-per-line", "3", "--duration", "60",
        "--reps", "1", "--out", str(out),
    ])
    assert status == 0
    out2 = tmp_path / "f"
    status = main([
        "--field", "50:5", "--duration", "60", "--reps", "1", "--out", str(out2),
    ])
    assert status == 0


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "mcpsim.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "mcpsim" in proc.stdout
