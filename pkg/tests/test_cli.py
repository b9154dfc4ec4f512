"""Command-line interface tests: exit codes, output formats, usage errors."""

import json

import pytest
from click.testing import CliRunner

from mechsynth.cli import benchmark_names, load_sketch, main
from tests.conftest import BENCHMARK_HOLES, MICRO_SCALAR

DUO_SRC = """mechanism Duo
private a
adjacency one

x <- a[1] + Lap(?1)
y <- a[2] + Lap(?2)
return x + y
"""


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def micro_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("sketches") / "micro.dpm"
    p.write_text(MICRO_SCALAR)
    return str(p)


@pytest.fixture(scope="module")
def duo_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("sketches") / "duo.dpm"
    p.write_text(DUO_SRC)
    return str(p)


# ---------------------------------------------------------------------------
# Sketch loading
# ---------------------------------------------------------------------------

def test_benchmark_names_cover_corpus():
    assert benchmark_names() == sorted(BENCHMARK_HOLES)


def test_load_sketch_by_name_and_path(micro_path):
    assert load_sketch("sum").n_holes == 1
    assert load_sketch("SVT").n_holes == 2
    assert load_sketch(micro_path).name == "Micro"


def test_load_sketch_unknown_name_fails(runner):
    result = runner.invoke(main, ["test", "--sketch", "nope", "--noise", "1"])
    assert result.exit_code == 2
    assert "sum" in result.output  # usage error lists the bundled names


# ---------------------------------------------------------------------------
# test subcommand
# ---------------------------------------------------------------------------

def test_cmd_test_accepts_generous_noise(runner, micro_path):
    result = runner.invoke(main, ["test", "--sketch", micro_path, "--noise",
                                  "8", "--trials", "2000"])
    assert result.exit_code == 0
    lines = result.output.strip().splitlines()
    summary = json.loads(lines[-1])
    assert summary["violation"] is False
    assert summary["decision_p"] > 0.05
    assert summary["epsilon"] == "1/2"


def test_cmd_test_flags_no_noise(runner, micro_path):
    result = runner.invoke(main, ["test", "--sketch", micro_path, "--noise",
                                  "bot", "--trials", "2000"])
    assert result.exit_code == 1
    summary = json.loads(result.output.strip().splitlines()[-1])
    assert summary["violation"] is True


def test_cmd_test_records_are_json_lines(runner, micro_path):
    result = runner.invoke(main, ["test", "--sketch", micro_path, "--noise",
                                  "2", "--trials", "2000", "--max-records",
                                  "5"])
    lines = result.output.strip().splitlines()
    assert 2 <= len(lines) <= 6
    for line in lines[:-1]:
        rec = json.loads(line)
        assert {"d1", "d2", "event", "p", "rho1", "rho2"} <= set(rec)


def test_cmd_test_deterministic(runner, micro_path):
    args = ["test", "--sketch", micro_path, "--noise", "2", "--trials",
            "2000", "--seed", "3"]
    a = runner.invoke(main, args)
    b = runner.invoke(main, args)
    assert a.output == b.output


def test_cmd_test_usage_errors(runner, micro_path):
    bad_arity = runner.invoke(main, ["test", "--sketch", micro_path,
                                     "--noise", "1,2"])
    assert bad_arity.exit_code == 2
    bad_eps = runner.invoke(main, ["test", "--sketch", micro_path, "--noise",
                                   "1", "--epsilon", "0"])
    assert bad_eps.exit_code == 2
    bad_eps2 = runner.invoke(main, ["test", "--sketch", micro_path, "--noise",
                                    "1", "--epsilon", "abc"])
    assert bad_eps2.exit_code == 2
    bad_trials = runner.invoke(main, ["test", "--sketch", micro_path,
                                      "--noise", "1", "--trials", "10"])
    assert bad_trials.exit_code == 2
    bad_scale = runner.invoke(main, ["test", "--sketch", micro_path,
                                     "--noise", "wat"])
    assert bad_scale.exit_code == 2


# ---------------------------------------------------------------------------
# synth subcommand
# ---------------------------------------------------------------------------

def test_cmd_synth_writes_report_and_sidecar(runner, micro_path, tmp_path):
    out = tmp_path / "report.json"
    result = runner.invoke(main, [
        "synth", "--sketch", micro_path, "--out", str(out),
        "--trials", "1500", "--presamples", "20000", "--population", "10",
        "--steps", "40"])
    assert result.exit_code == 0
    report = json.loads(out.read_text())
    assert report["mechanism"] == "Micro"
    assert report["survivors"]
    assert report["survivors"][0]["completion"] == "(1/eps)"
    sidecar = json.loads((tmp_path / "report.json.timings.json").read_text())
    assert set(sidecar["seconds"]) >= {"init", "opti", "enum", "verify",
                                       "total"}


# ---------------------------------------------------------------------------
# grid subcommand
# ---------------------------------------------------------------------------

def test_cmd_grid_emits_lattice(runner, duo_path):
    result = runner.invoke(main, [
        "grid", "--sketch", duo_path, "--holes", "1,2", "--grid", "2:4:2",
        "--trials", "1000", "--presamples", "10000"])
    assert result.exit_code == 0
    lines = result.output.strip().splitlines()
    assert lines[0] == "scale1,scale2,objective"
    assert len(lines) == 5  # header + 2x2 lattice
    for line in lines[1:]:
        a, b, obj = line.split(",")
        assert float(a) in (2.0, 4.0) and float(b) in (2.0, 4.0)
        assert float(obj) >= 0.0


def test_cmd_grid_usage_errors(runner, duo_path, micro_path):
    same = runner.invoke(main, ["grid", "--sketch", duo_path, "--holes",
                                "1,1"])
    assert same.exit_code == 2
    out_of_range = runner.invoke(main, ["grid", "--sketch", duo_path,
                                        "--holes", "1,3"])
    assert out_of_range.exit_code == 2
    bad_spec = runner.invoke(main, ["grid", "--sketch", duo_path, "--holes",
                                    "1,2", "--grid", "4:2"])
    assert bad_spec.exit_code == 2
    single_hole = runner.invoke(main, ["grid", "--sketch", micro_path,
                                       "--holes", "1,2"])
    assert single_hole.exit_code == 2


def test_cmd_grid_requires_fix_for_extra_holes(runner, tmp_path):
    src = """mechanism Trio
private a
adjacency one

x <- a[1] + Lap(?1)
y <- a[2] + Lap(?2)
z <- a[3] + Lap(?3)
return x + y + z
"""
    p = tmp_path / "trio.dpm"
    p.write_text(src)
    result = runner.invoke(main, ["grid", "--sketch", str(p), "--holes",
                                  "1,2"])
    assert result.exit_code == 2
    fixed = runner.invoke(main, [
        "grid", "--sketch", str(p), "--holes", "1,2", "--fix", "3=bot",
        "--grid", "2:2", "--trials", "1000", "--presamples", "8000"])
    assert fixed.exit_code == 0
