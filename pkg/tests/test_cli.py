import json
from pathlib import Path

import pytest

from pdmsloss.cli import main, run
from pdmsloss.fixtures import fixture_text

FIXTURE = "emergency.pdms"
GOLDEN_DIR = Path(__file__).parent / "fixtures"


def ok(*argv):
    result = run(list(argv))
    assert result.exit_code == 0, result.error
    return result


def as_json(*argv):
    return json.loads(ok(*argv, "--format", "json").output)


@pytest.fixture
def lossless(tmp_path):
    path = tmp_path / "lossless.pdms"
    path.write_text(fixture_text() + '\nquery Docs @ H {\n  SELECT SID FROM Doctor\n}\n', encoding="utf-8")
    return str(path)


def test_roundtrip_text_shows_three_queries():
    out = ok("roundtrip", "--scenario", FIXTURE, "--query", "Q1", "--via", "H").output
    assert "Q1 at 9DC:" in out and "Q1' at H:" in out and "Q1'' at 9DC:" in out
    assert '"Doctor"' in out and '"EMT"' in out


def test_roundtrip_json_is_one_document():
    doc = as_json("roundtrip", "--scenario", FIXTURE, "--query", "Q1", "--via", "H")
    assert set(doc) >= {"query", "forward", "back", "source", "target", "dropped"}
    assert doc["forward"].count("UNION") == 1


def test_global_flags_before_the_command():
    doc = json.loads(ok("--format", "json", "detect-loss", "--scenario", FIXTURE, "--query", "Q1",
                        "--via", "H").output)
    assert doc["discriminator"]["excluded"] == ["Doctor", "EMT"]


def test_detect_loss_text():
    out = ok("detect-loss", "--scenario", FIXTURE, "--query", "Q1", "--via", "H").output
    assert out.startswith("semantic loss detected")
    assert 'skill = "Doctor"' in out
    assert "discriminator: skill" in out


def test_reformulate_follows_shortest_path():
    doc = as_json("reformulate", "--scenario", FIXTURE, "--query", "Q1", "--to", "LH")
    assert doc["path"] == ["9DC", "H", "LH"]
    assert "Staff" in doc["hops"][-1]["query"] and "InAmbulance" in doc["hops"][-1]["query"]


def test_recover_on_lossless_query_changes_nothing(lossless, tmp_path):
    out_file = tmp_path / "out.pdms"
    result = ok("recover", "--scenario", lossless, "--query", "Docs", "--via", "LH", "--emit", str(out_file))
    assert result.output == "no loss detected"
    assert not out_file.exists()


def test_recover_emit_then_reload_has_no_loss(tmp_path):
    out_file = tmp_path / "recovered.pdms"
    out = ok("recover", "--scenario", FIXTURE, "--query", "Q1", "--via", "H", "--emit", str(out_file)).output
    assert "CO_Doctor+EMT" in out
    assert "virtual relation CO_Doctor+EMT" in out_file.read_text(encoding="utf-8")
    again = ok("detect-loss", "--scenario", str(out_file), "--query", "Q1", "--via", "H")
    assert again.output == "no loss detected"


def test_recover_without_supported_shape_exits_1():
    result = run(["recover", "--scenario", FIXTURE, "--query", "Q1_direct", "--via", "H", "--format", "json"])
    assert result.exit_code == 1
    doc = json.loads(result.output)
    assert "error" in doc and doc["error"]["message"]


def test_propagate_reports_each_neighbour():
    doc = as_json("propagate", "--scenario", FIXTURE, "--query", "Q1", "--via", "H")
    by = {o["neighbor"]: o for o in doc["outcomes"]}
    assert set(by) == {"FH", "FS", "LH"}
    assert by["LH"]["verified"] is True
    assert by["FS"]["reason"] == "no correspondence for skill"


def test_simulate_both_improves_answers(tmp_path):
    doc = as_json("simulate", "--scenario", FIXTURE, "--query", "Q1", "--seed", "1", "--rows", "20",
                  "--both", "--populate", "LH", "--pool", "class=Doctor,EMT,Nurse,Paramedic",
                  "--oracle", "Q1_direct", "--report-dir", str(tmp_path / "rep"))
    m = doc["metrics"]
    assert m["countB"] > m["countA"] and m["lost"] == [] and m["recall"] == 1.0
    assert sorted(p.split("/")[-1] for p in doc["report"]) == ["answers.png", "hops.csv", "metrics.csv"]


def test_simulate_is_repeatable():
    argv = ["simulate", "--scenario", FIXTURE, "--query", "Q1", "--rows", "6", "--format", "json"]
    assert run(argv).output == run(argv).output


def test_simulate_single_mode_has_no_metrics():
    doc = as_json("simulate", "--scenario", FIXTURE, "--query", "Q1", "--rows", "3", "--without-recovery")
    assert list(doc["runs"]) == ["without"] and doc["metrics"] is None


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["roundtrip", "--scenario", FIXTURE, "--query", "Q1"],
    ["roundtrip", "--scenario", FIXTURE, "--query", "Q1", "--via", "H", "--bogus"],
    ["roundtrip", "--scenario", "missing.pdms", "--query", "Q1", "--via", "H"],
    ["simulate", "--scenario", FIXTURE, "--query", "Q1", "--pool", "novalues"],
])
def test_usage_errors_exit_2(argv):
    result = run(argv)
    assert result.exit_code == 2 and result.error


def test_parse_error_exit_2(tmp_path):
    bad = tmp_path / "bad.pdms"
    bad.write_text("peer X {\n  relation R(a\n}\n", encoding="utf-8")
    assert run(["roundtrip", "--scenario", str(bad), "--query", "Q", "--via", "Y"]).exit_code == 2


@pytest.mark.parametrize("argv", [
    ["roundtrip", "--scenario", FIXTURE, "--query", "Nope", "--via", "H"],
    ["roundtrip", "--scenario", FIXTURE, "--query", "Q1", "--via", "LH"],
    ["reformulate", "--scenario", FIXTURE, "--query", "Q1", "--to", "Mars"],
])
def test_domain_errors_exit_1(argv):
    result = run(argv + ["--format", "json"])
    assert result.exit_code == 1
    assert json.loads(result.output)["error"]["kind"]


def test_quiet_prints_nothing():
    result = run(["--quiet", "detect-loss", "--scenario", FIXTURE, "--query", "Q1", "--via", "H"])
    assert result.exit_code == 0 and result.output == ""


def test_main_writes_streams(capsys):
    assert main(["detect-loss", "--scenario", FIXTURE, "--query", "Q1", "--via", "H"]) == 0
    assert "semantic loss" in capsys.readouterr().out
    assert main(["nope"]) == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("golden, argv", [
    ("detect_loss_Q1_via_H.json", ["detect-loss", "--scenario", FIXTURE, "--query", "Q1", "--via", "H"]),
    ("simulate_Q1_seed1_rows6.json", ["simulate", "--scenario", FIXTURE, "--query", "Q1", "--rows", "6",
                                      "--populate", "LH", "--pool", "class=Doctor,EMT,Nurse,Paramedic"]),
])
def test_json_matches_golden_file(golden, argv):
    expected = json.loads((GOLDEN_DIR / golden).read_text(encoding="utf-8"))
    assert as_json(*argv) == expected
