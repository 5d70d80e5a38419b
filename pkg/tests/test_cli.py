import json
import subprocess
import sys

import pytest

from dreidel import chain
from dreidel.cli import main
from dreidel.games import FULL


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("argv, expected", [
    (["solve", "--game", "simplified", "--a", "2", "--p", "2", "--b", "2", "--mode", "exact"], "3\n"),
    (["solve", "--game", "simplified", "--a", "1", "--p", "1", "--b", "4"], "33/16\n"),
    (["duration", "--nuts", "10", "--seconds-per-spin", "10"], "28.10\n"),
    (["solve", "--game", "gambler", "--M", "5", "--N", "5", "--a", "0"], "25\n"),
    (["gamblers", "--M", "4", "--N", "2", "--a", "1", "--verify"], "closed form 9, chain 9: match\n"),
])
def test_examples(capsys, argv, expected):
    code, out, _ = run(capsys, *argv)
    assert code == 0 and out == expected


def test_hiprec_digits(capsys):
    code, out, _ = run(capsys, "solve", "--game", "full", "--a", "1", "--p", "2", "--b", "1",
                       "--mode", "hiprec", "--digits", "10")
    assert code == 0 and out == "2.400000000\n"


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["solve", "--game", "simplified", "--a", "2"],
    ["solve", "--game", "chess", "--a", "1", "--b", "1"],
    ["solve", "--game", "simplified", "--a", "1", "--b", "1", "--M", "3"],
    ["solve", "--game", "gambler", "--M", "2", "--N", "2", "--a", "5"],
    ["table", "--game", "simplified"],
    ["verify-key", "--max-sum", "1"],
    ["duration", "--nuts", "1"],
    ["simulate", "--game", "full", "--a", "0", "--b", "1", "--trials", "5", "--seed", "1"],
])
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and err


def test_bad_precision_env(capsys, monkeypatch):
    monkeypatch.setenv("DREIDEL_PRECISION_BITS", "lots")
    code, _, _ = run(capsys, "derive-constants")
    assert code == 2


def test_computation_failure(capsys, monkeypatch):
    monkeypatch.setenv("DREIDEL_PRECISION_BITS", "64")
    code, _, err = run(capsys, "solve", "--game", "full", "--a", "1", "--b", "1", "--mode", "hiprec")
    assert code == 1 and "error" in err


def test_unreadable_cache(capsys, tmp_path):
    bad = tmp_path / "cache.json"
    bad.write_text("{not json")
    code, _, _ = run(capsys, "--cache", str(bad), "solve", "--game", "simplified", "--a", "1", "--b", "1")
    assert code == 2


def test_table_round_trip(capsys, tmp_path, monkeypatch):
    solve = ["solve", "--game", "full", "--a", "3", "--p", "2", "--b", "3"]
    _, fresh, _ = run(capsys, *solve)
    code, out, _ = run(capsys, "table", "--game", "full", "--total", "8", "--format", "json")
    assert code == 0 and out.endswith("]\n") and not out.endswith("\n\n")
    assert len(json.loads(out)) == len(chain.enumerate_states(FULL, 8))
    path = tmp_path / "table.json"
    path.write_text(out)

    def no_solve(*args, **kwargs):
        raise AssertionError("table was recomputed")

    monkeypatch.setattr(chain, "solve_table", no_solve)
    code, cached, _ = run(capsys, "--cache", str(path), *solve)
    assert code == 0 and cached == fresh


def test_table_csv_and_gambler(capsys):
    code, out, _ = run(capsys, "table", "--game", "gambler", "--M", "3", "--N", "2", "--format", "csv")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "game,M,N,a,value,mode" and len(lines) == 1 + 4
    assert out.endswith("\n") and not out.endswith("\n\n")


def test_json_outputs_are_strict(capsys):
    def strict(text):
        return json.loads(text, parse_constant=lambda c: pytest.fail(f"non-strict constant {c}"))

    for argv in (["derive-constants", "--format", "json"],
                 ["verify-conjecture-key", "--format", "json"],
                 ["simulate", "--game", "simplified", "--a", "2", "--b", "2", "--trials", "1000", "--seed", "5"],
                 ["fit", "--game", "full", "--min", "4", "--max", "6", "--format", "json"]):
        code, out, _ = run(capsys, *argv)
        assert code == 0 and out.endswith("\n") and not out.endswith("\n\n")
        strict(out)


def test_text_commands(capsys):
    code, out, _ = run(capsys, "verify-key", "--max-sum", "10")
    assert code == 0 and out.startswith("PASS")
    code, out, _ = run(capsys, "derive-constants")
    assert "c3 = 12/19" in out and "free: c2, c0" in out
    code, out, _ = run(capsys, "error", "--game", "simplified", "--a", "1", "--b", "1")
    assert code == 0 and out.startswith("-1.2585")
    code, out, _ = run(capsys, "fit", "--game", "simplified", "--min", "5", "--max", "8")
    assert code == 0 and "c2 = " in out


def test_console_script():
    proc = subprocess.run([sys.executable, "-m", "dreidel.cli", "solve", "--game", "simplified",
                           "--a", "2", "--b", "2"], capture_output=True, text=True)
    if proc.returncode != 0 and "No module named" in proc.stderr:
        pytest.skip("module not runnable")
    assert proc.returncode == 0 and proc.stdout == "3\n"
