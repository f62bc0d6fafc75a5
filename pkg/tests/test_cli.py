import csv
import io
import json
import subprocess
import sys

import pytest

from linealloc.cli import EXIT_INPUT, EXIT_MODEL, EXIT_OK, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_analytic_bulk(capsys):
    code, out, _ = run_cli(capsys, "analytic", "bulk", "--lambda", "0.5", "--mu", "1", "--c", "2")
    assert code == EXIT_OK
    first, rest = out.split("\n", 1)
    assert float(first) == pytest.approx(1.1547005383792515)
    detail = json.loads(rest)
    assert detail["model"] == "bulk"
    assert detail["details"]["r0"] == pytest.approx(0.3660254037844386)


@pytest.mark.parametrize(
    "argv,expected",
    [
        (["prgs", "--lambda", "0.5", "--server", "exp:1"], 2.0),
        (["grps", "--user", "exp:0.5", "--mu", "1"], 2.0),
        (["hetcap", "--lambda", "0.5", "--server", "exp:1", "--c", "1"], 2.0),
        (["limit", "--side", "prgs", "--server", "unif:2"], 2 / 3),
        (["limit", "--side", "grps", "--mu", "2"], 0.5),
    ],
)
def test_analytic_models(capsys, argv, expected):
    code, out, _ = run_cli(capsys, "analytic", *argv)
    assert code == EXIT_OK
    assert float(out.split("\n", 1)[0]) == pytest.approx(expected, rel=1e-9)


def test_analytic_csv_append(capsys, tmp_path):
    path = tmp_path / "res.csv"
    for lam in ("0.3", "0.6"):
        assert run_cli(capsys, "analytic", "bulk", "--lambda", lam, "--mu", "1", "--csv", str(path))[0] == 0
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 2
    assert float(rows[1]["expected_distance"]) == pytest.approx(1 / 0.4)


def test_unstable_exit_code(capsys):
    code, _, err = run_cli(capsys, "analytic", "bulk", "--lambda", "2", "--mu", "1")
    assert code == EXIT_MODEL
    assert "model error" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["analytic", "bulk", "--lambda", "x"],
        ["analytic", "prgs", "--lambda", "0.5", "--server", "gamma:2"],
        ["analytic", "prgs", "--lambda", "0.5"],
        ["analytic", "hetcap", "--lambda", "0.5", "--server", "exp:1", "--pmf", "0.5,0.4"],
        ["match", "/nonexistent/file.csv"],
        ["figure", "4"],
    ],
)
def test_bad_input_exit_code(capsys, argv):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_INPUT


def test_simulate_csv(capsys):
    code, out, _ = run_cli(capsys, "simulate", "--users", "1000", "--trials", "3", "--policies", "mtr,optimal")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# seed: ")
    body = [l for l in lines if not l.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    assert [r["policy"] for r in rows] == ["mtr", "optimal"]
    assert float(rows[1]["mean_distance"]) < float(rows[0]["mean_distance"])


def test_seed_reproducible(capsys):
    a = run_cli(capsys, "simulate", "--users", "500", "--trials", "2", "--seed", "7")[1]
    b = run_cli(capsys, "simulate", "--users", "500", "--trials", "2", "--seed", "7")[1]
    c = run_cli(capsys, "simulate", "--users", "500", "--trials", "2", "--seed", "8")[1]
    assert a == b != c


def test_config_file_and_override(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"users": 800, "trials": 2, "server": "det:1", "c": 2, "seed": 11}))
    code, out, _ = run_cli(capsys, "compare", "--config", str(cfg), "--trials", "3")
    assert code == 0
    conf = json.loads(out.splitlines()[1].split(": ", 1)[1])
    assert conf["n_users"] == 800 and conf["trials"] == 3 and conf["capacity"] == 2
    assert conf["inter_server"] == {"kind": "det", "d0": 1.0}
    row = [l for l in out.splitlines() if l.startswith(",mtr,")][0].split(",")
    assert float(row[6]) > 0  # analytic column filled


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"speed": 3}))
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--config", str(cfg)])
    assert exc.value.code == EXIT_INPUT


def test_match(capsys, tmp_path):
    inst = tmp_path / "inst.csv"
    inst.write_text("role,position,capacity\nuser,0,\nuser,1,\nserver,0.5,1\nserver,3,1\n")
    code, out, _ = run_cli(capsys, "match", str(inst), "--policy", "optimal")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "user_index,user_pos,server_index,server_pos,distance"
    assert lines[-1].startswith("# policy=optimal total_cost=2.5")
    out_path = tmp_path / "a.csv"
    code, out, _ = run_cli(capsys, "match", str(inst), "--policy", "mtr", "--out", str(out_path))
    assert out.startswith("# policy=mtr")
    assert len(out_path.read_text().splitlines()) == 3


def test_match_infeasible_optimal(capsys, tmp_path):
    inst = tmp_path / "inst.csv"
    inst.write_text("role,position,capacity\nuser,0,\nuser,1,\nserver,0.5,1\n")
    assert run_cli(capsys, "match", str(inst), "--policy", "optimal")[0] == EXIT_INPUT


def test_figure(capsys, tmp_path):
    code, out, _ = run_cli(
        capsys, "figure", "9", "--part", "b", "--scale", "0.003", "--trials", "2", "--outdir", str(tmp_path)
    )
    assert code == 0
    path = tmp_path / "fig9b.csv"
    assert out.strip() == str(path)
    text = path.read_text()
    assert "# figure: 9" in text
    assert text.count(",optimal,") == 6


def test_module_entry_point():
    r = subprocess.run(
        [sys.executable, "-m", "linealloc", "analytic", "limit", "--side", "grps", "--mu", "4"],
        capture_output=True,
        text=True,
    )
    assert r.returncode == 0
    assert float(r.stdout.splitlines()[0]) == 0.25
