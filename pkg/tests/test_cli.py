import csv
import json

import numpy as np
import pytest

from bbuap.cli import main
from bbuap.dataio import save_uap, write_png
from bbuap.server import OracleServer
from bbuap.oracle import load_oracle_weights
from bbuap.tensor import Perturbation


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    assert main(["toy", "--preset", "binary", "--out-dir", str(d)]) == 0
    return d


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    # commands without output paths drop run.json in the working directory
    monkeypatch.chdir(tmp_path)


def common(toy):
    return ["--manifest", str(toy / "manifest.csv"), "--oracle-model", str(toy / "model.bin")]


def attack_args(toy, out, *extra):
    return ["-q", "attack", *common(toy), "--zeta", "0.1", "--directions", "pixel",
            "--max-iters", "300", "--sample-total", "40",
            "--out-uap", str(out / "u.utf"), "--out-trace", str(out / "t.csv"),
            "--out-metrics", str(out / "m.json"), *extra]


def test_targeted_without_target_is_config_error(toy, tmp_path, capsys):
    code = main(["attack", *common(toy), "--zeta", "0.1", "--mode", "targeted",
                 "--out-uap", str(tmp_path / "u.utf")])
    assert code == 2
    assert "target" in capsys.readouterr().err


def test_budget_flags_are_exclusive(toy, tmp_path):
    assert main(["attack", *common(toy), "--zeta", "0.1", "--xi", "1",
                 "--out-uap", str(tmp_path / "u.utf")]) == 2
    assert main(["attack", *common(toy), "--out-uap", str(tmp_path / "u.utf")]) == 2


def test_full_run_and_rerun(toy, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(attack_args(toy, a)) == 0
    for name in ("u.utf", "t.csv", "m.json", "run.json"):
        assert (a / name).exists()
    m = json.loads((a / "m.json").read_text())
    assert m["input"]["n"] == 40 and m["held_out"]["n"] == 200
    assert m["attack"]["delta_norm"] <= m["attack"]["xi"] + 1e-9
    run = json.loads((a / "run.json").read_text())
    assert run["xi"] == m["attack"]["xi"]
    assert run["attack"]["epsilon"] == 0.5 and run["attack"]["max_iterations"] == 300
    with open(a / "t.csv") as fh:
        assert len(list(csv.reader(fh))) == m["attack"]["iterations"] + 1

    assert main(attack_args(toy, b)) == 0
    assert (a / "u.utf").read_bytes() == (b / "u.utf").read_bytes()


def test_progress_goes_to_stderr(toy, tmp_path, capsys, caplog):
    caplog.set_level("INFO", logger="bbuap")
    args = attack_args(toy, tmp_path)[1:]
    assert main(args) == 0
    assert any("iter 100" in r.getMessage() for r in caplog.records)
    assert capsys.readouterr().out == ""


def test_evaluate_zero_uap(toy, tmp_path):
    save_uap(tmp_path / "z.utf", Perturbation(np.zeros((16, 16, 1)), 2, 1.0))
    out = tmp_path / "e.json"
    assert main(["-q", "evaluate", *common(toy), "--uap", str(tmp_path / "z.utf"),
                 "--out-metrics", str(out)]) == 0
    m = json.loads(out.read_text())
    assert m["r_f"] == 0.0
    assert m["queries"] == 2 * 240
    assert len(m["confusion"]) == 2


def test_evaluate_shape_mismatch(toy, tmp_path):
    save_uap(tmp_path / "z.utf", Perturbation(np.zeros((8, 8, 1)), 2, 1.0))
    assert main(["-q", "evaluate", *common(toy), "--uap", str(tmp_path / "z.utf")]) == 2


def test_evaluate_matches_attack_metrics(toy, tmp_path):
    assert main(attack_args(toy, tmp_path)) == 0
    m = json.loads((tmp_path / "m.json").read_text())
    out = tmp_path / "e.json"
    assert main(["-q", "evaluate", *common(toy), "--uap", str(tmp_path / "u.utf"),
                 "--out-metrics", str(out)]) == 0
    whole = json.loads(out.read_text())
    flips = m["input"]["r_f"] * 40 + m["held_out"]["r_f"] * 200
    assert whole["r_f"] == pytest.approx(flips / 240)


def test_baseline(toy, tmp_path):
    out = tmp_path / "b.json"
    args = ["-q", "baseline", *common(toy), "--zeta", "0.1", "--trials", "3",
            "--sample-total", "40", "--out-metrics", str(out)]
    assert main(args) == 0
    first = json.loads(out.read_text())
    assert first["trials"] == 3
    assert all(abs(n - first["xi"]) <= 1e-9 for n in first["norms"])
    assert main(args) == 0
    assert json.loads(out.read_text()) == first


def test_sweep(toy, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["-q", "sweep", *common(toy), "--zeta", "0.1", "--directions", "pixel",
                 "--max-iters", "50", "--sizes", "5,10", "--validation-size", "30",
                 "--out-csv", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["n"]) for r in rows] == [5, 10]
    assert (tmp_path / "run.json").exists()


def test_io_errors(toy, tmp_path):
    assert main(["-q", "evaluate", *common(toy), "--uap", str(tmp_path / "nope.utf")]) == 4
    (tmp_path / "bad.utf").write_bytes(b"junk")
    assert main(["-q", "evaluate", *common(toy), "--uap", str(tmp_path / "bad.utf")]) == 4
    assert main(["-q", "evaluate", "--manifest", str(tmp_path / "none.csv"),
                 "--oracle-model", str(toy / "model.bin"), "--uap", str(tmp_path / "bad.utf")]) == 4


def test_model_shape_mismatch(toy, tmp_path):
    write_png(tmp_path / "a.png", np.zeros((8, 8, 1)))
    (tmp_path / "m.csv").write_text("path,label\na.png,class0\n")
    assert main(["-q", "baseline", "--manifest", str(tmp_path / "m.csv"),
                 "--oracle-model", str(toy / "model.bin"), "--xi", "1",
                 "--out-metrics", str(tmp_path / "b.json")]) == 2


def test_unreachable_oracle_exit_code(toy, tmp_path):
    assert main(["-q", "attack", "--manifest", str(toy / "manifest.csv"),
                 "--oracle-url", "http://127.0.0.1:9", "--xi", "0.5", "--max-iters", "2",
                 "--out-uap", str(tmp_path / "u.utf")]) == 3


def test_remote_cli_matches_local(toy, tmp_path):
    oracle = load_oracle_weights(str(toy / "model.bin"))
    local, remote = tmp_path / "l", tmp_path / "r"
    assert main(attack_args(toy, local)) == 0
    with OracleServer(oracle) as srv:
        args = attack_args(toy, remote)
        i = args.index("--oracle-model")
        args[i:i + 2] = ["--oracle-url", srv.url]
        assert main(args) == 0
    assert (local / "u.utf").read_bytes() == (remote / "u.utf").read_bytes()
