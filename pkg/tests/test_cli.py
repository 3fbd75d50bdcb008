import json
import subprocess
import sys

from bamboo.cli import main


def test_model_prints(capsys):
    assert main(["model", "--n", "32", "--k", "16", "--d", "1e6"]) == 0
    out = capsys.readouterr().out
    assert "p_conflict" in out and "0.004096" in out


def test_bench_json(tmp_path, capsys):
    out = tmp_path / "b.json"
    rc = main(["bench", "--policy", "wound_wait", "--threads", "2", "--txn-count", "100",
               "--rows", "64", "--validate", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["ok"] and doc["commits"] == 100
    assert (tmp_path / "b.csv").exists()


def test_bench_bad_config_exit_2(capsys):
    assert main(["bench", "--threads", "0", "--txn-count", "5"]) == 2
    assert "threads" in capsys.readouterr().err


def test_replay_exit_codes(tmp_path):
    good = tmp_path / "g.txt"
    good.write_text("begin T1 ts=1\nT1 read A\nassert owners(A)=[T1/SH]\n")
    bad = tmp_path / "b.txt"
    bad.write_text("begin T1 ts=1\nT1 read A\nassert owners(A)=[]\n")
    assert main(["replay", str(good)]) == 0
    assert main(["replay", str(bad)]) == 1
    assert main(["replay", str(good), "--policy", "wound_wait"]) == 0


def test_sweep_cli(tmp_path):
    sw = tmp_path / "s.json"
    sw.write_text(json.dumps({"base": {"txn_count": 10, "rows": 32},
                              "vary": {"policy": ["bamboo", "no_wait"]}}))
    assert main(["sweep", str(sw), "--out", str(tmp_path / "s.csv")]) == 0
    sw.write_text(json.dumps({"runs": [{"txn_count": 10, "rows": 32, "threads": 0}]}))
    assert main(["sweep", str(sw)]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "bamboo", "model", "--n", "1", "--k", "2", "--d", "100"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "benefit_holds" in r.stdout
