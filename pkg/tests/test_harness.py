import csv
import json

import pytest

from bamboo.errors import ConfigError
from bamboo.harness import CSV_COLUMNS, RunConfig, expand_sweep, run_experiment, sweep


def test_config_field_errors():
    with pytest.raises(ConfigError) as e:
        RunConfig(policy="bogus", threads=0, duration_s=1, txn_count=5, delta=2)
    msg = str(e.value)
    for f in ("policy", "threads", "duration_s/txn_count", "delta"):
        assert f in msg


def test_disjoint_keys_no_aborts():
    wl = {"kind": "synthetic", "K": 4, "hotspots": [0.0], "filler_read_ratio": 1.0}
    # a single worker cannot conflict with itself
    rep = run_experiment(RunConfig(threads=1, txn_count=1000, rows=5000, workload=wl, validate=True))
    assert rep.abort_rate == 0 and rep.commits == 1000 and rep.ok


def test_single_row_no_wait_forced_conflicts():
    wl = {"kind": "ycsb", "K": 1, "theta": 0.0, "read_ratio": 0.0}
    rep = run_experiment(RunConfig(policy="no_wait", threads=8, duration_s=1.0, rows=1,
                                   workload=wl, inject_delay_us=50, validate=True))
    assert rep.abort_rate > 0
    assert set(rep.aborts) <= {"WOUND", "SELF"}
    assert rep.ok and rep.lost_updates == 0


def test_report_fields_and_identities(tmp_path):
    out = tmp_path / "r.json"
    rep = run_experiment(RunConfig(policy="bamboo", threads=4, duration_s=1.0, rows=64,
                                   validate=True, out=str(out)))
    doc = json.loads(out.read_text())
    for k in ("throughput", "abort_rate", "aborts", "chain_hist", "time", "latency_s", "validation"):
        assert k in doc
    assert rep.accounting_ok and max(rep.per_worker_closure) <= 0.02
    assert rep.chain_identity_ok
    roots = sum(v for k, v in rep.aborts.items() if k != "CASCADE")
    assert sum(k * v for k, v in rep.chain_hist.items()) == rep.aborts.get("CASCADE", 0) + roots
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert list(rows[0]) == CSV_COLUMNS


def test_determinism_single_thread():
    cfg = RunConfig(threads=1, txn_count=400, rows=100, seed=3, validate=True)
    a, b = run_experiment(cfg).to_dict(), run_experiment(cfg).to_dict()
    timing = {"elapsed_s", "measured_s", "throughput", "time", "per_worker_closure",
              "latency_s", "wait_per_commit_s"}
    for k in set(a) - timing:
        assert a[k] == b[k], k


def test_sweep_rows_and_partial_failure(tmp_path):
    cfgs = expand_sweep({"base": {"threads": 1, "txn_count": 20, "rows": 64},
                         "vary": {"theta": [i / 10 for i in range(10)]}})
    assert len(cfgs) == 10
    cfgs[3]["threads"] = 0
    rows = sweep(cfgs, str(tmp_path / "s.csv"))
    assert len(rows) == 10
    assert rows[3]["error"] and not rows[3]["valid"]
    assert all(r["valid"] for i, r in enumerate(rows) if i != 3)
    assert len(list(csv.DictReader(open(tmp_path / "s.csv")))) == 10


def test_hotspot_position_sweep_axes():
    cfgs = expand_sweep({"base": {"txn_count": 1},
                         "vary": {"workload": [{"kind": "synthetic", "hotspots": [p]}
                                               for p in (0, 0.25, 0.5, 0.75, 1.0)]}})
    assert [c["workload"]["hotspots"][0] for c in cfgs] == [0, 0.25, 0.5, 0.75, 1.0]


def test_wait_time_directional():
    wl = {"kind": "synthetic", "K": 16, "hotspots": [0.0]}
    res = {}
    for pol in ("bamboo", "wound_wait"):
        res[pol] = run_experiment(RunConfig(policy=pol, threads=4, duration_s=1.0, rows=10_000,
                                            workload=wl, inject_delay_us=50))
    assert res["bamboo"].wait_per_commit_s < res["wound_wait"].wait_per_commit_s
