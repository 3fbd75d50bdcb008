"""Command line: bench, model, replay, sweep.

Exit status is 1 when a validation or replay assertion fails, 2 on bad
arguments or config.
"""

from __future__ import annotations

import argparse
import sys

from .errors import BambooError, ConfigError, ScriptError, TemplateError
from .harness import FLAG_FIELDS, RunConfig, load_sweep, run_experiment, sweep
from .model import ModelParams, summary
from .replay import load_script, replay


def _bench_args(p):
    p.add_argument("--policy", default="bamboo", choices=["bamboo", "wound_wait", "wait_die", "no_wait"])
    p.add_argument("--flags", default=None,
                   help="comma list of " + ",".join(FLAG_FIELDS) + "; 'none' for plain bamboo")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--rows", type=int, default=1024)
    p.add_argument("--workload", default=None, help="workload JSON file (default: ycsb from flags)")
    p.add_argument("--theta", type=float, default=0.9)
    p.add_argument("--read-ratio", type=float, default=0.5)
    p.add_argument("--txn-len", type=int, default=16)
    p.add_argument("--delta", type=float, default=0.15)
    p.add_argument("--inject-delay-us", type=float, default=0.0)
    p.add_argument("--mode", choices=["stored", "interactive"], default=None)
    p.add_argument("--seed", type=int, default=0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--duration-s", type=float, default=None)
    g.add_argument("--txn-count", type=int, default=None)
    p.add_argument("--validate", action="store_true")
    p.add_argument("--out", default=None, help="report path; a .json path also gets a .csv row")


def _parse_flags(text):
    if text is None:
        return None
    if text.strip().lower() == "none":
        return {}
    return {f.strip(): True for f in text.split(",") if f.strip()}


def cmd_bench(a) -> int:
    duration = a.duration_s if (a.duration_s is not None or a.txn_count is not None) else 10.0
    cfg = RunConfig(
        policy=a.policy, flags=_parse_flags(a.flags), threads=a.threads,
        duration_s=duration, txn_count=a.txn_count, rows=a.rows, workload=a.workload,
        theta=a.theta, read_ratio=a.read_ratio, txn_len=a.txn_len, delta=a.delta,
        inject_delay_us=a.inject_delay_us, mode=a.mode, seed=a.seed,
        validate=a.validate, out=a.out,
    )
    rep = run_experiment(cfg)
    if not a.out:
        print(rep.to_json())
    else:
        print(f"{rep.label}: {rep.throughput:.1f} txn/s, abort rate {rep.abort_rate:.4f}, ok={rep.ok}")
    return 0 if rep.ok else 1


def cmd_model(a) -> int:
    s = summary(ModelParams(a.k, a.n, a.d, a.t))
    for k, v in s.items():
        print(f"{k:20s} {v}")
    return 0


def cmd_replay(a) -> int:
    script = load_script(a.script)
    res = replay(script, a.policy, strict=not a.lenient)
    for r in res.assertions:
        tail = "" if r.ok else f"  ({r.detail})"
        print(("ok   " if r.ok else "FAIL ") + f"line {r.lineno} step {r.step_index}: {r.text}{tail}")
    print("statuses:", {k: getattr(v, "name", v) for k, v in res.statuses.items()})
    print("commit order:", res.commit_order)
    if res.chain_hist:
        print("abort chains:", res.chain_hist)
    for s in res.skipped:
        print("skipped:", s)
    return 0 if res.ok else 1


def cmd_sweep(a) -> int:
    rows = sweep(load_sweep(a.sweepfile), a.out)
    bad = 0
    for r in rows:
        print(f"{r['label'] or r['policy']}: throughput={r['throughput']} valid={r['valid']} {r['error']}")
        bad += not r["valid"] or r["valid"] == "False"
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bamboo-bench", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    _bench_args(sub.add_parser("bench", help="run one benchmark"))
    m = sub.add_parser("model", help="evaluate the analytical model")
    m.add_argument("--n", type=float, required=True)
    m.add_argument("--k", type=float, required=True)
    m.add_argument("--d", type=float, required=True)
    m.add_argument("--t", type=float, default=1.0)
    r = sub.add_parser("replay", help="replay a schedule script")
    r.add_argument("script")
    r.add_argument("--policy", default=None)
    r.add_argument("--lenient", action="store_true", help="skip steps that are illegal under the policy")
    s = sub.add_parser("sweep", help="run a sweep file, write CSV")
    s.add_argument("sweepfile")
    s.add_argument("--out", default=None)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    fn = {"bench": cmd_bench, "model": cmd_model, "replay": cmd_replay, "sweep": cmd_sweep}[a.cmd]
    try:
        return fn(a)
    except (ConfigError, ScriptError, TemplateError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except BambooError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
