"""Benchmark driver: config, worker threads, restart loop, metrics, reports.

Each write is a read-modify-write that bumps a little-endian 64-bit counter
in the first 8 payload bytes.  After a run, the sum of counter deltas over
the table must equal the number of committed writes.  Any gap is a lost or
phantom update.

Time accounting per worker (seconds)::

    total = useful + lock_wait + sem_wait + wasted + overhead + unaccounted

``useful`` is committed-attempt time outside waits.  ``wasted`` is
aborted-attempt time outside waits (measured from attempt start).
``overhead`` is instance generation, backoff and restart-loop bookkeeping.
``unaccounted`` is the remaining slack and should stay below 2% of total.

CSV columns (stable order) are listed in :data:`CSV_COLUMNS`.
"""

from __future__ import annotations

import csv
import itertools
import json
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .engine import Engine, Status
from .errors import AbortTxn, ConfigError
from .locking import EX, AbortCause, Policy, ProtocolPolicy, TimestampSource, check_entry
from .planner import delta_cutoff
from .replay import chain_histogram
from .storage import LogSink, TableSpec, load_table
from .validator import validate
from .workload import Generator, MixtureSpec, SyntheticSpec, ZipfSpec, load_workload, spec_from_dict, worker_rng

_now = time.perf_counter

FLAG_FIELDS = ("read_autoretire", "delta_retire", "no_raw_abort", "dynamic_ts")


@dataclass
class RunConfig:
    policy: str = "bamboo"
    flags: dict | None = None  # None: all optimizations on for bamboo
    threads: int = 1
    duration_s: float | None = None
    txn_count: int | None = None
    rows: int = 1024
    workload: object = None  # spec object, dict, JSON path, or None for ycsb
    theta: float = 0.9
    read_ratio: float = 0.5
    txn_len: int = 16
    delta: float = 0.15
    inject_delay_us: float = 0.0
    mode: str | None = None  # stored | interactive; default interactive iff delay > 0
    seed: int = 0
    validate: bool = False
    out: str | None = None
    payload_width: int = 16
    retain_ts_on_restart: bool = False
    backoff_us: float = 0.0
    warmup_frac: float = 0.1
    starvation_audit: bool = False
    audit_interval_s: float = 0.0

    def __post_init__(self):
        errs = []
        try:
            Policy(self.policy)
        except ValueError:
            errs.append(f"policy: unknown {self.policy!r} (choose from {[p.value for p in Policy]})")
        if self.flags is not None:
            bad = set(self.flags) - set(FLAG_FIELDS)
            if bad:
                errs.append(f"flags: unknown {sorted(bad)}")
        if not isinstance(self.threads, int) or self.threads < 1:
            errs.append(f"threads: must be an int >= 1, got {self.threads!r}")
        if (self.duration_s is None) == (self.txn_count is None):
            errs.append("duration_s/txn_count: set exactly one")
        if self.duration_s is not None and self.duration_s <= 0:
            errs.append(f"duration_s: must be > 0, got {self.duration_s}")
        if self.txn_count is not None and self.txn_count < 1:
            errs.append(f"txn_count: must be >= 1, got {self.txn_count}")
        if self.rows < 1:
            errs.append(f"rows: must be >= 1, got {self.rows}")
        if not 0.0 <= self.delta <= 1.0:
            errs.append(f"delta: must be in [0, 1], got {self.delta}")
        if self.inject_delay_us < 0:
            errs.append("inject_delay_us: must be >= 0")
        if self.mode not in (None, "stored", "interactive"):
            errs.append(f"mode: must be stored or interactive, got {self.mode!r}")
        if not 0.0 <= self.warmup_frac < 1.0:
            errs.append("warmup_frac: must be in [0, 1)")
        if self.payload_width < 8:
            errs.append("payload_width: must be >= 8 (counter field)")
        if not 0.0 <= self.read_ratio <= 1.0:
            errs.append("read_ratio: must be in [0, 1]")
        if self.theta < 0:
            errs.append("theta: must be >= 0")
        if self.txn_len < 1:
            errs.append("txn_len: must be >= 1")
        if errs:
            raise ConfigError("; ".join(errs))

    @property
    def run_mode(self) -> str:
        return self.mode or ("interactive" if self.inject_delay_us > 0 else "stored")

    def protocol(self) -> ProtocolPolicy:
        kind = Policy(self.policy)
        if self.flags is None:
            fl = {f: kind is Policy.BAMBOO for f in FLAG_FIELDS}
        else:
            fl = {f: bool(self.flags.get(f, False)) for f in FLAG_FIELDS}
        return ProtocolPolicy(kind, delta=self.delta, **fl)

    def workload_spec(self):
        w = self.workload
        if w is None:
            return ZipfSpec(self.rows, self.theta, self.read_ratio, self.txn_len)
        if isinstance(w, (ZipfSpec, SyntheticSpec, MixtureSpec)):
            return w
        if isinstance(w, dict):
            return spec_from_dict(w, self.rows)
        return load_workload(w, self.rows)

    def label(self) -> str:
        p = self.protocol()
        on = [f for f in FLAG_FIELDS if getattr(p, f)]
        return self.policy + (f"[{','.join(on)}]" if on else "")


@dataclass
class WorkerStats:
    commits: int = 0
    commits_measured: int = 0
    attempts: int = 0
    aborts: Counter = field(default_factory=Counter)
    abandoned: int = 0
    committed_writes: int = 0
    useful: float = 0.0
    lock_wait: float = 0.0
    sem_wait: float = 0.0
    wasted: float = 0.0
    overhead: float = 0.0
    total: float = 0.0
    spans: float = 0.0  # wall time inside attempts
    latencies: list = field(default_factory=list)
    abort_notes: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)

    @property
    def unaccounted(self) -> float:
        return self.total - (self.useful + self.lock_wait + self.sem_wait + self.wasted + self.overhead)


@dataclass
class AbortNote:
    id: int
    abort_cause: AbortCause
    abort_root: int
    status: Status = Status.ABORTED


def _bump(payload: bytes) -> bytes:
    c = (int.from_bytes(payload[:8], "little") + 1) & 0xFFFFFFFFFFFFFFFF
    return c.to_bytes(8, "little") + payload[8:]


def _counter(payload: bytes) -> int:
    return int.from_bytes(payload[:8], "little")


def retire_flags(inst, policy: ProtocolPolicy, mode: str) -> list:
    if mode == "interactive" or not policy.delta_retire:
        return inst.retire
    cut = delta_cutoff(len(inst.accesses), policy.delta)
    return [r and i < cut for i, r in enumerate(inst.retire)]


def run_transaction(engine: Engine, inst, cfg: RunConfig, stats: WorkerStats,
                    stop: threading.Event | None = None, measure_from: float = 0.0):
    """Execute one instance, restarting on WOUND/CASCADE/SELF aborts.

    Returns the final status of the last attempt."""
    first = _now()
    retire = retire_flags(inst, engine.policy, cfg.run_mode)
    ts, attempt = "auto", 0
    while True:
        t0 = _now()
        txn = engine.begin(ts=ts, attempt=attempt)
        stats.attempts += 1
        try:
            for (tname, key, mode), r in zip(inst.accesses, retire):
                if mode is EX:
                    engine.update(txn, tname, key, _bump, retire=r)
                else:
                    engine.read(txn, tname, key)
            if inst.user_abort:
                engine.abort(txn, AbortCause.USER)
                raise AbortTxn(AbortCause.USER)
            engine.commit(txn)
        except AbortTxn:
            if txn.status is not Status.ABORTED:
                engine.abort(txn)
            end = _now()
            cause = txn.abort_cause
            stats.aborts[cause.name] += 1
            stats.abort_notes.append(AbortNote(txn.id, cause, txn.abort_root))
            stats.lock_wait += txn.lock_wait
            stats.sem_wait += txn.sem_wait
            stats.wasted += (end - t0) - txn.lock_wait - txn.sem_wait
            stats.spans += end - t0
            stats.outcomes.append(("abort", cause.name))
            if cause is AbortCause.USER:
                return Status.ABORTED
            if stop is not None and stop.is_set():
                stats.abandoned += 1
                return Status.ABORTED
            if cfg.backoff_us:
                time.sleep(cfg.backoff_us / 1e6)
            attempt += 1
            ts = txn.ts if (cfg.retain_ts_on_restart and txn.ts is not None) else "auto"
            continue
        end = _now()
        stats.commits += 1
        if end >= measure_from:
            stats.commits_measured += 1
        stats.committed_writes += len(txn.write_set)
        stats.lock_wait += txn.lock_wait
        stats.sem_wait += txn.sem_wait
        stats.useful += (end - t0) - txn.lock_wait - txn.sem_wait
        stats.spans += end - t0
        stats.latencies.append(end - first)
        stats.outcomes.append(("commit", len(txn.write_set)))
        return Status.COMMITTED


@dataclass
class RunReport:
    label: str
    policy: str
    flags: dict
    mode: str
    threads: int
    seed: int
    elapsed_s: float
    measured_s: float
    commits: int
    commits_measured: int
    attempts: int
    throughput: float
    abort_rate: float
    aborts: dict
    abandoned: int
    chain_hist: dict
    chain_identity_ok: bool
    time: dict
    per_worker_closure: list
    accounting_ok: bool
    wait_per_commit_s: float
    latency_s: dict
    lost_updates: int
    semaphore_violations: int
    starvation_violations: int
    audit_problems: list
    validation: dict | None
    config: dict = field(default_factory=dict)
    outcomes: list | None = None

    @property
    def ok(self) -> bool:
        v = self.validation is None or self.validation.get("ok", False)
        return (v and self.lost_updates == 0 and self.semaphore_violations == 0
                and not self.audit_problems and self.chain_identity_ok)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("outcomes")
        d["ok"] = self.ok
        d["chain_hist"] = {str(k): v for k, v in sorted(self.chain_hist.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=str)

    def csv_row(self) -> dict:
        return {
            "label": self.label, "policy": self.policy, "mode": self.mode,
            "threads": self.threads, "seed": self.seed,
            "theta": self.config.get("theta"), "delta": self.config.get("delta"),
            "inject_delay_us": self.config.get("inject_delay_us"),
            "elapsed_s": round(self.elapsed_s, 6), "commits": self.commits,
            "throughput": round(self.throughput, 3), "abort_rate": round(self.abort_rate, 6),
            "aborts_wound": self.aborts.get("WOUND", 0),
            "aborts_cascade": self.aborts.get("CASCADE", 0),
            "aborts_user": self.aborts.get("USER", 0),
            "aborts_self": self.aborts.get("SELF", 0),
            "lock_wait_s": round(self.time["lock_wait"], 6),
            "sem_wait_s": round(self.time["sem_wait"], 6),
            "wasted_s": round(self.time["wasted"], 6),
            "useful_s": round(self.time["useful"], 6),
            "p50_ms": round(self.latency_s.get("p50", 0) * 1e3, 4),
            "p99_ms": round(self.latency_s.get("p99", 0) * 1e3, 4),
            "valid": self.ok, "error": "",
        }


CSV_COLUMNS = [
    "label", "policy", "mode", "threads", "seed", "theta", "delta", "inject_delay_us",
    "elapsed_s", "commits", "throughput", "abort_rate", "aborts_wound", "aborts_cascade",
    "aborts_user", "aborts_self", "lock_wait_s", "sem_wait_s", "wasted_s", "useful_s",
    "p50_ms", "p99_ms", "valid", "error",
]


def _audit_loop(tables, policy, stop, interval, problems):
    while not stop.wait(interval):
        for t in tables.values():
            for e in list(t.lock_entries.values()):
                with e.latch:
                    problems.extend(check_entry(e, policy))
            if len(problems) > 100:
                return


def run_experiment(cfg: RunConfig, keep_outcomes: bool = False) -> RunReport:
    policy = cfg.protocol()
    spec = cfg.workload_spec()
    table = load_table(TableSpec("main", cfg.rows, 1, cfg.payload_width, cfg.seed))
    initial = {k: _counter(t.payload) for k, t in table.rows.items()}
    history = [] if cfg.validate else None
    engine = Engine(table, policy, log=LogSink(keep_records=False), ts_source=TimestampSource(),
                    retire_writes="always" if cfg.run_mode == "interactive" else "plan",
                    inject_delay_us=cfg.inject_delay_us, history=history,
                    starvation_audit=cfg.starvation_audit)
    stats = [WorkerStats() for _ in range(cfg.threads)]
    stop = threading.Event()
    if cfg.txn_count is not None:
        quotas = [cfg.txn_count // cfg.threads + (i < cfg.txn_count % cfg.threads)
                  for i in range(cfg.threads)]
    else:
        quotas = [None] * cfg.threads
    start_gate = threading.Barrier(cfg.threads + 1)
    t_start = [0.0]
    measure_from = [0.0]
    errors = []

    def worker(i):
        st = stats[i]
        gen = Generator(spec, worker_rng(cfg.seed, i))
        start_gate.wait()
        w0 = _now()
        try:
            n = 0
            g0 = w0
            while not stop.is_set() and (quotas[i] is None or n < quotas[i]):
                # g0 chains from the previous iteration so loop bookkeeping is counted
                inst = gen()
                c0 = _now()
                s0 = st.spans
                run_transaction(engine, inst, cfg, st, stop, measure_from[0])
                c1 = _now()
                # generation plus restart-loop time outside attempts
                st.overhead += (c0 - g0) + (c1 - c0) - (st.spans - s0)
                n += 1
                g0 = c1
        except BaseException as e:  # surfaced after join
            errors.append(e)
            stop.set()
        st.total = _now() - w0

    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(cfg.threads)]
    for th in threads:
        th.start()
    audit_problems: list = []
    auditor = None
    if cfg.audit_interval_s > 0:
        auditor = threading.Thread(target=_audit_loop, daemon=True,
                                   args=(engine.tables, policy, stop, cfg.audit_interval_s, audit_problems))
    t_start[0] = _now()
    measure_from[0] = t_start[0] + (cfg.warmup_frac * cfg.duration_s if cfg.duration_s else 0.0)
    start_gate.wait()
    if auditor:
        auditor.start()
    if cfg.duration_s is not None:
        stop.wait(cfg.duration_s)
        stop.set()
    for th in threads:
        th.join()
    stop.set()
    if auditor:
        auditor.join()
    elapsed = _now() - t_start[0]
    if errors:
        raise errors[0]

    tot = WorkerStats()
    notes = []
    lat = []
    for s in stats:
        for f in ("commits", "commits_measured", "attempts", "abandoned", "committed_writes",
                  "useful", "lock_wait", "sem_wait", "wasted", "overhead", "total"):
            setattr(tot, f, getattr(tot, f) + getattr(s, f))
        tot.aborts.update(s.aborts)
        notes.extend(s.abort_notes)
        lat.extend(s.latencies)
    measured = elapsed - (measure_from[0] - t_start[0])
    commits_m = tot.commits_measured if cfg.duration_s else tot.commits
    throughput = commits_m / measured if measured > 0 else 0.0
    n_aborts = sum(tot.aborts.values())
    hist = chain_histogram(notes)
    identity = sum(k * v for k, v in hist.items()) == tot.aborts.get("CASCADE", 0) + sum(
        1 for n in notes if n.abort_cause is not AbortCause.CASCADE)
    closure = [abs(s.unaccounted) / s.total if s.total > 0 else 0.0 for s in stats]
    final = sum((_counter(t.payload) - initial[k]) & 0xFFFFFFFFFFFFFFFF for k, t in table.rows.items())
    lost = tot.committed_writes - final
    verdict = validate(history).summary() if cfg.validate else None
    pct = {}
    if lat:
        a = np.asarray(lat)
        pct = {f"p{q}": float(np.percentile(a, q)) for q in (50, 90, 99)}
        pct["mean"] = float(a.mean())
    cfg_d = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "workload"}
    cfg_d["workload"] = repr(spec)
    rep = RunReport(
        label=cfg.label(), policy=cfg.policy,
        flags={f: getattr(policy, f) for f in FLAG_FIELDS}, mode=cfg.run_mode,
        threads=cfg.threads, seed=cfg.seed, elapsed_s=elapsed, measured_s=measured,
        commits=tot.commits, commits_measured=commits_m, attempts=tot.attempts,
        throughput=throughput, abort_rate=n_aborts / tot.attempts if tot.attempts else 0.0,
        aborts=dict(tot.aborts), abandoned=tot.abandoned, chain_hist=hist,
        chain_identity_ok=identity,
        time={"useful": tot.useful, "lock_wait": tot.lock_wait, "sem_wait": tot.sem_wait,
              "wasted": tot.wasted, "overhead": tot.overhead, "total": tot.total,
              "unaccounted": tot.unaccounted},
        per_worker_closure=closure, accounting_ok=all(c <= 0.02 for c in closure),
        wait_per_commit_s=(tot.lock_wait + tot.sem_wait) / tot.commits if tot.commits else 0.0,
        latency_s=pct, lost_updates=lost, semaphore_violations=engine.semaphore_violations,
        starvation_violations=len(engine.starvation_violations),
        audit_problems=audit_problems[:20], validation=verdict, config=cfg_d,
        outcomes=[o for s in stats for o in s.outcomes] if keep_outcomes else None,
    )
    if cfg.out:
        write_report(rep, cfg.out)
    return rep


def write_report(rep: RunReport, path: str):
    with open(path, "w") as f:
        f.write(rep.to_json())
        f.write("\n")
    if path.endswith(".json"):
        write_csv([rep.csv_row()], path[:-5] + ".csv")


def write_csv(rows: list, path: str):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in CSV_COLUMNS})


# -- sweeps ------------------------------------------------------------------


def expand_sweep(obj: dict) -> list:
    """``{"base": {...}, "vary": {"theta": [...], ...}}`` or ``{"runs": [...]}``."""
    base = dict(obj.get("base", {}))
    if "runs" in obj:
        return [{**base, **r} for r in obj["runs"]]
    vary = obj.get("vary", {})
    names = list(vary)
    return [{**base, **dict(zip(names, combo))} for combo in itertools.product(*(vary[n] for n in names))]


def sweep(configs, csv_path: str | None = None) -> list:
    """Run each config; a failing config yields an error row and the sweep continues."""
    rows = []
    for c in configs:
        try:
            cfg = c if isinstance(c, RunConfig) else RunConfig(**c)
            row = run_experiment(cfg).csv_row()
        except Exception as e:  # recorded per row
            row = {k: "" for k in CSV_COLUMNS}
            if isinstance(c, dict):
                row.update({k: c.get(k, "") for k in ("policy", "threads", "seed", "theta", "delta")})
            row["valid"] = False
            row["error"] = f"{type(e).__name__}: {e}"
        rows.append(row)
    if csv_path:
        write_csv(rows, csv_path)
    return rows


def load_sweep(path) -> list:
    with open(path) as f:
        return expand_sweep(json.load(f))


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **kw)
