"""Single-threaded replay of scripted interleavings through the real engine.

Script grammar, one step per line (``#`` starts a comment)::

    policy bamboo|wound_wait|wait_die|no_wait
    flags autoretire no_raw_abort dynamic_ts delta_retire
    begin T1 [ts=N | ts=none]
    T1 read A
    T1 write A
    T1 retire A
    T1 commit
    T1 abort
    assert <check>

Checks::

    owners(A)=[T2/SH]       retired(A)=[T1/EX, T2/SH]      waiters(A)=[]
    chain(A)=[T1]           dirty EX writers in retired order
    sem(T2)=1               ts(T2)=3 | none
    status(T2)=COMMITTED    RUNNING | COMMIT_WAIT | WAITING | ABORTED
    outcome(T2)=GRANTED     outcome of T2's latest access: GRANTED | WAITING | ABORT_SELF | LOCAL
    cause(T2)=CASCADE       flagged(T2)=true
    read(T2,A)=T1           writer of the version T2 read; ``init`` for the loaded row
    cascade(T1)={T2,T3}     transactions whose abort T1 caused directly
    commit_order=T1<T2      chain_hist={4:1}

Keys are arbitrary identifiers mapped to rows of one table.  Victims of a
wound or cascade run their abort path right after the step that doomed them,
the way a worker would once it noticed the flag.
"""

from __future__ import annotations

import random
import re
from collections import Counter
from dataclasses import dataclass, field

from .engine import Engine, Status
from .errors import AbortTxn, ProtocolMisuse, ScriptError
from .locking import EX, SH, AbortCause, Policy, ProtocolPolicy
from .storage import TableSpec, load_table

TABLE = "main"
WIDTH = 16

_STEP = re.compile(r"^(?P<txn>\w+)\s+(?P<op>read|write|retire|commit|abort)(?:\s+(?P<key>\w+))?$")
_BEGIN = re.compile(r"^begin\s+(?P<txn>\w+)(?:\s+ts=(?P<ts>\w+))?$")
_ASSERT = re.compile(r"^assert\s+(?P<lhs>[^=]+?)\s*=\s*(?P<rhs>.+)$")

FLAG_NAMES = {
    "autoretire": "read_autoretire",
    "read_autoretire": "read_autoretire",
    "no_raw_abort": "no_raw_abort",
    "dynamic_ts": "dynamic_ts",
    "delta_retire": "delta_retire",
}


@dataclass
class Step:
    lineno: int
    kind: str  # begin | access | retire | commit | abort | assert
    txn: str | None = None
    op: str | None = None
    key: str | None = None
    ts: object = "auto"
    lhs: str | None = None
    rhs: str | None = None
    text: str = ""


@dataclass
class Script:
    steps: list
    policy: str | None = None
    flags: tuple = ()

    def keys(self) -> list:
        out = []
        for s in self.steps:
            if s.key and s.key not in out:
                out.append(s.key)
            if s.kind == "assert":
                for k in re.findall(r"\((\w+)\)|,(\w+)\)", s.lhs):
                    for kk in k:
                        if kk and not re.fullmatch(r"T\w*", kk) and kk not in out:
                            out.append(kk)
        return out

    def without_retires(self) -> "Script":
        return Script([s for s in self.steps if s.kind != "retire"], self.policy,
                      tuple(f for f in self.flags if FLAG_NAMES[f] not in
                            ("read_autoretire", "no_raw_abort", "delta_retire")))

    def without_asserts(self) -> "Script":
        return Script([s for s in self.steps if s.kind != "assert"], self.policy, self.flags)


def parse_script(text: str) -> Script:
    steps, policy, flags = [], None, ()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("policy "):
            policy = line.split(None, 1)[1].strip().lower()
            Policy(policy)
            continue
        if line.startswith("flags"):
            names = line.split()[1:]
            for n in names:
                if n not in FLAG_NAMES:
                    raise ScriptError(f"unknown flag {n!r}", lineno)
            flags = tuple(names)
            continue
        m = _BEGIN.match(line)
        if m:
            ts = m.group("ts")
            if ts is None:
                ts = "auto"
            elif ts == "none":
                ts = None
            else:
                try:
                    ts = int(ts)
                except ValueError:
                    raise ScriptError(f"bad timestamp {ts!r}", lineno) from None
            steps.append(Step(lineno, "begin", txn=m.group("txn"), ts=ts, text=line))
            continue
        m = _ASSERT.match(line)
        if m:
            steps.append(Step(lineno, "assert", lhs=m.group("lhs").replace(" ", ""),
                              rhs=m.group("rhs").strip(), text=line))
            continue
        m = _STEP.match(line)
        if m:
            op = m.group("op")
            key = m.group("key")
            if op in ("read", "write", "retire") and key is None:
                raise ScriptError(f"{op} needs a key", lineno)
            kind = "access" if op in ("read", "write") else op
            steps.append(Step(lineno, kind, txn=m.group("txn"), op=op, key=key, text=line))
            continue
        raise ScriptError(f"cannot parse {line!r}", lineno)
    return Script(steps, policy, flags)


def load_script(path) -> Script:
    with open(path) as f:
        return parse_script(f.read())


@dataclass
class AssertionResult:
    lineno: int
    step_index: int
    text: str
    ok: bool
    detail: str = ""


@dataclass
class ReplayResult:
    assertions: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    statuses: dict = field(default_factory=dict)
    commit_order: list = field(default_factory=list)
    chain_hist: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(a.ok for a in self.assertions)

    def failures(self):
        return [a for a in self.assertions if not a.ok]


def make_policy(name, flags=()) -> ProtocolPolicy:
    kw = {FLAG_NAMES[f]: True for f in flags}
    return ProtocolPolicy(Policy(name.lower()), **kw)


def chain_histogram(txns) -> dict:
    """{chain length: count}; a chain is a non-cascade abort plus its cascade victims."""
    roots = [t for t in txns if t.status is Status.ABORTED and t.abort_cause is not AbortCause.CASCADE]
    victims = Counter(t.abort_root for t in txns
                      if t.status is Status.ABORTED and t.abort_cause is AbortCause.CASCADE)
    return dict(Counter(1 + victims.get(t.id, 0) for t in roots))


class Replayer:
    def __init__(self, script: Script, policy: ProtocolPolicy | str | None = None,
                 strict: bool = True):
        self.script = script
        if policy is None:
            policy = make_policy(script.policy or "bamboo", script.flags)
        elif isinstance(policy, str):
            policy = make_policy(policy, script.flags)
        self.policy = policy
        self.strict = strict
        keys = script.keys()
        self.key_ids = {k: i for i, k in enumerate(keys)}
        self.table = load_table(TableSpec(TABLE, max(1, len(keys)), 1, WIDTH, seed=0))
        self.engine = Engine(self.table, policy)
        self.txns: dict = {}
        self.pending: dict = {}
        self.outcome: dict = {}

    # -- helpers -------------------------------------------------------------

    def _key(self, name):
        if name not in self.key_ids:
            raise ScriptError(f"unknown key {name!r}")
        return self.key_ids[name]

    def _payload(self, txn):
        return txn.name.encode().ljust(WIDTH, b".")[:WIDTH]

    def _abort(self, txn):
        if txn.status is not Status.ABORTED:
            self.pending.pop(txn.name, None)
            self.engine.abort(txn)

    def _settle(self):
        changed = True
        while changed:
            changed = False
            for name, txn in self.txns.items():
                if txn.status is Status.ABORTED or txn.status is Status.COMMITTED:
                    continue
                if txn.aborted:
                    self._abort(txn)
                    changed = True
                    continue
                p = self.pending.get(name)
                if p is None:
                    continue
                if p[0] == "access":
                    _, key, op, req = p
                    if req.granted:
                        del self.pending[name]
                        self._finish(txn, key, op, req)
                        changed = True
                elif p[0] == "commit":
                    try:
                        if self.engine.try_commit(txn):
                            del self.pending[name]
                            changed = True
                    except AbortTxn:
                        self._abort(txn)
                        changed = True

    def _finish(self, txn, key, op, req):
        try:
            self.engine.finish_access(
                txn, TABLE, key, req,
                update=(lambda _old, t=txn: self._payload(t)) if op == "write" else None,
                retire=False,
            )
        except AbortTxn:
            self._abort(txn)

    def snapshot(self):
        entries = tuple(
            (k, self.table.lock_entries[i].state() if i in self.table.lock_entries else ((), (), ()))
            for k, i in self.key_ids.items()
        )
        txns = tuple(
            (n, self._status(t), t.semaphore, t.aborted,
             t.abort_cause.name if t.abort_cause else None, self.outcome.get(n))
            for n, t in self.txns.items()
        )
        return entries, txns

    def _status(self, txn):
        if txn.name in self.pending and self.pending[txn.name][0] == "access":
            return "WAITING"
        return txn.status.name

    # -- stepping ------------------------------------------------------------

    def _skip_or_fail(self, step, msg, result):
        if self.strict:
            raise ScriptError(msg, step.lineno)
        result.skipped.append((step.lineno, msg))

    def _usable(self, step, result):
        txn = self.txns.get(step.txn)
        if txn is None:
            self._skip_or_fail(step, f"{step.txn} not begun", result)
            return None
        if txn.status is Status.ABORTED and step.kind != "abort":
            self._skip_or_fail(step, f"{step.txn} is aborted", result)
            return None
        if txn.status is Status.COMMITTED:
            self._skip_or_fail(step, f"{step.txn} already committed", result)
            return None
        if step.txn in self.pending and step.kind != "abort":
            self._skip_or_fail(step, f"{step.txn} is blocked", result)
            return None
        return txn

    def run(self) -> ReplayResult:
        result = ReplayResult()
        for idx, step in enumerate(self.script.steps):
            if step.kind == "assert":
                ok, detail = self._check(step)
                result.assertions.append(AssertionResult(step.lineno, idx, step.text, ok, detail))
                continue
            self._apply(step, result)
            self._settle()
            result.snapshots.append(self.snapshot())
        result.final = {k: self.table.lock_entries[i].state() if i in self.table.lock_entries
                        else ((), (), ()) for k, i in self.key_ids.items()}
        result.statuses = {n: self._status(t) for n, t in self.txns.items()}
        result.commit_order = [t.name for t in sorted(
            (t for t in self.txns.values() if t.commit_seq is not None),
            key=lambda t: t.commit_seq)]
        result.chain_hist = chain_histogram(self.txns.values())
        return result

    def _apply(self, step, result):
        eng = self.engine
        if step.kind == "begin":
            if step.txn in self.txns:
                self._skip_or_fail(step, f"{step.txn} begun twice", result)
                return
            self.txns[step.txn] = eng.begin(ts=step.ts, name=step.txn)
            return
        txn = self._usable(step, result)
        if txn is None:
            return
        if step.kind == "abort":
            if txn.status is not Status.ABORTED:
                self.pending.pop(step.txn, None)
                eng.abort(txn, AbortCause.USER)
            return
        if step.kind == "commit":
            try:
                if not eng.try_commit(txn):
                    self.pending[step.txn] = ("commit",)
            except AbortTxn:
                self._abort(txn)
            return
        key = self._key(step.key)
        if step.kind == "retire":
            try:
                eng.retire(txn, TABLE, key)
            except AbortTxn:
                self._abort(txn)
            except ProtocolMisuse as e:
                self._skip_or_fail(step, str(e), result)
            return
        mode = EX if step.op == "write" else SH
        try:
            st, req = eng.start_access(txn, TABLE, key, mode)
        except AbortTxn:
            self.outcome[step.txn] = "ABORT_SELF"
            self._abort(txn)
            return
        if st == "local":
            self.outcome[step.txn] = "LOCAL"
            if step.op == "write":
                txn.write_set[(TABLE, key)] = self._payload(txn)
        elif st == "granted":
            self.outcome[step.txn] = "GRANTED"
            self._finish(txn, key, step.op, req)
        else:
            self.outcome[step.txn] = "WAITING"
            self.pending[step.txn] = ("access", key, step.op, req)

    # -- assertions ----------------------------------------------------------

    def _txn(self, name):
        if name not in self.txns:
            raise ScriptError(f"unknown transaction {name!r}")
        return self.txns[name]

    def _check(self, step):
        lhs, rhs = step.lhs, step.rhs
        try:
            got, want = self._evaluate(lhs, rhs)
        except ScriptError as e:
            return False, str(e)
        ok = got == want
        return ok, "" if ok else f"expected {want!r}, got {got!r}"

    def _evaluate(self, lhs, rhs):
        m = re.fullmatch(r"(owners|retired|waiters|chain)\((\w+)\)", lhs)
        if m:
            which, key = m.groups()
            entry = self.table.lock_entries.get(self._key(key))
            if which == "chain":
                got = [r.txn.name for r in entry.retired if r.mode is EX] if entry else []
                return got, _parse_list(rhs, modes=False)
            lst = getattr(entry, which) if entry else []
            return [f"{r.txn.name}/{r.mode.name}" for r in lst], _parse_list(rhs)
        m = re.fullmatch(r"(sem|ts|status|outcome|cause|flagged)\((\w+)\)", lhs)
        if m:
            what, name = m.groups()
            t = self._txn(name)
            if what == "sem":
                return t.semaphore, int(rhs)
            if what == "ts":
                return t.ts, None if rhs == "none" else int(rhs)
            if what == "status":
                return self._status(t), rhs.upper()
            if what == "outcome":
                return self.outcome.get(name), rhs.upper()
            if what == "cause":
                return (t.abort_cause.name if t.abort_cause else None), rhs.upper()
            return t.aborted, rhs.lower() == "true"
        m = re.fullmatch(r"read\((\w+),(\w+)\)", lhs)
        if m:
            t = self._txn(m.group(1))
            rec = t.read_set.get((TABLE, self._key(m.group(2))))
            if rec is None:
                for a in t.accesses:
                    if a.key == self._key(m.group(2)):
                        rec = (a.read_version, None)
            if rec is None:
                return None, rhs
            writer = rec[0][0]
            names = {x.id: n for n, x in self.txns.items()}
            return ("init" if writer is None else names.get(writer, writer)), rhs
        m = re.fullmatch(r"cascade\((\w+)\)", lhs)
        if m:
            t = self._txn(m.group(1))
            return sorted(x.name for x in t.cascaded), sorted(_parse_set(rhs))
        if lhs == "commit_order":
            order = [t.name for t in sorted(
                (t for t in self.txns.values() if t.commit_seq is not None),
                key=lambda t: t.commit_seq)]
            return order, [x.strip() for x in rhs.split("<") if x.strip()]
        if lhs == "chain_hist":
            want = {}
            body = rhs.strip().strip("{}")
            for part in filter(None, (p.strip() for p in body.split(","))):
                a, b = part.split(":")
                want[int(a)] = int(b)
            return chain_histogram(self.txns.values()), want
        raise ScriptError(f"unknown assertion {lhs!r}")


def _parse_list(text, modes=True):
    body = text.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise ScriptError(f"expected a [list], got {text!r}")
    items = [x.strip() for x in body[1:-1].split(",") if x.strip()]
    if modes:
        return [x if "/" in x else x + "/SH" for x in items]
    return items


def _parse_set(text):
    body = text.strip()
    if not (body.startswith("{") and body.endswith("}")):
        raise ScriptError(f"expected a {{set}}, got {text!r}")
    return [x.strip() for x in body[1:-1].split(",") if x.strip()]


def replay(script: Script | str, policy=None, strict=True) -> ReplayResult:
    if isinstance(script, str):
        script = parse_script(script)
    return Replayer(script, policy, strict).run()


def random_script(rng: random.Random, n_txns=4, keys="ABC", n_steps=24) -> Script:
    """Random interleaving for differential replay; run with ``strict=False``."""
    names = [f"T{i + 1}" for i in range(n_txns)]
    tss = rng.sample(range(1, 10 * n_txns), n_txns)
    lines = [f"begin {n} ts={t}" for n, t in zip(names, tss)]
    for _ in range(n_steps):
        n = rng.choice(names)
        op = rng.choices(["read", "write", "retire", "commit", "abort"], [4, 4, 3, 2, 1])[0]
        if op in ("read", "write", "retire"):
            lines.append(f"{n} {op} {rng.choice(keys)}")
        else:
            lines.append(f"{n} {op}")
    for n in names:
        lines.append(f"{n} commit")
    return parse_script("\n".join(lines))
