"""Transaction lifecycle: execute with local copies, retire, wait, log, release.

Two drivers share the same steps.  Worker threads use the blocking calls
(:meth:`Engine.read`, :meth:`Engine.update`, :meth:`Engine.commit`).  The
single-threaded replayer uses the step calls (:meth:`Engine.start_access`,
:meth:`Engine.finish_access`, :meth:`Engine.try_commit`), which report
``WAITING`` instead of blocking.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

from .errors import AbortTxn, ProtocolMisuse
from .locking import (
    EX,
    SH,
    AbortCause,
    LockManager,
    LockMode,
    Outcome,
    Policy,
    ProtocolPolicy,
    TimestampSource,
)
from .storage import LogSink, Table

_now = time.perf_counter


class Status(Enum):
    RUNNING = "RUNNING"
    COMMIT_WAIT = "COMMIT_WAIT"
    COMMITTED = "COMMITTED"
    ABORTED = "ABORTED"


class TxnHandle:
    """Per-attempt transaction state.

    ``aborted`` and ``semaphore`` are written by other workers; every such
    write goes through ``cv``.  ``committing`` is the claimed commit point:
    once set, ``set_abort`` fails.
    """

    __slots__ = (
        "id", "name", "ts", "status", "semaphore", "aborted", "abort_cause",
        "abort_root", "committing", "cv", "locks", "write_set", "read_set",
        "accesses", "retired_keys", "start", "lock_wait", "sem_wait",
        "commit_seq", "cascaded", "attempt",
    )

    def __init__(self, txn_id: int, ts=None, name=None, attempt=0):
        self.id = txn_id
        self.name = name or f"T{txn_id}"
        self.ts = ts
        self.status = Status.RUNNING
        self.semaphore = 0
        self.aborted = False
        self.abort_cause: AbortCause | None = None
        self.abort_root = None
        self.committing = False
        self.cv = threading.Condition(threading.Lock())
        # (table name, key) -> (table, entry), in acquisition order
        self.locks: dict = {}
        # (table name, key) -> staged payload
        self.write_set: dict = {}
        # (table name, key) -> (version tag, local copy)
        self.read_set: dict = {}
        self.accesses: list = []
        self.retired_keys: set = set()
        self.start = _now()
        self.lock_wait = 0.0
        self.sem_wait = 0.0
        self.commit_seq = None
        self.cascaded: set = set()
        self.attempt = attempt

    def __repr__(self):
        return f"<{self.name} ts={self.ts} {self.status.name}{' aborted' if self.aborted else ''}>"

    def set_abort(self, cause: AbortCause, root=None) -> bool:
        with self.cv:
            if self.aborted or self.committing or self.status is Status.COMMITTED:
                return False
            self.aborted = True
            self.abort_cause = cause
            self.abort_root = root if cause is AbortCause.CASCADE and root is not None else self.id
            self.cv.notify_all()
            return True

    def set_ts_if_unassigned(self, source: TimestampSource):
        with self.cv:
            if self.ts is None:
                self.ts = source.next()

    def sem_inc(self):
        with self.cv:
            self.semaphore += 1

    def sem_dec(self):
        with self.cv:
            if self.semaphore <= 0:
                raise ProtocolMisuse(f"{self.name}: semaphore underflow")
            self.semaphore -= 1
            if self.semaphore == 0:
                self.cv.notify_all()

    def try_block(self) -> bool:
        """Add a dependency unless the commit point was already claimed."""
        with self.cv:
            if self.committing:
                return False
            self.semaphore += 1
            return True

    def try_claim_commit(self) -> bool:
        with self.cv:
            if self.aborted or self.semaphore:
                return False
            self.committing = True
            return True

    def wake(self):
        with self.cv:
            self.cv.notify_all()


@dataclass
class AccessRecord:
    table: str
    key: int
    mode: LockMode
    read_version: tuple | None
    written_version: tuple | None = None


@dataclass
class HistoryRecord:
    txn_id: int
    status: Status
    commit_seq: int | None
    accesses: list = field(default_factory=list)
    ts: int | None = None


class Engine:
    """Executes transactions against in-memory tables under one policy.

    retire_writes: 'plan' retires EX locks when the caller asks for it,
    'always' retires every write (interactive emulation), 'never' disables
    retiring entirely.
    """

    def __init__(self, tables, policy: ProtocolPolicy, *, log: LogSink | None = None,
                 ts_source: TimestampSource | None = None, retire_writes="plan",
                 inject_delay_us: float = 0.0, history: list | None = None,
                 starvation_audit: bool = False):
        if isinstance(tables, Table):
            tables = {tables.name: tables}
        self.tables: dict[str, Table] = tables
        self.policy = policy
        self.ts_source = ts_source or TimestampSource()
        self.lm = LockManager(policy, self.ts_source, on_victim=self._on_victim)
        self.log = log if log is not None else LogSink()
        self.retire_writes = retire_writes
        self.delay = inject_delay_us / 1e6
        self.history = history
        self._ids = itertools.count(1)
        self.starvation_audit = starvation_audit
        self._live: dict[int, int] = {}
        self._live_lock = threading.Lock()
        self.starvation_violations: list = []
        self.semaphore_violations = 0

    # -- bookkeeping ---------------------------------------------------------

    def table(self, name=None) -> Table:
        if name is None:
            if len(self.tables) != 1:
                raise ValueError("table name required")
            return next(iter(self.tables.values()))
        return self.tables[name]

    def begin(self, ts="auto", name=None, attempt=0) -> TxnHandle:
        """Start an attempt.  ``ts='auto'`` draws a timestamp unless dynamic
        assignment is on, in which case the timestamp stays unassigned."""
        tid = next(self._ids)
        txn = TxnHandle(tid, None, name=name, attempt=attempt)
        with self._live_lock:
            if ts == "auto":
                if not self.policy.dynamic_ts:
                    txn.ts = self.ts_source.next()
            else:
                txn.ts = ts
            if self.starvation_audit:
                self._live[tid] = txn.ts
        return txn

    def _finish(self, txn):
        if self.starvation_audit:
            with self._live_lock:
                self._live.pop(txn.id, None)

    def _on_victim(self, txn, cause):
        if not self.starvation_audit or cause not in (AbortCause.WOUND, AbortCause.CASCADE):
            return
        with self._live_lock:
            known = [t for t in self._live.values() if t is not None]
            if txn.ts is not None and known and txn.ts <= min(known):
                self.starvation_violations.append((txn.id, txn.ts, cause))

    def _check(self, txn):
        if txn.aborted:
            raise AbortTxn(txn.abort_cause)

    # -- step API (non-blocking) ---------------------------------------------

    def start_access(self, txn, table_name, key, mode: LockMode):
        """Issue one access.  Returns ``(status, req)`` with status one of
        'local' (served from own copies, req is the value), 'granted',
        'waiting'.  Raises AbortTxn."""
        self._check(txn)
        if txn.status is not Status.RUNNING:
            raise ProtocolMisuse(f"{txn.name} is {txn.status.name}")
        table = self.table(table_name)
        tk = (table.name, key)
        entry = table.entry(key)
        if tk in txn.write_set:
            if mode is SH:
                return "local", txn.write_set[tk]
            if tk in txn.retired_keys:
                victims = self.lm.reacquire_retired(txn, entry)
                txn.cascaded |= victims
                txn.retired_keys.discard(tk)
            return "local", txn.write_set[tk]
        if tk in txn.read_set:
            if mode is SH:
                return "local", txn.read_set[tk][1]
            # SH -> EX upgrade: forget the shared lock, request EX afresh
            self.lm.drop_shared(txn, entry)
            txn.retired_keys.discard(tk)
        txn.locks[tk] = (table, entry)
        outcome, req = self.lm.acquire(txn, mode, entry)
        if outcome is Outcome.ABORT_SELF:
            if txn.aborted:
                raise AbortTxn(txn.abort_cause)
            txn.set_abort(AbortCause.SELF)
            raise AbortTxn(AbortCause.SELF)
        return ("granted" if outcome is Outcome.GRANTED else "waiting"), req

    def finish_access(self, txn, table_name, key, req, update=None, retire=False):
        """Complete a granted access; returns the value seen (reads) or staged."""
        self._check(txn)
        table = self.table(table_name)
        tk = (table.name, key)
        prev = txn.read_set.get(tk)
        if prev is not None and req.mode is EX and prev[0] != req.version:
            # upgrade saw a different version than the earlier read
            txn.set_abort(AbortCause.SELF)
            raise AbortTxn(AbortCause.SELF)
        if req.mode is SH:
            txn.read_set[tk] = (req.version, req.value)
            txn.accesses.append(AccessRecord(table.name, key, SH, req.version))
            if self.policy.read_autoretire:
                txn.retired_keys.add(tk)
            return req.value
        new = update(req.value) if callable(update) else update
        if new is None:
            new = req.value
        txn.write_set[tk] = new
        if prev is None:
            txn.accesses.append(AccessRecord(table.name, key, EX, req.version))
        else:
            for a in txn.accesses:
                if (a.table, a.key) == tk:
                    a.mode = EX
        if self._should_retire(retire):
            self.lm.retire(txn, table.entry(key), new)
            txn.retired_keys.add(tk)
        return new

    def _should_retire(self, retire) -> bool:
        if not self.policy.retires:
            return False
        if self.retire_writes == "always":
            return True
        if self.retire_writes == "never":
            return False
        return bool(retire)

    def retire(self, txn, table_name, key):
        """Explicit retire of a held lock (replay and tests)."""
        self._check(txn)
        table = self.table(table_name)
        tk = (table.name, key)
        self.lm.retire(txn, table.entry(key), txn.write_set.get(tk))
        if self.policy.retires:
            txn.retired_keys.add(tk)

    def retire_pending_writes(self, txn):
        for tk, (table, entry) in list(txn.locks.items()):
            if tk in txn.write_set and tk not in txn.retired_keys:
                with entry.latch:
                    owner = any(r.txn is txn for r in entry.owners)
                if owner:
                    self.lm.retire(txn, entry, txn.write_set[tk])
                    txn.retired_keys.add(tk)

    def try_commit(self, txn) -> bool:
        """Commit if the semaphore is clear.  False means keep waiting."""
        self._check(txn)
        txn.status = Status.COMMIT_WAIT
        if not txn.try_claim_commit():
            self._check(txn)
            return False
        self._do_commit(txn)
        return True

    def _do_commit(self, txn):
        if txn.semaphore != 0:
            self.semaphore_violations += 1
        seq = self.log.append(txn.id, len(txn.write_set))
        txn.commit_seq = seq
        written = {}
        for tk, (table, entry) in txn.locks.items():
            if tk in txn.write_set:
                payload = txn.write_set[tk]

                def install(table=table, key=tk[1], payload=payload, tk=tk):
                    written[tk] = table.install_write(key, payload, txn.id)

                self.lm.release(txn, entry, False, install=install)
            elif entry.holds(txn):
                self.lm.release(txn, entry, False)
        txn.status = Status.COMMITTED
        if self.history is not None:
            for a in txn.accesses:
                if a.mode is EX:
                    a.written_version = written.get((a.table, a.key))
            self.history.append(
                HistoryRecord(txn.id, Status.COMMITTED, seq, txn.accesses, txn.ts)
            )
        self._finish(txn)

    def abort(self, txn, cause: AbortCause | None = None) -> set:
        """Release everything with is_abort; returns the cascade set."""
        if txn.status is Status.COMMITTED:
            raise ProtocolMisuse(f"{txn.name} already committed")
        if txn.status is Status.ABORTED:
            return set()
        if not txn.aborted:
            txn.set_abort(cause or AbortCause.USER)
        cascade = set()
        for tk, (table, entry) in txn.locks.items():
            with entry.latch:
                where, _ = entry.find(txn)
            if where == "waiters":
                self.lm.cancel_wait(txn, entry)
            elif where is not None:
                cascade |= self.lm.release(txn, entry, True)
        txn.cascaded |= cascade
        txn.write_set.clear()
        txn.read_set.clear()
        txn.status = Status.ABORTED
        if self.history is not None:
            self.history.append(HistoryRecord(txn.id, Status.ABORTED, None, [], txn.ts))
        self._finish(txn)
        return cascade

    # -- blocking API (worker threads) ----------------------------------------

    def _pause(self):
        if self.delay:
            time.sleep(self.delay)

    def _wait_grant(self, txn, req):
        t0 = _now()
        with txn.cv:
            while not req.granted and not txn.aborted:
                txn.cv.wait()
        txn.lock_wait += _now() - t0
        self._check(txn)

    def read(self, txn, table_name, key):
        self._pause()
        st, req = self.start_access(txn, table_name, key, SH)
        if st == "local":
            return req
        if st == "waiting":
            self._wait_grant(txn, req)
        return self.finish_access(txn, table_name, key, req)

    def update(self, txn, table_name, key, update=None, retire=False):
        """Read-modify-write under EX; ``update`` maps old payload -> new."""
        self._pause()
        tk = (self.table(table_name).name, key)
        st, req = self.start_access(txn, table_name, key, EX)
        if st == "local":
            new = update(req) if callable(update) else update
            if new is not None:
                txn.write_set[tk] = new
            if self._should_retire(retire):
                self.retire(txn, table_name, key)
            return txn.write_set[tk]
        if st == "waiting":
            self._wait_grant(txn, req)
        return self.finish_access(txn, table_name, key, req, update, retire)

    write = update

    def commit(self, txn):
        """Wait on the commit semaphore, then log, install and release."""
        self._pause()
        self._check(txn)
        txn.status = Status.COMMIT_WAIT
        t0 = _now()
        fallback_at = None
        if (self.policy.delta_retire and self.retire_writes == "plan"
                and any(tk not in txn.retired_keys for tk in txn.write_set)):
            fallback_at = t0 + self.policy.delta * (t0 - txn.start)
        try:
            while True:
                with txn.cv:
                    while txn.semaphore and not txn.aborted:
                        if fallback_at is None:
                            txn.cv.wait()
                            continue
                        left = fallback_at - _now()
                        if left <= 0:
                            break
                        txn.cv.wait(left)
                if fallback_at is not None and txn.semaphore and not txn.aborted:
                    fallback_at = None
                    self.retire_pending_writes(txn)
                    continue
                self._check(txn)
                if txn.try_claim_commit():
                    break
        finally:
            txn.sem_wait += _now() - t0
        self._do_commit(txn)
        return txn.commit_seq
