"""Per-tuple lock entries and the protocol functions.

A lock entry holds three lists of :class:`Request` objects: ``retired``,
``owners`` and ``waiters``.  Every function here runs entirely under the
entry latch and never takes a second latch.  Aborting another transaction is
a flag write on its handle (``set_abort``), observed later by its worker.

Behaviour worth knowing when reading the code:

* Wounded or cascaded requests are unlinked from the entry immediately.
  Writes are staged locally until commit, so a doomed holder has nothing to
  undo in the entry and the requester can proceed at once.
* A request records whether it added one to its transaction's commit
  semaphore (``blocked``).  After any removal, the leading non-conflicting
  requests of ``retired + owners`` give that unit back.
* A transaction that has claimed its commit point (``committing``) can no
  longer be wounded.  It stays in place as a dependency or a blocker.
"""

from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass, replace
from enum import Enum, IntEnum

from .errors import ProtocolMisuse

INF = float("inf")


class LockMode(IntEnum):
    SH = 0
    EX = 1


SH = LockMode.SH
EX = LockMode.EX


def conflict(a: LockMode, b: LockMode) -> bool:
    return a is EX or b is EX


class Policy(Enum):
    BAMBOO = "bamboo"
    WOUND_WAIT = "wound_wait"
    WAIT_DIE = "wait_die"
    NO_WAIT = "no_wait"


class Outcome(Enum):
    GRANTED = "GRANTED"
    WAITING = "WAITING"
    ABORT_SELF = "ABORT_SELF"


class AbortCause(Enum):
    WOUND = "WOUND"
    CASCADE = "CASCADE"
    USER = "USER"
    # requester self-abort under WAIT_DIE / NO_WAIT, or a failed upgrade
    SELF = "SELF"


@dataclass(frozen=True)
class ProtocolPolicy:
    kind: Policy = Policy.BAMBOO
    read_autoretire: bool = False
    delta_retire: bool = False
    delta: float = 0.15
    no_raw_abort: bool = False
    dynamic_ts: bool = False

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if self.kind is not Policy.BAMBOO:
            for name in ("read_autoretire", "delta_retire", "no_raw_abort"):
                object.__setattr__(self, name, False)

    @property
    def retires(self) -> bool:
        return self.kind is Policy.BAMBOO

    @classmethod
    def bamboo_all(cls, delta=0.15, dynamic_ts=True):
        return cls(Policy.BAMBOO, True, True, delta, True, dynamic_ts)

    def with_kind(self, kind: Policy) -> "ProtocolPolicy":
        return replace(self, kind=kind)


def ts_of(txn) -> float:
    return INF if txn.ts is None else txn.ts


class TimestampSource:
    def __init__(self, start: int = 1):
        self._next = start
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            v = self._next
            self._next += 1
            return v

    def peek(self) -> int:
        return self._next


class Request:
    __slots__ = ("txn", "mode", "data", "blocked", "granted", "value", "version")

    def __init__(self, txn, mode: LockMode):
        self.txn = txn
        self.mode = mode
        # dirty payload exposed by a retired EX request
        self.data: bytes | None = None
        self.blocked = False
        self.granted = False
        # payload and version tag visible at grant time
        self.value: bytes | None = None
        self.version = None

    def __repr__(self):
        return f"{self.txn.name}/{self.mode.name}"


class LockEntry:
    __slots__ = ("table", "key", "retired", "owners", "waiters", "latch")

    def __init__(self, table=None, key=None):
        self.table = table
        self.key = key
        self.retired: list[Request] = []
        self.owners: list[Request] = []
        self.waiters: list[Request] = []
        self.latch = threading.Lock()

    def find(self, txn):
        for name in ("retired", "owners", "waiters"):
            for r in getattr(self, name):
                if r.txn is txn:
                    return name, r
        return None, None

    def holds(self, txn) -> bool:
        where, _ = self.find(txn)
        return where in ("retired", "owners")

    def all_owners(self) -> list[Request]:
        return self.retired + self.owners

    def dirty_chain(self) -> list[bytes]:
        return [r.data for r in self.retired if r.mode is EX]

    def state(self) -> tuple:
        """Hashable snapshot of the three lists (txn name, mode name)."""
        return tuple(
            tuple((r.txn.name, r.mode.name) for r in lst)
            for lst in (self.retired, self.owners, self.waiters)
        )

    def is_empty(self) -> bool:
        return not (self.retired or self.owners or self.waiters)

    def __repr__(self):
        return (
            f"LockEntry(key={self.key}, retired={self.retired}, "
            f"owners={self.owners}, waiters={self.waiters})"
        )


class LockManager:
    """Protocol functions parameterised by a :class:`ProtocolPolicy`."""

    def __init__(self, policy: ProtocolPolicy, ts_source: TimestampSource | None = None,
                 on_victim=None):
        self.policy = policy
        self.ts_source = ts_source or TimestampSource()
        # called as on_victim(txn, cause) after a successful abort marking
        self.on_victim = on_victim

    # -- helpers, latch held -------------------------------------------------

    def _visible(self, entry: LockEntry, upto: int | None = None):
        """Payload and version tag a new reader at ``retired[:upto]`` sees."""
        retired = entry.retired if upto is None else entry.retired[:upto]
        for r in reversed(retired):
            if r.mode is EX:
                return r.data, (r.txn.id, None)
        tup = entry.table.rows[entry.key] if entry.table is not None else None
        if tup is None:
            return None, (None, 0)
        return tup.payload, tup.version

    def _mark(self, txn, cause: AbortCause, root=None) -> bool:
        ok = txn.set_abort(cause, root)
        if ok and self.on_victim is not None:
            self.on_victim(txn, cause)
        return ok

    def _unlink(self, entry: LockEntry, req: Request):
        for lst in (entry.retired, entry.owners, entry.waiters):
            for i, r in enumerate(lst):
                if r is req:
                    del lst[i]
                    return
        raise ProtocolMisuse(f"{req} not linked in entry {entry.key}")

    def _cascade_after(self, entry: LockEntry, req: Request, root) -> list:
        """Abort and unlink every request after ``req`` in retired+owners."""
        all_owners = entry.retired + entry.owners
        idx = next(i for i, r in enumerate(all_owners) if r is req)
        victims = []
        for r in all_owners[idx + 1:]:
            if r.txn.committing:
                raise ProtocolMisuse(
                    f"{r} past its commit point depends on aborting {req}"
                )
            self._mark(r.txn, AbortCause.CASCADE, root)
            self._unlink(entry, r)
            victims.append(r.txn)
        return victims

    def _notify_heads(self, entry: LockEntry):
        first = None
        for r in entry.retired + entry.owners:
            if first is None:
                first = r
            elif first.mode is EX or r.mode is EX:
                break
            if r.blocked:
                r.blocked = False
                r.txn.sem_dec()

    def _add_waiter(self, entry: LockEntry, req: Request):
        keys = [ts_of(w.txn) for w in entry.waiters]
        entry.waiters.insert(bisect.bisect_right(keys, ts_of(req.txn)), req)

    # -- protocol functions --------------------------------------------------

    def assign_ts_on_conflict(self, entry: LockEntry, txn, mode: LockMode):
        everyone = entry.retired + entry.owners + entry.waiters
        if any(r.txn is not txn and conflict(mode, r.mode) for r in everyone):
            for r in everyone:
                r.txn.set_ts_if_unassigned(self.ts_source)
            txn.set_ts_if_unassigned(self.ts_source)

    def acquire(self, txn, mode: LockMode, entry: LockEntry):
        """Returns ``(Outcome, Request | None)``."""
        with entry.latch:
            return self._acquire_locked(txn, mode, entry)

    def _purge_doomed(self, entry: LockEntry) -> bool:
        """Release, on their behalf, holders already marked aborted.

        Equivalent to their own abort release running now; keeps newcomers
        from reading data that is certain to be rolled back."""
        changed = False
        for r in entry.retired + entry.owners:
            if r.txn.aborted and any(x is r for x in entry.retired + entry.owners):
                if r.mode is EX:
                    self._cascade_after(entry, r, r.txn.abort_root)
                self._unlink(entry, r)
                changed = True
        if changed:
            self._notify_heads(entry)
        return changed

    def _acquire_locked(self, txn, mode, entry):
        if txn.aborted:
            return Outcome.ABORT_SELF, None
        pol = self.policy
        self._purge_doomed(entry)
        if pol.dynamic_ts:
            self.assign_ts_on_conflict(entry, txn, mode)
        kind = pol.kind

        if kind is Policy.NO_WAIT or kind is Policy.WAIT_DIE:
            blockers = [o for o in entry.owners if conflict(mode, o.mode)]
            if blockers:
                if kind is Policy.NO_WAIT:
                    return Outcome.ABORT_SELF, None
                my_ts = ts_of(txn)
                if any(my_ts > ts_of(o.txn) for o in blockers):
                    return Outcome.ABORT_SELF, None
            return self._enqueue(entry, Request(txn, mode))

        if kind is Policy.BAMBOO and pol.no_raw_abort and mode is SH:
            req = self._place_reader(entry, txn)
            if req is not None:
                return Outcome.GRANTED, req

        scan = entry.retired + entry.owners if kind is Policy.BAMBOO else list(entry.owners)
        my_ts = ts_of(txn)
        has_conflicts = False
        victims = []
        for r in scan:
            if conflict(mode, r.mode):
                has_conflicts = True
            if has_conflicts and my_ts < ts_of(r.txn):
                victims.append(r)
        changed = False
        for r in victims:
            if r.txn.committing:
                continue
            self._mark(r.txn, AbortCause.WOUND)
            if not r.txn.aborted:
                continue
            if any(x is r for x in entry.retired) or any(x is r for x in entry.owners):
                if r.mode is EX:
                    self._cascade_after(entry, r, r.txn.abort_root)
                self._unlink(entry, r)
                changed = True
        if changed:
            self._notify_heads(entry)
        return self._enqueue(entry, Request(txn, mode))

    def _enqueue(self, entry, req):
        self._add_waiter(entry, req)
        self._promote_locked(entry)
        if self.policy.kind is Policy.WAIT_DIE and not req.granted:
            self._die_behind_older(entry)
            if not any(w is req for w in entry.waiters):
                return Outcome.ABORT_SELF, None
        return (Outcome.GRANTED if req.granted else Outcome.WAITING), req

    def _place_reader(self, entry: LockEntry, txn):
        """Timestamp-ordered reader placement that never wounds writers.

        Returns None when the ordinary path must handle the request.
        """
        my_ts = ts_of(txn)
        retired = entry.retired
        later_writer = any(
            r.mode is EX and ts_of(r.txn) > my_ts for r in retired + entry.owners
        )
        if not later_writer:
            return None
        for o in entry.owners:
            if o.mode is EX and (ts_of(o.txn) <= my_ts or o.txn.committing):
                return None
        p = next(
            (i for i, r in enumerate(retired) if r.mode is EX and ts_of(r.txn) > my_ts),
            len(retired),
        )
        after = [r for r in retired[p:] + entry.owners if r.mode is EX]
        if any(ts_of(r.txn) <= my_ts or r.txn.committing for r in after):
            return None
        newly = []
        for r in after:
            if r.blocked:
                continue
            if not r.txn.try_block():
                for b in newly:
                    b.blocked = False
                    b.txn.sem_dec()
                return None
            r.blocked = True
            newly.append(r)
        req = Request(txn, SH)
        req.granted = True
        req.value, req.version = self._visible(entry, p)
        if any(r.mode is EX for r in retired[:p]):
            req.blocked = True
            txn.sem_inc()
        retired.insert(p, req)
        return req

    def promote_waiters(self, entry: LockEntry):
        with entry.latch:
            self._promote_locked(entry)

    def _promote_locked(self, entry: LockEntry):
        auto = self.policy.read_autoretire
        waiters = entry.waiters
        while waiters:
            w = waiters[0]
            if w.txn.aborted:
                del waiters[0]
                continue
            if any(conflict(w.mode, o.mode) for o in entry.owners):
                break
            del waiters[0]
            w.granted = True
            w.value, w.version = self._visible(entry)
            if any(conflict(r.mode, w.mode) for r in entry.retired):
                w.blocked = True
                w.txn.sem_inc()
            if auto and w.mode is SH:
                entry.retired.append(w)
            else:
                entry.owners.append(w)
            w.txn.wake()
        if self.policy.kind is Policy.WAIT_DIE and waiters:
            self._die_behind_older(entry)

    def _die_behind_older(self, entry: LockEntry):
        # a queued request waits on conflicting owners and on conflicting
        # requests queued ahead of it; a younger transaction never waits for
        # an older one, so such waiters die
        keep = []
        for w in entry.waiters:
            my_ts = ts_of(w.txn)
            if any(conflict(w.mode, o.mode) and ts_of(o.txn) < my_ts
                   for o in entry.owners + keep):
                self._mark(w.txn, AbortCause.SELF)
                continue
            keep.append(w)
        entry.waiters[:] = keep

    def retire(self, txn, entry: LockEntry, data: bytes | None = None):
        with entry.latch:
            self._retire_locked(txn, entry, data)

    def _retire_locked(self, txn, entry, data):
        req = next((r for r in entry.owners if r.txn is txn), None)
        if req is None:
            done = next((r for r in entry.retired if r.txn is txn), None)
            if done is not None and done.mode is SH and self.policy.read_autoretire:
                return  # already auto-retired by the read
            if txn.aborted and done is None:
                return  # unlinked as a victim; the owner notices the flag next
            raise ProtocolMisuse(f"{txn.name} does not own key {entry.key}")
        if not self.policy.retires:
            return
        entry.owners.remove(req)
        if req.mode is EX:
            req.data = data
        entry.retired.append(req)
        self._promote_locked(entry)

    def release(self, txn, entry: LockEntry, is_abort: bool, install=None) -> set:
        """Release ``txn``'s lock; returns the cascade-aborted transactions.

        ``install`` runs under the latch before removal (commit path).
        """
        with entry.latch:
            req = next((r for r in entry.retired if r.txn is txn), None) or next(
                (r for r in entry.owners if r.txn is txn), None
            )
            if req is None:
                if is_abort and txn.aborted:
                    return set()  # already purged on its behalf
                raise ProtocolMisuse(f"{txn.name} holds no lock on key {entry.key}")
            cascade = set()
            if is_abort and req.mode is EX:
                cascade.update(self._cascade_after(entry, req, txn.abort_root or txn.id))
            elif install is not None:
                install()
            self._unlink(entry, req)
            self._notify_heads(entry)
            self._promote_locked(entry)
            return cascade

    def cancel_wait(self, txn, entry: LockEntry) -> bool:
        with entry.latch:
            req = next((r for r in entry.waiters if r.txn is txn), None)
            if req is None:
                return False
            entry.waiters.remove(req)
            self._promote_locked(entry)
            return True

    def drop_shared(self, txn, entry: LockEntry):
        """First half of an SH->EX upgrade: forget the shared request."""
        with entry.latch:
            where, req = entry.find(txn)
            if req is None and txn.aborted:
                return
            if req is None or req.mode is not SH or where == "waiters":
                raise ProtocolMisuse(f"{txn.name} holds no SH lock on key {entry.key}")
            if req.blocked:
                req.blocked = False
                txn.sem_dec()
            self._unlink(entry, req)
            self._notify_heads(entry)
            self._promote_locked(entry)

    def reacquire_retired(self, txn, entry: LockEntry) -> set:
        """Second write after retiring: abort everyone who saw the first one.

        The transaction moves back to ``owners`` in EX mode.
        """
        with entry.latch:
            req = next((r for r in entry.retired if r.txn is txn), None)
            if req is None and txn.aborted:
                return set()
            if req is None or req.mode is not EX:
                raise ProtocolMisuse(f"{txn.name} has no retired EX on key {entry.key}")
            all_owners = entry.retired + entry.owners
            idx = all_owners.index(req)
            victims = set()
            for r in all_owners[idx + 1:]:
                self._mark(r.txn, AbortCause.WOUND)
                self._unlink(entry, r)
                victims.add(r.txn)
            entry.retired.remove(req)
            req.data = None
            entry.owners.append(req)
            self._notify_heads(entry)
            return victims


# -- audits ------------------------------------------------------------------


def check_entry(entry: LockEntry, policy: ProtocolPolicy) -> list[str]:
    """Structural invariants of one entry; returns human-readable problems."""
    problems = []
    ws = [ts_of(w.txn) for w in entry.waiters]
    if ws != sorted(ws):
        problems.append(f"key {entry.key}: waiters not sorted {entry.waiters}")
    ret = entry.retired
    for i, a in enumerate(ret):
        for b in ret[i + 1:]:
            if conflict(a.mode, b.mode) and ts_of(a.txn) > ts_of(b.txn) and not a.txn.committing:
                problems.append(f"key {entry.key}: retired out of order {a} before {b}")
    seen = set()
    for r in ret + entry.owners + entry.waiters:
        if id(r.txn) in seen:
            problems.append(f"key {entry.key}: {r.txn.name} listed twice")
        seen.add(id(r.txn))
    ex = [o for o in entry.owners if o.mode is EX]
    if ex and len(entry.owners) > 1:
        problems.append(f"key {entry.key}: EX owner shares owners {entry.owners}")
    if policy.kind in (Policy.BAMBOO, Policy.WOUND_WAIT):
        for w in entry.waiters:
            for o in entry.owners:
                if (conflict(w.mode, o.mode) and ts_of(o.txn) >= ts_of(w.txn)
                        and not (o.txn.committing or o.txn.aborted)):
                    problems.append(
                        f"key {entry.key}: {w} waits on younger {o}"
                    )
    if policy.kind is Policy.WAIT_DIE:
        for i, w in enumerate(entry.waiters):
            for o in entry.owners + entry.waiters[:i]:
                if conflict(w.mode, o.mode) and ts_of(o.txn) < ts_of(w.txn) and not w.txn.aborted:
                    problems.append(f"key {entry.key}: {w} waits on older {o}")
    # semaphore contribution implied by list position
    prefix = []
    for r in ret + entry.owners:
        should = any(conflict(p.mode, r.mode) for p in prefix)
        if should != r.blocked and not r.txn.aborted:
            problems.append(f"key {entry.key}: {r} blocked={r.blocked}, expected {should}")
        prefix.append(r)
    return problems


def semaphore_audit(entries, txns) -> list[str]:
    """Quiesced check: semaphore == number of blocked requests per live txn."""
    counts = {}
    for e in entries:
        for r in e.retired + e.owners:
            if r.blocked:
                counts[id(r.txn)] = counts.get(id(r.txn), 0) + 1
    out = []
    for t in txns:
        if t.aborted:
            continue
        if t.semaphore != counts.get(id(t), 0):
            out.append(f"{t.name}: semaphore {t.semaphore} != {counts.get(id(t), 0)}")
    return out
