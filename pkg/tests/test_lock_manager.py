import pathlib
import random
import threading

import pytest

from bamboo.engine import TxnHandle
from bamboo.errors import ProtocolMisuse
from bamboo.locking import (
    EX,
    SH,
    AbortCause,
    LockEntry,
    LockManager,
    Outcome,
    Policy,
    ProtocolPolicy,
    TimestampSource,
    check_entry,
    conflict,
    semaphore_audit,
)
from bamboo.replay import load_script, random_script, replay

SCRIPTS = pathlib.Path(__file__).parent / "scripts"

GOLDEN = sorted(SCRIPTS.glob("*.txt"))


@pytest.mark.parametrize("path", GOLDEN, ids=[p.stem for p in GOLDEN])
def test_golden_script(path):
    res = replay(load_script(path))
    assert res.assertions, "script has no checks"
    assert res.ok, [f"line {a.lineno}: {a.text} ({a.detail})" for a in res.failures()]


def test_conflict_matrix():
    assert not conflict(SH, SH)
    assert conflict(SH, EX) and conflict(EX, SH) and conflict(EX, EX)


def test_non_bamboo_forces_flags_off():
    p = ProtocolPolicy(Policy.WOUND_WAIT, True, True, 0.15, True, True)
    assert not (p.read_autoretire or p.delta_retire or p.no_raw_abort)
    assert p.dynamic_ts
    assert not p.retires


def _lm(kind=Policy.BAMBOO, **kw):
    return LockManager(ProtocolPolicy(kind, **kw), TimestampSource())


def test_retire_twice_is_misuse():
    lm = _lm()
    e = LockEntry(None, "A")
    t1 = TxnHandle(1, 1)
    assert lm.acquire(t1, EX, e)[0] is Outcome.GRANTED
    lm.retire(t1, e, b"x")
    with pytest.raises(ProtocolMisuse):
        lm.retire(t1, e, b"x")


def test_retire_noop_under_wound_wait():
    lm = _lm(Policy.WOUND_WAIT)
    e = LockEntry(None, "A")
    t1 = TxnHandle(1, 1)
    lm.acquire(t1, EX, e)
    lm.retire(t1, e, b"x")
    assert [r.txn for r in e.owners] == [t1] and not e.retired


def test_release_without_lock_is_misuse():
    lm = _lm()
    e = LockEntry(None, "A")
    with pytest.raises(ProtocolMisuse):
        lm.release(TxnHandle(1, 1), e, False)


def test_aborted_requester_gets_abort_self_without_mutation():
    lm = _lm()
    e = LockEntry(None, "A")
    t = TxnHandle(1, 1)
    t.set_abort(AbortCause.WOUND)
    assert lm.acquire(t, SH, e) == (Outcome.ABORT_SELF, None)
    assert e.state() == LockEntry(None, "A").state()


def test_concurrent_ts_assignment_exactly_once():
    src = TimestampSource()
    for _ in range(200):
        t = TxnHandle(1, None)
        seen = []
        barrier = threading.Barrier(4)

        def go():
            barrier.wait()
            t.set_ts_if_unassigned(src)
            seen.append(t.ts)

        ths = [threading.Thread(target=go) for _ in range(4)]
        for th in ths:
            th.start()
        for th in ths:
            th.join()
        assert len(set(seen)) == 1 and seen[0] is not None


def test_random_schedules_keep_entry_invariants():
    """Sortedness, single-list membership, wait priority and semaphore
    accounting hold after every step of random interleavings."""
    rng = random.Random(11)
    flagsets = [(), ("autoretire",), ("no_raw_abort",), ("autoretire", "no_raw_abort")]
    for i in range(150):
        script = random_script(rng, n_txns=4, n_steps=20)
        flags = flagsets[i % len(flagsets)]
        from bamboo.replay import Replayer, make_policy

        rp = Replayer(script, make_policy("bamboo", flags), strict=False)
        problems = []
        orig = rp._apply

        def apply(step, result, orig=orig, rp=rp):
            orig(step, result)
            rp._settle()
            for e in rp.engine.table().lock_entries.values():
                problems.extend(check_entry(e, rp.policy))
            live = [t for t in rp.txns.values() if t.status.name in ("RUNNING", "COMMIT_WAIT")]
            problems.extend(semaphore_audit(rp.engine.table().lock_entries.values(), live))

        rp._apply = apply
        rp.run()
        assert not problems, (flags, problems[:3])


def test_concurrent_stress_audit():
    """Worker threads under BAMBOO with all flags; a sampler checks every
    entry under its latch while the run is live."""
    from bamboo.harness import RunConfig, run_experiment

    rep = run_experiment(RunConfig(policy="bamboo", threads=6, duration_s=1.5, rows=64,
                                   theta=0.9, audit_interval_s=0.01, validate=True))
    assert rep.audit_problems == []
    assert rep.ok
