"""Independent reference computations used by the tests."""

import itertools

import mpmath

from bamboo.locking import EX, SH
from bamboo.planner import Access, KeyExpr, TxnTemplate, plan_retires

# -- retire planner: brute-force may-alias oracle ----------------------------

KEYS = [KeyExpr.const(0), KeyExpr.const(1), KeyExpr.param("p"), KeyExpr.param("q"),
        KeyExpr.derived("h", "p")]
PARAMS = {"p": "key", "q": "key", "g": "bool"}


def _enumerate(n, tables, keys=KEYS):
    shapes = list(itertools.product(keys, (SH, EX), (None, "g"), tables))
    for combo in itertools.product(shapes, repeat=n):
        yield TxnTemplate("t", PARAMS, [Access(tb, k, m, g) for k, m, g, tb in combo])


def _value(k, p, q, h):
    if k.kind == "const":
        return k.value
    if k.kind == "param":
        return p if k.value == "p" else q
    return h  # opaque function of p: any value in the domain


def check_template(tpl, domain=3):
    """Unsound decisions of ``tpl``: retire allowed although a later enabled
    EX access hits the same tuple for some binding."""
    decisions = plan_retires(tpl)
    accs = tpl.accesses
    bad = []
    for i, (a, d) in enumerate(zip(accs, decisions)):
        if a.mode is not EX or d.kind in ("NEVER", "READ"):
            continue
        for p, q, g, h in itertools.product(range(domain), range(domain), (False, True), range(domain)):
            if a.guard and not g:
                continue
            binding = {"p": p, "q": q, "g": g}
            own = _value(a.key, p, q, h)
            if not d.evaluate(own, binding, {"h": lambda _p, h=h: h}):
                continue
            for b in accs[i + 1:]:
                if b.mode is EX and b.table == a.table and (not b.guard or g) \
                        and _value(b.key, p, q, h) == own:
                    bad.append((tpl, i, d, binding, h))
                    break
    return bad


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = []


def planner_soundness(lengths=(2, 3, 4), domain=3):
    """Returns (templates checked, list of unsound cases)."""
    count, bad = 0, []
    for n in lengths:
        tables = ("main", "other") if n < 4 else ("main",)
        for tpl in _enumerate(n, tables):
            count += 1
            bad.extend(check_template(tpl, domain))
    return count, bad


# -- analytical model in high precision --------------------------------------

mpmath.mp.dps = 50


def mp_conflict(N, K, D):
    N, K, D = map(mpmath.mpf, (N, K, D))
    return N * K ** 2 / (2 * D)


def mp_deadlock(N, K, D):
    N, K, D = map(mpmath.mpf, (N, K, D))
    return N * K ** 4 / (4 * D ** 2)


def mp_margin(N, K, D):
    N, K, D = map(mpmath.mpf, (N, K, D))
    return (K - 1) / (K + 1) - N ** 2 * K ** 4 / (2 * D ** 2)


def rel_err(x, ref):
    ref = mpmath.mpf(ref)
    return float(abs(mpmath.mpf(x) - ref) / abs(ref)) if ref != 0 else float(abs(x))
