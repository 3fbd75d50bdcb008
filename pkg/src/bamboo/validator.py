"""Post-run checks over recorded histories.

Version order per tuple comes from the install tags written by committed
transactions (``(writer id, sequence)``).  Reads carry the tag they saw; a
dirty read carries ``(writer id, None)`` and is resolved to the writer's
installed version here.
"""

from __future__ import annotations

import graphlib
import itertools
import random
from collections import defaultdict
from dataclasses import dataclass, field

from .engine import AccessRecord, HistoryRecord, Status
from .locking import EX, SH


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str  # WR | WW | RW
    tuple: tuple


@dataclass
class SerializationGraph:
    nodes: set = field(default_factory=set)
    edges: list = field(default_factory=list)
    integrity: list = field(default_factory=list)

    def succ(self) -> dict:
        out = defaultdict(set)
        for e in self.edges:
            out[e.src].add(e.dst)
        return out

    def edge_set(self) -> set:
        return {(e.src, e.dst, e.kind) for e in self.edges}


@dataclass
class AcyclicResult:
    ok: bool
    cycle: list | None = None

    def __bool__(self):
        return self.ok


class IntegrityError(Exception):
    pass


def _version_orders(committed):
    """tuple -> list of writer ids ordered by install sequence, plus problems."""
    installs = defaultdict(list)
    for rec in committed.values():
        for a in rec.accesses:
            if a.mode is EX and a.written_version is not None:
                installs[(a.table, a.key)].append(a.written_version)
    orders, problems = {}, []
    for tk, tags in installs.items():
        tags.sort(key=lambda t: t[1])
        seqs = [s for _, s in tags]
        base = seqs[0] - 1
        if seqs != list(range(base + 1, base + 1 + len(seqs))):
            problems.append(f"{tk}: install sequence has gaps or repeats {seqs[:10]}")
        writers = [w for w, _ in tags]
        orders[tk] = (writers, base, {w: i for i, w in enumerate(writers)})
    return orders, problems


def _resolve_read(a: AccessRecord, orders, committed, reader):
    """Index into the version list: 0 = before first recorded install."""
    writer, seq = a.read_version
    tk = (a.table, a.key)
    _, base, index = orders.get(tk, ([], 0, {}))
    if writer is None:
        if seq != base:
            return None, f"txn {reader} read {tk} seq {seq} outside recorded installs"
        return 0, None
    if writer not in committed:
        return None, f"txn {reader} read {tk} from uncommitted/aborted txn {writer}"
    idx = index.get(writer)
    if idx is None:
        return None, f"txn {reader} read {tk} from {writer}, which never installed it"
    if seq is not None and seq != base + idx + 1:
        return None, f"txn {reader} read {tk} version seq {seq} mismatch"
    return idx + 1, None


def build_graph(history) -> SerializationGraph:
    committed = {r.txn_id: r for r in history if r.status is Status.COMMITTED}
    for r in history:
        if r.status not in (Status.COMMITTED, Status.ABORTED):
            raise ValueError(f"txn {r.txn_id} still {r.status.name}; history incomplete")
    g = SerializationGraph(nodes=set(committed))
    orders, problems = _version_orders(committed)
    g.integrity.extend(problems)
    seen = set()

    def add(src, dst, kind, tk):
        if src == dst:
            return
        key = (src, dst, kind, tk)
        if key not in seen:
            seen.add(key)
            g.edges.append(Edge(src, dst, kind, tk))

    for tk, (writers, _, _) in orders.items():
        for a, b in zip(writers, writers[1:]):
            add(a, b, "WW", tk)
    for rid, rec in committed.items():
        for a in rec.accesses:
            if a.read_version is None:
                continue
            idx, err = _resolve_read(a, orders, committed, rid)
            if err:
                g.integrity.append(err)
                continue
            tk = (a.table, a.key)
            writers = orders.get(tk, ([], 0, {}))[0]
            if idx > 0:
                add(writers[idx - 1], rid, "WR", tk)
            if idx < len(writers):
                add(rid, writers[idx], "RW", tk)
    return g


def check_acyclic(graph: SerializationGraph) -> AcyclicResult:
    preds = {n: set() for n in graph.nodes}
    for e in graph.edges:
        preds.setdefault(e.dst, set()).add(e.src)
        preds.setdefault(e.src, set())
    try:
        tuple(graphlib.TopologicalSorter(preds).static_order())
    except graphlib.CycleError as exc:
        cyc = list(exc.args[1])
        if len(cyc) > 1 and cyc[0] == cyc[-1]:
            cyc = cyc[:-1]
        # each listed node precedes the next one, i.e. the list follows edges
        return AcyclicResult(False, cyc)
    return AcyclicResult(True)


def oracle_serializable(history, limit: int = 8) -> bool:
    """Brute force: is some order of committed txns consistent with every
    recorded version order and every read?"""
    committed = {r.txn_id: r for r in history if r.status is Status.COMMITTED}
    if len(committed) > limit:
        raise ValueError(f"{len(committed)} committed txns exceeds oracle limit {limit}")
    installs = defaultdict(dict)
    for tid, rec in committed.items():
        for a in rec.accesses:
            if a.mode is EX and a.written_version is not None:
                installs[(a.table, a.key)][a.written_version[1]] = tid
    reads = []
    for tid, rec in committed.items():
        for a in rec.accesses:
            if a.read_version is not None:
                reads.append((tid, (a.table, a.key), a.read_version))
    ids = list(committed)
    for perm in itertools.permutations(ids):
        pos = {t: i for i, t in enumerate(perm)}
        good = True
        for tk, by_seq in installs.items():
            ws = [by_seq[s] for s in sorted(by_seq)]
            if any(pos[a] > pos[b] for a, b in zip(ws, ws[1:])):
                good = False
                break
        if not good:
            continue
        for tid, tk, (writer, seq) in reads:
            by_seq = installs.get(tk, {})
            order = sorted(by_seq)
            ws = [by_seq[s] for s in order]
            if writer is None:
                nxt = ws[0] if ws else None
                if nxt is not None and nxt != tid and pos[tid] > pos[nxt]:
                    good = False
                    break
                continue
            i = ws.index(writer)
            if writer != tid and pos[writer] > pos[tid]:
                good = False
                break
            if i + 1 < len(ws):
                nxt = ws[i + 1]
                if nxt != tid and pos[tid] > pos[nxt]:
                    good = False
                    break
        if good:
            return True
    return not ids


def check_commit_ordering(history, graph: SerializationGraph) -> list:
    seq = {r.txn_id: r.commit_seq for r in history if r.status is Status.COMMITTED}
    return [e for e in graph.edges if not seq[e.src] < seq[e.dst]]


@dataclass
class Verdict:
    committed: int
    edges: int
    acyclic: bool
    cycle: list | None
    integrity: list
    ordering: list

    @property
    def ok(self) -> bool:
        return self.acyclic and not self.integrity and not self.ordering

    def summary(self) -> dict:
        return {
            "ok": self.ok,
            "committed": self.committed,
            "edges": self.edges,
            "acyclic": self.acyclic,
            "cycle": self.cycle,
            "integrity_violations": len(self.integrity),
            "integrity_examples": self.integrity[:5],
            "ordering_violations": len(self.ordering),
        }


def validate(history) -> Verdict:
    g = build_graph(history)
    acyc = check_acyclic(g)
    ordering = check_commit_ordering(history, g)
    return Verdict(len(g.nodes), len(g.edges), acyc.ok, acyc.cycle, g.integrity, ordering)


def random_history(rng: random.Random, n_txns: int = 5, n_keys: int = 3,
                   p_read: float = 0.6, p_write: float = 0.5) -> list:
    """Arbitrary (often non-serializable) committed history for differential tests."""
    ids = list(range(1, n_txns + 1))
    accesses = {t: [] for t in ids}
    for k in range(n_keys):
        writers = [t for t in ids if rng.random() < p_write]
        rng.shuffle(writers)
        tags = [(None, 0)] + [(w, i + 1) for i, w in enumerate(writers)]
        written = {w: (w, i + 1) for i, w in enumerate(writers)}
        for t in ids:
            if t in written:
                rv = rng.choice(tags) if rng.random() < 0.5 else None
                accesses[t].append(AccessRecord("main", k, EX, rv, written[t]))
            elif rng.random() < p_read:
                accesses[t].append(AccessRecord("main", k, SH, rng.choice(tags)))
    seqs = rng.sample(range(1, n_txns + 1), n_txns)
    return [HistoryRecord(t, Status.COMMITTED, s, accesses[t]) for t, s in zip(ids, seqs)]
