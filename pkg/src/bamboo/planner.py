"""Retire points for declarative transaction templates.

A template is an ordered list of accesses.  Each access has a table, a key
expression, a mode and an optional boolean guard parameter.  Key expressions:

* ``const``: a literal key;
* ``param``: the value bound to a named parameter;
* ``derived``: computed from parameters by an opaque function, so it may
  alias anything in its table.

Only later EX accesses can stop an EX lock from retiring.  A later read of a
tuple the transaction wrote is served from its own write set.

Template file (JSON)::

    {"name": "t", "params": [{"name": "k1", "type": "key"}, {"name": "c", "type": "bool"}],
     "user_abort": 0.01,
     "accesses": [
        {"table": "main", "key": {"param": "k1"}, "mode": "EX"},
        {"repeat": 3, "body": [{"table": "main", "key": {"param": "ks[i]"}, "mode": "EX"}]},
        {"table": "main", "key": {"const": 7}, "mode": "SH", "guard": "c"}
     ]}

Inside a ``repeat`` body, ``[i]`` in parameter names becomes the iteration
index, so unrolling gives each iteration its own key slot.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import TemplateError
from .locking import EX, SH, LockMode


@dataclass(frozen=True)
class KeyExpr:
    kind: str  # const | param | derived
    value: object  # int for const, param name, or (tag, params) for derived

    @classmethod
    def const(cls, v: int):
        return cls("const", int(v))

    @classmethod
    def param(cls, name: str):
        return cls("param", name)

    @classmethod
    def derived(cls, tag: str, *params: str):
        return cls("derived", (tag, tuple(params)))

    def evaluate(self, binding: dict, fns: dict | None = None):
        if self.kind == "const":
            return self.value
        if self.kind == "param":
            return binding[self.value]
        tag, params = self.value
        fn = (fns or {}).get(tag)
        if fn is None:
            raise TemplateError(f"no function bound for derived key {tag!r}")
        return fn(*(binding[p] for p in params))

    def params(self) -> tuple:
        if self.kind == "param":
            return (self.value,)
        if self.kind == "derived":
            return self.value[1]
        return ()

    def __str__(self):
        if self.kind == "const":
            return str(self.value)
        if self.kind == "param":
            return self.value
        return f"{self.value[0]}({', '.join(self.value[1])})"


@dataclass(frozen=True)
class Access:
    table: str
    key: KeyExpr
    mode: LockMode
    guard: str | None = None


@dataclass
class TxnTemplate:
    name: str
    params: dict  # name -> "key" | "bool"
    accesses: list
    user_abort: float = 0.0

    def __post_init__(self):
        problems = []
        for i, a in enumerate(self.accesses):
            for p in a.key.params():
                if p not in self.params:
                    problems.append(f"access {i}: key references undeclared param {p!r}")
            if a.guard is not None and self.params.get(a.guard) != "bool":
                problems.append(f"access {i}: guard {a.guard!r} is not a declared bool param")
            if a.mode not in (SH, EX):
                problems.append(f"access {i}: bad mode {a.mode!r}")
        if not 0.0 <= self.user_abort <= 1.0:
            problems.append(f"user_abort {self.user_abort} outside [0, 1]")
        if problems:
            raise TemplateError("; ".join(problems))


@dataclass(frozen=True)
class Clause:
    """Retire is safe for this later access iff guard is false or keys differ."""
    guard: str | None
    other: KeyExpr  # key of the later access; None key_diff means same slot


@dataclass(frozen=True)
class RetireDecision:
    kind: str  # ALWAYS | NEVER | CONDITIONAL | READ
    clauses: tuple = ()

    def evaluate(self, own_key, binding: dict, fns=None) -> bool:
        if self.kind == "ALWAYS":
            return True
        if self.kind in ("NEVER", "READ"):
            return False
        for c in self.clauses:
            guard_on = True if c.guard is None else bool(binding[c.guard])
            if guard_on and c.other.evaluate(binding, fns) == own_key:
                return False
        return True

    def __str__(self):
        if self.kind != "CONDITIONAL":
            return self.kind
        parts = []
        for c in self.clauses:
            ne = f"key!={c.other}"
            parts.append(f"(!{c.guard} || {ne})" if c.guard else ne)
        return "CONDITIONAL(" + " && ".join(parts) + ")"


ALWAYS = RetireDecision("ALWAYS")
NEVER = RetireDecision("NEVER")
READ = RetireDecision("READ")


def comparable(a: KeyExpr, b: KeyExpr) -> bool:
    return a.kind in ("const", "param") and b.kind in ("const", "param")


def plan_retires(template: TxnTemplate) -> list:
    """One decision per access (``READ`` for SH accesses)."""
    out = []
    accs = template.accesses
    for i, a in enumerate(accs):
        if a.mode is SH:
            out.append(READ)
            continue
        clauses = []
        decision = None
        for b in accs[i + 1:]:
            if b.table != a.table or b.mode is not EX:
                continue
            if not comparable(a.key, b.key):
                decision = NEVER
                break
            same = a.key == b.key
            if same and b.guard is None:
                decision = NEVER
                break
            if a.key.kind == "const" and b.key.kind == "const" and not same:
                continue
            clauses.append(Clause(b.guard, b.key))
        if decision is None:
            decision = RetireDecision("CONDITIONAL", tuple(clauses)) if clauses else ALWAYS
        out.append(decision)
    return out


def delta_cutoff(n: int, delta: float) -> int:
    """First 0-based ordinal whose write is not retired: ceil((1 - delta) * n)."""
    return math.ceil(round((1.0 - delta) * n, 9))


def apply_delta(decisions: list, template_or_len, delta: float) -> list:
    if not 0.0 <= delta <= 1.0:
        raise TemplateError(f"delta {delta} outside [0, 1]")
    n = template_or_len if isinstance(template_or_len, int) else len(template_or_len.accesses)
    cut = delta_cutoff(n, delta)
    return [NEVER if (i >= cut and d is not READ) else d for i, d in enumerate(decisions)]


@dataclass
class Instance:
    """A bound template ready to execute."""
    accesses: list  # (table, key, mode)
    retire: list  # bool per access
    user_abort: bool = False
    template: str = ""


@dataclass
class CompiledTemplate:
    template: TxnTemplate
    decisions: list
    fns: dict = field(default_factory=dict)

    def instantiate(self, binding: dict, user_abort: bool = False) -> Instance:
        accs, retire = [], []
        for a, d in zip(self.template.accesses, self.decisions):
            if a.guard is not None and not binding[a.guard]:
                continue
            key = a.key.evaluate(binding, self.fns)
            accs.append((a.table, key, a.mode))
            retire.append(d.evaluate(key, binding, self.fns))
        return Instance(accs, retire, user_abort, self.template.name)


def compile_template(template: TxnTemplate, delta: float | None = None, fns=None) -> CompiledTemplate:
    d = plan_retires(template)
    if delta is not None:
        d = apply_delta(d, template, delta)
    return CompiledTemplate(template, d, dict(fns or {}))


# -- template files ----------------------------------------------------------


def _key_from_json(obj, i=None) -> KeyExpr:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise TemplateError(f"bad key expression {obj!r}")
    (kind, v), = obj.items()

    def sub(name):
        return name.replace("[i]", f"[{i}]") if i is not None else name

    if kind == "const":
        return KeyExpr.const(v)
    if kind == "param":
        return KeyExpr.param(sub(v))
    if kind == "derived":
        return KeyExpr.derived(v["tag"], *(sub(p) for p in v.get("params", [])))
    raise TemplateError(f"unknown key kind {kind!r}")


def _accesses_from_json(items, i=None) -> list:
    out = []
    for item in items:
        if "repeat" in item:
            n = item["repeat"]
            if not isinstance(n, int) or n < 0:
                raise TemplateError(f"repeat count must be a fixed non-negative int, got {n!r}")
            for j in range(n):
                out.extend(_accesses_from_json(item["body"], j))
            continue
        try:
            mode = LockMode[item["mode"].upper()]
        except KeyError:
            raise TemplateError(f"bad mode in {item!r}") from None
        guard = item.get("guard")
        if guard is not None and i is not None:
            guard = guard.replace("[i]", f"[{i}]")
        out.append(Access(item.get("table", "main"), _key_from_json(item["key"], i), mode, guard))
    return out


def _params_from_json(items) -> dict:
    params = {}
    for p in items:
        name, typ = p["name"], p.get("type", "key")
        if typ not in ("key", "bool"):
            raise TemplateError(f"param {name!r}: unknown type {typ!r}")
        count = p.get("count")
        if count is None:
            params[name] = typ
        else:
            for j in range(count):
                params[f"{name}[{j}]"] = typ
    return params


def template_from_dict(obj: dict) -> TxnTemplate:
    try:
        return TxnTemplate(
            name=obj.get("name", "template"),
            params=_params_from_json(obj.get("params", [])),
            accesses=_accesses_from_json(obj["accesses"]),
            user_abort=float(obj.get("user_abort", 0.0)),
        )
    except KeyError as e:
        raise TemplateError(f"missing field {e}") from None


def load_template(path) -> TxnTemplate:
    with open(path) as f:
        return template_from_dict(json.load(f))
