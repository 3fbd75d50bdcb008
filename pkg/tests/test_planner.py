import json

import pytest

import oracles
from bamboo.errors import TemplateError
from bamboo.locking import EX, SH
from bamboo.planner import (
    ALWAYS,
    NEVER,
    Access,
    KeyExpr,
    TxnTemplate,
    apply_delta,
    compile_template,
    delta_cutoff,
    load_template,
    plan_retires,
    template_from_dict,
)

P = KeyExpr.param
C = KeyExpr.const


def test_single_ex_always():
    t = TxnTemplate("t", {"k": "key"}, [Access("main", P("k"), EX)])
    assert plan_retires(t) == [ALWAYS]


def test_guarded_second_access_conditional():
    t = TxnTemplate("t", {"k1": "key", "k2": "key", "cond": "bool"},
                    [Access("t1", P("k1"), EX), Access("t1", P("k2"), EX, guard="cond")])
    d = plan_retires(t)
    assert d[0].kind == "CONDITIONAL"
    assert str(d[0]) == "CONDITIONAL((!cond || key!=k2))"
    c = compile_template(t)
    assert c.instantiate({"k1": 1, "k2": 1, "cond": False}).retire[0] is True
    assert c.instantiate({"k1": 1, "k2": 2, "cond": True}).retire[0] is True
    assert c.instantiate({"k1": 1, "k2": 1, "cond": True}).retire[0] is False


def test_derived_keys_never():
    t = TxnTemplate("t", {"a": "key", "b": "key"},
                    [Access("main", KeyExpr.derived("f", "a"), EX),
                     Access("main", KeyExpr.derived("g", "b"), EX)])
    assert plan_retires(t)[0] == NEVER


def test_same_slot_unguarded_never_and_other_table_ignored():
    t = TxnTemplate("t", {"k": "key"},
                    [Access("main", P("k"), EX), Access("other", P("k"), EX), Access("main", P("k"), EX)])
    d = plan_retires(t)
    assert d[0] == NEVER and d[1] == ALWAYS and d[2] == ALWAYS


def test_distinct_constants_and_later_reads_do_not_block():
    t = TxnTemplate("t", {"k": "key"},
                    [Access("main", C(1), EX), Access("main", C(2), EX), Access("main", C(1), SH)])
    assert plan_retires(t)[:2] == [ALWAYS, ALWAYS]


def test_undeclared_param_lists_access():
    with pytest.raises(TemplateError, match="access 1"):
        TxnTemplate("t", {"k": "key"}, [Access("main", P("k"), EX), Access("main", P("zz"), EX)])


def test_delta_boundary():
    ds = [ALWAYS] * 16
    assert apply_delta(ds, 16, 0.0) == ds
    out = apply_delta(ds, 16, 0.15)
    assert [i + 1 for i, d in enumerate(out) if d == NEVER] == [15, 16]
    assert all(d == NEVER for d in apply_delta(ds, 16, 1.0))
    assert delta_cutoff(16, 0.15) == 14
    with pytest.raises(TemplateError):
        apply_delta(ds, 16, 1.5)


def test_deterministic_decisions():
    t = TxnTemplate("t", {"a": "key", "b": "key", "g": "bool"},
                    [Access("main", P("a"), EX), Access("main", P("b"), EX, "g")])
    assert plan_retires(t) == plan_retires(t)


def test_repeat_group_unrolled(tmp_path):
    obj = {
        "name": "loop",
        "params": [{"name": "ks", "count": 3}],
        "accesses": [{"repeat": 3, "body": [{"key": {"param": "ks[i]"}, "mode": "EX"}]}],
    }
    path = tmp_path / "t.json"
    path.write_text(json.dumps(obj))
    t = load_template(path)
    assert [str(a.key) for a in t.accesses] == ["ks[0]", "ks[1]", "ks[2]"]
    d = plan_retires(t)
    assert [x.kind for x in d] == ["CONDITIONAL", "CONDITIONAL", "ALWAYS"]
    inst = compile_template(t).instantiate({"ks[0]": 4, "ks[1]": 5, "ks[2]": 4})
    assert inst.retire == [False, True, True]


def test_unbounded_repeat_rejected():
    with pytest.raises(TemplateError):
        template_from_dict({"accesses": [{"repeat": "n", "body": []}]})
    with pytest.raises(TemplateError, match="mode"):
        template_from_dict({"accesses": [{"key": {"const": 1}, "mode": "XX"}]})


def test_soundness_two_accesses_exhaustive():
    count, bad = oracles.planner_soundness((2,))
    assert count == 1600 and bad == []
