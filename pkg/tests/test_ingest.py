import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cigcn.errors import EmptyLog, InvalidBoundaries, InvalidStageCount, MalformedLine
from cigcn.ingest import (
    IdMap,
    InteractionLog,
    assign_roles,
    load_stages,
    parse_interactions,
    split_stages,
    stage_sizes,
    write_stages,
)


def test_parse_three_lines(tmp_path):
    p = tmp_path / "log.tsv"
    p.write_text("u1\ti1\t10\nu2\ti1\t5\n\nu1\ti2\t7\n")
    log = parse_interactions(p)
    assert len(log) == 3
    assert log.records() == [("u1", "i1", 10), ("u2", "i1", 5), ("u1", "i2", 7)]


def test_parse_empty_file(tmp_path):
    p = tmp_path / "empty.tsv"
    p.write_text("")
    assert len(parse_interactions(p)) == 0


def test_parse_bad_timestamp(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("u0\ti0\t1\nu1\ti7\tabc\n")
    with pytest.raises(MalformedLine) as err:
        parse_interactions(p)
    assert err.value.line_no == 2


def test_parse_custom_delimiter(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("a,b,3\n")
    assert parse_interactions(p, ",").records() == [("a", "b", 3)]


def test_parse_missing_file(tmp_path):
    with pytest.raises(OSError):
        parse_interactions(tmp_path / "nope.tsv")


def _log(n, ts=None):
    ts = list(range(n)) if ts is None else ts
    return InteractionLog.from_records((f"u{k % 7}", f"i{k % 5}", t) for k, t in enumerate(ts))


def test_split_equal():
    stages = split_stages(_log(40), 4)
    assert [s.n_records for s in stages] == [10, 10, 10, 10]


def test_split_remainder_goes_first():
    assert [s.n_records for s in split_stages(_log(10), 3)] == [4, 3, 3]


def test_split_errors():
    with pytest.raises(EmptyLog):
        split_stages(InteractionLog(), 3)
    with pytest.raises(InvalidStageCount):
        split_stages(_log(5), 1)


def test_split_million_record_count():
    # a million-record log over 40 stages
    sizes = stage_sizes(1_027_370, 40)
    assert len(sizes) == 40 and sum(sizes) == 1_027_370 and max(sizes) - min(sizes) <= 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=2, max_size=60), st.integers(2, 6))
def test_split_properties(ts, n_stages):
    log = _log(len(ts), ts)
    stages = split_stages(log, n_stages)
    sizes = [s.n_records for s in stages]
    assert max(sizes) - min(sizes) <= 1
    # concatenation reproduces the stable timestamp sort
    joined = [r for s in stages for r in s.log.records()]
    assert joined == log.sorted().records()
    for a, b in zip(stages, stages[1:]):
        if a.n_records and b.n_records:
            assert a.ts_max <= b.ts_min


def test_dedup_within_stage_only():
    log = InteractionLog.from_records([("u", "i", 1), ("u", "i", 2), ("u", "i", 3), ("u", "j", 4)])
    s0, s1 = split_stages(log, 2)
    assert len(s0.pairs) == 1 and s0.n_records == 2
    assert len(s1.pairs) == 2


def test_idmap_layout_and_roundtrip():
    log = InteractionLog.from_records([("b", "x", 1), ("a", "y", 2), ("b", "y", 3)])
    idmap = IdMap.from_log(log)
    assert idmap.user_count == 2 and idmap.item_count == 2
    assert [idmap.user_index(u) for u in ("b", "a")] == [0, 1]
    assert [idmap.item_index(i) for i in ("x", "y")] == [2, 3]
    for ext in ("a", "b"):
        assert idmap.external(idmap.user_index(ext)) == ext
    for ext in ("x", "y"):
        assert idmap.external(idmap.item_index(ext)) == ext


def test_roles():
    roles = assign_roles(40, 30, 33)
    assert roles.count("train") == 30 and roles.count("valid") == 3 and roles.count("test") == 7
    assert assign_roles(4, 2, 3) == ["train", "train", "valid", "test"]
    with pytest.raises(InvalidBoundaries):
        assign_roles(4, 3, 3)


def test_write_and_reload(tmp_path):
    log = _log(30)
    stages = split_stages(log, 3)
    roles = assign_roles(3, 1, 2)
    manifest = write_stages(stages, roles, tmp_path)
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["stages"][1]["records"] == 10 and on_disk["stages"][2]["role"] == "test"
    assert manifest["n_users"] == 7
    again, roles2, _ = load_stages(tmp_path)
    assert roles2 == roles
    for a, b in zip(stages, again):
        np.testing.assert_array_equal(a.pairs, b.pairs)
