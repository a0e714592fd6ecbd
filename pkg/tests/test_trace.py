import json

import pytest
from hypothesis import given, strategies as st

from callgram import ApiCall, Dataset, Label, Trace, load_dataset, parse_report
from callgram.exceptions import EmptyTraceError, ReportParseError, SchemaError
from callgram.trace import read_manifest, read_trace_file, write_manifest, write_trace_file


def report(*processes, sha=None):
    doc = {"behavior": {"processes": [{"calls": [{"api": a, "time": t} for a, t in p]} for p in processes]}}
    if sha:
        doc["target"] = {"file": {"sha256": sha}}
    return json.dumps(doc).encode()


def test_single_process_keeps_order():
    t = parse_report(report([("GetTempPathW", 0.1), ("NtCreateFile", 0.2)]), "malicious")
    assert t.names == ["GetTempPathW", "NtCreateFile"]
    assert t.label is Label.MALICIOUS


def test_merge_breaks_time_ties_by_document_order():
    # equal timestamps resolve by process position, then call position
    t = parse_report(report([("B", 0.1), ("C", 0.3)], [("A", 0.3)]), "benign")
    assert t.names == ["B", "C", "A"]
    t = parse_report(report([("A", 0.3)], [("B", 0.1), ("C", 0.3)]), "benign")
    assert t.names == ["B", "A", "C"]


@given(st.lists(st.lists(st.tuples(st.sampled_from("ABCDE"), st.integers(0, 5)), max_size=6), min_size=1,
                max_size=4).filter(lambda ps: any(ps)))
def test_merge_matches_stable_sort_oracle(processes):
    flat = [(t, name) for p in processes for name, t in p]
    expected = [name for _, name in sorted(flat, key=lambda x: x[0])]  # sorted() is stable
    assert parse_report(report(*processes), "benign").names == expected


def test_missing_behavior_is_schema_error():
    with pytest.raises(SchemaError):
        parse_report(b'{"info": {}}', "benign")


def test_zero_calls():
    with pytest.raises(EmptyTraceError):
        parse_report(report([], []), "benign")


def test_malformed_json_reports_byte_offset():
    raw = '{"behavior": {"é": [1, 2,, 3]}}'.encode()
    with pytest.raises(ReportParseError) as info:
        parse_report(raw, "benign")
    assert info.value.offset == raw.index(b",,") + 1
    assert "byte offset" in str(info.value)


def test_bad_call_fields():
    with pytest.raises(SchemaError):
        parse_report(b'{"behavior": {"processes": [{"calls": [{"api": 3, "time": 0}]}]}}', "benign")
    with pytest.raises(SchemaError):
        parse_report(b'{"behavior": {"processes": [{"calls": [{"api": "X"}]}]}}', "benign")


def test_sample_id_from_target_hash():
    assert parse_report(report([("A", 0)], sha="abc"), "benign").sample_id == "abc"
    assert parse_report(report([("A", 0)], sha="abc"), "benign", sample_id="x").sample_id == "x"


def test_label_tokens():
    assert Label.parse("Malicious") is Label.MALICIOUS
    assert Label.BENIGN.token == "benign"
    with pytest.raises(SchemaError):
        Label.parse("suspicious")


def test_trace_invariants():
    with pytest.raises(ValueError):
        Trace("s", Label.BENIGN, [ApiCall("A", 1.0), ApiCall("B", 0.5)])
    with pytest.raises(ValueError):
        ApiCall("", 0.0)
    with pytest.raises(ValueError):
        ApiCall("A", -1.0)


def test_trace_round_trip(tmp_path):
    t = Trace.from_names("s1", "malicious", ["A", "B", "A"], meta={"generation": 2})
    write_trace_file(t, tmp_path / "s1.json")
    back = read_trace_file(tmp_path / "s1.json")
    assert back.to_dict() == t.to_dict()


def test_duplicate_ids_rejected():
    a = Trace.from_names("x", "benign", ["A", "B"])
    with pytest.raises(ValueError):
        Dataset([a, a])


def _write_reports(tmp_path, n):
    rows = []
    for i in range(n):
        (tmp_path / f"r{i}.json").write_bytes(report([("A", 0.1), ("B", 0.2 + i)]))
        rows.append((f"s{i}", f"r{i}.json", "malicious" if i % 2 else "benign"))
    return rows


def test_load_dataset_three_rows(tmp_path):
    write_manifest(_write_reports(tmp_path, 3), tmp_path / "m.csv")
    ds, skipped = load_dataset(tmp_path, tmp_path / "m.csv")
    assert len(ds) == 3 and skipped == []
    assert ds.sample_ids == ["s0", "s1", "s2"]


def test_load_dataset_skips_missing_file(tmp_path):
    rows = _write_reports(tmp_path, 3)
    (tmp_path / "r1.json").unlink()
    write_manifest(rows, tmp_path / "m.csv")
    ds, skipped = load_dataset(tmp_path, tmp_path / "m.csv")
    assert len(ds) == 2
    assert [s for s, _ in skipped] == ["s1"]


def test_load_dataset_skips_unparseable(tmp_path):
    rows = _write_reports(tmp_path, 2)
    (tmp_path / "r0.json").write_text("{not json")
    write_manifest(rows, tmp_path / "m.csv")
    ds, skipped = load_dataset(tmp_path, tmp_path / "m.csv")
    assert ds.sample_ids == ["s1"] and len(skipped) == 1


def test_manifest_hard_errors(tmp_path):
    (tmp_path / "dup.csv").write_text("a,x.json,benign\na,y.json,benign\n")
    with pytest.raises(SchemaError):
        read_manifest(tmp_path / "dup.csv")
    (tmp_path / "bad.csv").write_text("a,x.json,evil\n")
    with pytest.raises(SchemaError):
        read_manifest(tmp_path / "bad.csv")


def test_class_counts_at_corpus_scale(tmp_path):
    traces = [Trace.from_names(f"b{i}", "benign", ["A", "B"]) for i in range(300)]
    traces += [Trace.from_names(f"m{i}", "malicious", ["A", "C"]) for i in range(310)]
    assert Dataset(traces).class_counts() == {"benign": 300, "malicious": 310}
