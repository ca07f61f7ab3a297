import gzip
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lattice_forge import dataset as ds
from lattice_forge.dataset import (
    STREAM_HIDDEN_TEST,
    DatasetConfig,
    Manifest,
    SampleRecord,
    attach_slice_features,
    check_disjoint,
    export,
    generate_labeled,
    iter_records,
    load,
    manifest_path,
    split,
    trainable,
)
from lattice_forge.errors import CorruptRecord, SchemaMismatch, SingularSystem
from lattice_forge.lattice import Lattice, SectionSpec
from lattice_forge.mechanics import solve_lattice
from lattice_forge.slicing import SlicePlan

from oracles import bar_volume, transverse_fixture


@pytest.fixture(scope="module")
def small():
    return generate_labeled(DatasetConfig(n=30, seed=5, name="small"))


def test_generate_counts(small):
    records, man = small
    assert len(records) == 30 and man.kept == 30
    assert man.kept + man.discarded == man.requested
    assert [r.id for r in records] == list(range(30))
    assert all(1 <= r.n_free <= 50 for r in records)


def test_volume_recomputed_independently(small):
    A = SectionSpec(5e-3).area
    for r in small[0]:
        assert math.isclose(r.volume, bar_volume(r.nodes, r.edges, A), rel_tol=1e-12)


def test_labels_match_fresh_solve(small):
    for r in small[0][:5]:
        assert math.isclose(r.label, solve_lattice(r.lattice, "truss").e_eff, rel_tol=1e-12)


def test_worker_count_does_not_change_content():
    cfg = DatasetConfig(n=12, seed=2)
    serial, _ = generate_labeled(cfg, workers=1)
    parallel, _ = generate_labeled(cfg, workers=2)
    assert [r.to_json() for r in serial] == [r.to_json() for r in parallel]


def test_hidden_test_seeds_disjoint(small):
    hidden, _ = generate_labeled(DatasetConfig(n=30, seed=5, stream=STREAM_HIDDEN_TEST))
    assert not {r.seed for r in small[0]} & {r.seed for r in hidden}


def test_singular_samples_replaced(monkeypatch):
    real = ds.solve_lattice
    calls = {"n": 0}

    def flaky(lat, kind):
        calls["n"] += 1
        if calls["n"] % 3 == 1:
            raise SingularSystem("forced")
        return real(lat, kind)

    monkeypatch.setattr(ds, "solve_lattice", flaky)
    records, man = generate_labeled(DatasetConfig(n=6, seed=1))
    assert len(records) == 6
    # calls 1, 4, 7 fail: samples 0, 2, 4 each need one regeneration
    assert man.discarded_singular == 3 and man.requested == 9
    man.check()


def test_config_validation():
    with pytest.raises(ValueError):
        DatasetConfig(n=0)
    with pytest.raises(ValueError):
        DatasetConfig(n=1, n_free_min=5, n_free_max=4)
    assert DatasetConfig(n=1, kind="beam").to_dict()["kind"] == "beam"


# --- slice features ---------------------------------------------------------------

def test_attach_slice_features(small):
    recs = attach_slice_features([SampleRecord.from_json(r.to_json()) for r in small[0]], SlicePlan(19))
    for r in recs:
        assert r.slice_inv.shape == (57,)
        assert abs(r.target_per_volume * r.volume - r.label) <= 1e-12 * r.label
        r.validate()
    assert len(trainable(recs)) == len(recs)


def test_transverse_fixture_features_constant():
    nodes, edges = transverse_fixture(True)
    lat = Lattice(nodes, edges)
    rec = SampleRecord(0, 0, -4, lat.nodes, lat.edges, 5e-3, 193e9, 0.3, "truss", 1.0, 1.0)
    [rec] = attach_slice_features([rec], SlicePlan(19))
    x, y = rec.slice_inv[:19], rec.slice_inv[19:38]
    assert np.ptp(x) == 0 and np.ptp(y) == 0
    assert rec.flags["zero_area"] and trainable([rec]) == []


# --- splits -----------------------------------------------------------------------

def test_split_full_scale_sizes():
    parts = split(20_000, 0.15, seed=0)
    assert len(parts["val"]) == 3000 and len(parts["train"]) == 17_000 and len(parts["test"]) == 0
    assert math.isclose(2000 / (17_000 + 3000), 0.10)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=3000), st.floats(0, 0.9), st.floats(0, 0.9),
       st.integers(min_value=0, max_value=2**32 - 1))
def test_split_partitions(n, val, test, seed):
    parts = split(n, val, test, seed)
    allidx = np.concatenate(list(parts.values()))
    assert np.array_equal(np.sort(allidx), np.arange(n))
    again = split(n, val, test, seed)
    assert all(np.array_equal(parts[k], again[k]) for k in parts)


def test_split_rejects_bad_input():
    with pytest.raises(ValueError):
        split(10, 1.0)
    with pytest.raises(ValueError):
        check_disjoint({"a": np.array([1, 2]), "b": np.array([2])})
    with pytest.raises(ValueError):
        check_disjoint({"a": np.array([0])}, n=2)


# --- persistence ------------------------------------------------------------------

@pytest.mark.parametrize("name", ["d.jsonl", "d.jsonl.gz"])
def test_round_trip(tmp_path, small, name):
    records, man = small
    recs = attach_slice_features([SampleRecord.from_json(r.to_json()) for r in records], SlicePlan(9))
    path = export(recs, tmp_path / name, man)
    assert manifest_path(path) == tmp_path / "d.manifest.json"
    back, man2 = load(path)
    assert [r.to_json() for r in back] == [r.to_json() for r in recs]
    assert man2 == man


def test_export_byte_identical(tmp_path):
    for k in range(2):
        recs, man = generate_labeled(DatasetConfig(n=5, seed=3))
        export(recs, tmp_path / f"r{k}.jsonl.gz", man)
    assert (tmp_path / "r0.jsonl.gz").read_bytes() == (tmp_path / "r1.jsonl.gz").read_bytes()
    assert (tmp_path / "r0.manifest.json").read_bytes() == (tmp_path / "r1.manifest.json").read_bytes()


def test_header_line(tmp_path, small):
    path = export(small[0][:2], tmp_path / "h.jsonl")
    first = path.read_text().splitlines()[0]
    assert json.loads(first) == {"schema": "lattice-forge/1", "units": "SI"}


def test_unknown_schema(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"schema":"lattice-forge/99","units":"SI"}\n')
    with pytest.raises(SchemaMismatch):
        list(iter_records(p))


def test_truncated_file_reports_line(tmp_path, small):
    path = export(small[0][:4], tmp_path / "t.jsonl")
    text = path.read_text()
    lines = text.splitlines(keepends=True)
    path.write_text("".join(lines[:3]) + lines[3][: len(lines[3]) // 2])
    with pytest.raises(CorruptRecord) as err:
        list(iter_records(path))
    assert err.value.line == 4


def test_truncated_gzip(tmp_path, small):
    path = export(small[0], tmp_path / "t.jsonl.gz")
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptRecord):
        list(iter_records(path))


def test_invariant_violation_on_load(tmp_path, small):
    path = export(small[0][:3], tmp_path / "v.jsonl")
    lines = path.read_text().splitlines()
    rec = json.loads(lines[2])
    rec["volume"] *= 1.001
    lines[2] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptRecord) as err:
        list(iter_records(path))
    assert err.value.line == 3


def test_manifest_counts_checked():
    with pytest.raises(ValueError):
        Manifest("m", requested=3, kept=1, discarded_singular=1).check()
    assert Manifest.from_json(Manifest("m", 2, 2).to_json()) == Manifest("m", 2, 2)


def test_gzip_is_deterministic_stream(tmp_path, small):
    path = export(small[0][:2], tmp_path / "g.jsonl.gz")
    with gzip.open(path, "rt") as fh:
        assert fh.readline().startswith('{"schema"')
