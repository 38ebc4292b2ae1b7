import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdm.core import PreconditionError
from cdm.ingest import (
    CsvSchema,
    IngestError,
    RowError,
    SchemaError,
    kfold,
    kfold_indices,
    load_csv,
    read_csv,
    split,
    write_csv,
)
from cdm.synth import DgpConfig, gen_criteo_like, gen_rct

from conftest import toy_dataset


def _write(path, text):
    path.write_text(text)
    return path


def test_three_row_parse(tmp_path):
    p = _write(tmp_path / "d.csv", "f0,f1,treatment,outcome\n0.1,2,1,1\n-3,0.5,0,0\n1e-3,7,1,0\n")
    ds = load_csv(p)
    assert ds.n == 3 and ds.n_features == 2
    assert ds.treated_fraction == pytest.approx(2 / 3)
    np.testing.assert_array_equal(ds.outcome, [1, 0, 0])
    assert ds.propensity is None


def test_propensity_column(tmp_path):
    rows = "".join(f"{i},{i % 2},{i % 3},0.85\n" for i in range(6))
    ds = load_csv(_write(tmp_path / "d.csv", "f0,treatment,outcome,propensity\n" + rows))
    assert all(s.propensity == 0.85 for s in ds.samples)


def test_constant_propensity_schema(tmp_path):
    p = _write(tmp_path / "d.csv", "a,t,y\n1,1,0\n2,0,1\n")
    schema = CsvSchema(("a",), "t", "y", constant_propensity=0.3)
    ds = load_csv(p, schema)
    assert ds.constant_propensity == 0.3


def test_bad_treatment_names_row(tmp_path):
    p = _write(tmp_path / "d.csv", "f0,treatment,outcome\n0,1,1\n1,2,0\n2,0,1\n")
    with pytest.raises(RowError) as info:
        load_csv(p)
    assert info.value.row == 2
    assert "data row 2" in str(info.value)
    ds, skipped = read_csv(p, skip_bad_rows=True)
    assert skipped == 1 and ds.n == 2


@pytest.mark.parametrize("bad", ["x", "nan", "inf", ""])
def test_non_numeric_rejected(tmp_path, bad):
    p = _write(tmp_path / "d.csv", f"f0,treatment,outcome\n0,1,1\n{bad},1,0\n")
    with pytest.raises(RowError):
        load_csv(p)


def test_schema_errors(tmp_path):
    p = _write(tmp_path / "d.csv", "f0,treatment\n0,1\n")
    with pytest.raises(SchemaError):
        load_csv(p)
    with pytest.raises(SchemaError):
        load_csv(_write(tmp_path / "e.csv", ""))
    with pytest.raises(SchemaError):
        CsvSchema.from_dict({"feature_columns": ["a"], "colour": "red"})
    with pytest.raises(IngestError):
        load_csv(tmp_path / "missing.csv")


def test_propensity_out_of_range(tmp_path):
    p = _write(tmp_path / "d.csv", "f0,treatment,outcome,propensity\n0,1,1,1.0\n")
    with pytest.raises(RowError):
        load_csv(p)


def _assert_round_trip(ds, back):
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.treatment, ds.treatment)
    np.testing.assert_array_equal(back.outcome, ds.outcome)
    if ds.propensity is not None:
        np.testing.assert_array_equal(back.propensity, ds.propensity)


def test_round_trip_synthetic(tmp_path):
    ds = gen_rct(DgpConfig(n_samples=100, baseline_coefs=(1, -2), effect_coefs=(0.3, 0.1), seed=6))
    write_csv(ds, tmp_path / "r.csv", include_oracle=True)
    back = load_csv(tmp_path / "r.csv")
    _assert_round_trip(ds, back)
    np.testing.assert_array_equal(back.mu1, ds.mu1)
    np.testing.assert_array_equal(back.y0, ds.y0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e300, 1e300), st.floats(-1e300, 1e300), st.integers(0, 1),
                          st.floats(-1e300, 1e300), st.floats(1e-9, 1 - 1e-9)), min_size=1, max_size=20))
def test_round_trip_property(tmp_path_factory, rows):
    X = [[a, b] for a, b, *_ in rows]
    ds = toy_dataset(X, [r[2] for r in rows], [r[3] for r in rows], e=[r[4] for r in rows])
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(ds, path)
    _assert_round_trip(ds, load_csv(path))


def test_include_oracle_needs_synthetic(tmp_path):
    ds = toy_dataset([[0.0]], [1], [1.0])
    with pytest.raises(PreconditionError):
        write_csv(ds, tmp_path / "x.csv", include_oracle=True)


def test_golden_header(tmp_path):
    ds = toy_dataset([[0.5, -1.0], [2.0, 3.0]], [1, 0], [1.0, 0.0], e=[0.5, 0.5])
    write_csv(ds, tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text() == (
        "f0,f1,treatment,outcome,propensity\n"
        "0.5,-1.0,1,1.0,0.5\n"
        "2.0,3.0,0,0.0,0.5\n"
    )


def test_split_sizes_and_determinism():
    ds = toy_dataset(np.arange(10.0), np.arange(10) % 2, np.arange(10.0))
    a, b = split(ds, [0.5, 0.5], seed=1)
    assert (a.n, b.n) == (5, 5)
    a2, b2 = split(ds, [0.5, 0.5], seed=1)
    np.testing.assert_array_equal(a.X, a2.X)
    np.testing.assert_array_equal(b.X, b2.X)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 300), st.integers(0, 10**6), st.booleans())
def test_split_is_partition(n, seed, strat):
    ds = toy_dataset(np.arange(n, dtype=float), np.arange(n) % 3 == 0, np.zeros(n))
    parts = split(ds, [0.4, 0.3, 0.3], seed=seed, stratify_by_treatment=strat) if n >= 10 else \
        split(ds, [0.5, 0.5], seed=seed)
    ids = np.concatenate([p.X[:, 0] for p in parts])
    np.testing.assert_array_equal(np.sort(ids), np.arange(n))


def test_stratified_split_keeps_treated_fraction():
    ds = gen_criteo_like(n_samples=10000, seed=0)
    for part in split(ds, [0.8, 0.2], seed=3, stratify_by_treatment=True):
        assert abs(part.treated_fraction - 0.85) < 0.02


def test_kfold_examples():
    ds = toy_dataset(np.arange(5.0), [0, 1, 0, 1, 0], np.zeros(5))
    pairs = kfold(ds, 5, seed=0)
    assert len(pairs) == 5 and all(test.n == 1 and train.n == 4 for train, test in pairs)
    assert sorted(len(f) for f in kfold_indices(10, 2, seed=0)) == [5, 5]


def test_kfold_covers_every_index_once():
    folds = kfold_indices(103, 5, seed=9)
    assert sorted(np.concatenate(folds).tolist()) == list(range(103))
    assert sorted(len(f) for f in folds) == [20, 20, 21, 21, 21]


def test_kfold_bad_k():
    with pytest.raises(PreconditionError):
        kfold_indices(3, 4)
