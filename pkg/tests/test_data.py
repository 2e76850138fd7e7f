import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rescue_ipw.data import Schema, TrialDataset, TrialRecord, load_dataset, write_dataset
from rescue_ipw.errors import BadValue, EmptyArm, MissingColumn, MissingL


def _small():
    recs = [
        TrialRecord(1, 0, 0.5, (1.25,), (0.1, 2.0)),
        TrialRecord(1, 1, -1.0, (-0.5,), (0.3, 1.0)),
        TrialRecord(0, 0, 2.0, None, (-0.2, 0.0)),
        TrialRecord(0, 1, 0.0, None, (1.5, -1.0)),
    ]
    return TrialDataset.from_records(recs, c_names=("age", "base"), l_names=("sev",))


def test_records_round_trip_through_dataset():
    d = _small()
    assert d[2].l is None
    assert d[0].l == (1.25,)
    assert d.records[1] == TrialRecord(1, 1, -1.0, (-0.5,), (0.3, 1.0))


def test_absent_l_is_nan_not_sentinel():
    d = _small()
    assert np.all(np.isnan(d.l[~d.l_present]))
    assert np.all(d.l_filled[~d.l_present] == 0.0)


def test_arrays_are_read_only():
    d = _small()
    with pytest.raises(ValueError):
        d.y[0] = 3.0


@pytest.mark.parametrize("field,value", [("r", [1, 2, 0, 0]), ("s", [1, 0, -1, 0])])
def test_non_binary_indicator_rejected(field, value):
    d = _small()
    kw = dict(r=d.r, s=d.s, y=d.y, l=d.l, l_present=d.l_present, c=d.c,
              c_names=d.c_names, l_names=d.l_names)
    kw[field] = np.array(value)
    with pytest.raises(BadValue):
        TrialDataset(**kw)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_values_rejected(bad):
    d = _small()
    y = d.y.copy()
    y[0] = bad
    with pytest.raises(BadValue):
        TrialDataset(d.r, d.s, y, d.l, d.l_present, d.c, d.c_names, d.l_names)
    c = d.c.copy()
    c[1, 0] = bad
    with pytest.raises(BadValue):
        TrialDataset(d.r, d.s, d.y, d.l, d.l_present, c, d.c_names, d.l_names)
    l = d.l.copy()
    l[0, 0] = bad
    with pytest.raises(BadValue):
        TrialDataset(d.r, d.s, d.y, l, d.l_present, d.c, d.c_names, d.l_names)


def test_empty_arm_rejected():
    with pytest.raises(EmptyArm):
        TrialDataset.from_records([TrialRecord(1, 0, 0.0, (0.0,), ())], (), ("l",))


def test_require_l_checks_only_the_requested_arm():
    d = _small()
    d.require_l(1)
    with pytest.raises(MissingL):
        d.require_l(0)


def test_flip_arms_swaps_labels_only():
    d = _small()
    f = d.flip_arms()
    assert np.array_equal(f.r, 1 - d.r)
    assert f.flip_arms() == d


def test_csv_round_trip_with_absent_l(tmp_path):
    d = _small()
    path = tmp_path / "d.csv"
    write_dataset(d, path)
    text = path.read_text().splitlines()
    assert text[0] == "R,S,Y,L_sev,C_age,C_base"
    # absent L is an empty field, not NA text
    assert text[3] == "0,0,2,,-0.20000000000000001,0"
    assert load_dataset(path) == d


def test_two_record_dataset_gives_header_plus_two_lines(tmp_path):
    d = TrialDataset.from_records(
        [TrialRecord(1, 0, 1.0, (0.0,), ()), TrialRecord(0, 0, 2.0, None, ())], (), ("l",))
    path = tmp_path / "d.csv"
    write_dataset(d, path)
    assert len(path.read_text().splitlines()) == 3


def test_csv_round_trip_keeps_strata(tmp_path):
    d = _small().with_strata(np.array(["a", "b", "a", "b"], dtype=object))
    path = tmp_path / "d.csv"
    write_dataset(d, path)
    back = load_dataset(path)
    assert back == d
    assert list(back.strata) == ["a", "b", "a", "b"]


def _write(tmp_path, text):
    path = tmp_path / "in.csv"
    path.write_text(text)
    return path


def test_empty_y_is_bad_value(tmp_path):
    path = _write(tmp_path, "R,S,Y,L_x\n1,0,,1\n0,0,1,\n")
    with pytest.raises(BadValue):
        load_dataset(path)


def test_non_numeric_covariate_is_bad_value(tmp_path):
    path = _write(tmp_path, "R,S,Y,C_a\n1,0,1,abc\n0,0,1,2\n")
    with pytest.raises(BadValue):
        load_dataset(path)


def test_non_binary_r_in_csv_is_bad_value(tmp_path):
    path = _write(tmp_path, "R,S,Y\n2,0,1\n0,0,1\n")
    with pytest.raises(BadValue):
        load_dataset(path)


def test_missing_column(tmp_path):
    path = _write(tmp_path, "R,Y\n1,1\n0,1\n")
    with pytest.raises(MissingColumn):
        load_dataset(path)
    path = _write(tmp_path, "R,S,Y\n1,0,1\n0,0,1\n")
    with pytest.raises(MissingColumn):
        load_dataset(path, Schema(cols_l=["sev"]))


def test_single_arm_csv_is_empty_arm(tmp_path):
    path = _write(tmp_path, "R,S,Y\n1,0,1\n1,1,2\n")
    with pytest.raises(EmptyArm):
        load_dataset(path)


def test_partially_empty_l_row_rejected(tmp_path):
    path = _write(tmp_path, "R,S,Y,L_a,L_b\n1,0,1,1,\n0,0,1,,\n")
    with pytest.raises(BadValue):
        load_dataset(path)


def test_explicit_schema_columns(tmp_path):
    path = _write(tmp_path, "arm,rescue,out,sev,age\n1,1,0.5,2,40\n0,0,1.5,,50\n")
    d = load_dataset(path, Schema(col_r="arm", col_s="rescue", col_y="out", cols_l=["sev"], cols_c=["age"]))
    assert d.c_names == ("age",) and d.l_names == ("sev",)
    assert d[0] == TrialRecord(1, 1, 0.5, (2.0,), (40.0,))
    assert d[1].l is None


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, width=64)


@st.composite
def datasets(draw):
    n = draw(st.integers(min_value=2, max_value=12))
    r = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    r[0], r[1] = 1, 0
    s = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    y = draw(st.lists(finite, min_size=n, max_size=n))
    pc = draw(st.integers(0, 2))
    pl = draw(st.integers(1, 2))
    c = np.array(draw(st.lists(finite, min_size=n * pc, max_size=n * pc))).reshape(n, pc)
    l = np.array(draw(st.lists(finite, min_size=n * pl, max_size=n * pl))).reshape(n, pl)
    present = np.array(draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    return TrialDataset(np.array(r), np.array(s), np.array(y), l, present, c,
                        tuple(f"c{i}" for i in range(pc)), tuple(f"l{i}" for i in range(pl)))


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_write_then_load_is_identity(tmp_path_factory, d):
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_dataset(d, path)
    assert load_dataset(path) == d
