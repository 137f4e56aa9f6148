import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rsfc import data
from rsfc.errors import DataError

finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(finite_floats)
def test_fmt_float_round_trips(v):
    assert float(data.fmt_float(v)) == v


def test_fmt_float_is_shortest_form():
    # numpy scalars must not leak their 17-digit repr into files
    assert data.fmt_float(np.float64(0.1)) == "0.1"
    assert data.fmt_float(1.0) == "1.0"
    assert data.fmt_float(1 / 3) == "0.3333333333333333"


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")


def test_manifest_round_trip(tmp_path):
    p = tmp_path / "manifest.csv"
    write_lines(
        p,
        [
            "subject_id,age_years,timeseries_path",
            "s01,7.5,ts/s01.csv",
            "s02,64,/abs/s02.csv",
        ],
    )
    man = data.load_manifest(p)
    assert man.ids() == ["s01", "s02"]
    assert man.ages().tolist() == [7.5, 64.0]
    assert man.subjects[0].resolve_path(man.root) == tmp_path / "ts/s01.csv"
    assert str(man.subjects[1].resolve_path(man.root)) == "/abs/s02.csv"

    out = tmp_path / "copy.csv"
    data.write_manifest(out, man)
    again = data.load_manifest(out)
    assert again.ids() == man.ids()
    assert again.ages().tolist() == man.ages().tolist()


@pytest.mark.parametrize(
    "rows",
    [
        ["subject_id,age_years"],  # bad header
        ["subject_id,age_years,timeseries_path"],  # no subjects
        ["subject_id,age_years,timeseries_path", "a,12,x.csv", "a,13,y.csv"],
        ["subject_id,age_years,timeseries_path", "a,not_a_number,x.csv"],
        ["subject_id,age_years,timeseries_path", "a,-3,x.csv"],
        ["subject_id,age_years,timeseries_path", "a,nan,x.csv"],
        ["subject_id,age_years,timeseries_path", ",12,x.csv"],
        ["subject_id,age_years,timeseries_path", "a,12,"],
        ["subject_id,age_years,timeseries_path", "a,12"],
    ],
)
def test_manifest_rejects_malformed(tmp_path, rows):
    p = tmp_path / "manifest.csv"
    write_lines(p, rows)
    with pytest.raises(DataError):
        data.load_manifest(p)


def test_manifest_missing_file(tmp_path):
    with pytest.raises(DataError):
        data.load_manifest(tmp_path / "nope.csv")


# ---------------------------------------------------------------------------
# time series / matrices
# ---------------------------------------------------------------------------


def test_timeseries_exact_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    ts = rng.standard_normal((7, 4)) * 10.0 ** rng.integers(-8, 8, size=(7, 4))
    p = tmp_path / "ts.csv"
    data.write_timeseries(p, ts)
    assert np.array_equal(data.load_timeseries(p), ts)


def test_timeseries_sig_digits_quantises(tmp_path):
    ts = np.array([[1.23456789, 2.0], [3.14159265, 4.0]])
    p = tmp_path / "ts.csv"
    data.write_timeseries(p, ts, sig_digits=4)
    got = data.load_timeseries(p)
    assert got[0, 0] == 1.235 and got[1, 0] == 3.142


def test_timeseries_rejects_bad_content(tmp_path):
    p = tmp_path / "ts.csv"
    p.write_text("1.0,2.0\n3.0\n")
    with pytest.raises(DataError):
        data.load_timeseries(p)
    p.write_text("1.0,nan\n2.0,3.0\n")
    with pytest.raises(DataError):
        data.load_timeseries(p)
    p.write_text("1.0,2.0\n")
    with pytest.raises(DataError):  # a single time point is useless
        data.load_timeseries(p)


def test_matrix_round_trip_and_shape_check(tmp_path):
    m = np.random.default_rng(1).standard_normal((5, 5))
    p = tmp_path / "m.csv"
    data.write_matrix(p, m)
    assert np.array_equal(data.load_matrix(p), m)

    p.write_text("1.0,2.0,3.0\n4.0,5.0,6.0\n")
    with pytest.raises(DataError):
        data.load_matrix(p)
    with pytest.raises(ValueError):
        data.write_matrix(tmp_path / "x.csv", np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# ROI table
# ---------------------------------------------------------------------------


def test_bundled_roi_table():
    table = data.bundled_roi_table()
    assert len(table) == 160
    assert table.networks() == ["DMN", "FPN", "CON", "SMN", "ON", "CN"]
    members = table.network_members()
    assert [len(members[n]) for n in table.networks()] == [34, 21, 32, 33, 22, 18]
    joined = np.sort(np.concatenate(list(members.values())))
    assert np.array_equal(joined, np.arange(160))
    assert np.all(np.isfinite(table.coords))


def test_roi_table_round_trip(tmp_path):
    table = data.bundled_roi_table()
    p = tmp_path / "roi.csv"
    data.write_roi_table(p, table)
    again = data.load_roi_table(p)
    assert np.array_equal(again.coords, table.coords)
    assert again.network == table.network
    assert again.name == table.name


def test_roi_table_requires_dense_index(tmp_path):
    p = tmp_path / "roi.csv"
    write_lines(
        p,
        [
            "roi_index,x,y,z,network,name",
            "0,1,2,3,DMN,a",
            "2,4,5,6,DMN,b",
        ],
    )
    with pytest.raises(DataError):
        data.load_roi_table(p)


# ---------------------------------------------------------------------------
# stage bins
# ---------------------------------------------------------------------------

STAGE_CASES = [
    (7.0, 1),
    (19.0, 1),
    (19.9, 1),
    (20.0, 2),
    (34.99, 2),
    (35.0, 3),
    (53.0, 3),
    (54.0, 4),
    (89.0, 4),
    (89.9, 4),  # floor(89.9) == 89, still in range
]


@pytest.mark.parametrize("age, stage", STAGE_CASES)
def test_stage_bins(age, stage):
    assert data.stage_of_age(age) == (stage, False)


def test_stage_clamping():
    assert data.stage_of_age(6.5) == (1, True)
    assert data.stage_of_age(90.0) == (4, True)
    with pytest.raises(DataError):
        data.stage_of_age(float("nan"))


@given(st.floats(min_value=7.0, max_value=89.999))
def test_stage_bins_partition_age_range(age):
    stage, clamped = data.stage_of_age(age)
    assert 1 <= stage <= 4
    assert not clamped


def test_stage_bins_are_contiguous():
    for a, b in zip(data.STAGES, data.STAGES[1:]):
        assert b.lo == a.hi + 1


# ---------------------------------------------------------------------------
# feature / partition / embedding / trend tables
# ---------------------------------------------------------------------------


def test_features_round_trip_with_sidecar(tmp_path):
    ids = ["s1", "s2", "s3"]
    ages = np.array([8.0, 40.5, 77.0])
    feats = np.random.default_rng(2).standard_normal((3, 5))
    params = {"m": 2, "tau": 1, "r_factor": 0.2}
    p = tmp_path / "features.csv"
    data.write_features(p, ids, ages, feats, params)

    got_ids, got_ages, got_feats, got_params = data.load_features(p)
    assert got_ids == ids
    assert np.array_equal(got_ages, ages)
    assert np.array_equal(got_feats, feats)
    assert got_params == params
    assert json.loads((tmp_path / "features.csv.params.json").read_text()) == params


def test_features_header_is_zero_padded(tmp_path):
    p = tmp_path / "features.csv"
    data.write_features(p, ["a"], np.array([10.0]), np.zeros((1, 4)))
    header = p.read_text().splitlines()[0]
    assert header == "subject_id,age_years,sampen_000,sampen_001,sampen_002,sampen_003"


def test_partition_round_trip(tmp_path):
    labels = np.array([0, 0, 2, 1, 1])
    p = tmp_path / "part.csv"
    data.write_partition(p, labels)
    assert np.array_equal(data.load_partition(p), labels)


def test_embedding_round_trip(tmp_path):
    coords = np.random.default_rng(0).standard_normal((6, 2))
    labels = np.array([0, 1, 2, 0, 1, 2])
    p = tmp_path / "emb.csv"
    data.write_embedding(p, coords, labels)
    got_coords, got_labels = data.load_embedding(p)
    assert np.array_equal(got_coords, coords)
    assert np.array_equal(got_labels, labels)


def test_trends_round_trip(tmp_path):
    rows = [
        {"network": "DMN", "measure": "wnc", "slope": -0.004, "intercept": 0.7,
         "r_squared": 0.81, "n_used": 117},
        {"network": "ON", "measure": "segregation", "slope": 0.003, "intercept": 0.2,
         "r_squared": 0.5, "n_used": 120},
    ]
    p = tmp_path / "trends.csv"
    data.write_trends(p, rows)
    assert data.load_trends(p) == rows
