import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irregad.data import (
    DROP_RATES,
    DataError,
    Dataset,
    SynthConfig,
    first_difference,
    load_activity,
    load_pendigits,
    nearest_centroid_auc,
    parse_record,
    random_drop,
    read_jsonl,
    read_records,
    relabel_binary,
    split,
    subsample_windows,
    synth_generate,
    write_jsonl,
)
from irregad.sequences import IrregularSequence, SequenceError


def seq_of(K, M=1, **kw):
    return IrregularSequence(np.arange(K * M, dtype=float).reshape(K, M), np.arange(K, dtype=float), **kw)


def classes_dataset(counts):
    seqs = []
    for klass, n in counts.items():
        seqs.extend(seq_of(3, id=f"{klass}-{i}", klass=klass) for i in range(n))
    return Dataset(tuple(seqs))


# ------------------------------------------------------------- sequences
def test_sequence_validation():
    with pytest.raises(SequenceError):
        IrregularSequence([[1.0], [2.0]], [0.0, 0.0])
    with pytest.raises(SequenceError):
        IrregularSequence([[1.0], [2.0]], [0.0])
    with pytest.raises(SequenceError):
        IrregularSequence([[math.nan]], [0.0])
    with pytest.raises(SequenceError):
        IrregularSequence([[1.0]], [0.0], label=0)
    s = IrregularSequence([1.0, 2.0], [0.0, 0.5])
    assert s.values.shape == (2, 1) and not s.values.flags.writeable
    np.testing.assert_array_equal(s.deltas(first=0.25), [0.25, 0.5])


# ------------------------------------------------------- first difference
def test_first_difference_example():
    s = IrregularSequence([[0, 0], [1, 2], [3, 3]], [0.0, 0.1, 0.2])
    d = first_difference(s)
    np.testing.assert_array_equal(d.values, [[1, 2], [2, 1]])
    np.testing.assert_array_equal(d.timestamps, [0.1, 0.2])


def test_first_difference_constant_and_short():
    s = IrregularSequence(np.full((4, 2), 7.0), np.arange(4.0))
    np.testing.assert_array_equal(first_difference(s).values, 0.0)
    with pytest.raises(DataError):
        first_difference(seq_of(1))


# ------------------------------------------------------------ random drop
def test_drop_zero_is_identity():
    s = seq_of(20)
    assert random_drop(s, 0.0, np.random.default_rng(0)) is s


def test_drop_rejects_bad_rate():
    with pytest.raises(DataError):
        random_drop(seq_of(5), 1.0, np.random.default_rng(0))


def test_drop_half_binomial_bound():
    # exact binomial mass of [400, 600] for n=1000, p=0.5
    inside = sum(math.comb(1000, k) for k in range(400, 601)) / 2 ** 1000
    assert inside > 0.999
    rng = np.random.default_rng(0)
    counts = [len(random_drop(seq_of(1000), 0.5, rng)) for _ in range(200)]
    assert all(400 <= c <= 600 for c in counts)


def test_drop_keeps_at_least_two_earliest():
    rng = np.random.default_rng(1)
    for _ in range(50):
        out = random_drop(seq_of(5), 0.99, rng)
        assert len(out) >= 2


@settings(max_examples=60, deadline=None)
@given(K=st.integers(2, 60), rate=st.sampled_from(DROP_RATES), seed=st.integers(0, 2**16))
def test_difference_then_drop_is_subsequence(K, rate, seed):
    s = IrregularSequence(np.random.default_rng(seed).normal(size=(K, 2)), np.cumsum(np.ones(K)))
    d = first_difference(s) if K > 2 else s
    out = random_drop(d, rate, np.random.default_rng(seed))
    assert np.all(np.diff(out.timestamps) > 0)
    assert set(out.timestamps.tolist()) <= set(d.timestamps.tolist())
    # each survivor keeps its own sample
    lookup = {t: v for t, v in zip(d.timestamps.tolist(), d.values)}
    for t, v in zip(out.timestamps.tolist(), out.values):
        np.testing.assert_array_equal(lookup[t], v)


def test_drop_is_pure_given_seed():
    s = seq_of(100)
    a = random_drop(s, 0.3, np.random.default_rng(9))
    b = random_drop(s, 0.3, np.random.default_rng(9))
    np.testing.assert_array_equal(a.timestamps, b.timestamps)


# ------------------------------------------------------------ windows
def test_windows_fixed_length():
    out = subsample_windows(seq_of(150), 75, 75, np.random.default_rng(0))
    assert [len(w) for w in out] == [75, 75]


def test_windows_short_sequence_gives_empty():
    assert subsample_windows(seq_of(10), 20, 30, np.random.default_rng(0)) == []
    with pytest.raises(DataError):
        subsample_windows(seq_of(10), 5, 4, np.random.default_rng(0))


def test_windows_count_bounds_and_disjoint():
    s = IrregularSequence(np.zeros((7500, 1)), np.arange(7500) * 0.04)
    lo, hi = 7500 // 75, 7500 // 55
    assert (lo, hi) == (100, 136)
    for seed in range(5):
        out = subsample_windows(s, 55, 75, np.random.default_rng(seed))
        assert lo <= len(out) <= hi
        assert all(55 <= len(w) <= 75 for w in out)
        starts = [w.timestamps[0] for w in out]
        ends = [w.timestamps[-1] for w in out]
        assert all(e < s2 for e, s2 in zip(ends, starts[1:]))


# ------------------------------------------------------------ relabel
def test_relabel_digits_grouping_ratio():
    ds = relabel_binary(classes_dataset({c: 10 for c in range(10)}), [1, 2, 4, 5, 7], [0])
    assert len(ds) == 60
    assert ds.negative_ratio == pytest.approx(5 / 6)
    assert ds.meta["negative_ratio"] == pytest.approx(5 / 6)


def test_relabel_activity_grouping_ratio():
    ds = relabel_binary(classes_dataset({c: 4 for c in range(19)}), range(4, 19), range(4))
    assert ds.negative_ratio == pytest.approx(15 / 19)


def test_relabel_empty_anomaly_group_and_overlap():
    ds = relabel_binary(classes_dataset({0: 2, 1: 3}), [0, 1], [])
    assert set(ds.labels) == {-1}
    with pytest.raises(DataError):
        relabel_binary(classes_dataset({0: 1}), [0], [0])


# ------------------------------------------------------------------ split
def test_split_sizes_and_reproducible():
    ds = Dataset(tuple(seq_of(2, id=str(i), label=-1) for i in range(2000)))
    a = split(ds, (0.5, 0.25, 0.25), seed=3)
    assert [len(p) for p in a] == [1000, 500, 500]
    b = split(ds, (0.5, 0.25, 0.25), seed=3)
    assert [[s.id for s in p] for p in a] == [[s.id for s in p] for p in b]
    ids = [s.id for p in a for s in p]
    assert len(set(ids)) == 2000


def test_split_of_four_thousand_windows():
    ds = Dataset(tuple(seq_of(2, id=str(i), label=-1) for i in range(4000)))
    assert [len(p) for p in split(ds, (0.5, 0.25, 0.25), seed=0)] == [2000, 1000, 1000]


def test_split_errors():
    ds = Dataset(tuple(seq_of(2, id=str(i)) for i in range(3)))
    with pytest.raises(DataError):
        split(ds, (0.5, 0.5), 0)
    with pytest.raises(DataError):
        split(ds, (0.1, 0.1, 0.1), 0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(20, 200), seed=st.integers(0, 100))
def test_relabel_split_preserves_count(n, seed):
    rng = np.random.default_rng(seed)
    ds = classes_dataset({c: int(k) for c, k in enumerate(rng.integers(1, n // 4 + 2, size=4))})
    rel = relabel_binary(ds, [0, 1, 2], [3])
    parts = split(rel, (0.6, 0.2, 0.2), seed)
    assert sum(len(p) for p in parts) == len(rel)


def test_dataset_rejects_mixed_dims():
    with pytest.raises(DataError):
        Dataset((seq_of(2, M=1), seq_of(2, M=2)))


# --------------------------------------------------------------- synthetic
def test_synth_exact_anomaly_count_and_seeded():
    ds = synth_generate(SynthConfig(n_sequences=500, anomaly_fraction=0.1), np.random.default_rng(0))
    assert sum(1 for y in ds.labels if y == 1) == 50
    again = synth_generate(SynthConfig(n_sequences=500, anomaly_fraction=0.1), np.random.default_rng(0))
    assert all(np.array_equal(a.values, b.values) for a, b in zip(ds, again))


def test_synth_task_is_learnable():
    ds = synth_generate(SynthConfig(), np.random.default_rng(1))
    assert nearest_centroid_auc(ds) > 0.9


@pytest.mark.parametrize("family", ["damped", "regime"])
def test_synth_families(family):
    cfg = SynthConfig(n_sequences=20, nominal={"family": family, "freq": 0.05})
    ds = synth_generate(cfg, np.random.default_rng(2))
    assert len(ds) == 20 and ds.dim == 2


def test_synth_config_validation():
    with pytest.raises(DataError):
        SynthConfig(anomaly={"family": "spikes"})
    with pytest.raises(DataError):
        SynthConfig(length_min=1)
    with pytest.raises(DataError):
        SynthConfig.from_dict({"size": 3})


# -------------------------------------------------------------- interchange
def test_jsonl_round_trip(tmp_path):
    ds = synth_generate(SynthConfig(n_sequences=5), np.random.default_rng(3))
    path = tmp_path / "d.jsonl"
    write_jsonl(ds, path)
    back = read_jsonl(path)
    assert back.meta["nominal_period"] == 1.0
    for a, b in zip(ds, back):
        assert a.id == b.id and a.label == b.label
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.timestamps, b.timestamps)


def test_parse_record_errors():
    with pytest.raises(DataError):
        parse_record("{not json")
    with pytest.raises(DataError):
        parse_record({"t": [0, 1]})
    with pytest.raises(DataError):
        parse_record({"t": [0, 1], "x": [1, 2]})
    with pytest.raises(DataError):
        parse_record({"t": [0, 1], "x": [[1], [2]], "color": "red"})
    with pytest.raises(DataError):
        parse_record({"t": [1, 0], "x": [[1], [2]]})


def test_read_records_reports_bad_lines():
    good = json.dumps({"id": "a", "t": [0, 1], "x": [[0], [1]]})
    lines = io.StringIO("\n".join([json.dumps({"meta": {}}), good, "garbage", "", good]) + "\n")
    out = list(read_records(lines))
    assert [n for n, _, _ in out] == [2, 3, 5]
    assert out[1][1] is None and "line 3" in out[1][2]


def test_read_jsonl_errors(tmp_path):
    with pytest.raises(DataError):
        read_jsonl(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"t": [0], "x": [[0]]}\n{oops\n')
    with pytest.raises(DataError, match=":2:"):
        read_jsonl(bad)


# -------------------------------------------------------------- converters
def test_load_pendigits(tmp_path):
    text = """.SEGMENT DIGIT 0-1 ? "3"
.PEN_DOWN
10 20
11 22
.PEN_UP
.PEN_DOWN
12 25
.PEN_UP
.SEGMENT DIGIT 2 ? "0"
.PEN_DOWN
1 1
.PEN_UP
.SEGMENT DIGIT 3 ? "7"
.PEN_DOWN
5 5
6 4
.PEN_UP
"""
    path = tmp_path / "pendigits-orig.tra"
    path.write_text(text)
    ds = load_pendigits(path)
    assert [s.klass for s in ds] == [3, 7]  # the single-point digit is skipped
    np.testing.assert_array_equal(ds[0].values, [[10, 20], [11, 22], [12, 25]])
    np.testing.assert_allclose(ds[0].timestamps, [0.0, 0.1, 0.2])


def test_load_activity(tmp_path):
    for a in (1, 5):
        for p in (1, 2):
            d = tmp_path / f"a{a:02d}" / f"p{p}"
            d.mkdir(parents=True)
            for s in (1, 2):
                np.savetxt(d / f"s{s:02d}.txt", np.full((3, 4), a * 10 + s), delimiter=",")
    ds = load_activity(tmp_path, channels=[0, 2])
    assert len(ds) == 4 and ds.dim == 2
    assert sorted({s.klass for s in ds}) == [0, 4]
    assert len(ds[0]) == 6
    np.testing.assert_allclose(ds[0].timestamps[1], 0.04)
    with pytest.raises(DataError):
        load_activity(tmp_path / "nothing")
