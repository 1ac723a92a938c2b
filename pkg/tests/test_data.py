import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from cl4ctr.data import (OOV_TOKEN, DataError, EncodedDataset, Schema, SynthConfig, Vocabulary,
                         build_vocabulary, encode_rows, frequency_cdf, labeled_seed, load_dataset,
                         read_delimited, save_dataset, split, synth_generate, zipf_pmf)


def rows_of(pairs, fields=("f1", "f2")):
    return [dict(zip(fields, p), label="1") for p in pairs]


def test_vocabulary_sizes_with_oov():
    schema = Schema(("f1", "f2"))
    vocab = build_vocabulary(rows_of([("a", "x"), ("b", "x")]), schema)
    assert vocab.field_sizes == [3, 2]
    assert vocab.num_features == 5
    assert vocab.field_ranges == [(0, 3), (3, 5)]


def test_min_count_sends_rare_token_to_oov():
    schema = Schema(("f1", "f2"))
    vocab = build_vocabulary(rows_of([("a", "x"), ("a", "x"), ("b", "x")]), schema, min_count=2)
    assert vocab.encode({"f1": "b", "f2": "x"})[0] == vocab.oov_index(0)
    assert vocab.counts[vocab.oov_index(0)] == 1


def test_encode_known_and_unseen():
    schema = Schema(("f1", "f2", "f3"))
    vocab = build_vocabulary([{"f1": "a", "f2": "x", "f3": "p"}, {"f1": "b", "f2": "y", "f3": "q"}], schema)
    idx = vocab.encode({"f1": "b", "f2": "x", "f3": "zzz"})
    assert vocab.decode(idx) == {"f1": "b", "f2": "x", "f3": OOV_TOKEN}
    assert idx[2] == vocab.oov_index(2)


def test_encoding_injective_on_known_rows():
    schema = Schema(("a", "b", "c"))
    values = [["0", "1"], ["x", "y", "z"], ["p", "q"]]
    rows = [dict(zip(schema.fields, combo)) for combo in itertools.product(*values)]
    vocab = build_vocabulary(rows, schema)
    codes = {tuple(vocab.encode(r)) for r in rows}
    assert len(codes) == len(rows)


def test_schema_rejects_bad_inputs():
    with pytest.raises(DataError):
        Schema(("only",))
    with pytest.raises(DataError):
        Schema(("a", "a"))


def test_vocabulary_json_roundtrip(tmp_path):
    vocab = build_vocabulary(rows_of([("a", "x"), ("b", "y")]), Schema(("f1", "f2")))
    vocab.save(tmp_path / "v.json")
    back = Vocabulary.load(tmp_path / "v.json")
    assert back.tokens == vocab.tokens
    np.testing.assert_array_equal(back.counts, vocab.counts)


def test_read_delimited_reports_line(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("label,u,i\n1,a,b\n0,a\n")
    with pytest.raises(DataError, match=":3:"):
        read_delimited(path)


def test_read_delimited_tab_detection(tmp_path):
    path = tmp_path / "d.tsv"
    path.write_text("label\tu\ti\n1\ta\tb\n0\tc\td\n")
    schema, rows = read_delimited(path)
    assert schema.fields == ("u", "i") and len(rows) == 2
    ds = encode_rows(rows, build_vocabulary(rows, schema))
    assert ds.y.tolist() == [1, 0]


def test_frequency_cdf_hand_cases():
    assert frequency_cdf(np.full(7, 5)).points() == [(5, 1.0)]
    assert frequency_cdf(np.array([1, 1, 1, 10])).points() == [(1, 0.75), (10, 1.0)]
    cdf = frequency_cdf(np.array([1, 1, 1, 10]))
    assert cdf.at(0) == 0.0 and cdf.at(5) == 0.75


@given(st.lists(st.integers(0, 50), min_size=1, max_size=60))
def test_frequency_cdf_monotone_ending_at_one(counts):
    cdf = frequency_cdf(np.array(counts))
    assert np.all(np.diff(cdf.fractions) > 0) and cdf.fractions[-1] == 1.0
    assert cdf.at(max(counts)) == 1.0


def small_dataset(n):
    X = np.stack([np.arange(n) % 3, 3 + np.arange(n) % 2], axis=1)
    return EncodedDataset(X, np.arange(n) % 2, [(0, 3), (3, 5)])


def test_split_sizes_and_determinism():
    ds = small_dataset(10)
    parts = split(ds, (0.8, 0.1, 0.1), seed=4)
    assert [len(p) for p in parts] == [8, 1, 1]
    again = split(ds, (0.8, 0.1, 0.1), seed=4)
    for a, b in zip(parts, again):
        np.testing.assert_array_equal(a.X, b.X)


@given(st.integers(3, 400), st.integers(0, 2**31))
def test_split_is_a_partition(n, seed):
    ds = EncodedDataset(np.arange(n)[:, None] * np.ones((1, 2), int), np.zeros(n, int))
    parts = split(ds, (0.7, 0.2, 0.1), seed=seed)
    joined = np.sort(np.concatenate([p.X[:, 0] for p in parts]))
    np.testing.assert_array_equal(joined, np.arange(n))
    assert all(len(p) > 0 for p in parts)


def test_split_rejects_bad_ratios():
    with pytest.raises(DataError):
        split(small_dataset(10), (0.5, 0.2, 0.2))


def test_dataset_binary_roundtrip(tmp_path):
    ds = small_dataset(25)
    save_dataset(ds, tmp_path / "d.cl4d")
    raw = (tmp_path / "d.cl4d").read_bytes()
    assert raw[:4] == b"CL4D" and len(raw) == 16 + 25 * (2 * 4 + 1)
    back = load_dataset(tmp_path / "d.cl4d", ds.field_ranges)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)


def test_load_dataset_rejects_foreign_file(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(DataError):
        load_dataset(tmp_path / "x")


def test_encoded_dataset_validates_ranges():
    with pytest.raises(DataError):
        EncodedDataset(np.array([[0, 1]]), np.array([1]), [(0, 1), (2, 3)])
    with pytest.raises(DataError):
        EncodedDataset(np.array([[0, 2]]), np.array([2]), [(0, 1), (2, 3)])


# -- synthetic generator ----------------------------------------------------

def test_zipf_zero_is_uniform_chi_square():
    sd = synth_generate(SynthConfig(num_fields=2, features_per_field=20, zipf_exponent=0.0,
                                    num_instances=100_000, seed=3))
    for f, (lo, hi) in enumerate(sd.field_ranges):
        counts = np.bincount(sd.data.X[:, f] - lo, minlength=hi - lo)
        assert stats.chisquare(counts).pvalue > 0.01


def test_zipf_head_mass():
    # closed-form mass of the top 20% of 1000 ranks under s=1.2
    pmf = zipf_pmf(1000, 1.2)
    assert pmf[:200].sum() > 0.6
    sd = synth_generate(SynthConfig(num_fields=2, features_per_field=1000, num_instances=100_000, seed=1))
    counts = np.sort(np.bincount(sd.data.X[:, 0], minlength=1000))[::-1]
    assert counts[:200].sum() / counts.sum() > 0.6


def test_infinite_noise_is_a_coin_flip():
    sd = synth_generate(SynthConfig(weight_scale=0.0, noise=np.inf, num_instances=100_000, seed=5))
    assert abs(sd.data.y.mean() - 0.5) < 0.01


def test_synth_logits_match_pairwise_sum():
    sd = synth_generate(SynthConfig(num_fields=4, features_per_field=7, num_instances=50, seed=2))
    K = 7
    for i in range(5):
        U = [sd.factors[f, sd.data.X[i, f] - f * K] for f in range(4)]
        brute = sum(U[a] @ U[b] for a in range(4) for b in range(a + 1, 4))
        assert abs(brute - sd.logits[i]) < 1e-10


def test_synth_deterministic_and_seed_sensitive():
    a = synth_generate(SynthConfig(num_instances=500, seed=9))
    b = synth_generate(SynthConfig(num_instances=500, seed=9))
    c = synth_generate(SynthConfig(num_instances=500, seed=10))
    np.testing.assert_array_equal(a.data.X, b.data.X)
    assert not np.array_equal(a.data.X, c.data.X)


def test_labeled_seed_stable():
    assert labeled_seed(0, "shuffle", 1) == labeled_seed(0, "shuffle", 1)
    assert labeled_seed(0, "shuffle", 1) != labeled_seed(0, "shuffle", 2)
    assert 0 <= labeled_seed("x") < 2**63
