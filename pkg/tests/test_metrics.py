import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cl4ctr import numcore as nc
from cl4ctr.data import EncodedDataset
from cl4ctr.metrics import (UndefinedAUC, auc, average_ranks, evaluate_probas, frequency_bucket_logloss,
                            instance_frequency, logloss, representation_stats)
from cl4ctr.models import bce_loss


def brute_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def test_auc_hand_cases():
    assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(UndefinedAUC):
        auc([0.1, 0.2], [1, 1])


def test_auc_matches_brute_force_with_ties(rng):
    for _ in range(50):
        s = rng.integers(0, 30, 200) / 10.0
        y = rng.integers(0, 2, 200)
        assert abs(auc(s, y) - brute_auc(s, y)) <= 1e-12


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_property(pairs):
    s, y = (np.array(v) for v in zip(*pairs))
    if y.min() == y.max():
        return
    assert abs(auc(s, y) - brute_auc(s, y)) <= 1e-12
    assert abs(auc(-s, y) - (1 - brute_auc(s, y))) <= 1e-12


def test_average_ranks_ties():
    np.testing.assert_array_equal(average_ranks([3, 1, 3, 2]), [3.5, 1.0, 3.5, 2.0])


def test_logloss_cases(rng):
    assert abs(logloss(np.full(10, 0.5), rng.integers(0, 2, 10)) - math.log(2)) < 1e-12
    assert logloss([1.0, 0.0], [1, 0]) <= 1e-14
    z = rng.normal(size=50)
    y = rng.integers(0, 2, 50)
    p = 1 / (1 + np.exp(-z))
    assert abs(logloss(p, y) - bce_loss(nc.Tensor(z), y).item()) < 1e-12


def test_evaluate_single_class_marks_auc_undefined():
    r = evaluate_probas(np.array([0.2, 0.7]), np.array([0, 0]))
    assert r.auc is None and r.to_dict()["auc"] == "undefined"
    assert r.logloss > 0


def _toy():
    X = np.array([[0, 3], [1, 3], [2, 4], [0, 4], [0, 3], [1, 4]])
    y = np.array([1, 0, 1, 0, 1, 1])
    return EncodedDataset(X, y, [(0, 3), (3, 5)])


def test_single_bucket_equals_global_logloss():
    ds = _toy()
    p = np.linspace(0.2, 0.8, 6)
    rep = frequency_bucket_logloss(p, ds, ds.feature_counts(5), [-math.inf, math.inf])
    assert len(rep.buckets) == 1 and abs(rep.buckets[0].logloss - logloss(p, ds.y)) < 1e-15


def test_self_baseline_has_zero_delta_and_partition():
    ds = _toy()
    p = np.linspace(0.2, 0.8, 6)
    rep = frequency_bucket_logloss(p, ds, ds.feature_counts(5), (2, 3, math.inf), baseline=p)
    assert all(b.delta_logloss == 0.0 for b in rep.buckets)
    assert sum(b.count for b in rep.buckets) == len(ds)


def test_instance_frequency_statistics():
    counts = np.array([5, 1, 2, 7, 3])
    X = np.array([[0, 3], [1, 4]])
    np.testing.assert_array_equal(instance_frequency(X, counts), [5, 1])
    np.testing.assert_array_equal(instance_frequency(X, counts, "mean"), [6, 2])
    with pytest.raises(ValueError):
        instance_frequency(X, counts, "median")


def test_bucket_report_outputs(tmp_path):
    ds = _toy()
    rep = frequency_bucket_logloss(np.full(6, 0.5), ds, ds.feature_counts(5), (1, 3, math.inf))
    rep.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "bucket_low,bucket_high,count,logloss,delta_logloss"
    assert '"inf"' in rep.to_json()
    with pytest.raises(ValueError):
        frequency_bucket_logloss(np.full(6, 0.5), ds, ds.feature_counts(5), (3, 1))


def test_representation_stats_hand_case():
    W = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 1.0]])
    X = np.array([[0, 2], [1, 3]])
    st_ = representation_stats(W, X, [(0, 2), (2, 4)])
    # same-field pairs: (0,1) dist sqrt2, (2,3) dist 2 -> mean over ordered pairs
    assert abs(st_["intra_field_distance"] - (math.sqrt(2) + 2) / 2) < 1e-12
    cos = [1 / math.sqrt(2), 1 / math.sqrt(2), 1 / math.sqrt(2), 1 / math.sqrt(2)]
    assert abs(st_["cross_field_abs_cos"] - np.mean(cos)) < 1e-12
