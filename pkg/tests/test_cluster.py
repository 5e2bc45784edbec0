import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn import metrics as skm

from blockrefine import _kernels
from blockrefine.cluster import (KmeansConfig, ami, ari, assignment, block_cluster_similarity,
                                 cluster_accuracy, cluster_report, davies_bouldin, minibatch_kmeans, nmi,
                                 silhouette)
from blockrefine.errors import ConfigError, LengthMismatch, SingleCluster, TooFewRows

labels = st.lists(st.integers(0, 4), min_size=2, max_size=40)


def test_config_bounds():
    with pytest.raises(ConfigError):
        KmeansConfig(k=1)
    with pytest.raises(ConfigError):
        KmeansConfig(k=2, restarts=0)


def test_kmeans_repeated_points():
    pts = np.eye(4)
    X = np.repeat(pts, 5, axis=0)
    res = minibatch_kmeans(X, KmeansConfig(k=4, batch_size=8, iterations=10, restarts=3))
    assert res.inertia == pytest.approx(0.0, abs=1e-24)
    for c in range(4):
        assert len(set(res.labels[c * 5:(c + 1) * 5])) == 1


def test_kmeans_two_blobs(rng):
    X = np.concatenate([rng.normal(0, 0.01, (50, 3)) + [1, 0, 0], rng.normal(0, 0.01, (50, 3)) + [0, 1, 0]])
    y = np.repeat([0, 1], 50)
    res = minibatch_kmeans(X, KmeansConfig(k=2, batch_size=32, iterations=20, restarts=10))
    assert ari(res.labels, y) == 1.0


def test_kmeans_more_restarts_never_worse(rng):
    X = rng.normal(size=(300, 4))
    one = minibatch_kmeans(X, KmeansConfig(k=6, batch_size=32, iterations=10, restarts=1, seed=3))
    many = minibatch_kmeans(X, KmeansConfig(k=6, batch_size=32, iterations=10, restarts=100, seed=3))
    assert many.inertia <= one.inertia


def test_kmeans_bitwise_reproducible(rng):
    X = rng.normal(size=(200, 5))
    cfg = KmeansConfig(k=5, batch_size=32, iterations=10, restarts=5, seed=9)
    a, b = minibatch_kmeans(X, cfg), minibatch_kmeans(X, cfg)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    assert a.inertia == b.inertia


def test_kmeans_invariants(rng):
    res = minibatch_kmeans(rng.normal(size=(50, 3)), KmeansConfig(k=4, restarts=2, iterations=5))
    assert res.labels.max() < 4 and res.inertia >= 0


def test_kmeans_too_few_rows():
    with pytest.raises(TooFewRows):
        minibatch_kmeans(np.ones((2, 3)), KmeansConfig(k=3))


def test_acc_examples():
    y = np.array([0, 1, 1, 2, 2, 0])
    assert cluster_accuracy(y, y) == 100.0
    assert cluster_accuracy((y + 1) % 3, y) == 100.0
    # every pred/truth pair shares at most one point, so the best map hits 3 of 6
    pred, truth = np.array([0, 0, 1, 1, 2, 2]), np.array([0, 1, 1, 2, 2, 0])
    assert cluster_accuracy(pred, truth) == _brute_acc(pred, truth) == 50.0


def test_acc_length_mismatch():
    with pytest.raises(LengthMismatch):
        cluster_accuracy([0, 1], [0, 1, 1])


def _brute_acc(pred, truth):
    cp, ct = np.unique(pred), np.unique(truth)
    n = max(len(cp), len(ct))
    best = 0
    for perm in itertools.permutations(range(n), len(cp)):
        hit = sum(np.sum((pred == a) & (truth == ct[j])) for a, j in zip(cp, perm) if j < len(ct))
        best = max(best, hit)
    return 100.0 * best / len(pred)


def test_acc_bruteforce(rng):
    for _ in range(30):
        n = int(rng.integers(5, 40))
        pred, truth = rng.integers(0, rng.integers(1, 7), n), rng.integers(0, rng.integers(1, 7), n)
        assert cluster_accuracy(pred, truth) == pytest.approx(_brute_acc(pred, truth), abs=1e-9)


@given(labels, st.permutations(range(5)), st.permutations(range(5)))
def test_acc_permutation_invariant(y, p1, p2):
    y = np.array(y)
    pred = np.roll(y, 1)
    base = cluster_accuracy(pred, y)
    assert cluster_accuracy(np.array(p1)[pred], np.array(p2)[y]) == pytest.approx(base, abs=1e-9)


def test_assignment_bruteforce(rng):
    for _ in range(100):
        r, c = (int(v) for v in rng.integers(1, 7, size=2))
        w = rng.integers(0, 20, size=(r, c)).astype(float)
        rows, cols = assignment(w)
        got = w[rows, cols].sum()
        if r <= c:
            best = max(sum(w[i, p[i]] for i in range(r)) for p in itertools.permutations(range(c), r))
        else:
            best = max(sum(w[p[j], j] for j in range(c)) for p in itertools.permutations(range(r), c))
        assert got == best


def test_hungarian_numpy_and_numba_agree(rng):
    for _ in range(20):
        cost = rng.random((6, 6))
        a = _kernels.hungarian_np(cost.copy())
        b = _kernels.hungarian_nb(cost.copy())
        assert cost[np.arange(6), a].sum() == pytest.approx(cost[np.arange(6), b].sum(), abs=1e-12)


def test_identical_partitions():
    y = np.array([0, 0, 1, 1, 2, 2, 2])
    assert nmi(y, y) == 1.0 and ami(y, y) == pytest.approx(1.0) and ari(y, y) == 1.0


def test_ari_constant_vs_split():
    assert ari([0, 0, 0, 0], [0, 0, 1, 1]) == 0.0


def test_nmi_both_constant():
    assert nmi([3, 3, 3], [1, 1, 1]) == 1.0


@given(labels)
def test_metrics_symmetric(a):
    a = np.array(a)
    b = np.roll(a, 3) ^ 1
    for f in (nmi, ami, ari):
        assert f(a, b) == f(b, a)


@given(labels)
def test_metrics_match_sklearn(a):
    a = np.array(a)
    b = (a * 7 + np.arange(len(a))) % 3
    assert nmi(a, b) == pytest.approx(skm.normalized_mutual_info_score(a, b), abs=1e-10)
    assert ami(a, b) == pytest.approx(skm.adjusted_mutual_info_score(a, b), abs=1e-9)
    assert ari(a, b) == pytest.approx(skm.adjusted_rand_score(a, b), abs=1e-10)


def test_refinement_ari_below_one(rng):
    coarse = np.repeat([0, 1], 20)
    fine = np.repeat([0, 1, 2, 3], 10)
    assert ari(fine, coarse) < 1.0


def test_null_means(rng):
    a_s, r_s = [], []
    for _ in range(100):
        a, b = rng.integers(0, 5, 200), rng.integers(0, 5, 200)
        a_s.append(ami(a, b))
        r_s.append(ari(a, b))
    assert abs(np.mean(a_s)) < 0.05 and abs(np.mean(r_s)) < 0.05


def test_silhouette_dbs_closed_form():
    eps, D = 1e-3, 10.0
    X = np.array([[0.0], [eps], [D], [D + eps]])
    y = [0, 0, 1, 1]
    # a = eps; b = mean distance to the other pair = D (exactly, by symmetry)
    assert silhouette(X, y) == pytest.approx(100 * (1 - eps / D), rel=1e-12)
    assert davies_bouldin(X, y) == pytest.approx(eps / D, rel=1e-12)


def test_silhouette_random_labels_near_zero(rng):
    vals = [silhouette(rng.normal(size=(200, 3)), rng.integers(0, 3, 200)) for _ in range(5)]
    assert all(abs(v) < 10 for v in vals)


def test_dbs_duplicated_points():
    X = np.repeat(np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]]), 4, axis=0)
    assert davies_bouldin(X, np.repeat([0, 1, 2], 4)) == 0.0


def test_silhouette_singletons_score_zero():
    X = np.array([[0.0], [0.1], [5.0]])
    s = silhouette(X, [0, 0, 1])
    full = skm.silhouette_score(X, [0, 0, 1])
    assert s == pytest.approx(100 * full, rel=1e-12)


def test_single_cluster_errors():
    with pytest.raises(SingleCluster):
        silhouette(np.ones((3, 2)), [0, 0, 0])
    with pytest.raises(SingleCluster):
        davies_bouldin(np.ones((3, 2)), [1, 1, 1])


def test_geometry_matches_sklearn(rng):
    X, y = rng.normal(size=(120, 4)), rng.integers(0, 4, 120)
    assert silhouette(X, y) == pytest.approx(100 * skm.silhouette_score(X, y), abs=1e-9)
    assert davies_bouldin(X, y) == pytest.approx(skm.davies_bouldin_score(X, y), rel=1e-10)


def test_block_similarity():
    y = np.array([0, 1, 1, 2, 0])
    np.testing.assert_array_equal(block_cluster_similarity([y, y, y]), [100.0, 100.0])
    z = np.array([1, 1, 0, 0, 1])
    assert block_cluster_similarity([y, z]).tolist() == [100 * nmi(y, z)]
    with pytest.raises(LengthMismatch):
        block_cluster_similarity([y])
    with pytest.raises(LengthMismatch):
        block_cluster_similarity([y, y[:3]])


def test_block_similarity_random_low(rng):
    ys = [rng.integers(0, 8, 20000) for _ in range(3)]
    assert np.all(block_cluster_similarity(ys) < 5)


def test_report_keys(rng):
    X = rng.normal(size=(60, 5))
    rep = cluster_report(X, rng.integers(0, 3, 60), KmeansConfig(k=3, restarts=2, iterations=5))
    assert {"ACC", "NMI", "AMI", "ARI", "SIL", "DBS"} <= set(rep)
    assert all(np.isfinite(v) for v in rep.values())
