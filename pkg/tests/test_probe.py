import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blockrefine.encoder import EncoderConfig, init_encoder, zero_residual_branches
from blockrefine.errors import ClassTooSmall, EmptyTest, MissingClass, TooFewNeighbors
from blockrefine.numerics import RngStream, finite_diff_grad, grad_close
from blockrefine.probe import (KnnConfig, ProbeDataset, _probe_loss_grad, knn_predict, knn_probe,
                               linear_probe, low_shot_split, per_block_knn)


def _two_blobs(rng, n=40, noise=0.1, d=5):
    # orthogonal centers, so the classes are far apart in cosine terms too
    c = np.eye(2, d)
    x = np.concatenate([ci + noise * rng.normal(size=(n, d)) for ci in c])
    y = np.repeat([0, 1], n)
    return x, y


def test_knn_identical_point(rng):
    x = rng.normal(size=(10, 4))
    y = np.arange(10) % 3
    pred = knn_predict(x, y, x[[4]], KnnConfig(k=1))
    assert pred[0] == y[4]


def test_knn_separated_blobs(rng):
    x, y = _two_blobs(rng)
    xt, yt = _two_blobs(rng)
    assert knn_probe(ProbeDataset(x, y, xt, yt), KnnConfig(k=10)) == 1.0


def test_knn_single_class_train(rng):
    x = rng.normal(size=(12, 3))
    pred = knn_predict(x, np.full(12, 2), rng.normal(size=(5, 3)), KnnConfig(k=4), n_classes=4)
    np.testing.assert_array_equal(pred, 2)


def test_knn_too_few(rng):
    with pytest.raises(TooFewNeighbors):
        knn_predict(rng.normal(size=(3, 2)), np.zeros(3, int), rng.normal(size=(1, 2)), KnnConfig(k=5))


def test_knn_matches_bruteforce(rng):
    x, y = rng.normal(size=(60, 6)), rng.integers(0, 4, 60)
    q = rng.normal(size=(15, 6))
    cfg = KnnConfig(k=7, temperature=0.1)
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    want = []
    for row in qn:
        s = xn @ row
        nb = sorted(range(60), key=lambda j: (-s[j], j))[:7]
        votes = np.zeros(4)
        for j in nb:
            votes[y[j]] += np.exp(s[j] / 0.1)
        want.append(int(np.argmax(votes)))
    np.testing.assert_array_equal(knn_predict(x, y, q, cfg, n_classes=4), want)


@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_knn_scale_invariant(scale, seed):
    rng = np.random.default_rng(seed)
    x, y, q = rng.normal(size=(30, 4)), rng.integers(0, 3, 30), rng.normal(size=(8, 4))
    cfg = KnnConfig(k=5)
    np.testing.assert_array_equal(knn_predict(x, y, q, cfg), knn_predict(scale * x, y, scale * q, cfg))


def test_knn_k1_ignores_temperature(rng):
    x, y, q = rng.normal(size=(30, 4)), rng.integers(0, 3, 30), rng.normal(size=(10, 4))
    a = knn_predict(x, y, q, KnnConfig(k=1, temperature=0.01))
    b = knn_predict(x, y, q, KnnConfig(k=1, temperature=5.0))
    np.testing.assert_array_equal(a, b)


def test_linear_separable_1d(rng):
    x = np.concatenate([rng.uniform(-2, -0.1, 30), rng.uniform(0.1, 2, 30)])[:, None]
    y = (x[:, 0] > 0).astype(int)
    xt = np.array([[-1.5], [-0.2], [0.2], [1.5]])
    assert linear_probe(ProbeDataset(x, y, xt, np.array([0, 0, 1, 1])), epochs=300) == 1.0


def test_linear_zero_epochs(rng):
    x, y = rng.normal(size=(20, 3)), np.arange(20) % 3
    yt = rng.integers(0, 3, 50)
    acc = linear_probe(ProbeDataset(x, y, rng.normal(size=(50, 3)), yt), epochs=0)
    assert acc == pytest.approx(np.mean(yt == 0))


def test_linear_missing_class(rng):
    with pytest.raises(MissingClass):
        linear_probe(ProbeDataset(rng.normal(size=(4, 2)), np.array([0, 0, 2, 2]),
                                  rng.normal(size=(2, 2)), np.array([1, 1])))


def test_probe_gradient(rng):
    x = rng.normal(size=(12, 4))
    onehot = np.eye(3)[rng.integers(0, 3, 12)]
    W, b = 0.1 * rng.normal(size=(4, 3)), 0.1 * rng.normal(size=3)
    _, gW, gb = _probe_loss_grad(W, b, x, onehot, 1e-2)
    assert grad_close(gW, finite_diff_grad(lambda w: _probe_loss_grad(w, b, x, onehot, 1e-2)[0], W))
    assert grad_close(gb, finite_diff_grad(lambda v: _probe_loss_grad(W, v, x, onehot, 1e-2)[0], b))


def test_linear_loss_nonincreasing(rng):
    x, y = rng.normal(size=(40, 5)), rng.integers(0, 3, 40)
    _, hist = linear_probe(ProbeDataset(x, y, x, y), epochs=50, lr=1e-3, return_history=True)
    assert np.all(np.diff(hist) <= 1e-15)


def test_low_shot_counts(rng):
    f, y = rng.normal(size=(30, 2)), np.repeat([0, 1, 2], 10)
    ds = low_shot_split(f, y, 1, seed=0)
    assert len(ds.train_y) == 3 and len(ds.test_y) == 27
    assert sorted(ds.train_y.tolist()) == [0, 1, 2]


def test_low_shot_errors(rng):
    f, y = rng.normal(size=(30, 2)), np.repeat([0, 1, 2], 10)
    with pytest.raises(EmptyTest):
        low_shot_split(f, y, 10, seed=0)
    with pytest.raises(ClassTooSmall):
        low_shot_split(f, y, 11, seed=0)


def test_low_shot_seeds_differ():
    f = np.arange(100, dtype=float)[:, None]
    y = np.repeat(np.arange(10), 10)
    a = low_shot_split(f, y, 2, seed=0).train_x
    b = low_shot_split(f, y, 2, seed=1).train_x
    assert not np.array_equal(a, b)


@given(st.integers(1, 4), st.integers(0, 1000))
def test_low_shot_partition(n, seed):
    f = np.arange(60, dtype=float)[:, None]
    y = np.repeat(np.arange(6), 10)
    ds = low_shot_split(f, y, n, seed)
    tr, te = set(ds.train_x[:, 0]), set(ds.test_x[:, 0])
    assert not tr & te and tr | te == set(range(60))


def _enc(depth):
    return EncoderConfig(depth=depth, width=8, layout="tokens", seq_len=4, token_dim=3)


def test_per_block_identity(rng):
    cfg = _enc(3)
    params = zero_residual_branches(init_encoder(cfg, RngStream(0)))
    params["embed.W"] = rng.normal(size=(3, 8))
    x, y = rng.normal(size=(40, 12)), rng.integers(0, 2, 40)
    acc = per_block_knn(params, cfg, x[:30], y[:30], x[30:], y[30:], KnnConfig(k=3))
    assert len(set(acc.tolist())) == 1


def test_per_block_single_block(rng):
    from blockrefine.encoder import encode
    cfg = _enc(1)
    params = init_encoder(cfg, RngStream(0))
    x, y = rng.normal(size=(40, 12)), rng.integers(0, 2, 40)
    acc = per_block_knn(params, cfg, x[:30], y[:30], x[30:], y[30:], KnnConfig(k=3))
    f = encode(params, cfg, x)
    assert acc.tolist() == [knn_probe(ProbeDataset(f[:30], y[:30], f[30:], y[30:]), KnnConfig(k=3))]
