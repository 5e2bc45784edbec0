"""Frozen-feature evaluation: soft k-NN, logistic-regression probe, low-shot splits."""
from dataclasses import dataclass

import numpy as np

from .encoder import encode_batched
from .errors import ClassTooSmall, EmptyTest, MissingClass, TooFewNeighbors
from .layers import softmax
from .numerics import as_rng


@dataclass
class ProbeDataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass
class KnnConfig:
    k: int = 10
    temperature: float = 0.07


def _unit(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)


def knn_predict(train_x, train_y, test_x, cfg=KnnConfig(), n_classes=None, chunk=1024):
    """Soft k-NN: class score = sum of exp(cos / temperature) over the k neighbors."""
    if len(train_x) < cfg.k:
        raise TooFewNeighbors(f"train set has {len(train_x)} rows, k={cfg.k}")
    tr = _unit(train_x)
    te = _unit(test_x)
    ty = np.asarray(train_y, dtype=np.int64)
    c = int(ty.max()) + 1 if n_classes is None else n_classes
    preds = np.empty(len(te), dtype=np.int64)
    for s in range(0, len(te), chunk):
        sims = te[s:s + chunk] @ tr.T
        # stable sort: equal similarities keep the lower train index
        nb = np.argsort(-sims, axis=1, kind="stable")[:, :cfg.k]
        top = np.take_along_axis(sims, nb, axis=1)
        # shift by the row max before exponentiating; argmax is unaffected
        w = np.exp((top - top[:, :1]) / cfg.temperature)
        scores = np.zeros((len(nb), c))
        np.add.at(scores, (np.arange(len(nb))[:, None], ty[nb]), w)
        preds[s:s + chunk] = np.argmax(scores, axis=1)
    return preds


def knn_probe(ds, cfg=KnnConfig()):
    pred = knn_predict(ds.train_x, ds.train_y, ds.test_x, cfg)
    return float(np.mean(pred == np.asarray(ds.test_y)))


def _probe_loss_grad(W, b, x, onehot, wd):
    p = softmax(x @ W + b)
    n = len(x)
    loss = -np.sum(onehot * np.log(np.maximum(p, 1e-300))) / n + 0.5 * wd * np.sum(W * W)
    d = (p - onehot) / n
    return loss, x.T @ d + wd * W, d.sum(0)


def linear_probe(ds, epochs=200, lr=0.5, weight_decay=1e-4, n_classes=None, return_history=False):
    """Multinomial logistic regression by full-batch gradient descent.

    Weights start at zero, so the result is deterministic. Returns test
    accuracy (and the training-loss history when requested).
    """
    ty = np.asarray(ds.train_y, dtype=np.int64)
    c = int(max(ty.max(), np.max(ds.test_y) if len(ds.test_y) else 0)) + 1 if n_classes is None else n_classes
    missing = set(range(c)) - set(np.unique(ty).tolist())
    if missing:
        raise MissingClass(f"classes without train examples: {sorted(missing)}")
    x = np.asarray(ds.train_x, dtype=np.float64)
    mu = x.mean(0)
    sd = x.std(0) + 1e-8
    xs = (x - mu) / sd
    onehot = np.eye(c)[ty]
    W = np.zeros((x.shape[1], c))
    b = np.zeros(c)
    hist = []
    for _ in range(epochs):
        loss, gW, gb = _probe_loss_grad(W, b, xs, onehot, weight_decay)
        hist.append(loss)
        W -= lr * gW
        b -= lr * gb
    logits = ((np.asarray(ds.test_x) - mu) / sd) @ W + b
    acc = float(np.mean(np.argmax(logits, axis=1) == np.asarray(ds.test_y)))
    return (acc, hist) if return_history else acc


def low_shot_split(features, labels, n_per_class, seed):
    """``n_per_class`` train rows per class without replacement; the rest is test."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = as_rng(seed)
    train = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < n_per_class:
            raise ClassTooSmall(f"class {c} has {len(idx)} rows, need {n_per_class}")
        train.append(rng.choice(idx, size=n_per_class, replace=False))
    train = np.sort(np.concatenate(train))
    test = np.setdiff1d(np.arange(len(labels)), train)
    if len(test) == 0:
        raise EmptyTest("no rows left for the test split")
    f = np.asarray(features)
    return ProbeDataset(f[train], labels[train], f[test], labels[test])


def per_block_knn(eparams, enc_cfg, train_x, train_y, test_x, test_y, cfg=KnnConfig()):
    """k-NN accuracy of the class-summary features after every block."""
    tr = encode_batched(eparams, enc_cfg, train_x)
    te = encode_batched(eparams, enc_cfg, test_x)
    return np.array([knn_probe(ProbeDataset(a, train_y, b, test_y), cfg) for a, b in zip(tr, te)])
