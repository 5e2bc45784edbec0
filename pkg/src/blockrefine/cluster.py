"""Clustering battery: mini-batch k-means, ACC, NMI/AMI/ARI, SIL, DBS."""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, LengthMismatch, SingleCluster, TooFewRows
from .numerics import RngStream, l2_normalize_rows


@dataclass
class KmeansConfig:
    k: int = 8
    batch_size: int = 256
    iterations: int = 50
    restarts: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")


@dataclass
class Clustering:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    restart: int = 0


def _init_centroids(X, k, rng):
    uniq = np.unique(X, axis=0)
    if len(uniq) >= k:
        # sort for a platform-independent order before sampling
        return uniq[np.sort(rng.choice(len(uniq), size=k, replace=False))].copy()
    return X[rng.choice(len(X), size=k, replace=False)].copy()


def _single_run(X, cfg, rng):
    n = len(X)
    C = _init_centroids(X, cfg.k, rng)
    counts = np.ones(cfg.k)
    bs = min(cfg.batch_size, n)
    for _ in range(cfg.iterations):
        idx = rng.choice(n, size=bs, replace=False)
        batch = np.ascontiguousarray(X[idx])
        lab, _ = _kernels.assign_nearest(batch, C)
        _kernels.minibatch_update(C, counts, batch, lab)
    lab, d2 = _kernels.assign_nearest(X, C)
    return Clustering(lab, C, float(d2.sum()))


def minibatch_kmeans(X, cfg):
    """Best-of-``restarts`` mini-batch k-means (lowest full-data inertia wins).

    Restart ``r`` draws from its own split stream, so runs with more restarts
    contain the runs with fewer restarts.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if len(X) < cfg.k:
        raise TooFewRows(f"{len(X)} rows for k={cfg.k}")
    root = RngStream(cfg.seed)
    best = None
    for r in range(cfg.restarts):
        run = _single_run(X, cfg, root.split(r))
        if best is None or run.inertia < best.inertia:
            run.restart = r
            best = run
    return best


def _check(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise LengthMismatch(f"label vectors differ in length: {a.shape} vs {b.shape}")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    return ai.astype(np.int64).ravel(), bi.astype(np.int64).ravel()


def contingency_matrix(a, b):
    ai, bi = _check(a, b)
    return _kernels.contingency(ai, bi, int(ai.max()) + 1, int(bi.max()) + 1)


def assignment(weights):
    """Maximum-weight one-to-one assignment on a (possibly rectangular) matrix.

    Returns ``(rows, cols)`` of the matched pairs within the original shape.
    """
    w = np.asarray(weights, dtype=np.float64)
    r, c = w.shape
    n = max(r, c)
    sq = np.zeros((n, n))
    sq[:r, :c] = w
    cost = sq.max() - sq
    col = _kernels.hungarian(np.ascontiguousarray(cost))
    rows = np.arange(n)
    keep = (rows < r) & (col < c)
    return rows[keep], col[keep]


def cluster_accuracy(pred, truth):
    """Percentage of points matched under the best one-to-one cluster/class map."""
    cont = contingency_matrix(pred, truth)
    rows, cols = assignment(cont)
    return float(100.0 * cont[rows, cols].sum() / len(np.asarray(pred)))


def _oriented(a, b):
    """Contingency matrix in an order-independent orientation.

    ``cont(b, a)`` is ``cont(a, b).T``; picking one of the two by a fixed rule
    makes every score below exactly symmetric in its arguments.
    """
    cont = contingency_matrix(a, b)
    t = cont.T
    if (t.shape, t.ravel().tolist()) < (cont.shape, cont.ravel().tolist()):
        cont = np.ascontiguousarray(t)
    return cont


def _same_partition(cont):
    nz = cont > 0
    return bool(np.all(nz.sum(0) == 1) and np.all(nz.sum(1) == 1))


def _entropy(counts):
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def _mutual_info(cont):
    n = cont.sum()
    a = cont.sum(1)
    b = cont.sum(0)
    nz = cont > 0
    nij = cont[nz].astype(np.float64)
    outer = np.outer(a, b)[nz].astype(np.float64)
    return float(np.sum(nij / n * (np.log(nij) + math.log(n) - np.log(outer))))


def nmi(a, b):
    """Mutual information over the arithmetic mean of the two entropies."""
    cont = _oriented(a, b)
    if _same_partition(cont):
        return 1.0
    ha, hb = _entropy(cont.sum(1)), _entropy(cont.sum(0))
    mi = _mutual_info(cont)
    return float(min(max(mi / (0.5 * (ha + hb)), 0.0), 1.0))


def ami(a, b):
    """Chance-adjusted MI with the exact hypergeometric expectation."""
    cont = _oriented(a, b)
    ra, rb = cont.sum(1), cont.sum(0)
    if _same_partition(cont):
        return 1.0
    mi = _mutual_info(cont)
    emi = _kernels.expected_mutual_info(ra.astype(np.int64), rb.astype(np.int64), int(cont.sum()))
    denom = 0.5 * (_entropy(ra) + _entropy(rb)) - emi
    eps = np.finfo(np.float64).eps
    denom = min(denom, -eps) if denom < 0 else max(denom, eps)
    return float((mi - emi) / denom)


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(a, b):
    cont = _oriented(a, b)
    if _same_partition(cont):
        return 1.0
    cont = cont.astype(np.float64)
    n = cont.sum()
    index = _comb2(cont).sum()
    sa = _comb2(cont.sum(1)).sum()
    sb = _comb2(cont.sum(0)).sum()
    expected = sa * sb / _comb2(n)
    max_index = 0.5 * (sa + sb)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def _cluster_ids(labels):
    u, inv = np.unique(np.asarray(labels), return_inverse=True)
    if len(u) < 2:
        raise SingleCluster("need at least two clusters")
    return inv.astype(np.int64).ravel(), len(u)


def silhouette(X, labels):
    """Mean silhouette coefficient x 100 (range -100..100). Singletons score 0."""
    lab, k = _cluster_ids(labels)
    X = np.ascontiguousarray(X, dtype=np.float64)
    sums = _kernels.cluster_distance_sums(X, lab, k)
    sizes = np.bincount(lab, minlength=k).astype(np.float64)
    n = len(X)
    own = sizes[lab]
    a = sums[np.arange(n), lab] / np.maximum(own - 1, 1)
    other = sums / sizes[None, :]
    other[np.arange(n), lab] = np.inf
    b = other.min(1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(100.0 * s.mean())


def davies_bouldin(X, labels):
    """Mean over clusters of the worst (s_i + s_j) / d_ij ratio; lower is better."""
    lab, k = _cluster_ids(labels)
    X = np.asarray(X, dtype=np.float64)
    cent = np.stack([X[lab == c].mean(0) for c in range(k)])
    scatter = np.array([np.linalg.norm(X[lab == c] - cent[c], axis=1).mean() for c in range(k)])
    d = np.linalg.norm(cent[:, None, :] - cent[None, :, :], axis=-1)
    num = scatter[:, None] + scatter[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(d > 0, num / np.where(d > 0, d, 1.0), np.where(num > 0, np.inf, 0.0))
    np.fill_diagonal(r, -np.inf)
    return float(r.max(1).mean())


def block_cluster_similarity(per_block_labels):
    """100 * NMI between the cluster labels of consecutive blocks."""
    if len(per_block_labels) < 2:
        raise LengthMismatch("need labels from at least two blocks")
    n = len(per_block_labels[0])
    if any(len(y) != n for y in per_block_labels):
        raise LengthMismatch("all blocks must label the same points")
    return np.array([100.0 * nmi(a, b) for a, b in zip(per_block_labels[:-1], per_block_labels[1:])])


def cluster_report(features, truth, cfg):
    """ACC/NMI/AMI/ARI of k-means labels and SIL/DBS of the true classes.

    Features are L2-normalized first. Scores are percentages except DBS.
    """
    X = l2_normalize_rows(features)
    km = minibatch_kmeans(X, cfg)
    return {
        "ACC": cluster_accuracy(km.labels, truth),
        "NMI": 100.0 * nmi(km.labels, truth),
        "AMI": 100.0 * ami(km.labels, truth),
        "ARI": 100.0 * ari(km.labels, truth),
        "SIL": silhouette(X, truth),
        "DBS": davies_bouldin(X, truth),
        "inertia": km.inertia,
    }
