"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The active implementation is chosen once at import time. Set
``MRF_DISABLE_NUMBA=1`` to force the numpy path (useful for debugging and for
checking that both paths agree). ``MRF_THREADS`` caps numba's thread pool.

Both variants of every kernel are importable under ``<name>_nb`` and
``<name>_np`` so tests and the benchmark can compare them directly.
"""
import math
import os

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_DISABLED = os.environ.get("MRF_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
USE_NUMBA = HAVE_NUMBA and not _DISABLED

if HAVE_NUMBA and os.environ.get("MRF_THREADS"):
    try:
        numba.set_num_threads(max(1, min(int(os.environ["MRF_THREADS"]), numba.config.NUMBA_NUM_THREADS)))
    except ValueError:
        pass


def _jit(fn):
    if HAVE_NUMBA:
        return njit(cache=True, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# top-k by similarity, ties broken by lower column index


def topk_rows_np(sims, k):
    order = np.argsort(-sims, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


@_jit
def topk_rows_nb(sims, k):
    n, m = sims.shape
    out = np.empty((n, k), dtype=np.int64)
    vals = np.empty(k, dtype=np.float64)
    for r in range(n):
        filled = 0
        for c in range(m):
            v = sims[r, c]
            if filled == k and not v > vals[k - 1]:
                continue
            # insertion point: after every value >= v (keeps older index first on ties)
            pos = filled if filled < k else k - 1
            while pos > 0 and vals[pos - 1] < v:
                pos -= 1
            last = filled if filled < k else k - 1
            for s in range(last, pos, -1):
                vals[s] = vals[s - 1]
                out[r, s] = out[r, s - 1]
            vals[pos] = v
            out[r, pos] = c
            if filled < k:
                filled += 1
    return out


# ---------------------------------------------------------------------------
# nearest-centroid assignment


def assign_nearest_np(X, C):
    d2 = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    np.maximum(d2, 0.0, out=d2)
    lab = np.argmin(d2, axis=1)
    return lab.astype(np.int64), d2[np.arange(len(X)), lab]


@_jit
def assign_nearest_nb(X, C):
    n, d = X.shape
    k = C.shape[0]
    lab = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    for i in range(n):
        bi = 0
        bv = np.inf
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = X[i, t] - C[j, t]
                s += diff * diff
            if s < bv:
                bv = s
                bi = j
        lab[i] = bi
        best[i] = bv
    return lab, best


# ---------------------------------------------------------------------------
# mini-batch k-means centroid update (per-centroid rate 1/count)


def minibatch_update_np(C, counts, batch, lab):
    # Sequential semantics: the j-th point routed to centroid c uses rate
    # 1/(counts[c]+j). The closed form of that recursion is a running mean.
    for c in np.unique(lab):
        pts = batch[lab == c]
        m = len(pts)
        n0 = counts[c]
        C[c] = (n0 * C[c] + pts.sum(0)) / (n0 + m) if n0 + m > 0 else C[c]
        counts[c] = n0 + m


@_jit
def minibatch_update_nb(C, counts, batch, lab):
    d = C.shape[1]
    for i in range(batch.shape[0]):
        c = lab[i]
        counts[c] += 1
        eta = 1.0 / counts[c]
        for t in range(d):
            C[c, t] += eta * (batch[i, t] - C[c, t])


# ---------------------------------------------------------------------------
# contingency table


def contingency_np(a, b, na, nb):
    out = np.zeros((na, nb), dtype=np.int64)
    np.add.at(out, (a, b), 1)
    return out


@_jit
def contingency_nb(a, b, na, nb):
    out = np.zeros((na, nb), dtype=np.int64)
    for i in range(a.shape[0]):
        out[a[i], b[i]] += 1
    return out


# ---------------------------------------------------------------------------
# expected mutual information under the hypergeometric model


def expected_mutual_info_np(a, b, n):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    from scipy.special import gammaln

    N = float(n)
    emi = 0.0
    gln_a = gammaln(a + 1.0)
    gln_b = gammaln(b + 1.0)
    gln_na = gammaln(n - a + 1.0)
    gln_nb = gammaln(n - b + 1.0)
    gln_n = gammaln(n + 1.0)
    for i in range(len(a)):
        for j in range(len(b)):
            lo = max(1, a[i] + b[j] - n)
            hi = min(a[i], b[j])
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.float64)
            term1 = nij / N
            term2 = np.log(N * nij) - math.log(float(a[i]) * float(b[j]))
            lg = (gln_a[i] + gln_b[j] + gln_na[i] + gln_nb[j] - gln_n
                  - gammaln(nij + 1.0) - gammaln(a[i] - nij + 1.0)
                  - gammaln(b[j] - nij + 1.0) - gammaln(n - a[i] - b[j] + nij + 1.0))
            emi += float(np.sum(term1 * term2 * np.exp(lg)))
    return emi


@_jit
def expected_mutual_info_nb(a, b, n):
    N = float(n)
    gln_n = math.lgamma(n + 1.0)
    emi = 0.0
    for i in range(a.shape[0]):
        ai = a[i]
        for j in range(b.shape[0]):
            bj = b[j]
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            base = (math.lgamma(ai + 1.0) + math.lgamma(bj + 1.0) + math.lgamma(n - ai + 1.0)
                    + math.lgamma(n - bj + 1.0) - gln_n)
            lab = math.log(float(ai) * float(bj))
            for nij in range(lo, hi + 1):
                lg = (base - math.lgamma(nij + 1.0) - math.lgamma(ai - nij + 1.0)
                      - math.lgamma(bj - nij + 1.0) - math.lgamma(n - ai - bj + nij + 1.0))
                emi += (nij / N) * (math.log(N * nij) - lab) * math.exp(lg)
    return emi


# ---------------------------------------------------------------------------
# per-point summed distance to every cluster (silhouette)


def cluster_distance_sums_np(X, lab, k, chunk=1024):
    n = X.shape[0]
    onehot = np.zeros((n, k))
    onehot[np.arange(n), lab] = 1.0
    sq = (X * X).sum(1)
    out = np.empty((n, k))
    for s in range(0, n, chunk):
        xs = X[s:s + chunk]
        d2 = sq[s:s + chunk, None] - 2.0 * xs @ X.T + sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        out[s:s + chunk] = np.sqrt(d2) @ onehot
    return out


@_jit
def cluster_distance_sums_nb(X, lab, k):
    n, d = X.shape
    out = np.zeros((n, k))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for t in range(d):
                diff = X[i, t] - X[j, t]
                s += diff * diff
            s = math.sqrt(s)
            out[i, lab[j]] += s
            out[j, lab[i]] += s
    return out


# ---------------------------------------------------------------------------
# rectangular-free square assignment (minimisation), O(n^3) shortest augmenting path


def _hungarian(cost):
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[p[j] - 1] = j - 1
    return col_of_row


hungarian_np = _hungarian
hungarian_nb = _jit(_hungarian)


if USE_NUMBA:
    topk_rows = topk_rows_nb
    assign_nearest = assign_nearest_nb
    minibatch_update = minibatch_update_nb
    contingency = contingency_nb
    expected_mutual_info = expected_mutual_info_nb
    cluster_distance_sums = cluster_distance_sums_nb
    hungarian = hungarian_nb
else:
    topk_rows = topk_rows_np
    assign_nearest = assign_nearest_np
    minibatch_update = minibatch_update_np
    contingency = contingency_np
    expected_mutual_info = expected_mutual_info_np
    cluster_distance_sums = cluster_distance_sums_np
    hungarian = hungarian_np
