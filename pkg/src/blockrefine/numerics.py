"""Dense numeric helpers used throughout the package.

Everything works on float64 row-major numpy arrays.
"""
import numpy as np

from .errors import DimMismatch, EmptyInput, NonFinite, ZeroRow

ZERO_ROW_TOL = 1e-12


def l2_normalize_rows(m):
    """Scale every row of ``m`` to unit Euclidean norm.

    Raises ZeroRow if any row has norm below 1e-12.
    """
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    if np.any(norms < ZERO_ROW_TOL):
        raise ZeroRow("cannot normalize a zero row")
    out = m / norms
    # a second pass removes the last-ulp drift so normalization is idempotent
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def l2_normalize_rows_backward(dout, x):
    """Gradient of ``sum(dout * normalize(x))`` with respect to raw rows ``x``."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    y = x / norms
    return (dout - y * (dout * y).sum(-1, keepdims=True)) / norms


def cosine_similarity(a, b):
    """Pairwise dot products of already-normalized rows: (n, d) x (m, d) -> (n, m)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    return a @ b.T


def log_sum_exp(v, axis=None):
    """Numerically stable ``log(sum(exp(v)))``.

    With ``axis=None`` the input is treated as a flat vector and a scalar is
    returned. Entries equal to ``-inf`` are allowed (they contribute nothing).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("log_sum_exp of an empty vector")
    if axis is None:
        v = v.ravel()
        m = v.max()
        if not np.isfinite(m):
            return float(m)
        return float(m + np.log(np.exp(v - m).sum()))
    m = v.max(axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    out = m_safe + np.log(np.exp(v - m_safe).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFinite(f"non-finite evaluation at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * eps)
    return grad


def grad_close(analytic, numeric, rtol=1e-5, atol=1e-7):
    """Elementwise ``|a - n| <= atol + rtol * max(|a|, |n|)``."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return bool(np.all(np.abs(a - n) <= atol + rtol * np.maximum(np.abs(a), np.abs(n))))


class RngStream:
    """Counter-based random stream (Philox 4x64).

    Identical ``(seed, counter)`` pairs give identical draws. Independent
    sub-streams come from :meth:`split`; streams are never shared between
    consumers. Every ``numpy.random.Generator`` method is available directly.
    """

    def __init__(self, seed, counter=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed, counter=self.counter))

    def split(self, stream_id):
        child = np.random.SeedSequence([self.seed, int(stream_id) & 0xFFFFFFFFFFFFFFFF])
        return RngStream(int(child.generate_state(1, np.uint64)[0]))

    @property
    def generator(self):
        return self._gen

    def __getattr__(self, name):
        return getattr(self._gen, name)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"


def as_rng(rng):
    """Accept an RngStream, an int seed or None."""
    if isinstance(rng, RngStream):
        return rng
    return RngStream(0 if rng is None else rng)
