"""FIFO support queue of past bottleneck embeddings with top-k retrieval."""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NotNormalized, QueueTooSmall, UnlabeledQueue, ConfigError
from .numerics import as_rng

NORM_TOL = 1e-6
NO_LABEL = -1


@dataclass
class QueueConfig:
    capacity: int = 65536
    top_k: int = 20

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError("queue capacity must be >= 1")
        if not 1 <= self.top_k <= self.capacity:
            raise ConfigError("need 1 <= top_k <= capacity")


class SupportQueue:
    """Fixed-capacity ring buffer of unit vectors with optional integer labels.

    Entries are stored as stop-gradient copies. ``ordered()`` returns the
    surviving rows oldest first; retrieval indices refer to that order, so a
    lower index always means an older entry.
    """

    def __init__(self, dim, capacity=65536):
        if capacity < 1:
            raise ConfigError("queue capacity must be >= 1")
        self.dim = int(dim)
        self.capacity = int(capacity)
        self.vectors = np.zeros((self.capacity, self.dim))
        self.labels = np.full(self.capacity, NO_LABEL, dtype=np.int64)
        self.write_cursor = 0
        self.filled = 0

    def enqueue(self, embeddings, labels=None):
        """Append rows in order, overwriting the oldest entries once full."""
        emb = np.array(embeddings, dtype=np.float64, ndmin=2)
        if emb.shape[1] != self.dim:
            raise NotNormalized(f"expected dim {self.dim}, got {emb.shape[1]}")
        norms = np.linalg.norm(emb, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise NotNormalized("queue entries must be unit vectors")
        n = emb.shape[0]
        if labels is None:
            lab = np.full(n, NO_LABEL, dtype=np.int64)
        else:
            lab = np.asarray(labels, dtype=np.int64).reshape(-1)
            if lab.shape[0] != n:
                raise ValueError("labels do not align with embeddings")
        if n >= self.capacity:
            # only the trailing `capacity` rows can survive
            emb, lab = emb[-self.capacity:], lab[-self.capacity:]
            self.write_cursor = (self.write_cursor + n - self.capacity) % self.capacity
            n = self.capacity
        idx = (self.write_cursor + np.arange(n)) % self.capacity
        self.vectors[idx] = emb
        self.labels[idx] = lab
        self.write_cursor = int((self.write_cursor + n) % self.capacity)
        self.filled = min(self.capacity, self.filled + n)
        return self

    def _order(self):
        if self.filled < self.capacity:
            return np.arange(self.filled)
        return (self.write_cursor + np.arange(self.capacity)) % self.capacity

    def ordered(self):
        """(vectors, labels) of surviving entries, oldest first."""
        o = self._order()
        return self.vectors[o], self.labels[o]

    def topk(self, anchors, k):
        """Indices (into ``ordered()``) of the k most similar entries per anchor."""
        if self.filled < k:
            raise QueueTooSmall(f"queue holds {self.filled} entries, need {k}")
        vecs, _ = self.ordered()
        sims = np.ascontiguousarray(np.atleast_2d(anchors) @ vecs.T)
        return _kernels.topk_rows(sims, int(k))

    def retrieve(self, anchors, k=1, rng=None):
        """One neighbor per anchor, drawn uniformly among its top-k.

        Returns ``(selected, indices)``. With ``k=1`` this is the exact argmax
        and does not touch ``rng``.
        """
        anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
        if np.any(np.abs(np.linalg.norm(anchors, axis=1) - 1.0) > NORM_TOL):
            raise NotNormalized("anchors must be unit vectors")
        top = self.topk(anchors, k)
        if k == 1:
            pick = top[:, 0]
        else:
            choice = as_rng(rng).integers(0, k, size=len(anchors))
            pick = top[np.arange(len(anchors)), choice]
        vecs, _ = self.ordered()
        return vecs[pick].copy(), pick

    def nn_swap_accuracy(self, anchors, anchor_labels):
        """Fraction of anchors whose top-1 neighbor carries the same label."""
        _, labels = self.ordered()
        if self.filled < 1:
            raise QueueTooSmall("empty queue")
        if np.any(labels == NO_LABEL):
            raise UnlabeledQueue("every queue entry needs a label")
        _, idx = self.retrieve(anchors, k=1)
        return float(np.mean(labels[idx] == np.asarray(anchor_labels).reshape(-1)))

    def state_dict(self):
        vecs, labels = self.ordered()
        return {"vectors": vecs.copy(), "labels": labels.copy(),
                "capacity": self.capacity}

    @classmethod
    def from_state(cls, state):
        q = cls(state["vectors"].shape[1], int(state["capacity"]))
        if len(state["vectors"]):
            q.enqueue(state["vectors"], state["labels"])
        return q


def enqueue_batch(state, embeddings, labels=None):
    return state.enqueue(embeddings, labels)


def retrieve_nn(state, anchors, k, rng=None):
    return state.retrieve(anchors, k, rng)


def nn_swap_accuracy(state, anchors, anchor_labels):
    return state.nn_swap_accuracy(anchors, anchor_labels)
