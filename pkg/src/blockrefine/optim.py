"""AdamW with per-parameter lr scale / weight decay, lr schedules and EMA."""
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import BadIndex, ShapeMismatch

_BLOCK_RE = re.compile(r"^blocks\.(\d+)\.")


def block_index(name):
    """Encoder block (1-based) a parameter belongs to; 0 for embeddings."""
    m = _BLOCK_RE.match(name)
    return int(m.group(1)) if m else 0


def layerwise_lr(peak, decay, block_idx, depth):
    """``peak * decay ** (depth - block_idx)``; block 0 is the embedding layer."""
    if not 0 <= block_idx <= depth:
        raise BadIndex(f"block index {block_idx} outside [0, {depth}]")
    return peak * decay ** (depth - block_idx)


def warmup_cosine(step, total_steps, warmup_steps, peak, end):
    """Linear 0 -> peak over warmup, then cosine peak -> end; exact at both ends."""
    if total_steps <= 0:
        return peak
    step = min(max(step, 0), total_steps)
    if warmup_steps > 0 and step < warmup_steps:
        return peak * step / warmup_steps
    if step >= total_steps:
        return end
    span = total_steps - warmup_steps
    if span <= 0:
        return end
    t = (step - warmup_steps) / span
    return end + 0.5 * (peak - end) * (1.0 + math.cos(math.pi * t))


def decays(name):
    """Weight decay applies to weight matrices only (not biases, norms, tokens)."""
    return name.rsplit(".", 1)[-1] in ("W", "U", "Wq", "Wk", "Wv", "Wo", "W1", "W2")


@dataclass
class AdamW:
    """Decoupled weight decay Adam with bias correction.

    ``lr_scale[name]`` multiplies the global lr and ``wd[name]`` sets the
    decay coefficient per parameter.
    """
    betas: tuple = (0.9, 0.95)
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads, lr, lr_scale=None, wd=None, skip=()):
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for name, p in params.items():
            if name in skip:
                continue
            eta = lr * (1.0 if lr_scale is None else lr_scale.get(name, 1.0))
            lam = 0.0 if wd is None else wd.get(name, 0.0)
            if lam:
                p *= 1.0 - eta * lam
            g = grads.get(name)
            if g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= eta * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self, prefix="opt"):
        out = {f"{prefix}.step": np.array([self.step_count], dtype=np.float64)}
        for k in self.m:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out


@dataclass
class EmaState:
    shadow: dict
    momentum: float

    @classmethod
    def from_params(cls, params, momentum):
        return cls({k: v.copy() for k, v in params.items()}, float(momentum))


def ema_update(ema, params):
    """shadow <- m * shadow + (1 - m) * params, in place; returns ``ema``."""
    m = ema.momentum
    for k, s in ema.shadow.items():
        p = params[k]
        if p.shape != s.shape:
            raise ShapeMismatch(f"EMA shape mismatch for {k}")
        if m == 1.0:
            continue
        if m == 0.0:
            s[...] = p
        else:
            s *= m
            s += (1.0 - m) * p
    return ema
