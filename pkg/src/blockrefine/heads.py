"""Instance-discrimination heads: projector + predictor MLPs with batch norm.

Every hidden linear layer is followed by GELU then batch norm; the last
linear layer of the projector and of the predictor is followed by batch norm
only. Parameters live in flat ``{name: array}`` dicts so the optimizer, EMA
and checkpoint code can treat heads and encoder alike.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import BadProgress, BatchTooSmall, ConfigError, StaleCache
from .layers import (batchnorm_backward, batchnorm_forward, gelu_backward,
                     gelu_forward, linear_backward, linear_forward)
from .numerics import as_rng, l2_normalize_rows, l2_normalize_rows_backward


@dataclass
class HeadConfig:
    input_dim: int
    projector_hidden: int = 256
    bottleneck: int = 64
    predictor_hidden: int = 512
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1

    @classmethod
    def full_scale(cls, input_dim):
        return cls(input_dim, projector_hidden=2048, bottleneck=256, predictor_hidden=4096)

    @property
    def projector_dims(self):
        return [self.input_dim, self.projector_hidden, self.projector_hidden, self.bottleneck]

    @property
    def predictor_dims(self):
        return [self.bottleneck, self.predictor_hidden, self.bottleneck]

    def __post_init__(self):
        if min(self.input_dim, self.projector_hidden, self.bottleneck, self.predictor_hidden) < 1:
            raise ConfigError("all head dims must be >= 1")


# ---------------------------------------------------------------------------
# generic MLP: list of (linear [-> gelu] [-> bn]) layers


@dataclass
class MLPSpec:
    dims: list
    gelu: list  # per layer
    bn: list    # per layer

    @classmethod
    def head_part(cls, dims):
        n = len(dims) - 1
        return cls(list(dims), [True] * (n - 1) + [False], [True] * n)


def mlp_init(spec, prefix, rng, params, buffers):
    for i, (d_in, d_out) in enumerate(zip(spec.dims[:-1], spec.dims[1:])):
        std = np.sqrt(2.0 / (d_in + d_out))
        params[f"{prefix}.{i}.W"] = rng.normal(0.0, std, size=(d_in, d_out))
        params[f"{prefix}.{i}.b"] = np.zeros(d_out)
        if spec.bn[i]:
            params[f"{prefix}.{i}.gamma"] = np.ones(d_out)
            params[f"{prefix}.{i}.beta"] = np.zeros(d_out)
            buffers[f"{prefix}.{i}.running_mean"] = np.zeros(d_out)
            buffers[f"{prefix}.{i}.running_var"] = np.ones(d_out)


def mlp_forward(spec, prefix, params, buffers, x, mode, eps=1e-5, momentum=0.1):
    caches = []
    h = x
    for i in range(len(spec.dims) - 1):
        h, c_lin = linear_forward(h, params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"])
        c_gelu = c_bn = None
        if spec.gelu[i]:
            h, c_gelu = gelu_forward(h)
        if spec.bn[i]:
            state = {"running_mean": buffers[f"{prefix}.{i}.running_mean"],
                     "running_var": buffers[f"{prefix}.{i}.running_var"]}
            h, c_bn = batchnorm_forward(h, params[f"{prefix}.{i}.gamma"],
                                        params[f"{prefix}.{i}.beta"], state, mode,
                                        eps=eps, momentum=momentum)
        caches.append((c_lin, c_gelu, c_bn))
    return h, caches


def mlp_backward(spec, prefix, dout, caches, grads):
    if len(caches) != len(spec.dims) - 1:
        raise StaleCache("cache does not match the MLP layout")
    g = dout
    for i in reversed(range(len(caches))):
        c_lin, c_gelu, c_bn = caches[i]
        if c_bn is not None:
            g, dgamma, dbeta = batchnorm_backward(g, c_bn)
            grads[f"{prefix}.{i}.gamma"] = grads.get(f"{prefix}.{i}.gamma", 0) + dgamma
            grads[f"{prefix}.{i}.beta"] = grads.get(f"{prefix}.{i}.beta", 0) + dbeta
        if c_gelu is not None:
            g = gelu_backward(g, c_gelu)
        g, dW, db = linear_backward(g, c_lin)
        grads[f"{prefix}.{i}.W"] = grads.get(f"{prefix}.{i}.W", 0) + dW
        grads[f"{prefix}.{i}.b"] = grads.get(f"{prefix}.{i}.b", 0) + db
    return g


# ---------------------------------------------------------------------------
# ID head


@dataclass
class IdHead:
    cfg: HeadConfig
    params: dict
    buffers: dict

    @property
    def projector(self):
        return MLPSpec.head_part(self.cfg.projector_dims)

    @property
    def predictor(self):
        return MLPSpec.head_part(self.cfg.predictor_dims)


def init_head(cfg, rng):
    rng = as_rng(rng)
    params, buffers = {}, {}
    mlp_init(MLPSpec.head_part(cfg.projector_dims), "proj", rng, params, buffers)
    mlp_init(MLPSpec.head_part(cfg.predictor_dims), "pred", rng, params, buffers)
    return IdHead(cfg, params, buffers)


@dataclass
class HeadOutput:
    proj_raw: np.ndarray
    pred_raw: np.ndarray
    proj: np.ndarray
    pred: np.ndarray
    cache: tuple = field(repr=False)


def head_forward(head, x, mode="train"):
    """Run projector then predictor. Train mode uses batch statistics."""
    if mode == "train" and x.shape[0] < 2:
        raise BatchTooSmall("batch norm needs at least 2 rows in train mode")
    if x.shape[1] != head.cfg.input_dim:
        raise StaleCache(f"expected input dim {head.cfg.input_dim}, got {x.shape[1]}")
    eps, mom = head.cfg.bn_epsilon, head.cfg.bn_momentum
    proj_raw, c_proj = mlp_forward(head.projector, "proj", head.params, head.buffers, x, mode, eps, mom)
    pred_raw, c_pred = mlp_forward(head.predictor, "pred", head.params, head.buffers, proj_raw, mode, eps, mom)
    cache = (x.shape, c_proj, c_pred, proj_raw, pred_raw)
    return HeadOutput(proj_raw, pred_raw, _safe_normalize(proj_raw), _safe_normalize(pred_raw), cache)


def _safe_normalize(m):
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.maximum(norms, 1e-12)


def head_backward(head, cache, grad_pred=None, grad_proj=None):
    """Backward pass from gradients w.r.t. the *normalized* outputs.

    Returns ``(param_grads, grad_input)``. Either gradient may be None.
    """
    x_shape, c_proj, c_pred, proj_raw, pred_raw = cache
    grads = {}
    if grad_pred is not None and np.shape(grad_pred) != pred_raw.shape:
        raise StaleCache("grad_pred shape does not match the cached forward")
    if grad_proj is not None and np.shape(grad_proj) != proj_raw.shape:
        raise StaleCache("grad_proj shape does not match the cached forward")
    g_pred_raw = np.zeros_like(pred_raw) if grad_pred is None else l2_normalize_rows_backward(grad_pred, pred_raw)
    g_proj_raw = mlp_backward(head.predictor, "pred", g_pred_raw, c_pred, grads)
    if grad_proj is not None:
        g_proj_raw = g_proj_raw + l2_normalize_rows_backward(grad_proj, proj_raw)
    g_in = mlp_backward(head.projector, "proj", g_proj_raw, c_proj, grads)
    if g_in.shape != tuple(x_shape):
        raise StaleCache("input gradient shape mismatch")
    return grads, g_in


# ---------------------------------------------------------------------------
# ensemble + loss-weight schedules


def last_third(depth):
    """1-based indices of the blocks in the last third of the encoder."""
    n = max(1, int(round(depth / 3.0)))
    return list(range(depth - n + 1, depth + 1))


@dataclass
class EnsembleConfig:
    attach_indices: list
    head_cfgs: list = None

    @classmethod
    def default(cls, depth, width, **head_kwargs):
        idx = last_third(depth)
        return cls(idx, [HeadConfig(width, **head_kwargs) for _ in idx])

    def validate(self, depth):
        idx = list(self.attach_indices)
        if idx != sorted(set(idx)) or not idx:
            raise ConfigError("attach_indices must be sorted, unique and non-empty")
        if idx[0] < 1 or idx[-1] > depth:
            raise ConfigError(f"attach_indices must lie in [1, {depth}]")
        if self.head_cfgs is not None and len(self.head_cfgs) != len(idx):
            raise ConfigError("one HeadConfig per attach index")


SCHEDULE_KINDS = ("constant", "uniform_decay", "staggered_decay", "staggered_step", "one_hot")


@dataclass
class ScheduleSpec:
    kind: str = "constant"
    head_count: int = 1

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule {self.kind!r}")
        if self.head_count < 1:
            raise ConfigError("head_count must be >= 1")


def schedule_weight(spec, head_index, progress):
    """Loss weight of head ``head_index`` (0 = earliest block) at ``progress``.

    The final head keeps weight 1 under every schedule except one_hot, which
    walks a single active head from the earliest to the final one.
    """
    if not 0.0 <= progress <= 1.0:
        raise BadProgress(f"progress {progress} outside [0, 1]")
    hc = spec.head_count
    if not 0 <= head_index < hc:
        raise ConfigError(f"head_index {head_index} out of range")
    final = head_index == hc - 1
    kind = spec.kind
    if kind == "one_hot":
        seg = int(np.floor(progress * hc))
        # align with the exact segment bounds h/hc, (h+1)/hc despite rounding
        if seg < hc and (seg + 1) / hc <= progress:
            seg += 1
        elif seg > 0 and seg / hc > progress:
            seg -= 1
        seg = min(seg, hc - 1)
        return 1.0 if seg == head_index else 0.0
    if kind == "constant" or final:
        return 1.0
    h = head_index
    if kind == "uniform_decay":
        return 1.0 - progress
    if kind == "staggered_step":
        return 1.0 if progress < (h + 1) / hc else 0.0
    # staggered_decay: intermediate heads decay one after another
    n_int = hc - 1
    start = h / (2.0 * n_int)
    end = (2.0 * h + 1.0) / (2.0 * n_int)
    if progress <= start:
        return 1.0
    if progress >= end:
        return 0.0
    return (end - progress) / (end - start)
