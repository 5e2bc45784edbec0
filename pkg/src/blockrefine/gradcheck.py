"""Finite-difference checks of every hand-written backward pass."""
from dataclasses import dataclass

import numpy as np

from . import encoder as E
from . import heads as H
from .nna import ContrastiveBatch, nna_loss
from .numerics import RngStream, finite_diff_grad, grad_close, l2_normalize_rows


@dataclass
class CheckResult:
    component: str
    instance: int
    target: str
    max_abs_err: float
    ok: bool


def _record(out, comp, inst, target, analytic, numeric, rtol, atol):
    err = float(np.max(np.abs(analytic - numeric))) if np.size(analytic) else 0.0
    out.append(CheckResult(comp, inst, target, err, bool(grad_close(analytic, numeric, rtol, atol))))


def check_nna(rng, inst, out, rtol=1e-5, atol=1e-7):
    n, d = int(rng.integers(2, 9)), int(rng.integers(3, 17))
    m = n if rng.random() < 0.5 else int(rng.integers(2, 9))
    tau = float(rng.choice([0.1, 0.2, 0.5]))
    pos = l2_normalize_rows(rng.normal(size=(n, d)))
    neg = l2_normalize_rows(rng.normal(size=(m, d)))
    mask = rng.random((n, m)) < 0.3
    if n == m:
        np.fill_diagonal(mask, True)
    z = l2_normalize_rows(rng.normal(size=(n, d)))
    f = lambda a: nna_loss(ContrastiveBatch(a, pos, neg, tau, mask)).loss
    _record(out, "nna", inst, "anchors", nna_loss(ContrastiveBatch(z, pos, neg, tau, mask)).grad_anchors,
            finite_diff_grad(f, z), rtol, atol)


def check_head(rng, inst, out, rtol=1e-5, atol=1e-7):
    cfg = H.HeadConfig(int(rng.integers(3, 6)), projector_hidden=6, bottleneck=3, predictor_hidden=7)
    head = H.init_head(cfg, rng)
    for k in head.params:
        if k.endswith(("gamma", "beta")):
            head.params[k] = head.params[k] + 0.3 * rng.normal(size=head.params[k].shape)
    n = int(rng.integers(3, 6))
    x = rng.normal(size=(n, cfg.input_dim))
    gp, gq = rng.normal(size=(n, cfg.bottleneck)), rng.normal(size=(n, cfg.bottleneck))

    def loss(params, xx):
        # fresh buffers so running-stat updates never leak between evaluations
        h = H.IdHead(cfg, params, {k: v.copy() for k, v in head.buffers.items()})
        o = H.head_forward(h, xx, "train")
        return float((o.pred * gp).sum() + (o.proj * gq).sum())

    o = H.head_forward(H.IdHead(cfg, head.params, {k: v.copy() for k, v in head.buffers.items()}), x, "train")
    grads, gin = H.head_backward(head, o.cache, gp, gq)
    for k in sorted(head.params):
        f = lambda v, k=k: loss({**head.params, k: v}, x)
        _record(out, "head", inst, k, grads[k], finite_diff_grad(f, head.params[k]), rtol, atol)
    _record(out, "head", inst, "input", gin, finite_diff_grad(lambda v: loss(head.params, v), x), rtol, atol)


def check_encoder(rng, inst, out, kind, rtol=1e-5, atol=1e-7):
    cfg = E.EncoderConfig(depth=2, width=4, mlp_ratio=2, block_kind=kind, patch_size=2, grid=2)
    params = E.init_encoder(cfg, rng)
    # unit-scale tokens keep layer norm away from its eps regime, where
    # central differences lose accuracy
    params["cls"] = rng.normal(size=cfg.width)
    params["pos"] = rng.normal(size=(cfg.n_pos, cfg.width))
    n = int(rng.integers(2, 4))
    toks = rng.normal(size=(n, cfg.n_pos, cfg.in_dim))
    taps = {b: rng.normal(size=(n, cfg.width)) for b in range(1, cfg.depth + 1)}
    wf = rng.normal(size=(n, cfg.n_pos + 1, cfg.width))

    def loss(p):
        r = E.encoder_forward(p, cfg, toks)
        return float(sum((r.taps[b - 1] * w).sum() for b, w in taps.items()) + (r.final_tokens * wf).sum())

    r = E.encoder_forward(params, cfg, toks, need_cache=True)
    grads = E.encoder_backward(params, cfg, r.cache, taps, wf)
    for k in sorted(params):
        f = lambda v, k=k: loss({**params, k: v})
        _record(out, f"encoder/{kind}", inst, k, grads[k], finite_diff_grad(f, params[k]), rtol, atol)


def run_gradcheck(n_instances=20, seed=0, components=("nna", "head", "encoder")):
    """Run ``n_instances`` randomized checks per component; returns CheckResults."""
    root = RngStream(seed)
    out = []
    for i in range(n_instances):
        rng = root.split(i)
        if "nna" in components:
            check_nna(rng.split(0), i, out)
        if "head" in components:
            check_head(rng.split(1), i, out)
        if "encoder" in components:
            for j, kind in enumerate(E.BLOCK_KINDS):
                check_encoder(rng.split(2 + j), i, out, kind)
    return out
