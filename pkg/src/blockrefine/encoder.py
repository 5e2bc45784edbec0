"""Block-structured toy encoder with per-block taps and a light MIM decoder.

Inputs are token arrays of shape (N, T, token_dim) plus a positional map
(T, P) or (N, T, P) that mixes the P learned positional embeddings into the T
tokens (one-hot rows for masking, area-averaging rows for downscaled crops).
A class-summary token is prepended and is what heads and probes read.

``residual_mlp`` blocks are pre-norm residual MLPs whose hidden layer also
sees the token-mean of the normalized sequence, which is the only way tokens
exchange information. ``single_head_attention`` blocks are a pre-norm
attention sub-block followed by a pre-norm MLP sub-block.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateMask, ShapeMismatch, TooShort
from .layers import (gelu_backward, gelu_forward, layernorm_backward,
                     layernorm_forward, softmax)
from .numerics import as_rng
from .optim import AdamW, decays, warmup_cosine

BLOCK_KINDS = ("residual_mlp", "single_head_attention")


@dataclass
class EncoderConfig:
    depth: int = 12
    width: int = 64
    mlp_ratio: int = 2
    block_kind: str = "residual_mlp"
    patch_size: int = 4
    grid: int = 4
    channels: int = 1
    layout: str = "image"   # or "tokens"
    seq_len: int = 16       # tokens layout only
    token_dim: int = 16     # tokens layout only

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.width < 4:
            raise ConfigError("width must be >= 4")
        if self.block_kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.block_kind!r}")
        if self.layout not in ("image", "tokens"):
            raise ConfigError(f"unknown layout {self.layout!r}")

    @property
    def n_pos(self):
        return self.grid * self.grid if self.layout == "image" else self.seq_len

    @property
    def in_dim(self):
        if self.layout == "image":
            return self.patch_size * self.patch_size * self.channels
        return self.token_dim

    @property
    def hidden(self):
        return self.mlp_ratio * self.width


@dataclass
class MimConfig:
    mask_ratio: float = 0.75
    decoder_depth: int = 2
    decoder_width: int = 16
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_epochs: int = 2

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError("mask_ratio must lie in (0, 1)")


# ---------------------------------------------------------------------------
# parameter init


def _normal(rng, shape, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


def _init_block(params, prefix, kind, d, h, rng):
    if kind == "residual_mlp":
        params[f"{prefix}.ln.gamma"] = np.ones(d)
        params[f"{prefix}.ln.beta"] = np.zeros(d)
        params[f"{prefix}.W1"] = _normal(rng, (d, h), d, h)
        params[f"{prefix}.U"] = _normal(rng, (d, h), d, h)
        params[f"{prefix}.b1"] = np.zeros(h)
        params[f"{prefix}.W2"] = _normal(rng, (h, d), h, d)
        params[f"{prefix}.b2"] = np.zeros(d)
    else:
        for nm in ("ln1", "ln2"):
            params[f"{prefix}.{nm}.gamma"] = np.ones(d)
            params[f"{prefix}.{nm}.beta"] = np.zeros(d)
        for nm in ("Wq", "Wk", "Wv", "Wo"):
            params[f"{prefix}.{nm}"] = _normal(rng, (d, d), d, d)
        params[f"{prefix}.bo"] = np.zeros(d)
        params[f"{prefix}.W1"] = _normal(rng, (d, h), d, h)
        params[f"{prefix}.b1"] = np.zeros(h)
        params[f"{prefix}.W2"] = _normal(rng, (h, d), h, d)
        params[f"{prefix}.b2"] = np.zeros(d)


def init_encoder(cfg, rng):
    rng = as_rng(rng)
    d = cfg.width
    p = {
        "embed.W": _normal(rng, (cfg.in_dim, d), cfg.in_dim, d),
        "embed.b": np.zeros(d),
        "cls": rng.normal(0.0, 0.02, size=d),
        "pos": rng.normal(0.0, 0.02, size=(cfg.n_pos, d)),
    }
    for b in range(1, cfg.depth + 1):
        _init_block(p, f"blocks.{b}", cfg.block_kind, d, cfg.hidden, rng)
    return p


def zero_residual_branches(params):
    """Return a copy whose blocks are identity maps (output projections zeroed)."""
    out = {k: v.copy() for k, v in params.items()}
    for k in out:
        if k.startswith("blocks.") and k.rsplit(".", 1)[-1] in ("W2", "b2", "Wo", "bo"):
            out[k][...] = 0.0
    return out


def init_decoder(cfg, mim, rng):
    rng = as_rng(rng)
    d, dd = cfg.width, mim.decoder_width
    p = {
        "dec.embed.W": _normal(rng, (d, dd), d, dd),
        "dec.embed.b": np.zeros(dd),
        "dec.mask": rng.normal(0.0, 0.02, size=dd),
        "dec.pos": rng.normal(0.0, 0.02, size=(cfg.n_pos, dd)),
        "dec.norm.gamma": np.ones(dd),
        "dec.norm.beta": np.zeros(dd),
        "dec.out.W": _normal(rng, (dd, cfg.in_dim), dd, cfg.in_dim),
        "dec.out.b": np.zeros(cfg.in_dim),
    }
    for i in range(1, mim.decoder_depth + 1):
        _init_block(p, f"dec.blocks.{i}", "residual_mlp", dd, 2 * dd, rng)
    return p


def param_count(params, prefix=""):
    return int(sum(v.size for k, v in params.items() if k.startswith(prefix)))


# ---------------------------------------------------------------------------
# blocks


def _ctx_mlp_forward(x, p, pre):
    h, c_ln = layernorm_forward(x, p[f"{pre}.ln.gamma"], p[f"{pre}.ln.beta"])
    ctx = h.mean(1)
    a = h @ p[f"{pre}.W1"] + (ctx @ p[f"{pre}.U"])[:, None, :] + p[f"{pre}.b1"]
    g, c_gelu = gelu_forward(a)
    out = x + g @ p[f"{pre}.W2"] + p[f"{pre}.b2"]
    return out, (h, ctx, g, c_ln, c_gelu)


def _ctx_mlp_backward(dout, cache, p, pre, grads):
    h, ctx, g, c_ln, c_gelu = cache
    d = h.shape[-1]
    hid = g.shape[-1]
    grads[f"{pre}.W2"] = g.reshape(-1, hid).T @ dout.reshape(-1, d)
    grads[f"{pre}.b2"] = dout.reshape(-1, d).sum(0)
    da = gelu_backward(dout @ p[f"{pre}.W2"].T, c_gelu)
    da_tok = da.sum(1)
    grads[f"{pre}.W1"] = h.reshape(-1, d).T @ da.reshape(-1, hid)
    grads[f"{pre}.U"] = ctx.T @ da_tok
    grads[f"{pre}.b1"] = da.reshape(-1, hid).sum(0)
    dh = da @ p[f"{pre}.W1"].T + ((da_tok @ p[f"{pre}.U"].T) / h.shape[1])[:, None, :]
    dx, dgam, dbeta = layernorm_backward(dh, c_ln)
    grads[f"{pre}.ln.gamma"] = dgam
    grads[f"{pre}.ln.beta"] = dbeta
    return dout + dx


def _attn_forward(x, p, pre):
    d = x.shape[-1]
    h, c_ln1 = layernorm_forward(x, p[f"{pre}.ln1.gamma"], p[f"{pre}.ln1.beta"])
    q = h @ p[f"{pre}.Wq"]
    k = h @ p[f"{pre}.Wk"]
    v = h @ p[f"{pre}.Wv"]
    scale = 1.0 / np.sqrt(d)
    A = softmax(q @ k.transpose(0, 2, 1) * scale)
    o = A @ v
    x1 = x + o @ p[f"{pre}.Wo"] + p[f"{pre}.bo"]
    h2, c_ln2 = layernorm_forward(x1, p[f"{pre}.ln2.gamma"], p[f"{pre}.ln2.beta"])
    a, _ = h2 @ p[f"{pre}.W1"] + p[f"{pre}.b1"], None
    g, c_gelu = gelu_forward(a)
    out = x1 + g @ p[f"{pre}.W2"] + p[f"{pre}.b2"]
    return out, (h, q, k, v, A, o, h2, g, c_ln1, c_ln2, c_gelu, scale)


def _attn_backward(dout, cache, p, pre, grads):
    h, q, k, v, A, o, h2, g, c_ln1, c_ln2, c_gelu, scale = cache
    d = h.shape[-1]
    hid = g.shape[-1]
    flat = lambda t, w: t.reshape(-1, w)
    grads[f"{pre}.W2"] = flat(g, hid).T @ flat(dout, d)
    grads[f"{pre}.b2"] = flat(dout, d).sum(0)
    da = gelu_backward(dout @ p[f"{pre}.W2"].T, c_gelu)
    grads[f"{pre}.W1"] = flat(h2, d).T @ flat(da, hid)
    grads[f"{pre}.b1"] = flat(da, hid).sum(0)
    dx1_ln, dg2, db2 = layernorm_backward(da @ p[f"{pre}.W1"].T, c_ln2)
    grads[f"{pre}.ln2.gamma"] = dg2
    grads[f"{pre}.ln2.beta"] = db2
    dx1 = dout + dx1_ln
    grads[f"{pre}.Wo"] = flat(o, d).T @ flat(dx1, d)
    grads[f"{pre}.bo"] = flat(dx1, d).sum(0)
    do = dx1 @ p[f"{pre}.Wo"].T
    dA = do @ v.transpose(0, 2, 1)
    dv = A.transpose(0, 2, 1) @ do
    ds = A * (dA - (dA * A).sum(-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 2, 1) @ q
    grads[f"{pre}.Wq"] = flat(h, d).T @ flat(dq, d)
    grads[f"{pre}.Wk"] = flat(h, d).T @ flat(dk, d)
    grads[f"{pre}.Wv"] = flat(h, d).T @ flat(dv, d)
    dh = dq @ p[f"{pre}.Wq"].T + dk @ p[f"{pre}.Wk"].T + dv @ p[f"{pre}.Wv"].T
    dx, dg1, db1 = layernorm_backward(dh, c_ln1)
    grads[f"{pre}.ln1.gamma"] = dg1
    grads[f"{pre}.ln1.beta"] = db1
    return dx1 + dx


_BLOCK_FWD = {"residual_mlp": _ctx_mlp_forward, "single_head_attention": _attn_forward}
_BLOCK_BWD = {"residual_mlp": _ctx_mlp_backward, "single_head_attention": _attn_backward}


# ---------------------------------------------------------------------------
# encoder forward / backward


@dataclass
class EncodeResult:
    taps: list          # class-summary vector after each block, (N, d) each
    tokens: list        # full sequence after each block (kept when requested)
    final_tokens: np.ndarray
    cache: tuple


def _pos_tokens(pos_table, pos_map):
    if pos_map.ndim == 2:
        return pos_map @ pos_table
    return np.einsum("ntp,pd->ntd", pos_map, pos_table)


def encoder_forward(params, cfg, tokens, pos_map=None, keep_tokens=False, need_cache=False):
    """Run the encoder; returns an EncodeResult with per-block taps."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 3 or tokens.shape[2] != cfg.in_dim:
        raise ShapeMismatch(f"expected (N, T, {cfg.in_dim}) tokens, got {tokens.shape}")
    n, t, _ = tokens.shape
    if pos_map is None:
        if t != cfg.n_pos:
            raise ShapeMismatch("a pos_map is required when T != number of positions")
        pos_map = np.eye(cfg.n_pos)
    if pos_map.shape[-2:] != (t, cfg.n_pos):
        raise ShapeMismatch(f"pos_map shape {pos_map.shape} does not match tokens")
    emb = tokens @ params["embed.W"] + params["embed.b"] + _pos_tokens(params["pos"], pos_map)
    cls = np.broadcast_to(params["cls"], (n, 1, cfg.width))
    x = np.concatenate([cls, emb], axis=1)
    fwd = _BLOCK_FWD[cfg.block_kind]
    taps, kept, caches = [], [], []
    for b in range(1, cfg.depth + 1):
        x, c = fwd(x, params, f"blocks.{b}")
        taps.append(x[:, 0, :].copy())
        if keep_tokens:
            kept.append(x)
        if need_cache:
            caches.append(c)
    cache = (tokens, pos_map, caches) if need_cache else None
    return EncodeResult(taps, kept, x, cache)


def encoder_backward(params, cfg, cache, tap_grads=None, final_grad=None, stop_below=0):
    """Backward from gradients on the taps and/or on the final token sequence.

    ``tap_grads`` maps 1-based block index -> (N, d) gradient on the class
    token after that block. Blocks with index <= ``stop_below`` (and the
    embeddings, when ``stop_below >= 1``) get no gradients.
    """
    tokens, pos_map, caches = cache
    if len(caches) != cfg.depth:
        raise ShapeMismatch("encoder cache is incomplete")
    n, t, _ = tokens.shape
    tap_grads = tap_grads or {}
    top = max(list(tap_grads) + ([cfg.depth] if final_grad is not None else []), default=0)
    grads = {}
    if top == 0:
        return grads
    bwd = _BLOCK_BWD[cfg.block_kind]
    g = np.zeros((n, t + 1, cfg.width)) if final_grad is None or top < cfg.depth else final_grad.copy()
    for b in range(top, stop_below, -1):
        if b in tap_grads:
            g[:, 0, :] += tap_grads[b]
        g = bwd(g, caches[b - 1], params, f"blocks.{b}", grads)
    if stop_below >= 1:
        return grads
    demb = g[:, 1:, :]
    grads["cls"] = g[:, 0, :].sum(0)
    grads["embed.W"] = tokens.reshape(-1, tokens.shape[2]).T @ demb.reshape(-1, cfg.width)
    grads["embed.b"] = demb.reshape(-1, cfg.width).sum(0)
    if pos_map.ndim == 2:
        grads["pos"] = pos_map.T @ demb.sum(0)
    else:
        grads["pos"] = np.einsum("ntp,ntd->pd", pos_map, demb)
    return grads


def encode(params, cfg, inputs, collect="final_only", pos_map=None):
    """Class-summary features after the last block or after every block."""
    tokens = to_tokens(inputs, cfg)
    res = encoder_forward(params, cfg, tokens, pos_map)
    if collect == "per_block":
        return res.taps
    if collect == "final_only":
        return res.taps[-1]
    raise ValueError(f"collect must be 'final_only' or 'per_block', got {collect!r}")


def encode_batched(params, cfg, inputs, collect="per_block", batch_size=512):
    """Like :func:`encode` but in fixed-size chunks to bound memory."""
    tokens = to_tokens(inputs, cfg)
    outs = []
    for s in range(0, len(tokens), batch_size):
        outs.append(encoder_forward(params, cfg, tokens[s:s + batch_size]).taps)
    per_block = [np.concatenate([o[b] for o in outs]) for b in range(cfg.depth)]
    return per_block if collect == "per_block" else per_block[-1]


# ---------------------------------------------------------------------------
# tokens / patches


def patchify(images, patch):
    """(N, H, W[, C]) -> (N, (H/p)*(W/p), p*p*C) in row-major patch order."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[..., None]
    n, hgt, wid, c = x.shape
    gh, gw = hgt // patch, wid // patch
    x = x[:, :gh * patch, :gw * patch]
    x = x.reshape(n, gh, patch, gw, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n, gh * gw, patch * patch * c)


def to_tokens(inputs, cfg):
    x = np.asarray(inputs, dtype=np.float64)
    if cfg.layout == "image":
        side = cfg.grid * cfg.patch_size
        if x.shape[1:3] != (side, side):
            raise ShapeMismatch(f"expected {side}x{side} images, got {x.shape}")
        return patchify(x, cfg.patch_size)
    if x.ndim == 2:
        return x.reshape(len(x), cfg.seq_len, cfg.token_dim)
    return x


def area_resample_matrix(g_out, g_in):
    """(g_out^2, g_in^2) matrix that area-averages a g_in x g_in grid to g_out x g_out."""
    a = np.zeros((g_out, g_in))
    step = g_in / g_out
    for i in range(g_out):
        lo, hi = i * step, (i + 1) * step
        for j in range(g_in):
            a[i, j] = max(0.0, min(hi, j + 1) - max(lo, j)) / step
    return np.kron(a, a)


# ---------------------------------------------------------------------------
# masked reconstruction


def sample_masks(n, n_pos, mask_ratio, rng):
    """Per-sample (visible, masked) index arrays, each sorted."""
    n_mask = int(round(n_pos * mask_ratio))
    n_vis = n_pos - n_mask
    if n_vis < 1 or n_mask < 1:
        raise DegenerateMask(f"mask ratio {mask_ratio} leaves {n_vis} visible / {n_mask} masked tokens")
    perm = np.argsort(rng.random((n, n_pos)), axis=1)
    return np.sort(perm[:, :n_vis], axis=1), np.sort(perm[:, n_vis:], axis=1)


def _onehot_pos(idx, n_pos):
    n, t = idx.shape
    out = np.zeros((n, t, n_pos))
    out[np.arange(n)[:, None], np.arange(t)[None, :], idx] = 1.0
    return out


def decoder_forward(dparams, cfg, enc_tokens, vis, masked):
    """Map encoded visible tokens (N, 1+V, d) to patch predictions at masked positions."""
    n = enc_tokens.shape[0]
    P = cfg.n_pos
    y = enc_tokens @ dparams["dec.embed.W"] + dparams["dec.embed.b"]
    dd = y.shape[-1]
    full = np.empty((n, P + 1, dd))
    full[:, 0] = y[:, 0]
    rows = np.arange(n)[:, None]
    full[rows, vis + 1] = y[:, 1:]
    full[rows, masked + 1] = dparams["dec.mask"]
    full[:, 1:] += dparams["dec.pos"]
    x = full
    caches = []
    i = 1
    while f"dec.blocks.{i}.W1" in dparams:
        x, c = _ctx_mlp_forward(x, dparams, f"dec.blocks.{i}")
        caches.append(c)
        i += 1
    h, c_ln = layernorm_forward(x, dparams["dec.norm.gamma"], dparams["dec.norm.beta"])
    hm = h[rows, masked + 1]
    pred = hm @ dparams["dec.out.W"] + dparams["dec.out.b"]
    return pred, (enc_tokens, vis, masked, caches, c_ln, hm, h.shape)


def decoder_backward(dparams, dpred, cache):
    enc_tokens, vis, masked, caches, c_ln, hm, hshape = cache
    grads = {}
    n = enc_tokens.shape[0]
    dd = hm.shape[-1]
    rows = np.arange(n)[:, None]
    grads["dec.out.W"] = hm.reshape(-1, dd).T @ dpred.reshape(-1, dpred.shape[-1])
    grads["dec.out.b"] = dpred.reshape(-1, dpred.shape[-1]).sum(0)
    dh = np.zeros(hshape)
    dh[rows, masked + 1] = dpred @ dparams["dec.out.W"].T
    dx, dg, db = layernorm_backward(dh, c_ln)
    grads["dec.norm.gamma"] = dg
    grads["dec.norm.beta"] = db
    for i in range(len(caches), 0, -1):
        dx = _ctx_mlp_backward(dx, caches[i - 1], dparams, f"dec.blocks.{i}", grads)
    grads["dec.pos"] = dx[:, 1:].sum(0)
    grads["dec.mask"] = dx[rows, masked + 1].reshape(-1, dd).sum(0)
    dy = np.empty(enc_tokens.shape[:2] + (dd,))
    dy[:, 0] = dx[:, 0]
    dy[:, 1:] = dx[rows, vis + 1]
    d = enc_tokens.shape[-1]
    grads["dec.embed.W"] = enc_tokens.reshape(-1, d).T @ dy.reshape(-1, dd)
    grads["dec.embed.b"] = dy.reshape(-1, dd).sum(0)
    return grads, dy @ dparams["dec.embed.W"].T


def mim_loss(eparams, dparams, cfg, tokens, vis, masked, block=None, need_grad=True):
    """Masked-position MSE. ``block`` selects which block's tokens feed the decoder.

    When ``block`` is given the encoder is treated as frozen (no encoder grads).
    """
    n = tokens.shape[0]
    rows = np.arange(n)[:, None]
    vis_tokens = tokens[rows, vis]
    pos_map = _onehot_pos(vis, cfg.n_pos)
    frozen = block is not None
    res = encoder_forward(eparams, cfg, vis_tokens, pos_map, keep_tokens=frozen,
                          need_cache=need_grad and not frozen)
    enc_out = res.tokens[block - 1] if frozen else res.final_tokens
    target = tokens[rows, masked]
    pred, dcache = decoder_forward(dparams, cfg, enc_out, vis, masked)
    diff = pred - target
    loss = float(np.mean(diff * diff))
    if not need_grad:
        return loss, None, None
    dpred = 2.0 * diff / diff.size
    dgrads, d_enc = decoder_backward(dparams, dpred, dcache)
    egrads = {} if frozen else encoder_backward(eparams, cfg, res.cache, final_grad=d_enc)
    return loss, egrads, dgrads


def _train_mim(eparams, dparams, cfg, mim, tokens, rng, block=None):
    n = len(tokens)
    steps_per_epoch = max(1, -(-n // mim.batch_size))
    total = mim.epochs * steps_per_epoch
    warm = mim.warmup_epochs * steps_per_epoch
    opt = AdamW(betas=(0.9, 0.95))
    frozen = block is not None
    params = dict(dparams) if frozen else {**eparams, **dparams}
    wd = {k: mim.weight_decay for k in params if decays(k)}
    curve = []
    step = 0
    for _ in range(mim.epochs):
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, mim.batch_size):
            idx = order[s:s + mim.batch_size]
            vis, masked = sample_masks(len(idx), cfg.n_pos, mim.mask_ratio, rng)
            loss, eg, dg = mim_loss(eparams, dparams, cfg, tokens[idx], vis, masked, block)
            lr = warmup_cosine(step, total, warm, mim.lr, mim.lr * 1e-2)
            opt.step(params, {**eg, **dg}, lr, wd=wd)
            losses.append(loss)
            step += 1
        curve.append(float(np.mean(losses)))
    return curve


def mim_pretrain(cfg, mim, data, rng, init=None):
    """Masked reconstruction pre-training. Returns (encoder params, per-epoch loss)."""
    rng = as_rng(rng)
    tokens = to_tokens(data, cfg)
    if len(tokens) == 0:
        raise ValueError("empty dataset")
    # fail early on degenerate masks even when epochs == 0
    sample_masks(1, cfg.n_pos, mim.mask_ratio, rng.split(0))
    eparams = init_encoder(cfg, rng.split(1)) if init is None else {k: v.copy() for k, v in init.items()}
    dparams = init_decoder(cfg, mim, rng.split(2))
    curve = _train_mim(eparams, dparams, cfg, mim, tokens, rng.split(3))
    return eparams, curve


def per_block_reconstruction_probe(eparams, cfg, mim, data, rng, epochs=10):
    """Train one fresh decoder per block on frozen features; return held masked losses.

    Every decoder starts from the same init and sees the same batches and
    masks (common random numbers), so loss differences between blocks come
    from the features alone.
    """
    rng = as_rng(rng)
    tokens = to_tokens(data, cfg)
    frozen = {k: v.copy() for k, v in eparams.items()}
    probe_cfg = MimConfig(**{**mim.__dict__, "epochs": epochs})
    eval_rng = rng.split(10_000)
    vis, masked = sample_masks(len(tokens), cfg.n_pos, mim.mask_ratio, eval_rng)
    losses = []
    for b in range(1, cfg.depth + 1):
        brng = rng.split(0)
        dparams = init_decoder(cfg, mim, brng.split(0))
        _train_mim(frozen, dparams, cfg, probe_cfg, tokens, brng.split(1), block=b)
        ev = []
        for s in range(0, len(tokens), 512):
            sl = slice(s, s + 512)
            loss, _, _ = mim_loss(frozen, dparams, cfg, tokens[sl], vis[sl], masked[sl],
                                  block=b, need_grad=False)
            ev.append(loss * (min(s + 512, len(tokens)) - s))
        losses.append(float(np.sum(ev) / len(tokens)))
    return np.array(losses)


def relative_improvement(metric_per_block):
    """Successive block deltas divided by the largest absolute delta."""
    m = np.asarray(metric_per_block, dtype=np.float64)
    if m.size < 2:
        raise TooShort("need at least two blocks")
    delta = np.diff(m)
    peak = np.max(np.abs(delta))
    if peak == 0:
        return np.zeros_like(delta)
    return delta / peak
