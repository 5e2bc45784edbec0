"""Refinement of a pre-trained encoder with an ensemble of NNA heads.

One training step:

1. build 2 global + n_local views of every sample in the batch;
2. run the encoder once per view, tapping the class token after each
   attached block;
3. per head: project/predict every view, pull each anchor toward a queue
   neighbor of the other global view's projection (a random global view for
   local anchors), push it from the global projections of other samples;
4. backprop schedule-weighted losses through heads into the encoder, take an
   AdamW step with layer-wise lr decay, enqueue global projections, update EMA.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ViewConfig, make_views_batch
from .encoder import encoder_backward, encoder_forward
from .errors import ConfigError, NonFiniteLoss
from .heads import SCHEDULE_KINDS, EnsembleConfig, HeadConfig, ScheduleSpec, head_backward, head_forward, init_head, schedule_weight
from .nna import build_batch_nna, nna_loss
from .numerics import as_rng
from .optim import AdamW, EmaState, block_index, decays, ema_update, warmup_cosine
from .queue import QueueConfig, SupportQueue

log = logging.getLogger(__name__)


@dataclass
class RefineConfig:
    epochs: int = 30
    batch_size: int = 128
    peak_lr: float = 4e-4
    warmup_epochs: int = 4
    end_lr: float = 1e-6
    layer_decay: float = 0.65
    freeze_blocks: int = 0
    encoder_weight_decay: float = 0.05
    head_weight_decay: float = 1e-5
    betas: tuple = (0.9, 0.95)
    tau: float = 0.2
    queue: QueueConfig = field(default_factory=QueueConfig)
    ema_momentum: float = 0.9999
    views: ViewConfig = field(default_factory=ViewConfig)
    schedule: str = "constant"
    swap_negatives: bool = False
    init_epochs: int = 5
    init_lr: float = 2e-4
    knn_every: int = 0         # epochs between subset k-NN evaluations (0 = off)

    def validate(self, depth):
        if not 0 < self.layer_decay <= 1:
            raise ConfigError("layer_decay must lie in (0, 1]")
        if not 0 <= self.freeze_blocks < depth:
            raise ConfigError("freeze_blocks must lie in [0, depth)")
        if not 0 <= self.ema_momentum <= 1:
            raise ConfigError("ema_momentum must lie in [0, 1]")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.schedule not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule {self.schedule!r}")


def lr_schedule(step, total_steps, cfg, steps_per_epoch):
    """Linear warmup to ``peak_lr`` then cosine decay to ``end_lr``."""
    return warmup_cosine(step, total_steps, cfg.warmup_epochs * steps_per_epoch, cfg.peak_lr, cfg.end_lr)


@dataclass
class RefineState:
    encoder: dict
    enc_cfg: object
    ensemble: EnsembleConfig
    heads: list
    queues: list
    optimizer: AdamW = None
    ema: EmaState = None
    step: int = 0


def build_state(encoder, enc_cfg, ensemble, rng, queue_cfg=None):
    ensemble.validate(enc_cfg.depth)
    rng = as_rng(rng)
    cfgs = ensemble.head_cfgs or [HeadConfig(enc_cfg.width) for _ in ensemble.attach_indices]
    heads = [init_head(c, rng.split(i)) for i, c in enumerate(cfgs)]
    capacity = (queue_cfg or QueueConfig()).capacity
    queues = [SupportQueue(c.bottleneck, capacity) for c in cfgs]
    return RefineState({k: v.copy() for k, v in encoder.items()}, enc_cfg, ensemble, heads, queues)


def _head_param_name(i, name):
    return f"head{i}.{name}"


def _train_step(state, xb, yb, cfg, k, rng, progress, ref_std, update_encoder, sched):
    enc_cfg = state.enc_cfg
    n = len(xb)
    views = make_views_batch(xb, cfg.views, enc_cfg, rng.split(0), ref_std)
    n_views = len(views)
    ng = cfg.views.n_global
    results = [encoder_forward(state.encoder, enc_cfg, v.tokens, v.pos_map, need_cache=update_encoder)
               for v in views]
    sample_ids = np.tile(np.arange(n), n_views)
    glob_ids = np.tile(np.arange(n), ng)
    # positive source: the other global view (globals), a random global view (locals)
    other = np.empty(n_views * n, dtype=np.int64)
    for v in range(n_views):
        if v < ng:
            src = (v + 1) % ng if ng > 1 else 0
            other[v * n:(v + 1) * n] = src * n + np.arange(n)
        else:
            pick = rng.split(1 + v).integers(0, ng, size=n)
            other[v * n:(v + 1) * n] = pick * n + np.arange(n)

    head_losses, nn_acc, weights = [], [], []
    tap_grads = [dict() for _ in views]
    head_grads = {}
    pending = []
    total = 0.0
    for i, (head, queue, blk) in enumerate(zip(state.heads, state.queues, state.ensemble.attach_indices)):
        feats = np.concatenate([r.taps[blk - 1] for r in results])
        out = head_forward(head, feats, "train")
        gproj = out.proj[:ng * n]
        glabels = None if yb is None else np.tile(yb, ng)
        seeded = queue.filled < k
        if seeded:
            # cold start: the current batch goes in now instead of after the step
            queue.enqueue(gproj, glabels)
        nn_acc.append(float("nan") if yb is None else queue.nn_swap_accuracy(gproj, glabels))
        batch = build_batch_nna(out.pred, out.proj[other], queue, cfg.tau, k,
                                swap_negatives=cfg.swap_negatives, same_sample_groups=sample_ids,
                                rng=rng.split(100 + i), negatives=gproj, negative_groups=glob_ids)
        res = nna_loss(batch)
        if not np.isfinite(res.loss):
            raise NonFiniteLoss(f"non-finite loss in head {i} at step {state.step}")
        w = schedule_weight(sched, i, progress)
        head_losses.append(res.loss)
        weights.append(w)
        total += w * res.loss
        if w > 0:
            g, g_in = head_backward(head, out.cache, grad_pred=w * res.grad_anchors)
            for name, val in g.items():
                head_grads[_head_param_name(i, name)] = val
            if update_encoder:
                for v in range(n_views):
                    gv = g_in[v * n:(v + 1) * n]
                    tap_grads[v][blk] = tap_grads[v].get(blk, 0.0) + gv
        pending.append(None if seeded else (gproj, glabels))

    enc_grads = {}
    if update_encoder:
        for r, tg in zip(results, tap_grads):
            if not tg:
                continue
            g = encoder_backward(state.encoder, enc_cfg, r.cache, tg, stop_below=cfg.freeze_blocks)
            for name, val in g.items():
                enc_grads[name] = enc_grads[name] + val if name in enc_grads else val
    return total, head_losses, nn_acc, weights, enc_grads, head_grads, pending


def _flat_head_params(state):
    out = {}
    for i, h in enumerate(state.heads):
        for name, p in h.params.items():
            out[_head_param_name(i, name)] = p
    return out


def _run(state, data, labels, cfg, epochs, peak_lr, k, rng, update_encoder, ref_std, eval_fn=None):
    enc_cfg = state.enc_cfg
    n = len(data)
    bs = min(cfg.batch_size, n)
    steps_per_epoch = max(1, n // bs)
    total_steps = epochs * steps_per_epoch
    sched = ScheduleSpec(cfg.schedule, len(state.heads)) if update_encoder else ScheduleSpec("constant", len(state.heads))
    depth = enc_cfg.depth
    head_params = _flat_head_params(state)
    params = dict(head_params)
    lr_scale = {k_: 1.0 for k_ in head_params}
    wd = {k_: cfg.head_weight_decay for k_ in head_params if decays(k_)}
    skip = set()
    if update_encoder:
        for name, p in state.encoder.items():
            b = block_index(name)
            params[name] = p
            lr_scale[name] = cfg.layer_decay ** (depth - b)
            if decays(name):
                wd[name] = cfg.encoder_weight_decay
            if cfg.freeze_blocks >= 1 and b <= cfg.freeze_blocks:
                skip.add(name)
    opt = AdamW(betas=tuple(cfg.betas))
    sched_cfg = RefineConfig(**{**cfg.__dict__, "peak_lr": peak_lr})
    rows, epoch_rows = [], []
    step = 0
    for epoch in range(epochs):
        erng = rng.split(epoch)
        order = erng.permutation(n)
        ep_losses, ep_acc = [], []
        for s in range(steps_per_epoch):
            idx = order[s * bs:(s + 1) * bs]
            progress = step / max(total_steps - 1, 1)
            lr = lr_schedule(step, total_steps, sched_cfg, steps_per_epoch)
            total, losses, acc, weights, eg, hg, pending = _train_step(
                state, data[idx], None if labels is None else labels[idx], cfg, k,
                erng.split(1 + s), min(progress, 1.0), ref_std, update_encoder, sched)
            opt.step(params, {**eg, **hg}, lr, lr_scale=lr_scale, wd=wd, skip=skip)
            for q, item in zip(state.queues, pending):
                if item is not None:
                    q.enqueue(*item)
            if update_encoder and state.ema is not None:
                ema_update(state.ema, state.encoder)
            row = {"step": state.step, "epoch": epoch, "lr": lr, "loss": total}
            for i, (l_, a_, w_) in enumerate(zip(losses, acc, weights)):
                row[f"loss_h{i}"] = l_
                row[f"nn_acc_h{i}"] = a_
                row[f"weight_h{i}"] = w_
            rows.append(row)
            ep_losses.append(losses)
            ep_acc.append(acc)
            step += 1
            state.step += 1
        erow = {"epoch": epoch, "loss": float(np.mean([sum(l) for l in ep_losses]))}
        for i in range(len(state.heads)):
            erow[f"loss_h{i}"] = float(np.mean([l[i] for l in ep_losses]))
            erow[f"nn_acc_h{i}"] = float(np.mean([a[i] for a in ep_acc]))
        if eval_fn is not None and cfg.knn_every and (epoch + 1) % cfg.knn_every == 0:
            erow["knn"] = float(eval_fn(state))
        epoch_rows.append(erow)
        log.info("epoch %d loss %.4f", epoch, erow["loss"])
    state.optimizer = opt
    return {"steps": rows, "epochs": epoch_rows}


def init_heads_phase(state, data, cfg, rng, labels=None, ref_std=1.0):
    """Train heads on a frozen encoder with top-1 retrieval; warms the queues."""
    rng = as_rng(rng)
    return _run(state, np.asarray(data), labels, cfg, cfg.init_epochs, cfg.init_lr, 1,
                rng, update_encoder=False, ref_std=ref_std)


def refine(state, data, cfg, rng, labels=None, ref_std=1.0, eval_fn=None):
    """Refine ``state.encoder`` in place. Returns logs; ``state.ema`` holds the EMA."""
    cfg.validate(state.enc_cfg.depth)
    rng = as_rng(rng)
    if state.ema is None:
        state.ema = EmaState.from_params(state.encoder, cfg.ema_momentum)
    return _run(state, np.asarray(data), labels, cfg, cfg.epochs, cfg.peak_lr, cfg.queue.top_k,
                rng, update_encoder=True, ref_std=ref_std, eval_fn=eval_fn)
