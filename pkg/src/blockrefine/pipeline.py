"""Stage orchestration: pretrain -> analyze -> init heads -> refine -> evaluate.

Every stage reads its inputs from files in ``out_dir`` and writes its own
artifacts there, so any stage can be rerun on its own once its upstream
artifacts exist. The aggregate report contains no timestamps and is
byte-identical across reruns with the same seed.
"""
import json
import logging
import os
from dataclasses import replace

import numpy as np

from . import io
from .cluster import block_cluster_similarity, cluster_report, minibatch_kmeans
from .config import DEPENDS, STAGES, ExperimentConfig, load_config, to_dict
from .data import generate_blobs, stratified_split
from .encoder import encode_batched, mim_pretrain, per_block_reconstruction_probe, relative_improvement
from .errors import BlockRefineError, ConfigError, NonFinite, StageError
from .heads import EnsembleConfig, HeadConfig, last_third
from .numerics import RngStream, l2_normalize_rows
from .probe import ProbeDataset, knn_probe, linear_probe, low_shot_split, per_block_knn
from .queue import SupportQueue
from .refine import build_state, init_heads_phase, refine

log = logging.getLogger(__name__)

# files a stage leaves behind; downstream stages look for these
ARTIFACTS = {
    "pretrain": "encoder_pre.mrfc",
    "analyze_blocks": "analyze_blocks_result.json",
    "init_heads": "heads_init.mrfc",
    "refine": "encoder_refined.mrfc",
    "probe": "probe_result.json",
    "cluster": "cluster_result.json",
}
STREAM = {name: i + 1 for i, name in enumerate(STAGES)}


class Context:
    def __init__(self, cfg):
        self.cfg = cfg
        self.out = cfg.out_dir
        self._data = None

    def path(self, name):
        return os.path.join(self.out, name)

    def has(self, stage):
        return os.path.exists(self.path(ARTIFACTS[stage]))

    @property
    def data(self):
        if self._data is None:
            ds = generate_blobs(replace(self.cfg.data, seed=self.cfg.seed))
            tr, te = stratified_split(ds.y, self.cfg.test_fraction, self.cfg.seed)
            self._data = (ds, tr, te)
        return self._data

    def rng(self, stage):
        return RngStream(self.cfg.seed).split(STREAM[stage])

    def stamp(self, stage):
        return {"stage": stage, "seed": self.cfg.seed, "stream": STREAM[stage]}

    def write_json(self, name, obj):
        with open(self.path(name), "w") as f:
            f.write(dumps_report(obj))

    def read_json(self, name):
        with open(self.path(name)) as f:
            return json.load(f)

    def encoders(self):
        """``{"pre": params, "post": params}``; "post" only once refine has run."""
        out = {"pre": io.load_checkpoint(self.path(ARTIFACTS["pretrain"]))[0]}
        if self.has("refine"):
            arrays, _ = io.load_checkpoint(self.path(ARTIFACTS["refine"]))
            prefix = "ema." if self.cfg.evaluate_ema else "encoder."
            out["post"] = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        return out


def _finite(obj, where):
    """Raise NonFinite if any number nested in ``obj`` is NaN or infinite."""
    if isinstance(obj, dict):
        for k, v in obj.items():
            _finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _finite(v, f"{where}[{i}]")
    elif isinstance(obj, float) and not np.isfinite(obj):
        raise NonFinite(f"non-finite value at {where}")
    return obj


def _py(obj):
    if isinstance(obj, dict):
        return {str(k): _py(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_py(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _py(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps_report(obj):
    return json.dumps(_py(obj), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# stages


def stage_pretrain(ctx):
    cfg = ctx.cfg
    ds, _, _ = ctx.data
    params, curve = mim_pretrain(cfg.encoder, cfg.pretrain, ds.x, ctx.rng("pretrain"))
    io.save_checkpoint(ctx.path(ARTIFACTS["pretrain"]), params, ctx.stamp("pretrain"))
    io.write_csv(ctx.path("pretrain_loss.csv"), [{"epoch": i, "loss": l} for i, l in enumerate(curve)])
    return {**ctx.stamp("pretrain"), "loss_curve": list(curve)}


def _block_cluster_labels(feats, k, cfg, seed):
    return [minibatch_kmeans(l2_normalize_rows(f), cfg.cluster.kmeans(k, seed)).labels for f in feats]


def stage_analyze_blocks(ctx):
    cfg = ctx.cfg
    ds, tr, te = ctx.data
    params = ctx.encoders()["pre"]
    knn = per_block_knn(params, cfg.encoder, ds.x[tr], ds.y[tr], ds.x[te], ds.y[te], cfg.analyze_blocks.knn)
    out = {**ctx.stamp("analyze_blocks"), "knn_per_block": knn,
           "knn_relative_improvement": relative_improvement(knn)}
    if cfg.analyze_blocks.recon_probe:
        rec = per_block_reconstruction_probe(params, cfg.encoder, cfg.pretrain, ds.x,
                                             ctx.rng("analyze_blocks"), cfg.analyze_blocks.recon_epochs)
        out["recon_loss_per_block"] = rec
        # lower loss is better, so improvements are measured on the negated loss
        out["recon_relative_improvement"] = relative_improvement(-rec)
    if cfg.analyze_blocks.cluster_similarity and cfg.encoder.depth >= 2:
        feats = encode_batched(params, cfg.encoder, ds.x, "per_block")
        labels = _block_cluster_labels(feats, cfg.data.n_classes, cfg, cfg.seed)
        out["cluster_similarity"] = block_cluster_similarity(labels)
    return out


def _ensemble(cfg):
    h = cfg.heads
    attach = list(h.attach) if h.attach is not None else last_third(cfg.encoder.depth)
    hc = [HeadConfig(cfg.encoder.width, h.projector_hidden, h.bottleneck, h.predictor_hidden) for _ in attach]
    return EnsembleConfig(attach, hc)


def _save_heads(path, state, meta):
    arrays = {}
    for i, (h, q) in enumerate(zip(state.heads, state.queues)):
        arrays.update({f"head{i}.param.{k}": v for k, v in h.params.items()})
        arrays.update({f"head{i}.buffer.{k}": v for k, v in h.buffers.items()})
        vecs, labels = q.ordered()
        arrays[f"head{i}.queue.vectors"] = vecs
        arrays[f"head{i}.queue.labels"] = labels.astype(np.float64)
    io.save_checkpoint(path, arrays, {**meta, "capacity": state.queues[0].capacity if state.queues else 0})


def _load_heads(path, state):
    arrays, meta = io.load_checkpoint(path)
    for i, h in enumerate(state.heads):
        for k in h.params:
            h.params[k] = arrays[f"head{i}.param.{k}"]
        for k in h.buffers:
            h.buffers[k] = arrays[f"head{i}.buffer.{k}"]
        vecs = arrays[f"head{i}.queue.vectors"]
        q = SupportQueue(vecs.shape[1], int(meta["capacity"]))
        if len(vecs):
            q.enqueue(vecs, arrays[f"head{i}.queue.labels"].astype(np.int64))
        state.queues[i] = q


def _epoch_summary(logs):
    return [{k: v for k, v in row.items()} for row in logs["epochs"]]


def stage_init_heads(ctx):
    cfg = ctx.cfg
    ds, _, _ = ctx.data
    params = ctx.encoders()["pre"]
    rng = ctx.rng("init_heads")
    state = build_state(params, cfg.encoder, _ensemble(cfg), rng.split(0), cfg.refine.queue)
    logs = init_heads_phase(state, ds.x, cfg.refine, rng.split(1), labels=ds.y, ref_std=float(ds.x.std()))
    _save_heads(ctx.path(ARTIFACTS["init_heads"]), state, ctx.stamp("init_heads"))
    io.write_csv(ctx.path("init_heads_log.csv"), logs["steps"])
    return {**ctx.stamp("init_heads"), "epochs": _epoch_summary(logs)}


def stage_refine(ctx):
    cfg = ctx.cfg
    ds, _, _ = ctx.data
    params = ctx.encoders()["pre"]
    rng = ctx.rng("refine")
    # head shapes come from the config; trained values from the init_heads checkpoint
    state = build_state(params, cfg.encoder, _ensemble(cfg), rng.split(0), cfg.refine.queue)
    _load_heads(ctx.path(ARTIFACTS["init_heads"]), state)
    logs = refine(state, ds.x, cfg.refine, rng.split(1), labels=ds.y, ref_std=float(ds.x.std()))
    arrays = {f"encoder.{k}": v for k, v in state.encoder.items()}
    arrays.update({f"ema.{k}": v for k, v in state.ema.shadow.items()})
    io.save_checkpoint(ctx.path(ARTIFACTS["refine"]), arrays, ctx.stamp("refine"))
    _save_heads(ctx.path("heads_refined.mrfc"), state, ctx.stamp("refine"))
    io.write_csv(ctx.path("refine_log.csv"), logs["steps"])
    return {**ctx.stamp("refine"), "epochs": _epoch_summary(logs)}


def stage_probe(ctx):
    cfg = ctx.cfg
    pc = cfg.probe
    ds, tr, te = ctx.data
    out = ctx.stamp("probe")
    for tag, params in ctx.encoders().items():
        knn = per_block_knn(params, cfg.encoder, ds.x[tr], ds.y[tr], ds.x[te], ds.y[te], pc.knn)
        feats = encode_batched(params, cfg.encoder, ds.x, "final_only")
        pds = ProbeDataset(feats[tr], ds.y[tr], feats[te], ds.y[te])
        res = {"knn_per_block": knn, "knn_relative_improvement": relative_improvement(knn),
               "knn": knn_probe(pds, pc.knn),
               "linear": linear_probe(pds, pc.linear_epochs, pc.linear_lr, pc.linear_weight_decay,
                                      n_classes=cfg.data.n_classes)}
        low = {}
        for n in pc.low_shot:
            split = low_shot_split(feats, ds.y, n, cfg.seed)
            # a 1-shot split has fewer train rows than the default k
            kcfg = replace(pc.knn, k=min(pc.knn.k, len(split.train_y)))
            low[str(n)] = {"knn": knn_probe(split, kcfg),
                           "linear": linear_probe(split, pc.linear_epochs, pc.linear_lr,
                                                  pc.linear_weight_decay, n_classes=cfg.data.n_classes)}
        res["low_shot"] = low
        out[tag] = res
    if "post" in out:
        out["knn_delta_per_block"] = np.asarray(out["post"]["knn_per_block"]) - np.asarray(out["pre"]["knn_per_block"])
    return out


def stage_cluster(ctx):
    cfg = ctx.cfg
    ds, _, _ = ctx.data
    out = ctx.stamp("cluster")
    for tag, params in ctx.encoders().items():
        feats = encode_batched(params, cfg.encoder, ds.x, "final_only")
        if cfg.cluster.export_embeddings:
            io.export_embeddings(ctx.path(f"embeddings_{tag}.mrfe"), feats, ds.y)
        out[tag] = cluster_report(feats, ds.y, cfg.cluster.kmeans(cfg.data.n_classes, cfg.seed))
    return out


STAGE_FNS = {
    "pretrain": stage_pretrain,
    "analyze_blocks": stage_analyze_blocks,
    "init_heads": stage_init_heads,
    "refine": stage_refine,
    "probe": stage_probe,
    "cluster": stage_cluster,
}


# ---------------------------------------------------------------------------
# driver


def check_dag(cfg):
    """Every requested stage's inputs must be requested upstream or already on disk."""
    ctx = Context(cfg)
    planned = set()
    for stage in cfg.ordered_stages():
        for dep in DEPENDS[stage]:
            if dep not in planned and not ctx.has(dep):
                raise ConfigError(f"stage {stage!r} needs {dep!r}: not scheduled and "
                                  f"{ARTIFACTS[dep]} missing in {cfg.out_dir}")
        planned.add(stage)


def run_stage(cfg, stage):
    """Run one stage, persisting ``<stage>_result.json``; errors carry the stage name."""
    ctx = Context(cfg)
    try:
        result = _finite(_py(STAGE_FNS[stage](ctx)), stage)
    except StageError:
        raise
    except Exception as e:
        raise StageError(stage, e) from e
    ctx.write_json(f"{stage}_result.json", result)
    return result


def build_report(cfg):
    """Aggregate every ``<stage>_result.json`` present in ``out_dir``."""
    ctx = Context(cfg)
    stages = {}
    for stage in STAGES:
        p = ctx.path(f"{stage}_result.json")
        if os.path.exists(p):
            stages[stage] = ctx.read_json(f"{stage}_result.json")
    report = {"seed": cfg.seed, "config": to_dict(cfg), "stages": stages}
    # out_dir is where the run lives, not what it computed
    report["config"].pop("out_dir")
    return report


def run_experiment(config, out_dir=None, seed=None, stages=None):
    """Run the configured stages in dependency order and write ``report.json``.

    ``config`` is an ExperimentConfig or a path to a YAML file. Returns the report dict.
    """
    cfg = load_config(config) if isinstance(config, (str, os.PathLike)) else config
    if out_dir is not None:
        cfg = replace(cfg, out_dir=str(out_dir))
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if stages is not None:
        cfg = replace(cfg, stages=list(stages))
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    check_dag(cfg)
    for stage in cfg.ordered_stages():
        log.info("running stage %s", stage)
        run_stage(cfg, stage)
    report = build_report(cfg)
    with open(os.path.join(cfg.out_dir, "report.json"), "w") as f:
        f.write(dumps_report(report))
    return report
