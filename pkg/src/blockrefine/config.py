"""YAML experiment configuration.

Every section is a plain dataclass; :func:`to_dict` / :func:`from_dict` map
them to and from nested dicts so a config file round-trips exactly. The
defaults describe the desk-scale pipeline used by the acceptance suite.
"""
import dataclasses
import typing
from dataclasses import dataclass, field

import yaml

from .cluster import KmeansConfig
from .data import BlobDatasetConfig, ViewConfig
from .encoder import EncoderConfig, MimConfig
from .errors import ConfigError
from .probe import KnnConfig
from .queue import QueueConfig
from .refine import RefineConfig

STAGES = ("pretrain", "analyze_blocks", "init_heads", "refine", "probe", "cluster")

# stage -> stages whose artifacts it reads
DEPENDS = {
    "pretrain": (),
    "analyze_blocks": ("pretrain",),
    "init_heads": ("pretrain",),
    "refine": ("init_heads",),
    "probe": ("pretrain",),
    "cluster": ("pretrain",),
}


@dataclass
class AnalyzeConfig:
    knn: KnnConfig = field(default_factory=KnnConfig)
    recon_probe: bool = True
    recon_epochs: int = 5
    cluster_similarity: bool = True


@dataclass
class HeadsConfig:
    attach: list = None        # 1-based block indices; None means the last third
    projector_hidden: int = 128
    bottleneck: int = 32
    predictor_hidden: int = 256


@dataclass
class ProbeConfig:
    knn: KnnConfig = field(default_factory=KnnConfig)
    linear_epochs: int = 200
    linear_lr: float = 0.5
    linear_weight_decay: float = 1e-4
    low_shot: list = field(default_factory=lambda: [1, 5])


@dataclass
class ClusterConfig:
    minibatch_size: int = 256
    iterations: int = 50
    restarts: int = 100
    export_embeddings: bool = True

    def kmeans(self, k, seed):
        return KmeansConfig(k, self.minibatch_size, self.iterations, self.restarts, seed)


def desk_data():
    return BlobDatasetConfig(n_classes=8, n_per_class=200, noise=0.1, offset=1.0,
                             contrast=0.3, max_shift=2)


def desk_encoder():
    return EncoderConfig(depth=8, width=32, mlp_ratio=2)


def desk_refine():
    return RefineConfig(epochs=8, batch_size=64, peak_lr=2e-3, warmup_epochs=1,
                        queue=QueueConfig(capacity=1024, top_k=5), views=ViewConfig(),
                        init_epochs=3, init_lr=2e-3)


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    stages: list = field(default_factory=lambda: list(STAGES))
    test_fraction: float = 0.25
    evaluate_ema: bool = False
    data: BlobDatasetConfig = field(default_factory=desk_data)
    encoder: EncoderConfig = field(default_factory=desk_encoder)
    pretrain: MimConfig = field(default_factory=MimConfig)
    analyze_blocks: AnalyzeConfig = field(default_factory=AnalyzeConfig)
    heads: HeadsConfig = field(default_factory=HeadsConfig)
    refine: RefineConfig = field(default_factory=desk_refine)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)

    def validate(self):
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages: {unknown}")
        if len(set(self.stages)) != len(self.stages):
            raise ConfigError("stages listed twice")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        self.refine.validate(self.encoder.depth)
        return self

    def ordered_stages(self):
        """Requested stages in dependency order."""
        return [s for s in STAGES if s in self.stages]


# ---------------------------------------------------------------------------
# dict / YAML conversion


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def _check_scalar(cls, name, tp, value):
    bad = ConfigError(f"{cls.__name__}.{name}: expected {getattr(tp, '__name__', tp)}, got {value!r}")
    if tp is bool:
        if not isinstance(value, bool):
            raise bad
    elif tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad
    elif tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad
        value = float(value)
    elif tp is str and not isinstance(value, str):
        raise bad
    return value


def from_dict(cls, data, base=None):
    """Build ``cls`` from a mapping, overlaying the keys present onto ``base``.

    ``base`` defaults to ``cls()``; nested sections overlay onto the parent's
    default for that field, so a partial section keeps the desk-scale defaults.
    """
    base = cls() if base is None else base
    if data is None:
        return base
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(extra)}")
    kwargs = {}
    for name, value in data.items():
        tp = hints.get(name)
        if dataclasses.is_dataclass(tp):
            value = from_dict(tp, value, getattr(base, name))
        elif tp is tuple and isinstance(value, list):
            value = tuple(value)
        else:
            value = _check_scalar(cls, name, tp, value)
        kwargs[name] = value
    try:
        return dataclasses.replace(base, **kwargs)
    except TypeError as e:
        raise ConfigError(f"{cls.__name__}: {e}") from e


def loads(text):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML: {e}") from e
    return from_dict(ExperimentConfig, data or {}).validate()


def dumps(cfg):
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def load_config(path):
    try:
        with open(path) as f:
            return loads(f.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def save_config(cfg, path):
    with open(path, "w") as f:
        f.write(dumps(cfg))
