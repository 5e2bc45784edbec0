"""Synthetic blob datasets and multi-crop view generation."""
from dataclasses import dataclass, field

import numpy as np

from .encoder import area_resample_matrix, patchify
from .errors import ConfigError
from .numerics import as_rng


@dataclass
class BlobDatasetConfig:
    n_classes: int = 8
    n_per_class: int = 200
    mode: str = "image"        # "image" or "vector"
    dim: int = 32              # vector mode
    image_size: int = 16       # image mode
    spread: float = 1.0
    noise: float = 0.3
    bumps: int = 3             # image mode: Gaussian bumps per class template
    offset: float = 0.0        # image mode: std of a per-sample intensity offset
    gradient: float = 0.0      # image mode: std of a per-sample linear intensity ramp
    contrast: float = 0.0      # image mode: log-std of a per-sample template gain
    max_shift: int = 0         # image mode: per-sample random translation (pixels)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("image", "vector"):
            raise ConfigError(f"unknown dataset mode {self.mode!r}")
        if self.spread <= 0 or self.noise < 0:
            raise ConfigError("need spread > 0 and noise >= 0")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    centers: np.ndarray
    cfg: BlobDatasetConfig


def _class_templates(cfg, rng):
    s = cfg.image_size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    out = np.zeros((cfg.n_classes, s, s))
    for c in range(cfg.n_classes):
        for _ in range(cfg.bumps):
            cy, cx = rng.uniform(1.5, s - 2.5, size=2)
            width = rng.uniform(0.12, 0.22) * s
            amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.6, 1.0)
            out[c] += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
        out[c] -= out[c].mean()
        out[c] *= cfg.spread / np.sqrt((out[c] ** 2).mean())
    return out


def generate_blobs(cfg):
    """Class centers drawn once from the seed; samples are center + Gaussian noise.

    Image mode paints class templates on an ``image_size`` grid and can add
    per-sample nuisance (gain, offset, linear ramp) and random translation.
    """
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    n = cfg.n_classes * cfg.n_per_class
    y = np.repeat(np.arange(cfg.n_classes), cfg.n_per_class)
    if cfg.mode == "vector":
        centers = rng.normal(0.0, cfg.spread, size=(cfg.n_classes, cfg.dim))
        x = centers[y] + rng.normal(0.0, 1.0, size=(n, cfg.dim)) * cfg.noise
        return Dataset(x, y, centers, cfg)
    centers = _class_templates(cfg, rng)
    x = centers[y].copy()
    s = cfg.image_size
    if cfg.max_shift:
        shifts = rng.integers(-cfg.max_shift, cfg.max_shift + 1, size=(n, 2))
        for i in range(n):
            x[i] = np.roll(x[i], tuple(shifts[i]), axis=(0, 1))
    if cfg.contrast:
        x *= np.exp(rng.normal(0.0, cfg.contrast, size=(n, 1, 1)))
    if cfg.offset:
        x += rng.normal(0.0, cfg.offset, size=(n, 1, 1))
    if cfg.gradient:
        grid = (np.arange(s) - (s - 1) / 2.0) / (s / 2.0)
        coef = rng.normal(0.0, cfg.gradient, size=(n, 2))
        x += coef[:, 0, None, None] * grid[None, :, None] + coef[:, 1, None, None] * grid[None, None, :]
    x += rng.normal(0.0, 1.0, size=x.shape) * cfg.noise
    return Dataset(x, y, centers, cfg)


def stratified_split(y, test_fraction, seed):
    """Deterministic per-class train/test index split."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    tr, te = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(len(idx) * test_fraction))
        te.append(idx[:k])
        tr.append(idx[k:])
    return np.sort(np.concatenate(tr)), np.sort(np.concatenate(te))


# ---------------------------------------------------------------------------
# views


@dataclass
class ViewConfig:
    n_global: int = 2
    n_local: int = 10
    global_scale: tuple = (0.25, 1.0)
    local_scale: tuple = (0.05, 0.25)
    global_size: int = 16      # output resolution of global crops (pixels)
    local_size: int = 8        # output resolution of local crops
    hflip: bool = True
    color_jitter: bool = True
    brightness: float = 0.4    # std of additive offset, in units of image std
    contrast: float = 0.4      # multiplicative range around 1
    blur_prob: float = 0.2
    vector_jitter: float = 0.1 # vector mode: Gaussian jitter std (relative to feature std)


@dataclass
class View:
    tokens: np.ndarray         # (N, T, token_dim)
    pos_map: np.ndarray        # (T, P)
    is_global: bool


def _crop_boxes(n, size, scale, rng):
    area = size * size * rng.uniform(scale[0], scale[1], size=n)
    logr = rng.uniform(np.log(3 / 4), np.log(4 / 3), size=n)
    ratio = np.exp(logr)
    w = np.clip(np.sqrt(area * ratio), 1.0, size)
    h = np.clip(np.sqrt(area / ratio), 1.0, size)
    x0 = rng.uniform(0.0, 1.0, size=n) * (size - w)
    y0 = rng.uniform(0.0, 1.0, size=n) * (size - h)
    return y0, x0, h, w


def _resized_crop(images, boxes, out):
    """Bilinear resample of each box to ``out x out`` (edge-clamped)."""
    n, s, _ = images.shape
    y0, x0, h, w = boxes
    t = (np.arange(out) + 0.5) / out
    ys = y0[:, None] + t[None, :] * h[:, None] - 0.5
    xs = x0[:, None] + t[None, :] * w[:, None] - 0.5
    ys = np.clip(ys, 0, s - 1)
    xs = np.clip(xs, 0, s - 1)
    yi = np.minimum(np.floor(ys).astype(np.int64), s - 2)
    xi = np.minimum(np.floor(xs).astype(np.int64), s - 2)
    fy = ys - yi
    fx = xs - xi
    rows = np.arange(n)[:, None, None]
    Y = yi[:, :, None]
    X = xi[:, None, :]
    FY = fy[:, :, None]
    FX = fx[:, None, :]
    return ((1 - FY) * (1 - FX) * images[rows, Y, X] + (1 - FY) * FX * images[rows, Y, X + 1]
            + FY * (1 - FX) * images[rows, Y + 1, X] + FY * FX * images[rows, Y + 1, X + 1])


def _blur(img):
    k = np.array([0.25, 0.5, 0.25])
    out = img.copy()
    out[:, 1:-1, :] = k[0] * img[:, :-2, :] + k[1] * img[:, 1:-1, :] + k[2] * img[:, 2:, :]
    tmp = out.copy()
    out[:, :, 1:-1] = k[0] * tmp[:, :, :-2] + k[1] * tmp[:, :, 1:-1] + k[2] * tmp[:, :, 2:]
    return out


def _image_views(x, vcfg, enc_cfg, rng, ref_std):
    n, s, _ = x.shape
    views = []
    specs = [(True, vcfg.global_scale, vcfg.global_size)] * vcfg.n_global \
        + [(False, vcfg.local_scale, vcfg.local_size)] * vcfg.n_local
    for is_global, scale, size in specs:
        img = _resized_crop(x, _crop_boxes(n, s, scale, rng), size)
        if vcfg.hflip:
            flip = rng.random(n) < 0.5
            img[flip] = img[flip, :, ::-1]
        if vcfg.color_jitter:
            mean = img.mean(axis=(1, 2), keepdims=True)
            contrast = rng.uniform(1 - vcfg.contrast, 1 + vcfg.contrast, size=(n, 1, 1))
            offset = rng.normal(0.0, vcfg.brightness * ref_std, size=(n, 1, 1))
            img = (img - mean) * contrast + mean + offset
            blur = rng.random(n) < vcfg.blur_prob
            if blur.any():
                img[blur] = _blur(img[blur])
        tokens = patchify(img, enc_cfg.patch_size)
        g = size // enc_cfg.patch_size
        views.append(View(tokens, area_resample_matrix(g, enc_cfg.grid), is_global))
    return views


def _vector_views(x, vcfg, enc_cfg, rng, ref_std):
    n, dim = x.shape
    views = []
    eye = np.eye(enc_cfg.n_pos)
    for v in range(vcfg.n_global + vcfg.n_local):
        is_global = v < vcfg.n_global
        out = x + rng.normal(0.0, vcfg.vector_jitter * ref_std, size=x.shape)
        if not is_global:
            keep_frac = rng.uniform(vcfg.local_scale[0], vcfg.local_scale[1], size=(n, 1))
            keep = rng.random((n, dim)) < np.maximum(keep_frac, 1.0 / dim)
            out = np.where(keep, out, 0.0)
        views.append(View(out.reshape(n, enc_cfg.seq_len, enc_cfg.token_dim), eye, is_global))
    return views


def make_views_batch(x, vcfg, enc_cfg, rng, ref_std=1.0):
    """Views for a batch: ``n_global`` global views first, then ``n_local`` locals."""
    rng = as_rng(rng)
    x = np.asarray(x, dtype=np.float64)
    if enc_cfg.layout == "image":
        return _image_views(x, vcfg, enc_cfg, rng, ref_std)
    return _vector_views(x, vcfg, enc_cfg, rng, ref_std)


def make_views(sample, vcfg, enc_cfg, rng, ref_std=1.0):
    """Views of a single sample, each as a (T, token_dim) token array."""
    views = make_views_batch(np.asarray(sample)[None], vcfg, enc_cfg, rng, ref_std)
    return [v.tokens[0] for v in views]
