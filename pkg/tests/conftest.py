import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def tiny_config(out, **overrides):
    """A full-pipeline config small enough to run in about a second."""
    from dataclasses import replace

    from blockrefine.config import ExperimentConfig

    c = ExperimentConfig(out_dir=str(out), **overrides)
    c.data = replace(c.data, n_per_class=20)
    c.encoder = replace(c.encoder, depth=3, width=8)
    c.pretrain = replace(c.pretrain, epochs=2)
    c.analyze_blocks = replace(c.analyze_blocks, recon_epochs=1)
    c.heads = replace(c.heads, projector_hidden=16, bottleneck=8, predictor_hidden=16)
    c.refine = replace(c.refine, epochs=2, init_epochs=1, batch_size=32,
                       views=replace(c.refine.views, n_local=2),
                       queue=replace(c.refine.queue, capacity=64))
    c.probe = replace(c.probe, linear_epochs=20)
    c.cluster = replace(c.cluster, restarts=3)
    return c
