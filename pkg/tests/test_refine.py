import copy

import numpy as np
import pytest

from blockrefine.data import BlobDatasetConfig, ViewConfig, generate_blobs
from blockrefine.encoder import EncoderConfig, init_encoder
from blockrefine.errors import BadIndex, ConfigError, ShapeMismatch
from blockrefine.heads import EnsembleConfig, HeadConfig
from blockrefine.numerics import RngStream
from blockrefine.optim import AdamW, EmaState, block_index, decays, ema_update, layerwise_lr, warmup_cosine
from blockrefine.queue import QueueConfig
from blockrefine.refine import RefineConfig, build_state, init_heads_phase, lr_schedule, refine

ENC = EncoderConfig(depth=3, width=8, layout="tokens", seq_len=8, token_dim=4)


def test_layerwise_lr():
    assert layerwise_lr(4e-4, 0.65, 12, 12) == 4e-4
    assert layerwise_lr(4e-4, 0.65, 11, 12) == pytest.approx(2.6e-4, rel=1e-12)
    assert all(layerwise_lr(1.0, 1.0, b, 6) == 1.0 for b in range(0, 7))
    with pytest.raises(BadIndex):
        layerwise_lr(1.0, 0.5, 7, 6)


def test_block_index():
    assert block_index("blocks.3.W1") == 3
    assert block_index("pos") == 0 and block_index("embed.W") == 0


def test_decay_targets():
    assert decays("blocks.1.W1") and decays("head0.proj.0.W")
    assert not decays("blocks.1.b1") and not decays("head0.proj.0.gamma") and not decays("cls")


def test_lr_schedule_points():
    cfg = RefineConfig()
    spe, total = 10, 300
    assert lr_schedule(0, total, cfg, spe) == 0.0
    assert lr_schedule(40, total, cfg, spe) == pytest.approx(4e-4, rel=1e-12)
    assert lr_schedule(total, total, cfg, spe) == 1e-6
    vals = [lr_schedule(s, total, cfg, spe) for s in range(40, total + 1)]
    assert np.all(np.diff(vals) <= 1e-18)


def test_warmup_cosine_no_warmup():
    assert warmup_cosine(0, 10, 0, 1.0, 0.0) == 1.0


def test_ema_examples():
    p = {"w": np.ones(3)}
    e = EmaState({"w": np.zeros(3)}, 1.0)
    ema_update(e, p)
    np.testing.assert_array_equal(e.shadow["w"], 0.0)
    e = EmaState({"w": np.zeros(3)}, 0.0)
    ema_update(e, p)
    np.testing.assert_array_equal(e.shadow["w"], 1.0)
    e = EmaState({"w": np.zeros(3)}, 0.9)
    for _ in range(3):
        ema_update(e, p)
    np.testing.assert_allclose(e.shadow["w"], 0.271, atol=1e-15)
    with pytest.raises(ShapeMismatch):
        ema_update(e, {"w": np.ones(4)})


def test_ema_matches_scalar_reference(rng):
    m = 0.7
    seq = rng.normal(size=(12, 2))
    e = EmaState.from_params({"w": seq[0]}, m)
    ref = seq[0].copy()
    for x in seq[1:]:
        ema_update(e, {"w": x})
        ref = [m * r + (1 - m) * v for r, v in zip(ref, x)]
    np.testing.assert_allclose(e.shadow["w"], ref, rtol=1e-14)


def test_adamw_decoupled_decay():
    w = np.full(4, 2.0)
    opt = AdamW()
    for step in range(5):
        before = w.copy()
        opt.step({"W": w}, {"W": np.zeros(4)}, lr=0.1, wd={"W": 0.05})
        np.testing.assert_allclose(w, before * (1 - 0.1 * 0.05), rtol=1e-15)


def test_adamw_first_step_is_sign(rng):
    w = np.zeros(5)
    g = rng.normal(size=5)
    AdamW().step({"W": w}, {"W": g}, lr=0.01)
    np.testing.assert_allclose(w, -0.01 * np.sign(g), rtol=1e-6)


def test_config_validation():
    with pytest.raises(ConfigError):
        RefineConfig(layer_decay=0.0).validate(3)
    with pytest.raises(ConfigError):
        RefineConfig(freeze_blocks=3).validate(3)
    with pytest.raises(ConfigError):
        RefineConfig(ema_momentum=1.5).validate(3)


# ---------------------------------------------------------------------------
# training loop on tiny vector data


@pytest.fixture(scope="module")
def blobs():
    return generate_blobs(BlobDatasetConfig(n_classes=3, n_per_class=32, mode="vector", dim=32,
                                            spread=3.0, noise=0.3, seed=0))


def _cfg(**kw):
    base = dict(epochs=2, batch_size=32, peak_lr=2e-3, warmup_epochs=1, init_epochs=2, init_lr=2e-3,
                queue=QueueConfig(256, 3), views=ViewConfig(n_local=2))
    base.update(kw)
    return RefineConfig(**base)


def _state(seed=0, attach=(2, 3), capacity=256):
    enc = init_encoder(ENC, RngStream(seed))
    ens = EnsembleConfig(list(attach), [HeadConfig(8, 16, 8, 16) for _ in attach])
    return build_state(enc, ENC, ens, RngStream(seed).split(1), QueueConfig(capacity, 3))


def test_init_phase_freezes_encoder_and_fills_queue(blobs):
    st = _state()
    before = copy.deepcopy(st.encoder)
    cfg = _cfg(init_epochs=1)
    init_heads_phase(st, blobs.x, cfg, RngStream(2), labels=blobs.y, ref_std=float(blobs.x.std()))
    for k in before:
        np.testing.assert_array_equal(st.encoder[k], before[k])
    n_global = len(blobs.x) * cfg.views.n_global
    assert all(q.filled == min(q.capacity, n_global) for q in st.queues)


def test_init_phase_loss_decreases(blobs):
    st = _state()
    logs = init_heads_phase(st, blobs.x, _cfg(init_epochs=6), RngStream(2), labels=blobs.y,
                            ref_std=float(blobs.x.std()))
    ep = [r["loss"] for r in logs["epochs"]]
    assert ep[0] > ep[-1]


def test_zero_epochs_is_noop(blobs):
    st = _state()
    before = copy.deepcopy(st.encoder)
    refine(st, blobs.x, _cfg(epochs=0), RngStream(3), labels=blobs.y)
    for k in before:
        np.testing.assert_array_equal(st.encoder[k], before[k])
        np.testing.assert_array_equal(st.ema.shadow[k], before[k])


@pytest.mark.parametrize("freeze", [1, 2])
def test_frozen_blocks_unchanged(blobs, freeze):
    st = _state()
    before = copy.deepcopy(st.encoder)
    cfg = _cfg(freeze_blocks=freeze)
    init_heads_phase(st, blobs.x, cfg, RngStream(2), labels=blobs.y)
    refine(st, blobs.x, cfg, RngStream(3), labels=blobs.y)
    for k in before:
        b = block_index(k)
        frozen = b <= freeze
        same = np.array_equal(st.encoder[k], before[k])
        assert same == frozen or (not frozen and k.endswith(".b1")), k


def test_refine_deterministic(blobs):
    logs = []
    for _ in range(2):
        st = _state()
        cfg = _cfg()
        init_heads_phase(st, blobs.x, cfg, RngStream(2), labels=blobs.y)
        logs.append(refine(st, blobs.x, cfg, RngStream(3), labels=blobs.y)["steps"])
    assert logs[0] == logs[1]


def test_one_hot_single_active_head(blobs):
    st = _state(attach=(1, 2, 3))
    cfg = _cfg(schedule="one_hot", epochs=3)
    init_heads_phase(st, blobs.x, cfg, RngStream(2), labels=blobs.y)
    logs = refine(st, blobs.x, cfg, RngStream(3), labels=blobs.y)
    for row in logs["steps"]:
        w = [row[f"weight_h{i}"] for i in range(3)]
        assert sorted(w) == [0.0, 0.0, 1.0]


def test_nn_accuracy_logged_and_stable(blobs):
    st = _state()
    cfg = _cfg(epochs=5)
    init_heads_phase(st, blobs.x, cfg, RngStream(2), labels=blobs.y)
    logs = refine(st, blobs.x, cfg, RngStream(3), labels=blobs.y)
    acc = np.array([r["nn_acc_h1"] for r in logs["epochs"]])
    assert np.all((acc >= 0) & (acc <= 1))
    assert np.all(acc[1:] >= np.maximum.accumulate(acc)[:-1] - 0.05), acc


def test_swap_negatives_runs(blobs):
    st = _state()
    cfg = _cfg(swap_negatives=True, epochs=1)
    init_heads_phase(st, blobs.x, cfg, RngStream(2), labels=blobs.y)
    logs = refine(st, blobs.x, cfg, RngStream(3), labels=blobs.y)
    assert np.isfinite(logs["epochs"][-1]["loss"])
