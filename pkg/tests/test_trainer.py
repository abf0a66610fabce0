import numpy as np
import pytest

from motionq.data import synth_dataset
from motionq.numkit import ParamStore, Rng
from motionq.trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    build_model,
    default_queue_length,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)


def micro_train_cfg(**overrides):
    base = dict(h=8, z_dim=4, q=2, dec_h=8, obs_len=8, pred_len=12,
                m=2, pairs_per_batch=8, batch_size=2, lr=1e-3, epochs=2,
                seed=0, eval_samples=3)
    base.update(overrides)
    return TrainConfig(**base)


def micro_scenes(kind="turning", count=3, seed=0, noise=0.01):
    return synth_dataset(kind, count, Rng(seed), n_agents=2, noise=noise)


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradients_leave_params():
    store = ParamStore()
    store.add("w", np.array([1.0, -2.0]))
    state = AdamState(store)
    adam_step(store, state, lr=0.1)
    assert np.array_equal(store.value("w"), [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_hand_trace():
    # theta = 0, g = 1, lr = 0.1: bias-corrected ratio is 1, step is -0.1
    store = ParamStore()
    store.add("theta", np.array([0.0]))
    store.grad("theta")[0] = 1.0
    state = AdamState(store)
    adam_step(store, state, lr=0.1)
    assert abs(store.value("theta")[0] + 0.1) < 1e-8


def test_adam_constant_gradient_keeps_unit_steps():
    store = ParamStore()
    store.add("theta", np.array([0.0]))
    state = AdamState(store)
    for k in range(1, 6):
        store.zero_grads()
        store.grad("theta")[0] = 1.0
        adam_step(store, state, lr=0.1)
        assert state.t == k
    assert abs(store.value("theta")[0] + 0.5) < 1e-6


def test_adam_nonfinite_gradient_names_parameter():
    store = ParamStore()
    store.add("enc.w", np.zeros(2))
    store.add("dec.w", np.zeros(2))
    store.grad("dec.w")[0] = np.inf
    state = AdamState(store)
    with pytest.raises(FloatingPointError, match="dec.w"):
        adam_step(store, state, lr=0.1)


# ---------------------------------------------------------------------------
# config


def test_config_text_roundtrip():
    cfg = micro_train_cfg(lam=0.25, use_social=False, dataset="zara1")
    parsed = TrainConfig.from_text(cfg.to_text())
    assert parsed == cfg
    assert parsed.digest() == cfg.digest()


def test_config_rejects_unknown_key():
    with pytest.raises(ValueError):
        TrainConfig.from_text("not_a_field = 3\n")


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(m=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)


def test_default_queue_lengths():
    assert default_queue_length("eth") == 4
    assert default_queue_length("ETH-univ") == 4
    assert default_queue_length("zara1") == 2
    assert default_queue_length("zara2") == 2
    assert default_queue_length("hotel") == 3
    assert default_queue_length("univ") == 3


# ---------------------------------------------------------------------------
# training loop


def test_train_rejects_empty_dataset(tmp_path):
    with pytest.raises(ValueError):
        train(micro_train_cfg(), [], tmp_path)


def test_train_deterministic_and_finite(tmp_path):
    cfg = micro_train_cfg()
    scenes = micro_scenes()
    _, curve_a = train(cfg, scenes, tmp_path / "a")
    _, curve_b = train(cfg, scenes, tmp_path / "b")
    assert curve_a == curve_b
    assert all(np.isfinite(row[2]) for row in curve_a)
    ckpt_a = (tmp_path / "a" / "final.ckpt").read_text()
    ckpt_b = (tmp_path / "b" / "final.ckpt").read_text()
    assert ckpt_a == ckpt_b


def test_train_lambda_zero_total_equals_variety(tmp_path):
    cfg = micro_train_cfg(lam=0.0)
    _, curve = train(cfg, micro_scenes(), tmp_path)
    for _, _, total, _, variety in curve:
        assert abs(total - variety) < 1e-12


def test_single_step_decreases_loss_small_lr():
    cfg = micro_train_cfg(lr=1e-4)
    model = build_model(cfg)
    scenes = micro_scenes(count=2)
    state = AdamState(model.store)
    loss_cfg = cfg.loss_config()

    def batch_loss(grad):
        model.store.zero_grads()
        rng = Rng(5)
        total = 0.0
        for scene in scenes:
            fn = model.loss_and_grad if grad else model.loss
            total += fn(scene, loss_cfg, rng)["total"]
        return total / len(scenes)

    before = batch_loss(grad=True)
    model.store.scale_grads(1.0 / len(scenes))
    adam_step(model.store, state, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    after = batch_loss(grad=False)
    assert after < before


def test_loss_curve_file_written(tmp_path):
    cfg = micro_train_cfg(epochs=1)
    train(cfg, micro_scenes(count=2), tmp_path)
    lines = (tmp_path / "loss_curve.txt").read_text().strip().splitlines()
    assert lines[0].startswith("#")
    assert len(lines) == 2  # header + one batch


# ---------------------------------------------------------------------------
# evaluation and checkpointing


def test_evaluate_deterministic_and_monotone_in_m(tmp_path):
    cfg = micro_train_cfg(epochs=1)
    scenes = micro_scenes(count=3, noise=0.02)
    model, _ = train(cfg, scenes, tmp_path)
    rep_a = evaluate(model, scenes, 5, seed=99)
    rep_b = evaluate(model, scenes, 5, seed=99)
    assert rep_a == rep_b
    rep_1 = evaluate(model, scenes, 1, seed=99)
    rep_20 = evaluate(model, scenes, 20, seed=99)
    assert rep_20.ade <= rep_1.ade


def test_checkpoint_roundtrip_preserves_evaluation(tmp_path):
    cfg = micro_train_cfg(epochs=1)
    scenes = micro_scenes(count=2, noise=0.02)
    model, _ = train(cfg, scenes, tmp_path)
    before = evaluate(model, scenes, 4, seed=7)
    loaded_cfg, loaded, state, epoch = load_checkpoint(tmp_path / "final.ckpt")
    assert loaded_cfg == cfg
    assert epoch == cfg.epochs - 1
    for name in model.store.names():
        assert np.array_equal(model.store.value(name), loaded.store.value(name))
    after = evaluate(loaded, scenes, 4, seed=7)
    assert before == after


def test_checkpoint_hash_mismatch_rejected(tmp_path):
    cfg = micro_train_cfg(epochs=1)
    model = build_model(cfg)
    state = AdamState(model.store)
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, model.store, state, cfg, 0)
    text = path.read_text().replace("seed = 0", "seed = 1")
    path.write_text(text)
    with pytest.raises(ValueError, match="hash"):
        load_checkpoint(path)


def test_checkpoint_preserves_adam_state(tmp_path):
    cfg = micro_train_cfg(epochs=2)
    scenes = micro_scenes(count=2)
    train(cfg, scenes, tmp_path)
    _, _, state, _ = load_checkpoint(tmp_path / "final.ckpt")
    assert state.t == len(scenes) // cfg.batch_size * cfg.epochs
    assert any(state.m[name].any() for name in state.m)


def test_evaluate_nonlinear_only_filter(tmp_path):
    cfg = micro_train_cfg(epochs=1)
    turning = micro_scenes("turning", count=2, noise=0.0)
    parallel = micro_scenes("parallel", count=2, noise=0.0)
    model, _ = train(cfg, turning, tmp_path)
    rep = evaluate(model, turning + parallel, 2, seed=3, nonlinear_only=True)
    assert rep.n_agents == sum(s.n_agents for s in turning)  # straight walkers excluded
    with pytest.raises(ValueError):
        evaluate(model, parallel, 2, seed=3, nonlinear_only=True)
