"""Finite-difference verification of every hand-derived backward pass.

Each check builds a micro-sized instance (small widths, small maps) so the
central-difference sweep over every parameter entry stays fast, runs a scalar
loss through forward+backward, and reports the worst relative error. All
checks run in float64; the accepted bound is 1e-4.
"""

from __future__ import annotations

import numpy as np

from .cell import CellParams, cell_forward, cell_backward
from .data import synth_scene
from .model import ModelConfig, MotionModel
from .numkit import ParamStore, Rng, grad_check
from .objectives import LossConfig
from .queues import FeatureQueue
from .scene import SceneEncoderConfig, SceneEncoderParams, encode_scene, encode_scene_backward
from .social import SocialParams, all_agents_neighbors, refine_forward, refine_backward

BOUND = 1e-4
EPS = 1e-5


def check_cell(q=3, h=8, seed=0):
    """Loss = squared norm of (h_t, c_t) for one gated step."""
    rng = Rng(seed)
    store = ParamStore()
    params = CellParams(store, rng, d=2, h=h)
    m_t = rng.normal(2)
    queue = FeatureQueue(rng.normal((q, h)), rng.normal((q, h)))

    def f(s):
        h_t, c_t, cache = cell_forward(m_t, queue, params)
        loss = float(h_t @ h_t + c_t @ c_t)
        cell_backward(cache, 2.0 * h_t, 2.0 * c_t, params)
        return loss

    def f_value(s):
        h_t, c_t, _ = cell_forward(m_t, queue, params)
        return float(h_t @ h_t + c_t @ c_t)

    return grad_check(f, store, eps=EPS, f_value=f_value)


def check_social(n=3, q=2, h=6, seed=0, mode="signed"):
    """Loss = squared norm of all refined hidden entries."""
    rng = Rng(seed)
    store = ParamStore()
    params = SocialParams(store, rng, h)
    queues = [FeatureQueue(rng.normal((q, h)), rng.normal((q, h))) for _ in range(n)]
    neighbors = all_agents_neighbors(n)

    def forward():
        out, cache = refine_forward(queues, neighbors, params, mode=mode)
        refined = np.stack([qu.hidden for qu in out])
        return refined, cache

    def f(s):
        refined, cache = forward()
        refine_backward(cache, 2.0 * refined, params)
        return float((refined ** 2).sum())

    def f_value(s):
        refined, _ = forward()
        return float((refined ** 2).sum())

    return grad_check(f, store, eps=EPS, f_value=f_value)


def _micro_scene_encoder(seed=0):
    rng = Rng(seed)
    store = ParamStore()
    cfg = SceneEncoderConfig(map_size=28, in_channels=2, conv_channels=(3, 4),
                             kernels=(10, 10, 1), strides=(2, 1, 1),
                             z_dim=3, obs_len=4)
    params = SceneEncoderParams(store, rng, cfg)
    from .scene import SemanticMap

    smap = SemanticMap(rng.normal((28, 28, 2)))
    observed = rng.normal((2, 4, 2))
    return store, params, smap, observed


def check_scene(seed=0):
    """Loss = sum(mu^2) + sum(sigma^2) through conv stack and FC head."""
    store, params, smap, observed = _micro_scene_encoder(seed)

    def f(s):
        mu, sigma, cache = encode_scene(smap, observed, params)
        encode_scene_backward(cache, 2.0 * mu, 2.0 * sigma, params)
        return float(mu @ mu + sigma @ sigma)

    def f_value(s):
        mu, sigma, _ = encode_scene(smap, observed, params)
        return float(mu @ mu + sigma @ sigma)

    return grad_check(f, store, eps=EPS, f_value=f_value)


def check_decoder(seed=0):
    """Loss = squared norm of a short rollout's positions."""
    cfg = ModelConfig(h=8, q=2, z_dim=3, dec_h=8, obs_len=4, pred_len=3,
                      use_social=False, use_latent=False)
    rng = Rng(seed)
    model = MotionModel(cfg, rng)
    n = 2
    h_obs = rng.normal((n, cfg.h))
    z = np.zeros(0)
    last_pos = rng.normal((n, 2))
    last_disp = rng.normal((n, 2))

    def f(s):
        pos, caches = model.decode(h_obs, z, 3, last_pos, last_disp, want_cache=True)
        for i in range(n):
            model._decode_backward_agent(caches[i], 2.0 * pos[i])
        return float((pos ** 2).sum())

    def f_value(s):
        pos, _ = model.decode(h_obs, z, 3, last_pos, last_disp)
        return float((pos ** 2).sum())

    return grad_check(f, model.store, eps=EPS, f_value=f_value)


def micro_model_and_scene(seed=0, use_social=True, use_latent=True):
    """2-agent, 4+3-frame scene and a matching micro model for end-to-end checks.

    Every parameter gets extra noise so the sweep runs at a generic point:
    with the pristine zero-bias init the first frame's features are exactly
    the zero vector (the first displacement is (0, 0) by construction), which
    parks the loss on the cosine guard's non-differentiable point.
    """
    cfg = ModelConfig(h=8, q=2, z_dim=3, dec_h=8, obs_len=4, pred_len=3,
                      use_social=use_social, use_latent=use_latent,
                      map_size=28, map_channels=2, conv_channels=(3, 4),
                      conv_kernels=(10, 10, 1), conv_strides=(2, 1, 1))
    model = MotionModel(cfg, Rng(seed))
    noise_rng = Rng(seed + 50)
    for name in model.store.names():
        val = model.store.value(name)
        val += 0.4 * noise_rng.normal(val.shape)
    data_rng = Rng(seed + 100)
    scene = synth_scene("turning", 2, data_rng, noise=0.05, map_size=28,
                        obs_len=4, pred_len=3)
    return model, scene


def check_full(seed=0):
    """grad check of lam * coherence + variety through the whole model."""
    model, scene = micro_model_and_scene(seed)
    loss_cfg = LossConfig(lam=0.1, margin=0.5, m=2, pairs_per_batch=8)

    def f(s):
        return model.loss_and_grad(scene, loss_cfg, Rng(777))["total"]

    def f_value(s):
        return model.loss(scene, loss_cfg, Rng(777))["total"]

    return grad_check(f, model.store, eps=EPS, f_value=f_value)


CHECKS = {
    "cell": check_cell,
    "social": check_social,
    "scene": check_scene,
    "decoder": check_decoder,
    "full": check_full,
}


def run(module="full"):
    """Run one named check (or the named module); returns [(name, err, bound)]."""
    names = [module] if module != "full" else list(CHECKS)
    return [(name, CHECKS[name](), BOUND) for name in names]
