"""Encoder-decoder assembly.

Observation runs frame by frame: every agent's queue-gated cell step, then a
queue push/pop, then (optionally) the social refinement of all hidden queues
across agents. The final hidden features are fused with a scene-conditioned
latent draw and rolled out by a vanilla LSTM decoder that emits per-frame
displacements, feeding each displacement back as the next input. Absolute
positions are cumulative sums from the last observed position, which makes
every prediction translate exactly with the inputs.

Prediction export format (text): a comment header then one record per line,

    scene_id agent_id sample_id frame_id x y
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import CellParams, cell_forward, cell_backward
from .data import to_relative
from .numkit import ParamStore, sigmoid
from .objectives import (
    coherence_forward,
    coherence_backward,
    variety_forward,
    variety_backward,
)
from .queues import init_queues, push_pop
from .scene import (
    SceneEncoderConfig,
    SceneEncoderParams,
    encode_scene,
    encode_scene_backward,
    sample_latent,
)
from .social import (
    SocialParams,
    all_agents_neighbors,
    radius_neighbors,
    refine_forward,
    refine_hidden_queues,
    refine_backward,
)

__all__ = [
    "ModelConfig",
    "DecoderParams",
    "EncoderState",
    "PredictionSet",
    "MotionModel",
    "write_prediction_records",
]

DEC_GATES = ("i", "f", "o", "u")


@dataclass
class ModelConfig:
    d: int = 2
    h: int = 32
    q: int = 3
    z_dim: int = 16
    dec_h: int = 32
    obs_len: int = 8
    pred_len: int = 12
    use_social: bool = True
    use_latent: bool = True
    map_size: int = 64
    map_channels: int = 2
    conv_channels: tuple = (8, 16)
    conv_kernels: tuple = (10, 10, 1)
    conv_strides: tuple = (6, 4, 1)
    sigma_transform: str = "sigmoid"
    sigma_bias: float = 0.0
    relation_mode: str = "signed"
    neighbor_radius: float | None = None
    forget_bias: float = 1.0

    def scene_encoder_config(self):
        return SceneEncoderConfig(
            map_size=self.map_size,
            in_channels=self.map_channels,
            conv_channels=self.conv_channels,
            kernels=self.conv_kernels,
            strides=self.conv_strides,
            z_dim=self.z_dim,
            obs_len=self.obs_len,
            sigma_transform=self.sigma_transform,
            sigma_bias=self.sigma_bias,
        )


class DecoderParams:
    """Vanilla LSTM decoder cell plus the fusion and output projections."""

    def __init__(self, store, rng, h_enc, z_dim, dec_h=32, prefix="decoder", forget_bias=1.0):
        self.h_enc = h_enc
        self.z_dim = z_dim
        self.dec_h = dec_h
        bound = 1.0 / np.sqrt(dec_h)
        self.W = {}
        self.U = {}
        self.b = {}
        self.dW = {}
        self.dU = {}
        self.db = {}
        for gate in DEC_GATES:
            b = np.zeros(dec_h)
            if gate == "f":
                b += forget_bias
            self.W[gate] = store.add(f"{prefix}.W_{gate}", rng.uniform(-bound, bound, (dec_h, 2)))
            self.U[gate] = store.add(f"{prefix}.U_{gate}", rng.uniform(-bound, bound, (dec_h, dec_h)))
            self.b[gate] = store.add(f"{prefix}.b_{gate}", b)
            self.dW[gate] = store.grad(f"{prefix}.W_{gate}")
            self.dU[gate] = store.grad(f"{prefix}.U_{gate}")
            self.db[gate] = store.grad(f"{prefix}.b_{gate}")
        fuse_in = h_enc + z_dim
        bound_f = 1.0 / np.sqrt(fuse_in)
        self.W_fuse = store.add(f"{prefix}.W_fuse", rng.uniform(-bound_f, bound_f, (dec_h, fuse_in)))
        self.b_fuse = store.add(f"{prefix}.b_fuse", np.zeros(dec_h))
        self.W_out = store.add(f"{prefix}.W_out", rng.uniform(-bound, bound, (2, dec_h)))
        self.b_out = store.add(f"{prefix}.b_out", np.zeros(2))
        self.dW_fuse = store.grad(f"{prefix}.W_fuse")
        self.db_fuse = store.grad(f"{prefix}.b_fuse")
        self.dW_out = store.grad(f"{prefix}.W_out")
        self.db_out = store.grad(f"{prefix}.b_out")


@dataclass
class EncoderState:
    """Per-agent queues after the last observation frame plus feature history."""

    queues: list
    h_obs: np.ndarray             # (n, h) newest hidden entries after final refinement
    features: np.ndarray          # (n, obs_len, h) per-frame post-refinement features
    cells: np.ndarray | None = None  # (n, obs_len, h) newest cell entries, on request
    tape: list | None = None


@dataclass
class PredictionSet:
    """m sampled futures per agent plus the latent draw behind each sample."""

    positions: np.ndarray  # (m, n_agents, steps, 2) absolute
    zs: np.ndarray         # (m, z_dim)

    @property
    def m(self):
        return self.positions.shape[0]


class _DecStep:
    __slots__ = ("x", "h_prev", "c_prev", "gi", "gf", "go", "gu", "c", "tanh_c", "h")

    def __init__(self, x, h_prev, c_prev, gi, gf, go, gu, c, tanh_c, h):
        self.x = x
        self.h_prev = h_prev
        self.c_prev = c_prev
        self.gi = gi
        self.gf = gf
        self.go = go
        self.gu = gu
        self.c = c
        self.tanh_c = tanh_c
        self.h = h


class _DecCache:
    __slots__ = ("s", "h0", "steps")

    def __init__(self, s, h0, steps):
        self.s = s
        self.h0 = h0
        self.steps = steps


class MotionModel:
    """Full forecaster: queue-gated encoder, social refinement, latent fusion,
    LSTM decoder, and the training objective with hand-derived gradients."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float64):
        self.cfg = cfg
        self.store = ParamStore(dtype)
        self.cell = CellParams(self.store, rng, d=cfg.d, h=cfg.h, forget_bias=cfg.forget_bias)
        self.social = SocialParams(self.store, rng, cfg.h) if cfg.use_social else None
        self.scene_enc = (
            SceneEncoderParams(self.store, rng, cfg.scene_encoder_config())
            if cfg.use_latent else None
        )
        z_dim = cfg.z_dim if cfg.use_latent else 0
        self.decoder = DecoderParams(
            self.store, rng, h_enc=cfg.h, z_dim=z_dim, dec_h=cfg.dec_h,
            forget_bias=cfg.forget_bias,
        )

    # ------------------------------------------------------------------ encoder

    def neighbor_sets(self, scene):
        n = scene.n_agents
        if self.cfg.neighbor_radius is None:
            return all_agents_neighbors(n)
        last = scene.positions[:, scene.obs_len - 1]
        return radius_neighbors(last, self.cfg.neighbor_radius)

    def observe(self, obs_disp, neighbors=None, want_tape=False, want_cells=False):
        """Run the observation frames; returns the EncoderState.

        obs_disp is (n_agents, obs_len, 2) displacement form. Per frame:
        cell step for every agent, queue push/pop, then social refinement of
        the hidden queues across agents (a per-frame barrier).
        """
        obs_disp = np.asarray(obs_disp, dtype=np.float64)
        if obs_disp.ndim != 3 or obs_disp.shape[2] != self.cfg.d:
            raise ValueError(f"observed displacements must be (n, t, {self.cfg.d}), got {obs_disp.shape}")
        n, t_obs = obs_disp.shape[0], obs_disp.shape[1]
        if t_obs < 1:
            raise ValueError("need at least one observation frame")
        if not np.all(np.isfinite(obs_disp)):
            raise ValueError("agent missing or non-finite input inside the window")
        if neighbors is None:
            neighbors = all_agents_neighbors(n)

        queues = init_queues(n, self.cfg.q, self.cfg.h)
        features = np.zeros((n, t_obs, self.cfg.h))
        cells = np.zeros((n, t_obs, self.cfg.h)) if want_cells else None
        tape = [] if want_tape else None
        for t in range(t_obs):
            cell_caches = [] if want_tape else None
            hs = []
            cs = []
            for i in range(n):
                h_t, c_t, cache = cell_forward(obs_disp[i, t], queues[i], self.cell)
                hs.append(h_t)
                cs.append(c_t)
                if want_tape:
                    cell_caches.append(cache)
            queues = [push_pop(queues[i], hs[i], cs[i]) for i in range(n)]
            refine_cache = None
            if self.social is not None:
                if want_tape:
                    queues, refine_cache = refine_forward(
                        queues, neighbors, self.social, mode=self.cfg.relation_mode)
                else:
                    queues = refine_hidden_queues(
                        queues, neighbors, self.social, mode=self.cfg.relation_mode)
            for i in range(n):
                features[i, t] = queues[i].hidden[-1]
                if want_cells:
                    cells[i, t] = queues[i].cell[-1]
            if want_tape:
                tape.append((cell_caches, refine_cache))
        h_obs = features[:, -1].copy()
        return EncoderState(queues, h_obs, features, cells=cells, tape=tape)

    def _observe_backward(self, state, d_h_obs, d_features):
        """Backpropagate through the whole observation loop (needs a tape)."""
        n, t_obs, h = state.features.shape
        q = self.cfg.q
        d_hid = np.zeros((n, q, h))
        d_cell = np.zeros((n, q, h))
        d_hid[:, -1] += d_h_obs
        for t in range(t_obs - 1, -1, -1):
            if d_features is not None:
                d_hid[:, -1] += d_features[:, t]
            cell_caches, refine_cache = state.tape[t]
            if refine_cache is not None:
                d_hid = refine_backward(refine_cache, d_hid, self.social)
            d_hid_prev = np.zeros_like(d_hid)
            d_cell_prev = np.zeros_like(d_cell)
            d_hid_prev[:, 1:] += d_hid[:, :-1]
            d_cell_prev[:, 1:] += d_cell[:, :-1]
            for i in range(n):
                _, dh_q, dc_q = cell_backward(cell_caches[i], d_hid[i, -1], d_cell[i, -1], self.cell)
                d_hid_prev[i] += dh_q
                d_cell_prev[i] += dc_q
            d_hid, d_cell = d_hid_prev, d_cell_prev
        # remaining gradients land on the zero-initialized queues

    # ------------------------------------------------------------------ decoder

    def decode(self, h_obs, z, steps, last_pos, last_disp, want_cache=False):
        """Roll the decoder from the fused encoder state; returns (positions, caches).

        The decoder hidden state starts from tanh(W_fuse [h_obs; z] + b), the
        cell at zero; the first input is the final observed displacement and
        every emitted displacement is fed back as the next input.
        """
        if steps < 1:
            raise ValueError("steps must be >= 1")
        h_obs = np.asarray(h_obs, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        n = h_obs.shape[0]
        dec = self.decoder
        positions = np.zeros((n, steps, 2))
        caches = [] if want_cache else None
        for i in range(n):
            s = np.concatenate([h_obs[i], z])
            h0 = np.tanh(dec.W_fuse @ s + dec.b_fuse)
            h = h0
            c = np.zeros(dec.dec_h)
            x = np.asarray(last_disp[i], dtype=np.float64)
            disps = np.zeros((steps, 2))
            step_caches = [] if want_cache else None
            for t in range(steps):
                gi = sigmoid(dec.W["i"] @ x + dec.U["i"] @ h + dec.b["i"])
                gf = sigmoid(dec.W["f"] @ x + dec.U["f"] @ h + dec.b["f"])
                go = sigmoid(dec.W["o"] @ x + dec.U["o"] @ h + dec.b["o"])
                gu = np.tanh(dec.W["u"] @ x + dec.U["u"] @ h + dec.b["u"])
                c_new = gf * c + gi * gu
                tanh_c = np.tanh(c_new)
                h_new = go * tanh_c
                delta = dec.W_out @ h_new + dec.b_out
                if want_cache:
                    step_caches.append(_DecStep(x, h, c, gi, gf, go, gu, c_new, tanh_c, h_new))
                disps[t] = delta
                x = delta
                h = h_new
                c = c_new
            positions[i] = last_pos[i] + np.cumsum(disps, axis=0)
            if want_cache:
                caches.append(_DecCache(s, h0, step_caches))
        return positions, caches

    def _decode_backward_agent(self, cache, d_pos):
        """Gradient of one agent's rollout; returns (d_h_obs_i, d_z)."""
        dec = self.decoder
        steps = len(cache.steps)
        d_disp = np.cumsum(d_pos[::-1], axis=0)[::-1]  # position cumsum fan-out
        d_x_next = np.zeros(2)
        d_h = np.zeros(dec.dec_h)
        d_c = np.zeros(dec.dec_h)
        for t in range(steps - 1, -1, -1):
            st = cache.steps[t]
            d_delta = d_disp[t] + d_x_next
            dec.dW_out += np.outer(d_delta, st.h)
            dec.db_out += d_delta
            d_h = d_h + dec.W_out.T @ d_delta
            d_go = d_h * st.tanh_c
            da_o = d_go * st.go * (1.0 - st.go)
            d_c = d_c + d_h * st.go * (1.0 - st.tanh_c ** 2)
            d_gi = d_c * st.gu
            da_i = d_gi * st.gi * (1.0 - st.gi)
            d_gu = d_c * st.gi
            da_u = d_gu * (1.0 - st.gu ** 2)
            d_gf = d_c * st.c_prev
            da_f = d_gf * st.gf * (1.0 - st.gf)
            d_c = d_c * st.gf
            d_x_next = (
                dec.W["i"].T @ da_i + dec.W["f"].T @ da_f
                + dec.W["o"].T @ da_o + dec.W["u"].T @ da_u
            )
            d_h = (
                dec.U["i"].T @ da_i + dec.U["f"].T @ da_f
                + dec.U["o"].T @ da_o + dec.U["u"].T @ da_u
            )
            for gate, da in (("i", da_i), ("f", da_f), ("o", da_o), ("u", da_u)):
                dec.dW[gate] += np.outer(da, st.x)
                dec.dU[gate] += np.outer(da, st.h_prev)
                dec.db[gate] += da
        # d_x_next now targets the seed input (observed data): dropped
        d_a0 = d_h * (1.0 - cache.h0 ** 2)
        dec.dW_fuse += np.outer(d_a0, cache.s)
        dec.db_fuse += d_a0
        d_s = dec.W_fuse.T @ d_a0
        return d_s[:dec.h_enc], d_s[dec.h_enc:]

    # ------------------------------------------------------------------ prediction

    def predict(self, scene, m, rng, steps=None):
        """Encode once, sample m latent draws, decode m futures per agent."""
        if m < 1:
            raise ValueError("m must be >= 1")
        disp = to_relative(scene.positions)
        obs_disp = disp[:, :scene.obs_len]
        state = self.observe(obs_disp, neighbors=self.neighbor_sets(scene))
        if steps is None:
            steps = scene.pred_len if scene.pred_len > 0 else self.cfg.pred_len
        last_pos = scene.positions[:, scene.obs_len - 1]
        last_disp = obs_disp[:, -1]
        if self.scene_enc is not None:
            if scene.smap is None:
                raise ValueError("model is latent-conditioned but the scene has no semantic map")
            mu, sigma, _ = encode_scene(scene.smap, obs_disp, self.scene_enc)
        preds = []
        zs = []
        for _ in range(m):
            if self.scene_enc is not None:
                z = sample_latent((mu, sigma), rng)
            else:
                z = np.zeros(0)
            pos, _ = self.decode(state.h_obs, z, steps, last_pos, last_disp)
            preds.append(pos)
            zs.append(z)
        return PredictionSet(np.stack(preds), np.stack(zs))

    # ------------------------------------------------------------------ training

    def loss(self, scene, loss_cfg, rng):
        """Forward-only training objective; returns its parts."""
        return self._loss_impl(scene, loss_cfg, rng, with_grad=False)

    def loss_and_grad(self, scene, loss_cfg, rng):
        """Objective plus gradient accumulation into the ParamStore slots."""
        return self._loss_impl(scene, loss_cfg, rng, with_grad=True)

    def _loss_impl(self, scene, loss_cfg, rng, with_grad):
        if scene.pred_len < 1:
            raise ValueError("training scenes need ground-truth future frames")
        disp = to_relative(scene.positions)
        obs_disp = disp[:, :scene.obs_len]
        gt = scene.future()
        n = scene.n_agents
        steps = scene.pred_len
        last_pos = scene.positions[:, scene.obs_len - 1]
        last_disp = obs_disp[:, -1]

        state = self.observe(
            obs_disp, neighbors=self.neighbor_sets(scene), want_tape=with_grad)

        scene_cache = None
        eps_draws = None
        if self.scene_enc is not None:
            if scene.smap is None:
                raise ValueError("model is latent-conditioned but the scene has no semantic map")
            mu, sigma, scene_cache = encode_scene(scene.smap, obs_disp, self.scene_enc)
            eps_draws = [rng.normal(self.cfg.z_dim) for _ in range(loss_cfg.m)]
            zs = [mu + sigma * e for e in eps_draws]
        else:
            zs = [np.zeros(0)]  # all samples coincide without a latent

        preds = []
        dec_caches = []
        for z in zs:
            pos, caches = self.decode(state.h_obs, z, steps, last_pos, last_disp,
                                      want_cache=with_grad)
            preds.append(pos)
            dec_caches.append(caches)
        preds = np.stack(preds)

        var_value, var_cache = variety_forward(gt, preds, loss_cfg.variety_mode)
        coh_value, coh_cache = coherence_forward(state.features, self.cfg.q, loss_cfg, rng)
        total = loss_cfg.lam * coh_value + var_value
        parts = {"total": float(total), "coherence": float(coh_value), "variety": float(var_value)}
        if not with_grad:
            return parts

        d_preds = variety_backward(var_cache, 1.0)
        best = var_cache[3]
        d_h_obs = np.zeros((n, self.cfg.h))
        d_zs = np.zeros((len(zs), zs[0].shape[0]))
        for i in range(n):
            k = best[i]
            d_hi, d_zk = self._decode_backward_agent(dec_caches[k][i], d_preds[k, i])
            d_h_obs[i] += d_hi
            d_zs[k] += d_zk

        d_features = np.zeros_like(state.features)
        coherence_backward(coh_cache, loss_cfg.lam, d_features)

        if self.scene_enc is not None:
            d_mu = d_zs.sum(axis=0)
            d_sigma = np.zeros_like(d_mu)
            for k, e in enumerate(eps_draws):
                d_sigma += d_zs[k] * e
            encode_scene_backward(scene_cache, d_mu, d_sigma, self.scene_enc)

        self._observe_backward(state, d_h_obs, d_features)
        return parts

    # ------------------------------------------------------------------ exports

    def cell_state_trace(self, scene, rng, steps=None):
        """Raw cell values per frame for offline activation analysis.

        Returns rows (phase, agent_id, frame_id, vector): encoder cells for
        every observation frame, then decoder cells for a rollout driven by
        the mean latent (deterministic export).
        """
        disp = to_relative(scene.positions)
        obs_disp = disp[:, :scene.obs_len]
        state = self.observe(obs_disp, neighbors=self.neighbor_sets(scene), want_cells=True)
        rows = []
        for i in range(scene.n_agents):
            for t in range(scene.obs_len):
                rows.append(("obs", i, t, state.cells[i, t].copy()))
        if steps is None:
            steps = scene.pred_len if scene.pred_len > 0 else self.cfg.pred_len
        if self.scene_enc is not None:
            mu, sigma, _ = encode_scene(scene.smap, obs_disp, self.scene_enc)
            z = mu  # mean latent
        else:
            z = np.zeros(0)
        last_pos = scene.positions[:, scene.obs_len - 1]
        last_disp = obs_disp[:, -1]
        _, caches = self.decode(state.h_obs, z, steps, last_pos, last_disp, want_cache=True)
        for i in range(scene.n_agents):
            for t in range(steps):
                rows.append(("pred", i, t, caches[i].steps[t].c.copy()))
        return rows


def write_prediction_records(path, scene_id, pred_set):
    """Append prediction records for one scene to a delimited-text file."""
    with open(path, "a") as fh:
        m, n, steps, _ = pred_set.positions.shape
        for k in range(m):
            for i in range(n):
                for t in range(steps):
                    x, y = pred_set.positions[k, i, t]
                    fh.write(f"{scene_id} {i} {k} {t} {float(x)!r} {float(y)!r}\n")
