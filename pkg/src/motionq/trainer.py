"""Adam optimization loop, run configuration and checkpointing.

Config files are flat ``key = value`` text ('#' comments allowed); keys match
TrainConfig field names. Checkpoints are text files carrying the config, the
epoch, every parameter tensor and the optimizer moments as hex floats, so a
reload reproduces forward outputs bit for bit at the same precision.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields

import numpy as np

from .model import ModelConfig, MotionModel
from .numkit import Rng, read_tensors, write_tensors
from .objectives import (
    LossConfig,
    MetricsReport,
    nonlinear_filter,
    per_agent_best_metrics,
)

__all__ = [
    "TrainConfig",
    "default_queue_length",
    "AdamState",
    "adam_step",
    "build_model",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]


def default_queue_length(dataset):
    """Queue length defaults per dataset family: 4 for ETH, 2 for ZARA, else 3."""
    name = dataset.lower()
    if name.startswith("eth"):
        return 4
    if name.startswith("zara"):
        return 2
    return 3


@dataclass
class TrainConfig:
    h: int = 32
    z_dim: int = 16
    q: int = 3
    dec_h: int = 32
    obs_len: int = 8
    pred_len: int = 12
    use_social: bool = True
    use_latent: bool = True
    map_size: int = 64
    map_channels: int = 2
    sigma_transform: str = "sigmoid"
    sigma_bias: float = 0.0
    relation_mode: str = "signed"
    lam: float = 0.1
    margin: float = 0.5
    m: int = 20
    pairs_per_batch: int = 64
    variety_mode: str = "concat"
    batch_size: int = 64
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    seed: int = 0
    eval_samples: int = 20
    eval_seed: int = 1234
    precision: str = "64"
    checkpoint_every: int = 1
    dataset: str = ""

    def __post_init__(self):
        for name in ("h", "z_dim", "q", "dec_h", "obs_len", "pred_len", "m",
                     "batch_size", "epochs", "eval_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def model_config(self):
        return ModelConfig(
            h=self.h, q=self.q, z_dim=self.z_dim, dec_h=self.dec_h,
            obs_len=self.obs_len, pred_len=self.pred_len,
            use_social=self.use_social, use_latent=self.use_latent,
            map_size=self.map_size, map_channels=self.map_channels,
            sigma_transform=self.sigma_transform, sigma_bias=self.sigma_bias,
            relation_mode=self.relation_mode,
        )

    def loss_config(self):
        return LossConfig(
            lam=self.lam, margin=self.margin, m=self.m,
            pairs_per_batch=self.pairs_per_batch, variety_mode=self.variety_mode,
        )

    def dtype(self):
        return np.float32 if self.precision == "32" else np.float64

    def to_text(self):
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, _, value = body.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            current = getattr(defaults, key)
            if isinstance(current, bool):
                kwargs[key] = value.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                kwargs[key] = int(value)
            elif isinstance(current, float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def build_model(cfg: TrainConfig):
    """Model with parameters initialized from the config seed."""
    return MotionModel(cfg.model_config(), Rng(cfg.seed), dtype=cfg.dtype())


class AdamState:
    """First/second moments per parameter plus the shared step count."""

    def __init__(self, store):
        self.t = 0
        self.m = {name: np.zeros_like(store.value(name)) for name in store.names()}
        self.v = {name: np.zeros_like(store.value(name)) for name in store.names()}


def adam_step(store, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """Bias-corrected Adam update applied in place to every parameter."""
    bad = store.first_nonfinite_grad()
    if bad is not None:
        raise FloatingPointError(f"non-finite gradient in parameter {bad!r}")
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name in store.names():
        g = store.grad(name)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        store.value(name)[...] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def train(cfg: TrainConfig, scenes, out_dir, log=None):
    """Full optimization run; returns (model, loss curve).

    Scenes are shuffled per epoch from the config seed, batched, and each
    batch's mean gradient drives one Adam step. The curve rows are
    (epoch, iteration, total, coherence, variety). A rolling checkpoint is
    written every checkpoint_every epochs and a final one at the end.
    """
    if not scenes:
        raise ValueError("empty dataset")
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(cfg)
    state = AdamState(model.store)
    shuffle_rng = Rng(cfg.seed + 1)
    loss_rng = Rng(cfg.seed + 2)
    loss_cfg = cfg.loss_config()
    curve = []
    iteration = 0
    for epoch in range(cfg.epochs):
        order = np.arange(len(scenes))
        shuffle_rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            model.store.zero_grads()
            sums = {"total": 0.0, "coherence": 0.0, "variety": 0.0}
            for idx in batch:
                parts = model.loss_and_grad(scenes[idx], loss_cfg, loss_rng)
                for key in sums:
                    sums[key] += parts[key]
            model.store.scale_grads(1.0 / len(batch))
            adam_step(model.store, state, cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps)
            row = (epoch, iteration,
                   sums["total"] / len(batch),
                   sums["coherence"] / len(batch),
                   sums["variety"] / len(batch))
            if not np.isfinite(row[2]):
                raise FloatingPointError(f"non-finite loss at iteration {iteration}")
            curve.append(row)
            if log is not None:
                log(row)
            iteration += 1
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, "last.ckpt"), model.store, state, cfg, epoch)
    final = os.path.join(out_dir, "final.ckpt")
    save_checkpoint(final, model.store, state, cfg, cfg.epochs - 1)
    with open(os.path.join(out_dir, "loss_curve.txt"), "w") as fh:
        fh.write("# epoch iteration total coherence variety\n")
        for row in curve:
            fh.write(f"{row[0]} {row[1]} {row[2]:.8f} {row[3]:.8f} {row[4]:.8f}\n")
    return model, curve


def evaluate(model, scenes, m, seed=1234, nonlinear_only=False, nonlinear_threshold=0.1,
             horizons=()):
    """Best-of-m metrics aggregated over every agent of every scene."""
    rng = Rng(seed)
    ades = []
    fdes = []
    tccs = []
    hz_acc = {k: {"ade": [], "fde": [], "tcc": []} for k in horizons}
    for scene in scenes:
        preds = model.predict(scene, m, rng)
        gt = scene.future()
        keep = list(range(scene.n_agents))
        if nonlinear_only:
            keep = [i for i in keep
                    if nonlinear_filter(scene.positions[i], threshold=nonlinear_threshold)]
            if not keep:
                continue
        stats = per_agent_best_metrics(gt[keep], preds.positions[:, keep], horizons=horizons)
        ades.extend(stats["ade"].tolist())
        fdes.extend(stats["fde"].tolist())
        tccs.extend(stats["tcc"].tolist())
        for k, vals in stats["horizons"].items():
            hz_acc[k]["ade"].extend(vals["ade"].tolist())
            hz_acc[k]["fde"].extend(vals["fde"].tolist())
            hz_acc[k]["tcc"].extend(v for v in vals["tcc"].tolist() if not np.isnan(v))
    if not ades:
        raise ValueError("no agents to evaluate")
    per_h = {}
    for k, acc in hz_acc.items():
        if acc["ade"]:
            per_h[k] = (
                float(np.mean(acc["ade"])),
                float(np.mean(acc["fde"])),
                float(np.mean(acc["tcc"])) if acc["tcc"] else None,
            )
    return MetricsReport(
        ade=float(np.mean(ades)),
        fde=float(np.mean(fdes)),
        tcc=float(np.mean(tccs)),
        n_agents=len(ades),
        per_horizon=per_h,
    )


def save_checkpoint(path, store, state, cfg, epoch):
    cfg_text = cfg.to_text()
    with open(path, "w") as fh:
        fh.write("checkpoint-v1\n")
        fh.write(f"hash {cfg.digest()}\n")
        fh.write(f"epoch {epoch}\n")
        fh.write(f"adam-t {state.t}\n")
        fh.write(f"config-lines {len(cfg_text.splitlines())}\n")
        fh.write(cfg_text)
        write_tensors(fh, {name: store.value(name) for name in store.names()})
        write_tensors(fh, state.m)
        write_tensors(fh, state.v)


def load_checkpoint(path):
    """Returns (cfg, model, AdamState, epoch) with parameters loaded in place."""
    with open(path) as fh:
        if fh.readline().strip() != "checkpoint-v1":
            raise ValueError(f"{path}: not a checkpoint file")
        digest = fh.readline().split()[1]
        epoch = int(fh.readline().split()[1])
        adam_t = int(fh.readline().split()[1])
        n_lines = int(fh.readline().split()[1])
        cfg_text = "".join(fh.readline() for _ in range(n_lines))
        cfg = TrainConfig.from_text(cfg_text)
        if cfg.digest() != digest:
            raise ValueError(f"{path}: config hash mismatch")
        values = read_tensors(fh)
        moments_m = read_tensors(fh)
        moments_v = read_tensors(fh)
    model = build_model(cfg)
    model.store.load_values(values)
    state = AdamState(model.store)
    state.t = adam_t
    for name in model.store.names():
        state.m[name][...] = moments_m[name]
        state.v[name][...] = moments_v[name]
    return cfg, model, state, epoch
