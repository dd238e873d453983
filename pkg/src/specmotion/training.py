"""Training loop: noise-prediction regression with Adam and stepped lr decay."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .diffusion import SCHEDULE_KINDS, build_schedule
from .network import (
    NetworkConfig,
    build_condition,
    init_params,
    loss_and_gradient_batch,
    save_checkpoint,
)
from .spectral import build_dct_basis, dct

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "init_optimizer",
    "adam_update",
    "train_step",
    "train_loop",
    "save_history",
]

# Fractions of the epoch budget at which lr decays when no explicit
# milestones are configured.
_DEFAULT_MILESTONE_FRACTIONS = (0.75, 0.88, 0.95)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 16
    learning_rate: float = 3e-4
    lr_decay_gamma: float = 0.9
    lr_milestones: tuple[int, ...] | None = None
    seed: int = 0
    diffusion_steps: int = 100
    schedule_kind: str = "cosine"
    sigma_mode: str = "beta"
    keep_partial_batch: bool = True
    checkpoint_interval: int = 0  # epochs between checkpoints, 0 disables

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 < self.lr_decay_gamma <= 1:
            raise ValueError(f"lr_decay_gamma must lie in (0, 1], got {self.lr_decay_gamma}")
        if self.diffusion_steps < 1:
            raise ValueError(f"diffusion_steps must be positive, got {self.diffusion_steps}")
        if self.schedule_kind not in SCHEDULE_KINDS:
            raise ValueError(f"schedule_kind must be one of {SCHEDULE_KINDS}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.checkpoint_interval < 0:
            raise ValueError("checkpoint_interval must be >= 0")
        if self.lr_milestones is not None:
            ms = tuple(self.lr_milestones)
            if any(not 1 <= m < self.epochs for m in ms) or list(ms) != sorted(set(ms)):
                raise ValueError(
                    f"lr_milestones must be strictly increasing epochs in "
                    f"[1, {self.epochs}), got {ms}")
            object.__setattr__(self, "lr_milestones", ms)

    def milestones(self) -> tuple[int, ...]:
        if self.lr_milestones is not None:
            return self.lr_milestones
        ms = sorted({int(f * self.epochs) for f in _DEFAULT_MILESTONE_FRACTIONS})
        return tuple(m for m in ms if 1 <= m < self.epochs)

    def lr_at_epoch(self, epoch: int) -> float:
        """Learning rate during 1-based ``epoch``; decays after each milestone epoch."""
        passed = sum(1 for m in self.milestones() if m < epoch)
        return self.learning_rate * self.lr_decay_gamma ** passed


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stability: float = 1e-8


def init_optimizer(params: dict[str, np.ndarray]) -> OptimizerState:
    return OptimizerState(m={k: np.zeros_like(p) for k, p in params.items()},
                          v={k: np.zeros_like(p) for k, p in params.items()})


def adam_update(params, grads, opt: OptimizerState, lr: float):
    """One bias-corrected Adam step; returns fresh (params, opt) without mutation."""
    if set(grads) != set(params):
        raise ValueError("gradient keys do not match parameter keys")
    step = opt.step + 1
    c1 = 1.0 - opt.beta1 ** step
    c2 = 1.0 - opt.beta2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {k} shape {p.shape}")
        m = opt.beta1 * opt.m[k] + (1.0 - opt.beta1) * g
        v = opt.beta2 * opt.v[k] + (1.0 - opt.beta2) * g * g
        new_params[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + opt.eps_stability)
        new_m[k] = m
        new_v[k] = v
    return new_params, OptimizerState(m=new_m, v=new_v, step=step, beta1=opt.beta1,
                                      beta2=opt.beta2, eps_stability=opt.eps_stability)


def train_step(params, opt, batch, cfg: TrainConfig, net_cfg: NetworkConfig,
               h_frames: int, schedule, basis, rng: np.random.Generator,
               lr: float | None = None):
    """One optimizer step over a batch of (H+F, 3J) sequences.

    Per sequence in order: draw a diffusion step uniformly from 1..steps and
    a standard normal noise array, then one dropout seed for the whole batch.
    Returns (params, opt, mean batch loss).
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    t_frames = basis.num_frames
    y0s, ts, epss, conds = [], [], [], []
    for x in batch:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (t_frames, net_cfg.coord_dim):
            raise ValueError(
                f"sequence shape {x.shape} does not match "
                f"({t_frames}, {net_cfg.coord_dim})")
        t = int(rng.integers(1, cfg.diffusion_steps + 1))
        eps = rng.standard_normal((net_cfg.spectrum_rows, net_cfg.coord_dim))
        y0s.append(dct(x, basis))
        ts.append(t)
        epss.append(eps)
        conds.append(build_condition(x[:h_frames], net_cfg.modulation_ratio,
                                     basis, t, net_cfg.latent_dim))
    dropout_rng = None
    if net_cfg.dropout_rate > 0:
        dropout_rng = np.random.default_rng(int(rng.integers(0, 2 ** 63)))
    y0 = np.stack(y0s)
    eps = np.stack(epss)
    ab = schedule.alpha_bar[np.array(ts)]
    y_t = np.sqrt(ab)[:, None, None] * y0 + np.sqrt(1.0 - ab)[:, None, None] * eps
    try:
        loss, grads = loss_and_gradient_batch(params, net_cfg, y_t, eps, conds,
                                              training=True, dropout_rng=dropout_rng)
    except FloatingPointError as e:
        raise FloatingPointError(f"{e} at optimizer step {opt.step + 1}") from None
    new_params, new_opt = adam_update(params, grads, opt,
                                      cfg.learning_rate if lr is None else lr)
    return new_params, new_opt, loss


def train_loop(cfg: TrainConfig, dataset, net_cfg: NetworkConfig, h_frames: int,
               checkpoint_dir: str | None = None, log=None):
    """Train from scratch over a windowed dataset.

    ``dataset`` is a sequence of (H+F, 3J) arrays of equal shape. Returns
    (params, history) where history rows are (step, epoch, lr, loss). Batches
    are drawn from a fresh seeded shuffle each epoch; the final partial batch
    is kept or dropped per the config.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    first = np.asarray(dataset[0])
    t_frames = first.shape[0]
    if not 1 <= h_frames < t_frames:
        raise ValueError(f"h_frames must lie in [1, {t_frames}), got {h_frames}")
    for x in dataset:
        if np.asarray(x).shape != first.shape:
            raise ValueError("dataset sequences must share one shape")
    ss = np.random.SeedSequence(cfg.seed)
    init_rng, data_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    params = init_params(net_cfg, init_rng)
    opt = init_optimizer(params)
    schedule = build_schedule(cfg.schedule_kind, cfg.diffusion_steps, cfg.sigma_mode)
    basis = build_dct_basis(t_frames, net_cfg.spectrum_rows)
    history: list[tuple[int, int, float, float]] = []
    step = 0
    extra = {"h_frames": h_frames, "f_frames": t_frames - h_frames,
             "diffusion_steps": cfg.diffusion_steps,
             "schedule_kind": cfg.schedule_kind, "sigma_mode": cfg.sigma_mode}
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at_epoch(epoch)
        order = data_rng.permutation(len(dataset))
        ends = range(cfg.batch_size, len(order) + 1, cfg.batch_size)
        batches = [order[e - cfg.batch_size:e] for e in ends]
        tail = len(order) % cfg.batch_size
        if tail and cfg.keep_partial_batch:
            batches.append(order[len(order) - tail:])
        for ids in batches:
            xs = [np.asarray(dataset[j], dtype=np.float64) for j in ids]
            params, opt, loss = train_step(params, opt, xs, cfg, net_cfg, h_frames,
                                           schedule, basis, data_rng, lr=lr)
            step += 1
            history.append((step, epoch, lr, loss))
            if log is not None:
                log(step, epoch, lr, loss)
        if (checkpoint_dir and cfg.checkpoint_interval
                and epoch % cfg.checkpoint_interval == 0):
            save_checkpoint(os.path.join(checkpoint_dir, f"checkpoint_epoch{epoch:05d}.ckpt"),
                            params, net_cfg, extra={**extra, "epoch": epoch, "step": step})
    if checkpoint_dir:
        save_checkpoint(os.path.join(checkpoint_dir, "checkpoint_final.ckpt"),
                        params, net_cfg, extra={**extra, "epoch": cfg.epochs, "step": step})
    return params, history


def save_history(path, history) -> None:
    """Write loss history as CSV with columns step, epoch, lr, loss."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,epoch,lr,loss\n")
        for step, epoch, lr, loss in history:
            f.write(f"{step},{epoch},{lr!r},{loss!r}\n")
