"""Noise-prediction network over spectrum rows.

The network is a transformer encoder whose tokens are the L rows of a
spectrum. Each block applies feature-wise modulation (scale/shift generated
from the condition) before its attention and feed-forward sublayers, and the
second half of the blocks receives long-range skips from mirrored early
blocks. The condition concatenates the spectrum of the padded modulating
motion with a sinusoidal embedding of the diffusion step.

Parameters live in a flat name -> float64 array mapping whose insertion
order is the canonical serialization order:

    input_proj.{w,b}
    block{i}.film_attn.{w1,b1,w2,b2}
    block{i}.attn.{wq,bq,wk,bk,wv,bv,wo,bo}
    block{i}.film_ffn.{w1,b1,w2,b2}
    block{i}.ffn.{w1,b1,w2,b2}
    block{i}.skip.{w,b}             (second-half blocks, concat merge only)
    output_proj.{w,b}
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .diffusion import NoiseSchedule, forward_diffuse
from .spectral import DctBasis, dct

__all__ = [
    "NetworkConfig",
    "Condition",
    "time_embedding",
    "modulation_spectrum",
    "build_condition",
    "init_params",
    "num_parameters",
    "predict_noise",
    "loss_and_gradient",
    "loss_and_gradient_batch",
    "save_checkpoint",
    "load_checkpoint",
]

_FFN_MULT = 4
_NEAR_ZERO_SCALE = 1e-2
_TIME_BASE = 1.0e4
_CHECKPOINT_FORMAT = "specmotion-checkpoint"
_CHECKPOINT_VERSION = 1

SKIP_MERGE_MODES = ("concat", "add")


@dataclass(frozen=True)
class NetworkConfig:
    num_blocks: int
    latent_dim: int
    num_heads: int
    spectrum_rows: int       # L
    coord_dim: int           # 3J
    dropout_rate: float = 0.2
    skip_connections: bool = True
    skip_merge: str = "concat"
    modulation_ratio: float = 1.0

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError(f"num_blocks must be positive, got {self.num_blocks}")
        if self.latent_dim < 2 or self.latent_dim % 2:
            raise ValueError(
                f"latent_dim must be a positive even number, got {self.latent_dim}")
        if self.num_heads < 1 or self.latent_dim % self.num_heads:
            raise ValueError(
                f"latent_dim {self.latent_dim} is not divisible by "
                f"num_heads {self.num_heads}")
        if self.spectrum_rows < 1:
            raise ValueError(f"spectrum_rows must be positive, got {self.spectrum_rows}")
        if self.coord_dim < 3 or self.coord_dim % 3:
            raise ValueError(
                f"coord_dim must be a positive multiple of 3, got {self.coord_dim}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.skip_merge not in SKIP_MERGE_MODES:
            raise ValueError(
                f"skip_merge must be one of {SKIP_MERGE_MODES}, got {self.skip_merge!r}")
        if not 0.0 < self.modulation_ratio <= 1.0:
            raise ValueError(
                f"modulation_ratio must lie in (0, 1], got {self.modulation_ratio}")


@dataclass(frozen=True)
class Condition:
    """Per-call conditioning: modulating-motion spectrum plus step embedding."""

    modulation_spectrum: np.ndarray  # (L, 3J)
    time_embedding: np.ndarray       # (latent_dim,)


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a diffusion step.

    Layout interleaves sin/cos pairs over ``dim // 2`` geometrically spaced
    frequencies between 1 and 1/10000.
    """
    if dim < 2 or dim % 2:
        raise ValueError(f"embedding dim must be a positive even number, got {dim}")
    if t < 0:
        raise ValueError(f"step must be non-negative, got {t}")
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = _TIME_BASE ** (-np.arange(half, dtype=np.float64) / (half - 1))
    angles = float(t) * freqs
    emb = np.empty(dim, dtype=np.float64)
    emb[0::2] = np.sin(angles)
    emb[1::2] = np.cos(angles)
    return emb


def modulation_ratio_frames(ratio: float, observed_frames: int) -> int:
    """Number of leading observation frames kept for the modulating motion.

    max(1, round(ratio * H)), rounding half away from zero.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"modulation ratio must lie in (0, 1], got {ratio}")
    if observed_frames < 1:
        raise ValueError(f"observation must be non-empty, got {observed_frames} frames")
    return max(1, int(math.floor(ratio * observed_frames + 0.5)))


def modulation_spectrum(observed: np.ndarray, ratio: float, basis: DctBasis) -> np.ndarray:
    """Spectrum of the modulating motion: first K observed frames, last one repeated."""
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 2 or observed.shape[0] < 1:
        raise ValueError(f"observation must be a non-empty (H, 3J) array, got {observed.shape}")
    if observed.shape[0] > basis.num_frames:
        raise ValueError(
            f"observation has {observed.shape[0]} frames, basis covers {basis.num_frames}")
    kept = modulation_ratio_frames(ratio, observed.shape[0])
    pad = np.repeat(observed[kept - 1:kept], basis.num_frames - kept, axis=0)
    return dct(np.concatenate([observed[:kept], pad], axis=0), basis)


def build_condition(observed: np.ndarray, ratio: float, basis: DctBasis,
                    t: int, dim: int) -> Condition:
    return Condition(modulation_spectrum(observed, ratio, basis),
                     time_embedding(t, dim))


def _skip_block_ids(config: NetworkConfig) -> list[int]:
    if not config.skip_connections:
        return []
    n = config.num_blocks
    return [i for i in range(n) if 2 * i > n - 1]


def init_params(config: NetworkConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Initialise parameters in canonical order.

    Input/output projections and the feature-wise modulation generators start
    near zero (uniform at scale 1e-2); attention, feed-forward and skip-merge
    maps use fan-in-scaled uniform init. Biases start at zero and consume no
    randomness.
    """
    d = config.latent_dim
    c = config.coord_dim
    params: dict[str, np.ndarray] = {}

    def uniform(shape, bound):
        return rng.uniform(-bound, bound, shape)

    def fan_in(shape):
        return uniform(shape, 1.0 / math.sqrt(shape[0]))

    params["input_proj.w"] = uniform((c, d), _NEAR_ZERO_SCALE)
    params["input_proj.b"] = np.zeros(d)
    skip_ids = set(_skip_block_ids(config))
    if config.skip_merge == "add":
        skip_ids = set()
    for i in range(config.num_blocks):
        name = f"block{i}"
        params[f"{name}.film_attn.w1"] = uniform((c + d, d), _NEAR_ZERO_SCALE)
        params[f"{name}.film_attn.b1"] = np.zeros(d)
        params[f"{name}.film_attn.w2"] = uniform((d, 2 * d), _NEAR_ZERO_SCALE)
        params[f"{name}.film_attn.b2"] = np.zeros(2 * d)
        for proj in ("wq", "wk", "wv", "wo"):
            params[f"{name}.attn.{proj}"] = fan_in((d, d))
            params[f"{name}.attn.{proj.replace('w', 'b')}"] = np.zeros(d)
        params[f"{name}.film_ffn.w1"] = uniform((c + d, d), _NEAR_ZERO_SCALE)
        params[f"{name}.film_ffn.b1"] = np.zeros(d)
        params[f"{name}.film_ffn.w2"] = uniform((d, 2 * d), _NEAR_ZERO_SCALE)
        params[f"{name}.film_ffn.b2"] = np.zeros(2 * d)
        params[f"{name}.ffn.w1"] = fan_in((d, _FFN_MULT * d))
        params[f"{name}.ffn.b1"] = np.zeros(_FFN_MULT * d)
        params[f"{name}.ffn.w2"] = fan_in((_FFN_MULT * d, d))
        params[f"{name}.ffn.b2"] = np.zeros(d)
        if i in skip_ids:
            params[f"{name}.skip.w"] = fan_in((2 * d, d))
            params[f"{name}.skip.b"] = np.zeros(d)
    params["output_proj.w"] = uniform((d, c), _NEAR_ZERO_SCALE)
    params["output_proj.b"] = np.zeros(c)
    return params


def num_parameters(params: dict[str, np.ndarray]) -> int:
    return sum(v.size for v in params.values())


def _film(x, cond, p, prefix, d):
    h = ad.gelu(ad.add(ad.matmul(cond, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    g = ad.add(ad.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])
    scale_raw = ad.narrow(g, -1, 0, d)
    shift = ad.narrow(g, -1, d, d)
    # x * (1 + scale_raw) + shift; zeroed generators leave x untouched.
    return ad.add(ad.add(ad.mul(x, scale_raw), x), shift)


def _attention(x, p, prefix, config):
    b, l, d = x.shape
    heads = config.num_heads
    hd = d // heads

    def heads_of(name):
        full = ad.add(ad.matmul(x, p[f"{prefix}.{name}"]),
                      p[f"{prefix}.{name.replace('w', 'b')}"])
        return ad.transpose(ad.reshape(full, (b, l, heads, hd)), (0, 2, 1, 3))

    q = heads_of("wq")
    k = heads_of("wk")
    v = heads_of("wv")
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    ctx = ad.matmul(ad.softmax(scores), v)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, l, d))
    return ad.add(ad.matmul(merged, p[f"{prefix}.wo"]), p[f"{prefix}.bo"])


def _ffn(x, p, prefix):
    h = ad.gelu(ad.add(ad.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    return ad.add(ad.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])


def _dropout(x, config, training, rng):
    if not training or config.dropout_rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout requires a dropout rng")
    keep = 1.0 - config.dropout_rate
    mask = (rng.random(x.shape) >= config.dropout_rate).astype(np.float64) / keep
    return ad.mul(x, ad.Tensor(mask))


def _forward(p, config, y, cond, training, dropout_rng):
    n = config.num_blocks
    d = config.latent_dim
    h = ad.add(ad.matmul(y, p["input_proj.w"]), p["input_proj.b"])
    block_outputs = []
    for i in range(n):
        if config.skip_connections and 2 * i > n - 1:
            partner = block_outputs[n - 1 - i]
            if config.skip_merge == "concat":
                h = ad.add(ad.matmul(ad.concat([h, partner], -1), p[f"block{i}.skip.w"]),
                           p[f"block{i}.skip.b"])
            else:
                h = ad.add(h, partner)
        a = _film(h, cond, p, f"block{i}.film_attn", d)
        h = ad.add(h, _dropout(_attention(a, p, f"block{i}.attn", config),
                               config, training, dropout_rng))
        f = _film(h, cond, p, f"block{i}.film_ffn", d)
        h = ad.add(h, _dropout(_ffn(f, p, f"block{i}.ffn"),
                               config, training, dropout_rng))
        block_outputs.append(h)
    return ad.add(ad.matmul(h, p["output_proj.w"]), p["output_proj.b"])


def _condition_tokens(conds: Sequence[Condition], config: NetworkConfig) -> np.ndarray:
    mods = np.stack([np.asarray(c.modulation_spectrum, dtype=np.float64) for c in conds])
    tembs = np.stack([np.asarray(c.time_embedding, dtype=np.float64) for c in conds])
    expect = (len(conds), config.spectrum_rows, config.coord_dim)
    if mods.shape != expect:
        raise ValueError(f"modulation spectra have shape {mods.shape}, expected {expect}")
    if tembs.shape != (len(conds), config.latent_dim):
        raise ValueError(
            f"time embeddings have shape {tembs.shape}, expected "
            f"{(len(conds), config.latent_dim)}")
    tiled = np.repeat(tembs[:, None, :], config.spectrum_rows, axis=1)
    return np.concatenate([mods, tiled], axis=-1)


def _check_params(params: dict[str, np.ndarray], config: NetworkConfig) -> None:
    expected = _param_shapes(config)
    if list(params.keys()) != list(expected):
        missing = set(expected) - set(params)
        extra = set(params) - set(expected)
        raise ValueError(
            f"parameter set does not match config (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(
                f"parameter {name} has shape {params[name].shape}, expected {shape}")


def _param_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    d, c = config.latent_dim, config.coord_dim
    shapes: dict[str, tuple[int, ...]] = {
        "input_proj.w": (c, d), "input_proj.b": (d,)}
    skip_ids = set(_skip_block_ids(config)) if config.skip_merge == "concat" else set()
    for i in range(config.num_blocks):
        name = f"block{i}"
        shapes[f"{name}.film_attn.w1"] = (c + d, d)
        shapes[f"{name}.film_attn.b1"] = (d,)
        shapes[f"{name}.film_attn.w2"] = (d, 2 * d)
        shapes[f"{name}.film_attn.b2"] = (2 * d,)
        for proj in ("wq", "wk", "wv", "wo"):
            shapes[f"{name}.attn.{proj}"] = (d, d)
            shapes[f"{name}.attn.{proj.replace('w', 'b')}"] = (d,)
        shapes[f"{name}.film_ffn.w1"] = (c + d, d)
        shapes[f"{name}.film_ffn.b1"] = (d,)
        shapes[f"{name}.film_ffn.w2"] = (d, 2 * d)
        shapes[f"{name}.film_ffn.b2"] = (2 * d,)
        shapes[f"{name}.ffn.w1"] = (d, _FFN_MULT * d)
        shapes[f"{name}.ffn.b1"] = (_FFN_MULT * d,)
        shapes[f"{name}.ffn.w2"] = (_FFN_MULT * d, d)
        shapes[f"{name}.ffn.b2"] = (d,)
        if i in skip_ids:
            shapes[f"{name}.skip.w"] = (2 * d, d)
            shapes[f"{name}.skip.b"] = (d,)
    shapes["output_proj.w"] = (d, c)
    shapes["output_proj.b"] = (c,)
    return shapes


def _normalize_input(y_t, cond, config):
    y_t = np.asarray(y_t, dtype=np.float64)
    single = y_t.ndim == 2
    if single:
        y_t = y_t[None]
    if y_t.ndim != 3 or y_t.shape[1:] != (config.spectrum_rows, config.coord_dim):
        raise ValueError(
            f"spectrum batch has shape {y_t.shape}, expected "
            f"(*, {config.spectrum_rows}, {config.coord_dim})")
    conds = [cond] if isinstance(cond, Condition) else list(cond)
    if len(conds) not in (1, y_t.shape[0]):
        raise ValueError(
            f"got {len(conds)} conditions for a batch of {y_t.shape[0]}")
    return y_t, conds, single


def predict_noise(params: dict[str, np.ndarray], config: NetworkConfig,
                  y_t: np.ndarray, cond, training: bool = False,
                  dropout_rng: np.random.Generator | None = None) -> np.ndarray:
    """Predict the noise contained in y_t; accepts (L, 3J) or batched (B, L, 3J)."""
    _check_params(params, config)
    y, conds, single = _normalize_input(y_t, cond, config)
    tokens = _condition_tokens(conds, config)
    p = {k: ad.Tensor(v) for k, v in params.items()}
    out = _forward(p, config, ad.Tensor(y), ad.Tensor(tokens), training, dropout_rng)
    data = out.data
    if not np.all(np.isfinite(data)):
        raise FloatingPointError("network output contains non-finite values")
    return data[0] if single else data


def loss_and_gradient_batch(params, config, y_t, eps, conds,
                            training=True, dropout_rng=None):
    """Mean squared noise-prediction error and its parameter gradients.

    ``y_t`` and ``eps`` are (B, L, 3J); the loss averages over every entry
    of the batch, so it matches the mean of per-sequence losses.
    """
    _check_params(params, config)
    tokens = _condition_tokens(conds, config)
    p = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
    pred = _forward(p, config, ad.Tensor(y_t), ad.Tensor(tokens), training, dropout_rng)
    diff = ad.sub(ad.Tensor(eps), pred)
    loss = ad.mean_all(ad.mul(diff, diff))
    value = float(loss.data)
    if not math.isfinite(value):
        raise FloatingPointError("non-finite training loss")
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
             for k, t in p.items()}
    return value, grads


def loss_and_gradient(params: dict[str, np.ndarray], config: NetworkConfig,
                      y0: np.ndarray, t: int, eps: np.ndarray, cond: Condition,
                      schedule: NoiseSchedule, training: bool = True,
                      dropout_rng: np.random.Generator | None = None):
    """Single-sequence noise-prediction loss and gradients at step t."""
    y0 = np.asarray(y0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    y_t = forward_diffuse(y0, t, eps, schedule)
    return loss_and_gradient_batch(params, config, y_t[None], eps[None], [cond],
                                   training=training, dropout_rng=dropout_rng)


def save_checkpoint(path, params: dict[str, np.ndarray], config: NetworkConfig,
                    extra: dict | None = None) -> None:
    """Write a versioned header line plus the flat little-endian float64 blob."""
    _check_params(params, config)
    header = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "config": dataclasses.asdict(config),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for v in params.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint, returning (params, config, extra)."""
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: not a checkpoint file ({e})") from None
        if not isinstance(header, dict) or header.get("format") != _CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a checkpoint file")
        if header.get("version") != _CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        config = NetworkConfig(**header["config"])
        params: dict[str, np.ndarray] = {}
        for entry in header["params"]:
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated checkpoint at parameter {entry['name']!r}")
            params[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after parameter blob")
    _check_params(params, config)
    return params, config, header.get("extra", {})
