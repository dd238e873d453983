"""Masked completion sampling in the spectrum domain.

The sampler runs the reverse diffusion chain on a spectrum while, at every
step, re-noising the (padded) observation to the chain's current level and
splicing observed and generated content together in the temporal domain
under a binary mask. Masks always pin the observed prefix; category-switch
and part-body masks additionally pin entries inside the prediction region,
whose content comes from a caller-provided target motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .diffusion import NoiseSchedule, ddim_step, denoise_step, timestep_subsequence
from .network import Condition, NetworkConfig, modulation_spectrum, predict_noise, time_embedding
from .spectral import DctBasis, dct, idct

__all__ = [
    "CompletionMask",
    "SampleConfig",
    "pad_observation",
    "prediction_mask",
    "switch_mask",
    "partbody_mask",
    "noisy_observation",
    "masked_combine",
    "dct_completion",
    "autoregressive_predict",
]

SAMPLERS = ("ancestral", "ddim")


@dataclass(frozen=True)
class CompletionMask:
    """Binary (H+F, 3J) mask; 1 keeps observation/target content at that entry."""

    mask: np.ndarray
    h_frames: int
    f_frames: int

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=np.float64)
        object.__setattr__(self, "mask", m)
        if self.h_frames < 1 or self.f_frames < 1:
            raise ValueError("mask needs at least one observed and one future frame")
        total = self.h_frames + self.f_frames
        if m.ndim != 2 or m.shape[0] != total or m.shape[1] % 3:
            raise ValueError(
                f"mask shape {m.shape} does not match ({total}, 3J)")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("mask entries must be 0 or 1")
        if not np.all(m[:self.h_frames] == 1.0):
            raise ValueError("observed rows must be all ones")

    @property
    def pins_prediction(self) -> bool:
        return bool(np.any(self.mask[self.h_frames:] == 1.0))


def prediction_mask(h_frames: int, f_frames: int, num_joints: int) -> CompletionMask:
    """Ones over the observed rows, zeros over the frames to be generated."""
    _check_geometry(h_frames, f_frames, num_joints)
    m = np.zeros((h_frames + f_frames, 3 * num_joints))
    m[:h_frames] = 1.0
    return CompletionMask(mask=m, h_frames=h_frames, f_frames=f_frames)


def switch_mask(h_frames: int, f_frames: int, target_frames: int,
                num_joints: int) -> CompletionMask:
    """Prediction mask that also pins the final ``target_frames`` rows."""
    _check_geometry(h_frames, f_frames, num_joints)
    if not 1 <= target_frames < f_frames:
        raise ValueError(
            f"target_frames must lie in [1, {f_frames - 1}], got {target_frames}")
    m = np.zeros((h_frames + f_frames, 3 * num_joints))
    m[:h_frames] = 1.0
    m[h_frames + f_frames - target_frames:] = 1.0
    return CompletionMask(mask=m, h_frames=h_frames, f_frames=f_frames)


def partbody_mask(h_frames: int, f_frames: int, num_joints: int,
                  pinned_joints) -> CompletionMask:
    """Prediction mask that also pins whole-trajectory columns of some joints."""
    _check_geometry(h_frames, f_frames, num_joints)
    pinned = sorted(set(int(j) for j in pinned_joints))
    if any(not 0 <= j < num_joints for j in pinned):
        raise ValueError(f"pinned joints {pinned} outside [0, {num_joints})")
    m = np.zeros((h_frames + f_frames, 3 * num_joints))
    m[:h_frames] = 1.0
    for j in pinned:
        m[h_frames:, 3 * j:3 * j + 3] = 1.0
    return CompletionMask(mask=m, h_frames=h_frames, f_frames=f_frames)


def _check_geometry(h_frames, f_frames, num_joints):
    if h_frames < 1 or f_frames < 1:
        raise ValueError("need at least one observed and one future frame")
    if num_joints < 1:
        raise ValueError(f"num_joints must be positive, got {num_joints}")


def pad_observation(observed: np.ndarray, f_frames: int) -> np.ndarray:
    """Extend an (H, 3J) observation to H+F frames by repeating the last pose."""
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 2 or observed.shape[0] < 1:
        raise ValueError(f"observation must be a non-empty (H, 3J) array, got {observed.shape}")
    if f_frames < 1:
        raise ValueError(f"f_frames must be positive, got {f_frames}")
    return np.concatenate([observed, np.repeat(observed[-1:], f_frames, axis=0)], axis=0)


def noisy_observation(y: np.ndarray, t: int, schedule: NoiseSchedule,
                      z: np.ndarray) -> np.ndarray:
    """Noise a clean spectrum to level t - 1:  sqrt(ab_{t-1}) y + sqrt(1 - ab_{t-1}) z.

    Level 0 (t = 1) returns ``y`` broadcast against ``z`` unchanged.
    """
    if not isinstance(t, (int, np.integer)) or not 1 <= t <= schedule.steps + 1:
        raise ValueError(f"step must be an integer in [1, {schedule.steps + 1}], got {t!r}")
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-2:] != y.shape[-2:]:
        raise ValueError(f"z shape {z.shape} does not match spectrum shape {y.shape}")
    ab = schedule.alpha_bar_at(int(t) - 1)
    return math.sqrt(ab) * y + math.sqrt(1.0 - ab) * z


def _temporal_splice(y_keep: np.ndarray, y_gen: np.ndarray, mask: CompletionMask,
                     basis: DctBasis) -> np.ndarray:
    kept = idct(y_keep, basis)
    generated = idct(y_gen, basis)
    return mask.mask * kept + (1.0 - mask.mask) * generated


def masked_combine(y_keep: np.ndarray, y_gen: np.ndarray, mask: CompletionMask,
                   basis: DctBasis) -> np.ndarray:
    """Splice two spectra in the temporal domain under the mask, re-project."""
    if mask.mask.shape != (basis.num_frames, mask.mask.shape[1]):
        raise ValueError(
            f"mask covers {mask.mask.shape[0]} frames, basis covers {basis.num_frames}")
    return dct(_temporal_splice(y_keep, y_gen, mask, basis), basis)


@dataclass(frozen=True)
class SampleConfig:
    num_samples: int = 10
    sampler: str = "ddim"
    ddim_steps: int = 20
    switch_vanilla_tail: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError(f"num_samples must be positive, got {self.num_samples}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.ddim_steps < 1:
            raise ValueError(f"ddim_steps must be positive, got {self.ddim_steps}")
        if self.switch_vanilla_tail < 0:
            raise ValueError("switch_vanilla_tail must be >= 0")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


def dct_completion(observed: np.ndarray, mask: CompletionMask,
                   params: dict[str, np.ndarray], net_cfg: NetworkConfig,
                   cfg: SampleConfig, schedule: NoiseSchedule, basis: DctBasis,
                   target: np.ndarray | None = None,
                   seed: int | None = None) -> list[np.ndarray]:
    """Sample complete motions that agree with the observation under the mask.

    Per reverse step the chain (a) denoises the running spectrum, (b) noises
    the observation spectrum to the step's destination level with a fresh
    draw, and (c) splices both in the temporal domain under the mask. The
    final step returns the temporal splice directly, so pinned entries match
    the band-limited observation exactly. When the mask pins prediction-region
    entries (switch / part-body), the last ``switch_vanilla_tail`` steps skip
    the splice and denoise plainly.

    Returns ``cfg.num_samples`` motions of shape (H+F, 3J), one per
    independent noise stream spawned from the seed.
    """
    observed = np.asarray(observed, dtype=np.float64)
    h, f = mask.h_frames, mask.f_frames
    total_frames = h + f
    coord = net_cfg.coord_dim
    if observed.shape != (h, coord):
        raise ValueError(f"observation shape {observed.shape} does not match ({h}, {coord})")
    if mask.mask.shape != (total_frames, coord):
        raise ValueError(
            f"mask shape {mask.mask.shape} does not match ({total_frames}, {coord})")
    if basis.num_frames != total_frames:
        raise ValueError(
            f"basis covers {basis.num_frames} frames, mask covers {total_frames}")
    if basis.num_rows != net_cfg.spectrum_rows:
        raise ValueError(
            f"basis keeps {basis.num_rows} rows, network expects {net_cfg.spectrum_rows}")
    if cfg.sampler == "ddim" and cfg.ddim_steps > schedule.steps:
        raise ValueError(
            f"ddim_steps {cfg.ddim_steps} exceeds schedule steps {schedule.steps}")

    base = pad_observation(observed, f)
    pins = mask.pins_prediction
    if pins:
        if target is None:
            raise ValueError("mask pins prediction-region entries but no target was given")
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (f, coord):
            raise ValueError(f"target shape {target.shape} does not match ({f}, {coord})")
        region = mask.mask[h:]
        base[h:] = np.where(region == 1.0, target, base[h:])
    y_obs = dct(base, basis)

    k = cfg.num_samples
    l = basis.num_rows
    root_seed = cfg.seed if seed is None else seed
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(root_seed).spawn(k)]
    y = np.stack([st.standard_normal((l, coord)) for st in streams])

    mod = modulation_spectrum(observed, net_cfg.modulation_ratio, basis)
    if cfg.sampler == "ancestral":
        plan = [(t, t - 1) for t in range(schedule.steps, 0, -1)]
    else:
        subseq = timestep_subsequence(schedule.steps, cfg.ddim_steps)
        plan = [(t, subseq[i + 1] if i + 1 < len(subseq) else 0)
                for i, t in enumerate(subseq)]

    out = None
    for i, (t, dest) in enumerate(plan):
        cond = Condition(mod, time_embedding(t, net_cfg.latent_dim))
        eps_hat = predict_noise(params, net_cfg, y, cond)
        if cfg.sampler == "ancestral":
            z = None
            if t > 1:
                z = np.stack([st.standard_normal((l, coord)) for st in streams])
            y_gen = denoise_step(y, eps_hat, t, schedule, z)
        else:
            y_gen = ddim_step(y, eps_hat, t, dest, schedule)
        last = i == len(plan) - 1
        if pins and len(plan) - i <= cfg.switch_vanilla_tail:
            # Vanilla tail: let the chain settle without re-injecting content.
            y = y_gen
            if last:
                out = idct(y_gen, basis)
            continue
        z_obs = np.stack([st.standard_normal((l, coord)) for st in streams])
        y_keep = noisy_observation(y_obs, dest + 1, schedule, z_obs)
        temporal = _temporal_splice(y_keep, y_gen, mask, basis)
        if last:
            out = temporal
        else:
            y = dct(temporal, basis)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("completion produced non-finite values")
    return [out[j] for j in range(k)]


def autoregressive_predict(observed: np.ndarray, num_windows: int,
                           params: dict[str, np.ndarray], net_cfg: NetworkConfig,
                           cfg: SampleConfig, schedule: NoiseSchedule,
                           basis: DctBasis) -> np.ndarray:
    """Chain window completions, feeding the last H generated frames forward.

    Returns a single motion of H + num_windows * F frames: the raw observation
    followed by each window's generated frames. Window 0 uses the config seed
    directly, so one window reproduces the generated frames of a single-sample
    ``dct_completion`` call bit for bit.
    """
    observed = np.asarray(observed, dtype=np.float64)
    if num_windows < 1:
        raise ValueError(f"num_windows must be positive, got {num_windows}")
    if observed.ndim != 2:
        raise ValueError(f"observation must be 2-D, got shape {observed.shape}")
    h = observed.shape[0]
    f = basis.num_frames - h
    if f < 1:
        raise ValueError(
            f"observation of {h} frames leaves no room in a {basis.num_frames}-frame window")
    mask = prediction_mask(h, f, net_cfg.coord_dim // 3)
    one = replace(cfg, num_samples=1)
    segments = []
    current = observed
    for i in range(num_windows):
        if i == 0:
            seed_i = one.seed
        else:
            seed_i = int(np.random.SeedSequence([one.seed, i]).generate_state(1, np.uint64)[0])
        sample = dct_completion(current, mask, params, net_cfg, one, schedule,
                                basis, seed=seed_i)[0]
        segments.append(sample[h:])
        current = sample[-h:]
    return np.concatenate([observed] + segments, axis=0)
