"""Variance schedules and single diffusion steps.

Step indices are 1-based: t runs over 1..steps. ``alpha_bar`` has one extra
leading entry so it can be indexed by t directly, with alpha_bar[0] = 1
meaning "no noise"; noising to level 0 is therefore the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SCHEDULE_KINDS",
    "NoiseSchedule",
    "build_schedule",
    "forward_diffuse",
    "denoise_step",
    "ddim_step",
    "timestep_subsequence",
]

SCHEDULE_KINDS = ("cosine", "linear", "sqrt")
SIGMA_MODES = ("beta", "posterior")

_LINEAR_BETA_START = 1e-4
_LINEAR_BETA_END = 0.02
_COSINE_OFFSET = 0.008
_SQRT_OFFSET = 1e-4
# Steps derived from alpha_bar ratios are clamped here; without the clamp the
# last cosine/sqrt step would reach or exceed beta = 1.
_BETA_MAX = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    steps: int
    beta: np.ndarray       # (steps,), beta[i] belongs to step t = i + 1
    alpha: np.ndarray      # (steps,), 1 - beta
    alpha_bar: np.ndarray  # (steps + 1,), cumulative product, indexed by t
    sigma: np.ndarray      # (steps,), reverse-step noise scale

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        return float(self.alpha_bar[t])

    def sigma_at(self, t: int) -> float:
        return float(self.sigma[t - 1])


def build_schedule(kind: str, steps: int, sigma_mode: str = "beta") -> NoiseSchedule:
    """Tabulate a noise schedule.

    kinds:
      linear    beta grows linearly from 1e-4 to 0.02
      cosine    alpha_bar_t = f(t)/f(0), f(t) = cos(((t/steps + s)/(1 + s)) * pi/2)^2
                with s = 0.008
      sqrt      alpha_bar_t = 1 - sqrt(t/steps + s) with s = 1e-4

    sigma_mode "beta" uses sigma_t = sqrt(beta_t); "posterior" uses the
    variance of the exact reverse posterior,
    sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t.
    """
    if steps < 1:
        raise ValueError(f"steps must be positive, got {steps}")
    if sigma_mode not in SIGMA_MODES:
        raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}, got {sigma_mode!r}")
    if kind == "linear":
        beta = np.linspace(_LINEAR_BETA_START, _LINEAR_BETA_END, steps)
    elif kind == "cosine":
        grid = np.arange(steps + 1, dtype=np.float64) / steps
        f = np.cos((grid + _COSINE_OFFSET) / (1.0 + _COSINE_OFFSET) * np.pi / 2.0) ** 2
        raw = f / f[0]
        beta = np.minimum(1.0 - raw[1:] / raw[:-1], _BETA_MAX)
    elif kind == "sqrt":
        grid = np.arange(steps + 1, dtype=np.float64) / steps
        raw = 1.0 - np.sqrt(grid + _SQRT_OFFSET)
        raw[0] = 1.0
        beta = np.minimum(1.0 - raw[1:] / raw[:-1], _BETA_MAX)
    else:
        raise ValueError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {kind!r}")

    if not np.all((beta > 0.0) & (beta < 1.0)):
        raise FloatingPointError(f"schedule {kind!r} produced beta outside (0, 1)")
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    if sigma_mode == "beta":
        sigma = np.sqrt(beta)
    else:
        sigma = np.sqrt((1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta)
    return NoiseSchedule(kind=kind, steps=steps, beta=beta, alpha=alpha,
                         alpha_bar=alpha_bar, sigma=sigma)


def _check_step(t: int, schedule: NoiseSchedule) -> None:
    if not isinstance(t, (int, np.integer)) or not 1 <= t <= schedule.steps:
        raise ValueError(f"step must be an integer in [1, {schedule.steps}], got {t!r}")


def forward_diffuse(y0: np.ndarray, t: int, eps: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """Noise a clean spectrum to level t:  sqrt(ab_t) * y0 + sqrt(1 - ab_t) * eps."""
    _check_step(t, schedule)
    y0 = np.asarray(y0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if y0.shape != eps.shape:
        raise ValueError(f"y0 shape {y0.shape} does not match eps shape {eps.shape}")
    ab = schedule.alpha_bar_at(t)
    return math.sqrt(ab) * y0 + math.sqrt(1.0 - ab) * eps


def denoise_step(y_t: np.ndarray, eps_hat: np.ndarray, t: int,
                 schedule: NoiseSchedule, z: np.ndarray | None = None) -> np.ndarray:
    """One ancestral reverse step from level t to t - 1.

    Computes (y_t - (1 - a_t)/sqrt(1 - ab_t) * eps_hat) / sqrt(a_t) + sigma_t * z.
    ``z`` must be omitted (or all-zero) at the final step t = 1.
    """
    _check_step(t, schedule)
    y_t = np.asarray(y_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if y_t.shape != eps_hat.shape:
        raise ValueError(f"y_t shape {y_t.shape} does not match eps_hat shape {eps_hat.shape}")
    a = schedule.alpha_at(t)
    ab = schedule.alpha_bar_at(t)
    mean = (y_t - (1.0 - a) / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(a)
    if z is None:
        return mean
    z = np.asarray(z, dtype=np.float64)
    if z.shape != y_t.shape:
        raise ValueError(f"z shape {z.shape} does not match y_t shape {y_t.shape}")
    if t == 1 and np.any(z != 0.0):
        raise ValueError("reverse-step noise must be zero at the final step t = 1")
    return mean + schedule.sigma_at(t) * z


def ddim_step(y_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int,
              schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) skip step from level t down to t_prev.

    Estimates y0_hat = (y_t - sqrt(1 - ab_t) * eps_hat) / sqrt(ab_t) and
    re-noises it to level t_prev with the same predicted noise direction.
    """
    _check_step(t, schedule)
    if not isinstance(t_prev, (int, np.integer)) or not 0 <= t_prev < t:
        raise ValueError(f"t_prev must be an integer in [0, {t - 1}], got {t_prev!r}")
    y_t = np.asarray(y_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if y_t.shape != eps_hat.shape:
        raise ValueError(f"y_t shape {y_t.shape} does not match eps_hat shape {eps_hat.shape}")
    ab_t = schedule.alpha_bar_at(t)
    ab_p = schedule.alpha_bar_at(int(t_prev))
    y0_hat = (y_t - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    return math.sqrt(ab_p) * y0_hat + math.sqrt(1.0 - ab_p) * eps_hat


def timestep_subsequence(steps: int, count: int) -> list[int]:
    """Evenly spaced decreasing step indices for skip sampling.

    Returns ``count`` integers starting at ``steps``; entry k (1-based from the
    end) is round(steps * k / count), rounding half away from zero. The last
    entry's predecessor in the skip chain is 0.
    """
    if steps < 1:
        raise ValueError(f"steps must be positive, got {steps}")
    if not 1 <= count <= steps:
        raise ValueError(f"count must lie in [1, {steps}], got {count}")
    return [int(math.floor(steps * k / count + 0.5)) for k in range(count, 0, -1)]
