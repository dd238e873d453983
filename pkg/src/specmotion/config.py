"""Run configuration: defaults, named profiles, file/flag resolution, manifests.

Precedence, lowest to highest: built-in defaults, profile, config file,
command-line flags. A run manifest records the fully resolved configuration
and can be fed back through ``--config`` to reproduce the run.
"""

from __future__ import annotations

import datetime
import json
import os

from . import __version__
from .completion import SampleConfig
from .metrics import EvalConfig
from .network import NetworkConfig
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "PROFILES",
    "resolve_config",
    "net_config_from",
    "train_config_from",
    "sample_config_from",
    "eval_config_from",
    "write_manifest",
]


class ConfigError(Exception):
    """Unusable configuration; maps to exit code 2 at the command line."""


DEFAULTS: dict = {
    # window geometry and data
    "h_frames": 10,
    "f_frames": 20,
    "joints": 4,
    "stride": 1,
    "fps": 50.0,
    # spectrum and network
    "spectrum_rows": 10,
    "num_blocks": 2,
    "latent_dim": 64,
    "num_heads": 4,
    "dropout_rate": 0.2,
    "skip_connections": True,
    "skip_merge": "concat",
    "modulation_ratio": 1.0,
    # diffusion
    "diffusion_steps": 100,
    "schedule_kind": "cosine",
    "sigma_mode": "beta",
    # sampling
    "sampler": "ddim",
    "ddim_steps": 20,
    "num_samples": 10,
    "switch_vanilla_tail": 20,
    # training
    "epochs": 500,
    "batch_size": 16,
    "learning_rate": 3e-4,
    "lr_decay_gamma": 0.9,
    "lr_milestones": None,
    "keep_partial_batch": True,
    "checkpoint_interval": 0,
    # evaluation
    "mm_threshold": 0.5,
    "seed": 0,
}

PROFILES: dict[str, dict] = {
    # Desk-scale setup; identical to the defaults.
    "synthetic-small": {},
    "paper-shape-h36m": {
        "h_frames": 25, "f_frames": 100, "joints": 17, "fps": 50.0,
        "spectrum_rows": 20, "num_blocks": 8, "latent_dim": 512, "num_heads": 8,
        "modulation_ratio": 1.0, "diffusion_steps": 1000, "ddim_steps": 100,
        "num_samples": 50, "epochs": 500, "batch_size": 64,
    },
    "paper-shape-humaneva": {
        "h_frames": 15, "f_frames": 60, "joints": 15, "fps": 60.0,
        "spectrum_rows": 10, "num_blocks": 4, "latent_dim": 512, "num_heads": 8,
        "modulation_ratio": 0.5, "diffusion_steps": 1000, "ddim_steps": 100,
        "num_samples": 50, "epochs": 500, "batch_size": 64,
    },
}

# Keys a checkpoint fixes for sampling-side commands.
GEOMETRY_KEYS = ("h_frames", "f_frames", "diffusion_steps", "schedule_kind", "sigma_mode")


def _coerce(key: str, value):
    if key == "lr_milestones":
        if value is None or value == "" or (isinstance(value, str) and value.lower() == "none"):
            return None
        if isinstance(value, str):
            value = value.split(",")
        try:
            return tuple(int(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"lr_milestones must be a comma list of epochs, got {value!r}")
    template = DEFAULTS[key]
    if isinstance(template, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key} must be true or false, got {value!r}")
    try:
        if isinstance(template, int):
            return int(value)
        if isinstance(template, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a {type(template).__name__}, got {value!r}")
    return str(value)


def load_config_file(path: str) -> dict:
    """Read a JSON config; a run manifest is accepted via its resolved_config."""
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path!r} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path!r} must hold a JSON object")
    if "resolved_config" in data:
        data = data["resolved_config"]
    return data


def resolve_config(profile: str | None = None, config_path: str | None = None,
                   overrides: dict | None = None) -> tuple[dict, set]:
    """Merge all configuration layers.

    Returns (config, explicit) where ``explicit`` collects keys set by the
    config file or flags (not by profiles), for conflict checks against
    checkpoint-fixed geometry.
    """
    cfg = dict(DEFAULTS)
    explicit: set[str] = set()
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(
                f"unknown profile {profile!r}; available: {', '.join(sorted(PROFILES))}")
        cfg.update(PROFILES[profile])
    if config_path is not None:
        for key, value in load_config_file(config_path).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r} in {config_path!r}")
            cfg[key] = _coerce(key, value)
            explicit.add(key)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value)
        explicit.add(key)
    return cfg, explicit


def net_config_from(cfg: dict) -> NetworkConfig:
    try:
        return NetworkConfig(
            num_blocks=cfg["num_blocks"], latent_dim=cfg["latent_dim"],
            num_heads=cfg["num_heads"], spectrum_rows=cfg["spectrum_rows"],
            coord_dim=3 * cfg["joints"], dropout_rate=cfg["dropout_rate"],
            skip_connections=cfg["skip_connections"], skip_merge=cfg["skip_merge"],
            modulation_ratio=cfg["modulation_ratio"])
    except ValueError as e:
        raise ConfigError(str(e))


def train_config_from(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=cfg["epochs"], batch_size=cfg["batch_size"],
            learning_rate=cfg["learning_rate"], lr_decay_gamma=cfg["lr_decay_gamma"],
            lr_milestones=cfg["lr_milestones"], seed=cfg["seed"],
            diffusion_steps=cfg["diffusion_steps"], schedule_kind=cfg["schedule_kind"],
            sigma_mode=cfg["sigma_mode"], keep_partial_batch=cfg["keep_partial_batch"],
            checkpoint_interval=cfg["checkpoint_interval"])
    except ValueError as e:
        raise ConfigError(str(e))


def sample_config_from(cfg: dict) -> SampleConfig:
    try:
        return SampleConfig(
            num_samples=cfg["num_samples"], sampler=cfg["sampler"],
            ddim_steps=cfg["ddim_steps"],
            switch_vanilla_tail=cfg["switch_vanilla_tail"], seed=cfg["seed"])
    except ValueError as e:
        raise ConfigError(str(e))


def eval_config_from(cfg: dict) -> EvalConfig:
    try:
        return EvalConfig(
            h_frames=cfg["h_frames"], num_samples=cfg["num_samples"],
            sampler=cfg["sampler"], ddim_steps=cfg["ddim_steps"],
            schedule_kind=cfg["schedule_kind"], diffusion_steps=cfg["diffusion_steps"],
            sigma_mode=cfg["sigma_mode"], mm_threshold=cfg["mm_threshold"],
            seed=cfg["seed"])
    except ValueError as e:
        raise ConfigError(str(e))


def write_manifest(path: str, command: str, cfg: dict, inputs: dict,
                   outputs: dict) -> None:
    """Record everything needed to reproduce a run, before the work starts."""
    doc = {
        "command": command,
        "resolved_config": {k: (list(v) if isinstance(v, tuple) else v)
                            for k, v in cfg.items()},
        "inputs": inputs,
        "outputs": outputs,
        "code_version": __version__,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
