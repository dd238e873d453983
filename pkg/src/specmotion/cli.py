"""Command line for the motion-completion toolkit.

Commands: synth, train, predict, switch, control, eval, plot. Every command
resolves its configuration (defaults < profile < config file < flags) and
writes a ``manifest.json`` into its output directory before doing any heavy
work; re-running with ``--config <manifest>`` reproduces the outputs byte
for byte. Exit codes: 0 success, 2 unusable arguments/config, 1 runtime
failure.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys

import numpy as np

from .completion import (
    dct_completion,
    partbody_mask,
    prediction_mask,
    switch_mask,
)
from .config import (
    GEOMETRY_KEYS,
    PROFILES,
    ConfigError,
    eval_config_from,
    net_config_from,
    resolve_config,
    sample_config_from,
    train_config_from,
    write_manifest,
)
from .data import ClipFormatError, MotionClip, WindowSpec, load_clip, save_clip, synthetic_dataset, window
from .diffusion import build_schedule
from .metrics import ade, evaluate_parallel, fde
from .network import load_checkpoint
from .spectral import build_dct_basis
from .training import save_history, train_loop

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#333333")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=sorted(PROFILES), help="named preset")
    p.add_argument("--config", help="JSON config file or a previous run manifest")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--set", dest="sets", action="append", default=[],
                   metavar="KEY=VALUE", help="override any config key")


def _resolved(args, extra: dict | None = None):
    overrides: dict = {}
    for item in args.sets:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    overrides.update(extra or {})
    return resolve_config(args.profile, args.config, overrides)


def _out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_clip_checked(path: str) -> MotionClip:
    if not os.path.exists(path):
        raise ConfigError(f"clip {path!r} does not exist")
    try:
        return load_clip(path)
    except ClipFormatError as e:
        raise ConfigError(f"cannot read clip: {e}")


def _load_ckpt(path: str):
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint {path!r} does not exist")
    try:
        return load_checkpoint(path)
    except ValueError as e:
        raise ConfigError(f"cannot read checkpoint: {e}")


def _apply_checkpoint_geometry(cfg: dict, explicit: set, extra: dict, path: str) -> None:
    # The checkpoint fixes the geometry it was trained with; explicit
    # conflicting settings are refused rather than silently ignored.
    for key in GEOMETRY_KEYS:
        if key not in extra:
            continue
        if key in explicit and cfg[key] != extra[key]:
            raise ConfigError(
                f"{key} = {cfg[key]!r} conflicts with checkpoint {path!r} "
                f"({key} = {extra[key]!r})")
        cfg[key] = extra[key]


def _dataset_clips(data_dir: str) -> list[MotionClip]:
    if not os.path.isdir(data_dir):
        raise ConfigError(f"data directory {data_dir!r} does not exist")
    paths = sorted(glob.glob(os.path.join(data_dir, "*.smc")))
    if not paths:
        raise ConfigError(f"no .smc clips found in {data_dir!r}")
    return [_load_clip_checked(p) for p in paths]


def _dataset_windows(clips, cfg) -> list[np.ndarray]:
    spec = WindowSpec(cfg["h_frames"], cfg["f_frames"], cfg["stride"])
    out: list[np.ndarray] = []
    for i, clip in enumerate(clips):
        if clip.num_frames < spec.total:
            raise ConfigError(
                f"clip {i} has {clip.num_frames} frames, windows need {spec.total}")
        if clip.num_joints * 3 != 3 * cfg["joints"]:
            raise ConfigError(
                f"clip {i} has {clip.num_joints} joints, config expects {cfg['joints']}")
        out.extend(window(clip, spec))
    return out


def cmd_synth(args) -> int:
    cfg, _ = _resolved(args)
    out = _out_dir(args.out)
    count = args.clips
    clip_len = args.clip_len if args.clip_len else cfg["h_frames"] + cfg["f_frames"]
    names = [os.path.join(out, f"clip_{i:04d}.smc") for i in range(count)]
    write_manifest(os.path.join(out, "manifest.json"), "synth", cfg,
                   inputs={"clips": count, "clip_len": clip_len},
                   outputs={"clips": [os.path.basename(n) for n in names]})
    clips = synthetic_dataset(cfg["joints"], count, clip_len, cfg["seed"], cfg["fps"])
    for clip, name in zip(clips, names):
        save_clip(clip, name)
    print(f"wrote {count} clips of {clip_len} frames to {out}")
    return 0


def cmd_train(args) -> int:
    cfg, _ = _resolved(args)
    clips = _dataset_clips(args.data)
    dataset = _dataset_windows(clips, cfg)
    net_cfg = net_config_from(cfg)
    train_cfg = train_config_from(cfg)
    out = _out_dir(args.out)
    write_manifest(os.path.join(out, "manifest.json"), "train", cfg,
                   inputs={"data": args.data, "windows": len(dataset)},
                   outputs={"checkpoint": "checkpoint_final.ckpt",
                            "history": "loss_history.csv"})
    params, history = train_loop(train_cfg, dataset, net_cfg, cfg["h_frames"],
                                 checkpoint_dir=out)
    save_history(os.path.join(out, "loss_history.csv"), history)
    print(f"trained {len(history)} steps over {len(dataset)} windows; "
          f"final loss {history[-1][3]:.6f}")
    print(f"checkpoint: {os.path.join(out, 'checkpoint_final.ckpt')}")
    return 0


def _parse_pinned(spec: str, joint_names: list[str]) -> list[int]:
    ids = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        if token in joint_names:
            ids.append(joint_names.index(token))
        else:
            try:
                ids.append(int(token))
            except ValueError:
                raise ConfigError(
                    f"unknown joint {token!r}; clip has {', '.join(joint_names)}")
    if not ids:
        raise ConfigError("no joints selected to pin")
    return ids


def _completion_command(args, mode: str) -> int:
    cfg, explicit = _resolved(args)
    params, net_cfg, extra = _load_ckpt(args.checkpoint)
    _apply_checkpoint_geometry(cfg, explicit, extra, args.checkpoint)
    clip = _load_clip_checked(args.input)
    if 3 * clip.num_joints != net_cfg.coord_dim:
        raise ConfigError(
            f"clip width {3 * clip.num_joints} does not match checkpoint "
            f"coord_dim {net_cfg.coord_dim}")
    h, f = cfg["h_frames"], cfg["f_frames"]
    joints = net_cfg.coord_dim // 3
    if clip.num_frames < h:
        raise ConfigError(f"clip has {clip.num_frames} frames, need at least {h}")
    observed = clip.frames[-h:]

    target = None
    if mode == "predict":
        mask = prediction_mask(h, f, joints)
    elif mode == "switch":
        target_clip = _load_clip_checked(args.target_clip)
        if 3 * target_clip.num_joints != net_cfg.coord_dim:
            raise ConfigError(
                f"target clip width {3 * target_clip.num_joints} does not match "
                f"checkpoint coord_dim {net_cfg.coord_dim}")
        try:
            mask = switch_mask(h, f, args.target_frames, joints)
        except ValueError as e:
            raise ConfigError(str(e))
        if target_clip.num_frames < args.target_frames:
            raise ConfigError(
                f"target clip has {target_clip.num_frames} frames, "
                f"need {args.target_frames}")
        target = np.zeros((f, net_cfg.coord_dim))
        target[f - args.target_frames:] = target_clip.frames[:args.target_frames]
    else:
        donor = _load_clip_checked(args.donor_clip)
        if 3 * donor.num_joints != net_cfg.coord_dim:
            raise ConfigError(
                f"donor clip width {3 * donor.num_joints} does not match "
                f"checkpoint coord_dim {net_cfg.coord_dim}")
        if donor.num_frames < f:
            raise ConfigError(f"donor clip has {donor.num_frames} frames, need {f}")
        ids = _parse_pinned(args.pin_joints, clip.joint_names)
        try:
            mask = partbody_mask(h, f, joints, ids)
        except ValueError as e:
            raise ConfigError(str(e))
        target = donor.frames[:f]

    scfg = sample_config_from(cfg)
    out = _out_dir(args.out)
    sample_names = [f"sample_{k:03d}.smc" for k in range(scfg.num_samples)]
    write_manifest(os.path.join(out, "manifest.json"), mode, cfg,
                   inputs={"checkpoint": args.checkpoint, "input": args.input},
                   outputs={"samples": sample_names})
    schedule = build_schedule(cfg["schedule_kind"], cfg["diffusion_steps"],
                              cfg["sigma_mode"])
    basis = build_dct_basis(h + f, net_cfg.spectrum_rows)
    samples = dct_completion(observed, mask, params, net_cfg, scfg, schedule,
                             basis, target=target)
    for name, sample in zip(sample_names, samples):
        save_clip(MotionClip(fps=clip.fps, joint_names=clip.joint_names,
                             frames=sample, root_removed=clip.root_removed),
                  os.path.join(out, name))
        print(f"{name}: {h} observed + {f} generated frames")
    if getattr(args, "gt", None):
        gt_clip = _load_clip_checked(args.gt)
        if gt_clip.num_frames < f:
            raise ConfigError(f"ground-truth clip has {gt_clip.num_frames} frames, need {f}")
        preds = np.stack([s[h:] for s in samples])
        gt = gt_clip.frames[:f]
        print(f"best-of-{scfg.num_samples} ADE {ade(preds, gt):.4f}  "
              f"FDE {fde(preds, gt):.4f}")
    return 0


def cmd_predict(args) -> int:
    return _completion_command(args, "predict")


def cmd_switch(args) -> int:
    return _completion_command(args, "switch")


def cmd_control(args) -> int:
    return _completion_command(args, "control")


def cmd_eval(args) -> int:
    cfg, explicit = _resolved(args)
    params, net_cfg, extra = _load_ckpt(args.checkpoint)
    _apply_checkpoint_geometry(cfg, explicit, extra, args.checkpoint)
    ckpt_joints = net_cfg.coord_dim // 3
    if "joints" in explicit and cfg["joints"] != ckpt_joints:
        raise ConfigError(
            f"joints = {cfg['joints']} conflicts with checkpoint "
            f"{args.checkpoint!r} (coord_dim {net_cfg.coord_dim})")
    cfg["joints"] = ckpt_joints
    clips = _dataset_clips(args.data)
    windows = _dataset_windows(clips, cfg)
    out = _out_dir(args.out)
    write_manifest(os.path.join(out, "manifest.json"), "eval", cfg,
                   inputs={"checkpoint": args.checkpoint, "data": args.data,
                           "windows": len(windows), "workers": args.workers},
                   outputs={"report": ["report.csv", "report.txt"]})
    ecfg = eval_config_from(cfg)
    report = evaluate_parallel((params, net_cfg), windows, ecfg,
                               worker_count=args.workers)
    report.write_csv(os.path.join(out, "report.csv"))
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as f:
        f.write(report.table() + "\n")
    print(report.table())
    return 0


def _write_series_csv(path, series) -> None:
    longest = max(len(v) for _, v in series)
    with open(path, "w", encoding="utf-8") as f:
        f.write("frame," + ",".join(label for label, _ in series) + "\n")
        for i in range(longest):
            cells = [repr(float(v[i])) if i < len(v) else "" for _, v in series]
            f.write(f"{i}," + ",".join(cells) + "\n")


def _write_series_svg(path, series, title: str) -> None:
    width, height = 900, 420
    ml, mr, mt, mb = 64, 190, 36, 42
    lo = min(float(v.min()) for _, v in series)
    hi = max(float(v.max()) for _, v in series)
    if hi <= lo:
        hi = lo + 1.0
    longest = max(len(v) for _, v in series)

    def px(i):
        return ml + (width - ml - mr) * (i / max(1, longest - 1))

    def py(v):
        return mt + (height - mt - mb) * (1.0 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{ml}" y="20" font-family="monospace" font-size="13">{title}</text>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="#444"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" '
        f'stroke="#444"/>',
        f'<text x="4" y="{py(hi):.2f}" font-family="monospace" font-size="11">{hi:.3g}</text>',
        f'<text x="4" y="{py(lo):.2f}" font-family="monospace" font-size="11">{lo:.3g}</text>',
        f'<text x="{ml}" y="{height - 8}" font-family="monospace" font-size="11">0</text>',
        f'<text x="{width - mr}" y="{height - 8}" font-family="monospace" '
        f'font-size="11">{longest - 1}</text>',
    ]
    for i, (label, values) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(f"{px(j):.2f},{py(float(v)):.2f}" for j, v in enumerate(values))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.4" '
                     f'points="{points}"/>')
        ly = mt + 14 * i
        parts.append(f'<line x1="{width - mr + 10}" y1="{ly}" x2="{width - mr + 28}" '
                     f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width - mr + 32}" y="{ly + 4}" font-family="monospace" '
                     f'font-size="10">{label}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")


def cmd_plot(args) -> int:
    cfg, _ = _resolved(args)
    clips = [(_load_clip_checked(p), os.path.splitext(os.path.basename(p))[0])
             for p in args.clips]
    axis = "xyz".index(args.coord)
    series = []
    for clip, stem in clips:
        joint_spec = args.joints if args.joints else clip.joint_names[0]
        for token in joint_spec.split(","):
            token = token.strip()
            if token not in clip.joint_names:
                raise ConfigError(
                    f"clip {stem!r} has no joint {token!r} "
                    f"(joints: {', '.join(clip.joint_names)})")
            col = 3 * clip.joint_names.index(token) + axis
            series.append((f"{stem}:{token}.{args.coord}", clip.frames[:, col]))
    out = _out_dir(args.out)
    write_manifest(os.path.join(out, "manifest.json"), "plot", cfg,
                   inputs={"clips": list(args.clips)},
                   outputs={"csv": "curves.csv", "svg": "curves.svg"})
    _write_series_csv(os.path.join(out, "curves.csv"), series)
    _write_series_svg(os.path.join(out, "curves.svg"), series,
                      f"joint trajectories ({args.coord})")
    print(f"wrote {len(series)} series to {out}/curves.csv and curves.svg")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specmotion",
        description="masked human-motion completion over truncated DCT spectra")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic clip dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=64)
    p.add_argument("--clip-len", type=int, default=0, help="frames per clip (default H+F)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a noise-prediction model")
    _add_common(p)
    p.add_argument("--data", required=True, help="directory of .smc clips")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="complete the future of an observed clip")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="clip whose last H frames are observed")
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="clip with the true future, prints ADE/FDE")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("switch", help="predict while steering into a target motion")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--target-clip", required=True,
                   help="clip supplying the motion to switch into")
    p.add_argument("--target-frames", type=int, required=True,
                   help="how many final frames to pin to the target")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_switch)

    p = sub.add_parser("control", help="predict with some joints pinned to a donor clip")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--donor-clip", required=True, help="clip supplying pinned content")
    p.add_argument("--pin-joints", required=True,
                   help="comma list of joint names or indices")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("eval", help="compute metrics over a clip dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="export joint trajectories as CSV and SVG")
    _add_common(p)
    p.add_argument("clips", nargs="+", help="clips to overlay")
    p.add_argument("--joints", help="comma list of joint names (default: first joint)")
    p.add_argument("--coord", choices=("x", "y", "z"), default="x")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args) or 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
