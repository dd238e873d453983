"""Motion clip container, file I/O, windowing, and a synthetic generator.

Clip files are a small structured-text header followed by the frame data,
either inline as decimal text (one frame per line, exact float64 round trip
via repr) or in a little-endian float64 sidecar file named in the header:

    specmotion-clip v1
    fps: 50.0
    joints: j0,j1,j2,j3
    frames: 120
    root_removed: true
    data: inline
    ---
    0.1 0.2 ... (3J values)
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MotionClip",
    "ClipFormatError",
    "WindowSpec",
    "save_clip",
    "load_clip",
    "export_csv",
    "window",
    "synthetic_dataset",
    "zero_velocity_baseline",
]

_MAGIC = "specmotion-clip v1"

# Synthetic generator ranges: per-coordinate sums of random sinusoids with a
# bounded linear drift.
_WAVE_COUNT = (2, 4)
_AMPLITUDE = (0.05, 0.5)
_MIN_PERIOD = 10.0
_DRIFT_SLOPE = 0.1


class ClipFormatError(ValueError):
    """Malformed clip file; ``byte_offset`` points at the offending region."""

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (at byte {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


@dataclass
class MotionClip:
    fps: float
    joint_names: list[str]
    frames: np.ndarray  # (T_c, 3J)
    root_removed: bool = False

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if not self.joint_names:
            raise ValueError("clip needs at least one joint name")
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be a non-empty 2-D array, got {self.frames.shape}")
        if self.frames.shape[1] != 3 * len(self.joint_names):
            raise ValueError(
                f"frame width {self.frames.shape[1]} does not match "
                f"{len(self.joint_names)} joints (expected {3 * len(self.joint_names)})")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)


def save_clip(clip: MotionClip, path: str, binary: bool = False) -> None:
    """Write a clip; ``binary`` stores frames in a ``<path>.bin`` sidecar."""
    for name in clip.joint_names:
        if "," in name or "\n" in name or not name:
            raise ValueError(f"joint name {name!r} must be non-empty without commas")
    if not np.all(np.isfinite(clip.frames)):
        raise ValueError("clip frames contain non-finite values")
    sidecar = os.path.basename(path) + ".bin"
    lines = [
        _MAGIC,
        f"fps: {float(clip.fps)!r}",
        f"joints: {','.join(clip.joint_names)}",
        f"frames: {clip.num_frames}",
        f"root_removed: {'true' if clip.root_removed else 'false'}",
        f"data: {'binary ' + sidecar if binary else 'inline'}",
        "---",
    ]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
        if not binary:
            for row in clip.frames:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")
    if binary:
        with open(os.path.join(os.path.dirname(path) or ".", sidecar), "wb") as f:
            f.write(np.ascontiguousarray(clip.frames, dtype="<f8").tobytes())


def _header_value(line: str, key: str, offset: int) -> str:
    prefix = key + ":"
    if not line.startswith(prefix):
        raise ClipFormatError(f"expected header line {key!r}, got {line!r}", offset)
    return line[len(prefix):].strip()


def load_clip(path: str) -> MotionClip:
    with open(path, "rb") as f:
        blob = f.read()
    lines: list[tuple[int, str]] = []  # (byte offset, text)
    pos = 0
    while pos < len(blob):
        end = blob.find(b"\n", pos)
        if end < 0:
            end = len(blob)
        try:
            lines.append((pos, blob[pos:end].decode("utf-8")))
        except UnicodeDecodeError:
            raise ClipFormatError(f"{path}: undecodable bytes", pos) from None
        pos = end + 1
    if len(lines) < 7:
        raise ClipFormatError(f"{path}: truncated header", len(blob))
    if lines[0][1] != _MAGIC:
        raise ClipFormatError(f"{path}: bad magic line {lines[0][1]!r}", 0)
    try:
        fps = float(_header_value(lines[1][1], "fps", lines[1][0]))
    except ValueError as e:
        if isinstance(e, ClipFormatError):
            raise
        raise ClipFormatError(f"{path}: bad fps value", lines[1][0]) from None
    if not math.isfinite(fps) or fps <= 0:
        raise ClipFormatError(f"{path}: bad fps value {fps!r}", lines[1][0])
    joints = _header_value(lines[2][1], "joints", lines[2][0])
    joint_names = [j for j in joints.split(",") if j]
    if not joint_names:
        raise ClipFormatError(f"{path}: no joint names", lines[2][0])
    try:
        count = int(_header_value(lines[3][1], "frames", lines[3][0]))
    except ValueError as e:
        if isinstance(e, ClipFormatError):
            raise
        raise ClipFormatError(f"{path}: bad frame count", lines[3][0]) from None
    if count < 1:
        raise ClipFormatError(f"{path}: frame count must be positive", lines[3][0])
    flag = _header_value(lines[4][1], "root_removed", lines[4][0])
    if flag not in ("true", "false"):
        raise ClipFormatError(f"{path}: root_removed must be true or false", lines[4][0])
    data_spec = _header_value(lines[5][1], "data", lines[5][0])
    if lines[6][1] != "---":
        raise ClipFormatError(f"{path}: missing header terminator", lines[6][0])
    width = 3 * len(joint_names)

    if data_spec == "inline":
        rows = lines[7:]
        body = [(off, text) for off, text in rows if text.strip()]
        if len(body) < count:
            raise ClipFormatError(
                f"{path}: expected {count} frames, found {len(body)}", len(blob))
        if len(body) > count:
            raise ClipFormatError(
                f"{path}: expected {count} frames, found {len(body)}", body[count][0])
        frames = np.empty((count, width))
        for i, (off, text) in enumerate(body):
            parts = text.split()
            if len(parts) != width:
                raise ClipFormatError(
                    f"{path}: frame {i} has {len(parts)} values, expected {width}", off)
            try:
                frames[i] = [float(p) for p in parts]
            except ValueError:
                raise ClipFormatError(f"{path}: frame {i} has a malformed number", off) from None
            if not np.all(np.isfinite(frames[i])):
                raise ClipFormatError(f"{path}: frame {i} has a non-finite value", off)
    elif data_spec.startswith("binary "):
        sidecar = os.path.join(os.path.dirname(path) or ".", data_spec[len("binary "):])
        if not os.path.exists(sidecar):
            raise ClipFormatError(f"{path}: missing data file {sidecar!r}", lines[5][0])
        raw = open(sidecar, "rb").read()
        expected = count * width * 8
        if len(raw) != expected:
            raise ClipFormatError(
                f"{sidecar}: expected {expected} bytes, found {len(raw)}", len(raw))
        frames = np.frombuffer(raw, dtype="<f8").reshape(count, width).copy()
        if not np.all(np.isfinite(frames)):
            bad = int(np.argwhere(~np.isfinite(frames))[0][0])
            raise ClipFormatError(f"{sidecar}: frame {bad} has a non-finite value",
                                  bad * width * 8)
    else:
        raise ClipFormatError(f"{path}: bad data mode {data_spec!r}", lines[5][0])

    return MotionClip(fps=fps, joint_names=joint_names, frames=frames,
                      root_removed=flag == "true")


def export_csv(clip: MotionClip, path: str) -> None:
    """One frame per row: frame index followed by <joint>_<axis> columns."""
    cols = [f"{name}_{axis}" for name in clip.joint_names for axis in "xyz"]
    with open(path, "w", encoding="utf-8") as f:
        f.write("frame," + ",".join(cols) + "\n")
        for i, row in enumerate(clip.frames):
            f.write(str(i) + "," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class WindowSpec:
    h_frames: int  # observed prefix length
    f_frames: int  # frames to complete
    stride: int = 1

    def __post_init__(self):
        if self.h_frames < 1 or self.f_frames < 1:
            raise ValueError("window needs at least one observed and one future frame")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")

    @property
    def total(self) -> int:
        return self.h_frames + self.f_frames


def window(clip: MotionClip, spec: WindowSpec) -> list[np.ndarray]:
    """All (H+F)-frame windows starting at multiples of the stride."""
    total = spec.total
    if clip.num_frames < total:
        raise ValueError(
            f"clip has {clip.num_frames} frames, window needs {total}")
    starts = range(0, clip.num_frames - total + 1, spec.stride)
    return [clip.frames[s:s + total].copy() for s in starts]


def synthetic_dataset(num_joints: int, num_clips: int, clip_len: int,
                      seed: int, fps: float = 50.0) -> list[MotionClip]:
    """Deterministic smooth clips: sinusoid mixtures plus a slow bounded drift.

    Every coordinate is an independent sum of 2..4 sinusoids with amplitudes
    in [0.05, 0.5], periods in [10, clip_len] frames and random phases, plus
    a linear drift with slope bounded by 0.1 over the whole clip.
    """
    if num_joints < 2:
        raise ValueError(f"need at least 2 joints, got {num_joints}")
    if num_clips < 1:
        raise ValueError(f"num_clips must be positive, got {num_clips}")
    if clip_len < _MIN_PERIOD:
        raise ValueError(f"clip_len must be at least {int(_MIN_PERIOD)}, got {clip_len}")
    rng = np.random.default_rng(seed)
    t = np.arange(clip_len, dtype=np.float64)
    names = [f"j{i}" for i in range(num_joints)]
    clips = []
    for _ in range(num_clips):
        cols = []
        for _ in range(3 * num_joints):
            waves = int(rng.integers(_WAVE_COUNT[0], _WAVE_COUNT[1] + 1))
            amp = rng.uniform(*_AMPLITUDE, waves)
            period = rng.uniform(_MIN_PERIOD, clip_len, waves)
            phase = rng.uniform(0.0, 2.0 * np.pi, waves)
            sig = (amp[:, None] * np.sin(2.0 * np.pi * t[None, :] / period[:, None]
                                         + phase[:, None])).sum(axis=0)
            slope = rng.uniform(-_DRIFT_SLOPE, _DRIFT_SLOPE)
            cols.append(sig + slope * t / clip_len)
        clips.append(MotionClip(fps=fps, joint_names=names,
                                frames=np.stack(cols, axis=1), root_removed=True))
    return clips


def zero_velocity_baseline(observed: np.ndarray, f_frames: int) -> np.ndarray:
    """Freeze the last observed pose for ``f_frames`` frames."""
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim != 2 or observed.shape[0] < 1:
        raise ValueError(f"observation must be a non-empty (H, 3J) array, got {observed.shape}")
    if f_frames < 1:
        raise ValueError(f"f_frames must be positive, got {f_frames}")
    return np.repeat(observed[-1:], f_frames, axis=0)
