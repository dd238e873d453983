import math
import os

import numpy as np
import pytest

import specmotion as sm
from specmotion.data import ClipFormatError, export_csv


def make_clip(frames=None, fps=50.0, names=("hip", "knee"), root_removed=True):
    if frames is None:
        frames = np.random.default_rng(0).standard_normal((7, 6))
    return sm.MotionClip(fps=fps, joint_names=list(names), frames=frames,
                         root_removed=root_removed)


def test_inline_round_trip_is_bitwise(tmp_path):
    clip = make_clip()
    path = os.path.join(tmp_path, "a.smc")
    sm.save_clip(clip, path)
    back = sm.load_clip(path)
    assert back.fps == clip.fps
    assert back.joint_names == clip.joint_names
    assert back.root_removed == clip.root_removed
    assert np.array_equal(back.frames, clip.frames)
    # saving the loaded clip reproduces the file exactly
    path2 = os.path.join(tmp_path, "b.smc")
    sm.save_clip(back, path2)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_binary_round_trip_is_bitwise(tmp_path):
    clip = make_clip(root_removed=False)
    path = os.path.join(tmp_path, "a.smc")
    sm.save_clip(clip, path, binary=True)
    assert os.path.exists(os.path.join(tmp_path, "a.smc.bin"))
    back = sm.load_clip(path)
    assert np.array_equal(back.frames, clip.frames)
    assert back.root_removed is False


def test_clip_validation():
    with pytest.raises(ValueError):
        make_clip(fps=0.0)
    with pytest.raises(ValueError):
        make_clip(names=())
    with pytest.raises(ValueError):
        make_clip(frames=np.zeros((7, 5)))  # width not 3 * joints
    with pytest.raises(ValueError):
        make_clip(frames=np.zeros((0, 6)))


def test_save_rejects_unserializable_joint_names(tmp_path):
    clip = sm.MotionClip(fps=50.0, joint_names=["a,b"], frames=np.zeros((2, 3)))
    with pytest.raises(ValueError):
        sm.save_clip(clip, os.path.join(tmp_path, "x.smc"))


def test_save_rejects_nonfinite(tmp_path):
    frames = np.zeros((3, 6))
    frames[1, 2] = np.inf
    with pytest.raises(ValueError):
        sm.save_clip(make_clip(frames=frames), os.path.join(tmp_path, "x.smc"))


def corrupt(tmp_path, mutate, name="c.smc", binary=False):
    clip = make_clip()
    path = os.path.join(tmp_path, name)
    sm.save_clip(clip, path, binary=binary)
    text = open(path, "rb").read()
    open(path, "wb").write(mutate(text))
    return path


@pytest.mark.parametrize("mutate,needle", [
    (lambda b: b.replace(b"specmotion-clip v1", b"other-format v9"), "magic"),
    (lambda b: b.replace(b"fps: 50.0", b"fps: fast"), "fps"),
    (lambda b: b.replace(b"fps: 50.0", b"fps: -1.0"), "fps"),
    (lambda b: b.replace(b"joints: hip,knee", b"joints: "), "joint"),
    (lambda b: b.replace(b"frames: 7", b"frames: zero"), "frame"),
    (lambda b: b.replace(b"root_removed: true", b"root_removed: maybe"), "root_removed"),
    (lambda b: b.replace(b"data: inline", b"data: parquet"), "data"),
    (lambda b: b.replace(b"---", b"==="), "terminator"),
])
def test_header_errors_carry_byte_offsets(tmp_path, mutate, needle):
    path = corrupt(tmp_path, mutate)
    with pytest.raises(ClipFormatError) as err:
        sm.load_clip(path)
    assert "at byte" in str(err.value)
    assert needle.lower() in str(err.value).lower()
    assert isinstance(err.value.byte_offset, int)


def test_row_count_and_width_errors(tmp_path):
    clip = make_clip()
    path = os.path.join(tmp_path, "c.smc")
    sm.save_clip(clip, path)
    lines = open(path, "rb").read().split(b"\n")

    open(path, "wb").write(b"\n".join(lines[:-2]) + b"\n")  # drop last row
    with pytest.raises(ClipFormatError) as err:
        sm.load_clip(path)
    assert "7" in str(err.value)

    open(path, "wb").write(b"\n".join(lines) + lines[-2] + b"\n")  # extra row
    with pytest.raises(ClipFormatError):
        sm.load_clip(path)

    bad = lines[:]
    bad[7] = bad[7] + b" 0.25"  # row too wide
    open(path, "wb").write(b"\n".join(bad) + b"\n")
    with pytest.raises(ClipFormatError):
        sm.load_clip(path)

    bad = lines[:]
    bad[7] = bad[7].replace(b".", b"|", 1)
    open(path, "wb").write(b"\n".join(bad) + b"\n")
    with pytest.raises(ClipFormatError) as err:
        sm.load_clip(path)
    assert "malformed number" in str(err.value)


def test_binary_sidecar_errors(tmp_path):
    clip = make_clip()
    path = os.path.join(tmp_path, "c.smc")
    sm.save_clip(clip, path, binary=True)
    side = os.path.join(tmp_path, "c.smc.bin")

    blob = open(side, "rb").read()
    open(side, "wb").write(blob[:-8])
    with pytest.raises(ClipFormatError):
        sm.load_clip(path)

    open(side, "wb").write(blob)
    back = sm.load_clip(path)
    assert np.array_equal(back.frames, clip.frames)

    bad = bytearray(blob)
    bad[0:8] = np.array([np.nan]).tobytes()
    open(side, "wb").write(bytes(bad))
    with pytest.raises(ClipFormatError):
        sm.load_clip(path)

    os.remove(side)
    with pytest.raises(ClipFormatError):
        sm.load_clip(path)


def test_export_csv(tmp_path):
    clip = make_clip()
    path = os.path.join(tmp_path, "c.csv")
    export_csv(clip, path)
    lines = open(path).read().splitlines()
    assert lines[0] == ("frame,hip_x,hip_y,hip_z,knee_x,knee_y,knee_z")
    assert len(lines) == 1 + clip.num_frames
    first = lines[1].split(",")
    assert int(first[0]) == 0
    assert float(first[1]) == clip.frames[0, 0]


def test_window_slicing_matches_oracle():
    frames = np.arange(27.0).reshape(9, 3)
    clip = sm.MotionClip(fps=50.0, joint_names=["j0"], frames=frames)
    spec = sm.WindowSpec(h_frames=2, f_frames=3, stride=2)
    assert spec.total == 5
    wins = sm.window(clip, spec)
    assert len(wins) == 3  # starts 0, 2, 4
    for w, start in zip(wins, (0, 2, 4)):
        assert np.array_equal(w, frames[start:start + 5])
    wins[0][0, 0] = -1.0
    assert frames[0, 0] == 0.0  # windows are copies


def test_window_requires_enough_frames():
    clip = sm.MotionClip(fps=50.0, joint_names=["j0"], frames=np.zeros((4, 3)))
    with pytest.raises(ValueError):
        sm.window(clip, sm.WindowSpec(h_frames=2, f_frames=3))
    with pytest.raises(ValueError):
        sm.WindowSpec(h_frames=0, f_frames=3)
    with pytest.raises(ValueError):
        sm.WindowSpec(h_frames=2, f_frames=3, stride=0)


def test_synthetic_dataset_reproducible_and_bounded():
    a = sm.synthetic_dataset(3, 4, 40, seed=11)
    b = sm.synthetic_dataset(3, 4, 40, seed=11)
    c = sm.synthetic_dataset(3, 4, 40, seed=12)
    assert len(a) == 4
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.frames, cb.frames)
        assert ca.joint_names == ["j0", "j1", "j2"]
        assert ca.frames.shape == (40, 9)
        assert ca.fps == 50.0
    assert not np.array_equal(a[0].frames, c[0].frames)
    # 2..4 waves of amplitude <= 0.5 plus <= 0.1 drift
    peak = max(np.abs(clip.frames).max() for clip in a)
    assert peak <= 2.1
    with pytest.raises(ValueError):
        sm.synthetic_dataset(1, 2, 40, seed=0)
    with pytest.raises(ValueError):
        sm.synthetic_dataset(3, 2, 5, seed=0)


def test_synthetic_dataset_energy_is_low_frequency():
    # minimum wave period of 10 frames keeps the spectrum concentrated in the
    # lowest rows; this pins the measured concentration with slack
    clips = sm.synthetic_dataset(4, 16, 30, seed=77)
    basis_full = sm.build_dct_basis(30, 30)
    rows = math.ceil(30 / 3)
    worst = 1.0
    for clip in clips:
        spec = sm.dct(clip.frames, basis_full)
        energy = (spec ** 2).sum(axis=1)
        worst = min(worst, float(energy[:rows].sum() / energy.sum()))
    assert worst > 0.90


def test_zero_velocity_baseline():
    obs = np.arange(12.0).reshape(4, 3)
    out = sm.zero_velocity_baseline(obs, 5)
    assert out.shape == (5, 3)
    assert np.array_equal(out, np.tile(obs[-1], (5, 1)))
    with pytest.raises(ValueError):
        sm.zero_velocity_baseline(obs, 0)
