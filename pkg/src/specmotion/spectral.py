"""Truncated orthonormal DCT basis and motion/spectrum conversion.

A motion sequence is a (T, 3J) float64 array: one row per frame, joint
coordinates flattened as consecutive (x, y, z) triples. Its spectrum is the
(L, 3J) array of the first L DCT-II coefficient rows; row 0 carries the
per-coordinate mean (up to scale). Both transforms accept extra leading
batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["DctBasis", "build_dct_basis", "dct", "idct"]


@dataclass(frozen=True)
class DctBasis:
    """First ``num_rows`` rows of the orthonormal DCT-II matrix of size ``num_frames``."""

    rows: np.ndarray  # (L, T)
    num_frames: int
    num_rows: int


def build_dct_basis(num_frames: int, num_rows: int) -> DctBasis:
    """Build a truncated orthonormal DCT-II basis.

    The full matrix is D[k, n] = sqrt(2/T) * c_k * cos(pi * (n + 0.5) * k / T)
    with c_0 = 1/sqrt(2) and c_k = 1 otherwise, so its rows are orthonormal
    and D @ D.T is the identity. Only the first ``num_rows`` rows are kept.
    """
    if num_frames < 1:
        raise ValueError(f"num_frames must be positive, got {num_frames}")
    if not 1 <= num_rows <= num_frames:
        raise ValueError(f"num_rows must lie in [1, {num_frames}], got {num_rows}")
    t = num_frames
    k = np.arange(num_rows, dtype=np.float64)[:, None]
    n = np.arange(t, dtype=np.float64)[None, :]
    rows = np.sqrt(2.0 / t) * np.cos(np.pi * (n + 0.5) * k / t)
    rows[0] *= 1.0 / np.sqrt(2.0)
    return DctBasis(rows=rows, num_frames=t, num_rows=num_rows)


def dct(x: np.ndarray, basis: DctBasis) -> np.ndarray:
    """Project a motion (..., T, 3J) onto the basis, returning (..., L, 3J)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-2] != basis.num_frames:
        raise ValueError(
            f"expected {basis.num_frames} frames on the second-to-last axis, "
            f"got shape {x.shape}")
    return np.matmul(basis.rows, x)


def idct(y: np.ndarray, basis: DctBasis) -> np.ndarray:
    """Reconstruct a motion (..., T, 3J) from a spectrum (..., L, 3J).

    With ``num_rows < num_frames`` this is the least-squares reconstruction
    from the kept rows, i.e. an orthogonal projection in the temporal domain.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim < 2 or y.shape[-2] != basis.num_rows:
        raise ValueError(
            f"expected {basis.num_rows} spectrum rows on the second-to-last axis, "
            f"got shape {y.shape}")
    return np.matmul(basis.rows.T, y)
