"""Sample-quality metrics and a deterministic parallel evaluation harness.

Diversity (APD) is the mean pairwise L2 distance between flattened samples;
accuracy (ADE / FDE) takes the best sample against the true future; the
multimodal variants average that best-sample error over every future in the
dataset whose observation ends near the query's last observed pose.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass

import numpy as np

from .completion import SampleConfig, dct_completion, prediction_mask
from .diffusion import SCHEDULE_KINDS, build_schedule
from .spectral import build_dct_basis

__all__ = [
    "apd",
    "ade",
    "fde",
    "multimodal_gt",
    "mmade",
    "mmfde",
    "EvalConfig",
    "MetricsReport",
    "evaluate_parallel",
]


def _sample_array(samples) -> np.ndarray:
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim != 3 or s.shape[0] < 1:
        raise ValueError(f"samples must be a non-empty (K, F, 3J) array, got {s.shape}")
    return s


def apd(samples) -> float:
    """Average pairwise distance between flattened samples; 0 for one sample."""
    s = _sample_array(samples)
    k = s.shape[0]
    if k == 1:
        return 0.0
    flat = s.reshape(k, -1)
    diffs = flat[:, None, :] - flat[None, :, :]
    dists = np.sqrt((diffs ** 2).sum(axis=-1))
    return float(dists.sum() / (k * (k - 1)))


def _check_gt(s: np.ndarray, gt) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != s.shape[1:]:
        raise ValueError(f"ground truth shape {gt.shape} does not match samples {s.shape[1:]}")
    return gt


def ade(samples, gt) -> float:
    """Best sample's mean per-frame L2 distance to the true future."""
    s = _sample_array(samples)
    gt = _check_gt(s, gt)
    per_frame = np.sqrt(((s - gt) ** 2).sum(axis=-1))  # (K, F)
    return float(per_frame.mean(axis=1).min())


def fde(samples, gt) -> float:
    """Best sample's L2 distance to the true final frame."""
    s = _sample_array(samples)
    gt = _check_gt(s, gt)
    final = np.sqrt(((s[:, -1] - gt[-1]) ** 2).sum(axis=-1))
    return float(final.min())


def multimodal_gt(windows, query_obs: np.ndarray, threshold: float) -> list[np.ndarray]:
    """Futures of all windows whose last observed frame lies within ``threshold``.

    ``windows`` are (H+F, 3J) arrays sharing the query's observation length H.
    The query's own future qualifies at distance zero when it is in the list.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    query_obs = np.asarray(query_obs, dtype=np.float64)
    if query_obs.ndim != 2 or query_obs.shape[0] < 1:
        raise ValueError(f"query observation must be (H, 3J), got {query_obs.shape}")
    h = query_obs.shape[0]
    anchor = query_obs[-1]
    futures = []
    for i, win in enumerate(windows):
        win = np.asarray(win, dtype=np.float64)
        if win.ndim != 2 or win.shape[0] <= h or win.shape[1] != query_obs.shape[1]:
            raise ValueError(
                f"window {i} has shape {win.shape}, expected more than {h} frames "
                f"of width {query_obs.shape[1]}")
        if np.sqrt(((win[h - 1] - anchor) ** 2).sum()) <= threshold:
            futures.append(win[h:])
    return futures


def mmade(samples, futures) -> float:
    """Mean best-sample ADE over a set of plausible futures."""
    if len(futures) == 0:
        raise ValueError("no multimodal futures to evaluate against")
    return float(np.mean([ade(samples, fut) for fut in futures]))


def mmfde(samples, futures) -> float:
    """Mean best-sample FDE over a set of plausible futures."""
    if len(futures) == 0:
        raise ValueError("no multimodal futures to evaluate against")
    return float(np.mean([fde(samples, fut) for fut in futures]))


@dataclass(frozen=True)
class EvalConfig:
    h_frames: int
    num_samples: int = 10
    sampler: str = "ddim"
    ddim_steps: int = 20
    schedule_kind: str = "cosine"
    diffusion_steps: int = 100
    sigma_mode: str = "beta"
    mm_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.h_frames < 1:
            raise ValueError(f"h_frames must be positive, got {self.h_frames}")
        if self.num_samples < 1:
            raise ValueError(f"num_samples must be positive, got {self.num_samples}")
        if self.schedule_kind not in SCHEDULE_KINDS:
            raise ValueError(f"schedule_kind must be one of {SCHEDULE_KINDS}")
        if self.mm_threshold <= 0:
            raise ValueError(f"mm_threshold must be positive, got {self.mm_threshold}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class MetricsReport:
    apd: float
    ade: float
    fde: float
    mmade: float
    mmfde: float
    example_count: int

    _COLUMNS = ("APD", "ADE", "FDE", "MMADE", "MMFDE")

    def values(self) -> tuple[float, ...]:
        return (self.apd, self.ade, self.fde, self.mmade, self.mmfde)

    def table(self) -> str:
        """One header line plus one value row, in the usual benchmark column order."""
        head = "  ".join(f"{c:>8s}" for c in self._COLUMNS)
        row = "  ".join(f"{v:8.4f}" for v in self.values())
        return f"{head}  {'examples':>9s}\n{row}  {self.example_count:9d}"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(",".join(c.lower() for c in self._COLUMNS) + ",examples\n")
            f.write(",".join(repr(float(v)) for v in self.values()) + f",{self.example_count}\n")

    def to_dict(self) -> dict:
        return {"apd": self.apd, "ade": self.ade, "fde": self.fde,
                "mmade": self.mmade, "mmfde": self.mmfde,
                "examples": self.example_count}


def example_seed(global_seed: int, index: int) -> int:
    """Per-example sampling seed; independent of worker count and batch order."""
    state = np.random.SeedSequence([global_seed, index]).generate_state(1, np.uint64)
    return int(state[0])


_WORKER: dict = {}


def _init_worker(payload: dict) -> None:
    _WORKER.clear()
    _WORKER.update(payload)


def _eval_one(index: int):
    d = _WORKER
    cfg: EvalConfig = d["cfg"]
    try:
        win = d["windows"][index]
        h = cfg.h_frames
        obs, gt = win[:h], win[h:]
        scfg = SampleConfig(num_samples=cfg.num_samples, sampler=cfg.sampler,
                            ddim_steps=cfg.ddim_steps, switch_vanilla_tail=0,
                            seed=example_seed(cfg.seed, index))
        samples = dct_completion(obs, d["mask"], d["params"], d["net_cfg"], scfg,
                                 d["schedule"], d["basis"])
        preds = np.stack([s[h:] for s in samples])
        futures = multimodal_gt(d["windows"], obs, cfg.mm_threshold)
        values = (apd(preds), ade(preds, gt), fde(preds, gt),
                  mmade(preds, futures), mmfde(preds, futures))
        return index, values, None
    except Exception as e:  # surfaced by the caller with the example index
        return index, None, f"{type(e).__name__}: {e}"


def evaluate_parallel(model, windows, cfg: EvalConfig,
                      worker_count: int = 1) -> MetricsReport:
    """Evaluate prediction metrics over a window dataset.

    ``model`` is a (params, network config) pair. Per-example seeds derive
    from (cfg.seed, example index) and results reduce in example order, so
    the report is identical for any worker count.
    """
    if worker_count < 1:
        raise ValueError(f"worker_count must be positive, got {worker_count}")
    windows = [np.asarray(w, dtype=np.float64) for w in windows]
    if not windows:
        raise ValueError("empty evaluation dataset")
    first = windows[0].shape
    if any(w.shape != first for w in windows):
        raise ValueError("evaluation windows must share one shape")
    total, coord = first
    if total <= cfg.h_frames:
        raise ValueError(
            f"windows of {total} frames leave no future after {cfg.h_frames} observed")
    params, net_cfg = model
    if coord != net_cfg.coord_dim:
        raise ValueError(
            f"window width {coord} does not match network coord_dim {net_cfg.coord_dim}")
    payload = {
        "windows": windows,
        "cfg": cfg,
        "params": params,
        "net_cfg": net_cfg,
        "schedule": build_schedule(cfg.schedule_kind, cfg.diffusion_steps, cfg.sigma_mode),
        "basis": build_dct_basis(total, net_cfg.spectrum_rows),
        "mask": prediction_mask(cfg.h_frames, total - cfg.h_frames, coord // 3),
    }
    n = len(windows)
    if worker_count == 1:
        _init_worker(payload)
        results = [_eval_one(i) for i in range(n)]
    else:
        ctx = multiprocessing.get_context("fork")
        chunk = max(1, n // (worker_count * 4))
        with ctx.Pool(worker_count, initializer=_init_worker, initargs=(payload,)) as pool:
            results = pool.map(_eval_one, range(n), chunksize=chunk)
    results.sort(key=lambda r: r[0])
    for index, _, err in results:
        if err is not None:
            raise RuntimeError(f"evaluation failed on example {index}: {err}")
    table = np.array([values for _, values, _ in results])
    means = table.mean(axis=0)
    return MetricsReport(apd=float(means[0]), ade=float(means[1]), fde=float(means[2]),
                         mmade=float(means[3]), mmfde=float(means[4]), example_count=n)
