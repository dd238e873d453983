"""Masked human-motion completion with a diffusion model over truncated DCT spectra.

The toolkit represents a pose sequence as a short stack of DCT coefficient
rows, trains a denoising diffusion model on those spectra, and fills in the
unobserved part of a sequence by alternating denoising with re-noised
observations. Everything runs on float64 numpy and is deterministic given
the seeds recorded in run manifests.
"""

__version__ = "0.1.0"

from .spectral import DctBasis, build_dct_basis, dct, idct
from .diffusion import (
    NoiseSchedule,
    build_schedule,
    ddim_step,
    denoise_step,
    forward_diffuse,
    timestep_subsequence,
)
from .network import (
    Condition,
    NetworkConfig,
    build_condition,
    init_params,
    load_checkpoint,
    predict_noise,
    save_checkpoint,
    time_embedding,
)
from .completion import (
    CompletionMask,
    SampleConfig,
    autoregressive_predict,
    dct_completion,
    masked_combine,
    noisy_observation,
    pad_observation,
    partbody_mask,
    prediction_mask,
    switch_mask,
)
from .data import (
    ClipFormatError,
    MotionClip,
    WindowSpec,
    load_clip,
    save_clip,
    synthetic_dataset,
    window,
    zero_velocity_baseline,
)
from .metrics import (
    EvalConfig,
    MetricsReport,
    ade,
    apd,
    evaluate_parallel,
    fde,
    mmade,
    mmfde,
    multimodal_gt,
)
from .training import (
    OptimizerState,
    TrainConfig,
    adam_update,
    init_optimizer,
    train_loop,
    train_step,
)
