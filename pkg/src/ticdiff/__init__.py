"""Temporal in-context conditioning for toy video diffusion.

A small, fully deterministic numpy implementation of conditional video
generation by temporal concatenation: clean condition frames, a buffer
of intermediate-noise frames, and noisy target frames share one
sequence, and inference denoises only the frames whose level matches the
current global level.
"""

from .diffusion import NoiseSchedule, build_schedule, forward_diffuse, sample_gaussian
from .denoiser import ArchConfig, DenoiserParams, count_params, forward, init_params
from .errors import (
    DataFormatError,
    InvalidArgumentError,
    NumericError,
    ShapeError,
    TicdiffError,
)
from .layout import (
    LayoutSpec,
    buffer_content,
    buffer_levels,
    compose_initial,
    noise_level_vector,
    preset_layout,
)
from .rng import Rng, derive_key
from .sampling import (
    SamplerGrid,
    SampleTrace,
    active_set,
    baseline_no_buffer,
    baseline_replace,
    build_grid,
    sampler_step,
    tic_inference,
)
from .tasks import (
    EvalReport,
    ToyVideo,
    condition_fidelity,
    gen_smooth_clip,
    load_dataset,
    make_pair,
    save_dataset,
    smoothness,
)
from .training import (
    Checkpoint,
    TrainConfig,
    TrainSample,
    build_train_input,
    finetune,
    load_checkpoint,
    masked_loss,
    pretrain,
    save_checkpoint,
    train_step,
)

__version__ = "0.1.0"
