"""Near-field XL-MIMO channel estimation.

Two stages: polar-domain SOMP over whitened hybrid-combining measurements
gives an initial estimate, then a conditional diffusion model refines it
with an accelerated non-Markovian sampler.
"""

from .channel import ChannelMatrix, PathParams, assemble_channel, draw_paths, steering_vector
from .cs_init import (
    SparseEstimate,
    baseline_estimate,
    default_tolerance,
    initial_estimate,
    pack_image,
    somp_estimate,
    unpack_image,
)
from .denoiser import (
    ConditionalDenoiser,
    DenoiserConfig,
    attention,
    denoise,
    param_count,
    sinusoidal_embedding,
    time_embedding,
    time_shift_matrix,
)
from .diffusion import (
    NoiseSchedule,
    SamplerSpec,
    ddpm_step,
    forward_sample,
    linear_schedule,
    make_sampler,
    nm_step,
    posterior_params,
    predict_x0,
    sample,
    sigma_ddpm,
    sigma_pair,
    subsequence,
    training_loss,
)
from .harness import (
    Dataset,
    SweepResult,
    TrainOptions,
    TrainState,
    denormalize,
    emit_results,
    evaluate_sweep,
    generate_dataset,
    load_checkpoint,
    load_dataset,
    load_results,
    nmse,
    nmse_db,
    normalize,
    refine_batch,
    save_checkpoint,
    split_bounds,
    train,
)
from .measurement import CombinerSet, Observation, draw_combiners, draw_unit_noise, observe, whiten
from .polardict import PolarGrid, TransformMatrix, build_grid, build_transform, synthesize
from .sysgeom import SPEED_OF_LIGHT, Geometry, SystemConfig, derive_geometry, load_config, save_config

__version__ = "0.1.0"

__all__ = [
    "ChannelMatrix",
    "CombinerSet",
    "ConditionalDenoiser",
    "Dataset",
    "DenoiserConfig",
    "Geometry",
    "NoiseSchedule",
    "Observation",
    "PathParams",
    "PolarGrid",
    "SPEED_OF_LIGHT",
    "SamplerSpec",
    "SparseEstimate",
    "SweepResult",
    "SystemConfig",
    "TrainOptions",
    "TrainState",
    "TransformMatrix",
    "assemble_channel",
    "attention",
    "baseline_estimate",
    "build_grid",
    "build_transform",
    "ddpm_step",
    "default_tolerance",
    "denoise",
    "denormalize",
    "derive_geometry",
    "draw_combiners",
    "draw_paths",
    "draw_unit_noise",
    "emit_results",
    "evaluate_sweep",
    "forward_sample",
    "generate_dataset",
    "initial_estimate",
    "linear_schedule",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "load_results",
    "make_sampler",
    "nm_step",
    "nmse",
    "nmse_db",
    "normalize",
    "observe",
    "pack_image",
    "param_count",
    "posterior_params",
    "predict_x0",
    "refine_batch",
    "sample",
    "save_checkpoint",
    "save_config",
    "sigma_ddpm",
    "sigma_pair",
    "sinusoidal_embedding",
    "somp_estimate",
    "split_bounds",
    "steering_vector",
    "subsequence",
    "synthesize",
    "time_embedding",
    "time_shift_matrix",
    "train",
    "training_loss",
    "unpack_image",
    "whiten",
]
