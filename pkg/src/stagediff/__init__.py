"""Staged, noise-guided diffusion editing engine.

DDIM sampling with a stochastic boosting stage, automatic stage discernment
from predicted-noise frequency and gradient traces, covariance-guided
semantic prompt mixing, and analytic denoiser oracles for verification.
"""

from ._core import HAVE_EXT, mixture_eps, mixture_eps_numpy
from .denoiser import (
    AnalyticBackend,
    DenoiserBackend,
    GaussianMixtureWorld,
    LatentCode,
    ToyDenoiser,
    TrainingDivergedError,
    analytic_epsilon,
    decode,
    train_toy_denoiser,
)
from .objective import (
    AlignedJointEncoder,
    JointEncoder,
    LossReport,
    PerceptualNet,
    ToyJointEncoder,
    ToyPerceptualNet,
    directional_loss,
    optimize_lambda,
    perceptual_loss,
    total_loss,
)
from .pipeline import (
    EditConfig,
    PipelineError,
    RunTrace,
    quantile_sweep,
    run_edit,
    score_metrics,
    trace_embedding_distances,
)
from .promptmix import (
    CovDiffWeights,
    MixSchedule,
    PromptEmbedding,
    cond_provider,
    covariance,
    covdiff,
    embed_text,
    guided_mix,
    load_embeddings,
    mix,
    pad_align,
    save_embeddings,
)
from .sampler import (
    GuidedBackend,
    InversionResult,
    StepOutput,
    Trajectory,
    cfg_epsilon,
    ddim_step,
    forward_noise,
    invert,
    sample,
)
from .schedule import Schedule, build_schedule
from .stagefinder import (
    LambdaInit,
    StagePlan,
    discern_from_traces,
    discern_stages,
    high_freq_energy,
    init_lambda,
    noise_gradient_trace,
)

__version__ = "0.1.0"

__all__ = [
    "HAVE_EXT",
    "mixture_eps",
    "mixture_eps_numpy",
    "AnalyticBackend",
    "DenoiserBackend",
    "GaussianMixtureWorld",
    "LatentCode",
    "ToyDenoiser",
    "TrainingDivergedError",
    "analytic_epsilon",
    "decode",
    "train_toy_denoiser",
    "AlignedJointEncoder",
    "JointEncoder",
    "LossReport",
    "PerceptualNet",
    "ToyJointEncoder",
    "ToyPerceptualNet",
    "directional_loss",
    "optimize_lambda",
    "perceptual_loss",
    "total_loss",
    "EditConfig",
    "PipelineError",
    "RunTrace",
    "quantile_sweep",
    "run_edit",
    "score_metrics",
    "trace_embedding_distances",
    "CovDiffWeights",
    "MixSchedule",
    "PromptEmbedding",
    "cond_provider",
    "covariance",
    "covdiff",
    "embed_text",
    "guided_mix",
    "load_embeddings",
    "mix",
    "pad_align",
    "save_embeddings",
    "GuidedBackend",
    "InversionResult",
    "StepOutput",
    "Trajectory",
    "cfg_epsilon",
    "ddim_step",
    "forward_noise",
    "invert",
    "sample",
    "Schedule",
    "build_schedule",
    "LambdaInit",
    "StagePlan",
    "discern_from_traces",
    "discern_stages",
    "high_freq_energy",
    "init_lambda",
    "noise_gradient_trace",
]
