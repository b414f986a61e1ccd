"""Invertible diffusion engine for generating and editing skeletal motion.

The pieces compose bottom-up: a variance schedule feeds an invertible coupled
sampler built on a toy conditional denoiser; exact inversion recovers the
input noise of any generated (or imported) motion, which enables both
style-preserving regeneration under new conditions and memory-flat gradient
descent directly on the input noise under editing losses.
"""

from .autodiff import GradTape, Tensor, backward
from .denoiser import (ConditionedDenoiser, ConditionVector, DenoiserConfig,
                       DenoiserParams, SyntheticCorpus, denoise, init_params,
                       load_checkpoint, noised, save_checkpoint,
                       synth_condition, synth_corpus, synth_motion, train)
from .losses import (EditSpec, MirrorMap, edit_loss, euler, evaluate_loss,
                     loss_frame_joint, loss_motion_range, loss_symmetry,
                     loss_velocity, spec_from_json_dict, spec_to_json_dict, vel)
from .motion import (Joint, MotionSequence, Skeleton, default_skeleton,
                     export_bvh, import_bvh, load_motion, save_motion,
                     stat_frechet)
from .optimizer import (OptimizationTrace, OptimizerConfig, RetainedStepMeter,
                        TraceRecord, grad_full_cache, grad_inversion_recompute,
                        optimize_noise)
from .sampler import (CoupledState, InversionError, NoiseLedger, SamplerConfig,
                      generate, invert, load_ledger, mix, regenerate_with_style,
                      save_ledger, standard_noise, step_coupled, step_inverse,
                      step_plain, unmix)
from .schedule import (VarianceSchedule, build_schedule, respace,
                       schedule_from_json, schedule_to_json)

__version__ = "0.1.0"
