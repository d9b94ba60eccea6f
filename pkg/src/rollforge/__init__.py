"""Streaming rolling-window diffusion over a synthetic linear-Gaussian world."""

from .denoiser import CacheView, Denoiser, DenoiserConfig, KvEntry
from .engine import (RollingStream, SelfForcingStream, advance, new_stream_state,
                     roll_step, rolling_generate, sf_generate, switch_condition, warmup)
from .kvcache import CacheConfig, CacheState
from .schedule import (NoiseSchedule, data_prediction, forward_diffuse,
                       posterior_score, shift_timestep, sigma, uniform_schedule)
from .world import (JointGaussian, Regime, analytic_data_score, default_regimes,
                    joint_gaussian, make_regime, sample_sequence)

__version__ = "0.1.0"

__all__ = [
    "CacheConfig", "CacheState", "CacheView", "Denoiser", "DenoiserConfig",
    "JointGaussian", "KvEntry", "NoiseSchedule", "Regime", "RollingStream",
    "SelfForcingStream", "advance", "analytic_data_score", "data_prediction",
    "default_regimes", "forward_diffuse", "joint_gaussian", "make_regime",
    "new_stream_state", "posterior_score", "roll_step", "rolling_generate",
    "sample_sequence", "sf_generate", "shift_timestep", "sigma",
    "switch_condition", "uniform_schedule", "warmup",
]
