"""Channel extrapolation for RIS-assisted MIMO-OFDM with ODE-inspired CNNs."""

from .channel import (CascadedChannel, PathParams, ScenarioParams, SystemConfig,
                      assemble_cascaded, bs_ris_channel, cascaded_channel_k,
                      ris_user_channel, ula_steering, upa_steering)
from .data import (Dataset, DatasetManifest, SamplePair, SamplingPattern,
                   SynthDistribution, build_pair, compute_scale,
                   generate_dataset, load_dataset, load_manifest, mix64,
                   sample_scenario, save_dataset, split, uniform_pattern)
from .network import (Model, ModelSpec, build_model, conv_param_count,
                      load_model, multiplier_count, param_count, save_model)
from .training import (TrainHistory, TrainingConfig, evaluate_nmse, lr_at,
                       train)
from .experiments import run_frequency_gap, run_rate_sweep

__version__ = "0.1.0"
