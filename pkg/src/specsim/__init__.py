"""Desk-scale simulator and controllers for adaptive speculative decoding."""

from .controller import ControllerParams, ControllerState, init_from_warmup
from .hetero import GpuClassProfile, best_assignment, breakeven_speedup, make_cluster, relative_throughput
from .perf_model import (
    NEVER_BENEFICIAL,
    DomainError,
    LatencyProfile,
    ProfileError,
    SpeculationConfig,
    alpha_from_accept_length,
    beta_ratio,
    bundled_profile,
    c_ratio,
    expected_accept_length,
    lookup_latency,
    min_acceptance_for_gain,
    practical_speedup,
    sample_accept_length,
    theoretical_speedup,
)
from .serving import Engine, EngineConfig, RunMetrics, SignalGeometry, run
from .trainer import TrainerProfile, compare_training_modes, storage_footprint, train
from .workload import PhaseSpec, WorkloadScript, build_script, bundled_workload, current_alpha

__version__ = "0.1.0"
