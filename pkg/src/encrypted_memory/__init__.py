"""Encrypted photonic memory: disordered echo and disorder-encrypted EIT simulations."""

from ._version import __version__
from .disorder import (
    CorrelationEstimate, CorrelationSpec, KeyProfile, constant_key, estimate_correlation, generate_key,
    generate_keys, gradient_key, load_key_csv, load_key_npz, rms_gradient_key, save_key_csv, save_key_npz, section_key,
)
from .dynamics_lambda import LambdaConfig, SimResult, dem_config, simulate_dem, simulate_dem_branches, snapshot_coherences
from .dynamics_n import NConfig, eit_config, simulate_eit_encrypted, simulate_eit_trials, spinwave_rotation_check
from .grid import UNITS, SpaceTimeGrid, uniform_time, uniform_z
from .harness import (
    ExperimentPlan, LambdaSettings, NSettings, cell_seed, run_brute_force, run_heatmap, run_keytest_suite,
    run_shift_sweep,
)
from .metrics import (
    MetricsBundle, RabiDistribution, confidentiality, coverage_fidelity, echo_oracle, fidelity, matching_condition, normalized_se,
    storage_efficiency,
)
from .protocol import (
    FieldSchedule, ProbeSpec, build_dem_schedule, build_eit_schedules, invert_key, phase_phi, phase_theta, shift_key,
)
from .solver import AtomicState, BlochParams, propagate

__all__ = [name for name in dir() if not name.startswith("_")]
