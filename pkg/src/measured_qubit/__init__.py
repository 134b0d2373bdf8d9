"""Quantum-trajectory thermodynamics of a continuously monitored qubit.

Library layers:

- ``qubit``: exact two-level algebra (states, operators, spectra, thermal
  states, free energies).
- ``sme``: stochastic integration of the Bayesian state-update equations
  with a per-step unitary/measurement split and simulated detector output.
- ``thermo``: work/heat ledgers, transition-probability decomposition,
  two-point energy statistics and free-energy estimation.
- ``feedback``: gain control that counters detector backaction.
- ``ensemble``: seeded, order-independent Monte Carlo plus the
  deterministic ensemble-mean reference.
- ``config``/``presets``/``runner``/``cli``: experiment configuration,
  named presets and file outputs.
"""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .ensemble import (
    EnsembleConfig,
    EnsembleResult,
    InitialState,
    lindblad_reference,
    run_ensemble,
    run_transition_study,
)
from .feedback import (
    FeedbackParams,
    ReferenceTrajectory,
    controlled_gain,
    make_controller,
    phase_error,
    reference_trajectory,
)
from .presets import PRESETS, preset_config
from .qubit import (
    DensityMatrix,
    DriveProtocol,
    QubitOperator,
    SpectralDecomposition,
    ThermalSpec,
    bloch_coordinates,
    density_from_bloch,
    drive_amplitude,
    eigendecompose,
    expectation,
    free_energy_difference,
    hamiltonian_at,
    thermal_state,
    von_neumann_entropy,
)
from .runner import run_experiment
from .sme import (
    SCHEMES,
    DetectorModel,
    IntegrationBlowupError,
    NoiseProcess,
    StateDelta,
    StepDecomposition,
    StepThresholds,
    TrajectoryRecord,
    detector_current,
    effective_step_hamiltonian,
    integrate_trajectory,
    measurement_increment,
    sample_noise,
    step,
    unitary_increment,
)
from .thermo import (
    DiscreteDistribution,
    FirstLawError,
    ThermoLedger,
    TransitionDecomposition,
    jarzynski_estimate,
    ledger_update,
    new_ledger,
    step_heat,
    step_work,
    tpm_distribution,
    transition_decomposition,
)

__version__ = "0.1.0"
