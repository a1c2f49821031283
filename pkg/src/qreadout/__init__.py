"""Photon-counting trajectory simulation and Bayesian inference for
ancilla-mediated qubit readout and heralded entanglement."""

__version__ = "0.1.0"

from .qcore import (
    DensityMatrix,
    HilbertSpace,
    Operator,
    SpaceMismatchError,
    dagger,
    eigen_floor,
    expectation,
    partial_trace,
    tensor,
    trace_distance,
)
from .models import (
    DipoleGeometry,
    ModelSpec,
    MonitoredJump,
    PulseEvent,
    build_direct_drive_model,
    build_reflection_model,
    build_two_cavity_model,
    dipole_strength,
    purcell_rate,
)
from .trajectory import (
    DetectionRecord,
    StepSizeError,
    TrajectoryResult,
    ensemble_average,
    sample_trajectory,
    step,
)
from .inference import (
    Hypothesis,
    PosteriorTrace,
    QeCurve,
    TIE,
    bayesian_filter,
    classify,
    estimate_qe,
    integrated_count_error,
    lindblad_oracle,
    qe_analytic_large_mu,
    standard_hypotheses,
)
from .entangle import (
    BellBasis,
    EntangleConfig,
    HeraldOutcome,
    fidelity_sweep,
    herald_decision,
    run_protocol,
    run_protocol_ensemble,
)
from .config import ConfigError, ExperimentConfig, parse_config, validate_config
from .runner import run_experiment
