"""Learning local inverse-sensitivity approximators of closed-loop systems
from simulations, and using them for guided reach, coverage estimation,
and falsification."""

__version__ = "0.1.0"

from .approximator import (
    CorruptedOracle,
    ExactOracle,
    MLPModel,
    TrainConfig,
    TrainingReport,
    evaluate_model,
    load_model,
    predict_direction,
    save_model,
    train,
)
from .dataset import (
    SensitivityDataset,
    generate_dataset,
    load_dataset_csv,
    save_dataset_csv,
    split_dataset,
)
from .dynamics import (
    CATALOG_NAMES,
    Box,
    ClosedLoopSystem,
    NeuralController,
    Trajectory,
    load_controller,
    load_system,
    make_system,
    resolve_system,
    save_trajectory_csv,
    simulate,
    simulate_backward,
    simulate_batch,
    system_from_dict,
)
from .errors import (
    DegeneratePredictionError,
    DivergenceError,
    GenerationError,
    InputError,
    ModelFormatError,
    NoTerminationGuaranteeError,
    SensGuideError,
    TrainingDivergedError,
)
from .explorer import (
    ConvergenceParams,
    CoverageReport,
    CoverageTarget,
    ExtremeResult,
    MagnitudeModel,
    RDIteration,
    RDParams,
    RDResult,
    admissible_step_range,
    axis_aligned_direction,
    convergence_bound,
    coverage,
    exact_convergence_params,
    fit_magnitude_model,
    k_star,
    predict_trajectory,
    project_to_box,
    reach_destination,
    reach_extreme,
)
from .falsification import (
    FalsificationResult,
    SafetySpec,
    falsify_baseline,
    falsify_rd,
    load_spec,
    pick_target,
    robustness,
    signed_distance_to_box,
)
from .sensitivity import (
    ErrorCurve,
    abs_error_curve,
    eta_bounds,
    inverse_sensitivity_from_pair,
    inverse_sensitivity_oracle,
    linear_state_matrix,
    sensitivity_exact,
)

__all__ = [name for name in dir() if not name.startswith("_")]
