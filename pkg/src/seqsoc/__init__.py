"""Sequential frequency-separated SoC and capacity estimation for a first-order ECM cell."""

from .cell import (
    PRESETS,
    SAMSUNG_OCV,
    BatteryState,
    CellSpec,
    EcmParams,
    Measurement,
    OcvCurve,
    OcvDomainError,
    linearize_ocv,
    ocv,
    ocv_slope,
    preset,
    simulate,
    step_state,
)
from .estimators import (
    GaussianEstimate,
    ModelCallbacks,
    NoiseConfig,
    dekf_step,
    ekf_predict,
    ekf_update,
    validate_jacobians,
)
from .pipeline import (
    EstimatorNoise,
    Inits,
    PipelineError,
    SequentialResult,
    StepPlan,
    default_plans,
    run_concurrent_baseline,
    run_sequential,
    step1_estimate_rs,
    step2_estimate_rc,
    step3_estimate_soc_soh,
)
from .signals import (
    CurrentProfile,
    HighPassFilter,
    component_breakdown,
    design_highpass,
    drive_cycle_profile,
    multisine_profile,
    sine_profile,
)

__version__ = "0.1.0"

__all__ = [
    "PRESETS",
    "SAMSUNG_OCV",
    "BatteryState",
    "CellSpec",
    "CurrentProfile",
    "EcmParams",
    "EstimatorNoise",
    "GaussianEstimate",
    "HighPassFilter",
    "Inits",
    "Measurement",
    "ModelCallbacks",
    "NoiseConfig",
    "OcvCurve",
    "OcvDomainError",
    "PipelineError",
    "SequentialResult",
    "StepPlan",
    "component_breakdown",
    "default_plans",
    "dekf_step",
    "design_highpass",
    "drive_cycle_profile",
    "ekf_predict",
    "ekf_update",
    "linearize_ocv",
    "multisine_profile",
    "ocv",
    "ocv_slope",
    "preset",
    "run_concurrent_baseline",
    "run_sequential",
    "simulate",
    "sine_profile",
    "step1_estimate_rs",
    "step2_estimate_rc",
    "step3_estimate_soc_soh",
    "step_state",
    "validate_jacobians",
]
