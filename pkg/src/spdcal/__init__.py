"""Single-photon detector calibration: rate correction, PDE models, chi-squared fits, Monte Carlo."""
from .correction import (
    ApOrder,
    CorrectionBreakdown,
    DetectorParams,
    PulseDetectionCorrector,
    RawRates,
    afterpulse_forward,
    afterpulse_invert,
    dark_click_probability,
    pulse_detection_probability,
    signal_click_probability,
)
from .exceptions import (
    CalibrationError,
    DegenerateDof,
    EmptyInput,
    InconsistentRates,
    NegativeDiscriminant,
    NoConvergence,
    OutOfRange,
    ParameterOutOfRange,
)
from .fitting import (
    Adequacy,
    DetectionModelRegressor,
    FitResult,
    MeasurementPoint,
    MeasurementSeries,
    OpticsConfig,
    chi2,
    evaluate,
    fit,
    power_to_mu,
    sigma_model,
)
from .models import (
    Dependent,
    Empirical,
    Independent,
    PdeModel,
    detection_probability,
    eta_k,
    model_from_dict,
    poisson_pmf,
    recommended_order,
)
from .simulator import SimConfig, SimResult, generate_series, simulate

__version__ = "0.1.0"
