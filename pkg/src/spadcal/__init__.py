"""Single-photon radiometry toolkit: photon/click stream simulation and
SPAD calibration analysis (dead-time response models, g2 correlation,
Allan stability, efficiency estimation with uncertainty budgets)."""

__version__ = "0.1.0"

from .streams import TimestampStream
from .sources import (
    PulsedSps,
    PulsedLaser,
    CwSps,
    generate,
    generate_pulsed_sps,
    generate_pulsed_laser,
    generate_cw_sps,
    per_pulse_g2_zero,
    dist_from_g2,
)
from .detectors import SpadModel, LnpdModel, ClickStream, detect, lnpd_read, dark_correction_weight
from .correlation import (
    Histogram,
    G2Fit,
    hbt_split,
    interarrival_histogram,
    consecutive_delay_histogram,
    fit_g2_comb,
    estimate_afterpulsing,
)
from .stability import CountTrace, allan_deviation, optimal_integration_time, detect_linear_drift
from .calibration import (
    MeasurementSequence,
    EfficiencyEstimate,
    SequenceProtocol,
    multi_photon_epsilon,
    flux_from_lnpd,
    calibrate,
    run_sequence_sim,
)
from .deadtime import (
    PulsedLaserModel,
    PulsedSpsModel,
    CwSpsModel,
    FitResult,
    eta_model,
    generic_response,
    poissonian_gap,
    fit_eta0,
    weighted_average,
)
