"""Single-snapshot localization and mapping with a MISO mmWave downlink.

A BS with a uniform linear array sends OFDM pilots through fixed beams to a
single-antenna MS.  From one snapshot the package computes Fisher-information
bounds (PEB and per-scatterer mapping bounds), estimates the (AOD, TOF) pairs
by compressed maximum likelihood, and maps them to the MS position and the
scatterer locations.
"""

from .estimator import (
    CostDiagnostics,
    EstimateResult,
    GridSpec,
    build_Q,
    estimate,
    joint_ml,
    nll,
    profile_alpha,
    refine,
    singlepath_spectrum,
    sp_grid,
    sp_refine,
    successive_extraction,
)
from .fim import (
    PositionFim,
    SingularFimError,
    approx_sigma_p,
    fd_fim,
    fim_channel,
    position_bounds,
)
from .harness import SweepResult, SweepSpec, aggregate, run_sweep, run_trial
from .locmap import (
    LocalizationResult,
    equivalent_to_scatterer,
    identify_los,
    localize,
    locate,
    map_scatterer,
    position_cost,
)
from .scenario import (
    PathParams,
    ScenarioConfig,
    derive_channel_params,
    location_params,
    noise_variance_from_snr,
)
from .signal import ObservationSet, TxSignalSet, build_beamformer, steering_vector, synthesize

__version__ = "0.1.0"
