"""Near-field motion-state localization toolkit.

Estimates and bounds the full motion state of a receiver carrying a
large uniform linear array: 3-D position, 3-D velocity, and the array's
orientation on the unit sphere, from per-element delay and Doppler
measurements taken against a handful of moving anchors over a few time
slots.  Clock and frequency offsets per anchor ride along as nuisance
parameters.

The pieces, bottom to top:

* :mod:`nfloc.scenario`: anchors, array, slot plan, waveform, geometry.
* :mod:`nfloc.waveform`: pulse spectra and the moment statistics that
  set measurement information.
* :mod:`nfloc.channel`: delay / Doppler / gain maps and noise scaling.
* :mod:`nfloc.fisher`: Fisher information, equivalent information for
  the motion block, constrained bounds (PEB / VEB / OEB).
* :mod:`nfloc.measurement`: CRLB-scaled synthetic measurements.
* :mod:`nfloc.initializer`: closed-form start (TDoA, finite
  differences, back-propagation).
* :mod:`nfloc.estimator`: block-coordinate ML refinement with a
  spherical retraction for orientation.
* :mod:`nfloc.harness`: config files, sweeps, Monte Carlo campaigns,
  CSV output, CLI (``nfloc``).
"""

__version__ = "0.1.0"

from .channel import Channel, ChannelTables, StateModel, build_channel
from .errors import (
    ConfigurationError,
    ContractViolation,
    DegenerateGeometryError,
    EstimatorFailure,
    InitializerFailure,
    IntegrationError,
    NflocError,
)
from .estimator import EstimateState, SolverConfig, refine, refine_multistart
from .fisher import (
    BoundReport,
    EfimResult,
    LocalizabilityReport,
    bounds_for_scenario,
    ccrb,
    efim,
    localizability,
)
from .initializer import InitEstimate, InitializerConfig, initialize
from .measurement import MeasurementSet, noise_floor_from_crlb, sample, sample_auto
from .scenario import (
    Anchor,
    ArraySpec,
    NoiseConfig,
    ReceiverTruth,
    ScenarioConfig,
    SlotPlan,
    build_geometry,
    reference_scenario,
)
from .waveform import Waveform, WaveformStats, compute_stats

__all__ = [
    "__version__",
    "Anchor",
    "ArraySpec",
    "BoundReport",
    "Channel",
    "ChannelTables",
    "ConfigurationError",
    "ContractViolation",
    "DegenerateGeometryError",
    "EfimResult",
    "EstimateState",
    "EstimatorFailure",
    "InitEstimate",
    "InitializerConfig",
    "InitializerFailure",
    "IntegrationError",
    "LocalizabilityReport",
    "MeasurementSet",
    "NflocError",
    "NoiseConfig",
    "ReceiverTruth",
    "ScenarioConfig",
    "SlotPlan",
    "SolverConfig",
    "StateModel",
    "Waveform",
    "WaveformStats",
    "bounds_for_scenario",
    "build_channel",
    "build_geometry",
    "ccrb",
    "efim",
    "initialize",
    "localizability",
    "noise_floor_from_crlb",
    "reference_scenario",
    "refine",
    "refine_multistart",
    "sample",
    "sample_auto",
    "compute_stats",
]
