"""Reconfigurable Doppler velocity estimation for TDM ISAC radar."""

__version__ = "0.1.0"

from doppler_isac.doppler import (  # noqa: E402
    ALGORITHMS,
    DopplerEstimate,
    EstimatorConfig,
    estimate,
    esprit,
    fft_doppler,
    music,
    precision,
    resolution,
)
from doppler_isac.locator import Detection, SlowTimeVector, extract_slow_time, peak_search  # noqa: E402
from doppler_isac.scene import AmbiguityCube, RadarParams, Target, synthesize_cube  # noqa: E402

__all__ = [
    "ALGORITHMS", "AmbiguityCube", "Detection", "DopplerEstimate", "EstimatorConfig",
    "RadarParams", "SlowTimeVector", "Target", "esprit", "estimate", "extract_slow_time",
    "fft_doppler", "music", "peak_search", "precision", "resolution", "synthesize_cube",
]
