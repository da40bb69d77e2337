"""Range-azimuth ambiguity cube synthesis with block Rician fading and AWGN.

The cube models the data after matched filtering and beamforming: each target
contributes a separable sinc-shaped ambiguity centred on its (range, azimuth)
position, modulated across packets by its Doppler phase
``exp(-1j * 4*pi/wavelength * v * n * pri)``.

Random streams are Philox (counter-based) generators keyed by
``(rng_seed, trial, stream)``: stream 0 drives the noise and stream ``1 + z``
drives the fading of target ``z``. Any trial can therefore be regenerated in
isolation, in any order, on any worker.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

SCHEMA_VERSION = 1

# "weakest_target": realised per-sample power of the weakest target at its own
# peak cell, fading included. "nominal": strongest target's mean power
# (E|h|^2 = 1), so deep fades show up as SNR loss.
SNR_REFERENCES = ("weakest_target", "nominal")

C_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class Target:
    range_m: float
    azimuth_rad: float
    velocity_mps: float
    amplitude: complex = 1.0

    def __post_init__(self):
        if self.range_m < 0:
            raise ValueError(f"range_m must be >= 0, got {self.range_m}")
        if abs(self.azimuth_rad) > math.pi / 2 + 1e-12:
            raise ValueError(f"azimuth_rad must lie in [-pi/2, pi/2], got {self.azimuth_rad}")


@dataclass(frozen=True)
class RadarParams:
    """Radar and channel configuration.

    ``rician_k_db=None`` disables fading (pure line of sight, h = 1) and
    ``snr_db=None`` disables noise. Default wavelength is 4.99 mm (60 GHz).
    ``snr_reference`` picks the signal power that ``snr_db`` is measured
    against; see :data:`SNR_REFERENCES`.
    """

    wavelength_m: float = 4.99e-3
    pri_s: float = 2e-6
    packets: int = 200
    range_bins: int = 256
    angle_bins: int = 64
    rician_k_db: float | None = 2.0
    snr_db: float | None = 20.0
    rng_seed: int = 0
    range_resolution_m: float = 0.085
    range_width_bins: float = 1.0
    angle_width_bins: float = 1.0
    snr_reference: str = "weakest_target"

    def __post_init__(self):
        if self.snr_reference not in SNR_REFERENCES:
            raise ValueError(f"snr_reference must be one of {SNR_REFERENCES}, got {self.snr_reference!r}")
        if self.wavelength_m <= 0 or self.pri_s <= 0:
            raise ValueError("wavelength_m and pri_s must be positive")
        if self.packets < 4:
            raise ValueError(f"packets must be >= 4, got {self.packets}")
        if self.range_bins < 1 or self.angle_bins < 1:
            raise ValueError("grid sizes must be positive")
        if self.range_resolution_m <= 0 or self.range_width_bins <= 0 or self.angle_width_bins <= 0:
            raise ValueError("range resolution and ambiguity widths must be positive")

    @property
    def cpi_s(self) -> float:
        return self.packets * self.pri_s

    @property
    def v_max_mps(self) -> float:
        """Largest unambiguous radial speed, wavelength / (4 PRI)."""
        return self.wavelength_m / (4.0 * self.pri_s)

    @property
    def angle_step_rad(self) -> float:
        return math.pi / self.angle_bins

    def range_bin(self, range_m: float) -> float:
        return range_m / self.range_resolution_m

    def angle_bin(self, azimuth_rad: float) -> float:
        return (azimuth_rad + math.pi / 2) / self.angle_step_rad

    def range_of_bin(self, index: float) -> float:
        return index * self.range_resolution_m

    def azimuth_of_bin(self, index: float) -> float:
        return -math.pi / 2 + index * self.angle_step_rad

    def with_(self, **changes) -> RadarParams:
        return replace(self, **changes)


@dataclass(frozen=True)
class AmbiguityCube:
    """Complex cube ``data[range, angle, packet]`` plus its ground truth."""

    data: np.ndarray
    params: RadarParams
    targets: tuple = ()
    fading: np.ndarray = field(default_factory=lambda: np.ones(0, dtype=complex))
    noise_variance: float = 0.0

    def __post_init__(self):
        p = self.params
        if self.data.shape != (p.range_bins, p.angle_bins, p.packets):
            raise ValueError(f"cube shape {self.data.shape} does not match params")


def trial_rng(seed: int, trial: int, stream: int) -> np.random.Generator:
    """Independent Philox stream for ``(seed, trial, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial, stream])))


def snr_scale(signal_power: float, snr_db: float) -> float:
    """Noise variance per complex sample that yields ``snr_db`` against ``signal_power``."""
    if signal_power <= 0:
        raise ValueError(f"signal_power must be positive, got {signal_power}")
    return signal_power / 10.0 ** (snr_db / 10.0)


def draw_rician(k_db: float | None, rng: np.random.Generator, size=None):
    """Unit-power Rician fading coefficient(s) with K-factor ``k_db``.

    ``k_db=None`` or ``+inf`` is the line-of-sight limit (h = 1); ``-inf``
    gives Rayleigh fading, CN(0, 1).
    """
    if k_db is None or k_db == math.inf:
        return np.ones(size, dtype=complex) if size is not None else 1.0 + 0j
    k = 0.0 if k_db == -math.inf else 10.0 ** (k_db / 10.0)
    los = math.sqrt(k / (k + 1.0))
    scale = math.sqrt(1.0 / (2.0 * (k + 1.0)))
    draws = rng.standard_normal(size=(2,) if size is None else (2, *np.atleast_1d(size)))
    h = los + scale * (draws[0] + 1j * draws[1])
    return complex(h) if size is None else h


def doppler_phase_step(velocity_mps: float, params: RadarParams) -> float:
    """Per-packet phase advance of a target's slow-time tone (radians)."""
    return -4.0 * math.pi / params.wavelength_m * velocity_mps * params.pri_s


def ambiguity_kernel(target: Target, params: RadarParams) -> np.ndarray:
    """Separable sinc ambiguity of one unit-amplitude target on the grid."""
    r = np.arange(params.range_bins) - params.range_bin(target.range_m)
    a = np.arange(params.angle_bins) - params.angle_bin(target.azimuth_rad)
    return np.outer(np.sinc(r / params.range_width_bins), np.sinc(a / params.angle_width_bins))


def check_velocities(targets, params: RadarParams) -> None:
    for z, t in enumerate(targets):
        if abs(t.velocity_mps) >= params.v_max_mps:
            raise ValueError(
                f"target {z} velocity {t.velocity_mps} m/s exceeds the unambiguous "
                f"limit {params.v_max_mps:.3f} m/s")


def synthesize_cube(targets, params: RadarParams, trial: int = 0) -> AmbiguityCube:
    """Build the ambiguity cube for ``targets`` under ``params``.

    ``snr_db`` is a per-sample SNR at a target's peak cell. The signal power it
    refers to is chosen by ``params.snr_reference``.
    """
    targets = tuple(targets)
    if not targets:
        raise ValueError("at least one target is required")
    check_velocities(targets, params)
    n = np.arange(params.packets)
    data = np.zeros((params.range_bins, params.angle_bins, params.packets), dtype=np.complex128)
    fading = np.empty(len(targets), dtype=np.complex128)
    peak_gain = np.empty(len(targets))
    for z, t in enumerate(targets):
        fading[z] = draw_rician(params.rician_k_db, trial_rng(params.rng_seed, trial, 1 + z))
        tone = np.exp(1j * doppler_phase_step(t.velocity_mps, params) * n)
        omega = ambiguity_kernel(t, params)
        peak_gain[z] = np.max(np.abs(omega)) ** 2
        data += (complex(t.amplitude) * fading[z] * omega)[:, :, None] * tone
    noise_var = 0.0
    if params.snr_db is not None:
        amp2 = np.abs(np.array([complex(t.amplitude) for t in targets])) ** 2
        if params.snr_reference == "nominal":
            power = float(np.max(amp2 * peak_gain))
        else:
            power = float(np.min(amp2 * np.abs(fading) ** 2 * peak_gain))
        noise_var = snr_scale(power, params.snr_db)
        rng = trial_rng(params.rng_seed, trial, 0)
        w = rng.standard_normal((2, *data.shape))
        data += math.sqrt(noise_var / 2.0) * (w[0] + 1j * w[1])
    return AmbiguityCube(data, params, targets, fading, noise_var)


# -- scenario files -------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    params: RadarParams
    targets: tuple
    sweep: dict = field(default_factory=dict)
    source: str | None = None


def scenario_schema() -> dict:
    text = resources.files("doppler_isac").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


class ScenarioError(ValueError):
    pass


def parse_scenario(doc: dict, source: str | None = None) -> Scenario:
    """Validate a scenario document and build params and targets from it."""
    version = doc.get("schema_version") if isinstance(doc, dict) else None
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    try:
        jsonschema.validate(doc, scenario_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{source or 'scenario'}: {where}: {exc.message}") from None

    radar = dict(doc.get("radar", {}))
    channel = doc.get("channel", {})
    kwargs = {}
    if "pri_us" in radar:
        kwargs["pri_s"] = radar.pop("pri_us") * 1e-6
    kwargs.update(radar)
    for key in ("rician_k_db", "snr_db", "snr_reference"):
        if key in channel:
            kwargs[key] = channel[key]
    params = RadarParams(**kwargs)
    targets = tuple(
        Target(
            range_m=t["range_m"],
            azimuth_rad=math.radians(t.get("azimuth_deg", 0.0)),
            velocity_mps=t["velocity_mps"],
            amplitude=complex(t.get("amplitude_re", 1.0), t.get("amplitude_im", 0.0)),
        )
        for t in doc["targets"]
    )
    return Scenario(params, targets, dict(doc.get("sweep", {})), source)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from None
    return parse_scenario(doc, source=str(path))


def scenario_to_dict(scn: Scenario) -> dict:
    p = scn.params
    return {
        "schema_version": SCHEMA_VERSION,
        "radar": {
            "wavelength_m": p.wavelength_m,
            "pri_us": p.pri_s * 1e6,
            "packets": p.packets,
            "range_bins": p.range_bins,
            "angle_bins": p.angle_bins,
            "range_resolution_m": p.range_resolution_m,
            "range_width_bins": p.range_width_bins,
            "angle_width_bins": p.angle_width_bins,
            "rng_seed": p.rng_seed,
        },
        "channel": {"rician_k_db": p.rician_k_db, "snr_db": p.snr_db,
                    "snr_reference": p.snr_reference},
        "targets": [
            {
                "range_m": t.range_m,
                "azimuth_deg": math.degrees(t.azimuth_rad),
                "velocity_mps": t.velocity_mps,
                "amplitude_re": complex(t.amplitude).real,
                "amplitude_im": complex(t.amplitude).imag,
            }
            for t in scn.targets
        ],
        **({"sweep": scn.sweep} if scn.sweep else {}),
    }
