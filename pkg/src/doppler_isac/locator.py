"""Range-azimuth peak search and slow-time extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from doppler_isac.scene import AmbiguityCube, RadarParams


@dataclass(frozen=True)
class Detection:
    range_bin: int
    angle_bin: int
    peak_magnitude: float


@dataclass(frozen=True)
class SlowTimeVector:
    samples: np.ndarray
    params: RadarParams
    origin: Detection | None = None

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1 or s.shape[0] != self.params.packets:
            raise ValueError(f"expected {self.params.packets} samples, got shape {s.shape}")

    @classmethod
    def from_samples(cls, samples, params: RadarParams | None = None, **overrides) -> SlowTimeVector:
        """Wrap a raw vector; ``packets`` is taken from its length."""
        samples = np.asarray(samples, dtype=np.complex128)
        params = (params or RadarParams()).with_(packets=samples.shape[0], **overrides)
        return cls(samples, params)

    def conj(self) -> SlowTimeVector:
        return SlowTimeVector(np.conj(self.samples), self.params, self.origin)

    def scaled(self, c: complex) -> SlowTimeVector:
        return SlowTimeVector(c * self.samples, self.params, self.origin)


def peak_search(cube: AmbiguityCube, n_ref: int = 0, *, coherent_avg: bool = False) -> Detection:
    """Strongest range-azimuth cell of packet ``n_ref``.

    With ``coherent_avg`` the magnitude map is averaged over all packets first
    and ``n_ref`` is ignored. Ties resolve to the lowest (range, angle) index.
    """
    n = cube.params.packets
    if coherent_avg:
        mag = np.mean(np.abs(cube.data), axis=2)
    else:
        if not 0 <= n_ref < n:
            raise IndexError(f"n_ref {n_ref} outside 0..{n - 1}")
        mag = np.abs(cube.data[:, :, n_ref])
    flat = int(np.argmax(mag))
    peak = float(mag.flat[flat])
    if peak == 0.0:
        raise ValueError("ambiguity map is identically zero; nothing to detect")
    r, a = np.unravel_index(flat, mag.shape)
    return Detection(int(r), int(a), peak)


def extract_slow_time(cube: AmbiguityCube, det: Detection) -> SlowTimeVector:
    p = cube.params
    if not (0 <= det.range_bin < p.range_bins and 0 <= det.angle_bin < p.angle_bins):
        raise IndexError(f"detection {det} outside the {p.range_bins}x{p.angle_bins} grid")
    return SlowTimeVector(cube.data[det.range_bin, det.angle_bin, :].copy(), p, det)


def track_slow_time(cube: AmbiguityCube) -> SlowTimeVector:
    """Slow-time vector with the peak cell re-detected on every packet."""
    mag = np.abs(cube.data).reshape(-1, cube.params.packets)
    idx = np.argmax(mag, axis=0)
    samples = cube.data.reshape(-1, cube.params.packets)[idx, np.arange(cube.params.packets)]
    first = np.unravel_index(int(idx[0]), cube.data.shape[:2])
    return SlowTimeVector(samples, cube.params, Detection(int(first[0]), int(first[1]), float(mag[idx[0], 0])))


def estimate_snr_db(cube: AmbiguityCube, det: Detection) -> float:
    """Peak-to-noise-floor SNR estimate at a detected cell.

    The noise power is taken from the median of ``|Y|**2`` over the whole cube
    (for circular Gaussian noise the median is ``sigma**2 * ln 2``), which is
    robust as long as targets occupy a small fraction of the cells.
    """
    power = np.abs(cube.data) ** 2
    noise = float(np.median(power)) / math.log(2.0)
    cell = float(np.mean(power[det.range_bin, det.angle_bin, :]))
    if noise <= 0.0:
        return math.inf
    signal = max(cell - noise, np.finfo(float).tiny)
    return 10.0 * math.log10(signal / noise)
