"""Doppler velocity estimators for a slow-time vector.

Four algorithms share one front end:

* ``fft``: zero-padded FFT peak search.
* ``esprit_hi``: ESPRIT, signal-subspace pseudo-inverse through a Jacobi SVD of
  the zero-padded square ``E2``.
* ``esprit_lo``: ESPRIT, pseudo-inverse from the K x K normal matrix
  ``(E2^H E2)^-1 E2^H`` with a closed-form 2x2 inverse.
* ``music``: MUSIC pseudospectrum on a uniform velocity grid.

Slow-time tones follow ``y[n] ~ exp(-1j * 4*pi*v*n*pri / wavelength)``. With
``E1 = E[:-1]`` and ``E2 = E[1:]`` the shift operator ``E2^+ E1`` has
eigenvalues ``exp(+1j * 4*pi*v*pri / wavelength)``, so velocities are read as
``v = wavelength / (4*pi*pri) * angle(mu)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from doppler_isac import numlin
from doppler_isac.locator import SlowTimeVector
from doppler_isac.numlin import OpCounter, SingularMatrixError
from doppler_isac.scene import RadarParams

ALGORITHMS = ("fft", "esprit_hi", "esprit_lo", "music")


class SubspaceCollapseError(SingularMatrixError):
    """The signal subspace has lower rank than the requested model order."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator selection and its tuning.

    Attributes:
        algorithm: One of ``fft``, ``esprit_hi``, ``esprit_lo``, ``music``.
        fft_size: Transform length P for ``fft`` (power of two, >= N).
        smoothing_len: Subvector length L; ``None`` means ``N // 2``.
        model_order: Number of tones K to report (1 or 2).
        search_grid: Candidate velocities for ``music``.
        evd_mode: ``iterated`` or ``single_qr`` eigen-decomposition.
        use_all_samples: Let the smoothing sum also take the last window.
    """

    algorithm: str = "esprit_lo"
    fft_size: int = 1024
    smoothing_len: int | None = None
    model_order: int = 1
    search_grid: int = 4096
    evd_mode: str = "iterated"
    use_all_samples: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.model_order not in (1, 2):
            raise ValueError(f"model_order must be 1 or 2, got {self.model_order}")
        if self.evd_mode not in numlin.EVD_MODES:
            raise ValueError(f"unknown evd_mode {self.evd_mode!r}")

    def with_(self, **changes) -> EstimatorConfig:
        return replace(self, **changes)

    def smoothing_for(self, n: int) -> int:
        """Validated subvector length for a vector of ``n`` samples."""
        L = n // 2 if self.smoothing_len is None else self.smoothing_len
        if not 2 <= L <= n - 1:
            raise ValueError(f"smoothing length {L} outside 2..{n - 1}")
        if self.algorithm != "fft" and self.model_order > L - 1:
            raise ValueError(f"model order {self.model_order} needs smoothing length > {self.model_order}")
        return L


@dataclass
class DopplerEstimate:
    algorithm: str
    velocities_mps: np.ndarray
    resolution_mps: float
    precision_mps: float | None = None
    eigen_moduli: np.ndarray | None = None
    eigenvalues: np.ndarray | None = None
    ops: OpCounter = field(default_factory=OpCounter)


def resolution(params: RadarParams) -> float:
    """Velocity resolution wavelength / (2 * CPI)."""
    return params.wavelength_m / (2.0 * params.cpi_s)


def precision(params: RadarParams, points: int) -> float:
    """Velocity grid step wavelength / (2 * points * PRI)."""
    if points <= 0:
        raise ValueError("points must be positive")
    return params.wavelength_m / (2.0 * points * params.pri_s)


def _samples(y) -> tuple[np.ndarray, RadarParams]:
    if isinstance(y, SlowTimeVector):
        return np.asarray(y.samples, dtype=np.complex128), y.params
    raise TypeError(f"expected a SlowTimeVector, got {type(y).__name__}")


def smooth_covariance(y, L: int, *, use_all_samples: bool = False,
                      counter: OpCounter | None = None) -> np.ndarray:
    """Forward-smoothed covariance ``sum_l s_l s_l^H`` of length-L subvectors.

    Snapshots are ``s_l = y[l:l+L]`` for ``l = 0 .. N-L-1``, so the final sample
    is left out; ``use_all_samples`` extends the sum to ``l = N-L``. No
    normalisation by the snapshot count is applied.
    """
    samples = y.samples if isinstance(y, SlowTimeVector) else np.asarray(y)
    samples = np.asarray(samples, dtype=np.complex128).ravel()
    n = samples.shape[0]
    if not 2 <= L <= n - 1:
        raise ValueError(f"smoothing length {L} outside 2..{n - 1}")
    count = n - L + 1 if use_all_samples else n - L
    snaps = sliding_window_view(samples, L)[:count].T
    return numlin.matmul(snaps, snaps.conj().T, counter)


def pinv_normal(e2, *, counter: OpCounter | None = None) -> np.ndarray:
    """Pseudo-inverse ``(E2^H E2)^-1 E2^H`` of a full-column-rank tall matrix."""
    e2 = numlin.as_matrix(e2, name="E2")
    c = counter if counter is not None else OpCounter()
    k = e2.shape[1]
    c.alloc(*e2.shape)  # local copy for the Gram product
    gram = numlin.matmul_hermitian_transpose(e2, e2, c)
    if k == 2:
        try:
            g_inv = numlin.inv_2x2(gram, counter=c)
        except SingularMatrixError as exc:
            raise SubspaceCollapseError(f"E2^H E2 is singular: {exc}") from None
    elif k == 1:
        g = gram[0, 0].real
        # E2 is a slice of unit-norm eigenvectors, so its Gram entry is O(1)
        if g <= 1e-12:
            raise SubspaceCollapseError(f"E2^H E2 = {g:.3e} is singular")
        c.charge(divisions=1)
        c.alloc(1)
        g_inv = np.array([[1.0 / g]], dtype=np.complex128)
    else:
        raise ValueError(f"normal-equation pseudo-inverse supports K <= 2, got {k}")
    return numlin.matmul(g_inv, e2.conj().T, c)


def pinv_svd(e2, *, counter: OpCounter | None = None, rcond: float = 1e-12) -> np.ndarray:
    """Pseudo-inverse ``V Sigma^+ U^H`` from the SVD of ``E2`` zero-padded to square.

    Only the leading ``K`` rows of the padded pseudo-inverse are formed, and
    singular values at or below ``rcond * sigma_1`` are dropped from ``Sigma^+``.
    """
    e2 = numlin.as_matrix(e2, name="E2")
    c = counter if counter is not None else OpCounter()
    rows, k = e2.shape
    size = max(rows, k)
    padded = np.zeros((size, size), dtype=np.complex128)
    padded[:rows, :k] = e2
    c.alloc(size, size)
    u, s, v = numlin.svd_small(padded, counter=c)
    keep = int(np.sum(s > rcond * s[0])) if s[0] > 0 else 0
    if keep == 0:
        raise SubspaceCollapseError("E2 is numerically zero")
    s_inv = 1.0 / s[:keep]
    c.charge(divisions=keep)
    c.alloc(keep)
    scaled = v[:k, :keep] * s_inv
    c.charge(mults=k * keep)
    c.alloc(k, keep)
    out = numlin.matmul(scaled, u[:rows, :keep].conj().T, c)
    return out


def _signal_subspace(samples, L, cfg, counter):
    a = smooth_covariance(samples, L, use_all_samples=cfg.use_all_samples, counter=counter)
    vals, vecs = numlin.hermitian_eig(a, mode=cfg.evd_mode, counter=counter)
    return vals, vecs


def _order_velocities(v: np.ndarray, *extra):
    # descending |v|, ties by descending v
    order = np.lexsort((-v, -np.abs(v)))
    return (v[order], *(x[order] for x in extra))


def esprit(y, cfg: EstimatorConfig) -> DopplerEstimate:
    """ESPRIT velocity estimates for the ``cfg.model_order`` strongest tones.

    Raises:
        SubspaceCollapseError: ``E2`` lacks full column rank (fewer than K
            distinguishable tones); retrying with K = 1 is the usual remedy.
        ConvergenceError: the eigen-decomposition did not converge.
    """
    if cfg.algorithm not in ("esprit_hi", "esprit_lo"):
        raise ValueError(f"esprit() needs esprit_hi or esprit_lo, got {cfg.algorithm}")
    samples, params = _samples(y)
    n = samples.shape[0]
    L = cfg.smoothing_for(n)
    K = cfg.model_order
    ops = OpCounter()

    _, vecs = _signal_subspace(samples, L, cfg, ops)
    e = numlin.slice_rows(vecs, 0, L, K, counter=ops)
    e1 = numlin.slice_rows(e, 0, L - 1, counter=ops)
    e2 = numlin.slice_rows(e, 1, L, counter=ops)
    if cfg.algorithm == "esprit_hi":
        e2_pinv = pinv_svd(e2, counter=ops)
    else:
        e2_pinv = pinv_normal(e2, counter=ops)
    shift = numlin.matmul(e2_pinv, e1, ops)
    if K == 2:
        mu = np.array(numlin.eig_2x2(shift, counter=ops))
    else:
        mu = np.array([shift[0, 0]])
    scale = params.wavelength_m / (4.0 * math.pi * params.pri_s)
    v = scale * np.angle(mu)
    ops.charge(mults=K, sqrts=K, divisions=K)
    v, mu = _order_velocities(v, mu)
    return DopplerEstimate(cfg.algorithm, v, resolution(params), None, np.abs(mu), mu, ops)


def _grid_velocity(bins: np.ndarray, points: int, params: RadarParams) -> np.ndarray:
    f = np.asarray(bins, dtype=float) / points
    f = np.where(f > 0.5, f - 1.0, f)
    return -(params.wavelength_m / (2.0 * params.pri_s)) * f


def _separated_peaks(spectrum: np.ndarray, k: int, min_sep: int = 2) -> np.ndarray:
    """Indices of the ``k`` largest circularly separated local maxima."""
    if k == 1:
        return np.array([int(np.argmax(spectrum))])
    size = spectrum.shape[0]
    left = np.roll(spectrum, 1)
    right = np.roll(spectrum, -1)
    local = np.flatnonzero((spectrum >= left) & (spectrum >= right))
    picked: list[int] = []
    for pool in (local, np.arange(size)):
        order = pool[np.lexsort((pool, -spectrum[pool]))]
        for idx in order:
            idx = int(idx)
            if idx in picked:
                continue
            if all(min(abs(idx - p), size - abs(idx - p)) >= min_sep for p in picked):
                picked.append(idx)
                if len(picked) == k:
                    return np.array(picked)
    raise ValueError(f"could not find {k} peaks separated by {min_sep} bins")


def fft_doppler(y, cfg: EstimatorConfig) -> DopplerEstimate:
    """Zero-padded FFT peak search on a P-point grid."""
    samples, params = _samples(y)
    n = samples.shape[0]
    P = cfg.fft_size
    if P < n or P & (P - 1):
        raise ValueError(f"fft_size must be a power of two >= {n}, got {P}")
    ops = OpCounter()
    spec = np.abs(np.fft.fft(samples, P))
    stages = int(round(math.log2(P)))
    # radix-2 butterflies; |.| costs real multiplies, so only the sqrt is charged
    ops.charge(mults=(P // 2) * stages, adds=P * stages, sqrts=P)
    ops.alloc(P)
    bins = _separated_peaks(spec, cfg.model_order)
    v = _grid_velocity(bins, P, params)
    (v,) = _order_velocities(v)
    return DopplerEstimate("fft", v, resolution(params), precision(params, P), ops=ops)


def music(y, cfg: EstimatorConfig) -> DopplerEstimate:
    """MUSIC pseudospectrum peaks on a uniform grid of ``cfg.search_grid`` velocities.

    The noise-subspace projection ``a^H E_n E_n^H a`` is evaluated as
    ``L - sum_k |a^H e_k|^2`` over the signal eigenvectors, with every
    ``a^H e_k`` across the grid obtained from one zero-padded FFT of ``e_k``.
    """
    samples, params = _samples(y)
    n = samples.shape[0]
    L = cfg.smoothing_for(n)
    K = cfg.model_order
    G = cfg.search_grid
    if G < max(64, L):
        raise ValueError(f"search_grid must be at least max(64, L={L}), got {G}")
    ops = OpCounter()
    _, vecs = _signal_subspace(samples, L, cfg, ops)
    es = numlin.slice_rows(vecs, 0, L, K, counter=ops)
    proj = np.abs(np.fft.fft(es, G, axis=0)) ** 2
    noise_part = L - proj.sum(axis=1)
    stages = math.ceil(math.log2(G))
    ops.charge(mults=K * (G // 2) * stages, adds=K * G * stages + K * G, divisions=G)
    ops.alloc(K, G)
    ops.alloc(G)
    floor = np.finfo(float).eps * L
    pseudo = 1.0 / np.maximum(noise_part, floor)
    bins = _separated_peaks(pseudo, K)
    v = _grid_velocity(bins, G, params)
    (v,) = _order_velocities(v)
    return DopplerEstimate("music", v, resolution(params), precision(params, G), ops=ops)


def estimate(y, cfg: EstimatorConfig) -> DopplerEstimate:
    """Dispatch to the estimator named by ``cfg.algorithm``."""
    if cfg.algorithm == "fft":
        return fft_doppler(y, cfg)
    if cfg.algorithm == "music":
        return music(y, cfg)
    return esprit(y, cfg)


def estimate_order(eigvals, eta: float = 0.01, max_order: int = 2) -> int:
    """Number of eigenvalues above ``eta * lambda_1``, capped at ``max_order``.

    Used to tell a lone mover from a mover sharing its cell (or from
    zero-Doppler clutter); not part of the estimators themselves.
    """
    vals = np.sort(np.asarray(eigvals, dtype=float))[::-1]
    if vals.size == 0 or vals[0] <= 0:
        return 0
    return int(min(np.sum(vals > eta * vals[0]), max_order))
