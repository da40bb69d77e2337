"""Small dense complex linear algebra with operation accounting.

Matrices are plain 2-D ``complex128`` numpy arrays; nothing here mutates its
inputs. Every routine optionally charges an :class:`OpCounter` with the complex
multiplications, additions, divisions and square roots it performs and with
the words of every buffer it allocates. Memory is accounted as a static
footprint (each buffer counted once for the life of the invocation, no reuse),
which is what makes counters additive across composed operations.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from doppler_isac import _kernels

__all__ = [
    "OpCounter",
    "NumlinError",
    "NotHermitianError",
    "ConvergenceError",
    "SingularMatrixError",
    "QR",
    "as_matrix",
    "qr_factorize",
    "hermitian_eig",
    "svd_small",
    "inv_2x2",
    "eig_2x2",
    "matmul",
    "matmul_hermitian_transpose",
    "slice_rows",
    "EVD_MODES",
]

EVD_MODES = ("iterated", "single_qr")


class NumlinError(Exception):
    pass


class NotHermitianError(NumlinError, ValueError):
    pass


class ConvergenceError(NumlinError, RuntimeError):
    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class SingularMatrixError(NumlinError, ArithmeticError):
    pass


@dataclass
class OpCounter:
    """Tally of arithmetic and storage for one estimator invocation."""

    complex_mults: int = 0
    complex_adds: int = 0
    divisions: int = 0
    sqrt_ops: int = 0
    peak_memory_words: int = 0

    def charge(self, mults=0, adds=0, divisions=0, sqrts=0, words=0) -> None:
        if min(mults, adds, divisions, sqrts, words) < 0:
            raise ValueError("operation counts are non-negative")
        self.complex_mults += int(mults)
        self.complex_adds += int(adds)
        self.divisions += int(divisions)
        self.sqrt_ops += int(sqrts)
        self.peak_memory_words += int(words)

    def alloc(self, *shape: int) -> None:
        self.charge(words=int(np.prod(shape)))

    def __add__(self, other: OpCounter) -> OpCounter:
        return OpCounter(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _counter(counter: OpCounter | None) -> OpCounter:
    return counter if counter is not None else OpCounter()


def as_matrix(a, *, square: bool = False, name: str = "matrix") -> np.ndarray:
    """Validate and convert ``a`` to a 2-D complex128 array."""
    m = np.asarray(a)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if square and m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if m.size == 0:
        raise ValueError(f"{name} is empty")
    m = m.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def matmul(a, b, counter: OpCounter | None = None) -> np.ndarray:
    """Dense product ``a @ b`` charging rows*cols*inner complex multiplies."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply shapes {a.shape} and {b.shape}")
    rows, inner = a.shape
    cols = b.shape[1]
    c = _counter(counter)
    c.charge(mults=rows * cols * inner, adds=rows * cols * max(inner - 1, 0))
    c.alloc(rows, cols)
    return a @ b


def matmul_hermitian_transpose(a, b, counter: OpCounter | None = None) -> np.ndarray:
    """``a^H @ b`` without materialising ``a^H``."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"cannot form a^H b for shapes {a.shape} and {b.shape}")
    inner, rows = a.shape
    cols = b.shape[1]
    c = _counter(counter)
    c.charge(mults=rows * cols * inner, adds=rows * cols * max(inner - 1, 0))
    c.alloc(rows, cols)
    return a.conj().T @ b


def slice_rows(a, start: int, stop: int, cols: int | None = None,
               counter: OpCounter | None = None) -> np.ndarray:
    """Copy rows ``start:stop`` (and the first ``cols`` columns) into a new buffer."""
    a = np.asarray(a)
    if not 0 <= start < stop <= a.shape[0]:
        raise ValueError(f"row range {start}:{stop} outside {a.shape[0]} rows")
    cols = a.shape[1] if cols is None else cols
    if not 0 < cols <= a.shape[1]:
        raise ValueError(f"column count {cols} outside 1..{a.shape[1]}")
    out = np.array(a[start:stop, :cols], dtype=np.complex128)
    _counter(counter).alloc(*out.shape)
    return out


class QR(NamedTuple):
    """Factors of ``A[:, perm] = q @ r``."""

    q: np.ndarray
    r: np.ndarray
    perm: np.ndarray


def qr_factorize(a, *, pivoting: bool = True, counter: OpCounter | None = None) -> QR:
    """Householder QR of a square matrix with optional column pivoting.

    With pivoting the column of largest remaining norm is moved forward at
    every step, so ``|diag(r)|`` comes out (nearly) non-increasing. The
    diagonal of ``r`` is made real and non-negative.

    Args:
        a: Square matrix with finite entries.
        pivoting: Choose pivots by remaining column norm. When False ``perm``
            is the identity and ``q @ r`` reproduces ``a`` itself.
        counter: Charged with the factorisation cost.

    Returns:
        ``QR(q, r, perm)`` with ``a[:, perm] == q @ r``.
    """
    a = as_matrix(a, square=True, name="A")
    n = a.shape[0]
    c = _counter(counter)
    if pivoting:
        q, r, perm, mults = _kernels.pivoted_qr(a)
    else:
        q, r, perm, mults = _qr_no_pivot(a)
    c.charge(mults=mults, adds=mults, sqrts=n, divisions=n)
    c.alloc(n, n)
    c.alloc(n, n)
    c.alloc(n)
    return QR(q, np.triu(r), perm)


def _qr_no_pivot(a):
    # Same reflectors as the pivoted kernel, applied column by column in order.
    n = a.shape[0]
    q = np.eye(n, dtype=np.complex128)
    r = a.copy()
    mults = 0
    for k in range(n):
        v, tau, beta = _kernels._reflector(r[k:, k].copy())
        m = n - k
        if tau != 0.0:
            r[k:, k:] -= tau * np.outer(v, v.conj() @ r[k:, k:])
            q[:, k:] -= tau * np.outer(q[:, k:] @ v, v.conj())
            r[k + 1:, k] = 0.0
            r[k, k] = beta
            mults += 4 * m * (n - k) + 4 * n * m
        d = r[k, k]
        if d != 0 and (d.imag != 0.0 or d.real < 0.0):
            ph = d / abs(d)
            r[k, k:] *= np.conj(ph)
            q[:, k] *= ph
            r[k, k] = abs(d)
    return q, r, np.arange(n), mults


def _check_hermitian(a: np.ndarray, rtol: float = 1e-8) -> None:
    norm = np.linalg.norm(a)
    asym = np.linalg.norm(a - a.conj().T)
    if asym > rtol * max(norm, np.finfo(float).tiny):
        raise NotHermitianError(f"relative asymmetry {asym / norm:.3e} exceeds {rtol:g}")


def hermitian_eig(a, max_iters: int | None = None, tol: float = 1e-10, *,
                  mode: str = "iterated", counter: OpCounter | None = None):
    """Eigen-decomposition of a Hermitian matrix, eigenvalues descending.

    ``mode="iterated"`` reduces to real tridiagonal form with Householder
    reflections and runs implicit QR with Wilkinson shifts to convergence.
    ``mode="single_qr"`` performs one column-pivoted QR factorisation and
    reads the eigenvalues off ``|diag(R)|`` with ``Q`` as the eigenvectors;
    this is only exact for special matrices but mirrors a single-pass QR core.

    Args:
        a: Hermitian matrix (relative asymmetry at most 1e-8).
        max_iters: QR sweeps allowed in total; defaults to ``100 * L``.
        tol: Off-diagonal entries below ``tol * 1e-4 * ||A||_F`` are deflated,
            which bounds each eigenpair residual by ``tol * ||A||_F``.
        mode: ``"iterated"`` or ``"single_qr"``.
        counter: Charged with the cost.

    Returns:
        ``(eigvals, eigvecs)``: real eigenvalues in descending order and the
        matching unitary matrix of eigenvectors (columns).

    Raises:
        NotHermitianError: input asymmetric beyond tolerance.
        ConvergenceError: iteration budget exhausted.
    """
    if mode not in EVD_MODES:
        raise ValueError(f"unknown EVD mode {mode!r}; expected one of {EVD_MODES}")
    a = as_matrix(a, square=True, name="A")
    _check_hermitian(a)
    n = a.shape[0]
    c = _counter(counter)
    if mode == "single_qr":
        q, r, _ = qr_factorize(a, counter=c)
        vals = np.abs(np.diag(r))
        order = np.argsort(-vals, kind="stable")
        return vals[order], q[:, order]

    a = 0.5 * (a + a.conj().T)
    max_iters = 100 * n if max_iters is None else int(max_iters)
    anorm = float(np.linalg.norm(a))
    d, e, w, m1 = _kernels.tridiagonalize(a)
    vals, vecs, iters, ok, m2 = _kernels.tridiagonal_qr(d, e, w, max_iters, 1e-4 * tol * anorm)
    c.charge(mults=m1 + m2, adds=m1 + m2, divisions=n + iters, sqrts=n + iters)
    c.alloc(n, n)   # working copy of A
    c.alloc(n, n)   # eigenvector accumulator
    c.alloc(3 * n)  # diagonal, off-diagonal, eigenvalues
    if not ok:
        raise ConvergenceError("Hermitian QR iteration did not converge", iters)
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def svd_small(a, *, tol: float = 1e-15, max_sweeps: int = 60,
              counter: OpCounter | None = None):
    """Thin SVD ``A = U diag(s) V^H`` by one-sided Jacobi rotations.

    ``U`` is ``m x k`` and ``V`` is ``n x k`` with ``k = min(m, n)``; both have
    orthonormal columns (square inputs give unitary factors). Columns of ``U``
    belonging to numerically zero singular values are completed to an
    orthonormal set.
    """
    a = as_matrix(a, name="A")
    if max(a.shape) > 256:
        raise ValueError(f"svd_small handles dimensions up to 256, got {a.shape}")
    c = _counter(counter)
    m, n = a.shape
    if m < n:
        v, s, u = svd_small(a.conj().T, tol=tol, max_sweeps=max_sweeps, counter=c)
        return u, s, v

    work, v, sweeps, ok, mults = _kernels.jacobi_svd(a, tol, max_sweeps)
    c.alloc(m, n)  # rotated working copy
    c.alloc(n, n)  # V accumulator
    if not ok:
        raise ConvergenceError("one-sided Jacobi SVD did not converge", sweeps)
    s = np.linalg.norm(work, axis=0)
    c.charge(mults=mults + m * n, adds=mults + m * n, sqrts=n + sweeps * n * (n - 1) // 2)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    work = work[:, order]
    v = v[:, order]

    u = np.zeros((m, n), dtype=np.complex128)
    c.alloc(m, n)
    c.alloc(n)
    cutoff = max(m, n) * np.finfo(float).eps * (s[0] if n else 0.0)
    rank = int(np.sum(s > cutoff))
    if rank:
        u[:, :rank] = work[:, :rank] / s[:rank]
        c.charge(mults=m * rank, divisions=rank)
    u, extra = _complete_basis(u, rank)
    c.charge(mults=extra, adds=extra, sqrts=n - rank, divisions=n - rank)
    return u, s, v


def _complete_basis(u: np.ndarray, rank: int):
    """Fill columns ``rank:`` of ``u`` with an orthonormal completion."""
    m, n = u.shape
    mults = 0
    col = rank
    cand = 0
    while col < n:
        x = np.zeros(m, dtype=np.complex128)
        x[cand % m] = 1.0
        cand += 1
        for _ in range(2):
            coef = u[:, :col].conj().T @ x
            x = x - u[:, :col] @ coef
            mults += 2 * m * col
        nrm = np.linalg.norm(x)
        if nrm > 0.5:
            u[:, col] = x / nrm
            col += 1
        if cand > 2 * m + n:
            raise ConvergenceError("could not complete orthonormal basis", cand)
    return u, mults


def inv_2x2(m, *, counter: OpCounter | None = None) -> np.ndarray:
    """Inverse of a 2x2 matrix from its determinant and adjugate.

    Raises:
        SingularMatrixError: ``|det| <= 1e-12 * ||M||_F**2``.
    """
    m = as_matrix(m, square=True, name="M")
    if m.shape != (2, 2):
        raise ValueError(f"inv_2x2 needs a 2x2 matrix, got {m.shape}")
    (p, q), (r, s) = m
    det = p * s - q * r
    scale = np.sum(np.abs(m) ** 2)
    if abs(det) <= 1e-12 * scale:
        raise SingularMatrixError(f"|det| = {abs(det):.3e} at ||M||_F^2 = {scale:.3e}")
    c = _counter(counter)
    c.charge(mults=6, adds=1, divisions=1)
    c.alloc(2, 2)
    inv_det = 1.0 / det
    return np.array([[s, -q], [-r, p]]) * inv_det


def eig_2x2(m, *, counter: OpCounter | None = None):
    """Both eigenvalues of a 2x2 matrix from the characteristic quadratic.

    Returns ``(mu1, mu2)`` ordered by descending magnitude; magnitudes equal
    to 1e-12 relative are ordered by ascending phase in (-pi, pi].
    """
    m = as_matrix(m, square=True, name="M")
    if m.shape != (2, 2):
        raise ValueError(f"eig_2x2 needs a 2x2 matrix, got {m.shape}")
    (p, q), (r, s) = m
    half_tr = 0.5 * (p + s)
    det = p * s - q * r
    disc = np.sqrt(half_tr * half_tr - det + 0j)
    # pick the root that avoids cancellation, recover the other from det
    if abs(half_tr + disc) >= abs(half_tr - disc):
        mu1 = half_tr + disc
    else:
        mu1 = half_tr - disc
    mu2 = det / mu1 if mu1 != 0 else 2 * half_tr - mu1
    c = _counter(counter)
    c.charge(mults=4, adds=5, divisions=1, sqrts=1)
    c.alloc(2)
    return _order_pair(complex(mu1), complex(mu2))


def _order_pair(a: complex, b: complex):
    ma, mb = abs(a), abs(b)
    if abs(ma - mb) <= 1e-12 * max(ma, mb, 1e-300):
        return (a, b) if np.angle(a) <= np.angle(b) else (b, a)
    return (a, b) if ma > mb else (b, a)
