"""Compiled inner loops for the small dense complex kernels in :mod:`numlin`.

Every kernel returns the number of complex multiplications it performed so the
Python wrappers can charge an :class:`~doppler_isac.numlin.OpCounter` with
exact figures. A real-by-complex product is charged as one complex multiply.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _reflector(x):
    """Householder vector for ``x``: returns (v, tau, beta) with H x = beta e1."""
    m = x.shape[0]
    v = x.copy()
    tail = 0.0
    for i in range(1, m):
        tail += x[i].real * x[i].real + x[i].imag * x[i].imag
    alpha = x[0]
    if tail == 0.0:
        return v, 0.0, alpha
    norm = np.sqrt(abs(alpha) ** 2 + tail)
    if alpha == 0:
        phase = 1.0 + 0.0j
    else:
        phase = alpha / abs(alpha)
    beta = -phase * norm
    v[0] = alpha - beta
    vnorm2 = tail + abs(v[0]) ** 2
    return v, 2.0 / vnorm2, beta


@njit(cache=True, nogil=True)
def pivoted_qr(a):
    n = a.shape[0]
    r = a.copy()
    q = np.eye(n, dtype=np.complex128)
    perm = np.arange(n)
    mults = 0
    for k in range(n):
        best = -1.0
        piv = k
        for j in range(k, n):
            s = 0.0
            for i in range(k, n):
                s += r[i, j].real * r[i, j].real + r[i, j].imag * r[i, j].imag
            mults += n - k
            if s > best:
                best = s
                piv = j
        if piv != k:
            for i in range(n):
                tmp = r[i, k]
                r[i, k] = r[i, piv]
                r[i, piv] = tmp
            tmpi = perm[k]
            perm[k] = perm[piv]
            perm[piv] = tmpi
        v, tau, beta = _reflector(r[k:, k])
        m = n - k
        if tau != 0.0:
            # r[k:, k:] <- H r[k:, k:]
            for j in range(k, n):
                dot = 0.0j
                for i in range(m):
                    dot += np.conj(v[i]) * r[k + i, j]
                dot *= tau
                for i in range(m):
                    r[k + i, j] -= v[i] * dot
            # q[:, k:] <- q[:, k:] H
            for i in range(n):
                dot = 0.0j
                for t in range(m):
                    dot += q[i, k + t] * v[t]
                dot *= tau
                for t in range(m):
                    q[i, k + t] -= dot * np.conj(v[t])
            mults += 4 * m * (n - k) + 4 * n * m
            for i in range(k + 1, n):
                r[i, k] = 0.0
            r[k, k] = beta
        d = r[k, k]
        if d != 0 and (d.imag != 0.0 or d.real < 0.0):
            ph = d / abs(d)
            for j in range(k, n):
                r[k, j] *= np.conj(ph)
            for i in range(n):
                q[i, k] *= ph
            mults += (n - k) + n
            r[k, k] = abs(d)
    return q, r, perm, mults


@njit(cache=True, nogil=True)
def tridiagonalize(a):
    """Unitary reduction of a Hermitian matrix to real symmetric tridiagonal form.

    Returns (d, e, w, mults) with A = W T W^H, T = tridiag(e, d, e).
    """
    n = a.shape[0]
    a = a.copy()
    w = np.eye(n, dtype=np.complex128)
    mults = 0
    for k in range(n - 2):
        m = n - k - 1
        v, tau, beta = _reflector(a[k + 1:, k])
        if tau == 0.0:
            continue
        # p = tau * A22 v
        p = np.zeros(m, dtype=np.complex128)
        for i in range(m):
            s = 0.0j
            for j in range(m):
                s += a[k + 1 + i, k + 1 + j] * v[j]
            p[i] = tau * s
        vhp = 0.0j
        for i in range(m):
            vhp += np.conj(v[i]) * p[i]
        kk = 0.5 * tau * vhp
        for i in range(m):
            p[i] -= kk * v[i]
        # A22 <- A22 - v p^H - p v^H
        for i in range(m):
            for j in range(m):
                a[k + 1 + i, k + 1 + j] -= v[i] * np.conj(p[j]) + p[i] * np.conj(v[j])
        a[k + 1, k] = beta
        a[k, k + 1] = np.conj(beta)
        for i in range(k + 2, n):
            a[i, k] = 0.0
            a[k, i] = 0.0
        # W[:, k+1:] <- W[:, k+1:] H
        for i in range(n):
            s = 0.0j
            for t in range(m):
                s += w[i, k + 1 + t] * v[t]
            s *= tau
            for t in range(m):
                w[i, k + 1 + t] -= s * np.conj(v[t])
        mults += m * m + 3 * m + 2 * m * m + 2 * n * m
    d = np.empty(n)
    e = np.zeros(max(n - 1, 0))
    for i in range(n):
        d[i] = a[i, i].real
    # diagonal phase similarity makes the off-diagonal real and non-negative
    ph = 1.0 + 0.0j
    for i in range(n - 1):
        off = a[i + 1, i]
        mag = abs(off)
        e[i] = mag
        if mag != 0.0:
            ph = ph * off / mag
        if ph != 1.0:
            for r in range(n):
                w[r, i + 1] *= ph
            mults += n + 1
    return d, e, w, mults


@njit(cache=True, nogil=True)
def tridiagonal_qr(d, e, w, max_iters, abs_floor):
    """Implicit symmetric QR with Wilkinson shifts, rotations applied to ``w``.

    Returns (d, w, iterations, converged, mults); eigenvalues land in ``d``.
    """
    n = d.shape[0]
    d = d.copy()
    e = e.copy()
    w = w.copy()
    eps = 2.220446049250313e-16
    iters = 0
    mults = 0
    h = n - 1
    while h > 0:
        if abs(e[h - 1]) <= eps * (abs(d[h - 1]) + abs(d[h])) or abs(e[h - 1]) <= abs_floor:
            e[h - 1] = 0.0
            h -= 1
            continue
        lo = h - 1
        while lo > 0:
            if abs(e[lo - 1]) <= eps * (abs(d[lo - 1]) + abs(d[lo])) or abs(e[lo - 1]) <= abs_floor:
                e[lo - 1] = 0.0
                break
            lo -= 1
        iters += 1
        if iters > max_iters:
            return d, w, iters, False, mults
        # Wilkinson shift from the trailing 2x2 block
        half = 0.5 * (d[h - 1] - d[h])
        eh = e[h - 1]
        sgn = 1.0 if half >= 0.0 else -1.0
        mu = d[h] - eh * eh / (half + sgn * np.hypot(half, eh))
        x = d[lo] - mu
        z = e[lo]
        for k in range(lo, h):
            r = np.hypot(x, z)
            c = x / r
            s = -z / r
            if k > lo:
                e[k - 1] = r
            dk = d[k]
            dk1 = d[k + 1]
            ek = e[k]
            d[k] = c * c * dk - 2.0 * c * s * ek + s * s * dk1
            d[k + 1] = s * s * dk + 2.0 * c * s * ek + c * c * dk1
            e[k] = c * s * (dk - dk1) + (c * c - s * s) * ek
            if k < h - 1:
                z = -s * e[k + 1]
                e[k + 1] = c * e[k + 1]
                x = e[k]
            for i in range(n):
                wk = w[i, k]
                wk1 = w[i, k + 1]
                w[i, k] = c * wk - s * wk1
                w[i, k + 1] = s * wk + c * wk1
            mults += 4 * n + 12
    return d, w, iters, True, mults


@njit(cache=True, nogil=True)
def jacobi_svd(a, tol, max_sweeps):
    """One-sided (Hestenes) Jacobi on the columns of a tall matrix.

    Returns (work, v, sweeps, converged, mults) where the columns of ``work``
    are mutually orthogonal and A = work V^H.
    """
    m, n = a.shape
    work = a.copy()
    v = np.eye(n, dtype=np.complex128)
    mults = 0
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0j
                for i in range(m):
                    wp = work[i, p]
                    wq = work[i, q]
                    alpha += wp.real * wp.real + wp.imag * wp.imag
                    beta += wq.real * wq.real + wq.imag * wq.imag
                    gamma += np.conj(wp) * wq
                mults += 3 * m
                g = abs(gamma)
                if g == 0.0 or g <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                ph = gamma / g
                zeta = (beta - alpha) / (2.0 * g)
                sgn = 1.0 if zeta >= 0.0 else -1.0
                t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    wp = work[i, p]
                    wq = work[i, q] * np.conj(ph)
                    work[i, p] = c * wp - s * wq
                    work[i, q] = s * wp + c * wq
                for i in range(n):
                    vp = v[i, p]
                    vq = v[i, q] * np.conj(ph)
                    v[i, p] = c * vp - s * vq
                    v[i, q] = s * vp + c * vq
                mults += 5 * m + 5 * n
        if not rotated:
            return work, v, sweeps, True, mults
    return work, v, sweeps, False, mults
