"""Hot numeric loops, each in a numba-compiled and a pure-numpy flavour.

The two flavours perform the same floating-point operations in the same order,
so for a given input they agree to the last bit in practice. Public dispatchers
pick one according to :data:`impact._accel.USE_NUMBA`.
"""
import math

import numpy as np

from . import _accel


@_accel.njit
def _off_norm_sq(a):
    n = a.shape[0]
    s = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                s += a[i, j] * a[i, j]
    return s


@_accel.njit
def _rotation(app, aqq, apq):
    # Golub & Van Loan sym.schur2: c, s with (J^T A J)[p, q] == 0
    tau = (aqq - app) / (2.0 * apq)
    if tau >= 0.0:
        t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
    else:
        t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
    c = 1.0 / math.sqrt(1.0 + t * t)
    return c, t * c


@_accel.njit
def _jacobi_loops(a, v, tol_sq, max_sweeps):
    n = a.shape[0]
    off = _off_norm_sq(a)
    sweeps = 0
    while off > tol_sq and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                c, s = _rotation(a[p, p], a[q, q], apq)
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        sweeps += 1
        off = _off_norm_sq(a)
    return sweeps, off


def _jacobi_numpy(a, v, tol_sq, max_sweeps):
    n = a.shape[0]
    mask = ~np.eye(n, dtype=bool)
    rotation = _rotation.py_func

    def off_sq():
        # same accumulation order as the compiled kernel
        s = 0.0
        for x in a[mask]:
            s += x * x
        return s

    off = off_sq()
    sweeps = 0
    while off > tol_sq and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                c, s = rotation(a[p, p], a[q, q], apq)
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
        off = off_sq()
    return sweeps, off


def jacobi_sweeps(a: np.ndarray, tol: float, max_sweeps: int, use_numba: bool | None = None):
    """Diagonalize symmetric ``a`` in place by cyclic Jacobi rotations.

    Returns ``(v, sweeps, off_norm)`` where ``v`` accumulates the rotations, so
    that on convergence ``a`` holds the eigenvalues on its diagonal and
    ``v`` the matching eigenvectors as columns. ``tol`` bounds the Frobenius
    norm of the off-diagonal part.
    """
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    n = a.shape[0]
    v = np.eye(n)
    kernel = _jacobi_loops if use_numba else _jacobi_numpy
    sweeps, off_sq = kernel(a, v, tol * tol, max_sweeps)
    return v, int(sweeps), math.sqrt(off_sq)


@_accel.njit
def _accumulate_upper(s_yy, s_y, s_g2, s_g2x, ys, gs, xnorm_sq):
    n_samples, d = ys.shape
    for t in range(n_samples):
        for i in range(d):
            yi = ys[t, i]
            s_y[i] += yi
            gi2 = gs[t, i] * gs[t, i]
            s_g2[i] += gi2
            s_g2x[i] += gi2 * xnorm_sq[t]
            for j in range(i, d):
                s_yy[i, j] += yi * ys[t, j]


def _accumulate_upper_numpy(s_yy, s_y, s_g2, s_g2x, ys, gs, xnorm_sq):
    iu = np.triu_indices(s_y.shape[0])
    for t in range(ys.shape[0]):
        y = ys[t]
        g2 = gs[t] * gs[t]
        s_y += y
        s_g2 += g2
        s_g2x += g2 * xnorm_sq[t]
        s_yy[iu] += y[iu[0]] * y[iu[1]]


def accumulate_moments(s_yy, s_y, s_g2, s_g2x, ys, gs, xnorm_sq, use_numba: bool | None = None):
    """Add a batch of samples to running sums, one sample at a time.

    Only the upper triangle of ``s_yy`` is touched. Sample order is preserved so
    a batch gives exactly the sums of the same samples fed one by one.
    """
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    kernel = _accumulate_upper if use_numba else _accumulate_upper_numpy
    kernel(s_yy, s_y, s_g2, s_g2x, ys, gs, xnorm_sq)
