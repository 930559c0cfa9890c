# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: Volterra convolution recurrence and echo-kernel supremum."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, pow, M_PI

cnp.import_array()


def volterra_recurrence(const double complex[::1] left, const double complex[::1] right,
                        const double complex[::1] source):
    """rho_n (1 - R_0) = S_n + L_n rho_0 + sum_{j=1}^{n-1} (L_{n-j} + R_{n-j}) rho_j."""
    cdef Py_ssize_t n_pts = source.shape[0]
    cdef Py_ssize_t n, j
    cdef double complex acc, denom = 1.0 - right[0]
    out = np.empty(n_pts, dtype=np.complex128)
    cdef double complex[::1] rho = out
    cdef double complex[::1] w = np.empty(n_pts, dtype=np.complex128)
    for n in range(n_pts):
        w[n] = left[n] + right[n]
    if n_pts == 0:
        return out
    rho[0] = source[0]
    for n in range(1, n_pts):
        acc = source[n] + left[n] * rho[0]
        for j in range(1, n):
            acc = acc + w[n - j] * rho[j]
        rho[n] = acc / denom
        if not (fabs(rho[n].real) < 1e300 and fabs(rho[n].imag) < 1e300):
            for j in range(n + 1, n_pts):
                rho[j] = rho[n]
            break
    return out


def echo_kernel_scan(double t, const double[::1] taus, double dlambda, double dmu,
                     double gamma, int cutoff):
    """Supremum over 0 < |k|, |l| <= cutoff of the echo kernel, for each tau."""
    cdef Py_ssize_t m, n_tau = taus.shape[0]
    cdef int k, l, i, j, best_k, best_l, n_modes = 2 * cutoff
    cdef double tau, val, best, arg, b
    values = np.empty(n_tau)
    ks = np.empty(n_tau, dtype=np.int64)
    ls = np.empty(n_tau, dtype=np.int64)
    cdef double[::1] vv = values
    cdef long long[::1] kk = ks
    cdef long long[::1] ll = ls
    # tau-independent factor 1 / (1 + |k - l|^gamma) e^{-2 pi dmu |l|}, in the fallback's loop order
    cdef int[::1] modes = np.array([q for q in range(-cutoff, cutoff + 1) if q != 0], dtype=np.intc)
    cdef double[:, ::1] base = np.empty((n_modes, n_modes))
    for i in range(n_modes):
        for j in range(n_modes):
            base[i, j] = 1.0 / (1.0 + pow(fabs(<double>(modes[i] - modes[j])), gamma)) * exp(-2.0 * M_PI * dmu * fabs(<double>modes[j]))
    for m in range(n_tau):
        tau = taus[m]
        best = -1.0
        best_k = 0
        best_l = 0
        for i in range(n_modes):
            k = modes[i]
            for j in range(n_modes):
                b = base[i, j]
                if b <= best:  # the exponential factor is at most 1
                    continue
                l = modes[j]
                arg = fabs(k * (t - tau) + l * tau)
                val = exp(-2.0 * M_PI * dlambda * arg) * b
                if val > best:
                    best = val
                    best_k = k
                    best_l = l
        vv[m] = (1.0 + tau) * best
        kk[m] = best_k
        ll[m] = best_l
    return values, ks, ls
