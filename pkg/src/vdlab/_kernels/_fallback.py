"""Pure numpy versions of the compiled kernels (same signatures and results)."""
import numpy as np


def volterra_recurrence(left, right, source):
    left = np.asarray(left, dtype=complex)
    right = np.asarray(right, dtype=complex)
    source = np.asarray(source, dtype=complex)
    n_pts = source.size
    rho = np.empty(n_pts, dtype=complex)
    if n_pts == 0:
        return rho
    w = left + right
    denom = 1.0 - right[0]
    rho[0] = source[0]
    for n in range(1, n_pts):
        # w[n-1:0:-1] pairs lag n-j with rho_j for j = 1..n-1
        acc = source[n] + left[n] * rho[0] + np.dot(w[n - 1:0:-1], rho[1:n])
        rho[n] = acc / denom
        if not (abs(rho[n].real) < 1e300 and abs(rho[n].imag) < 1e300):
            rho[n + 1:] = rho[n]
            break
    return rho


def echo_kernel_scan(t, taus, dlambda, dmu, gamma, cutoff):
    taus = np.asarray(taus, dtype=float)
    modes = np.array([m for m in range(-cutoff, cutoff + 1) if m != 0])
    k = modes[:, None]
    l = modes[None, :]
    base = 1.0 / (1.0 + np.abs(k - l).astype(float) ** gamma) * np.exp(-2 * np.pi * dmu * np.abs(l))
    values = np.empty(taus.size)
    ks = np.empty(taus.size, dtype=np.int64)
    ls = np.empty(taus.size, dtype=np.int64)
    for m, tau in enumerate(taus):
        arg = np.abs(k * (t - tau) + l * tau)
        val = np.exp(-2 * np.pi * dlambda * arg) * base
        # row-major argmax keeps the compiled loop's tie-breaking order
        idx = int(np.argmax(val))
        i, j = divmod(idx, modes.size)
        values[m] = (1.0 + tau) * val[i, j]
        ks[m] = modes[i]
        ls[m] = modes[j]
    return values, ks, ls
