"""Analytic norms on discrete phase-space data.

Three families are provided:

* ``algebra_norm_F``  sum_k |g^(k)| e^{2 pi w |k|} (1 + |k|)^gamma
* ``hybrid_norm_Z``   sum_k sum_n e^{2 pi mu |k|} (1 + |k|)^gamma lambda^n / n!
                      || (d_v + 2 i pi tau k)^n f^(k, .) ||_{L^p}
* ``norm_lambda_mu_beta``  sup_{k, eta} |f~(k, eta)| e^{2 pi lambda |eta|} e^{2 pi mu |k|}
                           + iint |f| e^{2 pi beta |v|} dv dx

The velocity derivative is spectral: a shell n multiplies the v-spectrum of
f^(k, .) by (2 i pi (eta + tau k))^n.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

from .errors import InvalidArgument
from .model import DistributionState

_LOG_MAX_WEIGHT = math.log(1e300)


@dataclass(frozen=True)
class NormIndices:
    """Indices of the gliding hybrid norm.

    ``lam`` is the velocity analyticity width, ``mu`` the spatial one, ``gamma``
    the algebraic weight, ``p`` the velocity Lebesgue exponent (1, 2 or inf),
    ``tau`` the gliding time shift, ``beta`` the velocity weight of the
    lambda-mu-beta norm and ``b`` an index shift carried for bookkeeping only.
    """

    lam: float = 0.0
    mu: float = 0.0
    gamma: float = 0.0
    p: float = math.inf
    tau: float = 0.0
    beta: float = 0.0
    b: float = 0.0

    def __post_init__(self) -> None:
        for name in ("lam", "mu", "gamma", "beta", "b"):
            value = getattr(self, name)
            if not value >= 0:
                raise InvalidArgument(f"norm index {name} must be nonnegative, got {value}")
        if not math.isfinite(self.tau):
            raise InvalidArgument("tau must be finite")
        if self.p not in (1, 2, math.inf):
            raise InvalidArgument(f"p must be 1, 2 or inf, got {self.p}")

    def with_(self, **changes) -> "NormIndices":
        return replace(self, **changes)


@dataclass(frozen=True)
class ZNorm:
    """Value of ``hybrid_norm_Z`` with its truncation report."""

    value: float
    converged: bool
    tail: float
    shells: int

    def __iter__(self):
        return iter((self.value, self.converged, self.tail))

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class LMBNorm:
    """Value of ``norm_lambda_mu_beta`` split into its two parts."""

    value: float
    sup_term: float
    integral_term: float
    argmax: tuple[int, float]
    truncation_dominated: bool

    def __float__(self) -> float:
        return self.value


def _lp(u: np.ndarray, p: float, dv: float) -> np.ndarray:
    """Row-wise L^p norm with grid quadrature weight dv."""
    a = np.abs(u)
    if p == math.inf:
        return a.max(axis=-1)
    if p == 1:
        return a.sum(axis=-1) * dv
    return np.sqrt((a * a).sum(axis=-1) * dv)


def mode_weights(k, w: float, gamma: float) -> np.ndarray:
    """e^{2 pi w |k|} (1 + |k|)^gamma."""
    ak = np.abs(np.asarray(k, dtype=float))
    return np.exp(2 * np.pi * w * ak) * (1.0 + ak) ** gamma


def algebra_norm_F(coeffs, w: float, gamma: float = 0.0, homogeneous: bool = False, modes=None) -> float:
    """Weighted l^1 norm of spatial Fourier coefficients.

    ``coeffs`` are in FFT order (``numpy.fft.fftfreq`` modes) unless ``modes``
    gives the wavenumber of each entry.
    """
    c = np.asarray(coeffs, dtype=complex).reshape(-1)
    if not np.all(np.isfinite(c)):
        raise InvalidArgument("coefficients must be finite")
    if modes is None:
        modes = np.fft.fftfreq(c.size, d=1.0 / c.size)
    modes = np.asarray(modes).reshape(-1)
    if modes.shape != c.shape:
        raise InvalidArgument("modes and coeffs differ in length")
    terms = np.abs(c) * mode_weights(modes, w, gamma)
    if homogeneous:
        terms = terms[modes != 0]
    return math.fsum(terms.tolist())


def hybrid_norm_Z(
    state: DistributionState,
    idx: NormIndices,
    n_max: int = 40,
    tail_tol: float = 1e-12,
    k_max: int | None = None,
) -> ZNorm:
    """Gliding hybrid analytic norm of a phase-space state.

    Shells n = 0..n_max are accumulated in increasing order with compensated
    summation.  The loop stops early once the terms have passed their peak and
    a shell falls below machine precision of the running total.  When the
    last evaluated shell still exceeds ``tail_tol * value`` the result is
    flagged as not converged (for instance when ``lam`` exceeds the discrete
    analyticity radius of the data).

    ``k_max`` restricts the sum to |k| <= k_max.  With a gliding shift the
    weight e^{2 pi lam tau |k|} amplifies roundoff in unpopulated high modes,
    so a truncated mode set is the meaningful object for large ``tau``.
    """
    g = state.grid
    fk = state.fhat_full  # (n_x, n_v), FFT order in k
    k = g.k_full.astype(float)
    if k_max is not None:
        keep = np.abs(k) <= k_max
        fk, k = fk[keep], k[keep]
    eta = g.eta
    wk = mode_weights(k, idx.mu, idx.gamma)
    spec = sfft.fft(fk, axis=1)
    symbol = 2j * np.pi * (eta[None, :] + idx.tau * k[:, None])
    peak_n = idx.lam * float(np.abs(symbol).max()) if idx.lam > 0 else 0.0
    partial: list[float] = []
    shell_values: list[float] = []
    term = spec
    for n in range(n_max + 1):
        if n > 0:
            if idx.lam == 0:
                break
            term = term * (symbol * (idx.lam / n))
        rows = _lp(sfft.ifft(term, axis=1), idx.p, g.dv)
        shell = math.fsum((wk * rows).tolist())
        shell_values.append(shell)
        partial.append(shell)
        total = math.fsum(partial)
        if n > peak_n and shell <= 1e-17 * total:
            break
    value = math.fsum(partial)
    tail = shell_values[-1] if shell_values else 0.0
    converged = value == 0.0 or tail <= tail_tol * value or len(shell_values) == 1
    return ZNorm(value=value, converged=bool(converged), tail=tail, shells=len(shell_values))


def norm_lambda_mu_beta(state: DistributionState, lam: float, mu: float, beta: float) -> LMBNorm:
    """sup_{k,eta} |f~| e^{2 pi lam |eta|} e^{2 pi mu |k|} + iint |f| e^{2 pi beta |v|}.

    The supremum runs over the discrete (k, eta) grid; attaining it on the
    outermost eta column flags the value as truncation-dominated.
    """
    if lam < 0 or mu < 0 or beta < 0:
        raise InvalidArgument("lam, mu and beta must be nonnegative")
    g = state.grid
    if 2 * math.pi * beta * g.V > _LOG_MAX_WEIGHT:
        raise InvalidArgument(f"beta={beta} makes the velocity weight overflow at |v|={g.V}")
    ft = np.abs(state.ftilde)
    eta = g.eta
    weight = np.exp(2 * np.pi * mu * np.abs(g.k_full))[:, None] * np.exp(2 * np.pi * lam * np.abs(eta))[None, :]
    weighted = ft * weight
    i, j = np.unravel_index(int(np.argmax(weighted)), weighted.shape)
    sup_term = float(weighted[i, j])
    edge = eta[j] == eta.max() or eta[j] == eta.min()
    vw = np.exp(2 * np.pi * beta * np.abs(g.v))
    integral = math.fsum((np.abs(state.values) * vw[None, :]).ravel().tolist()) * g.dx * g.dv
    return LMBNorm(
        value=sup_term + integral,
        sup_term=sup_term,
        integral_term=integral,
        argmax=(int(g.k_full[i]), float(eta[j])),
        truncation_dominated=bool(edge and sup_term > 0),
    )
