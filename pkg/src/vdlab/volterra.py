"""Linearized mode equation: a Volterra equation of the second kind per Fourier mode.

    rho^(t, k) - int_0^t K0(t - tau, k) rho^(tau, k) dtau = h~_i(k, k t)
    K0(t, k) = -4 pi^2 W^(k) f0~(k t) |k|^2 t
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._kernels import volterra_recurrence
from .errors import BlowupError, InsufficientData, InvalidArgument
from .model import Interaction, VelocityProfile, potential_coeff, profile_fourier

BLOWUP_THRESHOLD = 1e12

# 8-point Gauss-Legendre on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def kernel_K0(t, k: int, profile: VelocityProfile, interaction: Interaction):
    """K0(t, k) = -4 pi^2 W^(k) f0~(k t) |k|^2 t (complex only for asymmetric profiles)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidArgument("kernel_K0 requires t >= 0")
    w = potential_coeff(interaction, k)
    if w == 0.0:
        out = np.zeros(t.shape)
    else:
        out = -4 * np.pi**2 * w * profile_fourier(profile, k * t) * k * k * t
    return out if np.ndim(out) else out.item()


@dataclass
class ModeSeries:
    """Samples of rho^(t_i, k) on a uniform time grid starting at t = 0."""

    k: int
    t: np.ndarray
    rho: np.ndarray
    source: np.ndarray = field(repr=False)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.rho)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "re_rho", "im_rho", "abs_rho"])
            for ti, r in zip(self.t, self.rho):
                w.writerow([f"{ti:.12e}", f"{r.real:.12e}", f"{r.imag:.12e}", f"{abs(r):.12e}"])

    @classmethod
    def from_csv(cls, path: str | Path, k: int) -> "ModeSeries":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        rho = data[:, 1] + 1j * data[:, 2]
        return cls(k=k, t=data[:, 0], rho=rho, source=np.full(rho.shape, np.nan))


def _hat_weights(kernel: Callable, n: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Left/right half-hat moments of the kernel on each lag cell.

    right[m] = int_0^dt K(t_m + s) (1 - s/dt) ds
    left[m]  = int_0^dt K(t_{m-1} + s) (s/dt) ds      (left[0] = 0)
    """
    starts = np.arange(n) * dt
    nodes = starts[:, None] + dt * _GL_X[None, :]
    vals = np.asarray(kernel(nodes), dtype=complex).reshape(nodes.shape)
    right = np.zeros(n + 1, dtype=complex)
    left = np.zeros(n + 1, dtype=complex)
    right[:n] = dt * (vals * (_GL_W * (1.0 - _GL_X))[None, :]).sum(axis=1)
    left[1:] = dt * (vals * (_GL_W * _GL_X)[None, :]).sum(axis=1)
    return left, right


def solve_mode(
    k: int,
    source,
    horizon: float,
    dt: float,
    profile: VelocityProfile | None = None,
    interaction: Interaction | None = None,
    kernel: Callable | None = None,
) -> ModeSeries:
    """Product-trapezoidal solution of the mode equation on [0, horizon].

    ``source`` is a callable t -> h~_i(k, k t) (vectorized) or an array of
    samples on the output grid.  The solution is approximated by the piecewise
    linear interpolant of its nodal values and the kernel is integrated
    against each hat function exactly up to Gauss-Legendre accuracy.
    """
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    n = int(round(horizon / dt))
    if n < 1 or n > 10**7:
        raise InvalidArgument("horizon / dt must lie in [1, 1e7]")
    if kernel is None:
        if profile is None or interaction is None:
            raise InvalidArgument("need a kernel or a (profile, interaction) pair")
        kernel = lambda t: kernel_K0(t, k, profile, interaction)  # noqa: E731
    t = np.arange(n + 1) * dt
    if callable(source):
        src = np.asarray(source(t), dtype=complex) * np.ones(t.shape)
    else:
        src = np.asarray(source, dtype=complex)
        if src.shape != t.shape:
            raise InvalidArgument(f"source has {src.size} samples, expected {t.size}")
    left, right = _hat_weights(kernel, n, dt)
    rho = np.asarray(volterra_recurrence(left, right, np.ascontiguousarray(src)))
    series = ModeSeries(k=k, t=t, rho=rho, source=src)
    bad = ~(np.abs(rho) <= BLOWUP_THRESHOLD)
    if np.any(bad):
        i = int(np.argmax(bad))
        err = BlowupError(f"|rho^| exceeded {BLOWUP_THRESHOLD:g}: linear instability", t=float(t[i - 1]) if i else 0.0)
        err.series = series
        raise err
    return series


def cosine_source(profile: VelocityProfile, epsilon: float, k: int = 1, mode: int = 1):
    """Source t -> h~_i(k, k t) for h_i = epsilon cos(2 pi mode x) f0(v)."""
    if abs(k) != abs(mode):
        return lambda t: np.zeros(np.shape(t), dtype=complex)
    return lambda t: 0.5 * epsilon * np.asarray(profile_fourier(profile, k * np.asarray(t)), dtype=complex)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    frequency: float
    r2: float
    peak_times: np.ndarray
    peak_values: np.ndarray
    non_exponential: bool

    def __iter__(self):
        return iter((self.rate, self.frequency, self.r2))


R2_EXPONENTIAL = 0.99


def _refined_peaks(t: np.ndarray, a: np.ndarray):
    """Strict local maxima of ``a``, refined by a parabola through log-amplitudes."""
    inner = (a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:]) & (a[1:-1] > 0)
    idx = np.nonzero(inner)[0] + 1
    times, values = [], []
    dt = t[1] - t[0]
    for i in idx:
        if a[i - 1] <= 0 or a[i + 1] <= 0:
            times.append(t[i])
            values.append(math.log(a[i]))
            continue
        ym, y0, yp = math.log(a[i - 1]), math.log(a[i]), math.log(a[i + 1])
        denom = ym - 2 * y0 + yp
        shift = 0.5 * (ym - yp) / denom if denom < 0 else 0.0
        shift = max(-0.5, min(0.5, shift))
        times.append(t[i] + shift * dt)
        values.append(y0 - 0.25 * (ym - yp) * shift)
    return np.asarray(times), np.asarray(values)


def fit_decay(series: ModeSeries | tuple, window: tuple[float, float], min_peaks: int = 5) -> DecayFit:
    """Envelope decay rate from the local maxima of |rho^| inside ``window``.

    Returns the least-squares rate (minus the slope of log-peaks against time),
    the oscillation frequency pi / mean peak spacing, and R^2.  Fits with
    R^2 below 0.99 are flagged ``non_exponential``.
    """
    if isinstance(series, ModeSeries):
        t, a = series.t, series.amplitude
    else:
        t, a = (np.asarray(x) for x in series)
        a = np.abs(a)
    ta, tb = window
    sel = (t >= ta) & (t <= tb)
    t, a = t[sel], a[sel]
    if t.size < 3:
        raise InsufficientData("window holds fewer than three samples")
    pt, pv = _refined_peaks(t, a)
    if pt.size < min_peaks:
        raise InsufficientData(f"found {pt.size} peaks in {window}, need {min_peaks}")
    slope, intercept = np.polyfit(pt, pv, 1)
    resid = pv - (slope * pt + intercept)
    ss_tot = float(np.sum((pv - pv.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
    freq = math.pi / float(np.mean(np.diff(pt)))
    return DecayFit(rate=-float(slope), frequency=freq, r2=r2, peak_times=pt, peak_values=np.exp(pv),
                    non_exponential=r2 < R2_EXPONENTIAL)


def fit_growth(t, amplitude, window: tuple[float, float]) -> tuple[float, float]:
    """Exponential rate of a non-oscillating amplitude: (slope of log|a|, R^2)."""
    t = np.asarray(t, dtype=float)
    a = np.abs(np.asarray(amplitude))
    sel = (t >= window[0]) & (t <= window[1]) & (a > 0)
    if sel.sum() < 5:
        raise InsufficientData("need at least five positive samples in the window")
    y = np.log(a[sel])
    slope, intercept = np.polyfit(t[sel], y, 1)
    resid = y - (slope * t[sel] + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(slope), 1.0 - float(np.sum(resid**2)) / ss_tot
