"""Linear stability: the functional curlyL(k, xi), its band scan, sufficient
conditions (a)/(b), and dispersion roots of the mode equation.

Two transforms of the kernel are kept apart on purpose:

* ``curlyL(k, xi)`` uses |f0~| and the conjugate xi*, exactly as in the
  stability condition, and is evaluated by quadrature;
* ``laplace_kernel(k, xi) = int_0^inf K0(t, k) exp(2 pi |k| xi t) dt`` uses
  f0~ itself and governs the resolvent.  A root xi0 of
  ``laplace_kernel = 1`` is a mode rho^ ~ exp(-2 pi |k| xi0 t): Re xi0 > 0 is
  damped, Re xi0 < 0 grows.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.special import wofz

from .errors import DivergenceError, InvalidArgument
from .model import Interaction, VelocityProfile, potential_coeff, profile_fourier, profile_marginal

_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)
_GL16_X = 0.5 * (_GL16_X + 1.0)
_GL16_W = 0.5 * _GL16_W


# --------------------------------------------------------------------------
# curlyL by quadrature
# --------------------------------------------------------------------------


def _abs_transform_envelope(profile: VelocityProfile, k: int, t: np.ndarray) -> np.ndarray:
    """|f0~(k t)| k^2 t, the nonnegative part of the curlyL integrand."""
    return np.abs(profile_fourier(profile, k * t)) * k * k * t


def _truncation_time(profile: VelocityProfile, k: int, re_xi: float, tol: float) -> float:
    """Time past which exp(2 pi |k| Re xi t) |f0~(kt)| k^2 t stays below tol * 1e-2 of its peak."""
    if profile.kind == "tabulated":
        return profile.resolvable_band / abs(k)
    c = 2 * math.pi * abs(k) * re_xi
    a = 2 * math.pi**2 * profile.T * k * k

    # Gaussian envelope bound; cos factors of two_stream never exceed 1
    def env(t):
        return t * math.exp(c * t - a * t * t)

    t_peak = (c + math.sqrt(c * c + 8 * a)) / (4 * a)
    peak = env(t_peak)
    thresh = tol * 1e-2 * peak
    t = max(2 * t_peak, 1e-3)
    while env(t) > thresh:
        t *= 1.5
    return t


def _panel_nodes(profile: VelocityProfile, k: int, t_max: float, n_pan: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights on [0, t_max]; panel edges include the
    zeros of the two-stream cosine, where |f0~| has kinks."""
    edges = np.linspace(0.0, t_max, n_pan + 1)
    if profile.kind == "two_stream" and profile.v0 != 0:
        spacing = 1.0 / (2 * abs(profile.v0 * k))
        kinks = np.arange(0.5 * spacing, t_max, spacing)
        edges = np.unique(np.concatenate([edges, kinks]))
    h = np.diff(edges)
    nodes = (edges[:-1, None] + h[:, None] * _GL16_X[None, :]).reshape(-1)
    weights = (h[:, None] * _GL16_W[None, :]).reshape(-1)
    return nodes, weights


def curlyL(k: int, xi, profile: VelocityProfile, interaction: Interaction, tol: float = 1e-10,
           return_error: bool = False):
    """curlyL(k, xi) = -4 pi^2 W^(k) int_0^inf exp(2 pi |k| conj(xi) t) |f0~(k t)| |k|^2 t dt.

    ``xi`` may be an array.  Composite 16-point Gauss-Legendre on a truncated
    interval; the panel count doubles until two successive estimates agree to
    ``tol`` relative to the largest value in the batch.
    """
    if k == 0:
        raise InvalidArgument("curlyL undefined for k = 0")
    xi_arr = np.asarray(xi, dtype=complex)
    if np.any(xi_arr.real < 0):
        raise InvalidArgument("curlyL requires Re xi >= 0")
    if np.any(xi_arr.real >= profile.lambda0):
        raise DivergenceError(f"Re xi must stay below the analyticity width lambda0={profile.lambda0}")
    w = potential_coeff(interaction, k)
    if w == 0.0:
        out = np.zeros(xi_arr.shape, dtype=complex)
        return (out if out.ndim else complex(out), 0.0) if return_error else (out if out.ndim else complex(out))
    flat = xi_arr.reshape(-1)
    t_max = _truncation_time(profile, k, float(flat.real.max()), tol)
    extra = 2 * math.pi * abs(k * profile.v0) if profile.kind == "two_stream" else 0.0
    sigma = 1.0 / (2 * math.pi * abs(k) * math.sqrt(profile.T)) if profile.kind != "tabulated" else 1.0

    def estimate(block: np.ndarray, n_pan: int) -> np.ndarray:
        nodes, weights = _panel_nodes(profile, k, t_max, n_pan)
        weights = weights * _abs_transform_envelope(profile, k, nodes)
        return np.exp(np.outer(2 * math.pi * abs(k) * np.conj(block), nodes)) @ weights

    # blocks of similar |Im xi| share a panel count: one panel per half oscillation
    order = np.argsort(np.abs(flat.imag), kind="stable")
    result = np.empty(flat.shape, dtype=complex)
    err = 0.0
    for start in range(0, flat.size, 256):
        idx = order[start:start + 256]
        block = flat[idx]
        omega = 2 * math.pi * abs(k) * float(np.abs(block.imag).max()) + extra
        panels = int(max(8, math.ceil(t_max * (omega / math.pi + 4.0 / sigma))))
        prev = estimate(block, panels)
        for _ in range(4):
            panels *= 2
            cur = estimate(block, panels)
            scale = max(float(np.max(np.abs(cur))), 1e-300)
            blk_err = float(np.max(np.abs(cur - prev))) / scale
            prev = cur
            if blk_err < tol:
                break
        err = max(err, blk_err)
        result[idx] = prev
    prev = -4 * math.pi**2 * w * result
    out = prev.reshape(xi_arr.shape)
    out = out if out.ndim else complex(out)
    return (out, err) if return_error else out


def curlyL_grid(k: int, re: np.ndarray, im: np.ndarray, profile: VelocityProfile, interaction: Interaction,
                tol: float = 1e-10) -> np.ndarray:
    """curlyL on the tensor grid xi = re[i] + 1j * im[j], shape (len(re), len(im)).

    Same quadrature rule as :func:`curlyL`; the exponential factorizes into a
    real-part and an imaginary-part matrix, so the grid costs one matrix product.
    """
    re = np.asarray(re, dtype=float)
    im = np.asarray(im, dtype=float)
    if k == 0:
        raise InvalidArgument("curlyL undefined for k = 0")
    if np.any(re < 0):
        raise InvalidArgument("curlyL requires Re xi >= 0")
    if np.any(re >= profile.lambda0):
        raise DivergenceError(f"Re xi must stay below the analyticity width lambda0={profile.lambda0}")
    w = potential_coeff(interaction, k)
    if w == 0.0:
        return np.zeros((re.size, im.size), dtype=complex)
    t_max = _truncation_time(profile, k, float(re.max()), tol)
    extra = 2 * math.pi * abs(k * profile.v0) if profile.kind == "two_stream" else 0.0
    sigma = 1.0 / (2 * math.pi * abs(k) * math.sqrt(profile.T)) if profile.kind != "tabulated" else 1.0
    c = 2 * math.pi * abs(k)

    def estimate(n_pan: int) -> np.ndarray:
        nodes, weights = _panel_nodes(profile, k, t_max, n_pan)
        weights = weights * _abs_transform_envelope(profile, k, nodes)
        A = np.exp(c * np.outer(re, nodes)) * weights[None, :]
        # conj(xi) carries -i Im xi
        B = np.exp(-1j * c * np.outer(nodes, im))
        return A @ B

    omega = c * float(np.abs(im).max(initial=0.0)) + extra
    panels = int(max(8, math.ceil(t_max * (omega / math.pi + 4.0 / sigma))))
    prev = estimate(panels)
    for _ in range(4):
        panels *= 2
        cur = estimate(panels)
        err = float(np.max(np.abs(cur - prev))) / max(float(np.max(np.abs(cur))), 1e-300)
        prev = cur
        if err < tol:
            break
    return -4 * math.pi**2 * w * prev


# --------------------------------------------------------------------------
# Kernel transform with f0~ itself (closed forms for Gaussian kinds)
# --------------------------------------------------------------------------


def _gauss_moments(a: float, s):
    """(int_0^inf t e^{-a t^2 + s t} dt, int_0^inf t^2 e^{-a t^2 + s t} dt)."""
    s = np.asarray(s, dtype=complex)
    sa = math.sqrt(a)
    with np.errstate(all="ignore"):
        J = 0.5 * math.sqrt(math.pi / a) * wofz(-1j * s / (2 * sa))
        I1 = 1.0 / (2 * a) + s / (2 * a) * J
        I2 = J / (2 * a) + s / (2 * a) * I1
    return I1, I2


def _laplace_closed(profile: VelocityProfile, k: int, xi, w: float):
    a = 2 * math.pi**2 * profile.T * k * k
    s = 2 * math.pi * abs(k) * np.asarray(xi, dtype=complex) - 2j * math.pi * k * profile.shift
    if profile.kind == "maxwellian":
        I1, I2 = _gauss_moments(a, s)
    else:
        b = 2 * math.pi * profile.v0 * k
        p1, p2 = _gauss_moments(a, s + 1j * b)
        m1, m2 = _gauss_moments(a, s - 1j * b)
        with np.errstate(all="ignore"):
            I1, I2 = 0.5 * (p1 + m1), 0.5 * (p2 + m2)
    pref = -4 * math.pi**2 * w * k * k
    with np.errstate(all="ignore"):
        return pref * I1, pref * I2 * 2 * math.pi * abs(k)


def laplace_kernel(k: int, xi, profile: VelocityProfile, interaction: Interaction, derivative: bool = False):
    """int_0^inf K0(t, k) exp(2 pi |k| xi t) dt, optionally with d/dxi."""
    if k == 0:
        raise InvalidArgument("laplace_kernel undefined for k = 0")
    w = potential_coeff(interaction, k)
    xi_arr = np.asarray(xi, dtype=complex)
    if w == 0.0:
        z = np.zeros(xi_arr.shape, dtype=complex)
        val, der = z, z
    elif profile.kind == "tabulated":
        val, der = _laplace_tabulated(profile, k, xi_arr, w)
    else:
        val, der = _laplace_closed(profile, k, xi_arr, w)
    if xi_arr.ndim == 0:
        val, der = complex(val), complex(der)
    return (val, der) if derivative else val


def _laplace_tabulated(profile: VelocityProfile, k: int, xi: np.ndarray, w: float):
    t_max = profile.resolvable_band / abs(k)
    n = 4096
    t = np.linspace(0, t_max, n + 1)
    g = -4 * math.pi**2 * w * np.asarray(profile_fourier(profile, k * t), dtype=complex) * k * k * t
    wts = np.full(t.shape, t[1] - t[0])
    wts[0] = wts[-1] = 0.5 * (t[1] - t[0])
    e = np.exp(2 * math.pi * abs(k) * np.outer(xi.reshape(-1), t))
    val = (e @ (wts * g)).reshape(xi.shape)
    der = (e @ (wts * g * 2 * math.pi * abs(k) * t)).reshape(xi.shape)
    return val, der


# --------------------------------------------------------------------------
# Dispersion roots
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DispersionRoot:
    k: int
    xi: complex
    residual: float

    @property
    def decay_rate(self) -> float:
        """Signed damping rate 2 pi |k| Re xi (negative for a growing mode)."""
        return 2 * math.pi * abs(self.k) * self.xi.real

    @property
    def growth_rate(self) -> float:
        return -self.decay_rate

    @property
    def frequency(self) -> float:
        return 2 * math.pi * abs(self.k) * abs(self.xi.imag)


def damped_newton(func, x0: complex, tol: float = 1e-13, max_iter: int = 100):
    """Damped Newton iteration for an analytic ``func(x) -> (value, derivative)``.

    Returns (x, |value|, converged).  Steps are halved until |value| decreases.
    """
    x = complex(x0)
    fx, dfx = func(x)
    for _ in range(max_iter):
        if not (np.isfinite(fx) and np.isfinite(dfx)) or dfx == 0:
            return x, math.inf, False
        step = fx / dfx
        lam = 1.0
        while True:
            xn = x - lam * step
            fn, dfn = func(xn)
            if np.isfinite(fn) and abs(fn) < abs(fx):
                break
            lam *= 0.5
            if lam < 1e-6:
                return x, abs(fx), abs(fx) < 1e-8
        x, fx, dfx = xn, fn, dfn
        if abs(fx) < tol or abs(lam * step) < 1e-15 * max(1.0, abs(x)):
            break
    return x, abs(fx), abs(fx) < 1e-8


def dispersion_roots(
    k: int,
    profile: VelocityProfile,
    interaction: Interaction,
    search_box: tuple[float, float, float, float] = (-3.0, 3.0, -4.0, 4.0),
    n_seeds: tuple[int, int] = (13, 17),
    dedup: float = 1e-6,
) -> list[DispersionRoot]:
    """Roots of laplace_kernel(k, xi) = 1 reached by damped Newton from a seed grid.

    The box is (Re min, Re max, Im min, Im max) in xi.  Roots are returned
    least damped first; an empty list means no seed converged.
    """
    if potential_coeff(interaction, k) == 0.0:
        return []
    re = np.linspace(search_box[0], search_box[1], n_seeds[0])
    im = np.linspace(search_box[2], search_box[3], n_seeds[1])

    def func(x):
        v, d = laplace_kernel(k, x, profile, interaction, derivative=True)
        return v - 1.0, d

    found: list[DispersionRoot] = []
    pad_re = 0.1 * (search_box[1] - search_box[0])
    pad_im = 0.1 * (search_box[3] - search_box[2])
    for r in re:
        for i in im:
            x, res, ok = damped_newton(func, complex(r, i))
            if not ok or res >= 1e-8:
                continue
            if not (search_box[0] - pad_re <= x.real <= search_box[1] + pad_re
                    and search_box[2] - pad_im <= x.imag <= search_box[3] + pad_im):
                continue
            if any(abs(x - q.xi) < dedup for q in found):
                continue
            found.append(DispersionRoot(k=k, xi=x, residual=res))
    found.sort(key=lambda r: (r.xi.real, abs(r.xi.imag), r.xi.imag))
    return found


# --------------------------------------------------------------------------
# Sufficient conditions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionA:
    holds: bool
    worst_k: int
    worst_z: float
    worst_value: float
    negative_modes: tuple[int, ...] = ()

    def __bool__(self) -> bool:
        return self.holds


def condition_a(profile: VelocityProfile, interaction: Interaction, z_grid=None, k_max: int = 8,
                tol: float = 1e-12) -> ConditionA:
    """W^(k) >= 0 for 1 <= |k| <= k_max and z phi_k'(z) <= tol on the z-grid."""
    if z_grid is None:
        R = profile.support_radius(1e-14)
        z_grid = np.linspace(-R, R, 4001)
    z = np.asarray(z_grid, dtype=float)
    h = float(np.min(np.diff(z))) * 1e-2 if z.size > 1 else 1e-4
    ks = [k for k in range(-k_max, k_max + 1) if k != 0]
    negative = tuple(k for k in ks if potential_coeff(interaction, k) < 0)
    worst = (-math.inf, 0, 0.0)
    for k in ks:
        dphi = (profile_marginal(profile, k, z + h) - profile_marginal(profile, k, z - h)) / (2 * h)
        val = z * dphi
        i = int(np.argmax(val))
        if val[i] > worst[0]:
            worst = (float(val[i]), k, float(z[i]))
    holds = not negative and worst[0] <= tol
    return ConditionA(holds=holds, worst_k=worst[1], worst_z=worst[2], worst_value=worst[0], negative_modes=negative)


def condition_b(profile: VelocityProfile, interaction: Interaction, k_max: int | None = None) -> float:
    """Margin 4 pi^2 max_k |W^(k)| sup_sigma int_0^inf |f0~(r sigma)| r dr (passes iff < 1)."""
    wmax = interaction.max_abs(k_max)
    if wmax == 0.0:
        return 0.0
    sup = 0.0
    for sigma in (1.0, -1.0):
        if profile.kind == "tabulated":
            band = profile.resolvable_band
            r = np.linspace(0, band, 8193)
            g = np.abs(np.asarray(profile_fourier(profile, sigma * r))) * r
            if g[-1] > 1e-8 * g.max():
                return math.inf
            val = float(np.sum(0.5 * (g[1:] + g[:-1])) * (r[1] - r[0]))
        elif profile.kind == "maxwellian":
            val = 1.0 / (4 * math.pi**2 * profile.T)
        else:
            def integrand(rr, s=sigma):
                return abs(profile_fourier(profile, s * rr)) * rr

            r_end = 12.0 / (2 * math.pi * math.sqrt(profile.T))
            breaks = [(m + 0.5) / (2 * abs(profile.v0)) for m in range(int(2 * abs(profile.v0) * r_end) + 1)] if profile.v0 else None
            val, _ = quad(integrand, 0.0, r_end, points=breaks, limit=500, epsabs=1e-15, epsrel=1e-12)
        sup = max(sup, val)
    return 4 * math.pi**2 * wmax * sup


# --------------------------------------------------------------------------
# Band scan
# --------------------------------------------------------------------------


@dataclass
class ModeScan:
    k: int
    min_value: float
    xi: complex
    W_k: float
    roots: list[DispersionRoot] = field(default_factory=list)


@dataclass
class StabilityReport:
    lambda_band: float
    kappa_required: float
    modes: list[ModeScan]
    condition_a: ConditionA
    condition_b_margin: float

    @property
    def kappa_est(self) -> float:
        return min(m.min_value for m in self.modes)

    @property
    def argmin(self) -> tuple[int, complex]:
        m = min(self.modes, key=lambda m: m.min_value)
        return m.k, m.xi

    @property
    def passed(self) -> bool:
        return self.kappa_est >= self.kappa_required

    @property
    def condition_b_holds(self) -> bool:
        return self.condition_b_margin < 1.0

    @property
    def roots(self) -> list[DispersionRoot]:
        return [r for m in self.modes for r in m.roots]

    @property
    def unstable_modes(self) -> list[int]:
        return sorted({r.k for r in self.roots if r.xi.real < 0})

    def summary(self) -> str:
        k, xi = self.argmin
        return (f"condL {'PASS' if self.passed else 'FAIL'} kappa_est={self.kappa_est:.6g} "
                f"(required {self.kappa_required:g}) at k={k} xi={xi.real:.6g}{xi.imag:+.6g}j; "
                f"condition (a) {'holds' if self.condition_a.holds else 'fails'}; "
                f"condition (b) margin={self.condition_b_margin:.6g}; "
                f"unstable modes={self.unstable_modes}")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "W_k", "min_abs_L_minus_1", "re_xi", "im_xi", "n_roots",
                        "lead_root_re_xi", "lead_root_im_xi", "lead_decay_rate", "lead_frequency"])
            for m in self.modes:
                lead = m.roots[0] if m.roots else None
                w.writerow([m.k, f"{m.W_k:.12e}", f"{m.min_value:.12e}", f"{m.xi.real:.12e}", f"{m.xi.imag:.12e}",
                            len(m.roots),
                            f"{lead.xi.real:.12e}" if lead else "", f"{lead.xi.imag:.12e}" if lead else "",
                            f"{lead.decay_rate:.12e}" if lead else "", f"{lead.frequency:.12e}" if lead else ""])


def im_window(profile: VelocityProfile, k_max: int) -> float:
    T = profile.T if profile.kind != "tabulated" else 1.0
    return 2.0 * (1.0 + math.sqrt(T)) * k_max


def _scan_mode(k, profile, interaction, lambda_band, n_re, n_im, window, tol, resolution):
    re = np.linspace(0.0, lambda_band, n_re, endpoint=False)
    im = np.linspace(-window, window, n_im)
    R, I = np.meshgrid(re, im, indexing="ij")
    xi = R + 1j * I

    def dist(z):
        return np.abs(curlyL(k, z, profile, interaction, tol=tol) - 1.0)

    vals = np.abs(curlyL_grid(k, re, im, profile, interaction, tol=tol) - 1.0)
    i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
    best = complex(xi[i, j])
    best_val = float(vals[i, j])
    step_re = re[1] - re[0] if n_re > 1 else lambda_band
    step_im = im[1] - im[0]
    hi_re = np.nextafter(lambda_band, 0.0)
    # compass search with halving steps down to the target resolution
    while step_re > resolution or step_im > resolution:
        cands = []
        for dr, di in ((step_re, 0), (-step_re, 0), (0, step_im), (0, -step_im)):
            z = complex(min(max(best.real + dr, 0.0), hi_re), min(max(best.imag + di, -window), window))
            cands.append(z)
        cv = dist(np.array(cands))
        m = int(np.argmin(cv))
        if cv[m] < best_val:
            best, best_val = cands[m], float(cv[m])
        else:
            step_re *= 0.5
            step_im *= 0.5
    return best_val, best


def condL_scan(
    profile: VelocityProfile,
    interaction: Interaction,
    lambda_band: float,
    k_max: int = 8,
    n_re: int = 64,
    n_im: int = 129,
    kappa_required: float = 0.0,
    tol: float = 1e-9,
    resolution: float = 1e-4,
    with_roots: bool = True,
    threads: int | None = None,
) -> StabilityReport:
    """Scan |curlyL(k, xi) - 1| over 0 <= Re xi < lambda_band, |Im xi| <= 2 (1 + sqrt T) k_max.

    Each mode's grid minimum is refined by step halving to ``resolution``.
    Modes run in a thread pool; results are reduced in mode order.
    """
    if not 0 < lambda_band < profile.lambda0:
        raise InvalidArgument("lambda_band must lie in (0, lambda0)")
    window = im_window(profile, k_max)
    ks = list(range(1, k_max + 1))

    def work(k):
        wk = float(potential_coeff(interaction, k))
        if wk == 0.0:
            return ModeScan(k=k, min_value=1.0, xi=0j, W_k=0.0)
        val, xi = _scan_mode(k, profile, interaction, lambda_band, n_re, n_im, window, tol, resolution)
        roots = []
        if with_roots and profile.kind != "tabulated":
            roots = dispersion_roots(k, profile, interaction,
                                     search_box=(-3.0, max(3.0, 2 * lambda_band), -window / k, window / k))
        return ModeScan(k=k, min_value=val, xi=xi, W_k=wk, roots=roots)

    if threads == 1:
        modes = [work(k) for k in ks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            modes = list(pool.map(work, ks))
    return StabilityReport(
        lambda_band=lambda_band,
        kappa_required=kappa_required,
        modes=modes,
        condition_a=condition_a(profile, interaction, k_max=k_max),
        condition_b_margin=condition_b(profile, interaction),
    )
