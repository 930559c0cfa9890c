"""Nonlinear Vlasov-Poisson solver, diagnostics, characteristics and plasma echoes.

The evolution uses Strang splitting in which both substeps are exact phase
multiplications:

* x-advection   f^(k, v) -> f^(k, v) exp(-2 i pi k v dt)
* v-advection   per x column, f(x, .)~(eta) -> f(x, .)~(eta) exp(-2 i pi eta F(x) dt)

The density is invariant during the v-substep, so the frozen force is the
exact force for that substep.  The k = 0 and eta = 0 coefficients are never
touched, which conserves mass structurally.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft as sfft

from ._kernels import echo_kernel_scan
from .errors import InvalidArgument, NumericalFailure
from .model import (
    DistributionState,
    Interaction,
    PhaseSpaceGrid,
    VelocityProfile,
    equilibrium_state,
    force_modes,
    potential_coeff,
)

RECURRENCE_FRACTION = 0.5
DT_MAX = 0.125
SHIFT_FRACTION = 0.25
FILTER_STRENGTH = 36.0


# --------------------------------------------------------------------------
# Split propagator
# --------------------------------------------------------------------------


class SplitPropagator:
    """Phase tables and substeps of the splitting scheme for one (grid, dt)."""

    def __init__(self, grid: PhaseSpaceGrid, dt: float, filtered: bool = False):
        self.grid = grid
        self.dt = dt
        self.filtered = filtered
        k = grid.k.astype(float)
        self.half_phase = np.exp(-1j * np.pi * k[:, None] * grid.v[None, :] * dt)
        self.eta_r = grid.eta_r
        self.deriv = 2j * np.pi * self.eta_r
        nyq = grid.n_v // 2
        self.deriv[nyq] = 0.0
        self.filter = _eta_filter(grid.n_v) if filtered else None

    # x-substep ----------------------------------------------------------
    def x_advect(self, values: np.ndarray, fraction: float = 0.5) -> np.ndarray:
        fh = sfft.rfft(values, axis=0)
        if fraction == 0.5:
            fh *= self.half_phase
        else:
            fh *= self.half_phase ** (2 * fraction)
        return sfft.irfft(fh, n=self.grid.n_x, axis=0)

    # v-substep ----------------------------------------------------------
    def shift_phase(self, shift: np.ndarray) -> np.ndarray:
        """exp(-2 i pi eta s(x)) on the half spectrum; the Nyquist entry keeps its real part."""
        ph = np.exp(-2j * np.pi * shift[:, None] * self.eta_r[None, :])
        ph[:, -1] = ph[:, -1].real
        return ph

    def v_shift(self, values: np.ndarray, shift: np.ndarray) -> np.ndarray:
        """f(x, v) -> f(x, v - s(x)) with a spectral (periodic) shift."""
        sp = sfft.rfft(values, axis=1)
        sp *= self.shift_phase(shift)
        if self.filter is not None:
            sp *= self.filter
        return sfft.irfft(sp, n=self.grid.n_v, axis=1)

    def d_v(self, values: np.ndarray) -> np.ndarray:
        """Spectral velocity derivative."""
        sp = sfft.rfft(values, axis=1)
        sp *= self.deriv
        return sfft.irfft(sp, n=self.grid.n_v, axis=1)

    # force --------------------------------------------------------------
    def density_modes(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfft(values.sum(axis=1) * self.grid.dv) / self.grid.n_x

    def force(self, values: np.ndarray, interaction: Interaction) -> tuple[np.ndarray, np.ndarray]:
        """(F(x), F^(k)) from the density of ``values``."""
        Fk = force_modes(self.density_modes(values), interaction, self.grid.k)
        return sfft.irfft(Fk * self.grid.n_x, n=self.grid.n_x), Fk

    def stability_bound(self, f_max: float) -> float:
        """Largest admissible dt given max |F|."""
        if f_max <= 0:
            return DT_MAX
        return min(DT_MAX, SHIFT_FRACTION * self.grid.V / f_max)


def _eta_filter(n_v: int) -> np.ndarray:
    """exp(-a ((m - m0) / (M - m0))^8) on the top third of the half spectrum."""
    m = np.arange(n_v // 2 + 1, dtype=float)
    M = float(n_v // 2)
    m0 = 2.0 * M / 3.0
    x = np.clip((m - m0) / (M - m0), 0.0, None)
    return np.exp(-FILTER_STRENGTH * x**8)


@lru_cache(maxsize=16)
def propagator(grid: PhaseSpaceGrid, dt: float, filtered: bool = False) -> SplitPropagator:
    return SplitPropagator(grid, dt, filtered)


def _check_finite(values: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericalFailure("non-finite values in the distribution", t=t)


def _step_values(values, interaction, prop: SplitPropagator, t: float):
    """One Strang step on raw arrays; returns (values, midpoint force)."""
    half = prop.x_advect(values)
    F, _ = prop.force(half, interaction)
    f_max = float(np.max(np.abs(F))) if F.size else 0.0
    if not math.isfinite(f_max):
        raise NumericalFailure("non-finite force", t=t)
    if prop.dt > prop.stability_bound(f_max) * (1 + 1e-12):
        raise NumericalFailure(
            f"dt={prop.dt:g} exceeds the stability bound {prop.stability_bound(f_max):.4g} (max|F|={f_max:.4g})", t=t
        )
    moved = prop.v_shift(half, F * prop.dt)
    out = prop.x_advect(moved)
    _check_finite(out, t)
    return out, F


def step(state: DistributionState, interaction: Interaction, dt: float, filtered: bool = False) -> DistributionState:
    """Advance ``state`` by one Strang step of length ``dt``."""
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    prop = propagator(state.grid, float(dt), filtered)
    values, _ = _step_values(state.values, interaction, prop, state.t)
    return DistributionState(state.grid, values, state.t + dt)


def kick(state: DistributionState, mode: int, amplitude: float) -> DistributionState:
    """Instantaneous potential kick f(x, v) -> f(x, v + a d/dx cos(2 pi l x))."""
    g = state.grid
    prop = propagator(g, g.dt)
    shift = 2 * np.pi * mode * amplitude * np.sin(2 * np.pi * mode * g.x)
    return DistributionState(g, prop.v_shift(state.values, shift), state.t)


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------

DIAGNOSTIC_FIELDS = ("mass", "momentum", "kinetic", "potential", "energy", "l2", "cr", "gradv_l2")


def diagnostics(state: DistributionState, interaction: Interaction, r: float = 1.0, k_out: int = 4) -> dict:
    """Conserved quantities and mode amplitudes of one state.

    ``cr`` is the C^r proxy sum_{k != 0} (2 pi |k|)^r |rho^(k)| and ``gradv_l2``
    the L^2 norm of the spectral velocity derivative.
    """
    g = state.grid
    f = state.values
    v = g.v
    cell = g.dx * g.dv
    marg = f.sum(axis=0) * g.dx  # <f>(v)
    rk = state.density_modes()
    k = g.k
    w = potential_coeff(interaction, k) if interaction is not None else np.zeros(k.shape)
    mult = np.full(k.shape, 2.0)
    mult[0] = 0.0
    if g.n_x % 2 == 0:
        mult[-1] = 1.0
    potential = 0.5 * float(np.sum(mult * w * np.abs(rk) ** 2))
    kinetic = 0.5 * float(np.dot(marg, v * v)) * g.dv
    cr = float(np.sum(mult * (2 * np.pi * k) ** r * np.abs(rk)))
    dvf = propagator(g, g.dt).d_v(f)
    row = {
        "t": state.t,
        "mass": float(marg.sum() * g.dv),
        "momentum": float(np.dot(marg, v) * g.dv),
        "kinetic": kinetic,
        "potential": potential,
        "energy": kinetic + potential,
        "l2": float(np.sum(f * f) * cell),
        "cr": cr,
        "gradv_l2": math.sqrt(float(np.sum(dvf * dvf) * cell)),
        "rho": rk[: k_out + 1].copy(),
        "average": marg,
    }
    return row


@dataclass
class TrajectoryRecord:
    """Diagnostics sampled at output times."""

    times: np.ndarray
    rho: np.ndarray  # (n_t, k_out + 1) complex
    quantities: dict[str, np.ndarray]
    averages: np.ndarray  # (n_t, n_v)
    v: np.ndarray
    snapshots: list[DistributionState] = field(default_factory=list)
    final: DistributionState | None = field(default=None, repr=False)

    @property
    def k_out(self) -> int:
        return self.rho.shape[1] - 1

    def mode(self, k: int) -> np.ndarray:
        return np.abs(self.rho[:, k])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.quantities[name]

    def relative_drift(self, name: str) -> float:
        """max_t |q(t) - q(0)| / scale.

        The scale is |q(0)| except for momentum, whose initial value is zero for
        symmetric data; it uses mass * sqrt(2 kinetic / mass) (thermal momentum).
        """
        q = self.quantities[name]
        if name == "momentum":
            m, kin = self.quantities["mass"][0], self.quantities["kinetic"][0]
            scale = max(abs(q[0]), m * math.sqrt(max(2 * kin / m, 0.0)))
        else:
            scale = abs(q[0])
        dev = float(np.max(np.abs(q - q[0])))
        return dev / scale if scale > 0 else dev

    def to_csv(self, path: str | Path) -> None:
        header = ["t", *DIAGNOSTIC_FIELDS]
        for k in range(1, self.k_out + 1):
            header += [f"re_rho_{k}", f"im_rho_{k}", f"abs_rho_{k}"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, t in enumerate(self.times):
                row = [t] + [self.quantities[n][i] for n in DIAGNOSTIC_FIELDS]
                for k in range(1, self.k_out + 1):
                    z = self.rho[i, k]
                    row += [z.real, z.imag, abs(z)]
                w.writerow([f"{x:.12e}" for x in row])

    def averages_to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["v", *[f"t={t:.6g}" for t in self.times]])
            for j, vj in enumerate(self.v):
                w.writerow([f"{vj:.12e}", *[f"{a:.12e}" for a in self.averages[:, j]]])


class _RecordBuilder:
    def __init__(self, k_out: int):
        self.k_out = k_out
        self.times: list[float] = []
        self.rho: list[np.ndarray] = []
        self.q: dict[str, list[float]] = {n: [] for n in DIAGNOSTIC_FIELDS}
        self.avg: list[np.ndarray] = []
        self.snapshots: list[DistributionState] = []
        self.last: DistributionState | None = None
        self.v = None

    def add(self, state: DistributionState, interaction: Interaction) -> None:
        row = diagnostics(state, interaction, k_out=self.k_out)
        self.times.append(row["t"])
        self.rho.append(row["rho"])
        for n in DIAGNOSTIC_FIELDS:
            self.q[n].append(row[n])
        self.avg.append(row["average"])
        self.v = state.grid.v
        self.last = state

    def build(self) -> TrajectoryRecord:
        return TrajectoryRecord(
            times=np.asarray(self.times),
            rho=np.asarray(self.rho).reshape(len(self.times), self.k_out + 1),
            quantities={n: np.asarray(v) for n, v in self.q.items()},
            averages=np.asarray(self.avg),
            v=self.v,
            snapshots=self.snapshots,
            final=self.last,
        )


# --------------------------------------------------------------------------
# Force history and characteristics
# --------------------------------------------------------------------------


@dataclass
class ForceHistory:
    """Spatial force fields F(t_i, x) stored as real-to-complex coefficients."""

    times: np.ndarray
    coeffs: np.ndarray  # (n_t, n_x // 2 + 1), F(x) = sum over the r2c modes
    n_x: int

    @classmethod
    def from_fields(cls, times, fields) -> "ForceHistory":
        fields = np.atleast_2d(np.asarray(fields, dtype=float))
        times = np.asarray(times, dtype=float)
        if fields.shape[0] != times.size:
            raise InvalidArgument("one force field per time is required")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise InvalidArgument("force history times must increase")
        n_x = fields.shape[1]
        return cls(times=times, coeffs=sfft.rfft(fields, axis=1) / n_x, n_x=n_x)

    @classmethod
    def constant(cls, F0: float, t0: float, t1: float, n_x: int = 8) -> "ForceHistory":
        return cls.from_fields([t0, t1], np.full((2, n_x), float(F0)))

    def covers(self, a: float, b: float) -> bool:
        lo, hi = min(a, b), max(a, b)
        eps = 1e-12 * max(1.0, abs(hi))
        return self.times.size > 0 and self.times[0] - eps <= lo and hi <= self.times[-1] + eps

    def fields(self) -> np.ndarray:
        return sfft.irfft(self.coeffs * self.n_x, n=self.n_x, axis=1)

    def _coeffs_at(self, s: float) -> np.ndarray:
        ts = self.times
        if ts.size == 1:
            return self.coeffs[0]
        i = int(np.clip(np.searchsorted(ts, s) - 1, 0, ts.size - 2))
        theta = (s - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - theta) * self.coeffs[i] + theta * self.coeffs[i + 1]

    def evaluate(self, s: float, x: np.ndarray) -> np.ndarray:
        """F(s, x) at arbitrary positions: linear in time, trigonometric in space."""
        c = self._coeffs_at(s)
        n = self.n_x
        k = np.arange(c.size)
        mult = np.full(c.size, 2.0)
        mult[0] = 1.0
        if n % 2 == 0:
            mult[-1] = 1.0
        ph = np.exp(2j * np.pi * np.multiply.outer(x, k))
        return np.real(ph @ (mult * c))

    def max_amplitude(self) -> np.ndarray:
        return np.max(np.abs(self.fields()), axis=1)


def characteristics(history: ForceHistory, t: float, tau: float, x, v, max_step: float | None = None):
    """(X, V)(tau) of the characteristics through (x, v) at time t.

    Classical RK4 on dX/ds = V, dV/ds = F(s, X); positions are not wrapped.
    """
    if not history.covers(t, tau):
        raise InvalidArgument(f"force history [{history.times[0]:g}, {history.times[-1]:g}] does not cover [{t:g}, {tau:g}]")
    X = np.array(x, dtype=float, copy=True)
    V = np.array(v, dtype=float, copy=True)
    X, V = np.broadcast_arrays(X, V)
    X, V = X.copy(), V.copy()
    span = tau - t
    if span == 0:
        return X, V
    if max_step is None:
        spacing = float(np.min(np.diff(history.times))) if history.times.size > 1 else abs(span)
        max_step = min(0.02, spacing)
    n = max(1, int(math.ceil(abs(span) / max_step - 1e-12)))
    h = span / n
    s = t
    F = history.evaluate
    for _ in range(n):
        k1x, k1v = V, F(s, X)
        k2x, k2v = V + 0.5 * h * k1v, F(s + 0.5 * h, X + 0.5 * h * k1x)
        k3x, k3v = V + 0.5 * h * k2v, F(s + 0.5 * h, X + 0.5 * h * k2x)
        k4x, k4v = V + h * k3v, F(s + h, X + h * k3x)
        X = X + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        V = V + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        s += h
    return X, V


@dataclass(frozen=True)
class ScatteringDeviation:
    sup: float
    dX: np.ndarray
    dV: np.ndarray


def scattering_deviation(history: ForceHistory, t: float, tau: float, x, v) -> ScatteringDeviation:
    """sup over the sample grid of Omega_{t,tau} - Id.

    Omega_{t,tau}(x, v) = (X, V)_{t,tau}(x + v (t - tau), v); the position
    difference is reduced to the nearest periodic image.
    """
    xx, vv = np.meshgrid(np.asarray(x, dtype=float), np.asarray(v, dtype=float), indexing="ij")
    X, V = characteristics(history, t, tau, xx + vv * (t - tau), vv)
    dX = X - xx
    dX -= np.round(dX)
    dV = V - vv
    return ScatteringDeviation(sup=float(max(np.max(np.abs(dX)), np.max(np.abs(dV)))), dX=dX, dV=dV)


# --------------------------------------------------------------------------
# Time loop
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Kick:
    """Instantaneous external potential a cos(2 pi l x) applied at ``time``."""

    time: float
    mode: int
    amplitude: float


def recurrence_limit(grid: PhaseSpaceGrid, k_min: int = 1) -> float:
    return RECURRENCE_FRACTION * grid.recurrence_time / k_min


def run(
    initial: DistributionState,
    interaction: Interaction,
    horizon: float,
    dt: float | None = None,
    stride: int = 1,
    filtered: bool = False,
    k_out: int = 4,
    kicks: Sequence[Kick] = (),
    snapshot_every: int | None = None,
    allow_recurrence: bool = False,
    callback: Callable[[DistributionState], None] | None = None,
) -> tuple[TrajectoryRecord, ForceHistory]:
    """Integrate from ``initial.t`` to ``initial.t + horizon``.

    Diagnostics are recorded every ``stride`` steps and at the final time.  The
    force history stores F at t = 0, at every step midpoint and at the end.
    On a numerical failure the raised exception carries the partial record
    and history as ``.record`` and ``.history``.
    """
    g = initial.grid
    dt = g.dt if dt is None else float(dt)
    if not dt > 0 or not horizon > 0:
        raise InvalidArgument("dt and horizon must be positive")
    if stride < 1:
        raise InvalidArgument("stride must be >= 1")
    if k_out > g.n_x // 2:
        raise InvalidArgument(f"k_out={k_out} exceeds the grid's n_x/2")
    if not allow_recurrence and horizon > recurrence_limit(g) * (1 + 1e-12):
        raise InvalidArgument(
            f"horizon {horizon:g} exceeds {RECURRENCE_FRACTION} x recurrence time {g.recurrence_time:.4g}; refine n_v"
        )
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise InvalidArgument("horizon must be an integer multiple of dt")
    prop = propagator(g, dt, filtered)
    kick_at: dict[int, list[Kick]] = {}
    for kk in kicks:
        kick_at.setdefault(int(round((kk.time - initial.t) / dt)), []).append(kk)

    rec = _RecordBuilder(k_out)
    f_times: list[float] = []
    f_fields: list[np.ndarray] = []
    values = initial.values.copy()
    t0 = initial.t

    def force_now(vals):
        F, _ = prop.force(vals, interaction)
        return F

    f_times.append(t0)
    f_fields.append(force_now(values))
    try:
        for n in range(n_steps + 1):
            t = t0 + n * dt
            for kk in kick_at.get(n, ()):
                shift = 2 * np.pi * kk.mode * kk.amplitude * np.sin(2 * np.pi * kk.mode * g.x)
                values = prop.v_shift(values, shift)
            if n % stride == 0 or n == n_steps:
                state = DistributionState(g, values, t)
                rec.add(state, interaction)
                if snapshot_every and (n // stride) % snapshot_every == 0:
                    rec.snapshots.append(state.copy())
                if callback is not None:
                    callback(state)
            if n == n_steps:
                break
            values, F = _step_values(values, interaction, prop, t)
            f_times.append(t + 0.5 * dt)
            f_fields.append(F)
        f_times.append(t0 + n_steps * dt)
        f_fields.append(force_now(values))
    except NumericalFailure as exc:
        exc.record = rec.build() if rec.times else None
        exc.history = ForceHistory.from_fields(f_times, f_fields)
        raise
    return rec.build(), ForceHistory.from_fields(f_times, f_fields)


# --------------------------------------------------------------------------
# Plasma echoes
# --------------------------------------------------------------------------


def predict_echo_time(k: int, l: int, tau: float) -> float | None:
    """Echo time t = tau (k - l) / k of mode k sourced by mode l at time tau.

    Returns ``None`` when no forward echo exists (k = l or t <= tau).
    """
    if k == 0:
        raise InvalidArgument("response mode k must be nonzero")
    if k == l:
        return None
    t = tau * (k - l) / k
    if not t > tau:
        return None
    return t


@dataclass(frozen=True)
class EchoPeak:
    """An echo burst in mode ``mode``.

    The ballistic echo density is proportional to
    eta (eta + tau) exp(-2 pi^2 T eta^2) with eta = k (t - t_echo): it changes
    sign at t_echo with a lobe on each side.  ``time`` is that sign change,
    located by linear interpolation of rho^ projected on its phase at the
    largest lobe, taking the crossing nearest the burst centroid.
    ``centroid`` is the |rho^|^2-weighted mean time of the burst and
    ``max_time`` the largest local maximum.
    """

    mode: int
    source_mode: int
    time: float
    amplitude: float
    predicted: float
    max_time: float
    centroid: float

    @property
    def error(self) -> float:
        return self.time - self.predicted


BURST_FRACTION = 1e-2


def _burst(a: np.ndarray, i: int, fraction: float) -> tuple[int, int]:
    """Index range around i where a stays above fraction * a[i], bridging single-sample nulls."""
    level = fraction * a[i]
    lo = i
    while lo > 0 and (a[lo - 1] >= level or (lo > 1 and a[lo - 2] >= level)):
        lo -= 1
    hi = i
    while hi < a.size - 1 and (a[hi + 1] >= level or (hi < a.size - 2 and a[hi + 2] >= level)):
        hi += 1
    return lo, hi


def burst_centroid(t: np.ndarray, a: np.ndarray, i: int, fraction: float = BURST_FRACTION) -> float:
    """|a|^2-weighted mean time of the burst around index i."""
    lo, hi = _burst(a, i, fraction)
    w = a[lo : hi + 1] ** 2
    return float(np.sum(w * t[lo : hi + 1]) / np.sum(w))


def echo_null_time(t: np.ndarray, z: np.ndarray, i: int, fraction: float = BURST_FRACTION) -> float | None:
    """Sign change of z projected on its phase at index i, nearest the burst centroid."""
    a = np.abs(z)
    lo, hi = _burst(a, i, fraction)
    s = np.real(z[lo : hi + 1] * np.conj(z[i] / a[i]))
    tt = t[lo : hi + 1]
    j = np.nonzero(np.signbit(s[:-1]) != np.signbit(s[1:]))[0]
    if j.size == 0:
        return None
    cross = tt[j] - s[j] * (tt[j + 1] - tt[j]) / (s[j + 1] - s[j])
    c = burst_centroid(t, a, i, fraction)
    return float(cross[np.argmin(np.abs(cross - c))])


@dataclass
class EchoResult:
    peaks: list[EchoPeak]
    predictions: list[tuple[int, int, float]]
    noise_floor: float
    record: TrajectoryRecord
    stride_time: float

    @property
    def detected(self) -> bool:
        return bool(self.peaks)

    def summary(self) -> str:
        if not self.peaks:
            return f"no echo detected above noise floor {self.noise_floor:.3e}"
        lines = []
        for p in self.peaks:
            lines.append(
                f"mode {p.mode}: echo t={p.time:.6g} (max at {p.max_time:.6g}) |rho|={p.amplitude:.6e} predicted t={p.predicted:.6g} "
                f"({p.error / self.stride_time:+.2f} strides)"
            )
        return "\n".join(lines)


def echo_predictions(l1: int, l2: int, tau2: float) -> list[tuple[int, int, float]]:
    """(response mode k > 0, source mode l, echo time) of forward echoes.

    Wavenumbers must match: the response k combines the first pulse l = +-l1
    with the second pulse, k - l = +-l2.
    """
    out = []
    for l in (-l1, l1):
        for s in (-l2, l2):
            k = l + s
            if k <= 0:
                continue
            t = predict_echo_time(k, l, tau2)
            if t is not None and all(k != o[0] for o in out):
                out.append((k, l, t))
    return sorted(out)


def _peak_refine(t: np.ndarray, a: np.ndarray, i: int) -> tuple[float, float]:
    if 0 < i < a.size - 1 and a[i - 1] > 0 and a[i + 1] > 0 and a[i] > 0:
        ym, y0, yp = np.log(a[i - 1 : i + 2])
        denom = ym - 2 * y0 + yp
        if denom < 0:
            s = float(np.clip(0.5 * (ym - yp) / denom, -0.5, 0.5))
            return float(t[i] + s * (t[1] - t[0])), float(np.exp(y0 - 0.25 * (ym - yp) * s))
    return float(t[i]), float(a[i])


def echo_experiment(
    profile: VelocityProfile,
    interaction: Interaction,
    pulse1: tuple[int, float],
    pulse2: tuple[int, float, float],
    horizon: float,
    dt: float = 1.0 / 64,
    stride: int = 1,
    grid: PhaseSpaceGrid | None = None,
) -> EchoResult:
    """Two-pulse echo run.

    ``pulse1 = (l1, a1)`` acts at t = 0 and ``pulse2 = (l2, a2, tau2)`` at tau2.
    For each predicted forward echo the burst around the largest local maximum
    of |rho^(t, k)| after tau2 is reported (see ``EchoPeak``), provided that
    maximum exceeds both 10 eps * mass and ten times the median of
    |rho^(t, k)| after tau2 (the mode's roundoff plateau).
    """
    l1, a1 = pulse1
    l2, a2, tau2 = pulse2
    if not 0 < tau2 < horizon:
        raise InvalidArgument("the second pulse must act inside (0, horizon)")
    if grid is None:
        grid = PhaseSpaceGrid.for_profile(profile, dt=dt)
    preds = echo_predictions(abs(l1), abs(l2), tau2)
    k_out = max([abs(l1) + abs(l2)] + [p[0] for p in preds])
    if k_out > grid.n_x // 2:
        raise InvalidArgument("pulse modes exceed the grid's resolved modes")
    kicks = [Kick(0.0, l1, a1)]
    if a2 != 0:
        kicks.append(Kick(tau2, l2, a2))
    rec, _ = run(equilibrium_state(profile, grid), interaction, horizon, dt, stride=stride, k_out=k_out, kicks=kicks)
    floor = 10 * np.finfo(float).eps * float(rec["mass"][0])
    peaks: list[EchoPeak] = []
    sel = rec.times > tau2 + 0.5 * dt
    t = rec.times[sel]
    for k, l, tp in preds:
        if tp > horizon:
            continue
        a = rec.mode(k)[sel]
        inner = np.nonzero((a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:]))[0] + 1
        if inner.size == 0:
            continue
        i = int(inner[np.argmax(a[inner])])
        # roundoff accumulates into a plateau that can sit above the bare floor
        if a[i] <= max(floor, 10 * float(np.median(a))):
            continue
        tm, am = _peak_refine(t, a, i)
        tc = burst_centroid(t, a, i)
        tn = echo_null_time(t, rec.rho[sel, k], i)
        peaks.append(EchoPeak(mode=k, source_mode=l, time=tc if tn is None else tn, amplitude=am, predicted=tp,
                              max_time=tm, centroid=tc))
    return EchoResult(peaks=peaks, predictions=preds, noise_floor=floor, record=rec, stride_time=stride * dt)


def echo_kernel(t: float, tau: float, dlambda: float, dmu: float = 0.0, gamma: float = 1.0, cutoff: int = 16):
    """(1 + tau) sup_{0<|k|,|l|<=cutoff} e^{-2 pi dlambda |k(t-tau) + l tau|} e^{-2 pi dmu |l|} / (1 + |k-l|^gamma).

    Returns ``(value, (k, l))``.
    """
    vals, ks, ls = echo_kernel_profile(t, [tau], dlambda, dmu, gamma, cutoff)
    return float(vals[0]), (int(ks[0]), int(ls[0]))


def echo_kernel_profile(t: float, taus, dlambda: float, dmu: float = 0.0, gamma: float = 1.0, cutoff: int = 16):
    """Vectorized ``echo_kernel`` over a tau grid: (values, ks, ls)."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if not dlambda > 0:
        raise InvalidArgument("dlambda must be positive")
    if dmu < 0 or gamma < 0:
        raise InvalidArgument("dmu and gamma must be nonnegative")
    if cutoff < 1:
        raise InvalidArgument("cutoff must be >= 1")
    if np.any(taus < 0) or np.any(taus > t * (1 + 1e-12)):
        raise InvalidArgument("echo kernel requires 0 <= tau <= t")
    vals, ks, ls = echo_kernel_scan(float(t), np.ascontiguousarray(taus), float(dlambda), float(dmu), float(gamma), int(cutoff))
    return np.asarray(vals), np.asarray(ks), np.asarray(ls)


# --------------------------------------------------------------------------
# Output formats
# --------------------------------------------------------------------------

SNAPSHOT_MAGIC = b"VDLS"
SNAPSHOT_VERSION = 1
_SNAPSHOT_HEADER = struct.Struct("<4sIqqdd")


def write_snapshot(path: str | Path, state: DistributionState) -> None:
    """Flat little-endian binary snapshot.

    Layout: 4-byte magic ``VDLS``, uint32 version, int64 n_x, int64 n_v,
    float64 V, float64 t (40 bytes), then n_x * n_v float64 values in
    row-major order (x index slowest).
    """
    g = state.grid
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.n_x, g.n_v, g.V, state.t))
        fh.write(np.ascontiguousarray(state.values, dtype="<f8").tobytes())


def read_snapshot(path: str | Path, dt: float = 1.0 / 64) -> DistributionState:
    data = Path(path).read_bytes()
    if len(data) < _SNAPSHOT_HEADER.size:
        raise InvalidArgument("snapshot is truncated")
    magic, version, n_x, n_v, V, t = _SNAPSHOT_HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC or version != SNAPSHOT_VERSION:
        raise InvalidArgument("not a snapshot file")
    body = np.frombuffer(data, dtype="<f8", offset=_SNAPSHOT_HEADER.size)
    if body.size != n_x * n_v:
        raise InvalidArgument("snapshot body does not match its header")
    grid = PhaseSpaceGrid(n_x=int(n_x), n_v=int(n_v), V=float(V), dt=dt)
    return DistributionState(grid, body.reshape(n_x, n_v).astype(float), float(t))


def write_svg(
    path: str | Path,
    x: Sequence[float],
    series: dict[str, Sequence[float]],
    logy: bool = False,
    title: str = "",
    width: int = 640,
    height: int = 400,
) -> None:
    """Line plot with one polyline per series and no external assets."""
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")
    x = np.asarray(x, dtype=float)
    ys = {}
    for name, y in series.items():
        y = np.asarray(y, dtype=float)
        if logy:
            y = np.where(y > 0, np.log10(np.where(y > 0, y, 1.0)), np.nan)
        ys[name] = y
    finite = np.concatenate([y[np.isfinite(y)] for y in ys.values()] or [np.zeros(1)])
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    x0, x1 = float(x.min()), float(x.max()) if x.size else 1.0
    if x1 == x0:
        x1 = x0 + 1.0
    m = 50

    def px(a):
        return m + (a - x0) / (x1 - x0) * (width - 2 * m)

    def py(b):
        return height - m - (b - lo) / (hi - lo) * (height - 2 * m)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_xml(title)}</text>',
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>',
        f'<text x="{m}" y="{height - m + 16}" font-size="11">{x0:.3g}</text>',
        f'<text x="{width - m}" y="{height - m + 16}" font-size="11" text-anchor="end">{x1:.3g}</text>',
        f'<text x="{m - 4}" y="{height - m}" font-size="11" text-anchor="end">{_ylabel(lo, logy)}</text>',
        f'<text x="{m - 4}" y="{m + 4}" font-size="11" text-anchor="end">{_ylabel(hi, logy)}</text>',
    ]
    for i, (name, y) in enumerate(ys.items()):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y) if np.isfinite(b))
        c = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.2" points="{pts}"/>')
        parts.append(f'<text x="{width - m + 4}" y="{m + 14 * (i + 1)}" font-size="11" fill="{c}">{_xml(name)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def _ylabel(v: float, logy: bool) -> str:
    return f"1e{v:.1f}" if logy else f"{v:.3g}"


def _xml(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
