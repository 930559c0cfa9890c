"""Equilibrium profiles, interaction potentials, phase-space grids and initial data.

Fourier conventions (shared by every module)::

    f^(k, v)      = int_T f(x, v) exp(-2 i pi k x) dx
    f~(k, eta)    = iint f(x, v) exp(-2 i pi k x) exp(-2 i pi eta v) dv dx

The torus is T = [0, 1) and all grids are one-dimensional in x and v.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import InvalidArgument, NumericalFailure


class UnresolvedTailWarning(UserWarning):
    """A tabulated transform was requested outside the band the table resolves."""


# --------------------------------------------------------------------------
# Velocity profiles
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class VelocityProfile:
    """Homogeneous equilibrium f0(v) with unit mass.

    Parameters
    ----------
    kind:
        ``"maxwellian"``, ``"two_stream"`` or ``"tabulated"``.
    T:
        Temperature (variance) of each Gaussian component.
    v0:
        Beam speed for ``two_stream``; the profile is the even mixture of
        Gaussians centred at ``+v0`` and ``-v0``.
    v_table, f_table:
        Nodes and values for ``tabulated`` profiles.
    lambda0:
        Width of the analyticity strip of the transform.  Gaussian kinds are
        entire, hence ``inf``; tabulated profiles carry no analyticity and use 0.
    """

    kind: str = "maxwellian"
    T: float = 1.0
    v0: float = 0.0
    shift: float = 0.0
    v_table: tuple[float, ...] | None = None
    f_table: tuple[float, ...] | None = None
    lambda0: float = math.inf

    def __post_init__(self) -> None:
        if self.kind not in ("maxwellian", "two_stream", "tabulated"):
            raise InvalidArgument(f"unknown profile kind {self.kind!r}")
        if self.kind == "tabulated":
            if self.v_table is None or self.f_table is None:
                raise InvalidArgument("tabulated profile needs v_table and f_table")
            v = np.asarray(self.v_table, dtype=float)
            f = np.asarray(self.f_table, dtype=float)
            if v.shape != f.shape or v.size < 3:
                raise InvalidArgument("tabulated profile needs matching columns of length >= 3")
            if np.any(np.diff(v) <= 0):
                raise InvalidArgument("tabulated velocity nodes must be increasing")
            if not np.allclose(np.diff(v), v[1] - v[0], rtol=1e-9, atol=0):
                raise InvalidArgument("tabulated velocity nodes must be uniformly spaced")
            if np.any(f < 0):
                raise InvalidArgument("tabulated profile must be nonnegative")
            object.__setattr__(self, "lambda0", 0.0)
        else:
            if not self.T > 0:
                raise InvalidArgument("temperature T must be positive")
            if self.lambda0 <= 0:
                raise InvalidArgument("analytic profiles need lambda0 > 0")

    # constructors ---------------------------------------------------------

    @classmethod
    def maxwellian(cls, T: float = 1.0) -> "VelocityProfile":
        return cls(kind="maxwellian", T=T)

    @classmethod
    def two_stream(cls, T: float, v0: float) -> "VelocityProfile":
        return cls(kind="two_stream", T=T, v0=v0)

    @classmethod
    def tabulated(cls, v: Sequence[float], f: Sequence[float], normalize: bool = True) -> "VelocityProfile":
        v = np.asarray(v, dtype=float)
        f = np.asarray(f, dtype=float)
        if normalize:
            mass = _trapezoid_uniform(f, v[1] - v[0])
            if not mass > 0:
                raise InvalidArgument("tabulated profile has no mass")
            f = f / mass
        return cls(kind="tabulated", v_table=tuple(v), f_table=tuple(f), lambda0=0.0)

    @classmethod
    def from_csv(cls, path: str | Path, normalize: bool = True) -> "VelocityProfile":
        v, f = read_two_column_csv(path)
        return cls.tabulated(v, f, normalize=normalize)

    def shifted(self, u: float) -> "VelocityProfile":
        """The profile translated in velocity, f0(v - u)."""
        if self.kind == "tabulated":
            return VelocityProfile.tabulated(np.asarray(self.v_table) + u, self.f_table, normalize=False)
        return VelocityProfile(kind=self.kind, T=self.T, v0=self.v0, shift=self.shift + u, lambda0=self.lambda0)

    # evaluation -----------------------------------------------------------

    def density(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float) - self.shift
        if self.kind == "maxwellian":
            return np.exp(-v * v / (2 * self.T)) / math.sqrt(2 * math.pi * self.T)
        if self.kind == "two_stream":
            norm = 0.5 / math.sqrt(2 * math.pi * self.T)
            return norm * (np.exp(-((v - self.v0) ** 2) / (2 * self.T)) + np.exp(-((v + self.v0) ** 2) / (2 * self.T)))
        return np.interp(v, self.v_table, self.f_table, left=0.0, right=0.0)

    def density_derivative(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "tabulated":
            h = self.v_table[1] - self.v_table[0]
            return (self.density(v + h) - self.density(v - h)) / (2 * h)
        w = v - self.shift
        if self.kind == "maxwellian":
            return -w / self.T * self.density(v)
        norm = 0.5 / math.sqrt(2 * math.pi * self.T)
        a = w - self.v0
        b = w + self.v0
        return -norm / self.T * (a * np.exp(-a * a / (2 * self.T)) + b * np.exp(-b * b / (2 * self.T)))

    @property
    def resolvable_band(self) -> float:
        """Largest |eta| a tabulated transform can resolve (Nyquist of the table)."""
        if self.kind != "tabulated":
            return math.inf
        return 0.5 / (self.v_table[1] - self.v_table[0])

    def support_radius(self, tail: float = 1e-12) -> float:
        """Velocity beyond which the profile carries less than ``tail`` mass."""
        if self.kind == "tabulated":
            v = np.asarray(self.v_table)
            return float(max(abs(v[0]), abs(v[-1])))
        from scipy.special import erfcinv

        z = math.sqrt(2.0) * float(erfcinv(tail))
        return abs(self.shift) + abs(self.v0) + z * math.sqrt(self.T)

    def fourier(self, eta) -> np.ndarray:
        return profile_fourier(self, eta)


def _trapezoid_uniform(f: np.ndarray, h: float) -> float:
    return float(h * (f.sum() - 0.5 * (f[0] + f[-1])))


def profile_fourier(profile: VelocityProfile, eta):
    """Transform f0~(eta) = int f0(v) exp(-2 i pi eta v) dv.

    Closed forms for the Gaussian kinds (real for centred profiles).  Tabulated
    profiles use trapezoidal quadrature on the table and return ``nan`` (with an
    :class:`UnresolvedTailWarning`) where ``|eta|`` exceeds the table's band.
    """
    eta_arr = np.asarray(eta, dtype=float)
    if profile.kind == "tabulated":
        v = np.asarray(profile.v_table)
        f = np.asarray(profile.f_table)
        h = v[1] - v[0]
        w = np.full(v.shape, h)
        w[0] = w[-1] = 0.5 * h
        flat = eta_arr.reshape(-1)
        out = np.exp(-2j * np.pi * np.outer(flat, v)) @ (w * f)
        bad = np.abs(flat) > profile.resolvable_band
        if np.any(bad):
            warnings.warn("unresolved tail: |eta| beyond the tabulated band", UnresolvedTailWarning, stacklevel=2)
            out[bad] = np.nan
        out = out.reshape(eta_arr.shape)
        return out if out.ndim else complex(out)
    g = np.exp(-2 * np.pi**2 * profile.T * eta_arr**2)
    if profile.kind == "two_stream":
        g = g * np.cos(2 * np.pi * profile.v0 * eta_arr)
    if profile.shift != 0.0:
        g = g * np.exp(-2j * np.pi * eta_arr * profile.shift)
    return g if np.ndim(g) else g.item()


def profile_marginal(profile: VelocityProfile, k: int, z):
    """Marginal of f0 along direction k; in one dimension f0(z k/|k|)."""
    if k == 0:
        raise InvalidArgument("marginal undefined for k = 0")
    return profile.density(np.sign(k) * np.asarray(z, dtype=float))


# --------------------------------------------------------------------------
# Interaction potentials
# --------------------------------------------------------------------------

REPULSIVE = 1
ATTRACTIVE = -1


@dataclass(frozen=True)
class Interaction:
    """Even interaction potential given by its Fourier multiplier W^(k).

    ``power`` kind: W^(k) = sign * A / |k|^(1 + gamma); gamma = 1 is the
    Coulomb/Newton case.  ``tabulated`` kind: explicit ``{k: W^(k)}`` for
    k >= 1, extended evenly and by zero elsewhere.  W^(0) = 0 always.
    """

    sign: int = REPULSIVE
    A: float = 1.0 / math.pi
    gamma: float = 1.0
    kind: str = "power"
    table: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if self.sign not in (REPULSIVE, ATTRACTIVE):
            raise InvalidArgument("sign must be +1 (repulsive) or -1 (attractive)")
        if self.kind not in ("power", "tabulated"):
            raise InvalidArgument(f"unknown interaction kind {self.kind!r}")
        if self.A < 0:
            raise InvalidArgument("amplitude must be nonnegative")
        if self.gamma < 1:
            raise InvalidArgument("decay exponent gamma must be >= 1")
        if self.kind == "tabulated":
            for k, _ in self.table:
                if int(k) < 1:
                    raise InvalidArgument("tabulated interaction lists modes k >= 1 only")
            if self.table and not self.satisfies_decay():
                raise InvalidArgument("tabulated coefficients violate |W^(k)| <= C_W / |k|^(1+gamma)")

    @classmethod
    def coulomb(cls, A: float = 1.0 / math.pi, sign: int = REPULSIVE) -> "Interaction":
        return cls(sign=sign, A=A, gamma=1.0)

    @classmethod
    def zero(cls) -> "Interaction":
        return cls(A=0.0)

    @classmethod
    def from_csv(cls, path: str | Path, gamma: float = 1.0, A: float | None = None) -> "Interaction":
        k, w = read_two_column_csv(path)
        table = tuple((int(round(kk)), float(ww)) for kk, ww in zip(k, w) if int(round(kk)) != 0)
        if A is None:
            A = max((abs(ww) * abs(kk) ** (1 + gamma) for kk, ww in table), default=0.0)
        return cls(kind="tabulated", table=table, gamma=gamma, A=A)

    @property
    def C_W(self) -> float:
        return self.A

    def satisfies_decay(self) -> bool:
        return all(abs(w) <= self.A * abs(k) ** -(1 + self.gamma) * (1 + 1e-12) for k, w in self.table)

    def coeff(self, k):
        return potential_coeff(self, k)

    def max_abs(self, k_max: int | None = None) -> float:
        """max_k |W^(k)| over nonzero modes (optionally |k| <= k_max)."""
        if self.kind == "power":
            return self.A
        vals = [abs(w) for k, w in self.table if k_max is None or k <= k_max]
        return max(vals, default=0.0)

    def flipped(self) -> "Interaction":
        return Interaction(sign=-self.sign, A=self.A, gamma=self.gamma, kind=self.kind,
                           table=tuple((k, -w) for k, w in self.table))


def potential_coeff(interaction: Interaction, k):
    """W^(k) for integer mode(s) ``k``; zero at k = 0."""
    k_arr = np.abs(np.asarray(k))
    if interaction.kind == "power":
        with np.errstate(divide="ignore"):
            out = np.where(k_arr == 0, 0.0, interaction.sign * interaction.A / np.maximum(k_arr, 1) ** (1 + interaction.gamma))
    else:
        lookup = dict(interaction.table)
        out = np.vectorize(lambda kk: lookup.get(int(kk), 0.0), otypes=[float])(k_arr) if k_arr.size else np.zeros(k_arr.shape)
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# Grids and distribution states
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Uniform grid on T x [-V, V) with periodic wrap in velocity."""

    n_x: int = 32
    n_v: int = 512
    V: float = 6.0
    dt: float = 1.0 / 64
    d: int = 1

    def __post_init__(self) -> None:
        if self.d != 1:
            raise InvalidArgument("only d = 1 grids are implemented")
        for name in ("n_x", "n_v"):
            n = getattr(self, name)
            if n < 8 or n & (n - 1):
                raise InvalidArgument(f"{name} must be a power of two >= 8, got {n}")
        if not self.V > 0:
            raise InvalidArgument("velocity cutoff V must be positive")
        if not self.dt > 0:
            raise InvalidArgument("dt must be positive")

    @classmethod
    def for_profile(cls, profile: VelocityProfile, n_x: int = 32, n_v: int = 512, dt: float = 1.0 / 64) -> "PhaseSpaceGrid":
        """Grid with the default cutoff V = |v0| + 6 sqrt(T)."""
        if profile.kind == "tabulated":
            V = profile.support_radius()
        else:
            V = abs(profile.shift) + abs(profile.v0) + 6.0 * math.sqrt(profile.T)
        return cls(n_x=n_x, n_v=n_v, V=V, dt=dt)

    @property
    def dx(self) -> float:
        return 1.0 / self.n_x

    @property
    def dv(self) -> float:
        return 2.0 * self.V / self.n_v

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_x) * self.dx

    @property
    def v(self) -> np.ndarray:
        return -self.V + np.arange(self.n_v) * self.dv

    @property
    def k(self) -> np.ndarray:
        """Nonnegative modes carried by a real-to-complex transform in x."""
        return np.arange(self.n_x // 2 + 1)

    @property
    def k_full(self) -> np.ndarray:
        return np.fft.fftfreq(self.n_x, d=1.0 / self.n_x).astype(int)

    @property
    def eta(self) -> np.ndarray:
        return np.fft.fftfreq(self.n_v, d=self.dv)

    @property
    def eta_r(self) -> np.ndarray:
        return np.fft.rfftfreq(self.n_v, d=self.dv)

    @property
    def recurrence_time(self) -> float:
        """Free-streaming recurrence time 1 / (k_min dv) for k_min = 1."""
        return 1.0 / self.dv

    def tail_mass(self, profile: VelocityProfile) -> float:
        """Profile mass outside [-V, V]."""
        from scipy.integrate import quad

        if profile.kind == "tabulated":
            v = np.asarray(profile.v_table)
            f = np.asarray(profile.f_table)
            h = v[1] - v[0]
            return float(h * f[np.abs(v) > self.V].sum())
        left = quad(profile.density, -np.inf, -self.V, epsabs=1e-300)[0]
        right = quad(profile.density, self.V, np.inf, epsabs=1e-300)[0]
        return left + right


class DistributionState:
    """Phase-space distribution f(x_i, v_j) at time t with lazily cached transforms.

    ``fhat`` holds f^(k, v_j) for k = 0..n_x/2 (real-to-complex in x) and
    ``ftilde`` holds f~(k, eta_m) on the full (k, eta) FFT grid.  Assigning
    ``values`` marks both caches dirty.
    """

    def __init__(self, grid: PhaseSpaceGrid, values: np.ndarray, t: float = 0.0):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_x, grid.n_v):
            raise InvalidArgument(f"state shape {values.shape} does not match grid {(grid.n_x, grid.n_v)}")
        self.grid = grid
        self.t = float(t)
        self._values = values
        self._fhat: np.ndarray | None = None
        self._ftilde: np.ndarray | None = None

    @classmethod
    def from_fhat(cls, grid: PhaseSpaceGrid, fhat: np.ndarray, t: float = 0.0) -> "DistributionState":
        values = sfft.irfft(fhat, n=grid.n_x, axis=0) * grid.n_x
        state = cls(grid, values, t)
        state._fhat = fhat
        return state

    @property
    def values(self) -> np.ndarray:
        return self._values

    @values.setter
    def values(self, new: np.ndarray) -> None:
        self._values = np.asarray(new, dtype=float)
        self._fhat = None
        self._ftilde = None

    @property
    def dirty(self) -> tuple[bool, bool]:
        return self._fhat is None, self._ftilde is None

    @property
    def fhat(self) -> np.ndarray:
        if self._fhat is None:
            self._fhat = sfft.rfft(self._values, axis=0) / self.grid.n_x
        return self._fhat

    @property
    def fhat_full(self) -> np.ndarray:
        """f^(k, v_j) for every k in ``grid.k_full`` order."""
        return sfft.fft(self._values, axis=0) / self.grid.n_x

    @property
    def ftilde(self) -> np.ndarray:
        if self._ftilde is None:
            g = self.grid
            phase = np.exp(-2j * np.pi * g.eta * g.v[0])
            self._ftilde = sfft.fft(self.fhat_full, axis=1) * g.dv * phase[None, :]
        return self._ftilde

    def density_modes(self) -> np.ndarray:
        """rho^(k) for k = 0..n_x/2."""
        return self.fhat.sum(axis=1) * self.grid.dv

    def density(self) -> np.ndarray:
        return self._values.sum(axis=1) * self.grid.dv

    def mass(self) -> float:
        return float(self._values.sum() * self.grid.dx * self.grid.dv)

    def spatial_average(self) -> np.ndarray:
        """<f>(v) = int f dx."""
        return self._values.mean(axis=0)

    def copy(self) -> "DistributionState":
        return DistributionState(self.grid, self._values.copy(), self.t)

    def __sub__(self, other: "DistributionState") -> "DistributionState":
        return DistributionState(self.grid, self._values - other.values, self.t)


@dataclass(frozen=True)
class Perturbation:
    """Cosine packet a * cos(2 pi l x) multiplying the equilibrium."""

    mode: int
    amplitude: float
    shape: str = "cosine"
    envelope: str = "same-as-profile"

    def __post_init__(self) -> None:
        if self.shape != "cosine" or self.envelope != "same-as-profile":
            raise InvalidArgument("only cosine packets with the profile's own envelope are supported")


def sample_initial(profile: VelocityProfile, perturbation: Iterable[Perturbation | tuple], grid: PhaseSpaceGrid) -> DistributionState:
    """f_i(x, v) = f0(v) (1 + sum_l a_l cos(2 pi l x)) sampled on ``grid``."""
    x = grid.x
    modulation = np.ones_like(x)
    for p in perturbation:
        if not isinstance(p, Perturbation):
            p = Perturbation(*p)
        modulation = modulation + p.amplitude * np.cos(2 * np.pi * p.mode * x)
    f0 = profile.density(grid.v)
    values = modulation[:, None] * f0[None, :]
    if np.any(values < 0):
        i, j = np.unravel_index(np.argmin(values), values.shape)
        raise InvalidArgument(
            f"initial datum is negative at node (x={x[i]:.6g}, v={grid.v[j]:.6g}): value {values[i, j]:.3e}"
        )
    return DistributionState(grid, values, 0.0)


def equilibrium_state(profile: VelocityProfile, grid: PhaseSpaceGrid) -> DistributionState:
    return sample_initial(profile, [], grid)


def force_modes(rho_hat: np.ndarray, interaction: Interaction, k: np.ndarray) -> np.ndarray:
    """F^(k) = -2 i pi k W^(k) rho^(k)."""
    return -2j * np.pi * k * potential_coeff(interaction, k) * rho_hat


def force_field(state: DistributionState, interaction: Interaction, return_residue: bool = False):
    """Self-consistent force F[f](x) = -(grad W * rho)(x) on the x-grid.

    With ``return_residue`` the largest imaginary part produced by a complex
    inverse transform is also returned (it vanishes for real data).
    """
    if not np.all(np.isfinite(state.values)):
        raise NumericalFailure("non-finite values in state", t=state.t)
    g = state.grid
    Fk = force_modes(state.density_modes(), interaction, g.k)
    F = sfft.irfft(Fk, n=g.n_x) * g.n_x
    if not return_residue:
        return F
    kf = g.k_full
    rho_full = state.fhat_full.sum(axis=1) * g.dv
    full = -2j * np.pi * kf * potential_coeff(interaction, kf) * rho_full
    if g.n_x % 2 == 0:
        # the lone Nyquist mode has no partner; keep it real as the r2c path does
        full[g.n_x // 2] = full[g.n_x // 2].real
    Fc = sfft.ifft(full) * g.n_x
    return F, float(np.max(np.abs(Fc.imag)))


# --------------------------------------------------------------------------
# CSV tables
# --------------------------------------------------------------------------


def read_two_column_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a (coordinate, value) table with a mandatory header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidArgument(f"{path}: empty table")
    header, body = rows[0], rows[1:]
    try:
        float(header[0])
    except (ValueError, IndexError):
        pass
    else:
        raise InvalidArgument(f"{path}: header row required")
    a, b = [], []
    for lineno, row in enumerate(body, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise InvalidArgument(f"{path}:{lineno}: expected two columns")
        try:
            a.append(float(row[0]))
            b.append(float(row[1]))
        except ValueError as exc:
            raise InvalidArgument(f"{path}:{lineno}: {exc}") from None
    return np.asarray(a), np.asarray(b)


def write_two_column_csv(path: str | Path, header: tuple[str, str], a, b) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(a, b):
            w.writerow([f"{x:.12e}", f"{y:.12e}"])
