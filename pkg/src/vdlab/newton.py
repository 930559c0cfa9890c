"""Newton iteration for the nonlinear Vlasov equation.

f^n = f0 + h^1 + ... + h^n, where h^{n+1} solves the linear problem

    d_t h + v d_x h + F[f^n] d_v h + F[h] d_v f^n = -F[h^n] d_v h^n,
    h^{n+1}(0) = f_i - f0 for n = 0 and 0 otherwise.

Each level uses the Strang splitting of ``sim``.  Over a v-substep the
densities of every level are invariant, so F[f^n] and F[h] are constant on the
substep.  Along the shifted characteristics of F[f^n] the remaining terms are a
pure source and are integrated with the trapezoidal rule (Duhamel form):

    h_post = S_{F[f^n] dt}(h_pre + dt/2 q_pre) + dt/2 q_post,
    q = -F[h] d_v f^n - F[h^n] d_v h^n,

where S_s is the spectral shift v -> v - s.  All levels advance together within
each time step, level n+1 reading the pre- and post-substep states of levels
1..n, so no trajectory has to be stored.
"""
from __future__ import annotations

import csv
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, InvalidArgument, NumericalFailure
from .model import DistributionState, Interaction, VelocityProfile, equilibrium_state
from .norms import NormIndices, hybrid_norm_Z
from .sim import TrajectoryRecord, _RecordBuilder, propagator

N_MAX_LEVELS = 6
POSITIVITY_TOL = 1e-8


def delta_norm(values: np.ndarray, cell: float) -> float:
    """||h||_{L^1} + ||h||_{L^inf}."""
    a = np.abs(values)
    return float(a.sum() * cell + a.max())


def defect_norm(prop, values: np.ndarray, interaction: Interaction) -> float:
    """||F[h] d_v h||_{L^1(dx dv)}."""
    F, _ = prop.force(values, interaction)
    g = prop.grid
    return float(np.abs(F[:, None] * prop.d_v(values)).sum() * g.dx * g.dv)


@dataclass
class NewtonIterate:
    """Increment h^n sampled at output strides, with its size and defect."""

    level: int
    times: np.ndarray
    states: list[DistributionState] = field(repr=False)
    delta: float
    residual: float
    delta_series: np.ndarray = field(repr=False)
    residual_series: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    min_partial_sum: float
    wall_time: float


@dataclass
class NewtonResult:
    iterates: list[NewtonIterate]
    final: list[DistributionState] = field(repr=False)
    record: TrajectoryRecord = field(repr=False)
    norm: str = "L1+Linf"

    @property
    def deltas(self) -> np.ndarray:
        return np.array([it.delta for it in self.iterates])

    @property
    def residuals(self) -> np.ndarray:
        return np.array([it.residual for it in self.iterates])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "delta", "residual", "wall_time"])
            for it in self.iterates:
                w.writerow([it.level, f"{it.delta:.12e}", f"{it.residual:.12e}", f"{it.wall_time:.6e}"])


class _Level:
    """One linear level advanced by the split scheme."""

    def __init__(self, prop, interaction: Interaction, h0: np.ndarray):
        self.prop = prop
        self.interaction = interaction
        self.h = np.array(h0, dtype=float, copy=True)
        self.pre = self.post = None
        self.G = None
        self.dv_pre = self.dv_post = None
        self.clock = 0.0

    def x_half(self) -> None:
        self.h = self.prop.x_advect(self.h)

    def v_substep(self, Fbar, dvf_pre, dvf_post, src_pre=None, src_post=None) -> None:
        """Advance over the v-substep given the background and source at both ends."""
        p = self.prop
        dt = p.dt
        self.pre = self.h
        self.G, _ = p.force(self.h, self.interaction)
        q_pre = -self.G[:, None] * dvf_pre
        q_post = -self.G[:, None] * dvf_post
        if src_pre is not None:
            q_pre = q_pre + src_pre
            q_post = q_post + src_post
        moving = self.h + 0.5 * dt * q_pre
        if Fbar is not None:
            moving = p.v_shift(moving, Fbar * dt)
        self.h = moving + 0.5 * dt * q_post
        self.post = self.h
        self.dv_pre = p.d_v(self.pre)
        self.dv_post = p.d_v(self.post)

    def source(self) -> tuple[np.ndarray, np.ndarray]:
        """-F[h] d_v h at both ends of the last v-substep (F[h] is substep-invariant)."""
        return -self.G[:, None] * self.dv_pre, -self.G[:, None] * self.dv_post


def _background_arrays(background, grid):
    if isinstance(background, VelocityProfile):
        return equilibrium_state(background, grid).values
    if isinstance(background, DistributionState):
        return background.values
    return None


@dataclass
class LinearTrajectory:
    times: np.ndarray
    states: list[DistributionState] = field(repr=False)
    rho: np.ndarray = field(repr=False)


def linearized_step(
    background,
    h0: DistributionState,
    interaction: Interaction,
    horizon: float,
    dt: float | None = None,
    source: Callable[[int], tuple[np.ndarray, np.ndarray]] | None = None,
    stride: int = 1,
    k_out: int = 4,
) -> LinearTrajectory:
    """Solve d_t h + v d_x h + F[fb] d_v h + F[h] d_v fb = S on [0, horizon].

    ``background`` is a homogeneous equilibrium (``VelocityProfile`` or a
    ``DistributionState``), held fixed, or a callable ``n -> (fb_pre, fb_post)``
    returning the background arrays before and after the v-substep of step n.
    ``source`` is an optional callable ``n -> (S_pre, S_post)`` on the same
    substep.  For a homogeneous background and S = 0 this is the linearized
    Vlasov equation around that equilibrium.
    """
    g = h0.grid
    dt = g.dt if dt is None else float(dt)
    n_steps = int(round(horizon / dt))
    if n_steps < 1 or abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise InvalidArgument("horizon must be a positive integer multiple of dt")
    prop = propagator(g, dt)
    level = _Level(prop, interaction, h0.values)
    static = _background_arrays(background, g)
    if static is None and not callable(background):
        raise InvalidArgument("background must be a profile, a state or a callable")
    dv_static = prop.d_v(static) if static is not None else None
    if static is not None:
        F_static, _ = prop.force(static, interaction)
        F_static = F_static if np.any(F_static != 0) else None
    times, states, rho = [], [], []

    def record(n):
        st = DistributionState(g, level.h.copy(), h0.t + n * dt)
        times.append(st.t)
        states.append(st)
        rho.append(st.density_modes()[: k_out + 1])

    record(0)
    for n in range(n_steps):
        level.x_half()
        if static is not None:
            Fbar, d_pre, d_post = F_static, dv_static, dv_static
        else:
            fb_pre, fb_post = background(n)
            Fbar, _ = prop.force(fb_pre, interaction)
            d_pre, d_post = prop.d_v(fb_pre), prop.d_v(fb_post)
        s_pre, s_post = source(n) if source is not None else (None, None)
        level.v_substep(Fbar, d_pre, d_post, s_pre, s_post)
        level.x_half()
        if not np.all(np.isfinite(level.h)):
            raise NumericalFailure("non-finite values in the linear solve", t=h0.t + n * dt)
        if (n + 1) % stride == 0 or n + 1 == n_steps:
            record(n + 1)
    return LinearTrajectory(times=np.asarray(times), states=states, rho=np.asarray(rho))


def level_width(lam: float, n: int) -> float:
    """Shrinking velocity width lam_n = lam (1/2 + 2^{-n-1})."""
    return lam * (0.5 + 2.0 ** (-n - 1))


def newton_solve(
    f_i: DistributionState,
    profile: VelocityProfile,
    interaction: Interaction,
    n_max: int,
    horizon: float,
    dt: float | None = None,
    stride: int = 8,
    norm: str = "L1+Linf",
    indices: NormIndices | None = None,
    k_max_norm: int | None = None,
    tol: float = 0.0,
    k_out: int = 4,
    check_divergence: bool = True,
) -> NewtonResult:
    """Newton scheme around the homogeneous equilibrium ``profile``.

    Levels 1..n_max advance together in time.  delta_n is the sup over the
    output times of ||h^n||_{L^1} + ||h^n||_{L^inf} (``norm="L1+Linf"``) or
    of the gliding norm Z with indices ``indices``, tau = t and velocity width
    lam_n = lam (1/2 + 2^{-n-1}) (``norm="Z"``).  r_n is the sup of
    ||F[h^n] d_v h^n||_{L^1}.  The returned iterates stop at the first level
    with delta_n <= tol; a level whose delta exceeds its predecessor's raises
    ``DivergenceError`` naming that level.
    """
    if not 1 <= n_max <= N_MAX_LEVELS:
        raise InvalidArgument(f"n_max must lie in [1, {N_MAX_LEVELS}]")
    if norm not in ("L1+Linf", "Z"):
        raise InvalidArgument("norm must be 'L1+Linf' or 'Z'")
    if norm == "Z" and indices is None:
        raise InvalidArgument("norm='Z' needs NormIndices")
    g = f_i.grid
    dt = g.dt if dt is None else float(dt)
    n_steps = int(round(horizon / dt))
    if n_steps < 1 or abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise InvalidArgument("horizon must be a positive integer multiple of dt")
    prop = propagator(g, dt)
    f0 = equilibrium_state(profile, g).values
    dv_f0 = prop.d_v(f0)
    h1 = f_i.values - f0
    if not np.any(h1):
        n_max = 1
    levels = [_Level(prop, interaction, h1 if j == 0 else np.zeros_like(f0)) for j in range(n_max)]
    cell = g.dx * g.dv
    t0 = f_i.t

    stored_times: list[float] = []
    stored: list[list[DistributionState]] = [[] for _ in levels]
    deltas: list[list[float]] = [[] for _ in levels]
    resid: list[list[float]] = [[] for _ in levels]
    rhos: list[list[np.ndarray]] = [[] for _ in levels]
    min_sum = [math.inf] * n_max
    finals: list[DistributionState] = []
    rec = _RecordBuilder(k_out)

    def measure(n: int) -> None:
        t = t0 + n * dt
        stored_times.append(t)
        partial = f0.copy()
        for j, lev in enumerate(levels):
            c = _time.perf_counter()
            st = DistributionState(g, lev.h.copy(), t)
            stored[j].append(st)
            if norm == "Z":
                idx = indices.with_(lam=level_width(indices.lam, j + 1), tau=t)
                deltas[j].append(hybrid_norm_Z(st, idx, k_max=k_max_norm).value)
            else:
                deltas[j].append(delta_norm(lev.h, cell))
            resid[j].append(defect_norm(prop, lev.h, interaction))
            rhos[j].append(st.density_modes()[: k_out + 1])
            partial += lev.h
            min_sum[j] = min(min_sum[j], float(partial.min()))
            lev.clock += _time.perf_counter() - c
        state = DistributionState(g, partial, t)
        finals.append(state)
        rec.add(state, interaction)

    measure(0)
    # overflow inside a step is caught by the finiteness check that ends it
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            for lev in levels:
                c = _time.perf_counter()
                lev.x_half()
                lev.clock += _time.perf_counter() - c
            Fbar = None
            d_pre = d_post = dv_f0
            for j, lev in enumerate(levels):
                c = _time.perf_counter()
                if j == 0:
                    lev.v_substep(None, dv_f0, dv_f0)
                else:
                    below = levels[j - 1]
                    s_pre, s_post = below.source()
                    lev.v_substep(Fbar, d_pre, d_post, s_pre, s_post)
                # background of the next level: f^{j+1} = f^j + h^{j+1}
                Fbar = lev.G if Fbar is None else Fbar + lev.G
                d_pre = d_pre + lev.dv_pre
                d_post = d_post + lev.dv_post
                lev.clock += _time.perf_counter() - c
            for lev in levels:
                c = _time.perf_counter()
                lev.x_half()
                lev.clock += _time.perf_counter() - c
            bad = [j for j, lev in enumerate(levels) if not np.all(np.isfinite(lev.h))]
            if bad:
                if bad[0] > 0 and check_divergence:
                    raise DivergenceError(f"Newton level {bad[0] + 1} diverged (non-finite at t={t0 + (n + 1) * dt:g})")
                raise NumericalFailure("non-finite values in a Newton level", t=t0 + n * dt)
            if (n + 1) % stride == 0 or n + 1 == n_steps:
                measure(n + 1)

    times = np.asarray(stored_times)
    iterates: list[NewtonIterate] = []
    for j, lev in enumerate(levels):
        ds = np.asarray(deltas[j])
        rs = np.asarray(resid[j])
        it = NewtonIterate(
            level=j + 1,
            times=times,
            states=stored[j],
            delta=float(ds.max()),
            residual=float(rs.max()),
            delta_series=ds,
            residual_series=rs,
            rho=np.asarray(rhos[j]),
            min_partial_sum=min_sum[j],
            wall_time=lev.clock,
        )
        if check_divergence and iterates and it.delta > iterates[-1].delta and it.delta > tol:
            raise DivergenceError(
                f"Newton level {it.level} grew: delta={it.delta:.3e} > delta_{it.level - 1}={iterates[-1].delta:.3e}"
            )
        iterates.append(it)
        if it.delta <= tol:
            break
    return NewtonResult(iterates=iterates, final=finals, record=rec.build(), norm=norm)


def residual(iterate: NewtonIterate) -> float:
    """r_n = max over stored times of ||F[h^n] d_v h^n||_{L^1}."""
    return iterate.residual


def recompute_residual(iterate: NewtonIterate, interaction: Interaction) -> float:
    """r_n evaluated afresh from the stored states of ``iterate``."""
    if not iterate.states:
        return 0.0
    g = iterate.states[0].grid
    prop = propagator(g, g.dt)
    return max(defect_norm(prop, st.values, interaction) for st in iterate.states)
