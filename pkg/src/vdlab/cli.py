"""Experiment runner.

Configuration is a flat ``key = value`` file with ``#`` comments and dotted
keys (``grid.n_v = 512``).  Every key can also be given as a flag
(``--grid.n_v 512``); flags override the file.  Each run writes its outputs,
``resolved_config.txt`` and ``manifest.txt`` (sha256 of every output) to the
output directory.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 ``--assert`` failure.
"""
from __future__ import annotations

import argparse
import hashlib
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import scipy.fft as sfft

from . import linstab, newton, norms, sim, volterra
from .errors import InsufficientData, InvalidArgument, NumericalFailure, VdlabError
from .model import (
    ATTRACTIVE,
    REPULSIVE,
    Interaction,
    PhaseSpaceGrid,
    Perturbation,
    VelocityProfile,
    equilibrium_state,
    sample_initial,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ASSERT = 0, 1, 2, 3
SUBCOMMANDS = ("stability", "volterra", "simulate", "echo", "newton", "norms", "characteristics")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # float, int, bool, str, or "choice"
    default: Any
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    choices: tuple[str, ...] = ()
    help: str = ""


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _pow2(n):
    return n >= 8 and n & (n - 1) == 0


KEYS: tuple[Key, ...] = (
    Key("profile.kind", "choice", "maxwellian", choices=("maxwellian", "two_stream", "tabulated"), help="equilibrium kind"),
    Key("profile.T", "float", 1.0, _pos, "> 0", help="temperature"),
    Key("profile.v0", "float", 0.0, _nonneg, ">= 0", help="beam speed (two_stream)"),
    Key("profile.file", "str", "", help="two-column CSV (tabulated)"),
    Key("interaction.kind", "choice", "coulomb", choices=("coulomb", "zero", "tabulated")),
    Key("interaction.sign", "choice", "repulsive", choices=("repulsive", "attractive")),
    Key("interaction.A", "float", 1.0 / math.pi, _nonneg, ">= 0"),
    Key("interaction.gamma", "float", 1.0, lambda g: g >= 1, ">= 1"),
    Key("interaction.file", "str", "", help="two-column CSV k, W^(k) (tabulated)"),
    Key("grid.n_x", "int", 32, _pow2, "a power of two >= 8"),
    Key("grid.n_v", "int", 512, _pow2, "a power of two >= 8"),
    Key("grid.V", "float", 0.0, _nonneg, ">= 0 (0 selects |v0| + 6 sqrt(T))"),
    Key("horizon", "float", 20.0, _pos, "> 0"),
    Key("dt", "float", 1.0 / 64, _pos, "> 0"),
    Key("stride", "int", 1, lambda n: n >= 1, ">= 1"),
    Key("k", "int", 1, lambda n: n >= 1, ">= 1", help="mode of the perturbation and of the fits"),
    Key("epsilon", "float", 1e-3, _nonneg, ">= 0", help="perturbation amplitude"),
    Key("k_out", "int", 4, lambda n: n >= 1, ">= 1"),
    Key("filter", "bool", False),
    Key("svg", "bool", False),
    Key("fit.t_start", "float", 0.3, _nonneg, ">= 0"),
    Key("fit.t_end", "float", 2.0, _pos, "> 0"),
    Key("fit.growth", "bool", False, help="fit an exponential growth instead of a damped envelope"),
    Key("stability.lambda", "float", 0.3, _pos, "> 0"),
    Key("stability.k_max", "int", 8, lambda n: n >= 1, ">= 1"),
    Key("stability.kappa", "float", 0.0, _nonneg, ">= 0", help="required kappa"),
    Key("stability.roots", "bool", True),
    Key("echo.l1", "int", 1, lambda n: n >= 1, ">= 1"),
    Key("echo.a1", "float", 1e-4, _nonneg, ">= 0"),
    Key("echo.l2", "int", 3, lambda n: n >= 1, ">= 1"),
    Key("echo.a2", "float", 1e-4, _nonneg, ">= 0"),
    Key("echo.tau2", "float", 4.0, _pos, "> 0"),
    Key("newton.n_max", "int", 4, lambda n: 1 <= n <= newton.N_MAX_LEVELS, f"in [1, {newton.N_MAX_LEVELS}]"),
    Key("newton.stride", "int", 8, lambda n: n >= 1, ">= 1"),
    Key("newton.norm", "choice", "L1+Linf", choices=("L1+Linf", "Z")),
    Key("norm.lambda", "float", 0.05, _nonneg, ">= 0"),
    Key("norm.mu", "float", 0.0, _nonneg, ">= 0"),
    Key("norm.gamma", "float", 0.0, _nonneg, ">= 0"),
    Key("norm.p", "choice", "inf", choices=("1", "2", "inf")),
    Key("norm.tau", "float", 0.0, lambda x: math.isfinite(x), "finite"),
    Key("norm.beta", "float", 0.0, _nonneg, ">= 0"),
    Key("norm.b", "float", 0.0, _nonneg, ">= 0"),
    Key("norm.k_max", "int", 0, _nonneg, ">= 0 (0 keeps every mode)"),
    Key("norm.algebra_pairs", "int", 0, _nonneg, ">= 0"),
    Key("characteristics.gap", "float", 1.0, _pos, "> 0", help="t - tau"),
    Key("characteristics.samples", "int", 16, lambda n: n >= 1, ">= 1"),
    Key("seed", "int", 0, _nonneg, ">= 0"),
    Key("threads", "int", 0, _nonneg, ">= 0 (0 uses every core)"),
    Key("out", "str", "", help="output directory (falls back to $VDL_OUT, then ./vdl_out)"),
    Key("assert", "str", "", help="comma-separated metric checks such as kappa>=0.5"),
)
KEY_MAP = {k.name: k for k in KEYS}


def _format(key: Key, value: Any) -> str:
    if key.kind == "float":
        return repr(float(value))
    if key.kind == "bool":
        return "true" if value else "false"
    return str(value)


def _coerce(key: Key, raw: str, where: str):
    raw = raw.strip()
    try:
        if key.kind == "float":
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
        elif key.kind == "int":
            value = int(raw)
        elif key.kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            value = low in ("true", "1", "yes")
        elif key.kind == "choice":
            if raw not in key.choices:
                raise ConfigError(f"{where}: {key.name} must be one of {', '.join(key.choices)} (got {raw!r})")
            value = raw
        else:
            value = raw
    except ValueError:
        raise ConfigError(f"{where}: {key.name} expects {key.kind} (got {raw!r})") from None
    if key.check is not None and not key.check(value):
        raise ConfigError(f"{where}: {key.name} must be {key.rule} (got {raw})")
    return value


@dataclass
class Assertion:
    metric: str
    op: str
    value: float

    _OPS = {
        ">=": lambda a, b: a >= b,
        "<=": lambda a, b: a <= b,
        ">": lambda a, b: a > b,
        "<": lambda a, b: a < b,
        "==": lambda a, b: a == b,
    }

    @classmethod
    def parse(cls, text: str, where: str) -> "Assertion":
        m = re.fullmatch(r"\s*([A-Za-z_][\w.]*)\s*(>=|<=|==|>|<)\s*(\S+)\s*", text)
        if not m:
            raise ConfigError(f"{where}: cannot parse assertion {text!r} (expected metric>=value)")
        try:
            val = float(m.group(3))
        except ValueError:
            raise ConfigError(f"{where}: assertion threshold {m.group(3)!r} is not a number") from None
        return cls(m.group(1), m.group(2), val)

    def check(self, metrics: dict[str, float]) -> tuple[bool, str]:
        if self.metric not in metrics:
            return False, f"assert {self}: unknown metric (available: {', '.join(sorted(metrics))})"
        got = metrics[self.metric]
        ok = bool(self._OPS[self.op](got, self.value))
        return ok, f"assert {self}: {'ok' if ok else 'FAILED'} (value {got:.6g})"

    def __str__(self) -> str:
        return f"{self.metric}{self.op}{self.value:g}"


@dataclass
class ExperimentConfig:
    subcommand: str
    values: dict[str, Any]
    asserts: list[Assertion] = field(default_factory=list)
    out_dir: Path = Path("vdl_out")

    def __getitem__(self, name: str):
        return self.values[name]

    def resolved_text(self) -> str:
        lines = [f"subcommand = {self.subcommand}"]
        for key in KEYS:
            if key.name in ("out",):
                continue
            lines.append(f"{key.name} = {_format(key, self.values[key.name])}")
        return "\n".join(lines) + "\n"


def read_config_file(path: str | Path) -> list[tuple[int, str, str]]:
    """(line number, key, raw value) triples from a flat config file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except UnicodeDecodeError:
        raise ConfigError(f"config file {path} is not valid UTF-8") from None
    out = []
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        key, raw = body.split("=", 1)
        out.append((no, key.strip(), raw.strip()))
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 rather than argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vdlab", description="Landau damping numerical laboratory")
    p.add_argument("subcommand", nargs="?", help=f"one of {', '.join(SUBCOMMANDS)}")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--assert", dest="asserts", action="append", default=[], metavar="METRIC>=VALUE")
    for key in KEYS:
        if key.name == "assert":
            continue
        hint = key.help or (f"must be {key.rule}" if key.rule else "")
        if key.choices:
            hint = f"{hint} [{'|'.join(key.choices)}]".strip()
        p.add_argument(f"--{key.name}", dest=key.name, default=None, metavar="VALUE",
                       help=f"{hint} (default {_format(key, key.default)})")
    return p


def parse_config(argv: Sequence[str] | None = None) -> ExperimentConfig:
    """Resolve defaults, then the config file, then flags.  Raises ConfigError."""
    args = build_parser().parse_args(argv)
    values = {k.name: k.default for k in KEYS}
    subcommand = None
    asserts: list[Assertion] = []
    if args.config:
        for no, name, raw in read_config_file(args.config):
            where = f"{args.config}:{no}"
            if name == "subcommand":
                subcommand = raw
                continue
            if name not in KEY_MAP:
                raise ConfigError(f"{where}: unknown key {name!r}")
            values[name] = _coerce(KEY_MAP[name], raw, where)
    for key in KEYS:
        raw = getattr(args, key.name, None)
        if raw is not None:
            values[key.name] = _coerce(key, raw, f"--{key.name}")
    if args.subcommand:
        subcommand = args.subcommand
    if subcommand is None:
        raise ConfigError("no subcommand given")
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r} (expected one of {', '.join(SUBCOMMANDS)})")
    for part in filter(None, (s.strip() for s in values["assert"].split(","))):
        asserts.append(Assertion.parse(part, "assert"))
    for text in args.asserts:
        asserts.append(Assertion.parse(text, "--assert"))
    values["assert"] = ",".join(str(a) for a in asserts)
    for name in ("profile.file", "interaction.file"):
        if values[name] and not Path(values[name]).is_file():
            raise ConfigError(f"{name}: file {values[name]!r} does not exist")
    if values["profile.kind"] == "tabulated" and not values["profile.file"]:
        raise ConfigError("profile.file is required for a tabulated profile")
    if values["interaction.kind"] == "tabulated" and not values["interaction.file"]:
        raise ConfigError("interaction.file is required for a tabulated interaction")
    if values["fit.t_end"] <= values["fit.t_start"]:
        raise ConfigError("fit.t_end must exceed fit.t_start")
    out = values["out"] or os.environ.get("VDL_OUT") or "vdl_out"
    return ExperimentConfig(subcommand=subcommand, values=values, asserts=asserts, out_dir=Path(out))


# --------------------------------------------------------------------------
# Builders
# --------------------------------------------------------------------------


def make_profile(cfg: ExperimentConfig) -> VelocityProfile:
    kind = cfg["profile.kind"]
    if kind == "maxwellian":
        return VelocityProfile.maxwellian(cfg["profile.T"])
    if kind == "two_stream":
        return VelocityProfile.two_stream(cfg["profile.T"], cfg["profile.v0"])
    return VelocityProfile.from_csv(cfg["profile.file"])


def make_interaction(cfg: ExperimentConfig) -> Interaction:
    kind = cfg["interaction.kind"]
    if kind == "zero":
        return Interaction.zero()
    sign = REPULSIVE if cfg["interaction.sign"] == "repulsive" else ATTRACTIVE
    if kind == "coulomb":
        return Interaction(sign=sign, A=cfg["interaction.A"], gamma=cfg["interaction.gamma"])
    inter = Interaction.from_csv(cfg["interaction.file"], gamma=cfg["interaction.gamma"])
    return inter if sign == REPULSIVE else inter.flipped()


def make_grid(cfg: ExperimentConfig, profile: VelocityProfile, dt: float | None = None) -> PhaseSpaceGrid:
    dt = cfg["dt"] if dt is None else dt
    if cfg["grid.V"] > 0:
        return PhaseSpaceGrid(n_x=cfg["grid.n_x"], n_v=cfg["grid.n_v"], V=cfg["grid.V"], dt=dt)
    return PhaseSpaceGrid.for_profile(profile, n_x=cfg["grid.n_x"], n_v=cfg["grid.n_v"], dt=dt)


def make_indices(cfg: ExperimentConfig) -> norms.NormIndices:
    p = {"1": 1, "2": 2, "inf": math.inf}[cfg["norm.p"]]
    return norms.NormIndices(lam=cfg["norm.lambda"], mu=cfg["norm.mu"], gamma=cfg["norm.gamma"], p=p,
                             tau=cfg["norm.tau"], beta=cfg["norm.beta"], b=cfg["norm.b"])


# --------------------------------------------------------------------------
# Subcommands: each returns a dict of metrics and writes into ``out``
# --------------------------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def run_stability(cfg: ExperimentConfig, out: Path, threads: int | None) -> dict[str, float]:
    profile, inter = make_profile(cfg), make_interaction(cfg)
    rep = linstab.condL_scan(profile, inter, cfg["stability.lambda"], k_max=cfg["stability.k_max"],
                             kappa_required=cfg["stability.kappa"], with_roots=cfg["stability.roots"],
                             threads=threads)
    rep.to_csv(out / "stability.csv")
    with open(out / "roots.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("k,re_xi,im_xi,decay_rate,frequency,residual\n")
        for r in rep.roots:
            fh.write(f"{r.k},{r.xi.real:.12e},{r.xi.imag:.12e},{r.decay_rate:.12e},{r.frequency:.12e},{r.residual:.12e}\n")
    _write_text(out / "summary.txt", rep.summary() + "\n")
    print(rep.summary())
    growth = max((r.growth_rate for r in rep.roots), default=-math.inf)
    lead = [r for r in rep.roots if r.k == cfg["k"]]
    metrics = {
        "kappa": rep.kappa_est,
        "condition_a": float(rep.condition_a.holds),
        "margin_b": rep.condition_b_margin,
        "n_unstable": float(len(rep.unstable_modes)),
        "growth": growth,
    }
    if lead:
        metrics["rate"] = lead[0].decay_rate
        metrics["frequency"] = lead[0].frequency
    return metrics


def run_volterra(cfg: ExperimentConfig, out: Path, threads: int | None) -> dict[str, float]:
    profile, inter = make_profile(cfg), make_interaction(cfg)
    k = cfg["k"]
    src = volterra.cosine_source(profile, cfg["epsilon"], k=k, mode=k)
    try:
        series = volterra.solve_mode(k, src, cfg["horizon"], cfg["dt"], profile, inter)
    except NumericalFailure as exc:
        part = getattr(exc, "series", None)
        if part is not None:
            part.to_csv(out / f"mode_{k}.csv")
        raise
    series.to_csv(out / f"mode_{k}.csv")
    metrics = _fit_metrics(cfg, series.t, series.amplitude)
    if cfg["svg"]:
        sim.write_svg(out / f"mode_{k}.svg", series.t, {f"|rho^(t,{k})|": series.amplitude}, logy=True,
                      title=f"linear mode k={k}")
    return metrics


def _fit_metrics(cfg: ExperimentConfig, t, amp) -> dict[str, float]:
    window = (cfg["fit.t_start"], cfg["fit.t_end"])
    if cfg["fit.growth"]:
        slope, r2 = volterra.fit_growth(t, amp, window)
        print(f"growth rate {slope:.6g} (R^2={r2:.6f}) on {window}")
        return {"growth": slope, "r2": r2}
    try:
        fit = volterra.fit_decay((t, amp), window)
    except InsufficientData as exc:
        print(f"decay fit skipped: {exc}")
        return {}
    flag = " non-exponential" if fit.non_exponential else ""
    print(f"decay rate {fit.rate:.6g} frequency {fit.frequency:.6g} (R^2={fit.r2:.6f}){flag}")
    return {"rate": fit.rate, "frequency": fit.frequency, "r2": fit.r2}


def _initial(cfg, profile, grid):
    eps = cfg["epsilon"]
    return sample_initial(profile, [Perturbation(cfg["k"], eps)] if eps else [], grid)


def run_simulate(cfg: ExperimentConfig, out: Path, threads: int | None) -> dict[str, float]:
    profile, inter = make_profile(cfg), make_interaction(cfg)
    grid = make_grid(cfg, profile)
    k_out = min(cfg["k_out"], grid.n_x // 2)
    try:
        rec, hist = sim.run(_initial(cfg, profile, grid), inter, cfg["horizon"], cfg["dt"], stride=cfg["stride"],
                            filtered=cfg["filter"], k_out=k_out)
    except NumericalFailure as exc:
        if getattr(exc, "record", None) is not None:
            exc.record.to_csv(out / "trajectory.csv")
        raise
    rec.to_csv(out / "trajectory.csv")
    sim.write_snapshot(out / "final_state.bin", rec.final)
    metrics = {f"{q}_drift": rec.relative_drift(q) for q in ("mass", "l2", "momentum", "energy")}
    metrics.update(_fit_metrics(cfg, rec.times, rec.mode(cfg["k"])) if cfg["k"] <= k_out else {})
    for name, value in sorted(metrics.items()):
        print(f"{name} = {value:.6e}")
    if cfg["svg"]:
        sim.write_svg(out / "modes.svg", rec.times, {f"k={k}": rec.mode(k) for k in range(1, k_out + 1)}, logy=True,
                      title="|rho^(t,k)|")
        drift = {q: np.abs(rec[q] - rec[q][0]) + 1e-300 for q in ("mass", "l2", "energy")}
        sim.write_svg(out / "conservation.svg", rec.times, drift, logy=True, title="conservation drift")
    return metrics


def run_echo(cfg: ExperimentConfig, out: Path, threads: int | None) -> dict[str, float]:
    profile, inter = make_profile(cfg), make_interaction(cfg)
    grid = make_grid(cfg, profile)
    res = sim.echo_experiment(profile, inter, (cfg["echo.l1"], cfg["echo.a1"]),
                              (cfg["echo.l2"], cfg["echo.a2"], cfg["echo.tau2"]), cfg["horizon"], cfg["dt"],
                              stride=cfg["stride"], grid=grid)
    res.record.to_csv(out / "echo_trajectory.csv")
    with open(out / "echo_peaks.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("mode,source_mode,time,predicted,max_time,centroid,amplitude\n")
        for p in res.peaks:
            fh.write(f"{p.mode},{p.source_mode},{p.time:.12e},{p.predicted:.12e},{p.max_time:.12e},"
                     f"{p.centroid:.12e},{p.amplitude:.12e}\n")
    print(res.summary())
    if not res.peaks:
        return {"detected": 0.0}
    p = max(res.peaks, key=lambda q: q.amplitude)
    if cfg["svg"]:
        sim.write_svg(out / "echo.svg", res.record.times, {f"k={p.mode}": res.record.mode(p.mode)}, logy=True,
                      title="echo mode amplitude")
    return {"detected": 1.0, "echo_time": p.time, "echo_error_strides": abs(p.error) / res.stride_time,
            "echo_amplitude": p.amplitude}


def run_newton(cfg: ExperimentConfig, out: Path, threads: int | None) -> dict[str, float]:
    profile, inter = make_profile(cfg), make_interaction(cfg)
    grid = make_grid(cfg, profile)
    res = newton.newton_solve(_initial(cfg, profile, grid), profile, inter, cfg["newton.n_max"], cfg["horizon"],
                              cfg["dt"], stride=cfg["newton.stride"], norm=cfg["newton.norm"],
                              indices=make_indices(cfg), k_max_norm=cfg["norm.k_max"] or None,
                              check_divergence=False)
    with open(out / "newton_levels.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("n,delta,residual,min_partial_sum\n")
        for it in res.iterates:
            fh.write(f"{it.level},{it.delta:.12e},{it.residual:.12e},{it.min_partial_sum:.12e}\n")
    _write_text(out / "newton_timing.txt", "".join(f"level {it.level}: {it.wall_time:.3f} s\n" for it in res.iterates))
    res.record.to_csv(out / "newton_trajectory.csv")
    metrics: dict[str, float] = {"n_levels": float(len(res.iterates))}
    for it in res.iterates:
        print(f"n={it.level} delta={it.delta:.6e} r={it.residual:.6e}")
        metrics[f"delta_{it.level}"] = it.delta
        metrics[f"residual_{it.level}"] = it.residual
    metrics["delta_last"] = res.iterates[-1].delta
    return metrics


def run_norms(cfg: ExperimentConfig, out: Path, threads: int | None) -> dict[str, float]:
    profile = make_profile(cfg)
    grid = make_grid(cfg, profile)
    state = _initial(cfg, profile, grid)
    pert = state - equilibrium_state(profile, grid)
    idx = make_indices(cfg)
    k_max = cfg["norm.k_max"] or None
    z = norms.hybrid_norm_Z(state, idx, k_max=k_max)
    zp = norms.hybrid_norm_Z(pert, idx, k_max=k_max)
    rho = np.fft.fft(state.density()) / grid.n_x
    f_val = norms.algebra_norm_F(rho, idx.lam * idx.tau + idx.mu, idx.gamma)
    lmb = norms.norm_lambda_mu_beta(pert, idx.lam, idx.mu, idx.beta)
    rows = [
        ("Z(f_i)", z.value, z.converged),
        ("Z(f_i-f0)", zp.value, zp.converged),
        ("F(rho_i)", f_val, True),
        ("lambda_mu_beta(f_i-f0)", lmb.value, not lmb.truncation_dominated),
    ]
    metrics = {"z": z.value, "z_perturbation": zp.value, "f": f_val, "lmb": lmb.value}
    if cfg["norm.algebra_pairs"]:
        ratio = algebra_check(cfg["norm.algebra_pairs"], cfg["seed"], idx.lam * idx.tau + idx.mu, idx.gamma)
        rows.append(("max F(gh)/(F(g)F(h))", ratio, ratio <= 1 + 1e-12))
        metrics["algebra_ratio"] = ratio
    with open(out / "norms.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("name,value,ok\n")
        for name, val, ok in rows:
            fh.write(f"{name},{val:.12e},{'true' if ok else 'false'}\n")
            print(f"{name} = {val:.6e}{'' if ok else ' (not converged)'}")
    return metrics


def algebra_check(n_pairs: int, seed: int, w: float, gamma: float, degree: int = 16) -> float:
    """Largest F(gh) / (F(g) F(h)) over random trigonometric polynomial pairs."""
    rng = np.random.default_rng(seed)
    modes = np.arange(-degree, degree + 1)
    prod_modes = np.arange(-2 * degree, 2 * degree + 1)
    worst = 0.0
    for _ in range(n_pairs):
        a = rng.uniform(-1, 1, modes.size) + 1j * rng.uniform(-1, 1, modes.size)
        b = rng.uniform(-1, 1, modes.size) + 1j * rng.uniform(-1, 1, modes.size)
        c = np.convolve(a, b)
        fg = norms.algebra_norm_F(a, w, gamma, modes=modes)
        fh = norms.algebra_norm_F(b, w, gamma, modes=modes)
        worst = max(worst, norms.algebra_norm_F(c, w, gamma, modes=prod_modes) / (fg * fh))
    return worst


def run_characteristics(cfg: ExperimentConfig, out: Path, threads: int | None) -> dict[str, float]:
    profile, inter = make_profile(cfg), make_interaction(cfg)
    grid = make_grid(cfg, profile)
    rec, hist = sim.run(_initial(cfg, profile, grid), inter, cfg["horizon"], cfg["dt"], stride=cfg["stride"],
                        k_out=min(cfg["k_out"], grid.n_x // 2))
    gap = cfg["characteristics.gap"]
    n = cfg["characteristics.samples"]
    xs = np.arange(n) / n
    vs = np.linspace(-2.0, 2.0, n) * math.sqrt(profile.T if profile.kind != "tabulated" else 1.0)
    taus = np.arange(0.0, cfg["horizon"] - gap + 1e-12, max(gap, cfg["horizon"] / 16))
    worst = 0.0
    with open(out / "scattering.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("t,tau,deviation,deviation_over_min_gap_1\n")
        for tau in taus:
            t = tau + gap
            dev = sim.scattering_deviation(hist, t, tau, xs, vs).sup
            worst = max(worst, dev)
            fh.write(f"{t:.12e},{tau:.12e},{dev:.12e},{dev / min(gap, 1.0):.12e}\n")
    print(f"max scattering deviation {worst:.6e} over {taus.size} windows of length {gap:g}")
    return {"deviation": worst}


RUNNERS = {
    "stability": run_stability,
    "volterra": run_volterra,
    "simulate": run_simulate,
    "echo": run_echo,
    "newton": run_newton,
    "norms": run_norms,
    "characteristics": run_characteristics,
}


def write_manifest(out: Path) -> None:
    lines = []
    for path in sorted(out.iterdir()):
        if path.name == "manifest.txt" or not path.is_file():
            continue
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        lines.append(f"{digest}  {path.stat().st_size}  {path.name}")
    _write_text(out / "manifest.txt", "\n".join(lines) + "\n")


def dispatch(cfg: ExperimentConfig) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "resolved_config.txt", cfg.resolved_text())
    threads = cfg["threads"] or (os.cpu_count() or 1)
    code = EXIT_OK
    try:
        with sfft.set_workers(threads):
            metrics = RUNNERS[cfg.subcommand](cfg, out, threads)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        write_manifest(out)
        return EXIT_NUMERICAL
    except (InvalidArgument, InsufficientData) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        write_manifest(out)
        return EXIT_CONFIG
    lines = [f"{k} = {v:.12e}" for k, v in sorted(metrics.items())]
    _write_text(out / "metrics.txt", "\n".join(lines) + "\n")
    for a in cfg.asserts:
        ok, msg = a.check(metrics)
        print(msg)
        if not ok:
            code = EXIT_ASSERT
    write_manifest(out)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"vdlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VdlabError as exc:
        print(f"vdlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return dispatch(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
