"""Scenario configs, experiments and the ``nonlocal-lab`` command line.

A scenario is a flat sectioned ``key = value`` file with sections
``[model] [grid] [forcing] [exterior] [stepper] [experiment]``. Every
experiment returns an :class:`ExperimentReport` whose text form is a pure
function of the config bytes and the seed.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import itertools
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import integrate

from .degiorgi import TLIParams, exponent_ladder, ladder_from_field, smallest_collapsing_N, tli_iterate
from .errors import ConfigurationError, InadmissibleExponents, KernelClassViolation, NonlocalLabError
from .field import ExteriorData, Field, Grid
from .geometry import Cylinder, SpaceTimePoint
from .model import (
    ForcingSpec,
    ModelParams,
    derive_exponents,
    kernel_preset,
    nonlinearity_preset,
    perturbed_kernel,
    rough_symmetric_table,
    validate_kernel,
    validate_nonlinearity,
)
from .norms import (
    NormReport,
    caccioppoli_sides,
    campanato_excess,
    cylinder_points,
    decay_exponent_fit,
    forcing_field,
    level_set_ledger,
    mixed_norm,
    tail,
    v2s_norm,
)
from .operator import assemble_weights, discrete_eigenvalue
from .solver import IVProblem, StepperConfig, cfl_limit, solve

SECTIONS = ("model", "grid", "forcing", "exterior", "stepper", "experiment")

DEFAULTS = {
    "model": {"n": "1", "s": "0.5", "lam": "1.0", "kernel": "constant", "nonlinearity": "identity"},
    "grid": {"half_width": "4.0", "cells": "64", "dt": "auto", "t_start": "0.0", "t_end": "0.5"},
    "forcing": {"kind": "zero", "amplitude": "1.0", "width": "0.5", "q": "inf", "r": "inf"},
    "exterior": {"kind": "zero", "value": "0.0", "amplitude": "1.0", "p": "1.0"},
    "stepper": {"scheme": "explicit", "cfl_fraction": "0.9", "picard_tol": "1e-12",
                "picard_max_iters": "200", "quadrature_order": "4", "snapshot_stride": "1"},
    "experiment": {"kind": "solve", "initial": "gaussian", "initial_amplitude": "1.0",
                   "initial_width": "0.5", "mode": "1", "seed": "0"},
}

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2


def _float(text):
    return float(str(text).strip())


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


# scenarios ------------------------------------------------------------------------

@dataclass
class Scenario:
    sections: dict
    text: str
    seed: int = 0
    source: str | None = None

    @classmethod
    def from_text(cls, text, seed=None, source=None):
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"cannot parse scenario: {exc}") from exc
        unknown = [s for s in cp.sections() if s not in SECTIONS]
        if unknown:
            raise ConfigurationError(f"unknown sections {unknown}")
        sections = {}
        for name in SECTIONS:
            merged = dict(DEFAULTS[name])
            if cp.has_section(name):
                merged.update(cp[name])
            sections[name] = merged
        file_seed = int(sections["experiment"]["seed"])
        return cls(sections, text, file_seed if seed is None else int(seed), source)

    @classmethod
    def load(cls, path, seed=None):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read {path}: {exc}") from exc
        return cls.from_text(text, seed, str(path))

    @property
    def hash(self):
        return hashlib.sha256(self.text.encode()).hexdigest()

    def get(self, section, key, default=None):
        val = self.sections[section].get(key.lower())
        return default if val is None else val

    def number(self, section, key, default=None):
        val = self.get(section, key, default)
        if val is None:
            raise ConfigurationError(f"[{section}] {key} is required")
        try:
            return _float(val)
        except ValueError as exc:
            raise ConfigurationError(f"[{section}] {key} = {val!r} is not a number") from exc

    def numbers(self, section, key, default=None):
        val = self.get(section, key, default)
        if val is None:
            raise ConfigurationError(f"[{section}] {key} is required")
        try:
            return _floats(val)
        except ValueError as exc:
            raise ConfigurationError(f"[{section}] {key} = {val!r} is not a list of numbers") from exc

    def _prefixed(self, section, prefix):
        out = {}
        for key, val in self.sections[section].items():
            if key.startswith(prefix):
                try:
                    out[key[len(prefix):]] = _float(val)
                except ValueError:
                    out[key[len(prefix):]] = val
        return out

    # builders --------------------------------------------------------------------

    def params(self):
        return ModelParams(int(self.number("model", "n")), self.number("model", "s"), self.number("model", "lam"))

    def kernel(self):
        kp = self._prefixed("model", "kernel_")
        if self.get("model", "kernel") in ("rough", "jump"):
            kp.setdefault("seed", float(self.seed))
        return kernel_preset(self.get("model", "kernel"), **kp)

    def nonlinearity(self):
        kp = self._prefixed("model", "phi_")
        kp.setdefault("lam", self.number("model", "lam"))
        return nonlinearity_preset(self.get("model", "nonlinearity"), **kp)

    def grid(self, dt=None):
        n = int(self.number("model", "n"))
        g = self.sections["grid"]
        cells = int(_float(g["cells"]))
        hw = _float(g["half_width"])
        t0, t1 = _float(g["t_start"]), _float(g["t_end"])
        if dt is None:
            dt = 1.0 if g["dt"].strip() == "auto" else _float(g["dt"])
        return Grid((-hw,) * n, (cells,) * n, 2 * hw / cells, dt, t0, t1)

    def forcing(self):
        f = self.sections["forcing"]
        kind = f["kind"].strip()
        amp, width = _float(f["amplitude"]), _float(f["width"])
        q, r = _float(f["q"]), _float(f["r"])
        if kind == "zero":
            return ForcingSpec(None, q, r)
        if kind == "constant":
            return ForcingSpec(amp, q, r)
        if kind == "gaussian":
            return ForcingSpec(lambda p, t: amp * np.exp(-np.sum(p * p, axis=1) / width ** 2), q, r)
        if kind == "sine":
            return ForcingSpec(lambda p, t: amp * np.sin(np.pi * p[:, 0] / width) * np.cos(t), q, r)
        raise ConfigurationError(f"unknown forcing kind {kind!r}")

    def exterior(self):
        e = self.sections["exterior"]
        kind = e["kind"].strip()
        if kind == "zero":
            return ExteriorData.zero()
        if kind == "constant":
            return ExteriorData.constant(_float(e["value"]))
        if kind == "power_decay":
            n = int(self.number("model", "n"))
            return ExteriorData.power_decay(_float(e["amplitude"]), _float(e["p"]), (0.0,) * n)
        if kind == "periodic":
            return ExteriorData.periodic()
        raise ConfigurationError(f"unknown exterior kind {kind!r}")

    def stepper(self):
        st = self.sections["stepper"]
        return StepperConfig(st["scheme"].strip(), _float(st["cfl_fraction"]), _float(st["picard_tol"]),
                             int(_float(st["picard_max_iters"])), int(_float(st["quadrature_order"])))

    @property
    def snapshot_stride(self):
        return int(self.number("stepper", "snapshot_stride"))

    def initial(self, grid, rng=None):
        ex = self.sections["experiment"]
        kind = ex["initial"].strip()
        amp, width = _float(ex["initial_amplitude"]), _float(ex["initial_width"])
        p = grid.points()
        if kind == "zero":
            return np.zeros(grid.size)
        if kind == "gaussian":
            return amp * np.exp(-np.sum(p * p, axis=1) / width ** 2)
        if kind == "cos":
            return amp * np.cos(_float(ex["mode"]) * p[:, 0])
        if kind == "abs":
            return amp * np.sqrt(np.abs(p[:, 0]))
        if kind == "random":
            rng = rng or np.random.default_rng(self.seed)
            out = np.zeros(grid.size)
            for _ in range(3):
                a = rng.uniform(-amp, amp)
                c = rng.uniform(-1.0, 1.0, size=grid.n)
                out += a * np.exp(-np.sum((p - c) ** 2, axis=1) / width ** 2)
            return out
        raise ConfigurationError(f"unknown initial data {kind!r}")


def solve_scenario(sc, u0=None, forcing=None, A=None, W=None, stride=None, validate=True):
    """Build the problem described by ``sc`` and march it; returns the solution field."""
    params = sc.params()
    g = sc.grid()
    ext = sc.exterior()
    config = sc.stepper()
    A = A or sc.kernel()
    if W is None:
        W = assemble_weights(g, params, config.quadrature_order, periodic=ext.is_periodic)
    problem = IVProblem(params, A, sc.nonlinearity(), sc.initial(g) if u0 is None else u0, ext,
                        sc.forcing() if forcing is None else forcing, g, validate=validate)
    if sc.get("grid", "dt").strip() == "auto":
        g = _auto_dt(problem, config, W)
        problem.grid = g
    return solve(problem, config, snapshot_stride=stride or sc.snapshot_stride, W=_rebind(W, g))


def _auto_dt(problem, config, W):
    g = problem.grid
    span = g.t_end - g.t_start
    if config.scheme == "explicit":
        dt_max = cfl_limit(problem, config, W)
    else:
        dt_max = g.h ** (2 * problem.params.s)
    steps = max(1, math.ceil(span / dt_max))
    return g.with_time(dt=span / steps)


def _rebind(W, g):
    if W.grid == g:
        return W
    W.grid = g
    return W


# reports ----------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    bound: float
    relation: str
    passed: bool

    @classmethod
    def le(cls, name, value, bound):
        return cls(name, float(value), float(bound), "<=", bool(value <= bound))

    @classmethod
    def ge(cls, name, value, bound):
        return cls(name, float(value), float(bound), ">=", bool(value >= bound))

    @classmethod
    def info(cls, name, value):
        return cls(name, float(value), math.nan, "info", True)


@dataclass
class ExperimentReport:
    experiment: str
    scenario_hash: str
    seed: int
    norms: list = field(default_factory=list)
    fitted: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_text(self):
        lines = [f"experiment = {self.experiment}", f"scenario_sha256 = {self.scenario_hash}",
                 f"seed = {self.seed}", f"passed = {str(self.passed).lower()}", "", "[fitted]"]
        for k in sorted(self.fitted):
            lines.append(f"{k} = {_fmt(self.fitted[k])}")
        lines += ["", "[checks]"]
        for c in self.checks:
            state = "pass" if c.passed else "FAIL"
            lines.append(f"{c.name} = {_fmt(c.value)} {c.relation} {_fmt(c.bound)} : {state}")
        lines += ["", "[norms]"]
        lines += [nr.to_text() for nr in self.norms]
        lines += ["", "[tables]"]
        lines += [f"{name}.csv" for name in sorted(self.tables)]
        return "\n".join(lines) + "\n"

    def write(self, outdir):
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{self.experiment}_report.txt").write_text(self.to_text())
        for name, text in self.tables.items():
            (out / f"{name}.csv").write_text(text)


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv(header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


# baselines ----------------------------------------------------------------------------

def default_baseline_path():
    return Path(str(resources.files("nonlocal_lab") / "data" / "baselines.ini"))


def load_baselines(path=None):
    cp = configparser.ConfigParser(interpolation=None)
    p = Path(path) if path is not None else default_baseline_path()
    if p.exists():
        cp.read(p)
    return cp


def baseline(section, key, path=None):
    cp = load_baselines(path)
    if cp.has_option(section, key):
        return cp.get(section, key)
    return None


def update_baselines(updates, path=None):
    """Write ``{section: {key: value}}`` into the baselines file."""
    p = Path(path) if path is not None else default_baseline_path()
    cp = load_baselines(p)
    for section, items in updates.items():
        if not cp.has_section(section):
            cp.add_section(section)
        for k, v in items.items():
            cp.set(section, k, _fmt(v))
    with open(p, "w") as fh:
        cp.write(fh)
    return p


# normalisation ------------------------------------------------------------------------

def normalize_to_unit_cylinder(fld, z0, rho0, forcing=None):
    """``u~(x, t) = u(rho0 x + x0, rho0^(2s) t + t0)`` and ``f~ = rho0^(2s) f(...)``.

    Returns ``(field, forcing)``; the forcing is ``None`` when not supplied.
    """
    z0 = z0 if isinstance(z0, SpaceTimePoint) else SpaceTimePoint(*z0)
    s = fld.s
    if s is None:
        raise ConfigurationError("field carries no fractional order")
    g = fld.grid
    x0 = np.asarray(z0.x)
    ts = rho0 ** (2 * s)
    lower = tuple((np.asarray(g.lower) - x0) / rho0)
    times = (fld.times - z0.t) / ts
    t_start = (g.t_start - z0.t) / ts
    t_end = max((g.t_end - z0.t) / ts, times[-1])
    if not t_end > t_start:
        t_end = t_start + g.dt / ts
    ng = Grid(lower, g.cells, g.h / rho0, g.dt / ts, t_start, t_end)
    ext = fld.exterior
    if ext.kind in ("zero", "constant", "periodic"):
        new_ext = ext
    else:
        new_ext = ExteriorData.callback(lambda y, t: fld.exterior_values(rho0 * np.asarray(y) + x0, ts * t + z0.t),
                                        ext.growth if ext.growth is not None else -ext.p)
    out = Field(ng, fld.values, times, new_ext, fld.stride, s)
    if forcing is None:
        return out, None
    ff = forcing_field(forcing, fld)
    nf = Field(ng, ts * ff.values, times, None, fld.stride, s)
    return out, ForcingSpec(nf, forcing.q, forcing.r)


# experiments ---------------------------------------------------------------------------

def _center(sc, key="center"):
    n = int(sc.number("model", "n"))
    c = sc.numbers("experiment", key, " ".join(["0"] * n))
    if len(c) != n:
        raise ConfigurationError(f"[experiment] {key} needs {n} coordinates")
    return tuple(c)


def _t0(sc, fld):
    return sc.number("experiment", "t0", repr(float(fld.times[-1])))


def forcing_scale_term(rho0, f_norm, params, q, r):
    """``rho0^(2s - (n/q + 2s/r)) |f|``."""
    n, s = params.n, params.s
    expo = 2 * s - (n / q + 2 * s / r)
    return rho0 ** expo * f_norm


def run_boundedness(sc, baseline_path=None):
    params = sc.params()
    forcing = sc.forcing()
    if not forcing.boundedness_admissible(params):
        raise InadmissibleExponents(
            f"q={forcing.q}, r={forcing.r} violate n/(2qs) + 1/r < 1", "n/(2qs) + 1/r < 1")
    family = int(sc.number("experiment", "family_size", "1"))
    rho0 = sc.number("experiment", "rho0", "1.0")
    x0 = _center(sc)
    rep = ExperimentReport("boundedness", sc.hash, sc.seed)
    rows = []
    worst = 0.0
    g0 = sc.grid()
    for j in range(family):
        if family > 1:
            rng = np.random.default_rng(sc.seed + j)
            u0 = sc.initial(g0, rng) if sc.get("experiment", "initial") == "random" else None
            fj = forcing.scaled(float(rng.uniform(0.0, 2.0)))
        else:
            u0, fj = None, forcing
        fld = solve_scenario(sc, u0=u0, forcing=fj)
        z0 = SpaceTimePoint(x0, _t0(sc, fld))
        vals_half, _, _ = cylinder_points(fld, Cylinder(z0, rho0 / 2, (rho0 / 2) ** (2 * params.s)))
        sup = float(vals_half.max())
        vals, _, _ = cylinder_points(fld, Cylinder.standard(z0, rho0, params.s))
        l2 = math.sqrt(float(np.mean(vals ** 2)))
        tr = tail(fld, z0, rho0 / 2, rho0 ** (2 * params.s))
        f_norm = mixed_norm(forcing_field(fj, fld), Cylinder.standard(z0, rho0, params.s), fj.q, fj.r)
        fterm = forcing_scale_term(rho0, f_norm, params, fj.q, fj.r)
        rhs = l2 + tr.value + fterm
        if rhs > 0:
            const = max(sup, 0.0) / rhs
        else:
            const = 0.0 if sup <= 0 else math.inf
        worst = max(worst, const)
        rows.append((j, sup, l2, tr.value, f_norm, fterm, rhs, const))
        rep.norms.append(NormReport("boundedness", const,
                                    {"sup": sup, "l2_average": l2, "tail": tr.value, "forcing_term": fterm,
                                     "rhs": rhs},
                                    Cylinder.standard(z0, rho0, params.s), {"member": j}))
        rep.norms.append(tr)
    rep.fitted["implied_constant_max"] = worst
    rep.fitted["family_size"] = family
    rep.tables["boundedness"] = _csv(("member", "sup", "l2_average", "tail", "forcing_norm", "forcing_term",
                                      "rhs", "constant"), rows)
    frozen = baseline("boundedness", "constant_max", baseline_path)
    if frozen is not None and family > 1:
        rep.checks.append(Check.le("implied_constant_max", worst, float(frozen) * (1 + 1e-6)))
    else:
        rep.checks.append(Check.info("implied_constant_max", worst))
    return rep


def comparison_gaps(sc, radii, forcing=None):
    """Mean-square gaps ``u - v`` on ``Q_{3R}`` and forcing norms, one per radius, plus ``t0``."""
    params = sc.params()
    forcing = sc.forcing() if forcing is None else forcing
    u = solve_scenario(sc, forcing=forcing, stride=1)
    g = u.grid
    W = u.weights
    x0 = _center(sc)
    t0 = _t0(sc, u)
    out = []
    for R in radii:
        tau = (3 * R) ** (2 * params.s)
        k0 = int(round((t0 - tau - g.t_start) / g.dt))
        if k0 < 0:
            raise ConfigurationError(f"Q_3R for R = {R} starts before the stored range")
        start = g.t_start + k0 * g.dt
        tau = t0 - start
        mask = np.linalg.norm(g.points() - np.asarray(x0), axis=1) < 3 * R
        ext = u.exterior
        vp = IVProblem(params, sc.kernel(), sc.nonlinearity(), u.values_at_time(start), ext,
                       ForcingSpec(None, forcing.q, forcing.r), g, validate=False)
        v = solve(vp, sc.stepper(), t_end=t0, t_start=start, W=W, mask=mask,
                  prescribed=lambda t: u.values_at_time(t))
        kk = u.time_index(start)
        diff = Field(g, u.values[kk:kk + v.nslices] - v.values, v.times, ExteriorData.zero(), 1, params.s)
        cyl = Cylinder(SpaceTimePoint(x0, t0), 3 * R, tau)
        vals, _, _ = cylinder_points(diff, cyl)
        gap = float(np.mean(vals ** 2))
        f_norm = mixed_norm(forcing_field(forcing, u), cyl, forcing.q, forcing.r)
        out.append((R, tau, gap, f_norm))
    return out, t0


def run_comparison_scaling(sc, radii=None):
    radii = radii if radii is not None else sc.numbers("experiment", "radii", "0.25 0.5 1.0")
    if len(radii) < 3:
        raise ConfigurationError("comparison scaling needs at least three radii")
    params = sc.params()
    forcing = sc.forcing()
    der = derive_exponents(forcing.q, forcing.r, params)
    gamma = der.gamma
    rows, t0 = comparison_gaps(sc, radii, forcing)
    rep = ExperimentReport("comparison", sc.hash, sc.seed)
    ratios = []
    for R, tau, gap, fn in rows:
        ratio = gap / fn ** 2 if fn > 0 else (0.0 if gap == 0 else math.inf)
        ratios.append(ratio)
        rep.norms.append(NormReport("comparison_gap", gap, {"forcing_norm": fn, "ratio": ratio},
                                    Cylinder(SpaceTimePoint(_center(sc), t0), 3 * R, tau), {"R": R}))
    rep.tables["comparison"] = _csv(("R", "tau", "gap", "forcing_norm", "ratio"),
                                    [r + (q,) for r, q in zip(rows, ratios)])
    rep.fitted["gamma"] = gamma
    tol = sc.number("experiment", "tolerance", "0.2")
    if all(r[2] == 0 for r in rows):
        rep.fitted["slope"] = "degenerate: zero gaps"
        rep.checks.append(Check.info("max_gap", 0.0))
        return rep
    slope = float(np.polyfit(np.log(radii), np.log(ratios), 1)[0])
    rep.fitted["slope"] = slope
    rep.checks.append(Check.le("slope_minus_gamma", abs(slope - gamma), tol))
    return rep


def _decay_alpha(fld, centers, radii, t0, s):
    fits = []
    for c in centers:
        fits.append(decay_exponent_fit(fld, SpaceTimePoint(c, t0), radii, s))
    good = [f.slope for f in fits if not f.degenerate]
    return (min(good) if good else math.nan), fits


def _centers(sc):
    n = int(sc.number("model", "n"))
    flat = sc.numbers("experiment", "centers", " ".join(["0"] * n))
    if len(flat) % n:
        raise ConfigurationError("[experiment] centers must list whole points")
    return [tuple(flat[i:i + n]) for i in range(0, len(flat), n)]


def run_decay_regression(sc, centers=None, radii=None, A=None):
    params = sc.params()
    forcing = sc.forcing()
    centers = centers if centers is not None else _centers(sc)
    radii = radii if radii is not None else sc.numbers("experiment", "radii", "0.125 0.25 0.5")
    fld = solve_scenario(sc, A=A)
    t0 = _t0(sc, fld)
    alpha, fits = _decay_alpha(fld, centers, radii, t0, params.s)
    rep = ExperimentReport("decay", sc.hash, sc.seed)
    cap = min(2 * params.s - (params.n / forcing.q + 2 * params.s / forcing.r), 1.0)
    rep.fitted["alpha_hat_min"] = alpha
    rep.fitted["holder_cap"] = cap
    rows = []
    for c, f in zip(centers, fits):
        rows.append((" ".join(_fmt(v) for v in c), f.slope, f.residual, f.verdict))
        rep.norms.append(NormReport("decay_fit", f.slope, {"residual": f.residual,
                                                           "excess": [float(e) for e in f.excess]},
                                    None, {"center": list(c), "t0": t0, "radii": list(radii),
                                           "verdict": f.verdict}))
    rep.tables["decay"] = _csv(("center", "alpha_hat", "residual", "verdict"), rows)
    if all(f.degenerate for f in fits):
        rep.fitted["verdict"] = "degenerate: zero excess"
        return rep
    floor = sc.get("experiment", "alpha_floor")
    if floor is not None:
        rep.checks.append(Check.ge("alpha_hat_min", alpha, _float(floor)))
    else:
        rep.checks.append(Check.info("alpha_hat_min", alpha))
    return rep


def perturbation_kernel(sc, base, delta):
    g = sc.grid()
    m = int(sc.number("experiment", "noise_cells", "16"))
    width = (g.upper[0] - g.lower[0]) / m
    table = rough_symmetric_table(m, sc.seed)
    return perturbed_kernel(base, delta, table, g.lower[0], width)


def run_perturbation_study(sc, delta_grid=None):
    delta_grid = delta_grid if delta_grid is not None else sc.numbers("experiment", "delta_grid",
                                                                      "0 0.01 0.05 0.2")
    params = sc.params()
    base = sc.kernel()
    if base.claimed_class != "L1":
        raise ConfigurationError("the base kernel must be translation invariant")
    centers = _centers(sc)
    radii = sc.numbers("experiment", "radii", "0.125 0.25 0.5")
    g = sc.grid()
    dom = list(zip(g.lower, g.upper))
    rep = ExperimentReport("perturb", sc.hash, sc.seed)
    rows = []
    for d in delta_grid:
        A = perturbation_kernel(sc, base, d)
        kr = validate_kernel(A, params, 512, domain=dom, times=(g.t_start, g.t_end))
        if not kr.passed:
            raise KernelClassViolation(f"delta = {d} pushes the kernel out of [1/lam, lam]: "
                                       f"range [{kr.a_min:.4g}, {kr.a_max:.4g}]")
        fld = solve_scenario(sc, A=A)
        alpha, fits = _decay_alpha(fld, centers, radii, _t0(sc, fld), params.s)
        rows.append((d, alpha))
        rep.norms.append(NormReport("perturbation", alpha, {"fits": [f.slope for f in fits]}, None,
                                    {"delta": d}))
    alphas = [a for _, a in rows]
    trend = all(b <= a + 1e-12 for a, b in zip(alphas, alphas[1:]))
    rep.fitted["nonincreasing_trend"] = trend
    rep.tables["perturbation"] = _csv(("delta", "alpha_hat"), rows)
    for d, a in rows:
        rep.checks.append(Check.info(f"alpha_hat_delta_{d:g}", a))
    return rep


def continuum_constant(s):
    """``int_R (1 - cos z) |z|^(-1-2s) dz`` by adaptive quadrature."""
    near, _ = integrate.quad(lambda z: (1 - math.cos(z)) * z ** (-1 - 2 * s), 0.0, 1.0, epsabs=1e-14, limit=200)
    cos_tail, _ = integrate.quad(lambda z: z ** (-1 - 2 * s), 1.0, math.inf, weight="cos", wvar=1.0)
    return 2.0 * (near + 1.0 / (2 * s) - cos_tail)


def spectral_mode_errors(fld, k, mu, scheme):
    """Max deviation of each snapshot from the scalar recurrence ``a_m cos(k x)``."""
    x = fld.grid.points()[:, 0]
    base = fld.values[0].ravel()
    amp0 = float(np.dot(base, np.cos(k * x)) / np.dot(np.cos(k * x), np.cos(k * x))) if k else float(base[0])
    dt = fld.grid.dt
    errs = []
    a = amp0
    for m in range(fld.nslices):
        if m:
            for _ in range(fld.stride):
                a = a * (1 - dt * mu) if scheme == "explicit" else a / (1 + dt * mu)
        errs.append(float(np.max(np.abs(fld.values[m].ravel() - a * np.cos(k * x)))))
    return errs


def run_spectral_validation(sc):
    params = sc.params()
    A = sc.kernel()
    phi = sc.nonlinearity()
    ext = sc.exterior()
    if params.n != 1 or not ext.is_periodic or not phi.is_identity or not A.is_constant:
        raise ConfigurationError("spectral validation needs n = 1, a periodic exterior, Phi = id and constant A")
    g = sc.grid()
    L = g.upper[0] - g.lower[0]
    k = sc.number("experiment", "mode", "1")
    if abs(k * L / (2 * math.pi) - round(k * L / (2 * math.pi))) > 1e-9:
        raise ConfigurationError(f"cos({k:g} x) is not periodic on a box of length {L:g}")
    order = int(sc.number("stepper", "quadrature_order"))
    W = assemble_weights(g, params, order, periodic=True)
    a_val = A.params.get("value", 1.0)
    mu = discrete_eigenvalue(W, A, k)
    oracle = a_val * continuum_constant(params.s) * abs(k) ** (2 * params.s)
    rel = abs(mu - oracle) / oracle if oracle else abs(mu)
    rep = ExperimentReport("spectral", sc.hash, sc.seed)
    rep.fitted["mu_discrete"] = mu
    rep.fitted["mu_continuum"] = oracle
    rep.fitted["relative_error"] = rel
    rep.checks.append(Check.le("eigenvalue_relative_error", rel, sc.number("experiment", "tolerance", "0.02")))
    rows = []
    cells = g.cells[0]
    for factor in (4, 2, 1):
        if cells % factor or cells // factor < 4:
            continue
        gc = Grid(g.lower, (cells // factor,), g.h * factor, g.dt, g.t_start, g.t_end)
        Wc = assemble_weights(gc, params, order, periodic=True)
        mc = discrete_eigenvalue(Wc, A, k)
        rows.append((cells // factor, gc.h, mc, abs(mc - oracle) / oracle))
    rep.tables["spectral_refinement"] = _csv(("cells", "h", "mu", "relative_error"), rows)
    steps = int(sc.number("experiment", "steps", "100"))
    config = sc.stepper()
    x = g.points()[:, 0]
    problem = IVProblem(params, A, phi, np.cos(k * x), ext, ForcingSpec(None), g, validate=False)
    dt = g.dt if sc.get("grid", "dt").strip() != "auto" else 0.5 * cfl_limit(problem, config, W)
    g2 = g.with_time(dt=dt, t_end=g.t_start + steps * dt)
    problem.grid = g2
    fld = solve(problem, config, W=_rebind(W, g2))
    errs = spectral_mode_errors(fld, k, mu, config.scheme)
    rep.fitted["mode_steps"] = steps
    rep.checks.append(Check.le("mode_recurrence_error", max(errs), 1e-10))
    rep.tables["spectral_mode"] = _csv(("step", "time", "error"),
                                       [(m, t, e) for m, (t, e) in enumerate(zip(fld.times, errs))])
    const = IVProblem(params, A, phi, np.ones(g.size), ext, ForcingSpec(None), g2, validate=False)
    cf = solve(const, config, W=W)
    drift = float(np.max(np.abs(cf.values - 1.0)))
    rep.checks.append(Check.le("constant_mode_drift", drift, 0.0))
    rep.norms.append(NormReport("eigenvalue", mu, {"continuum": oracle, "relative_error": rel}, None,
                                {"k": k, "cells": cells, "quadrature_order": order}))
    return rep


def run_caccioppoli(sc, fld=None, baseline_path=None):
    params = sc.params()
    fld = fld or solve_scenario(sc)
    z0 = SpaceTimePoint(_center(sc), _t0(sc, fld))
    R = sc.number("experiment", "R", "1.0")
    rho = sc.number("experiment", "rho", repr(R / 2))
    T2 = sc.number("experiment", "T2", repr(0.9 * R ** (2 * params.s)))
    T1 = sc.number("experiment", "T1", repr(T2 / 2))
    k = sc.number("experiment", "k", "0.0")
    cr = caccioppoli_sides(fld, k, rho, R, T1, T2, z0, sc.forcing(), params)
    rep = ExperimentReport("caccioppoli", sc.hash, sc.seed)
    rep.fitted["ratio"] = cr.ratio
    rep.norms.append(NormReport("caccioppoli", cr.ratio, dict(cr.terms, lhs=cr.lhs, rhs=cr.rhs),
                                Cylinder(z0, R, T2), {"k": k, "rho": rho, "T1": T1, "threshold": cr.threshold}))
    frozen = baseline("caccioppoli", "ratio_max", baseline_path)
    if frozen is not None:
        rep.checks.append(Check.le("lhs_over_rhs", cr.ratio, float(frozen) * (1 + 1e-6)))
    else:
        rep.checks.append(Check.info("lhs_over_rhs", cr.ratio))
    return rep


def run_norms(sc, fld=None):
    params = sc.params()
    fld = fld or solve_scenario(sc)
    z0 = SpaceTimePoint(_center(sc), _t0(sc, fld))
    rho = sc.number("experiment", "rho", "1.0")
    tau = sc.number("experiment", "tau", repr(rho ** (2 * params.s)))
    cyl = Cylinder(z0, rho, tau)
    forcing = sc.forcing()
    rep = ExperimentReport("norms", sc.hash, sc.seed)
    ff = forcing_field(forcing, fld)
    q_r = (forcing.q, forcing.r)
    rep.norms.append(NormReport("forcing_mixed_norm", mixed_norm(ff, cyl, *q_r), {}, cyl,
                                {"q": forcing.q, "r": forcing.r}))
    rep.norms.append(NormReport("v2s", v2s_norm(fld, cyl), {}, cyl, {"s": params.s}))
    rep.norms.append(tail(fld, z0, rho, tau))
    rep.norms.append(NormReport("campanato_excess", campanato_excess(fld, cyl), {}, cyl, {"p": 2}))
    k = sc.number("experiment", "k", "0.0")
    ledger = level_set_ledger(fld, z0.x, rho, k)
    rep.tables["level_sets"] = ledger.to_csv()
    for nr in rep.norms:
        rep.fitted[nr.name] = nr.value
    return rep


def run_ladder(sc, fld=None):
    params = sc.params()
    fld = fld or solve_scenario(sc)
    forcing = sc.forcing()
    z0 = SpaceTimePoint(_center(sc), _t0(sc, fld))
    rho0 = sc.number("experiment", "rho0", "1.0")
    h_max = int(sc.number("experiment", "h_max", "8"))
    ut, ft = normalize_to_unit_cylinder(fld, z0, rho0, forcing)
    N = sc.get("experiment", "N")
    rep = ExperimentReport("ladder", sc.hash, sc.seed)
    if N is None:
        N, lad = smallest_collapsing_N(ut, ft, params, h_max)
        if lad is None:
            raise ConfigurationError("no collapsing level found on the search grid")
    else:
        lad = ladder_from_field(ut, ft, _float(N), h_max, params)
    rep.fitted.update({"N": lad.N, "floor": lad.floor, "c_y": lad.c_y, "c_z": lad.c_z, "base": lad.base,
                       "decreasing": lad.decreasing()})
    rep.tables["ladder"] = lad.to_csv()
    rep.checks.append(Check.ge("chebyshev_bound_holds", float(lad.chebyshev_ok), 1.0))
    return rep


TLI_GRID = {"M": (1.5, 2.0, 4.0, 10.0), "b": (1.5, 2.0, 4.0, 16.0), "kappa": (0.25, 1.0, 2.0),
            "delta": (0.25, 1.0, 2.0)}


def tli_starts(p):
    thr = p.threshold
    e = 1.0 / (1 + p.kappa)
    return [(thr, 0.0), (0.0, thr ** e), (thr / 2, (thr / 2) ** e)]


def tli_sweep(steps=50, tol=1e-6, factor=4.0):
    """Convergence at the threshold on the parameter grid, and corners diverging at ``factor`` times it."""
    worst = 0.0
    converged = True
    divergent = []
    for M, b, k, d in itertools.product(*TLI_GRID.values()):
        p = TLIParams(M, b, k, d)
        for y0, z0 in tli_starts(p):
            tr = tli_iterate(p, y0, z0, steps, tol)
            converged &= tr.verdict == "converged"
            if tr.verdict != "diverged":
                worst = max(worst, tr.Y[-1], tr.Z[-1])
        big = factor * p.threshold
        t1 = tli_iterate(p, big, 0.0, steps, tol)
        t2 = tli_iterate(p, 0.0, big ** (1 / (1 + k)), steps, tol)
        if "diverged" in (t1.verdict, t2.verdict):
            divergent.append((M, b, k, d))
    return converged, worst, divergent


def _corner_key(c):
    return "/".join(f"{v:g}" for v in c)


def run_tli(sc=None, baseline_path=None):
    converged, worst, divergent = tli_sweep()
    rep = ExperimentReport("tli", sc.hash if sc else "-", sc.seed if sc else 0)
    rep.fitted["worst_final_value"] = worst
    rep.fitted["divergent_corners_at_4x"] = len(divergent)
    rep.fitted["divergent_corners"] = " ".join(_corner_key(c) for c in divergent)
    rep.checks.append(Check.ge("all_converged_at_threshold", float(converged), 1.0))
    frozen = baseline("tli", "divergent_corners", baseline_path)
    if frozen is not None:
        now = {_corner_key(c) for c in divergent}
        want = frozen.split()
        kept = sum(c in now for c in want) / len(want) if want else 1.0
        rep.checks.append(Check.ge("frozen_corners_still_diverge", kept, 1.0))
    rep.tables["tli_divergent"] = _csv(("M", "b", "kappa", "delta"), divergent)
    return rep


def run_exponent_ladder(s, count=50, mode="case1", alpha=None, n=1, gamma=None):
    lad = exponent_ladder(s, count, mode, alpha, n, gamma)
    rep = ExperimentReport("exponent_ladder", "-", 0)
    rep.fitted.update({"s": str(lad.s), "identity_exact": lad.identity_ok, "i_alpha": lad.i_alpha,
                       "j_alpha": lad.j_alpha, "h0": str(lad.h0)})
    rep.checks.append(Check.ge("identity_exact", float(lad.identity_ok), 1.0))
    rep.tables["exponent_ladder"] = _csv(("i", "q", "theta", "ratio"),
                                         [(i, lad.q[i], str(lad.theta[i]), str(lad.ratio(i)))
                                          for i in range(len(lad.q))])
    return rep


def run_validate_model(sc):
    params = sc.params()
    g = sc.grid()
    A = sc.kernel()
    phi = sc.nonlinearity()
    budget = int(sc.number("experiment", "budget", "512"))
    kr = validate_kernel(A, params, budget, domain=list(zip(g.lower, g.upper)), times=(g.t_start, g.t_end),
                         seed=sc.seed)
    nr = validate_nonlinearity(phi, params.lam, budget, seed=sc.seed)
    forcing = sc.forcing()
    rep = ExperimentReport("validate_model", sc.hash, sc.seed)
    rep.checks.append(Check.ge("kernel_class", float(kr.passed), 1.0))
    rep.checks.append(Check.ge("nonlinearity_structure", float(nr.passed), 1.0))
    rep.checks.append(Check.ge("existence_admissible", float(forcing.existence_admissible(params)), 1.0))
    rep.fitted.update({"kernel_min": kr.a_min, "kernel_max": kr.a_max, "symmetry_defect": kr.symmetry_defect,
                       "phi_monotone_min": nr.min_monotone_quotient, "phi_lipschitz_max": nr.max_lipschitz_quotient,
                       "boundedness_admissible": forcing.boundedness_admissible(params)})
    if forcing.existence_admissible(params):
        der = derive_exponents(forcing.q, forcing.r, params)
        rep.fitted.update({"kappa": der.kappa, "gamma": der.gamma, "q_hat": der.q_hat, "r_hat": der.r_hat,
                           "holder_cap": der.holder_cap})
    return rep


def run_solve(sc, out=None):
    fld = solve_scenario(sc)
    rep = ExperimentReport("solve", sc.hash, sc.seed)
    rep.fitted["final_time"] = float(fld.times[-1])
    rep.fitted["max_abs"] = float(np.max(np.abs(fld.values)))
    for line in fld.report.to_text().splitlines():
        key, val = line.split(" = ")
        rep.fitted[f"run_{key}"] = val
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        fld.save(Path(out) / "solution.csv")
    return rep


# command line ---------------------------------------------------------------------------

COMMANDS = ("validate-model", "solve", "norms", "caccioppoli", "compare", "decay", "tli", "ladder", "perturb",
            "spectral")


def build_parser():
    ap = argparse.ArgumentParser(prog="nonlocal-lab", description="Nonlocal parabolic equation laboratory.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name not in ("tli", "ladder"))
        p.add_argument("--out", type=Path, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--baseline", type=Path, default=None)
        p.add_argument("--update-baselines", action="store_true")
    lad = sub.choices["ladder"]
    lad.add_argument("--exponents", action="store_true", help="print the exponent ladder instead")
    lad.add_argument("--s", default="1/2")
    lad.add_argument("--count", type=int, default=50)
    return ap


def _baseline_updates(name, rep):
    if name == "caccioppoli":
        return {"caccioppoli": {"ratio_max": rep.fitted["ratio"]}}
    if name == "tli":
        return {"tli": {"divergent_corners": rep.fitted["divergent_corners"]}}
    if name == "solve" and "implied_constant_max" in rep.fitted:
        return {"boundedness": {"constant_max": rep.fitted["implied_constant_max"]}}
    return {}


def dispatch(args):
    name = args.command
    if name == "ladder" and args.exponents:
        return run_exponent_ladder(args.s, args.count)
    sc = Scenario.load(args.config, args.seed) if args.config is not None else None
    if sc is None and name != "tli":
        raise ConfigurationError(f"{name} needs --config")
    if name == "tli":
        return run_tli(sc, args.baseline)
    if name == "validate-model":
        return run_validate_model(sc)
    if name == "solve":
        kind = sc.get("experiment", "kind")
        if kind == "boundedness":
            return run_boundedness(sc, args.baseline)
        return run_solve(sc, args.out)
    if name == "norms":
        return run_norms(sc)
    if name == "caccioppoli":
        return run_caccioppoli(sc, baseline_path=args.baseline)
    if name == "compare":
        return run_comparison_scaling(sc)
    if name == "decay":
        return run_decay_regression(sc)
    if name == "ladder":
        return run_ladder(sc)
    if name == "perturb":
        return run_perturbation_study(sc)
    if name == "spectral":
        return run_spectral_validation(sc)
    raise ConfigurationError(f"unknown command {name!r}")


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        rep = dispatch(args)
    except (ConfigurationError, InadmissibleExponents, KernelClassViolation) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonlocalLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    sys.stdout.write(rep.to_text())
    if args.out is not None:
        rep.write(args.out)
    if args.update_baselines:
        updates = _baseline_updates(args.command, rep)
        if updates:
            path = update_baselines(updates, args.baseline)
            print(f"baselines updated: {path}", file=sys.stderr)
        return EXIT_OK
    return EXIT_OK if rep.passed else EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
